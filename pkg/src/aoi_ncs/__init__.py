"""Estimation error vs. Age of Information in a single-loop networked control system."""

from .analytic import RenewalEvaluation, expected_aoi, expected_f_delta, zero_wait_geometric_aoi
from .channel import TransmissionDistribution, deterministic, empirical, geometric
from .lti_core import (AoiCostFunction, CostOverflowError, NoiseTrace, SystemModel,
                       build_cost_function, check_linear_cost, error_from_noise,
                       per_slot_error_variance)
from .policy import MeasSolution, WaitingPolicy, make_policy, parse_policy, solve_meas
from .sim import RunMetrics, SimConfig, run_closed_loop_demo, run_full, run_renewal_fast

__version__ = "0.1.0"
