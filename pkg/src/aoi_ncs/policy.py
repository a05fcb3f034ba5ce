"""Stationary waiting policies: zero-wait, constant wait and MEAS.

A policy maps the previous packet's transmission time y to an integer
waiting time G(y) in {0, ..., M}. MEAS uses the threshold rule
``G(y) = floor(max(beta - y, 0))`` where beta is found by bisection on the
continuous relaxation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import TransmissionDistribution

log = logging.getLogger(__name__)

DEFAULT_MAX_WAIT = 100
DEFAULT_EPSILON = 1e-9

ZERO_WAIT = "zero_wait"
CONSTANT = "constant"
THRESHOLD = "threshold"


class BracketError(ValueError):
    pass


@dataclass(frozen=True)
class MeasSolution:
    beta: float
    iterations: int
    residual: float
    epsilon: float
    upper_start: float
    brackets: tuple = ()

    def continuous_wait(self, y):
        return np.maximum(self.beta - np.asarray(y, dtype=float), 0.0)


def meas_objective(dist: TransmissionDistribution, beta: float) -> float:
    """E[(Y + g(Y))^2] - 2 beta E[Y + g(Y)] with g(y) = max(beta - y, 0).

    Strictly decreasing in beta (its derivative is -2 E[max(Y, beta)]), and
    zero exactly at the MEAS threshold.
    """
    y = dist.support.astype(float)
    x = np.maximum(y, beta)
    return float(np.dot(dist.pmf, x * x) - 2.0 * beta * np.dot(dist.pmf, x))


def solve_meas(dist: TransmissionDistribution, max_wait: int = DEFAULT_MAX_WAIT,
               epsilon: float = DEFAULT_EPSILON, upper: Optional[float] = None) -> MeasSolution:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if max_wait < 0:
        raise ValueError(f"max_wait must be >= 0, got {max_wait}")
    if dist.mean <= 0:
        raise ValueError("MEAS needs a positive mean transmission time")
    if upper is None:
        upper = dist.second_moment / dist.mean + 2.0 * (dist.y_max + max_wait)
    lo, hi = 0.0, float(upper)
    if meas_objective(dist, hi) > 0:
        raise BracketError(f"upper bound too small: objective still positive at u={hi!r}")
    brackets = []
    iterations = 0
    while hi - lo > epsilon:
        beta = 0.5 * (lo + hi)
        if meas_objective(dist, beta) > 0:
            lo = beta
        else:
            hi = beta
        iterations += 1
        brackets.append((lo, hi))
    beta = 0.5 * (lo + hi)
    return MeasSolution(beta, iterations, meas_objective(dist, beta), epsilon, float(upper), tuple(brackets))


@dataclass(frozen=True)
class WaitingPolicy:
    kind: str
    max_wait: int
    support: np.ndarray
    wait_table: np.ndarray
    param: float = 0.0
    solution: Optional[MeasSolution] = None

    def waits(self, y):
        """G(y) for arbitrary (possibly off-table) transmission times."""
        y = np.asarray(y)
        if self.kind == ZERO_WAIT:
            return np.zeros(y.shape, dtype=np.int64)
        if self.kind == CONSTANT:
            return np.full(y.shape, int(self.param), dtype=np.int64)
        g = np.floor(np.maximum(self.param - y, 0.0))
        return np.clip(g, 0, self.max_wait).astype(np.int64)

    def wait(self, y: int) -> int:
        return int(self.waits(np.array([y]))[0])

    @property
    def label(self) -> str:
        if self.kind == ZERO_WAIT:
            return "zero-wait"
        if self.kind == CONSTANT:
            return f"const:{int(self.param)}"
        return "meas" if self.solution is not None else f"threshold:{self.param!r}"


def make_policy(kind: str, dist: TransmissionDistribution, max_wait: int = DEFAULT_MAX_WAIT, *,
                wait: Optional[int] = None, beta: Optional[float] = None,
                solution: Optional[MeasSolution] = None) -> WaitingPolicy:
    if max_wait < 0:
        raise ValueError(f"max_wait must be >= 0, got {max_wait}")
    if kind == ZERO_WAIT:
        param = 0.0
    elif kind == CONSTANT:
        if wait is None or int(wait) != wait or not 0 <= wait <= max_wait:
            raise ValueError(f"constant wait must be an integer in [0, {max_wait}], got {wait}")
        param = float(wait)
    elif kind == THRESHOLD:
        if solution is not None:
            beta = solution.beta
        if beta is None or not beta >= 0 or not math.isfinite(beta):
            raise ValueError(f"threshold policy needs a non-negative beta, got {beta}")
        param = float(beta)
    else:
        raise ValueError(f"unknown policy kind {kind!r}")
    proto = WaitingPolicy(kind, int(max_wait), dist.support, np.zeros(0, dtype=np.int64), param, solution)
    table = proto.waits(dist.support)
    table.setflags(write=False)
    return WaitingPolicy(kind, int(max_wait), dist.support, table, param, solution)


def parse_policy(spec: str, dist: TransmissionDistribution, max_wait: int = DEFAULT_MAX_WAIT,
                 epsilon: float = DEFAULT_EPSILON) -> WaitingPolicy:
    """Build a policy from ``zero-wait``, ``const:<g>`` or ``meas``."""
    spec = spec.strip().lower()
    if spec in ("zero-wait", "zero_wait", "zw"):
        return make_policy(ZERO_WAIT, dist, max_wait)
    if spec.startswith("const:"):
        try:
            g = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad constant-wait spec {spec!r}") from None
        return make_policy(CONSTANT, dist, max_wait, wait=g)
    if spec == "meas":
        sol = solve_meas(dist, max_wait, epsilon)
        log.info("MEAS on %s: beta=%r residual=%.3e iterations=%d",
                 dist.label, sol.beta, sol.residual, sol.iterations)
        return make_policy(THRESHOLD, dist, max_wait, solution=sol)
    raise ValueError(f"unknown policy {spec!r}; expected zero-wait, const:<g> or meas")
