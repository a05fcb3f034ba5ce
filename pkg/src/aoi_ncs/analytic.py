"""Renewal-ratio evaluators for E[f(AoI)] and E[AoI].

A renewal cycle runs from the departure of packet k-1 to the departure of
packet k. With previous transmission time y', wait G(y') and current
transmission time y, the ages seen during the cycle are
y', y'+1, ..., y'+G(y')+y-1, and the cycle lasts G(y')+y slots. Both
evaluators take the ratio of expected cycle reward to expected cycle length
with y' and y independent draws from the channel law.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import TransmissionDistribution
from .lti_core import AoiCostFunction, SystemModel, build_cost_function
from .policy import WaitingPolicy

_ROW_CHUNK = 512


class TableTooSmallError(ValueError):
    def __init__(self, have: int, required: int):
        super().__init__(f"cost table covers ages < {have + 1}; need max_delta >= {required}")
        self.required = required


@dataclass(frozen=True)
class RenewalEvaluation:
    value: float
    numerator: float
    denominator: float
    truncation_error_bound: float


def _waits(dist: TransmissionDistribution, policy) -> np.ndarray:
    if isinstance(policy, WaitingPolicy):
        if policy.support is not dist.support and not np.array_equal(policy.support, dist.support):
            return policy.waits(dist.support)
        return policy.wait_table
    g = np.asarray(policy, dtype=float)
    if g.shape != dist.support.shape:
        raise ValueError("wait array must align with the channel support")
    if np.any(g < 0):
        raise ValueError("waits must be non-negative")
    return g


def required_max_delta(dist: TransmissionDistribution, policy: WaitingPolicy) -> int:
    """Largest index into the double-prefix table a cycle can touch."""
    g = _waits(dist, policy)
    return int(np.max(dist.support + g)) + dist.y_max


def cost_for(model: SystemModel, dist: TransmissionDistribution, policy: WaitingPolicy) -> AoiCostFunction:
    return build_cost_function(model, max(2, required_max_delta(dist, policy)))


def _cycle_sums(dist, start, pair_reward):
    """sum_{y'} pmf(y') sum_y pmf(y) pair_reward(rows, y) in row chunks."""
    y = dist.support
    pmf = dist.pmf
    total = 0.0
    for lo in range(0, len(y), _ROW_CHUNK):
        rows = slice(lo, lo + _ROW_CHUNK)
        block = pair_reward(y[rows, None], start[rows, None], y[None, :])
        total += float(pmf[rows] @ (block @ pmf))
    return total


def _denominator(dist, g):
    mass = float(dist.pmf.sum())
    return mass * float(np.dot(dist.pmf, g)) + mass * float(np.dot(dist.pmf, dist.support))


def expected_f_delta(cost: AoiCostFunction, dist: TransmissionDistribution,
                     policy: WaitingPolicy) -> RenewalEvaluation:
    """E[f(AoI)] as expected cycle cost over expected cycle length.

    The cycle cost for (y', y) is double_prefix[y'+G+y] - double_prefix[y'],
    so the numerator is an O(|support|^2) sum with constant work per term.
    """
    g = _waits(dist, policy)
    if g.dtype.kind == "f" and np.any(g != np.floor(g)):
        raise ValueError("expected_f_delta needs integer waits")
    g = g.astype(np.int64)
    need = int(np.max(dist.support + g)) + dist.y_max
    if cost.max_delta < need:
        raise TableTooSmallError(cost.max_delta, need)
    table = cost.double_prefix
    start = dist.support + g

    def reward(yp, s, y):
        return table[s + y] - table[yp]

    num = _cycle_sums(dist, start, reward)
    den = _denominator(dist, g)
    bound = 2.0 * dist.truncation_mass * float(table[need]) / den
    return RenewalEvaluation(num / den, num, den, bound)


def expected_aoi(dist: TransmissionDistribution, policy) -> RenewalEvaluation:
    """E[AoI] by the same renewal ratio with f(j) = j.

    ``policy`` may also be a real-valued array of waits aligned with the
    support, which evaluates the continuous relaxation.
    """
    g = _waits(dist, policy)
    start = dist.support + g

    def reward(yp, s, y):
        # sum_{j=a}^{b} j = (b(b+1) - a(a-1)) / 2 with a = y', b = s + y - 1
        b = s + y - 1.0
        return 0.5 * (b * (b + 1.0) - yp * (yp - 1.0))

    num = _cycle_sums(dist, start.astype(float), reward)
    den = _denominator(dist, g)
    top = float(np.max(start)) + dist.y_max
    bound = dist.truncation_mass * top * top / den
    return RenewalEvaluation(num / den, num, den, bound)


def zero_wait_geometric_aoi(p: float) -> float:
    """E[AoI] for zero-wait over a geometric(p) channel on {1, 2, ...}.

    E[Y^2]/(2E[Y]) + E[Y] - 1/2 = (4 - p)/(2p) - 1/2; the 1/2 is the
    discrete-time offset.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    return (4.0 - p) / (2.0 * p) - 0.5
