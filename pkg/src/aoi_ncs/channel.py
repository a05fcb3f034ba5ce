"""Discrete i.i.d. transmission-time laws.

Geometric laws live on {1, 2, ...}; the table used for analytic sums is cut
where the remaining tail mass drops below ``mass_floor``, while sampling and
the reported moments always refer to the untruncated law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

DEFAULT_MASS_FLOOR = 1e-15


@dataclass(frozen=True)
class TransmissionDistribution:
    kind: str
    support: np.ndarray
    pmf: np.ndarray
    mean: float
    second_moment: float
    truncation_mass: float = 0.0
    param: float = float("nan")

    @property
    def y_max(self) -> int:
        return int(self.support[-1])

    @property
    def label(self) -> str:
        if self.kind == "geometric":
            return f"geometric({self.param!r})"
        if self.kind == "deterministic":
            return f"deterministic({int(self.param)})"
        return f"empirical({len(self.support)} points)"


def _ro(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def geometric(p: float, mass_floor: float = DEFAULT_MASS_FLOOR) -> TransmissionDistribution:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"geometric success probability must be in (0, 1], got {p}")
    if not 0.0 < mass_floor < 1.0:
        raise ValueError(f"mass_floor must be in (0, 1), got {mass_floor}")
    if p == 1.0:
        y_max = 1
    else:
        # smallest y_max with (1-p)^y_max <= mass_floor
        y_max = max(1, math.ceil(math.log(mass_floor) / math.log1p(-p)))
        while (1.0 - p) ** y_max > mass_floor:
            y_max += 1
    y = np.arange(1, y_max + 1)
    pmf = p * (1.0 - p) ** (y - 1)
    tail = 0.0 if p == 1.0 else (1.0 - p) ** y_max
    return TransmissionDistribution(
        kind="geometric",
        support=_ro(y, np.int64),
        pmf=_ro(pmf, float),
        mean=1.0 / p,
        second_moment=(2.0 - p) / (p * p),
        truncation_mass=tail,
        param=float(p),
    )


def deterministic(c: int) -> TransmissionDistribution:
    if int(c) != c or c < 0:
        raise ValueError(f"deterministic transmission time must be a non-negative integer, got {c}")
    c = int(c)
    return TransmissionDistribution("deterministic", _ro([c], np.int64), _ro([1.0], float),
                                    float(c), float(c * c), 0.0, float(c))


def empirical(values, probabilities, tol: float = 1e-9) -> TransmissionDistribution:
    """Table-defined law; probabilities within ``tol`` of summing to 1 are renormalised."""
    y = np.asarray(values)
    prob = np.asarray(probabilities, dtype=float)
    if y.shape != prob.shape or y.ndim != 1 or y.size == 0:
        raise ValueError("values and probabilities must be equal-length non-empty sequences")
    if np.any(y != np.round(y)) or np.any(y < 0):
        raise ValueError("transmission times must be non-negative integers")
    if np.any(prob < 0) or not np.all(np.isfinite(prob)):
        raise ValueError("probabilities must be finite and non-negative")
    total = prob.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    y = y.astype(np.int64)
    if len(np.unique(y)) != len(y):
        raise ValueError("duplicate transmission times in pmf table")
    order = np.argsort(y)
    y, prob = y[order], prob[order] / total
    keep = prob > 0
    y, prob = y[keep], prob[keep]
    mean = float(np.dot(prob, y))
    second = float(np.dot(prob, y.astype(float) ** 2))
    return TransmissionDistribution("empirical", _ro(y, np.int64), _ro(prob, float), mean, second, 0.0)


def load_pmf(path) -> TransmissionDistribution:
    """Read lines of ``y probability``; ``#`` starts a comment."""
    values, probs = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'y probability', got {line!r}")
        y = float(parts[0])
        if y != int(y):
            raise ValueError(f"{path}:{lineno}: transmission time {parts[0]} is not an integer")
        values.append(int(y))
        probs.append(float(parts[1]))
    return empirical(values, probs)


def sample(dist: TransmissionDistribution, gen: np.random.Generator, size=None):
    """Draw transmission times from the untruncated law.

    Geometric draws use inversion, ``1 + floor(log U / log(1-p))`` with U in
    (0, 1], so values beyond the analytic table can occur (with probability
    about ``truncation_mass`` per draw).
    """
    n = 1 if size is None else size
    if dist.kind == "deterministic":
        out = np.full(n, dist.support[0], dtype=np.int64)
    elif dist.kind == "geometric":
        p = dist.param
        if p == 1.0:
            out = np.ones(n, dtype=np.int64)
        else:
            u = 1.0 - gen.random(n)
            out = 1 + np.floor(np.log(u) / math.log1p(-p)).astype(np.int64)
    else:
        cdf = np.cumsum(dist.pmf)
        idx = np.searchsorted(cdf, gen.random(n) * cdf[-1], side="right")
        out = dist.support[np.minimum(idx, len(cdf) - 1)]
    return int(out[0]) if size is None else out


def expect_over_y(dist: TransmissionDistribution, h: Callable) -> float:
    """Sum of pmf(y) * h(y) over the truncated support.

    ``h`` is called once on the integer support array. When |h| <= H the
    neglected tail contributes at most ``H * dist.truncation_mass``.
    """
    values = np.asarray(h(dist.support), dtype=float)
    if values.shape != dist.support.shape:
        values = np.broadcast_to(values, dist.support.shape)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        y = int(dist.support[bad[0]])
        raise ValueError(f"h({y}) is not finite")
    return float(np.dot(dist.pmf, values))
