"""LTI plant, estimation error and the AoI cost function.

The plant is ``X[n] = A X[n-1] + B U[n-1] + W[n-1]`` with ``W ~ N(0, s2 I)``.
When the controller's freshest sample is ``age`` slots old, the estimation
error is the noise accumulated since that sample was taken, and its mean
squared norm is

    f(age) = sum_{i=0}^{age-1} Tr((A^i)' A^i) * s2

which is what :class:`AoiCostFunction` tabulates.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng

DEFAULT_LINEAR_TOL = 1e-10


class CostOverflowError(ArithmeticError):
    """Raised when a cost coefficient leaves the floating-point range."""

    def __init__(self, index: int):
        super().__init__(f"cost overflow at index {index}")
        self.index = index


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemModel:
    a_matrix: np.ndarray
    noise_variance: float = 1.0
    b_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("A has non-finite entries")
        if not (self.noise_variance > 0 and math.isfinite(self.noise_variance)):
            raise ValueError(f"noise variance must be positive, got {self.noise_variance}")
        object.__setattr__(self, "a_matrix", _frozen(a))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if self.b_matrix is not None:
            b = np.asarray(self.b_matrix, dtype=float)
            if b.ndim < 2:
                b = b.reshape(a.shape[0], -1)
            if b.shape[0] != a.shape[0]:
                raise ValueError(f"B must have {a.shape[0]} rows, got shape {b.shape}")
            object.__setattr__(self, "b_matrix", _frozen(b))

    @property
    def dim(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def noise_trace(self) -> float:
        """Tr(Sigma) = d * s2."""
        return self.dim * self.noise_variance

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.a_matrix))))


def scalar_model(a: float, noise_variance: float = 1.0, b: Optional[float] = None) -> SystemModel:
    return SystemModel(np.array([[a]]), noise_variance, None if b is None else np.array([[b]]))


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class AoiCostFunction:
    """Tabulated f with single and double prefix sums.

    ``prefix[m] = f(m)`` and ``double_prefix[m] = f(0) + ... + f(m-1)``, so
    the summed cost of the ages ``lo, lo+1, ..., hi-1`` is
    ``double_prefix[hi] - double_prefix[lo]``.
    """

    coeffs: np.ndarray
    prefix: np.ndarray
    double_prefix: np.ndarray
    gamma: Optional[float] = field(default=None)

    @property
    def max_delta(self) -> int:
        return len(self.coeffs)

    def f(self, age):
        return self.prefix[age]

    def window_sum(self, lo, hi):
        """Sum of f(j) for lo <= j < hi (vectorised over arrays)."""
        return self.double_prefix[hi] - self.double_prefix[lo]


def build_cost_function(model: SystemModel, max_delta: int,
                        rel_tol: float = DEFAULT_LINEAR_TOL) -> AoiCostFunction:
    if max_delta < 1:
        raise ValueError(f"max_delta must be >= 1, got {max_delta}")
    a = model.a_matrix
    coeffs = np.empty(max_delta)
    power = np.eye(model.dim)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(max_delta):
            # Tr((A^i)' A^i s2 I) = s2 * ||A^i||_F^2
            c = model.noise_variance * float(np.sum(power * power))
            if not math.isfinite(c):
                raise CostOverflowError(i)
            coeffs[i] = c
            power = a @ power
        prefix = np.concatenate(([0.0], np.cumsum(coeffs)))
        double_prefix = np.concatenate(([0.0], np.cumsum(prefix[:-1])))
    bad = np.flatnonzero(~np.isfinite(double_prefix))
    if bad.size:
        raise CostOverflowError(int(bad[0]))
    cost = AoiCostFunction(_frozen(coeffs), _frozen(prefix), _frozen(double_prefix))
    gamma = check_linear_cost(cost, rel_tol)
    if gamma is not None:
        cost = AoiCostFunction(cost.coeffs, cost.prefix, cost.double_prefix, gamma)
    return cost


def check_linear_cost(cost: AoiCostFunction, rel_tol: float = DEFAULT_LINEAR_TOL) -> Optional[float]:
    """Return gamma if f(j) = gamma * j over the whole table, else None.

    A table with a single entry cannot distinguish linear from non-linear
    growth, so it never qualifies.
    """
    if cost.max_delta < 2:
        return None
    gamma = float(cost.prefix[1])
    j = np.arange(1, cost.max_delta + 1)
    dev = np.abs(cost.prefix[1:] - gamma * j)
    if np.all(dev <= rel_tol * gamma * j):
        return gamma
    return None


def per_slot_error_variance(model: SystemModel, age: int) -> float:
    """E||e||^2 at a given age, summed element by element.

    Each error component r is Gaussian with variance
    s2 * sum_{i=1..age} sum_l [A^(i-1)]_{rl}^2; the powers are formed
    independently of :func:`build_cost_function` so the two can be checked
    against each other.
    """
    if age < 1:
        raise ValueError(f"age must be >= 1, got {age}")
    d = model.dim
    row_var = np.zeros(d)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, age + 1):
            p = np.linalg.matrix_power(model.a_matrix, i - 1)
            for r in range(d):
                row_var[r] += model.noise_variance * sum(p[r, l] ** 2 for l in range(d))
            if not np.all(np.isfinite(row_var)):
                raise CostOverflowError(i - 1)
    return float(row_var.sum())


@dataclass(frozen=True)
class NoiseTrace:
    samples: np.ndarray
    seed: int

    def __len__(self):
        return self.samples.shape[0]


def generate_noise(model: SystemModel, horizon: int, seed: int, replication: int = 0) -> NoiseTrace:
    """Draw W[0..horizon-1] i.i.d. N(0, s2 I) from the seed's noise stream."""
    if horizon < 0:
        raise ValueError(f"horizon must be non-negative, got {horizon}")
    gen = rng.stream(seed, rng.NOISE, replication)
    w = math.sqrt(model.noise_variance) * gen.standard_normal((horizon, model.dim))
    return NoiseTrace(_frozen(w), seed)


def error_from_noise(model: SystemModel, noise: NoiseTrace, age: int, n: int) -> np.ndarray:
    """e[n] = sum_{i=1..age} A^(i-1) W[n-i], evaluated by Horner's scheme."""
    if age < 0:
        raise ValueError(f"age must be non-negative, got {age}")
    if n - age < 0:
        raise IndexError(f"noise index underflow: n - age = {n - age}")
    if n > len(noise):
        raise IndexError(f"slot {n} needs W[{n - 1}] but the trace has {len(noise)} samples")
    e = np.zeros(model.dim)
    for m in range(n - age, n):
        e = model.a_matrix @ e + noise.samples[m]
    return e


_SPLIT = re.compile(r"[,\s]+")


def parse_matrix(text: str) -> np.ndarray:
    """Parse whitespace- or comma-separated rows, one row per line.

    Blank lines and ``#`` comments are ignored.
    """
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        rows.append([float(tok) for tok in _SPLIT.split(line) if tok])
    if not rows:
        raise ValueError("matrix file is empty")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("matrix rows have unequal lengths")
    return np.array(rows)


def load_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())
