"""Monte Carlo simulation of the sampling / transmission / estimation loop.

Time is slotted. A virtual departure happens at slot 0 with a transmission
time Y_0 drawn from the channel, so the AoI at slot 0 is Y_0. After each
departure of packet k-1 the sampler idles G_k = G(Y_{k-1}) slots, takes a
sample and transmits it for Y_k slots. Ages inside the cycle therefore run
Y_{k-1}, ..., Y_{k-1} + G_k + Y_k - 1.

Two modes:

* ``full_trajectory`` draws plant noise and tracks the estimation error slot
  by slot (numba kernel).
* ``renewal_fast`` only draws transmission times and replaces each cycle's
  squared error by its conditional mean from the cost table.

Channel draws and plant noise come from separate streams, so two policies run
under the same seed see the same transmission times.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from numba import njit

from . import rng
from .channel import TransmissionDistribution, sample
from .lti_core import SystemModel, build_cost_function, generate_noise
from .policy import WaitingPolicy

FULL = "full_trajectory"
FAST = "renewal_fast"

DEFAULT_WARMUP = 1000
DEFAULT_BATCHES = 100
DIVERGENCE_THRESHOLD = 1e6
_CHUNK_SLOTS = 1 << 20

CYCLE_LOG_HEADER = ("k", "y_prev", "wait", "y_cur", "zeta", "cycle_len")


@dataclass(frozen=True)
class SimConfig:
    model: SystemModel
    dist: TransmissionDistribution
    policy: WaitingPolicy
    cycles: int
    seed: int = 0
    warmup_cycles: int = DEFAULT_WARMUP
    mode: str = FAST
    replication: int = 0
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")
        if self.warmup_cycles < 0:
            raise ValueError(f"warmup_cycles must be >= 0, got {self.warmup_cycles}")
        if self.mode not in (FULL, FAST):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class CycleRecord:
    y_prev: int
    wait: int
    y_cur: int
    cycle_error_sum: float

    @property
    def cycle_length(self) -> int:
        return self.wait + self.y_cur


@dataclass(frozen=True)
class RunMetrics:
    time_avg_sq_error: float
    empirical_mean_aoi: float
    total_slots: int
    total_cycles: int
    stderr_sq_error: float
    stderr_mean_aoi: float
    seed: int
    diverged: bool = False
    diverged_at_slot: Optional[int] = None


@dataclass
class SimOutput:
    metrics: RunMetrics
    y_prev: np.ndarray
    waits: np.ndarray
    y_cur: np.ndarray
    zeta: np.ndarray
    warmup_cycles: int
    trajectory: Optional[dict] = field(default=None, repr=False)

    def cycle_records(self, include_warmup: bool = False) -> Iterator[CycleRecord]:
        start = 0 if include_warmup else self.warmup_cycles
        for k in range(start, len(self.zeta)):
            yield CycleRecord(int(self.y_prev[k]), int(self.waits[k]), int(self.y_cur[k]), float(self.zeta[k]))

    def write_cycle_log(self, path, include_warmup: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CYCLE_LOG_HEADER)
            start = 0 if include_warmup else self.warmup_cycles
            for k, rec in enumerate(self.cycle_records(include_warmup), start + 1):
                w.writerow((k, rec.y_prev, rec.wait, rec.y_cur, repr(rec.cycle_error_sum), rec.cycle_length))


def batch_means_ratio(num: np.ndarray, den: np.ndarray, batches: int = DEFAULT_BATCHES) -> float:
    """Standard error of sum(num)/sum(den) from contiguous batches.

    Uses the ratio-estimator form sum_b (N_b - R D_b)^2 / (B (B-1) mean(D_b)^2),
    which tolerates unequal batch sizes.
    """
    n = len(num)
    b = min(batches, n)
    if b < 2:
        return float("nan")
    edges = np.linspace(0, n, b + 1).astype(np.int64)
    nb = np.add.reduceat(num, edges[:-1])
    db = np.add.reduceat(den.astype(float), edges[:-1])
    ratio = nb.sum() / db.sum()
    var = np.sum((nb - ratio * db) ** 2) / (b * (b - 1) * db.mean() ** 2)
    return float(math.sqrt(var))


def _schedule(config: SimConfig):
    gen = rng.stream(config.seed, rng.CHANNEL, config.replication)
    n_cycles = config.warmup_cycles + config.cycles
    ys = sample(config.dist, gen, n_cycles + 1)
    return ys[:-1], config.policy.waits(ys[:-1]), ys[1:]


def _age_sums(y_prev, waits, y_cur):
    length = (waits + y_cur).astype(float)
    return length * y_prev + 0.5 * length * (length - 1.0)


def _metrics(config, y_prev, waits, y_cur, zeta, diverged_at=None, running_avg=None) -> RunMetrics:
    w = config.warmup_cycles
    sl = slice(w, len(zeta))
    length = (waits[sl] + y_cur[sl]).astype(np.int64)
    total_slots = int(length.sum())
    ages = _age_sums(y_prev[sl], waits[sl], y_cur[sl])
    if diverged_at is not None:
        avg = running_avg
    elif total_slots == 0:
        raise ValueError("no slots were counted after warmup")
    else:
        avg = float(zeta[sl].sum() / total_slots)
    mean_aoi = float(ages.sum() / total_slots) if total_slots else float("nan")
    return RunMetrics(
        time_avg_sq_error=avg,
        empirical_mean_aoi=mean_aoi,
        total_slots=total_slots,
        total_cycles=len(zeta) - w if len(zeta) > w else 0,
        stderr_sq_error=batch_means_ratio(zeta[sl], length) if total_slots else float("nan"),
        stderr_mean_aoi=batch_means_ratio(ages, length) if total_slots else float("nan"),
        seed=config.seed,
        diverged=diverged_at is not None,
        diverged_at_slot=diverged_at,
    )


@njit(cache=True)
def _full_kernel(a, e, noise, waits, y_cur, slot0, err_sum, threshold, zeta, sq_out, record):
    """Advance the error recursion over a block of cycles.

    ``e`` is the current estimation error (modified in place). ``f`` holds the
    error the in-flight sample will carry on delivery; it restarts from zero
    when the sample is taken. Returns (cycles done, slots done, next slot,
    running error sum, divergence slot or -1).
    """
    d = a.shape[0]
    f = np.zeros(d)
    tmp = np.empty(d)
    pos = 0
    n = slot0
    for k in range(waits.shape[0]):
        g = waits[k]
        z = 0.0
        for i in range(d):
            f[i] = 0.0
        for t in range(g + y_cur[k]):
            s = 0.0
            for i in range(d):
                s += e[i] * e[i]
            z += s
            err_sum += s
            if record:
                sq_out[pos] = s
            for i in range(d):
                acc = noise[pos, i]
                for j in range(d):
                    acc += a[i, j] * e[j]
                tmp[i] = acc
            for i in range(d):
                e[i] = tmp[i]
            if t >= g:
                for i in range(d):
                    acc = noise[pos, i]
                    for j in range(d):
                        acc += a[i, j] * f[j]
                    tmp[i] = acc
                for i in range(d):
                    f[i] = tmp[i]
            pos += 1
            n += 1
            if not (err_sum <= threshold * n):
                zeta[k] = z
                return k + 1, pos, n, err_sum, n - 1
        for i in range(d):
            e[i] = f[i]
        zeta[k] = z
    return waits.shape[0], pos, n, err_sum, -1


def run_full(config: SimConfig, trajectory: bool = False) -> SimOutput:
    """Slot-by-slot simulation with Gaussian plant noise.

    The running time-average of the squared error is checked every slot; if
    it exceeds ``config.divergence_threshold`` the run stops and is flagged
    as diverged. With ``trajectory=True`` the per-slot squared error, AoI and
    departure flags are returned as well (meant for small runs).
    """
    model = config.model
    y_prev, waits, y_cur = _schedule(config)
    noise_gen = rng.stream(config.seed, rng.NOISE, config.replication)
    scale = math.sqrt(model.noise_variance)
    a = np.ascontiguousarray(model.a_matrix)

    # error at slot 0: Y_0 slots of noise accumulated since sample 0 was taken
    e = np.zeros(model.dim)
    pre = scale * noise_gen.standard_normal((int(y_prev[0]), model.dim))
    with np.errstate(over="ignore", invalid="ignore"):
        for w in pre:
            e = a @ e + w

    lengths = (waits + y_cur).astype(np.int64)
    ends = np.cumsum(lengths)
    n_cycles = len(lengths)
    zeta = np.zeros(n_cycles)
    sq_parts = []
    slot, err_sum, done, diverged_at = 0, 0.0, 0, -1
    k0 = 0
    while k0 < n_cycles and diverged_at < 0:
        base = ends[k0 - 1] if k0 else 0
        k1 = int(np.searchsorted(ends, base + _CHUNK_SLOTS, side="right"))
        k1 = max(k1, k0 + 1)
        k1 = min(k1, n_cycles)
        chunk_slots = int(ends[k1 - 1] - base)
        noise = scale * noise_gen.standard_normal((chunk_slots, model.dim))
        sq = np.empty(chunk_slots if trajectory else 0)
        ran, used, slot, err_sum, diverged_at = _full_kernel(
            a, e, noise, waits[k0:k1], y_cur[k0:k1], slot, err_sum,
            config.divergence_threshold, zeta[k0:k1], sq, trajectory)
        if trajectory:
            sq_parts.append(sq[:used])
        done = k0 + ran
        k0 = k1

    zeta = zeta[:done]
    y_prev, waits, y_cur = y_prev[:done], waits[:done], y_cur[:done]
    div = None if diverged_at < 0 else int(diverged_at)
    running = err_sum / slot if slot else float("nan")
    metrics = _metrics(config, y_prev, waits, y_cur, zeta, div, running)
    traj = None
    if trajectory:
        lengths = (waits + y_cur).astype(np.int64)
        sq = np.concatenate(sq_parts) if sq_parts else np.zeros(0)
        offsets = np.arange(lengths.sum()) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        age = np.repeat(y_prev, lengths) + offsets
        departure = offsets == 0
        traj = {"sq_error": sq, "age": age[:len(sq)], "departure": departure[:len(sq)],
                "noise_offset": int(y_prev[0]) if len(y_prev) else 0}
    return SimOutput(metrics, y_prev, waits, y_cur, zeta, config.warmup_cycles, traj)


def run_renewal_fast(config: SimConfig) -> SimOutput:
    """Cycle-level simulation using the conditional mean cost of each cycle.

    Given (Y_{k-1}, G_k, Y_k) the expected squared error summed over the cycle
    is sum_{j=Y_{k-1}}^{Y_{k-1}+G_k+Y_k-1} f(j), a difference of two entries of
    the double-prefix table, so no Gaussian draws are needed.
    """
    y_prev, waits, y_cur = _schedule(config)
    hi = y_prev + waits + y_cur
    cost = build_cost_function(config.model, max(2, int(hi.max())))
    zeta = cost.window_sum(y_prev, hi)
    lengths = waits + y_cur
    div = None
    running = None
    with np.errstate(over="ignore", invalid="ignore"):
        cum_err = np.cumsum(zeta)
    cum_len = np.cumsum(lengths)
    over = np.flatnonzero(~(cum_err <= config.divergence_threshold * np.maximum(cum_len, 1)))
    if over.size:
        k = int(over[0])
        div = int(cum_len[k] - 1)
        running = float(cum_err[k] / max(cum_len[k], 1))
        y_prev, waits, y_cur, zeta = y_prev[:k + 1], waits[:k + 1], y_cur[:k + 1], zeta[:k + 1]
    metrics = _metrics(config, y_prev, waits, y_cur, zeta, div, running)
    return SimOutput(metrics, y_prev, waits, y_cur, np.asarray(zeta, dtype=float), config.warmup_cycles)


def run(config: SimConfig) -> SimOutput:
    return run_full(config) if config.mode == FULL else run_renewal_fast(config)


def _run_metrics(config: SimConfig) -> RunMetrics:
    return run(config).metrics


def parallel_map(fn, items, workers: int = 1) -> list:
    """Map ``fn`` over ``items`` keeping input order, optionally in processes."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_many(configs, workers: int = 1) -> list:
    """Run configurations on a worker pool; results come back in input order."""
    return parallel_map(_run_metrics, configs, workers)


@dataclass
class ClosedLoopLog:
    state: np.ndarray
    estimate: np.ndarray
    error: np.ndarray
    noise_sum_error: np.ndarray
    age: np.ndarray
    departure: np.ndarray

    @property
    def state_norm(self) -> np.ndarray:
        return np.linalg.norm(self.state, axis=1)

    @property
    def error_norm(self) -> np.ndarray:
        return np.linalg.norm(self.error, axis=1)

    @property
    def max_deviation(self) -> float:
        if len(self.error) == 0:
            return 0.0
        return float(np.max(np.abs(self.error - self.noise_sum_error)))


def run_closed_loop_demo(config: SimConfig, gain, slots: int = 10_000, x0=None) -> ClosedLoopLog:
    """Closed loop with certainty-equivalence control ``U = -K Xhat``.

    The controller knows X_0, so X̂_0 = X_0 and sample 0 is taken at slot 0.
    A sample taken at slot s is propagated through the dynamics with the
    applied inputs while in flight, giving
    X̂ = A^Δ X_{n-Δ} + sum_{j=1..Δ} A^(j-1) B U_{n-j} on delivery.
    The logged error X - X̂ is compared with the pure noise sum at every slot;
    the control terms cancel exactly, which is the point of the demo.
    """
    from .lti_core import error_from_noise

    model = config.model
    if model.b_matrix is None:
        raise ValueError("closed-loop demo needs an input matrix B")
    a, b = model.a_matrix, model.b_matrix
    k_gain = np.atleast_2d(np.asarray(gain, dtype=float))
    if k_gain.shape != (b.shape[1], model.dim):
        raise ValueError(f"gain must have shape {(b.shape[1], model.dim)}, got {k_gain.shape}")
    noise = generate_noise(model, slots, config.seed, config.replication)
    gen = rng.stream(config.seed, rng.CHANNEL, config.replication)
    policy = config.policy

    x = np.zeros(model.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    xhat = x.copy()
    age = 0
    in_flight = x.copy()
    y_now = sample(config.dist, gen)
    depart_at = y_now
    sample_at = None

    states, estimates, errors, ref, ages, deps = [], [], [], [], [], []
    for n in range(slots):
        delivered = False
        # a departure is processed before a sample taken in the same slot
        while True:
            if depart_at is not None and n == depart_at:
                xhat = in_flight.copy()
                age = y_now
                delivered = True
                sample_at = n + policy.wait(y_now)
                depart_at = None
                continue
            if sample_at is not None and n == sample_at:
                in_flight = x.copy()
                y_now = sample(config.dist, gen)
                depart_at = n + y_now
                sample_at = None
                continue
            break
        states.append(x.copy())
        estimates.append(xhat.copy())
        errors.append(x - xhat)
        ref.append(error_from_noise(model, noise, age, n))
        ages.append(age)
        deps.append(delivered)

        u = -k_gain @ xhat
        x = a @ x + b @ u + noise.samples[n]
        xhat = a @ xhat + b @ u
        if depart_at is not None:
            in_flight = a @ in_flight + b @ u
        age += 1

    return ClosedLoopLog(np.array(states), np.array(estimates), np.array(errors),
                         np.array(ref), np.array(ages), np.array(deps))
