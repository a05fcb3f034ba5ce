"""Command-line experiments.

Every command writes a CSV (to ``--out`` or stdout) preceded by ``#``
comment lines recording the parameters used. Exit status is 0 on success,
2 on invalid input and 3 when ``--strict`` is set and a run diverged.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analytic, channel, sim
from .lti_core import CostOverflowError, SystemModel, load_matrix, rotation
from .policy import DEFAULT_EPSILON, DEFAULT_MAX_WAIT, parse_policy, solve_meas

log = logging.getLogger("aoi_ncs")

TABLE1_P = [0.01, 0.05, 0.1, 0.2, 0.4, 0.8]
CURVE_P = [0.1, 0.3, 0.5, 0.7]
SWEEP_P = [round(0.05 * i, 2) for i in range(1, 20)]
SWEEP_A = ["0.5", "0.9", "1"]

TABLE1_HEADER = ("p", "zero_wait_analytic", "zero_wait_sim", "zero_wait_stderr",
                 "meas_beta", "meas_analytic", "meas_sim", "meas_stderr")
CURVE_HEADER = ("p", "y", "g_continuous", "g_floored")
SWEEP_HEADER = ("a", "p", "policy", "spectral_radius", "status", "meas_beta",
                "analytic", "sim", "stderr")
SIMULATE_HEADER = ("mode", "policy", "analytic", "time_avg_sq_error", "stderr_sq_error",
                   "analytic_aoi", "empirical_mean_aoi", "stderr_mean_aoi", "total_slots",
                   "total_cycles", "diverged", "diverged_at_slot", "seed")
CLOSED_LOOP_HEADER = ("n", "age", "departure", "state_norm", "error_norm", "noise_sum_deviation")
ANALYZE_HEADER = ("a", "sigma2", "channel", "policy", "max_wait", "gamma", "meas_beta",
                  "expected_aoi", "expected_f_delta", "truncation_error_bound")

EXIT_INVALID = 2
EXIT_DIVERGED = 3


class Diverged(Exception):
    pass


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class CsvOut:
    def __init__(self, command: str, params: dict):
        self.buf = io.StringIO()
        self.buf.write(f"# aoi-ncs {command}\n")
        for key in sorted(params):
            # workers only changes scheduling, never results, so it is not echoed
            if key in ("func", "command", "config", "out", "verbose", "workers"):
                continue
            val = params[key]
            if isinstance(val, list):
                val = " ".join(fmt(v) for v in val)
            self.buf.write(f"# {key}={fmt(val)}\n")
        self.writer = csv.writer(self.buf, lineterminator="\n")

    def comment(self, text: str):
        for line in text.splitlines():
            self.buf.write(f"# {line}\n")

    def row(self, values):
        self.writer.writerow([fmt(v) for v in values])

    def emit(self, out):
        text = self.buf.getvalue()
        if out:
            Path(out).write_text(text)
        else:
            sys.stdout.write(text)


def parse_a(text: str) -> np.ndarray:
    """Scalar ``1.1``, rotation ``rot:<theta>`` or a matrix file path."""
    text = str(text).strip()
    if text.startswith("rot:"):
        return rotation(float(text[4:]))
    try:
        return np.array([[float(text)]])
    except ValueError:
        pass
    if Path(text).exists():
        return load_matrix(text)
    raise ValueError(f"cannot interpret A specification {text!r}")


def _a_specs(args) -> list:
    specs = list(args.a or [])
    specs += list(args.a_file or [])
    return specs


def _model(args, a_spec=None) -> SystemModel:
    if a_spec is None:
        specs = _a_specs(args)
        if len(specs) > 1:
            raise ValueError("give a single A for this command")
        a_spec = specs[0] if specs else "1"
    b = None
    if getattr(args, "b_file", None):
        b = load_matrix(args.b_file)
    elif getattr(args, "b", None) is not None:
        b = np.array([[float(args.b)]])
    return SystemModel(parse_a(a_spec), args.sigma2, b)


def _dist(args, p=None) -> channel.TransmissionDistribution:
    if p is not None:
        return channel.geometric(p, args.mass_floor)
    if getattr(args, "dist_file", None):
        return channel.load_pmf(args.dist_file)
    if getattr(args, "deterministic", None) is not None:
        return channel.deterministic(args.deterministic)
    ps = args.p if isinstance(args.p, list) else [args.p]
    if len(ps) != 1:
        raise ValueError("give a single --p for this command")
    return channel.geometric(ps[0], args.mass_floor)


def _unstable(model) -> bool:
    return model.spectral_radius() > 1.0 + 1e-9


def _analytic_value(model, dist, policy):
    if _unstable(model):
        return math.inf
    try:
        return analytic.expected_f_delta(analytic.cost_for(model, dist, policy), dist, policy).value
    except CostOverflowError:
        return math.inf


def _sim_config(args, model, dist, policy, replication=0, mode=sim.FAST):
    return sim.SimConfig(model, dist, policy, args.cycles, args.seed, args.warmup, mode, replication)


def cmd_table1(args) -> int:
    out = CsvOut("table1", vars(args))
    out.row(TABLE1_HEADER)
    model = SystemModel(np.array([[1.0]]), 1.0)
    rows, configs = [], []
    for i, p in enumerate(args.p):
        dist = channel.geometric(p, args.mass_floor)
        zw = parse_policy("zero-wait", dist, args.max_wait, args.epsilon)
        meas = parse_policy("meas", dist, args.max_wait, args.epsilon)
        cost = analytic.cost_for(model, dist, meas)
        zw_val = analytic.expected_f_delta(cost, dist, zw).value
        meas_val = analytic.expected_f_delta(cost, dist, meas).value
        rows.append((p, zw_val, meas.param, meas_val))
        # same replication index for both policies: paired channel draws
        configs += [_sim_config(args, model, dist, zw, i), _sim_config(args, model, dist, meas, i)]
    results = sim.run_many(configs, args.workers)
    for i, (p, zw_val, beta, meas_val) in enumerate(rows):
        z, m = results[2 * i], results[2 * i + 1]
        out.row((p, zw_val, z.time_avg_sq_error, z.stderr_sq_error,
                 beta, meas_val, m.time_avg_sq_error, m.stderr_sq_error))
    out.emit(args.out)
    return 0


def cmd_meas_curve(args) -> int:
    out = CsvOut("meas-curve", vars(args))
    out.row(CURVE_HEADER)
    for p in args.p:
        dist = channel.geometric(p, args.mass_floor)
        policy = parse_policy("meas", dist, args.max_wait, args.epsilon)
        sol = policy.solution
        for y in range(1, args.y_max + 1):
            out.row((p, y, float(sol.continuous_wait(y)), policy.wait(y)))
    out.emit(args.out)
    return 0


def cmd_sweep(args) -> int:
    out = CsvOut("sweep", vars(args))
    out.row(SWEEP_HEADER)
    mode = sim.FULL if args.mode == "full" else sim.FAST
    specs = _a_specs(args) or SWEEP_A
    rows, configs, slots = [], [], []
    for ai, spec in enumerate(specs):
        model = _model(args, spec)
        rho = model.spectral_radius()
        for pi, p in enumerate(args.p):
            dist = channel.geometric(p, args.mass_floor)
            for pol_spec in args.policy:
                policy = parse_policy(pol_spec, dist, args.max_wait, args.epsilon)
                beta = policy.param if policy.solution is not None else None
                value = _analytic_value(model, dist, policy)
                status = "ok" if math.isfinite(value) else "diverged"
                rows.append([spec, p, policy.label, rho, status, beta, value, None, None])
                if status == "ok":
                    slots.append(len(rows) - 1)
                    configs.append(_sim_config(args, model, dist, policy, ai * len(args.p) + pi, mode))
    for idx, metrics in zip(slots, sim.run_many(configs, args.workers)):
        rows[idx][7] = metrics.time_avg_sq_error
        rows[idx][8] = metrics.stderr_sq_error
        if metrics.diverged:
            rows[idx][4] = "diverged"
    for r in rows:
        out.row(r)
    out.emit(args.out)
    if args.strict and any(r[4] == "diverged" for r in rows):
        raise Diverged("sweep contains diverged rows")
    return 0


def cmd_simulate(args) -> int:
    model = _model(args)
    dist = _dist(args)
    policy = parse_policy(args.policy, dist, args.max_wait, args.epsilon)
    out = CsvOut("simulate", vars(args))
    if args.mode == "closed-loop":
        gain = load_matrix(args.gain_file) if args.gain_file else np.array([[float(args.gain)]])
        config = sim.SimConfig(model, dist, policy, 1, args.seed, 0)
        trace = sim.run_closed_loop_demo(config, gain, args.slots)
        dev = np.max(np.abs(trace.error - trace.noise_sum_error), axis=1)
        out.comment(f"max_deviation={fmt(trace.max_deviation)}")
        out.row(CLOSED_LOOP_HEADER)
        for n in range(len(trace.age)):
            out.row((n, trace.age[n], bool(trace.departure[n]), trace.state_norm[n],
                     trace.error_norm[n], dev[n]))
        out.emit(args.out)
        return 0

    mode = sim.FULL if args.mode == "full" else sim.FAST
    config = _sim_config(args, model, dist, policy, 0, mode)
    result = sim.run(config)
    m = result.metrics
    if args.cycle_log:
        result.write_cycle_log(args.cycle_log)
    value = _analytic_value(model, dist, policy)
    aoi = analytic.expected_aoi(dist, policy).value
    out.row(SIMULATE_HEADER)
    out.row((config.mode, policy.label, value, m.time_avg_sq_error, m.stderr_sq_error, aoi,
             m.empirical_mean_aoi, m.stderr_mean_aoi, m.total_slots, m.total_cycles,
             m.diverged, m.diverged_at_slot, m.seed))
    out.emit(args.out)
    if m.diverged:
        log.warning("run diverged at slot %d", m.diverged_at_slot)
        if args.strict:
            raise Diverged(f"diverged at slot {m.diverged_at_slot}")
    return 0


def cmd_analyze(args) -> int:
    model = _model(args)
    dist = _dist(args)
    policy = parse_policy(args.policy, dist, args.max_wait, args.epsilon)
    beta = solve_meas(dist, args.max_wait, args.epsilon).beta if dist.mean > 0 else None
    aoi = analytic.expected_aoi(dist, policy)
    try:
        cost = analytic.cost_for(model, dist, policy)
        ev = analytic.expected_f_delta(cost, dist, policy)
        gamma = cost.gamma
        value, bound = ev.value, ev.truncation_error_bound
    except CostOverflowError as exc:
        gamma, value, bound = None, math.inf, None
        log.warning("%s", exc)
    a_label = " ".join(_a_specs(args)) or "1"
    out = CsvOut("analyze", vars(args))
    out.comment("\n".join([
        f"A = {np.array2string(model.a_matrix, separator=', ')}",
        f"spectral radius = {model.spectral_radius():.6g}",
        f"channel = {dist.label}, E[Y] = {dist.mean:.6g}",
        f"policy = {policy.label}",
        f"E[AoI] = {aoi.value:.10g}",
        f"E[f(AoI)] = {value:.10g}",
        f"gamma = {'n/a (cost not linear in age)' if gamma is None else f'{gamma:.10g}'}",
        f"MEAS beta = {'n/a' if beta is None else f'{beta:.10g}'}",
    ]))
    out.row(ANALYZE_HEADER)
    out.row((a_label, args.sigma2, dist.label, policy.label, args.max_wait, gamma, beta,
             aoi.value, value, bound))
    out.emit(args.out)
    return 0


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of option defaults; flags override it")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--max-wait", type=int, default=DEFAULT_MAX_WAIT, help="waiting cap M")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="MEAS bisection tolerance")
    p.add_argument("--mass-floor", type=float, default=channel.DEFAULT_MASS_FLOOR,
                   help="geometric tail mass dropped from analytic tables")
    p.add_argument("-v", "--verbose", action="store_true")


def _sim_flags(p: argparse.ArgumentParser):
    p.add_argument("--cycles", type=int, default=1_000_000)
    p.add_argument("--warmup", type=int, default=sim.DEFAULT_WARMUP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--a", action="append", help="scalar A or rot:<theta>")
    p.add_argument("--a-file", action="append", help="matrix file for A")
    p.add_argument("--sigma2", type=float, default=1.0, help="noise variance")


def _channel_flags(p: argparse.ArgumentParser):
    p.add_argument("--p", type=float, default=0.1, help="geometric success probability")
    p.add_argument("--dist-file", help="empirical pmf file of 'y probability' lines")
    p.add_argument("--deterministic", type=int, help="constant transmission time")
    p.add_argument("--policy", default="zero-wait", help="zero-wait | const:<g> | meas")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="aoi-ncs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("table1", help="zero-wait vs MEAS for A = 1")
    _common(p)
    _sim_flags(p)
    p.add_argument("--p", type=float, nargs="+", default=TABLE1_P)
    p.set_defaults(func=cmd_table1)
    subs["table1"] = p

    p = sub.add_parser("meas-curve", help="MEAS waiting function g(y)")
    _common(p)
    p.add_argument("--p", type=float, nargs="+", default=CURVE_P)
    p.add_argument("--y-max", type=int, default=10)
    p.set_defaults(func=cmd_meas_curve)
    subs["meas-curve"] = p

    p = sub.add_parser("sweep", help="error vs p for several A and policies")
    _common(p)
    _sim_flags(p)
    _model_flags(p)
    p.add_argument("--p", type=float, nargs="+", default=SWEEP_P)
    p.add_argument("--policy", nargs="+", default=["zero-wait", "meas"])
    p.add_argument("--mode", choices=["fast", "full"], default="fast")
    p.add_argument("--strict", action="store_true", help="exit 3 if any row diverged")
    p.set_defaults(func=cmd_sweep)
    subs["sweep"] = p

    p = sub.add_parser("simulate", help="one simulation run")
    _common(p)
    _sim_flags(p)
    _model_flags(p)
    _channel_flags(p)
    p.add_argument("--mode", choices=["fast", "full", "closed-loop"], default="fast")
    p.add_argument("--cycle-log", help="write per-cycle CSV here")
    p.add_argument("--b", type=float, help="scalar input matrix B (closed-loop)")
    p.add_argument("--b-file", help="matrix file for B (closed-loop)")
    p.add_argument("--gain", type=float, default=0.0, help="scalar gain K (closed-loop)")
    p.add_argument("--gain-file", help="matrix file for K (closed-loop)")
    p.add_argument("--slots", type=int, default=10_000, help="closed-loop horizon")
    p.add_argument("--strict", action="store_true", help="exit 3 if the run diverged")
    p.set_defaults(func=cmd_simulate)
    subs["simulate"] = p

    p = sub.add_parser("analyze", help="analytic quantities at one operating point")
    _common(p)
    _model_flags(p)
    _channel_flags(p)
    p.set_defaults(func=cmd_analyze)
    subs["analyze"] = p
    return parser, subs


def _load_config(path) -> dict:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def main(argv=None) -> int:
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            subs[args.command].set_defaults(**_load_config(args.config))
            args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except Diverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
