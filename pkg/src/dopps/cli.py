"""Experiment runner CLI: run presets/config files, validate graph files,
and check fitted convergence rates against their bound exponents.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys

from . import engine, metrics
from .errors import (ConfigError, DoppsError, GenerationFailed, MissingColumn,
                     NonConvergence, NonPositiveValues, WeightUnderflow)
from .graph import check_assumption1, load_graph_matrices

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_SECTIONS = ("problem", "graph", "run", "output")

PRESETS: dict[str, dict] = {
    "pev50-q1": {
        "problem": {"kind": "pev", "n_agents": 50, "seed": 1},
        "graph": {"q": 1, "seed": 2, "balanced": False},
        "run": {"kappa": 0.2, "horizon": 10000, "algorithm": "pushsum",
                "seed": 0, "record_every": 1,
                "offline_max_iter": 20000, "offline_tol": 0.001},
        "output": {"dir": "out"},
    },
    "pev50-q4": {
        "problem": {"kind": "pev", "n_agents": 50, "seed": 1},
        "graph": {"q": 4, "seed": 2, "balanced": False},
        "run": {"kappa": 0.2, "horizon": 10000, "algorithm": "pushsum",
                "seed": 0, "record_every": 1,
                "offline_max_iter": 20000, "offline_tol": 0.001},
        "output": {"dir": "out"},
    },
    "pev50-q9": {
        "problem": {"kind": "pev", "n_agents": 50, "seed": 1},
        "graph": {"q": 9, "seed": 2, "balanced": False},
        "run": {"kappa": 0.2, "horizon": 10000, "algorithm": "pushsum",
                "seed": 0, "record_every": 1,
                "offline_max_iter": 20000, "offline_tol": 0.001},
        "output": {"dir": "out"},
    },
    "pev100-q1": {
        "problem": {"kind": "pev", "n_agents": 100, "seed": 1},
        "graph": {"q": 1, "seed": 2, "balanced": False},
        "run": {"kappa": 0.2, "horizon": 10000, "algorithm": "pushsum",
                "seed": 0, "record_every": 1,
                "offline_max_iter": 20000, "offline_tol": 0.001},
        "output": {"dir": "out"},
    },
    # kappa = 1/5 equalizes both bound exponents at 0.9
    "synthetic-rate": {
        "problem": {"kind": "synthetic", "n_agents": 4, "dim": 3, "seed": 1},
        "graph": {"q": 1, "seed": 2, "balanced": False},
        "run": {"kappa": 0.2, "horizon": 100000, "algorithm": "pushsum",
                "seed": 0, "record_every": 10,
                "offline_max_iter": 60000, "offline_tol": 0.0001},
        "output": {"dir": "out"},
    },
}


# ---------------------------------------------------------------------------
# Config file handling (flat key-value text with section headers)
# ---------------------------------------------------------------------------

def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(s: str):
    low = s.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    for cast in (int, float):
        try:
            return cast(low)
        except ValueError:
            continue
    return low


def config_to_text(cfg: dict) -> str:
    out = io.StringIO()
    for section in _SECTIONS:
        if section not in cfg or cfg[section] is None:
            continue
        out.write(f"[{section}]\n")
        for key, val in cfg[section].items():
            out.write(f"{key} = {_format_value(val)}\n")
        out.write("\n")
    return out.getvalue()


def parse_config_text(text: str) -> dict:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg: dict = {}
    for section in parser.sections():
        cfg[section] = {k: _parse_value(v) for k, v in parser[section].items()}
    return cfg


def load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config_text(fh.read())


def _experiment_config(args) -> dict:
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; choices: {sorted(PRESETS)}")
        cfg = {sec: dict(vals) for sec, vals in PRESETS[args.preset].items()}
    elif args.config is not None:
        cfg = load_config_file(args.config)
    else:
        raise ConfigError("either --preset or --config is required")
    run = cfg.setdefault("run", {})
    if args.seed is not None:
        run["seed"] = args.seed
    if args.kappa is not None:
        run["kappa"] = args.kappa
    if args.horizon is not None:
        run["horizon"] = args.horizon
    if args.alg is not None:
        run["algorithm"] = args.alg
    if args.allow_any_kappa:
        run["allow_any_kappa"] = True
    if args.out is not None:
        cfg.setdefault("output", {})["dir"] = args.out
    return cfg


def _build_run_config(cfg: dict) -> engine.RunConfig:
    if "problem" not in cfg:
        raise ConfigError("config needs a [problem] section")
    run = cfg.get("run", {})
    graph_cfg = cfg.get("graph")
    graph_spec = None
    if graph_cfg is not None:
        graph_spec = {k.upper() if k == "q" else k: v for k, v in graph_cfg.items()}
    try:
        return engine.config_from_specs(
            problem_spec=cfg["problem"],
            graph_spec=graph_spec,
            kappa=float(run.get("kappa", 0.2)),
            horizon=int(run.get("horizon", 10000)),
            algorithm=str(run.get("algorithm", "pushsum")),
            seed=int(run.get("seed", 0)),
            record_every=int(run.get("record_every", 1)),
            allow_any_kappa=bool(run.get("allow_any_kappa", False)))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    run_cfg = _build_run_config(cfg)
    out_dir = cfg.get("output", {}).get("dir", "out")
    os.makedirs(out_dir, exist_ok=True)

    trace = engine.run(run_cfg)
    stem = engine.trace_filename(run_cfg)[len("run_"):-len(".csv")]
    trace_path = os.path.join(out_dir, f"run_{stem}.csv")
    engine.write_trace_csv(trace, trace_path)

    run_opts = cfg.get("run", {})
    offline = metrics.solve_offline(
        run_cfg.problem, run_cfg.horizon,
        tol=float(run_opts.get("offline_tol", 0.001)),
        max_iter=int(run_opts.get("offline_max_iter", 20000)))
    rounds, reg = metrics.regret(trace, offline)
    _, regc = metrics.constraint_violation(trace)
    metrics_path = os.path.join(out_dir, f"metrics_{stem}.csv")
    metrics.write_metrics_csv(metrics_path, rounds, reg, regc)

    fits = {}
    for name, series in (("regret", reg), ("violation", regc)):
        try:
            fits[name] = metrics.fit_rate(rounds, series, window=0.5)
        except NonPositiveValues:
            fits[name] = None
    rates_path = os.path.join(out_dir, f"rates_{stem}.txt")
    metrics.write_rates_txt(rates_path, run_cfg.schedule.kappa, fits)
    print(f"wrote {trace_path}, {metrics_path}, {rates_path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    if not os.path.exists(args.graph_file):
        raise ConfigError(f"graph file not found: {args.graph_file}")
    mats, q_file = load_graph_matrices(args.graph_file)
    q = args.q if args.q is not None else q_file
    horizon = args.horizon if args.horizon is not None else max(2 * q, len(mats))
    report = check_assumption1(mats, horizon_T=horizon, a_min=args.a_min, Q=q)
    if report.ok:
        print(f"ok: {len(mats)} matrices satisfy all clauses "
              f"(a_min={args.a_min}, Q={q}, horizon={horizon})")
        return EXIT_OK
    print(str(report))
    return EXIT_VALIDATION


def cmd_rates(args) -> int:
    bounds = metrics.theoretical_exponents(args.kappa)
    reg_bound = bounds["regret"]
    if args.time_invariant:
        regc_bound = bounds["violation_time_invariant"]
    else:
        regc_bound = bounds["violation"]
    all_pass = True
    for path in args.metrics_csv:
        if not os.path.exists(path):
            raise ConfigError(f"metrics file not found: {path}")
        data = metrics.read_metrics_csv(path)
        print(f"{path}:")
        for name, col, bound in (("regret", "reg", reg_bound),
                                 ("violation", "regc", regc_bound)):
            try:
                fit = metrics.fit_rate(data["t"], data[col], window=args.window)
            except NonPositiveValues:
                print(f"  {name:10s} fit skipped (non-positive values); "
                      f"bound exponent {bound:.3f}")
                continue
            ok = fit.slope <= bound + args.margin
            all_pass &= ok
            verdict = "pass" if ok else "FAIL"
            print(f"  {name:10s} slope {fit.slope:+.4f}  bound {bound:.3f} "
                  f"+ margin {args.margin:.2f}  {verdict}")
    return EXIT_OK if all_pass else EXIT_VALIDATION


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dopps",
        description="Distributed online primal-dual push-sum experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and write CSVs")
    p_run.add_argument("--config", help="experiment config file")
    p_run.add_argument("--preset", help=f"preset name: {', '.join(sorted(PRESETS))}")
    p_run.add_argument("--seed", type=int, help="override run seed")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--kappa", type=float, help="override step exponent")
    p_run.add_argument("--horizon", type=int, help="override horizon T")
    p_run.add_argument("--alg", choices=("pushsum", "balanced", "centralized"),
                       help="override algorithm")
    p_run.add_argument("--allow-any-kappa", action="store_true",
                       help="lift the kappa in (0, 1/4) check")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a graph file's clauses")
    p_val.add_argument("graph_file")
    p_val.add_argument("--a-min", type=float, default=0.0,
                       help="weight lower bound to enforce")
    p_val.add_argument("--q", type=int, help="connectivity window (default: file)")
    p_val.add_argument("--horizon", type=int, help="rounds to check")
    p_val.set_defaults(func=cmd_validate)

    p_rates = sub.add_parser("rates", help="fitted vs theoretical exponents")
    p_rates.add_argument("metrics_csv", nargs="+")
    p_rates.add_argument("--kappa", type=float, default=0.2)
    p_rates.add_argument("--margin", type=float, default=0.1)
    p_rates.add_argument("--window", type=float, default=0.5)
    p_rates.add_argument("--time-invariant", action="store_true",
                         help="use the time-invariant violation bound")
    p_rates.set_defaults(func=cmd_rates)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MissingColumn) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WeightUnderflow, NonConvergence, GenerationFailed,
            FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DoppsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
