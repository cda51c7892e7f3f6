"""Command-line entry point.

Commands read an optional declarative config (JSON or YAML) that is checked
against ``CONFIG_SCHEMA`` before any work starts; command-line flags override
values from the file. ``M2CMAB_OUTPUT_DIR`` overrides the configured output
directory (an explicit ``--output-dir`` still wins).

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import os
import platform
import sys
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .core import BudgetVector, Trace, TraceEnv, TraceError
from .scheduler import PHI_MIN_MODES, SchedulerConfig, t0_from_ratio
from .bench.baselines import ABLATIONS, POLICIES, make_policy
from .bench.matrix import ABLATION_POLICIES, SWEEP_RATIOS, ExperimentReport, MatrixSpec, run_matrix
from .bench.traces import REGIME_NAMES, GeneratorSpec, derive_budget_regimes, generate_synthetic_trace

log = logging.getLogger("m2cmab")

CONFIG_VERSION = 1
OUTPUT_ENV = "M2CMAB_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

_SCHEDULER_PROPS = {
    "rho": {"type": ["number", "null"], "minimum": 0},
    "refit_every": {"type": "integer", "minimum": 1},
    "reg_coeff": {"type": "number", "exclusiveMinimum": 0},
    "interactions": {"type": "boolean"},
    "step_size": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "step_scale": {"type": "number", "exclusiveMinimum": 0},
    "phi_min_mode": {"enum": list(PHI_MIN_MODES)},
    "cost_units": {"enum": ["pace", "raw"]},
    "charge_initial": {"type": "boolean"},
    "dual_gradient_source": {"enum": ["realized", "predicted"]},
    "reanchor_after_initial": {"type": "boolean"},
    "lp_allow_skip": {"type": "boolean"},
    "normalize_attention": {"type": "boolean"},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "trace": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_tasks": {"type": "integer"},
                "mode": {"enum": ["linear", "heterogeneous"]},
                "noise": {"type": "number"},
                "d_ctx": {"type": "integer"},
                "context_format": {"enum": ["embedding", "modalities"]},
                "tail_index": {"type": "number", "exclusiveMinimum": 0},
                "instance_seed": {"type": "integer"},
                "out": {"type": "string"},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trace_path": {"type": "string"},
                "policy": {"enum": sorted(POLICIES) + sorted(ABLATIONS)},
                "horizon": {"type": "integer", "minimum": 1},
                "T0": {"type": "integer", "minimum": 1},
                "ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "regime": {"enum": list(REGIME_NAMES)},
                "budget": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
                "per_round_csv": {"type": "boolean"},
                "scheduler": {"type": "object", "additionalProperties": False, "properties": _SCHEDULER_PROPS},
            },
        },
        "matrix": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "traces": {"type": "object", "minProperties": 1, "additionalProperties": {"type": "string"}},
                "mode": {"enum": ["compare", "sweep", "ablation"]},
                "policies": {"type": "array", "minItems": 1,
                             "items": {"enum": sorted(POLICIES) + sorted(ABLATIONS)}},
                "regimes": {"type": "array", "minItems": 1, "items": {"enum": list(REGIME_NAMES)}},
                "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
                "ratios": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                "horizon": {"type": "integer", "minimum": 1},
                "T0": {"type": "integer", "minimum": 1},
                "regret": {"type": "boolean"},
                "curve_points": {"type": "integer", "minimum": 0},
                "workers": {"type": "integer", "minimum": 1},
                "scheduler": {"type": "object", "additionalProperties": False, "properties": _SCHEDULER_PROPS},
            },
        },
        "export": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"report_path": {"type": "string"}},
        },
    },
}


class ConfigError(Exception):
    """Bad configuration or inputs; maps to exit code 2."""


# config handling -------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_text()
    try:
        data = yaml.safe_load(text) if p.suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    data = data or {}
    validate_config(data)
    return data


def validate_config(data: dict) -> None:
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema-error at {where}: {exc.message}")


def _pick(flag, section: dict, key: str, default=None):
    """Flag value if given, else the config value, else the default."""
    if flag is not None:
        return flag
    return section.get(key, default)


def output_dir(args, cfg: dict) -> Path:
    if getattr(args, "output_dir", None):
        out = Path(args.output_dir)
    elif os.environ.get(OUTPUT_ENV):
        out = Path(os.environ[OUTPUT_ENV])
    else:
        out = Path(cfg.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_metadata(target: Path, args: argparse.Namespace) -> None:
    """Sidecar with the wall-clock and environment details kept out of the main outputs."""
    meta = {
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "command": args.command,
        "argv": sys.argv[1:],
    }
    write_json(target.with_name(target.name + ".meta.json"), meta)


def _load_trace(path: str | None) -> Trace:
    if not path:
        raise ConfigError("missing-trace: no trace path given")
    if not Path(path).exists():
        raise ConfigError(f"missing-trace: {path} does not exist")
    try:
        return Trace.load(path)
    except TraceError as exc:
        raise ConfigError(f"invalid trace {path}: {exc}")


# commands --------------------------------------------------------------------

def cmd_gen_trace(args, cfg: dict) -> int:
    sec = cfg.get("trace", {})
    spec = GeneratorSpec(
        n_tasks=_pick(args.n_tasks, sec, "n_tasks", 1000),
        mode=_pick(args.mode, sec, "mode", "linear"),
        noise=_pick(args.noise, sec, "noise", 0.1),
        d_ctx=_pick(args.d_ctx, sec, "d_ctx", 6),
        context_format=_pick(args.context_format, sec, "context_format", "embedding"),
        tail_index=sec.get("tail_index", 2.5),
        instance_seed=sec.get("instance_seed", 0),
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))
    seed = _pick(args.seed, cfg, "seed", 0)
    trace = generate_synthetic_trace(spec, seed)
    out = Path(_pick(args.out, sec, "out", None) or output_dir(args, cfg) / "trace.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    trace.save(out)
    write_metadata(out, args)
    print(f"wrote {len(trace)} tasks to {out}")
    return EXIT_OK


def _budget_from(run: dict, args, trace: Trace, horizon: int) -> tuple[dict, str | None]:
    """Budget totals by dimension name, and the regime name when one was used."""
    totals = {}
    if run.get("budget"):
        totals.update(run["budget"])
    if args.latency_budget is not None:
        totals["latency"] = args.latency_budget
    if args.money_budget is not None:
        totals["money"] = args.money_budget
    regime = _pick(args.regime, run, "regime", None)
    if totals and set(totals) != set(trace.cost_names):
        if regime is None:
            raise ConfigError(f"budget must give every dimension {list(trace.cost_names)}")
    if regime is not None:
        derived = derive_budget_regimes(trace.head(horizon))[regime]
        base = dict(zip(derived.names, derived.totals))
        base.update(totals)
        totals = base
    if not totals:
        raise ConfigError("no budget: give --regime or both --latency-budget and --money-budget")
    return {name: float(totals[name]) for name in trace.cost_names}, regime


def cmd_run(args, cfg: dict) -> int:
    run = dict(cfg.get("run", {}))
    trace = _load_trace(_pick(args.trace, run, "trace_path"))
    horizon = _pick(args.horizon, run, "horizon", len(trace))
    ratio = _pick(args.ratio, run, "ratio", 0.05)
    T0 = _pick(args.T0, run, "T0", None) or t0_from_ratio(ratio, horizon, trace.n_actions)
    seed = _pick(args.seed, cfg, "seed", 0)
    policy = _pick(args.policy, run, "policy", "M2CMAB")
    totals, regime = _budget_from(run, args, trace, horizon)
    sched_kw = dict(run.get("scheduler", {}))
    if args.rho is not None:
        sched_kw["rho"] = args.rho
    out = output_dir(args, cfg)
    summary_path = out / "summary.json"
    config_echo = {"trace": str(_pick(args.trace, run, "trace_path")), "policy": policy, "horizon": horizon,
                   "T0": T0, "seed": seed, "regime": regime, "budget": totals, "scheduler": sched_kw}

    exhausted = [name for name in trace.cost_names if totals[name] <= 0]
    if exhausted:
        # nothing can be committed against an empty budget
        summary = {"config": config_echo, "Lambda": None, "opt_hat": None, "M_T0": None, "rounds_executed": 0,
                   "avg_reward": 0.0, "reward_sum": 0.0, "consumed": {n: 0.0 for n in trace.cost_names},
                   "stop_reason": f"{exhausted[0]}_budget", "policy": policy}
        write_json(summary_path, summary)
        write_metadata(summary_path, args)
        print(json.dumps({k: summary[k] for k in ("rounds_executed", "avg_reward", "stop_reason")}))
        return EXIT_OK

    try:
        budget = BudgetVector(np.array([totals[n] for n in trace.cost_names]), trace.cost_names)
        config = SchedulerConfig(horizon, T0, budget, seed=seed, **sched_kw)
        config.validate(trace.n_actions)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    per_round = bool(args.per_round_csv or run.get("per_round_csv", False))
    sched = make_policy(policy, TraceEnv(trace), config, record_rounds=per_round)
    sched.run()
    summary = sched.summary()
    summary["config"] = config_echo
    write_json(summary_path, summary)
    write_metadata(summary_path, args)
    if per_round:
        C = trace.n_costs
        with open(out / "rounds.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "action", "reward", *[f"cost_{c + 1}" for c in range(C)],
                        *[f"lambda_{c + 1}" for c in range(C)], "score_max"])
            w.writerows(sched.round_log)
    print(json.dumps({k: summary[k] for k in ("rounds_executed", "avg_reward", "stop_reason")}))
    return EXIT_OK


def cmd_matrix(args, cfg: dict) -> int:
    sec = dict(cfg.get("matrix", {}))
    paths = dict(sec.get("traces", {}))
    for item in args.trace or []:
        name, _, path = item.rpartition("=")
        paths[name or Path(path).stem] = path
    if not paths:
        raise ConfigError("matrix needs at least one trace (config matrix.traces or --trace name=path)")
    traces = {name: _load_trace(p) for name, p in paths.items()}
    mode = _pick(args.mode, sec, "mode", "compare")
    policies = {"compare": list(POLICIES), "sweep": ["M2CMAB"], "ablation": list(ABLATION_POLICIES)}[mode]
    ratios = list(SWEEP_RATIOS) if mode == "sweep" else [0.05]
    try:
        spec = MatrixSpec(
            policies=tuple(_pick(args.policies, sec, "policies", policies)),
            regimes=tuple(_pick(args.regimes, sec, "regimes", list(REGIME_NAMES))),
            seeds=tuple(_pick(args.seeds, sec, "seeds", [0, 1, 2, 3, 4])),
            ratios=tuple(_pick(args.ratios, sec, "ratios", ratios)),
            horizon=_pick(args.horizon, sec, "horizon", None),
            T0=sec.get("T0"),
            scheduler=dict(sec.get("scheduler", {})),
            regret=bool(args.regret or sec.get("regret", False)),
            curve_points=_pick(args.curve_points, sec, "curve_points", 0),
            workers=_pick(args.workers, sec, "workers", 1),
        )
        spec.validate()
        bad = [p for p in spec.policies if p not in POLICIES and p not in ABLATIONS]
        if bad:
            raise ValueError(f"unknown policies {bad}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    report = run_matrix(traces, spec)
    out = output_dir(args, cfg)
    report.save_json(out / "report.json")
    report.save_csv(out / "report.csv")
    report.save_summary_csv(out / "summary.csv")
    if spec.curve_points:
        report.save_curves(out / "curves")
    write_metadata(out / "report.json", args)
    for row in report.aggregate():
        print(f"{row['dataset']:>12} {row['regime']:>10} {row['policy']:>16} ratio={row['ratio']:<6g} "
              f"avg_reward={row['mean_avg_reward']:.4f} +/- {row['std_avg_reward']:.4f}"
              + (f" failed={row['n_failed']}" if row["n_failed"] else ""))
    failures = report.failures()
    if failures and len(failures) == len(report.cells):
        log.error("every cell failed; first error: %s", failures[0].error)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_regimes(args, cfg: dict) -> int:
    trace = _load_trace(_pick(args.trace, cfg.get("run", {}), "trace_path"))
    horizon = args.horizon or len(trace)
    try:
        regimes = derive_budget_regimes(trace.head(horizon))
    except ValueError as exc:
        raise ConfigError(str(exc))
    data = {name: dict(zip(r.names, r.totals)) for name, r in regimes.items()}
    out = output_dir(args, cfg) / "regimes.json"
    write_json(out, data)
    print(json.dumps(data, indent=1, sort_keys=True))
    return EXIT_OK


TIDY_FIELDS = ("dataset", "regime", "policy", "ratio", "seed", "metric", "value")


def cmd_export_plots(args, cfg: dict) -> int:
    path = _pick(args.report, cfg.get("export", {}), "report_path")
    if not path or not Path(path).exists():
        raise ConfigError(f"missing-report: {path}")
    try:
        report = ExperimentReport.load_json(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable report {path}: {exc}")
    out = output_dir(args, cfg) / "tidy.csv"
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TIDY_FIELDS)
        w.writeheader()
        w.writerows(report.tidy_rows())
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"gen-trace": cmd_gen_trace, "run": cmd_run, "matrix": cmd_matrix, "regimes": cmd_regimes,
            "export-plots": cmd_export_plots}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m2cmab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or YAML config file")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("gen-trace", help="write a synthetic JSONL trace"))
    p.add_argument("--n-tasks", type=int)
    p.add_argument("--mode", choices=["linear", "heterogeneous"])
    p.add_argument("--noise", type=float)
    p.add_argument("--d-ctx", type=int)
    p.add_argument("--context-format", choices=["embedding", "modalities"])
    p.add_argument("--out", help="trace path (default: <output-dir>/trace.jsonl)")

    p = common(sub.add_parser("run", help="run one policy over a trace"))
    p.add_argument("--trace")
    p.add_argument("--policy", choices=sorted(POLICIES) + sorted(ABLATIONS))
    p.add_argument("--horizon", type=int)
    p.add_argument("--T0", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--regime", choices=REGIME_NAMES)
    p.add_argument("--latency-budget", type=float)
    p.add_argument("--money-budget", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--per-round-csv", action="store_true")

    p = common(sub.add_parser("matrix", help="multi-seed experiment matrix"))
    p.add_argument("--trace", action="append", help="name=path, repeatable")
    p.add_argument("--mode", choices=["compare", "sweep", "ablation"])
    p.add_argument("--policies", nargs="+")
    p.add_argument("--regimes", nargs="+", choices=REGIME_NAMES)
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--ratios", nargs="+", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--regret", action="store_true")
    p.add_argument("--curve-points", type=int)
    p.add_argument("--workers", type=int)

    p = common(sub.add_parser("regimes", help="print the budget regimes of a trace"))
    p.add_argument("--trace")
    p.add_argument("--horizon", type=int)

    p = common(sub.add_parser("export-plots", help="tidy CSV from a matrix report"))
    p.add_argument("--report")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
