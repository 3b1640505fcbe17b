"""Command line entry point: ``minimaxdnn <subcommand> ...``.

Exit codes: 0 on success, 1 on runtime failure (with a per-cell error table for
studies), 2 on invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import asdict, fields
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, kernels
from .architecture import (
    NoiseProfile,
    RateExponents,
    SmoothnessSpec,
    covering_bound,
    lower_bound_rate,
    rate_exponents,
    size_architecture,
    upper_bound_rate,
)
from .errors import InvalidInputError
from .hard_instance import verify_margin
from .modular import Dataset, load_instance, margin_probabilities, sample_dataset
from .network import NetworkArch, SparseNetwork
from .risk import StudyPlan, mc_excess_risk, rate_study
from .seeding import MIXING_FUNCTION
from .trainer import TrainConfig, select_dropout, train_erm

OUTPUT_ENV = "MINIMAXDNN_OUTPUT_DIR"
CSV_COLUMNS = ["n", "d", "seed", "excess_risk", "std_error", "theory_lower", "theory_upper", "slope_fit"]

_TRAIN_PROPS = {
    "epochs": {"type": "integer", "minimum": 1},
    "batch_size": {"type": "integer", "minimum": 1},
    "step_size": {"type": "number", "exclusiveMinimum": 0},
    "step_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "projection_period": {"type": "integer", "minimum": 1},
    "sparsity_warmup": {"type": "integer", "minimum": 0},
    "init": {"enum": ["glorot_uniform"]},
    "init_gain": {"type": "number", "exclusiveMinimum": 0},
    "max_retries": {"type": "integer", "minimum": 0},
    "restarts": {"type": "integer", "minimum": 1},
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["instance", "n_grid", "seeds"],
    "additionalProperties": False,
    "properties": {
        "instance": {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {"enum": ["gam-linear", "gam", "tensor-anova", "constant", "hard"]},
                "d": {"type": "integer", "minimum": 1},
            },
        },
        "n_grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 10}},
        "seeds": {"type": "array", "minItems": 1, "uniqueItems": True, "items": {"type": "integer", "minimum": 0}},
        "base_seed": {"type": "integer", "minimum": 0},
        "architecture": {
            "oneOf": [
                {"const": "auto"},
                {
                    "type": "object",
                    "required": ["L", "widths", "s", "B"],
                    "additionalProperties": False,
                    "properties": {
                        "L": {"type": "integer", "minimum": 1},
                        "widths": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                        "s": {"type": "integer", "minimum": 1},
                        "B": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            ]
        },
        "train": {"type": "object", "additionalProperties": False, "properties": _TRAIN_PROPS},
        "dropout_candidates": {
            "type": "array", "minItems": 1,
            "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        },
        "n_test": {"type": "integer", "minimum": 1},
        "eps": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "output_dir": {"type": "string", "minLength": 1},
    },
}


class ConfigError(Exception):
    """Invalid configuration; reported with exit status 2."""


# --- helpers --------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else repr(x))
    return str(x)


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _print_csv(rows, columns, out=None):
    out = out or sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])


def _line_of(text, pointer):
    """Best-effort source line of a JSON path (first occurrence of its last key)."""
    keys = [p for p in pointer if isinstance(p, str)]
    if not keys:
        return None
    needle = json.dumps(keys[-1]) + ":"
    idx = text.find(needle)
    if idx < 0:
        needle = json.dumps(keys[-1])
        idx = text.find(needle)
    return text.count("\n", 0, idx) + 1 if idx >= 0 else None


def load_config(path):
    """Parse and validate a study configuration; raises ``ConfigError`` with diagnostics."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errs:
        lines = []
        for e in errs:
            field = "/".join(str(p) for p in e.path) or "<root>"
            line = _line_of(text, list(e.path))
            loc = f"{path}:{line}" if line else str(path)
            lines.append(f"{loc}: field '{field}': {e.message}")
        raise ConfigError("\n".join(lines))
    ns = cfg["n_grid"]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError(f"{path}:{_line_of(text, ['n_grid'])}: field 'n_grid': values must be strictly increasing")
    try:
        load_instance(cfg["instance"])
        if isinstance(cfg.get("architecture"), dict):
            NetworkArch.from_dict(cfg["architecture"])
        TrainConfig(**cfg.get("train", {}))
    except (InvalidInputError, TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {type(exc).__name__}: {exc}") from exc
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def output_dir(cfg_value=None, cli_value=None):
    return Path(cli_value or cfg_value or os.environ.get(OUTPUT_ENV) or "minimaxdnn-out")


def _check_writable(path: Path):
    probe = path
    while not probe.exists():
        probe = probe.parent
    if not os.access(probe, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")


def plan_from_config(cfg):
    arch = cfg.get("architecture", "auto")
    return StudyPlan(
        instance=cfg["instance"],
        ns=tuple(cfg["n_grid"]),
        seeds=tuple(cfg["seeds"]),
        cfg=TrainConfig(**cfg.get("train", {})),
        candidates=tuple(cfg.get("dropout_candidates", [0.0, 0.1, 0.2])),
        n_test=int(cfg.get("n_test", 100_000)),
        base_seed=int(cfg.get("base_seed", 0)),
        arch=None if arch == "auto" else arch,
    )


def manifest(cfg, study, threads):
    return {
        "config_sha256": config_hash(cfg),
        "config": cfg,
        "cell_seeds": [{"n": c.n, "replicate": c.replicate, "seed": c.seed} for c in
                       sorted(study.cells, key=lambda c: (c.n, c.replicate))],
        "seed_mixing": MIXING_FUNCTION,
        "versions": {"minimaxdnn": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "backend": kernels.BACKEND,
        "threads": threads,
    }


def _error_table(errors):
    lines = ["n\td\treplicate\terror"]
    lines += [f"{e.n}\t{e.d}\t{e.replicate}\t{e.message}" for e in errors]
    return "\n".join(lines)


def run_study(cfg, out: Path, threads=1):
    """Run a validated config and write results; returns the exit status."""
    plan = plan_from_config(cfg)
    study = rate_study(plan, threads=threads, eps=cfg.get("eps"))
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", study.rows(), CSV_COLUMNS)
    models = out / "models"
    models.mkdir(exist_ok=True)
    for c in study.cells:
        (models / f"model_n{c.n}_r{c.replicate}.json").write_text(json.dumps(c.model, sort_keys=True))
    th = study.theory
    summary = {
        "medians": {str(k): v for k, v in study.medians().items()},
        "inversions": study.inversions(),
        "fit": asdict(study.fit) if study.fit else None,
        "theory": {k: v for k, v in asdict(th).items()} if th else None,
        "exponents": asdict(study.exps),
        "cells": [{k: v for k, v in asdict(c).items() if k != "model"} for c in study.cells],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, study, threads), indent=2, sort_keys=True))
    if th is not None:
        print(f"slope={_fmt(th.slope)} s0={th.s0:.4f} D1={_fmt(th.D1)} D2={_fmt(th.D2)} verdict={th.verdict}")
    print(f"wrote {out / 'results.csv'}")
    if study.errors:
        (out / "errors.tsv").write_text(_error_table(study.errors) + "\n")
        print(_error_table(study.errors), file=sys.stderr)
        return 1
    return 0


# --- subcommands ----------------------------------------------------------------

def _instance_desc(args):
    if getattr(args, "instance", None):
        src = args.instance
        text = Path(src).read_text() if Path(src).is_file() else src
        try:
            desc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--instance: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    else:
        desc = {"family": args.family, "d": args.d}
    if desc.get("family") == "hard" and "nu" not in desc and "n" not in desc:
        desc["n"] = getattr(args, "n", None) or 10_000
    return desc


def _add_instance_args(p):
    p.add_argument("--family", default="gam-linear")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--instance", help="JSON description (inline or file) overriding --family/--d")


def cmd_gen(args):
    inst = load_instance(_instance_desc(args))
    data = sample_dataset(inst, args.n, args.seed)
    data.to_csv(args.out)
    print(f"wrote {len(data)} samples to {args.out}")
    return 0


def _exps_from_args(args):
    if args.s0 is not None:
        s1 = args.s1 if args.s1 is not None else args.s0
        return RateExponents(s0=args.s0, s1=s1, u_star=0, beta_star=()), NoiseProfile(args.alpha, args.C_d)
    inst = load_instance(_instance_desc(args))
    return rate_exponents(inst.spec, inst.noise.alpha), inst.noise


def cmd_size(args):
    exps, noise = _exps_from_args(args)
    rows = []
    for n in args.n:
        arch, feasible = size_architecture(n, args.d, exps, noise)
        rows.append({"n": n, "d": args.d, **arch.to_dict(), "feasible": feasible})
    print(json.dumps(rows if len(rows) > 1 else rows[0]))
    return 0


def _arch_from_args(args, n, d):
    if args.arch:
        return NetworkArch.from_dict(json.loads(Path(args.arch).read_text()))
    if args.L is not None:
        if args.width is None or args.s is None or args.B is None:
            raise ConfigError("--L needs --width, --s and --B")
        return NetworkArch.uniform(d, args.L, args.width, args.s, args.B)
    inst = load_instance(_instance_desc(args))
    arch, _ = size_architecture(n, d, rate_exponents(inst.spec, inst.noise.alpha), inst.noise)
    return arch


def _train_cfg(args):
    kw = {f.name: getattr(args, f.name) for f in fields(TrainConfig)
          if getattr(args, f.name, None) is not None}
    return TrainConfig(**kw)


def cmd_train(args):
    data = Dataset.from_csv(args.data)
    arch = _arch_from_args(args, len(data), data.d)
    cfg = _train_cfg(args)
    cands = args.rho if args.rho else [cfg.dropout]
    if len(cands) > 1:
        sel = select_dropout(data, arch, cands, cfg)
        clf, table = sel.classifier, sel.table
    else:
        clf = train_erm(data, arch, TrainConfig(**{**cfg.to_dict(), "dropout": cands[0]}))
        table = [{"rho": cands[0], "test_error": float("nan"), "train_risk": clf.final_risk,
                  "degenerate": bool(np.all(clf.net(data.X) == 0))}]
    model = {"network": clf.net.to_dict(), "rho_hat": clf.rho, "refit": clf.refit, "n_train": len(data),
             "final_risk": clf.final_risk, "epochs_run": clf.epochs_run, "train_config": cfg.to_dict()}
    Path(args.model).write_text(json.dumps(model, sort_keys=True))
    if args.table:
        write_csv(args.table, table, ["rho", "test_error", "train_risk", "degenerate"])
    _print_csv(table, ["rho", "test_error", "train_risk", "degenerate"])
    return 0


def cmd_evaluate(args):
    model = json.loads(Path(args.model).read_text())
    net = SparseNetwork.from_dict(model.get("network", model))
    inst = load_instance(_instance_desc(args))
    est = mc_excess_risk(net, inst, args.n_test, args.seed)
    n = int(model.get("n_train", 0))
    exps = rate_exponents(inst.spec, inst.noise.alpha)
    lo = up = float("nan")
    if n >= 2 and inst.d >= 2:
        lo = lower_bound_rate(n, inst.d, inst.noise.C_d, exps.s0, args.D1)
        up = upper_bound_rate(n, inst.d, inst.noise.C_d, exps.s0, args.D2)
    row = {"n": n, "d": inst.d, "seed": args.seed, "excess_risk": est.estimate, "std_error": est.std_error,
           "theory_lower": lo, "theory_upper": up, "slope_fit": float("nan")}
    if args.out:
        write_csv(args.out, [row], CSV_COLUMNS)
    _print_csv([row], CSV_COLUMNS)
    return 0


def cmd_bounds(args):
    if (args.logd is None) == (args.d is None):
        raise ConfigError("give exactly one of --logd or --d")
    rows = []
    for n in args.n:
        for ld in (args.logd or [math.log(d) for d in args.d]):
            row = {"n": n, "log_d": ld,
                   "lower": lower_bound_rate(n, None, args.C_d, args.s0, args.D1, log_d=ld),
                   "upper": upper_bound_rate(n, None, args.C_d, args.s0, args.D2, log_d=ld)}
            rows.append(row)
    cols = ["n", "log_d", "lower", "upper"]
    if args.covering:
        L, p_max, d, s, B, ups = args.covering
        print(f"covering_bound={_fmt(covering_bound(int(L), int(p_max), int(d), int(s), B, ups))}")
    _print_csv(rows, cols)
    return 0


def cmd_verify_margin(args):
    desc = _instance_desc(args)
    if desc.get("family") == "hard":
        desc.setdefault("alpha", args.alpha)
        desc.setdefault("C_d", args.C_d)
        desc.setdefault("beta_star", args.beta_star)
        desc.setdefault("t_star", args.t_star)
    inst = load_instance(desc)
    alpha = args.alpha if args.alpha is not None else inst.noise.alpha
    C_d = args.C_d if args.C_d is not None else inst.noise.C_d
    if args.t_grid:
        t = np.asarray(args.t_grid, dtype=np.float64)
    else:
        t = np.linspace(0.01, 0.49, 10) if desc.get("family") == "hard" else np.geomspace(1e-3, 0.2, 10)
    if desc.get("family") == "hard":
        rows = verify_margin(inst, alpha, C_d, t, args.n_mc, args.seed).table()
    else:
        p, se = margin_probabilities(inst, t, args.n_mc, args.seed)
        rows = []
        for ti, pi, si in zip(t, p, se):
            bound = C_d * ti ** alpha
            ok = pi <= bound + 3 * si
            rows.append({"t": float(ti), "p_hat": float(pi), "std_error": float(si), "bound": float(bound),
                         "pass": bool(ok), "verdict": "PASS" if ok else "FLAG"})
    cols = ["t", "p_hat", "std_error", "bound", "verdict"]
    _print_csv(rows, cols)
    print("overall:", "PASS" if all(r["pass"] for r in rows) else "FLAG")
    return 0


def _threads(args):
    return 1 if args.deterministic else max(1, args.threads)


def cmd_run(args):
    cfg = load_config(args.config)
    out = output_dir(cfg.get("output_dir"), args.output_dir)
    _check_writable(out)
    return run_study(cfg, out, _threads(args))


def cmd_rate_study(args):
    if args.config:
        return cmd_run(args)
    cfg = {
        "instance": _instance_desc(args),
        "n_grid": args.n,
        "seeds": args.seeds,
        "base_seed": args.base_seed,
        "architecture": "auto",
        "dropout_candidates": args.rho,
        "n_test": args.n_test,
    }
    train = {k: getattr(args, k) for k in _TRAIN_PROPS if getattr(args, k, None) is not None}
    if train:
        cfg["train"] = train
    if args.eps is not None:
        cfg["eps"] = args.eps
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = list(validator.iter_errors(cfg))
    if errs:
        raise ConfigError("\n".join(f"field '{'/'.join(map(str, e.path)) or '<root>'}': {e.message}" for e in errs))
    out = output_dir(None, args.output_dir)
    _check_writable(out)
    return run_study(cfg, out, _threads(args))


def _add_train_args(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--step-decay", dest="step_decay", type=float)
    p.add_argument("--projection-period", dest="projection_period", type=int)
    p.add_argument("--sparsity-warmup", dest="sparsity_warmup", type=int)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--init-gain", dest="init_gain", type=float)
    p.add_argument("--restarts", type=int)


def _add_run_args(p):
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true", help="force serial execution")
    p.add_argument("--output-dir", help=f"defaults to ${OUTPUT_ENV} or ./minimaxdnn-out")


def build_parser():
    ap = argparse.ArgumentParser(prog="minimaxdnn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a labeled dataset to CSV")
    _add_instance_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("size", help="network class from the sizing rules")
    _add_instance_args(p)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--s0", type=float)
    p.add_argument("--s1", type=float)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--C-d", dest="C_d", type=float, default=1.0)
    p.set_defaults(func=cmd_size)

    p = sub.add_parser("train", help="fit a classifier, optionally selecting the dropout rate")
    _add_instance_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="output model JSON")
    p.add_argument("--table", help="output per-rate CSV")
    p.add_argument("--arch", help="NetworkArch JSON file")
    p.add_argument("--L", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--B", type=float)
    p.add_argument("--rho", type=float, nargs="*", default=[0.0, 0.1, 0.2])
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Monte Carlo excess risk of a saved model")
    _add_instance_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n-test", dest="n_test", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--D1", type=float, default=1.0)
    p.add_argument("--D2", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rate-study", help="multi-n, multi-seed study with rate fit")
    _add_instance_args(p)
    p.add_argument("--config", help="JSON config (same as `run`)")
    p.add_argument("--n", type=int, nargs="+", default=[512, 1024, 2048, 4096, 8192])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--base-seed", dest="base_seed", type=int, default=0)
    p.add_argument("--rho", type=float, nargs="+", default=[0.0, 0.1, 0.2])
    p.add_argument("--n-test", dest="n_test", type=int, default=100_000)
    p.add_argument("--eps", type=float)
    _add_train_args(p)
    _add_run_args(p)
    p.set_defaults(func=cmd_rate_study)

    p = sub.add_parser("bounds", help="lower/upper rate curves as CSV")
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--logd", type=float, nargs="+")
    p.add_argument("--d", type=int, nargs="+")
    p.add_argument("--s0", type=float, required=True)
    p.add_argument("--C-d", dest="C_d", type=float, default=1.0)
    p.add_argument("--D1", type=float, default=1.0)
    p.add_argument("--D2", type=float, default=1.0)
    p.add_argument("--covering", type=float, nargs=6, metavar=("L", "P_MAX", "D", "S", "B", "UPSILON"))
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify-margin", help="Monte Carlo check of the noise condition")
    _add_instance_args(p)
    p.add_argument("--n", type=int, help="sample size used to calibrate a hard instance")
    p.add_argument("--alpha", type=float)
    p.add_argument("--C-d", dest="C_d", type=float)
    p.add_argument("--beta-star", dest="beta_star", type=float, default=1.0)
    p.add_argument("--t-star", dest="t_star", type=int, default=1)
    p.add_argument("--t-grid", dest="t_grid", type=float, nargs="+")
    p.add_argument("--n-mc", dest="n_mc", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_margin)

    p = sub.add_parser("run", help="execute a JSON study config end to end")
    p.add_argument("config")
    _add_run_args(p)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
