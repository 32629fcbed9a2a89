"""Command-line entry point: ``popgcn {synth,run,audit,metrics,validate}``.

Settings resolve in the order defaults < config file < environment < flags.
The config file is TOML; top-level ``out``, ``threads`` and ``seed`` apply to
every subcommand, and a table named after the subcommand holds its own keys::

    seed = 7

    [synth]
    subjects = 82
    informativeness = 0.8

    [run]
    repeats = 10
    models = ["gnn2", "nn2"]

    [run.overrides.gnn2]
    epochs = 100

Environment: POPGCN_OUT_DIR (output directory) and POPGCN_THREADS (workers).
Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .core import PopGCNError
from .data_io import LoadError, SyntheticConfig, generate_synthetic_cohort, hash_config, load_cohort, save_cohort, write_report
from .pipeline import AuditConfig, ExperimentConfig, run_audit, run_experiment, run_graph_metrics
from .reporting import write_plots, write_tables

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# flag name -> SyntheticConfig field
SYNTH_FIELDS = {
    "subjects": "n_subjects", "improvers": "label_positive_count", "n_roi": "n_roi",
    "communities": "n_communities", "informativeness": "phenotype_label_informativeness",
    "noise_sd": "noise_sd", "within_mean": "within_block_mean", "within_sd": "within_block_sd",
    "across_mean": "across_block_mean", "across_sd": "across_block_sd",
}


# settings reachable only through the config file
FILE_ONLY_KEYS = {
    "run": {"models", "overrides", "stratify", "include_scanner"},
    "audit": {"include_scanner"},
    "metrics": {"include_scanner"},
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popgcn", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True, cohort=True):
        sp.add_argument("--config", type=Path, help="TOML settings file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="worker count (default: logical cores)")
        if out:
            sp.add_argument("--out", type=Path, help="output directory (env POPGCN_OUT_DIR)")
        if cohort:
            sp.add_argument("--cohort", type=Path, required=True, help="cohort directory or phenotypes.csv")
        sp.add_argument("--record-timings", action="store_true", default=None,
                        help="add wall-clock timings (reports are then no longer byte-reproducible)")

    sp = sub.add_parser("synth", help="generate and save a synthetic cohort")
    common(sp, cohort=False)
    sp.add_argument("--subjects", type=int)
    sp.add_argument("--improvers", type=int)
    sp.add_argument("--n-roi", type=int)
    sp.add_argument("--communities", type=int)
    sp.add_argument("--informativeness", type=float)
    sp.add_argument("--noise-sd", type=float)
    sp.add_argument("--within-mean", type=float)
    sp.add_argument("--within-sd", type=float)
    sp.add_argument("--across-mean", type=float)
    sp.add_argument("--across-sd", type=float)
    sp.add_argument("--no-scanner", action="store_true", default=None, help="omit the scanner phenotype")
    sp.add_argument("--force", action="store_true", default=None, help="overwrite a non-empty output directory")

    sp = sub.add_parser("run", help="cross-validated experiment over six views plus baselines")
    common(sp)
    sp.add_argument("--model", action="append", choices=("gnn2", "nn1", "nn2"),
                    help="model kind, repeatable (default: all three)")
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--k", type=int, help="spectral embedding dimension")
    sp.add_argument("--skip-trivial", action="store_true", default=None)
    sp.add_argument("--softness", type=float, help="similarity factor for a categorical mismatch")
    sp.add_argument("--rule", choices=("dominance", "metric"))
    sp.add_argument("--no-audit", action="store_true", default=None)
    sp.add_argument("--set", action="append", default=[], metavar="KIND.FIELD=VALUE",
                    help="training override, e.g. gnn2.epochs=100 (value parsed as JSON)")
    sp.add_argument("--emit-tables", action="store_true", default=None)
    sp.add_argument("--emit-plots", action="store_true", default=None)

    sp = sub.add_parser("audit", help="triad violations before and after propagation")
    common(sp)
    sp.add_argument("--rule", choices=("dominance", "metric"))
    sp.add_argument("--depth", type=int)
    sp.add_argument("--raw-weights", action="store_true", default=None,
                    help="smooth with the raw similarity matrix instead of row-normalized weights")
    sp.add_argument("--softness", type=float)
    sp.add_argument("--emit-tables", action="store_true", default=None)
    sp.add_argument("--emit-plots", action="store_true", default=None)

    sp = sub.add_parser("metrics", help="population-graph structure against random and lattice references")
    common(sp)
    sp.add_argument("--softness", type=float)
    sp.add_argument("--emit-tables", action="store_true", default=None)

    sp = sub.add_parser("validate", help="load a cohort and check every invariant")
    common(sp, out=False)
    return p


def _settings(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < environment < flags into one flat dict."""
    merged: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        try:
            doc = tomllib.loads(args.config.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
        top = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        section = doc.get(args.command, {})
        allowed = set(vars(args)) | FILE_ONLY_KEYS.get(args.command, set())
        unknown = sorted(set(top) - {"out", "threads", "seed"}) + sorted(set(section) - allowed)
        if unknown:
            raise UsageError(f"{args.config}: unknown setting(s) {unknown}")
        merged.update(top)
        merged.update(section)
    if os.environ.get("POPGCN_OUT_DIR"):
        merged["out"] = os.environ["POPGCN_OUT_DIR"]
    if os.environ.get("POPGCN_THREADS"):
        try:
            merged["threads"] = int(os.environ["POPGCN_THREADS"])
        except ValueError:
            raise UsageError("POPGCN_THREADS must be an integer") from None
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None or v == []:
            continue
        merged[k] = v
    merged.setdefault("threads", os.cpu_count() or 1)
    if int(merged["threads"]) < 1:
        raise UsageError("threads must be >= 1")
    return merged


def _out_dir(s: dict) -> Path:
    if not s.get("out"):
        raise UsageError("an output directory is required (--out or POPGCN_OUT_DIR)")
    return Path(s["out"])


def _load(s: dict):
    path = Path(s["cohort"])
    if not path.exists():
        raise UsageError(f"cohort not found: {path}")
    return load_cohort(path)


def _emit(doc: dict, out: Path, name: str, s: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    path = write_report(doc, out / name)
    print(f"wrote {path}")
    if s.get("emit_tables"):
        for p in write_tables(doc, out):
            print(f"wrote {p}")
    if s.get("emit_plots"):
        for p in write_plots(doc, out):
            print(f"wrote {p}")


def cmd_synth(s: dict) -> int:
    out = _out_dir(s)
    kw = {field: s[flag] for flag, field in SYNTH_FIELDS.items() if flag in s}
    if "seed" in s:
        kw["seed"] = s["seed"]
    if s.get("no_scanner"):
        kw["include_scanner"] = False
    config = SyntheticConfig(**kw)
    t0 = time.perf_counter()
    cohort = generate_synthetic_cohort(config)
    try:
        save_cohort(cohort, out, force=bool(s.get("force")))
    except FileExistsError as exc:
        raise UsageError(str(exc)) from None
    cfg = config.to_dict()
    doc = {"config": cfg, "config_hash": hash_config(cfg),
           "cohort": {"n_subjects": len(cohort), "n_roi": cohort.n_roi,
                      "n_improvers": int(cohort.labels.sum())}}
    if s.get("record_timings"):
        doc["timings"] = {"total_s": time.perf_counter() - t0}
    write_report(doc, out / "synth_report.json")
    print(f"wrote {len(cohort)} subjects ({int(cohort.labels.sum())} improvers, "
          f"{cohort.n_roi} ROIs, 6 views) to {out}")
    return EXIT_OK


def _overrides(s: dict) -> dict:
    over = {k: dict(v) for k, v in s.get("overrides", {}).items()}
    for item in s.get("set", []):
        key, sep, raw = item.partition("=")
        kind, dot, field = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects KIND.FIELD=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        over.setdefault(kind, {})[field] = value
    return over


def cmd_run(s: dict) -> int:
    out = _out_dir(s)
    kw = {}
    for flag, field in (("repeats", "repeats"), ("folds", "folds"), ("k", "k"), ("seed", "seed"),
                        ("skip_trivial", "skip_trivial"), ("softness", "categorical_softness"),
                        ("rule", "audit_rule"), ("stratify", "stratify"), ("include_scanner", "include_scanner")):
        if flag in s:
            kw[field] = s[flag]
    models = s.get("model") or s.get("models")
    if models:
        kw["models"] = tuple(dict.fromkeys(models))
    if s.get("no_audit"):
        kw["audit"] = False
    kw["overrides"] = _overrides(s)
    try:
        config = ExperimentConfig(**kw)
        for kind in config.models:
            config.train_config(kind)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    cohort = _load(s)

    def progress(kind, r):
        print(f"[{kind}] repeat {r + 1}/{config.repeats}", file=sys.stderr, flush=True)

    doc = run_experiment(cohort, config, workers=int(s["threads"]),
                         record_timings=bool(s.get("record_timings")), progress=progress)
    _emit(doc, out, "report.json", s)
    return EXIT_OK


def cmd_audit(s: dict) -> int:
    out = _out_dir(s)
    kw = {}
    for flag, field in (("rule", "rule"), ("depth", "depth"), ("softness", "categorical_softness"),
                        ("include_scanner", "include_scanner")):
        if flag in s:
            kw[field] = s[flag]
    if s.get("raw_weights"):
        kw["row_normalize"] = False
    config = AuditConfig(**kw)
    cohort = _load(s)
    doc = run_audit(cohort, config, workers=int(s["threads"]), record_timings=bool(s.get("record_timings")))
    _emit(doc, out, "audit.json", s)
    for view, a in doc["audit"]["views"].items():
        print(f"{view:8s} pre {a['pre_rate']:.4f}  post {a['post_rate']:.4f}")
    return EXIT_OK


def cmd_metrics(s: dict) -> int:
    out = _out_dir(s)
    cohort = _load(s)
    doc = run_graph_metrics(cohort, **({"categorical_softness": s["softness"]} if "softness" in s else {}),
                            include_scanner=s.get("include_scanner", True), seed=s.get("seed", 0))
    _emit(doc, out, "graph_metrics.json", s)
    return EXIT_OK


def cmd_validate(s: dict) -> int:
    cohort = _load(s)
    print(f"ok: {len(cohort)} subjects, {cohort.n_roi} ROIs, {int(cohort.labels.sum())} improvers")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "audit": cmd_audit, "metrics": cmd_metrics,
            "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = _settings(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"popgcn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LoadError as exc:
        print(f"popgcn {args.command}: invalid cohort: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PopGCNError as exc:
        # ParameterError and friends raised while building configs are validation failures
        code = EXIT_USAGE if isinstance(exc, ValueError) else EXIT_RUNTIME
        print(f"popgcn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"popgcn {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
