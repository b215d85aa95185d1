"""Command-line pipeline: generate | run | ablate | sweep | metrics.

One binary with subcommands sharing a JSON config file and a common flag
set; flags override the config document. Exit codes: 0 on success, 1 on any
configuration or input problem, 2 when a run finished but some folds failed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import psutil

from .config import (
    CliConfig,
    DatasetSection,
    ProtocolSection,
    load_config,
    require,
    section_defaults,
    write_resolved_config,
)
from .data import AugmentPolicy, load_dataset, save_dataset
from .errors import ConfigError, MssdaError
from .harness import (
    PROTOCOLS,
    FoldResult,
    parse_variant,
    protocol_votes,
    run_ablation,
    run_experiment,
    theta_grid,
    threshold_sweep,
    write_metrics_csv,
    write_report_json,
    write_sweep_csv,
)
from .metrics import compute_metrics
from .stage1 import Stage1Config
from .stage2 import Stage2Config
from .stage3 import Stage3Config
from .synthetic import generate_synthetic

DEFAULT_SWEEP = "0.3:0.9:0.1"


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on bad usage; we reserve 2 for
    partial run failures, so usage problems raise the code-1 error class."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _epilog() -> str:
    return "\n".join([
        "config sections and their defaults (JSON):",
        f"  dataset:    path=None, {section_defaults(DatasetSection, skip=('path',))}",
        f"  stage1:     {section_defaults(Stage1Config, skip=('augment',))}",
        f"  stage1.augment: {section_defaults(AugmentPolicy)}",
        f"  stage2:     {section_defaults(Stage2Config)}",
        f"  stage3:     {section_defaults(Stage3Config)}",
        f"  protocol:   {section_defaults(ProtocolSection)}",
        "  ablation:   variants=None (meaning the full comparison grid), n_single=3",
        "  seeds:      [0]",
        "  output_dir: None (must come from the config or --out)",
        "",
        "exit codes: 0 ok; 1 config/input error; 2 run completed with failed folds",
    ])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON config file (strict schema; defaults apply "
                             "for anything omitted)")
    common.add_argument("--data", metavar="DIR",
                        help="dataset directory (run/ablate/sweep) or a "
                             "report.json / run output directory (metrics)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N",
                        help="replace the config's seed list with [N] "
                             "(generate: the generator seed)")
    common.add_argument("--workers", type=int, metavar="N",
                        help="max concurrent folds (default: physical cores)")
    common.add_argument("--force", action="store_true",
                        help="allow writing into a non-empty output directory")
    common.add_argument("--protocol", choices=PROTOCOLS,
                        help="override the vote protocol")
    common.add_argument("--variants", metavar="LIST",
                        help="comma-separated variant names for ablate")
    common.add_argument("--sweep", metavar="LO:HI:STEP",
                        help=f"threshold grid for sweep (default {DEFAULT_SWEEP})")

    parser = _Parser(
        prog="mssda",
        description="Cross-subject gait adaptation pipeline: synthetic data "
                    "generation, leave-one-subject-out runs, ablation grids, "
                    "vote-threshold sweeps, and report metrics.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    sub.add_parser("generate", parents=[common],
                   help="write a synthetic dataset directory "
                        "(manifest + CSVs + ground_truth.json)"
                   ).set_defaults(func=cmd_generate)
    sub.add_parser("run", parents=[common],
                   help="full leave-one-subject-out experiment -> report.json"
                   ).set_defaults(func=cmd_run)
    sub.add_parser("ablate", parents=[common],
                   help="run a variant grid over shared folds -> metrics.csv"
                   ).set_defaults(func=cmd_ablate)
    sub.add_parser("sweep", parents=[common],
                   help="re-vote at a threshold grid -> sweep.csv"
                   ).set_defaults(func=cmd_sweep)
    sub.add_parser("metrics", parents=[common],
                   help="recompute metrics from a stored report"
                   ).set_defaults(func=cmd_metrics)
    return parser


# -- shared plumbing --------------------------------------------------------------


def _resolve_out(args, cfg: CliConfig) -> Path:
    return Path(require(args.out or cfg.output_dir, "output_dir"))


def _apply_overrides(cfg: CliConfig, args) -> CliConfig:
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.protocol:
        cfg.protocol.protocol = args.protocol
    return cfg


def _load_data(args, cfg: CliConfig):
    path = require(args.data or cfg.dataset.path, "dataset.path")
    return load_dataset(path)


def _workers(args) -> int:
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        return args.workers
    return psutil.cpu_count(logical=False) or 1


def _print_row(label: str, mean: dict) -> None:
    print(f"{label}: accuracy={mean['accuracy']:.4f} "
          f"precision={mean['precision']:.4f} recall={mean['recall']:.4f} "
          f"specificity={mean['specificity']:.4f} f1={mean['f1']:.4f}")


def _failure_total(runs) -> int:
    return sum(len(r.failures) for r in runs)


# -- subcommands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.dataset.seed = args.seed
    out = _resolve_out(args, cfg)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(
            f"output directory {out} is not empty; pass --force to overwrite")
    dataset, truth = generate_synthetic(cfg.dataset.to_spec())
    save_dataset(dataset, out, ground_truth=truth)
    write_resolved_config(out, cfg)
    print(f"wrote {len(dataset.subjects)} subjects "
          f"({cfg.dataset.samples_per_subject} samples each, "
          f"{cfg.dataset.n_latent_domains} latent domains) to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    dataset = _load_data(args, cfg)
    out = _resolve_out(args, cfg)
    write_resolved_config(out, cfg)
    report = run_experiment(dataset, cfg.protocol_config(),
                            cache_dir=out / "cache", workers=_workers(args),
                            artifacts_dir=out / "folds")
    write_report_json(out / "report.json", report.to_dict())
    write_metrics_csv(out / "metrics.csv",
                      [{"variant": cfg.stage3.ablation, **report.mean}])
    for run in report.runs:
        _print_row(f"seed {run.seed}", run.metrics.to_dict())
    _print_row("mean", report.mean)
    failures = _failure_total(report.runs)
    if failures:
        print(f"warning: {failures} fold(s) failed; see report.json",
              file=sys.stderr)
        return 2
    return 0


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if args.variants:
        names = [s.strip() for s in args.variants.split(",") if s.strip()]
        if not names:
            raise ConfigError("--variants parsed to an empty list")
    else:
        names = cfg.ablation.resolve()
    for name in names:
        parse_variant(name)  # fail fast, before any training
    dataset = _load_data(args, cfg)
    out = _resolve_out(args, cfg)
    write_resolved_config(out, cfg)
    report = run_ablation(dataset, cfg.protocol_config(), names,
                          cache_dir=out / "cache", workers=_workers(args),
                          artifacts_dir=out / "folds")
    write_report_json(out / "report.json", report.to_dict())
    write_metrics_csv(out / "metrics.csv", report.table())
    for row in report.table():
        _print_row(row["variant"], row)
    failures = sum(_failure_total(exp.runs) for exp in report.outcomes.values())
    if failures:
        print(f"warning: {failures} fold(s) failed; see report.json",
              file=sys.stderr)
        return 2
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    grid = parse_sweep(args.sweep or DEFAULT_SWEEP)
    dataset = _load_data(args, cfg)
    out = _resolve_out(args, cfg)
    write_resolved_config(out, cfg)
    report = run_experiment(dataset, cfg.protocol_config(),
                            cache_dir=out / "cache", workers=_workers(args),
                            artifacts_dir=out / "folds")
    rows = threshold_sweep(report.runs, grid)
    write_report_json(out / "report.json", report.to_dict())
    write_sweep_csv(out / "sweep.csv", rows)
    for row in rows:
        print(f"theta={row['theta']:.3f}: accuracy={row['accuracy']:.4f} "
              f"positive_votes={row['positive_votes']}")
    if _failure_total(report.runs):
        return 2
    return 0


def cmd_metrics(args) -> int:
    if not args.data:
        raise ConfigError(
            "metrics needs --data pointing at a report.json or a run "
            "output directory")
    path = Path(args.data)
    if path.is_dir():
        path = path / "report.json"
    if not path.is_file():
        raise ConfigError(f"report not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if isinstance(doc, dict) and "runs" in doc:
        run_docs = doc["runs"]
    elif isinstance(doc, dict) and "folds" in doc:
        run_docs = [doc]
    else:
        raise ConfigError(f"{path}: not a recognizable report document")
    rows = []
    try:
        for run_doc in run_docs:
            folds = [FoldResult(**fd) for fd in run_doc["folds"]]
            protocol = args.protocol or run_doc["protocol"]
            preds, trues = protocol_votes(folds, protocol, run_doc["theta"],
                                          run_doc["segment_len"])
            m = compute_metrics(preds, trues)
            rows.append({"variant": f"seed{run_doc['seed']}", **m.to_dict()})
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{path}: malformed report ({e!r})") from e
    for row in rows:
        _print_row(row["variant"], row)
    if args.out:
        write_metrics_csv(Path(args.out) / "metrics.csv", rows)
    return 0


def parse_sweep(text: str) -> list[float]:
    parts = text.split(":")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        parts = []
    if len(parts) != 3:
        raise ConfigError(f"--sweep expects LO:HI:STEP, got {text!r}")
    return theta_grid(lo, hi, step)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except MssdaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
