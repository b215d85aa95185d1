"""Leave-one-subject-out experiment orchestration and reporting.

Each fold holds one subject out as the unlabeled target: the shared
extractor pretrains on that fold's source + target samples, the latent
sub-source domains are discovered and assigned, and the selected domains are
adversarially aligned before scoring the held-out subject. Per-sample hard
labels then pass through the configured vote protocol (whole-subject vote or
fixed-length segment votes) and the confusion metrics aggregate over folds.

Two on-disk caches make repeated experiments (ablation grids, re-runs)
cheap, both keyed by dataset digest + held-out subject + config digest:

* stage-1 extractor checkpoints (float32 runs only, since the checkpoint
  format stores float32 and a lossy roundtrip would break re-run
  determinism for float64 nets);
* stage-2 outputs (pseudo-domain labels, cluster centers, target points,
  K*), which downstream stages consume directly, so a cache hit skips
  stages 1 and 2 entirely.

A failing fold is recorded with its error and excluded from the aggregate;
the run carries on and the report lists every failure.
"""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, loso_split, samples_to_array
from .errors import ConfigError, InputError
from .metrics import Metrics, compute_metrics, metrics_from_counts, segment_vote, vote_subject
from .nn import load_checkpoint, save_checkpoint
from .stage1 import Stage1Config, train_stage1
from .stage2 import Stage2Config, run_stage2
from .stage3 import (
    Stage3Config,
    run_stage3,
    write_branch_curves,
    write_selection_json,
)

PROTOCOLS = ("subject_vote", "segment_vote")

RATIO_FIELDS = ("precision", "recall", "specificity", "accuracy", "f1")


@dataclass
class ProtocolConfig:
    """Full experiment description: protocol, vote rule, stage configs, seeds."""

    protocol: str = "subject_vote"
    theta: float = 0.5
    segment_len: int = 11
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stage3: Stage3Config = field(default_factory=Stage3Config)
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise InputError(
                f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if not 0.0 < self.theta <= 1.0:
            raise InputError(f"theta must lie in (0, 1], got {self.theta}")
        if self.segment_len < 1:
            raise InputError(f"segment_len must be >= 1, got {self.segment_len}")
        if not self.seeds:
            raise InputError("seeds list must be nonempty")


@dataclass
class FoldResult:
    held_out: str
    failed: bool = False
    error: Optional[str] = None
    kstar: Optional[int] = None
    selected: Optional[list[int]] = None
    distances: Optional[list[float]] = None
    n_branches: Optional[int] = None
    sample_probs: Optional[list[list[float]]] = None
    sample_preds: Optional[list[int]] = None
    true_labels: Optional[list[int]] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    seed: int
    protocol: str
    theta: float
    segment_len: int
    folds: list[FoldResult]
    metrics: Metrics
    failures: list[str]
    config: dict
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "protocol": self.protocol,
            "theta": self.theta,
            "segment_len": self.segment_len,
            "folds": [f.to_dict() for f in self.folds],
            "metrics": self.metrics.to_dict(),
            "failures": list(self.failures),
            "config": self.config,
            "wall_clock_s": self.wall_clock_s,
        }


# -- hashing and caching -------------------------------------------------------------


def dataset_hash(dataset: Dataset) -> str:
    """Content digest over subjects, labels, and raw sample values."""
    h = hashlib.sha256()
    h.update(f"{dataset.name}|{dataset.time_len}|{dataset.channels}".encode())
    for rec in dataset.subjects:
        h.update(f"|{rec.subject_id}|{rec.class_label}|{len(rec.samples)}".encode())
        for s in rec.samples:
            h.update(np.ascontiguousarray(s.values, dtype=np.float64).tobytes())
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, default=repr).encode()).hexdigest()[:20]


def _stage1_net(split, input_shape, cfg1: Stage1Config, cache_key: Optional[Path]):
    """Train (or load) the fold's shared extractor on source + target samples."""
    cacheable = cache_key is not None and cfg1.dtype == "float32"
    if cacheable and (cache_key / "meta.json").exists():
        return load_checkpoint(cache_key, dtype=np.float32)
    net, _losses = train_stage1(list(split.source) + list(split.target),
                                input_shape, cfg1)
    if cacheable:
        save_checkpoint(net, cache_key)
    return net


def _fold_stage2(split, input_shape, cfg1: Stage1Config, cfg2: Stage2Config,
                 cache_dir: Optional[Path], ds_hash: str, held_out: str):
    """Pseudo-domain labels, centers, target points, K* for one fold."""
    key = _digest([ds_hash, held_out, asdict(cfg1), asdict(cfg2)])
    npz_path = cache_dir / "stage2" / f"{key}.npz" if cache_dir else None
    if npz_path is not None and npz_path.exists():
        with np.load(npz_path) as z:
            return (z["labels"], z["centers2d"], z["target_points2d"],
                    int(z["kstar"]))
    s1_key = (cache_dir / "stage1" / _digest([ds_hash, held_out, asdict(cfg1)])
              if cache_dir else None)
    net = _stage1_net(split, input_shape, cfg1, s1_key)
    dtype = np.float32 if cfg1.dtype == "float32" else np.float64
    source_x = samples_to_array(split.source).astype(dtype)
    target_x = samples_to_array(split.target).astype(dtype)
    res = run_stage2(net, source_x, target_x, cfg2)
    out = (res.assignment.labels, res.centers2d, res.target_points2d, res.kstar)
    if npz_path is not None:
        npz_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = npz_path.with_suffix(".tmp.npz")
        np.savez(tmp, labels=out[0], centers2d=out[1], target_points2d=out[2],
                 kstar=out[3])
        tmp.replace(npz_path)
    return out


# -- single fold ----------------------------------------------------------------------


def run_fold(dataset: Dataset, held_out: str, cfg: ProtocolConfig, seed: int,
             cache_dir: Optional[str | Path] = None,
             artifacts_dir: Optional[str | Path] = None,
             ds_hash: Optional[str] = None) -> FoldResult:
    """Run stages 1-3 for one held-out subject; never raises on stage failure."""
    cache_dir = Path(cache_dir) if cache_dir else None
    try:
        split = loso_split(dataset, held_out)
        input_shape = (dataset.channels, dataset.time_len)
        cfg1 = replace(cfg.stage1, seed=seed)
        cfg2 = replace(cfg.stage2, seed=seed)
        cfg3 = replace(cfg.stage3, seed=seed)
        if ds_hash is None:
            ds_hash = dataset_hash(dataset)
        labels, centers2d, target_points2d, kstar = _fold_stage2(
            split, input_shape, cfg1, cfg2, cache_dir, ds_hash, held_out)
        res3 = run_stage3(split.source, labels, split.target, centers2d,
                          target_points2d, cfg3)
        if artifacts_dir is not None:
            fold_dir = Path(artifacts_dir) / f"fold_{held_out}"
            write_selection_json(fold_dir / "selection.json", res3.selection)
            write_branch_curves(fold_dir, res3.branches, res3.curves)
        return FoldResult(
            held_out=held_out,
            kstar=kstar,
            selected=list(res3.selection.selected),
            distances=[float(v) for v in res3.selection.distances],
            n_branches=len(res3.branches),
            sample_probs=[[float(v) for v in row] for row in res3.target_probs],
            sample_preds=[int(v) for v in res3.target_labels],
            true_labels=[int(v) for v in split.target_labels],
        )
    except Exception as e:  # noqa: BLE001 - a fold failure must not kill the run
        return FoldResult(held_out=held_out, failed=True,
                          error=f"{type(e).__name__}: {e}")


def protocol_votes(folds: Sequence[FoldResult], protocol: str, theta: float,
                 segment_len: int) -> tuple[list[int], list[int]]:
    """Protocol-level (predictions, truths) over all successful folds."""
    preds: list[int] = []
    trues: list[int] = []
    for f in folds:
        if f.failed:
            continue
        if protocol == "subject_vote":
            preds.append(vote_subject(f.sample_preds, theta))
            trues.append(vote_subject(f.true_labels, 0.5))
        else:
            preds.extend(segment_vote(f.sample_preds, segment_len, theta))
            trues.extend(segment_vote(f.true_labels, segment_len, 0.5))
    return preds, trues


# -- full LOSO run ---------------------------------------------------------------------


def run_loso(dataset: Dataset, cfg: ProtocolConfig, seed: int,
             cache_dir: Optional[str | Path] = None, workers: int = 1,
             artifacts_dir: Optional[str | Path] = None) -> RunReport:
    """One complete leave-one-subject-out pass at a single seed."""
    if len(dataset.subjects) < 2:
        raise InputError("run_loso needs >= 2 subjects")
    t0 = time.perf_counter()
    ds_hash = dataset_hash(dataset)
    subject_ids = [rec.subject_id for rec in dataset.subjects]
    if artifacts_dir is not None:
        artifacts_dir = Path(artifacts_dir) / f"seed{seed}"
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_fold, dataset, sid, cfg, seed,
                                   cache_dir, artifacts_dir, ds_hash)
                       for sid in subject_ids]
            folds = [f.result() for f in futures]
    else:
        folds = [run_fold(dataset, sid, cfg, seed, cache_dir, artifacts_dir, ds_hash)
                 for sid in subject_ids]

    preds, trues = protocol_votes(folds, cfg.protocol, cfg.theta, cfg.segment_len)
    metrics = compute_metrics(preds, trues)
    failures = [f"{f.held_out}: {f.error}" for f in folds if f.failed]
    return RunReport(seed=seed, protocol=cfg.protocol, theta=cfg.theta,
                     segment_len=cfg.segment_len, folds=folds, metrics=metrics,
                     failures=failures, config=asdict(cfg),
                     wall_clock_s=time.perf_counter() - t0)


@dataclass
class ExperimentReport:
    """One run per seed plus seed-averaged ratios."""

    runs: list[RunReport]
    mean: dict[str, float]
    per_seed_accuracy: list[float]
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {
            "runs": [r.to_dict() for r in self.runs],
            "mean": self.mean,
            "per_seed_accuracy": self.per_seed_accuracy,
            "wall_clock_s": self.wall_clock_s,
        }


def _mean_ratios(runs: Sequence[RunReport]) -> dict[str, float]:
    return {name: float(np.mean([getattr(r.metrics, name) for r in runs]))
            for name in RATIO_FIELDS}


def run_experiment(dataset: Dataset, cfg: ProtocolConfig,
                   cache_dir: Optional[str | Path] = None, workers: int = 1,
                   artifacts_dir: Optional[str | Path] = None) -> ExperimentReport:
    """run_loso once per configured seed; aggregates seed-mean ratios."""
    t0 = time.perf_counter()
    runs = [run_loso(dataset, cfg, seed, cache_dir=cache_dir, workers=workers,
                     artifacts_dir=artifacts_dir)
            for seed in cfg.seeds]
    return ExperimentReport(runs=runs, mean=_mean_ratios(runs),
                            per_seed_accuracy=[r.metrics.accuracy for r in runs],
                            wall_clock_s=time.perf_counter() - t0)


# -- ablation grid ---------------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    """A named stage-3 configuration override used by ablation grids."""

    name: str
    ablation: str
    strategy: Optional[str] = None
    m: Optional[int] = None
    alpha: Optional[float] = None

    def apply(self, cfg3: Stage3Config) -> Stage3Config:
        kw: dict = {"ablation": self.ablation}
        if self.strategy is not None:
            kw["strategy"] = self.strategy
        if self.m is not None:
            kw["m"] = self.m
        if self.alpha is not None:
            kw["alpha"] = self.alpha
        return replace(cfg3, **kw)


_FIXED_VARIANTS = {
    "mssda": Variant("mssda", "mssda"),
    "sa_selected": Variant("sa_selected", "sa_selected"),
    "sa_all": Variant("sa_all", "sa_all"),
    "ma_all": Variant("ma_all", "ma_all"),
    "erm": Variant("erm", "sa_all", alpha=0.0),
}


def parse_variant(name: str) -> Variant:
    """Resolve a variant name.

    Fixed names: mssda, sa_selected, sa_all, ma_all, erm (= sa_all with the
    adversarial term off). Patterns: top<N>_min_dis / top<N>_min_sum (select
    the N nearest sub-source domains under the max / sum distance rule) and
    single_subsource:<k> (train on sub-source domain k alone).
    """
    if name in _FIXED_VARIANTS:
        return _FIXED_VARIANTS[name]
    if name.startswith("top") and ("_min_dis" in name or "_min_sum" in name):
        head, _, tail = name.partition("_min_")
        try:
            n = int(head[3:])
        except ValueError:
            n = 0
        if n >= 1 and tail in ("dis", "sum"):
            return Variant(name, "mssda",
                           strategy="max_dis" if tail == "dis" else "sum_dis", m=n)
    if name.startswith("single_subsource:"):
        try:
            k = int(name.split(":", 1)[1])
        except ValueError:
            k = -1
        if k >= 0:
            return Variant(name, name)
    raise ConfigError(
        f"unknown variant {name!r}; valid: {sorted(_FIXED_VARIANTS)}, "
        f"top<N>_min_dis, top<N>_min_sum, single_subsource:<k>")


def default_variant_grid(n_single: int = 3) -> list[str]:
    """The comparison grid: alignment-space x selection axes, distance-rule
    top-1/2/3 rows, and one single-domain row per sub-source index."""
    names = ["mssda", "sa_selected", "sa_all", "ma_all"]
    names += [f"top{n}_min_dis" for n in (1, 2, 3)]
    names += [f"top{n}_min_sum" for n in (1, 2, 3)]
    names += [f"single_subsource:{k}" for k in range(n_single)]
    return names


@dataclass
class AblationReport:
    variants: list[str]
    outcomes: dict[str, ExperimentReport]
    seeds: list[int]
    wall_clock_s: float

    def table(self) -> list[dict]:
        """One row per variant: seed-mean ratios plus per-seed accuracy."""
        rows = []
        for name in self.variants:
            rep = self.outcomes[name]
            row = {"variant": name, **rep.mean,
                   "per_seed_accuracy": rep.per_seed_accuracy}
            rows.append(row)
        return rows

    def to_dict(self) -> dict:
        return {
            "variants": list(self.variants),
            "seeds": list(self.seeds),
            "outcomes": {k: v.to_dict() for k, v in self.outcomes.items()},
            "table": self.table(),
            "wall_clock_s": self.wall_clock_s,
        }


def run_ablation(dataset: Dataset, cfg: ProtocolConfig, variants: Sequence[str],
                 cache_dir: Optional[str | Path] = None, workers: int = 1,
                 artifacts_dir: Optional[str | Path] = None) -> AblationReport:
    """Run every variant over the same folds and seeds.

    Variants share the stage-1/stage-2 cache (those stages do not depend on
    the stage-3 override), so only alignment training repeats per variant.
    """
    if not variants:
        raise ConfigError("run_ablation: empty variant list")
    parsed = [parse_variant(name) for name in variants]
    if len({v.name for v in parsed}) != len(parsed):
        raise ConfigError(f"duplicate variant names in {list(variants)}")
    t0 = time.perf_counter()
    outcomes: dict[str, ExperimentReport] = {}
    for var in parsed:
        var_cfg = replace(cfg, stage3=var.apply(cfg.stage3))
        var_art = Path(artifacts_dir) / var.name if artifacts_dir else None
        outcomes[var.name] = run_experiment(dataset, var_cfg, cache_dir=cache_dir,
                                            workers=workers, artifacts_dir=var_art)
    return AblationReport(variants=[v.name for v in parsed], outcomes=outcomes,
                          seeds=list(cfg.seeds),
                          wall_clock_s=time.perf_counter() - t0)


# -- threshold sweep -------------------------------------------------------------------


def threshold_sweep(runs: Sequence[RunReport] | RunReport,
                    thetas: Sequence[float]) -> list[dict]:
    """Re-apply the vote protocol at each theta on stored per-sample labels.

    No retraining: each run's recorded sample predictions are re-voted.
    Returns one row per theta with the seed-mean accuracy and the total
    count of positive-voted units (monotone non-increasing in theta).
    """
    if isinstance(runs, RunReport):
        runs = [runs]
    if not runs:
        raise InputError("threshold_sweep: no runs")
    rows = []
    for theta in thetas:
        accs = []
        positives = 0
        for run in runs:
            preds, trues = protocol_votes(run.folds, run.protocol, theta,
                                        run.segment_len)
            accs.append(compute_metrics(preds, trues).accuracy)
            positives += int(np.sum(preds))
        rows.append({"theta": float(theta), "accuracy": float(np.mean(accs)),
                     "positive_votes": positives})
    return rows


def theta_grid(lo: float, hi: float, step: float) -> list[float]:
    """Inclusive grid lo, lo+step, ..., hi (within half-step tolerance)."""
    if step <= 0:
        raise InputError(f"step must be > 0, got {step}")
    if hi < lo:
        raise InputError(f"empty grid: hi {hi} < lo {lo}")
    n = int(round((hi - lo) / step)) + 1
    grid = [lo + i * step for i in range(n)]
    return [round(t, 12) for t in grid if t <= hi + step / 2]


# -- report files ----------------------------------------------------------------------


def strip_wall_clock(obj):
    """Deep-copy JSON-ish structure with every wall-clock field removed."""
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if k != "wall_clock_s"}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


def report_body_bytes(report_dict: dict) -> bytes:
    """Canonical bytes of a report with timing removed (for comparisons)."""
    return (json.dumps(strip_wall_clock(report_dict), indent=2, sort_keys=True)
            + "\n").encode()


def write_report_json(path: str | Path, report_dict: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_dict, indent=2, sort_keys=True) + "\n")
    return path


def write_metrics_csv(path: str | Path, rows: Sequence[dict]) -> Path:
    """One row per variant/run with the standard ratio columns."""
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["variant", "precision", "recall", "specificity", "accuracy", "f1"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([row["variant"]] + [repr(float(row[c])) for c in cols[1:]])
    return path


def write_sweep_csv(path: str | Path, rows: Sequence[dict]) -> Path:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "accuracy", "positive_votes"])
        for row in rows:
            w.writerow([repr(float(row["theta"])), repr(float(row["accuracy"])),
                        int(row["positive_votes"])])
    return path
