"""Dataset model: on-disk formats, leave-one-subject-out splits, balancing,
and the augmentation policy used to build contrastive views.

A dataset is a directory holding ``manifest.json`` plus one CSV per subject.
The manifest lists ``{name, time_len, channels, subjects:[{id, label,
n_samples, file}]}``; each CSV has header ``sample,t,c0..c{C-1}`` with rows
sorted by ``(sample, t)``. Text formats keep desk-scale datasets auditable.
Datasets are immutable after load, so folds can share them freely.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataLoadError, InputError

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass(frozen=True)
class Sample:
    """One recording: a (time_len, channels) matrix tied to a subject."""

    values: np.ndarray
    subject_id: str
    class_label: int
    sample_index: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class UnlabeledSample:
    """A target-domain recording; deliberately has no class label field so
    training code cannot read the held-out subject's diagnosis by accident."""

    values: np.ndarray
    subject_id: str
    sample_index: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass
class SubjectRecord:
    subject_id: str
    class_label: int
    samples: list[Sample]


@dataclass
class Dataset:
    name: str
    time_len: int
    channels: int
    subjects: list[SubjectRecord]

    def __post_init__(self):
        seen = set()
        for rec in self.subjects:
            if rec.subject_id in seen:
                raise InputError(f"duplicate subject id {rec.subject_id!r}")
            seen.add(rec.subject_id)
            if rec.class_label not in (0, 1):
                raise InputError(
                    f"subject {rec.subject_id!r}: label must be 0 or 1, got {rec.class_label}"
                )
            if not rec.samples:
                raise InputError(f"subject {rec.subject_id!r} has no samples")
            for s in rec.samples:
                if s.values.shape != (self.time_len, self.channels):
                    raise InputError(
                        f"subject {rec.subject_id!r} sample {s.sample_index}: "
                        f"shape {s.values.shape} != ({self.time_len}, {self.channels})"
                    )
                if not np.isfinite(s.values).all():
                    raise InputError(
                        f"subject {rec.subject_id!r} sample {s.sample_index}: non-finite value"
                    )

    def subject_ids(self) -> list[str]:
        return [rec.subject_id for rec in self.subjects]

    def all_samples(self) -> list[Sample]:
        return [s for rec in self.subjects for s in rec.samples]

    def subject(self, subject_id: str) -> SubjectRecord:
        for rec in self.subjects:
            if rec.subject_id == subject_id:
                return rec
        raise InputError(f"unknown subject id {subject_id!r}")

    @property
    def n_samples(self) -> int:
        return sum(len(rec.samples) for rec in self.subjects)


# -- on-disk format ----------------------------------------------------------

def _format_float(v: float) -> str:
    # repr is the shortest string that round-trips the exact float64
    return repr(float(v))


def save_dataset(dataset: Dataset, out_dir: str | Path,
                 ground_truth: dict[str, int] | None = None) -> Path:
    """Write manifest.json plus one CSV per subject; returns the directory.

    ``ground_truth`` (subject id -> planted latent-domain index), when given,
    is written alongside as ground_truth.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": dataset.name,
        "time_len": dataset.time_len,
        "channels": dataset.channels,
        "subjects": [],
    }
    for rec in dataset.subjects:
        if not _ID_RE.match(rec.subject_id):
            raise InputError(
                f"subject id {rec.subject_id!r} is not filename-safe ([A-Za-z0-9_-]+)"
            )
        fname = f"{rec.subject_id}.csv"
        manifest["subjects"].append({
            "id": rec.subject_id,
            "label": rec.class_label,
            "n_samples": len(rec.samples),
            "file": fname,
        })
        header = "sample,t," + ",".join(f"c{c}" for c in range(dataset.channels))
        lines = [header]
        for s in sorted(rec.samples, key=lambda s: s.sample_index):
            for t in range(dataset.time_len):
                row = [str(s.sample_index), str(t)]
                row.extend(_format_float(v) for v in s.values[t])
                lines.append(",".join(row))
        (out / fname).write_text("\n".join(lines) + "\n")
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    if ground_truth is not None:
        (out / "ground_truth.json").write_text(
            json.dumps(ground_truth, indent=2, sort_keys=True) + "\n"
        )
    return out


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset directory back; every declared count and shape is
    checked, and errors name the offending file (and line where known)."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataLoadError(f"missing manifest: {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise DataLoadError(f"{mpath}: invalid JSON ({e})") from e
    for key in ("name", "time_len", "channels", "subjects"):
        if key not in manifest:
            raise DataLoadError(f"{mpath}: missing key {key!r}")
    t_len = int(manifest["time_len"])
    c = int(manifest["channels"])
    subjects = []
    for entry in manifest["subjects"]:
        sid = entry["id"]
        fpath = root / entry["file"]
        if not fpath.is_file():
            raise DataLoadError(f"missing subject file: {fpath}")
        samples = _read_subject_csv(fpath, sid, int(entry["label"]),
                                    int(entry["n_samples"]), t_len, c)
        subjects.append(SubjectRecord(subject_id=sid, class_label=int(entry["label"]),
                                      samples=samples))
    try:
        return Dataset(name=manifest["name"], time_len=t_len, channels=c,
                       subjects=subjects)
    except InputError as e:
        raise DataLoadError(f"{root}: {e}") from e


def _read_subject_csv(fpath: Path, sid: str, label: int, n_samples: int,
                      t_len: int, c: int) -> list[Sample]:
    expected_cols = 2 + c
    text = fpath.read_text().splitlines()
    if not text:
        raise DataLoadError(f"{fpath}: empty file")
    header = "sample,t," + ",".join(f"c{i}" for i in range(c))
    if text[0] != header:
        raise DataLoadError(f"{fpath}: line 1: bad header {text[0]!r}")
    rows = text[1:]
    if len(rows) != n_samples * t_len:
        raise DataLoadError(
            f"{fpath}: expected {n_samples * t_len} data rows "
            f"({n_samples} samples x {t_len} steps), found {len(rows)}"
        )
    data = np.empty((n_samples, t_len, c), dtype=np.float64)
    for lineno, row in enumerate(rows, start=2):
        parts = row.split(",")
        if len(parts) != expected_cols:
            raise DataLoadError(f"{fpath}: line {lineno}: expected {expected_cols} "
                                f"columns, found {len(parts)}")
        j, t = int(parts[0]), int(parts[1])
        want = divmod(lineno - 2, t_len)
        if (j, t) != want:
            raise DataLoadError(f"{fpath}: line {lineno}: rows must be sorted by "
                                f"(sample, t); expected {want}, found ({j}, {t})")
        vals = np.array([float(p) for p in parts[2:]])
        if not np.isfinite(vals).all():
            raise DataLoadError(f"{fpath}: line {lineno}: non-finite value")
        data[j, t] = vals
    return [
        Sample(values=data[j], subject_id=sid, class_label=label, sample_index=j)
        for j in range(n_samples)
    ]


# -- splitting & balancing ---------------------------------------------------

@dataclass
class LosoSplit:
    """One leave-one-subject-out fold.

    ``target`` samples are stripped of labels; the true labels ride along in
    ``target_labels`` (aligned with ``target``) for the scoring path only.
    """

    held_out: str
    source: list[Sample]
    target: list[UnlabeledSample]
    target_labels: np.ndarray = field(repr=False)


def loso_split(dataset: Dataset, held_out_subject: str) -> LosoSplit:
    rec = dataset.subject(held_out_subject)  # raises InputError when unknown
    source = [s for r in dataset.subjects if r.subject_id != held_out_subject
              for s in r.samples]
    target = [UnlabeledSample(values=s.values, subject_id=s.subject_id,
                              sample_index=s.sample_index) for s in rec.samples]
    labels = np.array([s.class_label for s in rec.samples], dtype=np.int64)
    return LosoSplit(held_out=held_out_subject, source=source, target=target,
                     target_labels=labels)


def balance_by_reuse(samples: Sequence[Sample]) -> tuple[list[Sample], bool]:
    """Equalize class counts by duplicating minority samples round-robin.

    Returns (balanced samples, single_class_flag). Duplication cycles through
    the minority samples in input order, so the result is deterministic and
    every output is one of the input objects. A single-class input is
    returned unchanged with the flag set.
    """
    samples = list(samples)
    pos = [s for s in samples if s.class_label == 1]
    neg = [s for s in samples if s.class_label == 0]
    if not pos or not neg:
        return samples, True
    minority, deficit = (pos, len(neg) - len(pos)) if len(pos) < len(neg) \
        else (neg, len(pos) - len(neg))
    extras = [minority[i % len(minority)] for i in range(deficit)]
    return samples + extras, False


def samples_to_array(samples: Sequence[Sample | UnlabeledSample]) -> np.ndarray:
    """Stack samples into the channels-first (N, C, T) layout networks eat."""
    if not samples:
        raise InputError("samples_to_array: empty sample list")
    return np.stack([s.values.T for s in samples])


def sample_labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([s.class_label for s in samples], dtype=np.int64)


# -- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    """Weak time-series augmentations, applied jitter -> scale -> time mask.

    ``jitter`` is relative: noise std per channel is jitter x that channel's
    std within the sample, so the policy transfers across signal scales.
    """

    jitter: float = 0.05
    scale_lo: float = 0.8
    scale_hi: float = 1.25
    mask_fraction: float = 0.1

    def __post_init__(self):
        if self.jitter < 0:
            raise InputError(f"jitter must be >= 0, got {self.jitter}")
        if self.scale_lo > self.scale_hi:
            raise InputError(
                f"scale range is inverted: [{self.scale_lo}, {self.scale_hi}]"
            )
        if not 0.0 <= self.mask_fraction <= 0.5:
            raise InputError(
                f"mask_fraction must be in [0, 0.5], got {self.mask_fraction}"
            )


def default_policy() -> AugmentPolicy:
    return AugmentPolicy()


def identity_policy() -> AugmentPolicy:
    return AugmentPolicy(jitter=0.0, scale_lo=1.0, scale_hi=1.0, mask_fraction=0.0)


def augment(sample: Sample | UnlabeledSample, policy: AugmentPolicy,
            rng: np.random.Generator) -> Sample | UnlabeledSample:
    """Produce the sample's stochastic view; identity policy is bit-exact."""
    v = sample.values
    t_len = v.shape[0]
    out = v
    if policy.jitter > 0:
        sigma = policy.jitter * v.std(axis=0, keepdims=True)
        out = out + rng.normal(0.0, 1.0, size=v.shape) * sigma
    if (policy.scale_lo, policy.scale_hi) != (1.0, 1.0):
        out = out * rng.uniform(policy.scale_lo, policy.scale_hi, size=(1, v.shape[1]))
    mask_len = int(round(policy.mask_fraction * t_len))
    if mask_len > 0:
        out = np.array(out, copy=True)
        start = int(rng.integers(0, t_len - mask_len + 1))
        out[start:start + mask_len, :] = 0.0
    if isinstance(sample, UnlabeledSample):
        return UnlabeledSample(values=out, subject_id=sample.subject_id,
                               sample_index=sample.sample_index)
    return Sample(values=out, subject_id=sample.subject_id,
                  class_label=sample.class_label, sample_index=sample.sample_index)
