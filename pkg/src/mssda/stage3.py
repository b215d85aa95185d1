"""Selective multi-branch adversarial alignment onto the held-out subject.

Each discovered sub-source domain gets a distance to the target subject,
measured between target points and the cluster center in the 2-D statistics
space. The M nearest domains are selected, and each selected domain trains
its own domain-adversarial branch: a fresh feature extractor F_k, class
classifier C_k, and domain discriminator D_k, with no weights shared across
branches and none inherited from the pretrained extractor. The discriminator
sits behind a gradient-reversal node, so a single backward pass descends the
discriminator's own cross-entropy while pushing the extractor to make source
(domain label 1) and target (domain label 0) features indistinguishable.
Final predictions average the per-branch softmax outputs.

Branch-composition modes, used by the ablation grid:

* ``mssda``          - one branch per selected sub-source domain (default).
* ``sa_selected``    - one branch; its source pool is the union of the
                       selected domains (single-space alignment, with
                       selection).
* ``sa_all``         - one branch over every source sample (single-space
                       alignment, no selection).
* ``ma_all``         - one branch per nonempty sub-source domain, ordered by
                       ascending distance (multi-space alignment, no
                       selection).
* ``single_subsource:k`` - one branch trained on sub-source domain k only.

Setting ``alpha = 0`` silences the adversarial term, so ``sa_all`` with
``alpha = 0`` is the plain source-only ERM baseline.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Sample, UnlabeledSample, balance_by_reuse, sample_labels, samples_to_array
from .errors import InputError, TrainingError
from .nn import Adam, Network, build_network, save_checkpoint
from .nn import tensor as T
from .presets import branch_extractor_specs, feature_dim, head_specs, stage3_defaults

ALPHA_GRID = (0.2, 0.5, 1.0, 2.0)
LR_GRID = (1e-2, 8e-3, 5e-3)
STRATEGIES = ("max_dis", "sum_dis", "all")
ABLATION_MODES = ("mssda", "sa_selected", "sa_all", "ma_all")  # + single_subsource:k
MIXED_DOMAIN = -1  # domain_index of a branch fed by more than one sub-source domain


# -- distances and selection ---------------------------------------------------------


def _check_points(target_points2d: np.ndarray, center2d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(target_points2d, dtype=np.float64)
    center = np.asarray(center2d, dtype=np.float64).reshape(-1)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise InputError(f"need >= 1 target point with shape (n, d), got {pts.shape}")
    if center.shape[0] != pts.shape[1]:
        raise InputError(
            f"center dimension {center.shape[0]} != point dimension {pts.shape[1]}")
    return pts, center


def domain_distance_max(target_points2d: np.ndarray, center2d: np.ndarray) -> float:
    """Worst-case distance: max over target points of L2 to the center."""
    pts, center = _check_points(target_points2d, center2d)
    return float(np.linalg.norm(pts - center, axis=1).max())


def domain_distance_sum(target_points2d: np.ndarray, center2d: np.ndarray) -> float:
    """Total distance: sum over target points of L2 to the center."""
    pts, center = _check_points(target_points2d, center2d)
    return float(np.linalg.norm(pts - center, axis=1).sum())


def all_domain_distances(target_points2d: np.ndarray, centers2d: np.ndarray,
                         strategy: str = "max_dis") -> np.ndarray:
    """Distance per cluster center; strategy 'all' orders by the max rule."""
    dist = domain_distance_sum if strategy == "sum_dis" else domain_distance_max
    centers = np.asarray(centers2d, dtype=np.float64)
    return np.array([dist(target_points2d, c) for c in centers])


@dataclass
class SelectionResult:
    """Per-cluster distances plus the chosen cluster indices.

    `selected` is ordered by ascending distance; equal distances keep the
    lower cluster index first.
    """

    distances: np.ndarray
    selected: list[int]
    strategy: str

    def to_dict(self) -> dict:
        return {
            "distances": [float(v) for v in self.distances],
            "selected": [int(i) for i in self.selected],
            "strategy": self.strategy,
        }


def select_subdomains(distances: Sequence[float], m: int,
                      strategy: str = "max_dis",
                      candidates: Optional[Sequence[int]] = None) -> SelectionResult:
    """Pick the m nearest clusters (all of them under strategy 'all').

    Greedy argmin without replacement: repeatedly take the smallest remaining
    distance, ties toward the lower cluster index. `candidates` optionally
    restricts the eligible cluster indices; a mixture component that owns no
    source samples is not a trainable sub-source domain and gets excluded
    this way, while its distance still appears in the full list.
    """
    if strategy not in STRATEGIES:
        raise InputError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    dists = np.asarray(distances, dtype=np.float64)
    k = len(dists)
    if k == 0:
        raise InputError("select_subdomains: empty distance list")
    if candidates is None:
        pool = np.arange(k)
    else:
        pool = np.asarray(sorted({int(c) for c in candidates}), dtype=np.int64)
        if pool.size == 0 or pool[0] < 0 or pool[-1] >= k:
            raise InputError(
                f"candidates must be a nonempty subset of range({k}), got "
                f"{list(candidates)}")
    if strategy == "all":
        m = int(pool.size)
    if not 1 <= m <= pool.size:
        raise InputError(
            f"need 1 <= M <= {pool.size} eligible clusters, got M={m}")
    order = pool[np.argsort(dists[pool], kind="stable")]
    return SelectionResult(distances=dists, selected=[int(i) for i in order[:m]],
                           strategy=strategy)


# -- branches ------------------------------------------------------------------------


@dataclass
class Branch:
    """One adversarial alignment unit: extractor + classifier + discriminator.

    Parameters are disjoint across branches; the extractor is built fresh,
    not copied from the pretrained one. `domain_index` is the sub-source
    cluster this branch aligns (MIXED_DOMAIN when fed a pooled source).
    """

    extractor: Network
    classifier: Network
    discriminator: Network
    domain_index: int
    opt_fc: Optional[Adam] = None  # steps extractor + classifier
    opt_d: Optional[Adam] = None   # steps discriminator

    def features(self, x) -> T.Tensor:
        return T.global_avg_pool(self.extractor.forward(x))

    def class_logits(self, x) -> T.Tensor:
        return self.classifier.forward(self.features(x))

    def zero_grad(self) -> None:
        self.extractor.zero_grad()
        self.classifier.zero_grad()
        self.discriminator.zero_grad()

    def param_checksum(self) -> float:
        return (self.extractor.param_checksum() + self.classifier.param_checksum()
                + self.discriminator.param_checksum())


@dataclass
class Stage3Config:
    """Alignment-training knobs; lr/batch default per preset when None.

    `alpha` weighs the adversarial term (grid ALPHA_GRID in sweeps); `lr`
    is named by LR_GRID in sweeps. `update_mode` "grl" performs the minimax
    in one backward pass through a gradient-reversal node; "alternating"
    first steps the discriminator alone, then the extractor/classifier.
    """

    preset: str = "synthetic"
    m: int = 2
    strategy: str = "max_dis"
    ablation: str = "mssda"
    alpha: float = 1.0
    lr: float | None = None
    batch_size: int | None = None
    epochs: int = 100
    plateau_rel: float = 1e-3
    plateau_window: int = 10
    weight_decay: float = 1e-4
    update_mode: str = "grl"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        defaults = stage3_defaults(self.preset)
        if self.lr is None:
            self.lr = defaults["lr"]
        if self.batch_size is None:
            self.batch_size = defaults["batch_size"]
        if self.m < 1:
            raise InputError(f"M must be >= 1, got {self.m}")
        if self.alpha < 0:
            raise InputError(f"alpha must be >= 0, got {self.alpha}")
        if self.strategy not in STRATEGIES:
            raise InputError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        parse_ablation_mode(self.ablation)  # validates
        if self.update_mode not in ("grl", "alternating"):
            raise InputError(f"update_mode must be 'grl' or 'alternating', "
                             f"got {self.update_mode!r}")
        if self.epochs < 0 or self.plateau_window < 1:
            raise InputError("epochs must be >= 0 and plateau_window >= 1")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")


def parse_ablation_mode(mode: str) -> tuple[str, Optional[int]]:
    """Split 'single_subsource:k' into its tag and cluster; validate others."""
    if mode in ABLATION_MODES:
        return mode, None
    if mode.startswith("single_subsource:"):
        try:
            k = int(mode.split(":", 1)[1])
        except ValueError:
            k = -1
        if k >= 0:
            return "single_subsource", k
    raise InputError(
        f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES} "
        f"or 'single_subsource:<cluster>'")


def plan_branches(source_samples: Sequence[Sample], domain_labels: np.ndarray,
                  selection: SelectionResult, mode: str) -> list[tuple[int, list[Sample]]]:
    """Resolve the branch-composition mode into (domain_index, samples) pools.

    Modes 'mssda' and 'single_subsource:k' fail on an empty chosen cluster;
    'ma_all' silently skips clusters that hold no source samples (they have
    nothing to align).
    """
    domain_labels = np.asarray(domain_labels)
    if len(domain_labels) != len(source_samples):
        raise InputError(
            f"{len(source_samples)} source samples but {len(domain_labels)} domain labels")
    tag, single_k = parse_ablation_mode(mode)
    by_cluster: dict[int, list[Sample]] = {}
    for s, lab in zip(source_samples, domain_labels):
        by_cluster.setdefault(int(lab), []).append(s)

    def cluster_or_raise(k: int) -> list[Sample]:
        pool = by_cluster.get(k, [])
        if not pool:
            raise InputError(f"sub-source domain {k} holds no source samples")
        return pool

    if tag == "mssda":
        return [(k, cluster_or_raise(k)) for k in selection.selected]
    if tag == "sa_selected":
        pool = [s for k in selection.selected for s in by_cluster.get(k, [])]
        if not pool:
            raise InputError("selected sub-source domains hold no source samples")
        return [(MIXED_DOMAIN, pool)]
    if tag == "sa_all":
        return [(MIXED_DOMAIN, list(source_samples))]
    if tag == "ma_all":
        order = np.argsort(selection.distances, kind="stable")
        return [(int(k), by_cluster[int(k)]) for k in order if int(k) in by_cluster]
    return [(single_k, cluster_or_raise(single_k))]


def build_branch(domain_index: int, input_shape: tuple[int, int],
                 cfg: Stage3Config, branch_pos: int) -> Branch:
    """Fresh, independently seeded F/C/D triple plus its two optimizers."""
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    seeds = np.random.SeedSequence([cfg.seed, 31, branch_pos]).generate_state(3)
    feat = feature_dim(cfg.preset)
    ext = build_network(branch_extractor_specs(cfg.preset, input_shape[0]),
                        seed=int(seeds[0]), dtype=dtype, input_shape=input_shape)
    cls = build_network(head_specs(cfg.preset, feat, out_classes=2),
                        seed=int(seeds[1]), dtype=dtype, input_shape=(feat,))
    dis = build_network(head_specs(cfg.preset, feat, out_classes=2),
                        seed=int(seeds[2]), dtype=dtype, input_shape=(feat,))
    fc_params = ([(f"extractor.{n}", p) for n, p in ext.named_parameters()]
                 + [(f"classifier.{n}", p) for n, p in cls.named_parameters()])
    d_params = [(f"discriminator.{n}", p) for n, p in dis.named_parameters()]
    opt_fc = Adam(fc_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt_d = Adam(d_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return Branch(extractor=ext, classifier=cls, discriminator=dis,
                  domain_index=domain_index, opt_fc=opt_fc, opt_d=opt_d)


def adversarial_losses(branch: Branch, source_x: np.ndarray, source_y: np.ndarray,
                       target_x: np.ndarray, grl_lambda: float = 1.0
                       ) -> tuple[T.Tensor, T.Tensor]:
    """Classification and adversarial losses for one paired batch.

    The classification loss is the mean cross-entropy of the classifier on
    the labeled source batch. The adversarial loss is the discriminator's
    cross-entropy against domain labels (source = 1, target = 0), one mean
    per batch, summed. The discriminator sees features through a
    gradient-reversal node with coefficient `grl_lambda`, so backward()
    descends the discriminator while reversing (and scaling) the gradient
    into the extractor.
    """
    source_y = np.asarray(source_y)
    if len(source_x) == 0 or len(target_x) == 0:
        raise InputError("adversarial_losses: empty source or target batch")
    if source_y.size and not np.isin(source_y, (0, 1)).all():
        raise InputError(f"class labels must lie in {{0, 1}}, got {sorted(set(source_y.tolist()))}")
    feats_s = branch.features(source_x)
    feats_t = branch.features(target_x)
    loss_cls = T.cross_entropy(branch.classifier.forward(feats_s), source_y)
    dom_s = branch.discriminator.forward(feats_s, grl_lambda=grl_lambda)
    dom_t = branch.discriminator.forward(feats_t, grl_lambda=grl_lambda)
    loss_adv = T.add(T.cross_entropy(dom_s, np.ones(len(source_x), dtype=np.int64)),
                     T.cross_entropy(dom_t, np.zeros(len(target_x), dtype=np.int64)))
    return loss_cls, loss_adv


def _plateaued(cls_losses: list[float], window: int, rel: float) -> bool:
    if len(cls_losses) <= window:
        return False
    ref = cls_losses[-1 - window]
    return abs(cls_losses[-1] - ref) < rel * max(abs(ref), 1e-12)


def train_branch(branch_pos: int, domain_index: int, pool: Sequence[Sample],
                 target: Sequence[UnlabeledSample], cfg: Stage3Config
                 ) -> tuple[Branch, list[dict]]:
    """Train one branch on its sub-source pool against the target subject.

    One epoch is one paired minibatch update (bs source + bs target drawn by
    the branch's own RNG; a pool smaller than bs is drawn with replacement).
    Stops at the epoch budget or when the source classification loss changes
    by less than plateau_rel (relative) across plateau_window epochs.
    """
    if not pool:
        raise InputError(f"branch {branch_pos}: empty sub-source pool")
    if not target:
        raise InputError(f"branch {branch_pos}: empty target sample list")
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    balanced, _single = balance_by_reuse(list(pool))
    xs_pool = samples_to_array(balanced).astype(dtype)
    ys_pool = sample_labels(balanced)
    xt_pool = samples_to_array(target).astype(dtype)
    input_shape = (xs_pool.shape[1], xs_pool.shape[2])
    if xt_pool.shape[1:] != xs_pool.shape[1:]:
        raise InputError(
            f"branch {branch_pos}: target sample shape {xt_pool.shape[1:]} "
            f"!= source sample shape {xs_pool.shape[1:]}")

    branch = build_branch(domain_index, input_shape, cfg, branch_pos)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 32, branch_pos]))
    bs = cfg.batch_size
    curve: list[dict] = []
    cls_losses: list[float] = []
    def checked(loss_cls: T.Tensor, loss_adv: T.Tensor, epoch: int) -> tuple[float, float]:
        cls_v, adv_v = loss_cls.item(), loss_adv.item()
        if not (np.isfinite(cls_v) and np.isfinite(adv_v)):
            raise TrainingError(
                f"branch {branch_pos} (sub-source domain {domain_index}): "
                f"non-finite loss at epoch {epoch}")
        return cls_v, adv_v

    for epoch in range(cfg.epochs):
        src_idx = rng.choice(len(xs_pool), size=bs, replace=len(xs_pool) < bs)
        tgt_idx = rng.choice(len(xt_pool), size=bs, replace=len(xt_pool) < bs)
        xs, ys, xt = xs_pool[src_idx], ys_pool[src_idx], xt_pool[tgt_idx]

        if cfg.update_mode == "alternating":
            branch.zero_grad()
            _, adv_only = adversarial_losses(branch, xs, ys, xt, grl_lambda=0.0)
            checked(adv_only, adv_only, epoch)
            adv_only.backward()
            branch.opt_d.step()
        branch.zero_grad()
        loss_cls, loss_adv = adversarial_losses(branch, xs, ys, xt,
                                                grl_lambda=cfg.alpha)
        cls_v, adv_v = checked(loss_cls, loss_adv, epoch)
        T.add(loss_cls, loss_adv).backward()
        branch.opt_fc.step()
        if cfg.update_mode == "grl":
            branch.opt_d.step()

        cls_losses.append(cls_v)
        curve.append({"epoch": epoch, "loss_cls": cls_v, "loss_adv": adv_v,
                      "loss_total": cls_v + cfg.alpha * adv_v})
        if _plateaued(cls_losses, cfg.plateau_window, cfg.plateau_rel):
            break
    return branch, curve


def train_stage3(domains: Sequence[tuple[int, Sequence[Sample]]],
                 target: Sequence[UnlabeledSample], cfg: Stage3Config
                 ) -> tuple[list[Branch], list[list[dict]]]:
    """Train one independent branch per (domain_index, sample pool) entry.

    Branches share no parameters or optimizer state and draw from their own
    RNG streams, so the result is independent of training order.
    """
    if not domains:
        raise InputError("train_stage3: no sub-source domains to align")
    branches: list[Branch] = []
    curves: list[list[dict]] = []
    for pos, (domain_index, pool) in enumerate(domains):
        branch, curve = train_branch(pos, domain_index, pool, target, cfg)
        branches.append(branch)
        curves.append(curve)
    return branches, curves


def predict(branches: Sequence[Branch], x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average the branches' softmax outputs; argmax (ties -> lower label).

    Returns (probabilities (n, classes), hard labels (n,)).
    """
    if not branches:
        raise InputError("predict: need at least one trained branch")
    x = np.asarray(x)
    probs = np.mean([T.softmax(b.class_logits(x).data.astype(np.float64))
                     for b in branches], axis=0)
    return probs, probs.argmax(axis=1)


# -- fold-level pipeline -------------------------------------------------------------


@dataclass
class Stage3Result:
    selection: SelectionResult
    branches: list[Branch]
    curves: list[list[dict]]
    target_probs: np.ndarray
    target_labels: np.ndarray


def run_stage3(source_samples: Sequence[Sample], domain_labels: np.ndarray,
               target_samples: Sequence[UnlabeledSample], centers2d: np.ndarray,
               target_points2d: np.ndarray, cfg: Stage3Config) -> Stage3Result:
    """Select sub-source domains, align them, and score the target subject.

    Only clusters that own at least one source sample are selectable, and
    cfg.m is clamped to their count: the mixture picks its own K per fold,
    so a grid-supplied M may exceed the number of usable sub-source domains.
    """
    distances = all_domain_distances(target_points2d, centers2d, cfg.strategy)
    counts = np.bincount(np.asarray(domain_labels, dtype=np.int64),
                         minlength=len(distances))
    nonempty = np.flatnonzero(counts > 0)
    m = len(nonempty) if cfg.strategy == "all" else min(cfg.m, len(nonempty))
    selection = select_subdomains(distances, m, cfg.strategy, candidates=nonempty)
    domains = plan_branches(source_samples, domain_labels, selection, cfg.ablation)
    branches, curves = train_stage3(domains, target_samples, cfg)
    probs, labels = predict(branches, samples_to_array(target_samples).astype(
        np.float32 if cfg.dtype == "float32" else np.float64))
    return Stage3Result(selection=selection, branches=branches, curves=curves,
                        target_probs=probs, target_labels=labels)


# -- artifact writers ----------------------------------------------------------------


def write_selection_json(path: str | Path, selection: SelectionResult) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(selection.to_dict(), indent=2, sort_keys=True) + "\n")


def write_branch_curves(directory: str | Path, branches: Sequence[Branch],
                        curves: Sequence[list[dict]]) -> list[Path]:
    """One loss-curve CSV per branch: branch<i>_domain<k>.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (branch, curve) in enumerate(zip(branches, curves)):
        tag = "mixed" if branch.domain_index == MIXED_DOMAIN else str(branch.domain_index)
        p = directory / f"branch{i}_domain{tag}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss_cls", "loss_adv", "loss_total"])
            for row in curve:
                w.writerow([row["epoch"], repr(row["loss_cls"]),
                            repr(row["loss_adv"]), repr(row["loss_total"])])
        paths.append(p)
    return paths


def save_branches(directory: str | Path, branches: Sequence[Branch]) -> list[Path]:
    """Checkpoint each branch under branch<i>/{extractor,classifier,discriminator}."""
    directory = Path(directory)
    paths = []
    for i, branch in enumerate(branches):
        bdir = directory / f"branch{i}"
        save_checkpoint(branch.extractor, bdir / "extractor")
        save_checkpoint(branch.classifier, bdir / "classifier")
        save_checkpoint(branch.discriminator, bdir / "discriminator")
        (bdir / "branch.json").write_text(json.dumps(
            {"domain_index": int(branch.domain_index)}, indent=2) + "\n")
        paths.append(bdir)
    return paths
