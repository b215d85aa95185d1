"""Shared contrastive pretraining of the initial feature extractor.

Every sample (source and target alike) is pushed apart from every other
sample and pulled toward its own augmented view. For item i with embedding
h_i and augmented embedding h~_i, the per-item loss is

    -log[ exp(h_i . h~_i) / ( sum_j exp(h_i . h~_j)
                              + sum_{j != i} exp(h_i . h_j) ) ]

averaged over the batch, with the denominator ranging over the current
minibatch. Embeddings are L2-normalized pooled features of the extractor's
final conv map, so every dot product lies in [-1, 1] and the exponentials
cannot overflow. The unpooled conv map is what the latent-domain discovery
stage consumes later.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AugmentPolicy, Sample, augment, default_policy, samples_to_array
from .errors import InputError, TrainingError
from .nn import Network, build_network, make_adamw
from .nn import tensor as T
from .presets import extractor_specs, stage1_defaults


@dataclass
class Stage1Config:
    """Pretraining knobs; lr/batch default per preset when left as None."""

    preset: str = "synthetic"
    epochs: int = 5000
    lr: float | None = None
    batch_size: int | None = None
    weight_decay: float = 1e-4
    augment: AugmentPolicy = field(default_factory=default_policy)
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        defaults = stage1_defaults(self.preset)
        if self.lr is None:
            self.lr = defaults["lr"]
        if self.batch_size is None:
            self.batch_size = defaults["batch_size"]
        if self.epochs < 0:
            raise InputError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2:
            raise InputError(
                f"batch_size must be >= 2 (a batch needs negatives), got {self.batch_size}"
            )


def contrastive_loss(h: T.Tensor, h_view: T.Tensor) -> T.Tensor:
    """Mean in-batch contrastive loss over n (embedding, view) pairs."""
    if h.shape != h_view.shape:
        raise InputError(
            f"contrastive_loss: embedding blocks differ in shape: "
            f"{h.shape} vs {h_view.shape}"
        )
    n = h.shape[0]
    sim_view = T.matmul(h, T.transpose(h_view))   # (n, n): h_i . h~_j
    sim_self = T.matmul(h, T.transpose(h))        # (n, n): h_i . h_j
    eye = np.eye(n, dtype=h.data.dtype)

    paired = T.tsum(T.mul(sim_view, eye), axis=1)            # h_i . h~_i
    denom = T.add(
        T.tsum(T.exp(sim_view), axis=1),
        T.tsum(T.mul(T.exp(sim_self), 1.0 - eye), axis=1),
    )
    return T.tmean(T.add(T.mul(paired, -1.0), T.log(denom)))


def embed(net: Network, x: np.ndarray) -> T.Tensor:
    """Unit-norm embedding: pooled final conv map, row-normalized."""
    return T.l2_normalize(T.global_avg_pool(net.forward(x)))


def train_stage1(samples: list[Sample], input_shape: tuple[int, int],
                 cfg: Stage1Config) -> tuple[Network, list[float]]:
    """Train the shared extractor on all samples; returns (net, loss curve).

    One epoch is one minibatch update. epochs=0 returns the freshly
    initialized network untouched (useful for ablations and smoke tests).
    """
    if not samples:
        raise InputError("train_stage1: empty sample list")
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    net = build_network(extractor_specs(cfg.preset, input_shape[0]), seed=cfg.seed,
                        dtype=dtype, input_shape=input_shape)
    if cfg.epochs == 0:
        return net, []

    opt = make_adamw(net.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    ss = np.random.SeedSequence([cfg.seed, 11])
    batch_rng, aug_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    n = len(samples)
    bs = min(cfg.batch_size, n)

    losses: list[float] = []
    for epoch in range(cfg.epochs):
        idx = batch_rng.choice(n, size=bs, replace=False)
        batch = [samples[i] for i in idx]
        x = samples_to_array(batch).astype(dtype)
        xv = samples_to_array(
            [augment(s, cfg.augment, aug_rng) for s in batch]).astype(dtype)

        net.zero_grad()
        loss = contrastive_loss(embed(net, x), embed(net, xv))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(
                f"pretraining diverged: non-finite loss at epoch {epoch} (lr={cfg.lr})"
            )
        losses.append(value)
        loss.backward()
        opt.step()
    return net, losses


def write_loss_curve(path: str | Path, losses: list[float]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, v in enumerate(losses):
            writer.writerow([i, repr(float(v))])
