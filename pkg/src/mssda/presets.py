"""Named architecture presets for the feature extractors and heads.

Presets exist per dataset shape family: ``dfn`` (longer recordings, deeper
stacks), ``fra`` (shorter recordings, shallower stacks), and ``synthetic``
(small nets sized for the bundled generator). Extractors are conv-only
stacks; their final map feeds both the pooled embedding and the channel
statistics. Heads are small fully connected stacks applied after pooling.
"""
from __future__ import annotations

from .errors import ConfigError
from .nn import LayerSpec

PRESETS = ("dfn", "fra", "synthetic")


def _conv(cin: int, cout: int, k: int, s: int, p: int) -> LayerSpec:
    return LayerSpec("conv1d", in_channels=cin, out_channels=cout,
                     kernel_size=k, stride=s, padding=p)


def _relu() -> LayerSpec:
    return LayerSpec("relu")


def _lin(fin: int, fout: int) -> LayerSpec:
    return LayerSpec("linear", in_channels=fin, out_channels=fout)


def _need(preset: str) -> None:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")


def extractor_specs(preset: str, channels: int) -> list[LayerSpec]:
    """Conv stack used for the shared pretraining extractor (stage 1)."""
    _need(preset)
    if preset == "dfn":
        return [
            _conv(channels, 32, 7, 2, 3), _relu(),
            _conv(32, 48, 5, 2, 2), _relu(),
            _conv(48, 64, 3, 2, 1), _relu(),
            _conv(64, 64, 3, 1, 1), _relu(),
        ]
    if preset == "fra":
        return [
            _conv(channels, 32, 5, 2, 2), _relu(),
            _conv(32, 48, 3, 2, 1), _relu(),
            _conv(48, 64, 3, 1, 1), _relu(),
        ]
    return [
        _conv(channels, 16, 5, 2, 2), _relu(),
        _conv(16, 24, 3, 2, 1), _relu(),
    ]


def branch_extractor_specs(preset: str, channels: int) -> list[LayerSpec]:
    """Conv stack for per-branch extractors (stage 3); deeper for dfn."""
    _need(preset)
    if preset == "dfn":
        return [
            _conv(channels, 32, 7, 2, 3), _relu(),
            _conv(32, 32, 3, 1, 1), _relu(),
            _conv(32, 48, 5, 2, 2), _relu(),
            _conv(48, 48, 3, 1, 1), _relu(),
            _conv(48, 64, 3, 2, 1), _relu(),
            _conv(64, 64, 3, 1, 1), _relu(),
            _conv(64, 64, 3, 1, 1), _relu(),
        ]
    if preset == "fra":
        return extractor_specs("fra", channels)
    return extractor_specs("synthetic", channels)


def feature_dim(preset: str) -> int:
    """Width of the pooled feature vector each preset's extractor emits."""
    _need(preset)
    return {"dfn": 64, "fra": 64, "synthetic": 24}[preset]


def head_specs(preset: str, in_features: int, out_classes: int = 2) -> list[LayerSpec]:
    """Fully connected classifier/discriminator head on pooled features."""
    _need(preset)
    if preset == "dfn":
        return [_lin(in_features, 64), _relu(), _lin(64, 32), _relu(), _lin(32, out_classes)]
    if preset == "fra":
        return [_lin(in_features, 32), _relu(), _lin(32, out_classes)]
    return [_lin(in_features, 16), _relu(), _lin(16, out_classes)]


def stage1_defaults(preset: str) -> dict:
    """Per-preset pretraining optimizer defaults (lr, batch size)."""
    _need(preset)
    if preset == "dfn":
        return {"lr": 5e-3, "batch_size": 64}
    if preset == "fra":
        return {"lr": 1e-3, "batch_size": 32}
    return {"lr": 2e-3, "batch_size": 32}


def stage3_defaults(preset: str) -> dict:
    """Per-preset alignment-training defaults (lr, batch size)."""
    _need(preset)
    if preset == "dfn":
        return {"lr": 5e-3, "batch_size": 64}
    return {"lr": 5e-3, "batch_size": 32}
