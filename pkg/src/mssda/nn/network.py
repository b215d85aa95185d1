"""Feed-forward networks described as a list of layer specs.

A network is data: an ordered list of LayerSpec plus parameter tensors.
Layer kinds: conv1d, linear, relu, global_avg_pool, flatten. Weights use
Kaiming-uniform init with zero biases; each layer draws from its own
seeded stream so initialization is reproducible layer by layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, ShapeError
from . import tensor as T

LAYER_KINDS = ("conv1d", "linear", "relu", "global_avg_pool", "flatten")


@dataclass
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    seed: Optional[int] = None  # filled in by build_network when absent

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if self.kind == "conv1d" and (self.kernel_size < 1 or self.stride < 1 or self.padding < 0):
            raise ConfigError(f"conv1d layer has invalid geometry: {self}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


@dataclass
class Network:
    """Layer specs plus parameters, with activation-shape bookkeeping."""

    specs: list[LayerSpec]
    params: dict[str, T.Tensor] = field(default_factory=dict)
    input_shape: Optional[tuple[int, int]] = None  # (C, L); None until declared
    seed: int = 0

    def named_parameters(self) -> list[tuple[str, T.Tensor]]:
        return sorted(self.params.items())

    def parameters(self) -> list[T.Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, x, grl_lambda: Optional[float] = None) -> T.Tensor:
        """Run x through every layer; raises ShapeError naming the layer.

        When grl_lambda is given, the input first passes through a
        gradient-reversal node with that coefficient.
        """
        out = T.as_tensor(x)
        if grl_lambda is not None:
            out = T.grad_reverse(out, grl_lambda)
        if self.input_shape is not None and out.data.ndim == 3:
            if tuple(out.shape[1:]) != tuple(self.input_shape):
                raise ShapeError(
                    f"layer 0 ({self.specs[0].kind}): input shape {tuple(out.shape[1:])} "
                    f"does not match declared {tuple(self.input_shape)}"
                )
        for i, spec in enumerate(self.specs):
            name = f"layer{i}_{spec.kind}"
            if spec.kind == "conv1d":
                out = T.conv1d(out, self.params[f"{name}.weight"], self.params[f"{name}.bias"],
                               stride=spec.stride, padding=spec.padding, layer_name=name)
            elif spec.kind == "linear":
                out = T.linear(out, self.params[f"{name}.weight"], self.params[f"{name}.bias"],
                               layer_name=name)
            elif spec.kind == "relu":
                out = T.relu(out)
            elif spec.kind == "global_avg_pool":
                out = T.global_avg_pool(out, layer_name=name)
            elif spec.kind == "flatten":
                out = T.flatten(out, layer_name=name)
        return out

    def param_checksum(self) -> float:
        return float(sum(np.abs(p.data).sum() for p in self.params.values()))


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                     dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_network(specs: list[LayerSpec], seed: int = 0, dtype=np.float64,
                  input_shape: Optional[tuple[int, int]] = None) -> Network:
    """Initialize parameters for `specs` and verify the shapes compose.

    `input_shape` is (C, L) for conv stacks or (F,) width for pure MLPs;
    verification walks the declared geometry once so misconfigurations
    surface at build time with the offending layer named.
    """
    streams = np.random.SeedSequence(seed).spawn(len(specs))
    params: dict[str, T.Tensor] = {}
    specs = [LayerSpec.from_dict(s.to_dict()) for s in specs]
    for i, spec in enumerate(specs):
        name = f"layer{i}_{spec.kind}"
        if spec.kind in ("relu", "global_avg_pool", "flatten"):
            continue
        rng = np.random.default_rng(
            streams[i] if spec.seed is None else np.random.SeedSequence(spec.seed))
        if spec.kind == "conv1d":
            fan_in = spec.in_channels * spec.kernel_size
            w = _kaiming_uniform(rng, (spec.out_channels, spec.in_channels, spec.kernel_size),
                                 fan_in, dtype)
        else:
            fan_in = spec.in_channels
            w = _kaiming_uniform(rng, (spec.out_channels, spec.in_channels), fan_in, dtype)
        params[f"{name}.weight"] = T.Tensor(w, requires_grad=True, name=f"{name}.weight")
        params[f"{name}.bias"] = T.Tensor(np.zeros(spec.out_channels, dtype=dtype),
                                          requires_grad=True, name=f"{name}.bias")
    net = Network(specs=specs, params=params, input_shape=input_shape, seed=seed)
    if input_shape is not None:
        _check_geometry(net, input_shape)
    return net


def _check_geometry(net: Network, input_shape) -> None:
    """Walk declared shapes through the stack; raise ShapeError naming the layer."""
    if len(input_shape) == 2:
        c, length = input_shape
        flat = None
    else:
        c, length = None, None
        flat = input_shape[0]
    for i, spec in enumerate(net.specs):
        name = f"layer{i}_{spec.kind}"
        if spec.kind == "conv1d":
            if flat is not None:
                raise ShapeError(f"{name}: conv1d after flatten/linear is not supported")
            if c != spec.in_channels:
                raise ShapeError(f"{name}: expects {spec.in_channels} channels, gets {c}")
            length = conv_output_length(length, spec.kernel_size, spec.stride, spec.padding)
            if length < 1:
                raise ShapeError(f"{name}: output length {length} < 1")
            c = spec.out_channels
        elif spec.kind == "global_avg_pool":
            if flat is not None:
                raise ShapeError(f"{name}: pooling after flatten/linear is not supported")
            flat, c, length = c, None, None
        elif spec.kind == "flatten":
            if flat is None:
                flat, c, length = c * length, None, None
        elif spec.kind == "linear":
            if flat is None:
                raise ShapeError(f"{name}: linear requires flattened input "
                                 f"(insert flatten or global_avg_pool)")
            if flat != spec.in_channels:
                raise ShapeError(f"{name}: expects width {spec.in_channels}, gets {flat}")
            flat = spec.out_channels


def feature_length(net: Network, input_shape: tuple[int, int]) -> tuple[int, int]:
    """(C, L) of the final conv map for a conv-only stack."""
    c, length = input_shape
    for spec in net.specs:
        if spec.kind == "conv1d":
            length = conv_output_length(length, spec.kernel_size, spec.stride, spec.padding)
            c = spec.out_channels
    return c, length
