"""On-disk network format: meta.json + one raw float32 file per parameter.

meta.json carries the ordered layer specs, parameter shapes, and the init
seed. Parameter files are little-endian float32, named by layer path
(e.g. layer0_conv1d.weight.bin). Writing is deterministic byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataLoadError
from .network import LayerSpec, Network
from .tensor import Tensor


def save_checkpoint(net: Network, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "layers": [s.to_dict() for s in net.specs],
        "shapes": {name: list(p.shape) for name, p in net.named_parameters()},
        "input_shape": list(net.input_shape) if net.input_shape is not None else None,
        "seed": net.seed,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for name, p in net.named_parameters():
        p.data.astype("<f4").tofile(directory / f"{name}.bin")
    return directory


def load_checkpoint(directory, dtype=np.float64) -> Network:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataLoadError(f"missing checkpoint metadata: {meta_path}")
    meta = json.loads(meta_path.read_text())
    specs = [LayerSpec.from_dict(d) for d in meta["layers"]]
    params: dict[str, Tensor] = {}
    for name, shape in meta["shapes"].items():
        path = directory / f"{name}.bin"
        if not path.exists():
            raise DataLoadError(f"missing parameter file: {path}")
        arr = np.fromfile(path, dtype="<f4")
        if arr.size != int(np.prod(shape)):
            raise DataLoadError(f"{path}: expected {int(np.prod(shape))} values, got {arr.size}")
        params[name] = Tensor(arr.reshape(shape).astype(dtype), requires_grad=True, name=name)
    input_shape = meta.get("input_shape")
    return Network(specs=specs, params=params,
                   input_shape=tuple(input_shape) if input_shape else None,
                   seed=meta.get("seed", 0))
