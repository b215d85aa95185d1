"""Strict JSON configuration documents for the command-line pipeline.

Layout (every section optional, every key defaulted unless stated):

    {
      "dataset":  {"path": "...", "n_subjects": 20, "samples_per_subject": 30,
                   "n_latent_domains": 3, "time_len": 64, "channels": 6,
                   "class_amplitude": 0.25, "noise_sigma": 0.1,
                   "seed": 0, "name": "synthetic"},
      "stage1":   {... Stage1Config keys ..., "augment": {...}},
      "stage2":   {... Stage2Config keys ...},
      "stage3":   {... Stage3Config keys ...},
      "protocol": {"protocol": "subject_vote", "theta": 0.5, "segment_len": 11},
      "ablation": {"variants": ["mssda", "erm"], "n_single": 3},
      "seeds":    [0],
      "output_dir": "out"
    }

Parsing is strict: an unknown key anywhere is rejected with its dotted path,
and invalid values are rejected naming the section. `dataset.path` and
`output_dir` have no defaults; commands that need them fail naming the key
when neither the config nor the corresponding flag supplies a value.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Optional

from .data import AugmentPolicy
from .errors import ConfigError, MssdaError
from .harness import ProtocolConfig, default_variant_grid
from .stage1 import Stage1Config
from .stage2 import Stage2Config
from .stage3 import Stage3Config
from .synthetic import SyntheticSpec


@dataclass
class DatasetSection:
    """Where to load data from, or how to generate it."""

    path: Optional[str] = None
    n_subjects: int = 20
    samples_per_subject: int = 30
    n_latent_domains: int = 3
    time_len: int = 64
    channels: int = 6
    class_amplitude: float = 0.25
    noise_sigma: float = 0.1
    seed: int = 0
    name: str = "synthetic"

    def to_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            n_subjects=self.n_subjects,
            samples_per_subject=self.samples_per_subject,
            n_latent_domains=self.n_latent_domains,
            time_len=self.time_len,
            channels=self.channels,
            class_amplitude=self.class_amplitude,
            noise_sigma=self.noise_sigma,
            seed=self.seed,
            name=self.name,
        )


@dataclass
class ProtocolSection:
    protocol: str = "subject_vote"
    theta: float = 0.5
    segment_len: int = 11

    def __post_init__(self):
        # Same rules as the runtime config; validate at parse time.
        ProtocolConfig(protocol=self.protocol, theta=self.theta,
                       segment_len=self.segment_len)


@dataclass
class AblationSection:
    variants: Optional[list[str]] = None
    n_single: int = 3

    def __post_init__(self):
        if self.variants is not None:
            if (not isinstance(self.variants, list) or not self.variants
                    or not all(isinstance(v, str) for v in self.variants)):
                raise ConfigError(
                    "'ablation.variants' must be a nonempty list of strings")
        if not isinstance(self.n_single, int) or self.n_single < 0:
            raise ConfigError("'ablation.n_single' must be an integer >= 0")

    def resolve(self) -> list[str]:
        if self.variants is not None:
            return list(self.variants)
        return default_variant_grid(self.n_single)


@dataclass
class CliConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stage3: Stage3Config = field(default_factory=Stage3Config)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Optional[str] = None

    def protocol_config(self) -> ProtocolConfig:
        """Merge the sections into the runtime experiment config."""
        return ProtocolConfig(
            protocol=self.protocol.protocol,
            theta=self.protocol.theta,
            segment_len=self.protocol.segment_len,
            stage1=self.stage1,
            stage2=self.stage2,
            stage3=self.stage3,
            seeds=list(self.seeds),
        )

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name))
               for name in ("dataset", "stage1", "stage2", "stage3",
                            "protocol", "ablation")}
        out["seeds"] = list(self.seeds)
        out["output_dir"] = self.output_dir
        return out


# -- strict construction ----------------------------------------------------------


def _strict_kwargs(cls, doc, path: str, exclude: tuple = ()) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"config section '{path}' must be a JSON object")
    allowed = {f.name for f in dc_fields(cls)} - set(exclude)
    out = {}
    for key, value in doc.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key '{path}.{key}'")
        out[key] = value
    return out


def _construct(cls, kwargs: dict, path: str):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (MssdaError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config section '{path}': {e}") from e


def _build_stage1(doc, path: str) -> Stage1Config:
    kwargs = _strict_kwargs(Stage1Config, doc, path)
    if "augment" in kwargs:
        kwargs["augment"] = _construct(
            AugmentPolicy,
            _strict_kwargs(AugmentPolicy, kwargs["augment"], path + ".augment"),
            path + ".augment")
    return _construct(Stage1Config, kwargs, path)


_SECTION_BUILDERS = {
    "dataset": lambda doc: _construct(
        DatasetSection, _strict_kwargs(DatasetSection, doc, "dataset"), "dataset"),
    "stage1": lambda doc: _build_stage1(doc, "stage1"),
    "stage2": lambda doc: _construct(
        Stage2Config, _strict_kwargs(Stage2Config, doc, "stage2"), "stage2"),
    "stage3": lambda doc: _construct(
        Stage3Config, _strict_kwargs(Stage3Config, doc, "stage3"), "stage3"),
    "protocol": lambda doc: _construct(
        ProtocolSection, _strict_kwargs(ProtocolSection, doc, "protocol"),
        "protocol"),
    "ablation": lambda doc: _construct(
        AblationSection, _strict_kwargs(AblationSection, doc, "ablation"),
        "ablation"),
}


def _check_seeds(value) -> list[int]:
    ok = (isinstance(value, list) and value
          and all(isinstance(v, int) and not isinstance(v, bool) for v in value))
    if not ok:
        raise ConfigError("config key 'seeds' must be a nonempty list of integers")
    return list(value)


def parse_config(doc: dict, origin: str = "<config>") -> CliConfig:
    """Build a CliConfig from an already-parsed JSON document, strictly."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: top level must be a JSON object")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTION_BUILDERS:
            kwargs[key] = _SECTION_BUILDERS[key](value)
        elif key == "seeds":
            kwargs["seeds"] = _check_seeds(value)
        elif key == "output_dir":
            if value is not None and not isinstance(value, str):
                raise ConfigError("config key 'output_dir' must be a string")
            kwargs["output_dir"] = value
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return CliConfig(**kwargs)


def load_config(path: Optional[str | Path]) -> CliConfig:
    """Read and strictly parse a JSON config file; None means all defaults."""
    if path is None:
        return CliConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return parse_config(doc, origin=str(path))


def require(value, key: str):
    """A key with no default: fail naming it when nothing supplied one."""
    if value is None or value == "":
        raise ConfigError(
            f"missing config key '{key}' (no default; set it in the config "
            f"file or pass the corresponding flag)")
    return value


def write_resolved_config(out_dir: str | Path, cfg: CliConfig) -> Path:
    """Echo the fully-resolved configuration next to the run's artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_resolved.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def section_defaults(cls, skip: tuple = ()) -> str:
    """'key=default' summary for --help, derived from the dataclass itself."""
    parts = []
    for f in dc_fields(cls):
        if f.name in skip:
            continue
        if f.default is not MISSING:
            value = f.default
        elif f.default_factory is not MISSING:  # type: ignore[misc]
            value = f.default_factory()  # type: ignore[misc]
        else:
            continue
        parts.append(f"{f.name}={value}")
    return ", ".join(parts)
