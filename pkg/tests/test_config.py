"""Strict JSON config parsing: unknown keys, bad values, merging."""
import json

import pytest

from mssda.config import (
    AblationSection,
    CliConfig,
    DatasetSection,
    load_config,
    parse_config,
    require,
    section_defaults,
    write_resolved_config,
)
from mssda.errors import ConfigError


def test_none_path_gives_defaults():
    cfg = load_config(None)
    assert cfg.seeds == [0]
    assert cfg.output_dir is None
    assert cfg.dataset.path is None
    assert cfg.protocol.protocol == "subject_vote"
    assert cfg.stage3.m == 2


def test_full_document_parses(tmp_path):
    doc = {
        "dataset": {"path": "d", "n_subjects": 5, "seed": 9},
        "stage1": {"epochs": 42, "lr": 0.001,
                   "augment": {"jitter": 0.1, "mask_fraction": 0.2}},
        "stage2": {"k_min": 2, "k_max": 4},
        "stage3": {"m": 3, "strategy": "sum_dis", "alpha": 0.5},
        "protocol": {"protocol": "segment_vote", "theta": 0.6, "segment_len": 7},
        "ablation": {"variants": ["mssda", "erm"]},
        "seeds": [1, 2, 3],
        "output_dir": "out",
    }
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    cfg = load_config(p)
    assert cfg.dataset.path == "d" and cfg.dataset.n_subjects == 5
    assert cfg.stage1.epochs == 42 and cfg.stage1.lr == 0.001
    assert cfg.stage1.augment.jitter == 0.1
    assert cfg.stage1.augment.scale_lo == 0.8  # untouched default
    assert cfg.stage2.k_max == 4
    assert cfg.stage3.strategy == "sum_dis"
    assert cfg.protocol.segment_len == 7
    assert cfg.ablation.variants == ["mssda", "erm"]
    assert cfg.seeds == [1, 2, 3]
    assert cfg.output_dir == "out"


@pytest.mark.parametrize("doc,needle", [
    ({"bogus": 1}, "'bogus'"),
    ({"stage1": {"bogus": 1}}, "'stage1.bogus'"),
    ({"stage1": {"augment": {"bogus": 1}}}, "'stage1.augment.bogus'"),
    ({"dataset": {"epochs": 3}}, "'dataset.epochs'"),
    ({"protocol": {"theta": 0.5, "window": 3}}, "'protocol.window'"),
])
def test_unknown_keys_rejected_with_path(doc, needle):
    with pytest.raises(ConfigError) as ei:
        parse_config(doc)
    assert needle in str(ei.value)


def test_invalid_values_name_the_section():
    with pytest.raises(ConfigError, match="protocol"):
        parse_config({"protocol": {"theta": 1.5}})
    with pytest.raises(ConfigError, match="stage3"):
        parse_config({"stage3": {"m": 0}})
    with pytest.raises(ConfigError, match="stage2"):
        parse_config({"stage2": {"k_min": 0}})


@pytest.mark.parametrize("seeds", [[], ["a"], [True], 3, None])
def test_bad_seeds_rejected(seeds):
    with pytest.raises(ConfigError, match="seeds"):
        parse_config({"seeds": seeds})


def test_bad_top_level_and_output_dir():
    with pytest.raises(ConfigError):
        parse_config([1, 2])
    with pytest.raises(ConfigError, match="output_dir"):
        parse_config({"output_dir": 7})
    with pytest.raises(ConfigError):
        parse_config({"stage1": "fast"})


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)


def test_require_names_the_key():
    with pytest.raises(ConfigError, match="'dataset.path'"):
        require(None, "dataset.path")
    with pytest.raises(ConfigError, match="'output_dir'"):
        require("", "output_dir")
    assert require("x", "output_dir") == "x"


def test_protocol_config_merge():
    cfg = parse_config({
        "stage1": {"epochs": 10},
        "stage3": {"m": 1},
        "protocol": {"theta": 0.7},
        "seeds": [4, 5],
    })
    pcfg = cfg.protocol_config()
    assert pcfg.theta == 0.7
    assert pcfg.stage1.epochs == 10
    assert pcfg.stage3.m == 1
    assert pcfg.seeds == [4, 5]


def test_to_dict_roundtrips_through_parser():
    cfg = parse_config({"stage3": {"alpha": 0.2}, "seeds": [7]})
    doc = cfg.to_dict()
    json.dumps(doc)  # JSON-serializable
    again = parse_config(doc)
    assert again.stage3.alpha == 0.2
    assert again.seeds == [7]
    assert again.to_dict() == doc


def test_write_resolved_config_is_reloadable(tmp_path):
    cfg = parse_config({"seeds": [3], "output_dir": "o"})
    path = write_resolved_config(tmp_path / "out", cfg)
    assert path.name == "config_resolved.json"
    doc = json.loads(path.read_text())
    assert parse_config(doc).seeds == [3]


def test_dataset_section_to_spec():
    sec = DatasetSection(n_subjects=7, n_latent_domains=2, seed=5,
                         class_amplitude=2.0)
    spec = sec.to_spec()
    assert spec.n_subjects == 7
    assert spec.n_latent_domains == 2
    assert spec.seed == 5
    assert spec.class_amplitude == 2.0


def test_ablation_section_resolve():
    assert AblationSection(variants=["erm"]).resolve() == ["erm"]
    grid = AblationSection(n_single=2).resolve()
    assert grid[0] == "mssda" and "single_subsource:1" in grid
    with pytest.raises(ConfigError):
        AblationSection(variants=[])
    with pytest.raises(ConfigError):
        AblationSection(n_single=-1)


def test_section_defaults_summary():
    text = section_defaults(DatasetSection, skip=("path",))
    assert "n_subjects=20" in text and "path" not in text
