"""Command-line behavior: subcommands, flags, exit codes, artifacts."""
import json
from pathlib import Path

import pytest

from mssda.cli import main, parse_sweep
from mssda.data import load_dataset
from mssda.errors import ConfigError, InputError
from mssda.harness import report_body_bytes

TINY = {
    "dataset": {"n_subjects": 4, "samples_per_subject": 6, "n_latent_domains": 2,
                "time_len": 32, "channels": 4, "class_amplitude": 3.0, "seed": 3},
    "stage1": {"epochs": 20, "batch_size": 16},
    "stage2": {"k_min": 2, "k_max": 3, "restarts": 2, "max_iter": 80},
    "stage3": {"m": 1, "alpha": 0.2, "epochs": 5, "batch_size": 8},
    "seeds": [0],
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(TINY))
    code = main(["generate", "--config", str(root / "cfg.json"),
                 "--out", str(root / "ds")])
    assert code == 0
    return root


@pytest.fixture(scope="module")
def run_dir(workdir):
    out = workdir / "run0"
    code = main(["run", "--config", str(workdir / "cfg.json"),
                 "--data", str(workdir / "ds"), "--out", str(out),
                 "--workers", "1"])
    assert code == 0
    return out


def _cfg(workdir) -> str:
    return str(workdir / "cfg.json")


def _ds(workdir) -> str:
    return str(workdir / "ds")


# -- generate ---------------------------------------------------------------------


def test_generate_directory_contents(workdir):
    ds_dir = workdir / "ds"
    names = {p.name for p in ds_dir.iterdir()}
    assert {"manifest.json", "ground_truth.json", "config_resolved.json"} <= names
    assert sum(n.endswith(".csv") for n in names) == 4
    ds = load_dataset(ds_dir)
    assert len(ds.subjects) == 4
    truth = json.loads((ds_dir / "ground_truth.json").read_text())
    assert set(truth.values()) == {0, 1}


def _dir_bytes(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_generate_same_seed_identical_directories(workdir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["generate", "--config", _cfg(workdir),
                     "--out", str(out)]) == 0
    assert _dir_bytes(a) == _dir_bytes(b)


def test_generate_refuses_nonempty_without_force(workdir, tmp_path, capsys):
    out = tmp_path / "occupied"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["generate", "--config", _cfg(workdir), "--out", str(out)]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["generate", "--config", _cfg(workdir), "--out", str(out),
                 "--force"]) == 0


def test_generate_invalid_spec_exits_one(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"dataset": {"n_latent_domains": 0}}))
    assert main(["generate", "--config", str(cfg), "--out",
                 str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err


def test_generate_seed_flag_changes_data(workdir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", _cfg(workdir), "--out", str(a),
                 "--seed", "3"]) == 0
    assert main(["generate", "--config", _cfg(workdir), "--out", str(b),
                 "--seed", "4"]) == 0
    assert _dir_bytes(a)["s00.csv"] != _dir_bytes(b)["s00.csv"]


# -- run --------------------------------------------------------------------------


def test_run_artifacts(run_dir):
    assert (run_dir / "report.json").is_file()
    assert (run_dir / "metrics.csv").is_file()
    assert (run_dir / "config_resolved.json").is_file()
    doc = json.loads((run_dir / "report.json").read_text())
    assert len(doc["runs"]) == 1
    assert len(doc["runs"][0]["folds"]) == 4
    assert doc["runs"][0]["failures"] == []
    header = (run_dir / "metrics.csv").read_text().splitlines()[0]
    assert header == "variant,precision,recall,specificity,accuracy,f1"
    sel = run_dir / "folds" / "seed0" / "fold_s00" / "selection.json"
    assert sel.is_file()


def test_run_deterministic_report_bodies(workdir, tmp_path):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    bodies = []
    for out in outs:
        assert main(["run", "--config", _cfg(workdir), "--data", _ds(workdir),
                     "--out", str(out), "--workers", "1"]) == 0
        bodies.append(report_body_bytes(
            json.loads((out / "report.json").read_text())))
    assert bodies[0] == bodies[1]


def test_run_missing_data_names_key(workdir, tmp_path, capsys):
    assert main(["run", "--config", _cfg(workdir),
                 "--out", str(tmp_path / "o")]) == 1
    assert "'dataset.path'" in capsys.readouterr().err


def test_run_missing_out_names_key(workdir, capsys):
    assert main(["run", "--config", _cfg(workdir), "--data", _ds(workdir)]) == 1
    assert "'output_dir'" in capsys.readouterr().err


def test_run_unknown_config_key_exits_one(workdir, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"stage9": {}}))
    assert main(["run", "--config", str(cfg), "--data", _ds(workdir),
                 "--out", str(tmp_path / "o")]) == 1
    assert "stage9" in capsys.readouterr().err


def test_run_partial_failure_exits_two(workdir, tmp_path, capsys):
    doc = dict(TINY, stage3={"ablation": "single_subsource:99",
                             "alpha": 0.2, "epochs": 5, "batch_size": 8})
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(doc))
    assert main(["run", "--config", str(cfg), "--data", _ds(workdir),
                 "--out", str(tmp_path / "o"), "--workers", "1"]) == 2
    assert "failed" in capsys.readouterr().err


def test_run_bad_workers_exits_one(workdir, tmp_path):
    assert main(["run", "--config", _cfg(workdir), "--data", _ds(workdir),
                 "--out", str(tmp_path / "o"), "--workers", "0"]) == 1


# -- ablate -----------------------------------------------------------------------


def test_ablate_two_variants(workdir, tmp_path):
    out = tmp_path / "ab"
    assert main(["ablate", "--config", _cfg(workdir), "--data", _ds(workdir),
                 "--out", str(out), "--workers", "1",
                 "--variants", "mssda,erm"]) == 0
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert len(lines) == 3  # header + 2 variants
    assert lines[1].startswith("mssda,") and lines[2].startswith("erm,")
    doc = json.loads((out / "report.json").read_text())
    assert doc["variants"] == ["mssda", "erm"]


def test_ablate_unknown_variant_exits_one(workdir, tmp_path, capsys):
    assert main(["ablate", "--config", _cfg(workdir), "--data", _ds(workdir),
                 "--out", str(tmp_path / "o"), "--variants", "mssda,magic"]) == 1
    err = capsys.readouterr().err
    assert "magic" in err and "valid" in err
    # Failed before creating any training artifacts.
    assert not (tmp_path / "o" / "report.json").exists()


# -- sweep ------------------------------------------------------------------------


def test_sweep_seven_rows(workdir, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", _cfg(workdir), "--data", _ds(workdir),
                 "--out", str(out), "--workers", "1",
                 "--sweep", "0.3:0.9:0.1"]) == 0
    lines = (out / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "theta,accuracy,positive_votes"
    assert len(lines) == 8  # header + 7 thetas
    votes = [int(line.split(",")[2]) for line in lines[1:]]
    assert votes == sorted(votes, reverse=True)


def test_sweep_bad_grid_exits_one(workdir, tmp_path, capsys):
    for bad in ("0.5", "a:b:c", "0.9:0.3:0.1"):
        assert main(["sweep", "--config", _cfg(workdir), "--data", _ds(workdir),
                     "--out", str(tmp_path / "o"), "--sweep", bad]) == 1
        assert "error:" in capsys.readouterr().err


def test_parse_sweep():
    grid = parse_sweep("0.3:0.9:0.1")
    assert len(grid) == 7 and grid[0] == 0.3 and grid[-1] == 0.9
    with pytest.raises(ConfigError):
        parse_sweep("0.5:0.9")
    with pytest.raises(ConfigError):
        parse_sweep("x:y:z")
    with pytest.raises(InputError):
        parse_sweep("0.9:0.3:0.1")


# -- metrics ----------------------------------------------------------------------


def test_metrics_from_run_dir(run_dir, tmp_path, capsys):
    assert main(["metrics", "--data", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "seed0" in out and "accuracy=" in out
    # Also accepts the report file path directly and writes a CSV with --out.
    assert main(["metrics", "--data", str(run_dir / "report.json"),
                 "--out", str(tmp_path / "m")]) == 0
    lines = (tmp_path / "m" / "metrics.csv").read_text().strip().splitlines()
    assert lines[1].startswith("seed0,")


def test_metrics_matches_report_headline(run_dir, capsys):
    main(["metrics", "--data", str(run_dir)])
    printed = capsys.readouterr().out
    doc = json.loads((run_dir / "report.json").read_text())
    headline = doc["runs"][0]["metrics"]["accuracy"]
    assert f"accuracy={headline:.4f}" in printed


def test_metrics_protocol_override(run_dir, capsys):
    assert main(["metrics", "--data", str(run_dir),
                 "--protocol", "segment_vote"]) == 0
    assert "seed0" in capsys.readouterr().out


def test_metrics_error_paths(tmp_path, capsys):
    assert main(["metrics"]) == 1
    assert main(["metrics", "--data", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    assert main(["metrics", "--data", str(bad)]) == 1
    notreport = tmp_path / "n.json"
    notreport.write_text(json.dumps({"foo": 1}))
    assert main(["metrics", "--data", str(notreport)]) == 1
    malformed = tmp_path / "m.json"
    malformed.write_text(json.dumps({"runs": [{"folds": []}]}))
    assert main(["metrics", "--data", str(malformed)]) == 1
    assert capsys.readouterr().err.count("error:") == 5


# -- parser-level behavior ----------------------------------------------------------


def test_help_documents_defaults(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["--help"])
    assert ei.value.code == 0
    out = capsys.readouterr().out
    assert "generate" in out and "sweep" in out
    assert "exit codes" in out
    assert "epochs=" in out and "theta=0.5" in out


def test_unknown_subcommand_exits_one(capsys):
    assert main(["explode"]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_subcommand_exits_one(capsys):
    assert main([]) == 1
    assert "error:" in capsys.readouterr().err
