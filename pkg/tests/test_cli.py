import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dualspace.cli import main
from dualspace.config import ConfigError, build_config, dump_flat, load_config, parse_lines

TINY = [
    "--set", "data.n=256", "--set", "ae.epochs=2", "--set", "ae.hidden=32",
    "--set", "gan.epochs=2", "--set", "gan.g_hidden=32", "--set", "gan.d_hidden=32",
    "--set", "eval.n_samples=60", "--set", "eval.mmd_rows=60", "--set", "eval.n_holdout_refs=30",
]
TINY_SHAPES = TINY + ["--set", "data.kind=shapes", "--set", "data.holdout=theta_deg:60:120"]


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def both_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("both")
    assert run_cli("run", "both", "--out", out, "--seed", 3, *TINY_SHAPES) == 0
    return out


# ---------------------------------------------------------------- config


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\ndata.kind=ring\ngan.epochs=7\nseed=5\n")
    cfg = load_config(p, {"gan.epochs": "9"})
    assert cfg.data.kind == "ring" and cfg.gan.epochs == 9 and cfg.seed == 5
    again = build_config(parse_lines(dump_flat(cfg)))
    assert dump_flat(again) == dump_flat(cfg)


def test_config_errors_are_collected():
    with pytest.raises(ConfigError) as info:
        build_config({"gan.epochs": "x", "ae.lr": "-1", "nope.key": "1", "data.holdout": "bad"})
    text = "\n".join(info.value.problems)
    for field in ("gan.epochs", "ae.lr", "nope.key", "data.holdout"):
        assert field in text


def test_bad_config_exits_1(tmp_path, capsys):
    assert run_cli("run", "dual", "--out", tmp_path / "r", "--set", "gan.batch_size=0") == 1
    assert "gan.batch_size" in capsys.readouterr().err
    assert run_cli("gen-data", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "g") == 1
    assert not (tmp_path / "r" / "report.json").exists()


def test_missing_dataset_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "images.idx"
    code = run_cli("run", "direct", "--out", tmp_path / "r", "--set", "data.kind=idx", "--set", f"data.images={missing}")
    assert code != 0
    assert str(missing) in capsys.readouterr().err


# ---------------------------------------------------------------- gen-data


def test_gen_data_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run_cli("gen-data", "--out", tmp_path / name, "--seed", 11, *TINY_SHAPES) == 0
    for f in ("dataset.csv", "dataset.json", "dataset.pgm", "config.snapshot"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_data_metadata_regenerates(tmp_path):
    from dualspace.data import ShapeRanges, gen_shapes_dataset

    assert run_cli("gen-data", "--out", tmp_path, "--seed", 4, *TINY_SHAPES) == 0
    meta = json.loads((tmp_path / "dataset.json").read_text())
    d = gen_shapes_dataset(meta["side"], meta["n"], ShapeRanges.from_dict(meta["param_ranges"]), meta["seed"])
    with open(tmp_path / "dataset.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    x = np.array([[float(v) for v in r[:256]] for r in rows[1:]])
    assert np.array_equal(x, d.samples)
    assert meta["holdout"] == "theta_deg:60:120" and meta["n_heldout"] > 0


def test_ring_row_count(tmp_path):
    assert run_cli("gen-data", "--out", tmp_path, "--set", "data.kind=ring", "--set", "data.n=1000") == 0
    with open(tmp_path / "dataset.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1001 and rows[0][:2] == ["x0", "x1"]


# ---------------------------------------------------------------- run


def test_both_writes_two_reports_and_summary(both_run, capsys):
    doc = json.loads((both_run / "report.json").read_text())
    assert doc["status"] == "complete"
    assert sorted(r["arm"] for r in doc["reports"]) == ["direct", "dual_space"]
    assert doc["comparison"] is not None and "gan_phase" in doc["comparison"]["speedup"]
    for f in ("config.snapshot", "losses_direct.csv", "losses_dual_space.csv", "samples_direct.csv",
              "samples_dual_space.csv", "samples_direct.pgm", "samples_dual_space.pgm",
              "latent_samples_dual_space.csv", "models/dual_space_encoder.dsgp", "models/direct_generator.dsgp"):
        assert (both_run / f).is_file(), f
    assert not (both_run / "FAILED").exists()


def test_loss_csv_layout(both_run):
    with open(both_run / "losses_dual_space.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["phase", "epoch", "metric", "value"]
    assert {(r[0], r[2]) for r in rows[1:]} == {("ae_train", "ae_mse"), ("gan_train", "d_loss"), ("gan_train", "g_loss")}


def test_rerun_reproduces_artifacts(both_run, tmp_path):
    assert run_cli("run", "both", "--out", tmp_path, "--seed", 3, *TINY_SHAPES) == 0
    for f in ("losses_direct.csv", "losses_dual_space.csv", "samples_direct.csv", "samples_dual_space.csv",
              "samples_dual_space.pgm", "latent_samples_dual_space.csv"):
        assert (tmp_path / f).read_bytes() == (both_run / f).read_bytes(), f


def test_parallel_matches_sequential(both_run, tmp_path):
    assert run_cli("run", "both", "--parallel", "--out", tmp_path, "--seed", 3, *TINY_SHAPES) == 0
    for f in ("losses_direct.csv", "samples_dual_space.csv"):
        assert (tmp_path / f).read_bytes() == (both_run / f).read_bytes()


def test_phase_failure_writes_failed_marker(tmp_path, capsys):
    code = run_cli("run", "dual", "--out", tmp_path, *TINY, "--set", "data.kind=ring", "--set", "ae.allow_equal_dim=false")
    assert code == 2
    assert (tmp_path / "FAILED").is_file()
    assert "ae_train" in (tmp_path / "FAILED").read_text()
    assert (tmp_path / "config.snapshot").is_file()
    assert run_cli("report", tmp_path) == 2


def test_files_stay_inside_run_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "run"
    assert run_cli("run", "direct", "--out", out, *TINY, "--set", "data.kind=ring") == 0
    assert run_cli("report", out) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run"]


# ---------------------------------------------------------------- report


def test_report_prints_ratios_and_metrics(both_run, capsys):
    assert run_cli("report", both_run) == 0
    text = capsys.readouterr().out
    assert "GAN phase only" in text and "total incl. AE" in text
    doc = json.loads((both_run / "report.json").read_text())
    for r in doc["reports"]:
        for key in r["metrics"]:
            assert key in text
    for f in ("losses_direct.svg", "losses_dual_space.svg", "samples_vs_real.pgm"):
        assert (both_run / f).is_file()


def test_svg_is_well_formed(both_run):
    run_cli("report", both_run)
    root = ET.parse(both_run / "losses_dual_space.svg").getroot()
    assert root.tag.endswith("svg")


def test_identical_arms_print_unit_ratio(tmp_path, capsys):
    assert run_cli("run", "dual", "--out", tmp_path, *TINY, "--set", "data.kind=ring") == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    doc["reports"] = doc["reports"] * 2
    (tmp_path / "report.json").write_text(json.dumps(doc))
    capsys.readouterr()
    assert run_cli("report", tmp_path) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if "GAN phase only" in ln or "total incl. AE" in ln]
    assert len(lines) == 2
    for ln in lines:
        assert ln.split()[-2:] == ["1.00", "1.00"]


def test_report_on_missing_dir(tmp_path):
    assert run_cli("report", tmp_path / "nothing") == 2
