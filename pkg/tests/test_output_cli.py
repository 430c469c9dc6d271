import hashlib
import json

import numpy as np
import pytest

from gbclab.cli import default_config_text, main
from gbclab.scenarios.config import parse_config
from gbclab.scenarios.dilute import run_dilute_scenario
from gbclab.scenarios.measurement import partition_error, run_measurement_scenario
from gbclab.scenarios.nosignaling import run_nosignaling_scenario
from gbclab.scenarios.output import OutputBundle, Table, to_json, write_outputs

SMALL_SIMULATE = """
[grid]
d = 1
particles = 1
points = 32
extent = 16.0
[gravity]
epsilon = 0.05
softening = 1.0
[state]
kind = gaussians
centers = -1.0
[run]
kind = simulate
runs = 6
duration = 0.2
snapshot_stride = 5
"""


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_empty_bundle_list_writes_manifest_only(tmp_path):
    written = write_outputs([], tmp_path, seed=3)
    assert sorted(written) == ["manifest.json"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["files"] == {} and manifest["seed"] == 3


def test_json_uses_seventeen_digits():
    assert to_json(0.1) == "0.10000000000000001"
    assert json.loads(to_json({"a": [1, 2.5], "b": None, "c": True})) == \
        {"a": [1, 2.5], "b": None, "c": True}
    assert to_json(float("nan")) == '"NaN"'


def test_table_rows_must_match_header():
    with pytest.raises(ValueError):
        Table(("a", "b"), [(1, 2, 3)])


def test_manifest_hashes_match_files(tmp_path):
    b = OutputBundle("demo", {"value": 1.5}, {"t.csv": Table(("t", "v"), [(0.0, 1.0)])})
    written = write_outputs([b], tmp_path, figures=False)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for name, entry in manifest["files"].items():
        assert entry["sha256"] == _sha(written[name])
    assert (tmp_path / "t.csv").read_text() == "t,v\n0,1\n"


def test_rerun_gives_identical_csv(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text(SMALL_SIMULATE)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    assert csvs == ["density.csv"]
    for name in csvs:
        assert _sha(outs[0] / name) == _sha(outs[1] / name)
    assert (outs[0] / "density.csv").read_text().splitlines()[0] == "t,x,value"
    assert list(outs[0].glob("*.png"))
    report = json.loads((outs[0] / "report.json").read_text())
    assert report["seed"] == 9
    assert report["results"]["simulate"]["max_norm_error"] < 1e-10


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[gravity]\nepsilon = -0.1\n[run]\nkind = simulate\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "gravity.epsilon" in capsys.readouterr().err
    ok = tmp_path / "sim.cfg"
    ok.write_text(SMALL_SIMULATE)
    assert main(["relax", "--config", str(ok)]) == 2
    assert main(["simulate", "--config", str(ok), "--seed", "-1"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", str(ok), "--out", str(blocker / "x"),
                 "--no-figures"]) == 1


def test_show_config(capsys):
    assert main(["show-config", "measure"]) == 0
    assert capsys.readouterr().out == default_config_text("measurement")


def test_dilute_single_mode_has_zero_rates():
    text = default_config_text("dilute").replace("occupations = 1, 1", "occupations = 3") \
        .replace("indices = 1; 3", "indices = 2")
    rep = run_dilute_scenario(parse_config(text))
    assert np.max(np.abs(rep.rate_full)) == 0.0
    assert rep.correlation_length is None


def test_dilute_two_plane_waves(tmp_path):
    assert main(["fock", "--out", str(tmp_path), "--no-figures"]) == 0
    header = (tmp_path / "rates.csv").read_text().splitlines()[0]
    assert header == "x,rate_full,rate_gradient"
    res = json.loads((tmp_path / "report.json").read_text())["results"]["fock"]
    assert res["correlation_length"] == pytest.approx(1.25, rel=1e-6)
    assert res["oracle_max_difference"] < 1e-10
    assert res["timescale"]["lambda_ratio"] == pytest.approx(1e8, rel=1e-12)


def test_nosignaling_identical_settings_without_collapse():
    cfg = parse_config(default_config_text("nosignaling")).with_run(runs=12, duration=0.5)
    cfg = cfg.with_section("gravity", epsilon=0.0)
    rep = run_nosignaling_scenario(cfg, workers=1, settings=[None, None])
    assert rep.l1 < 1e-10


def test_small_measurement_run():
    cfg = parse_config(default_config_text("measurement")).with_run(
        runs=4, duration=2.0, control=False)
    rep = run_measurement_scenario(cfg, workers=1, sweep=False)
    assert partition_error(rep.outcome) < 1e-8
    b = rep.bundle()
    assert b.tables["branch_weights.csv"].header == (
        "t", "w_branch1", "w_branch2", "w_gap", "w_empty")
    assert rep.born["counted"] + rep.born["flagged"] == 4
