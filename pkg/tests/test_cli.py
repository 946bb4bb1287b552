import json
import subprocess
import sys

import numpy as np
import pytest

from fibertensor import DEMO_TRUTH, DEMO_VOLUME
from fibertensor.cli import main
from fibertensor.io import read_mhd
from fibertensor.report import read_profile_csv, read_tiles_csv

DEMO_ARGS = ["--part-threshold", "40", "--fiber-diameter", "20.4", "--threads", "1"]


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert main(["analyze", str(DEMO_VOLUME), "-o", str(out)] + DEMO_ARGS) == 0
    return out


def test_demo_summary(demo_run):
    s = json.loads((demo_run / "summary.json").read_text())
    assert s["global"]["tensor"]["a_yy"] >= 0.95
    assert s["global"]["alpha"] >= 0.9
    np.testing.assert_allclose(np.abs(s["global"]["mean_direction"]), [0, 1, 0], atol=0.05)
    assert s["tiles"]["edge_vox"] == 64  # 218 um at 3.4 um per voxel
    assert s["config"]["fiber_factor"] == 1.25
    assert "threads" not in s["config"] and "output" not in s["config"]
    assert s["version"] == "0.1.0"


def test_demo_outputs_carry_config(demo_run):
    names = ["tiles.csv", "profile_x.csv", "profile_y.csv", "profile_z.csv",
             "profile_layers.csv"]
    for name in names:
        text = (demo_run / name).read_text()
        assert text.startswith("# fibertensor 0.1.0\n# config: {")
        assert '"part_threshold": 40.0' in text
    layers = read_profile_csv(demo_run / "profile_layers.csv")
    assert len(layers["layer"]) == 12


def test_compare_passes_on_demo(demo_run, capsys):
    assert main(["compare", str(demo_run / "summary.json"), str(DEMO_TRUTH)]) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("PASS")


def test_compare_fails_with_exit_4(demo_run, tmp_path, capsys):
    truth = json.loads(DEMO_TRUTH.read_text())
    truth["truth"].update(a_xx=1.0, a_yy=0.0)
    bad = tmp_path / "truth.json"
    bad.write_text(json.dumps(truth))
    assert main(["compare", str(demo_run / "summary.json"), str(bad)]) == 4
    assert "FAIL a_yy" in capsys.readouterr().out


def test_missing_input_exit_2(tmp_path, capsys):
    missing = tmp_path / "nowhere.mhd"
    assert main(["analyze", str(missing), "-o", str(tmp_path / "o")] + DEMO_ARGS) == 2
    err = capsys.readouterr().err
    assert str(missing) in err and err.count("\n") == 1


def test_tile_edge_below_two_voxels_exit_1(tmp_path, capsys):
    code = main(["analyze", str(DEMO_VOLUME), "-o", str(tmp_path), "--tile-edge", "5"]
                + DEMO_ARGS)
    assert code == 1
    assert "at least 2" in capsys.readouterr().err


@pytest.mark.parametrize("flags", [
    ["--fiber-diameter", "20.4"],  # no part threshold
    ["--part-threshold", "40"],  # no fiber diameter
    ["--part-threshold", "40", "--fiber-diameter", "20.4", "--fiber-factor", "-1"],
    ["--part-threshold", "400", "--fiber-diameter", "20.4"],  # nothing is solid
])
def test_configuration_errors_exit_1(tmp_path, flags):
    assert main(["analyze", str(DEMO_VOLUME), "-o", str(tmp_path)] + flags) == 1


def test_malformed_mhd_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.mhd"
    p.write_text("NDims = 3\nDimSize = 4 4\nElementType = MET_UCHAR\nElementDataFile = x.raw\n")
    assert main(["analyze", str(p), "-o", str(tmp_path / "o")] + DEMO_ARGS) == 2
    assert "DimSize" in capsys.readouterr().err


def test_config_file_then_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"part_threshold": 40, "fiber_diameter": 20.4,
                               "tile_edge": 108.8, "n_layers": 3}))
    out = tmp_path / "o"
    assert main(["analyze", str(DEMO_VOLUME), "-o", str(out), "--config", str(cfg),
                 "--layers", "4"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["tiles"]["edge_vox"] == 32 and s["tiles"]["grid"] == [2, 2, 2]
    assert s["config"]["n_layers"] == 4
    assert len(read_profile_csv(out / "profile_layers.csv")["layer"]) == 4


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"part_threshold": 40, "tile_size": 3}))
    assert main(["analyze", str(DEMO_VOLUME), "-o", str(tmp_path), "--config", str(cfg)]) == 1


def test_identical_runs_identical_bytes(demo_run, tmp_path):
    assert main(["analyze", str(DEMO_VOLUME), "-o", str(tmp_path)] + DEMO_ARGS) == 0
    for name in ["tiles.csv", "profile_z.csv", "profile_layers.csv", "summary.json"]:
        assert (tmp_path / name).read_bytes() == (demo_run / name).read_bytes()


def test_orientation_export(tmp_path):
    assert main(["analyze", str(DEMO_VOLUME), "-o", str(tmp_path), "--export-orientation",
                 "--tile-edge", "108.8"] + DEMO_ARGS) == 0
    v = read_mhd(tmp_path / "orientation_valid.mhd")
    y = read_mhd(tmp_path / "orientation_y.mhd")
    assert v.dims == (64, 64, 64)
    assert np.median(np.abs(y.data[v.data > 0])) > 0.98


def test_raw_input_with_dims(tmp_path):
    raw = DEMO_VOLUME.with_suffix(".raw")
    out = tmp_path / "o"
    assert main(["analyze", str(raw), "-o", str(out), "--dims", "64", "64", "64",
                 "--spacing", "3.4", "3.4", "3.4"] + DEMO_ARGS) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["global"]["tensor"]["a_yy"] >= 0.95
    assert main(["analyze", str(raw), "-o", str(out)] + DEMO_ARGS) == 1  # no --dims


# -- phantom ------------------------------------------------------------------


def _phantom(tmp_path, kind, *extra, name="p"):
    out = tmp_path / name
    code = main(["phantom", kind, "-o", str(out)] + list(extra))
    return code, out


def test_phantom_checksum_deterministic(tmp_path, capsys):
    args = ["--dims", "24", "24", "24", "--n-fibers", "6", "--seed", "3", "--noise"]
    _phantom(tmp_path, "bundle", *args, name="a")
    first = json.loads(capsys.readouterr().out)
    _phantom(tmp_path, "bundle", *args, name="b")
    second = json.loads(capsys.readouterr().out)
    assert first["sha256"] == second["sha256"]
    assert (tmp_path / "a" / "truth.json").read_bytes() == (tmp_path / "b" / "truth.json").read_bytes()


def test_isotropic_phantom_reports_placed_tensor(tmp_path, capsys):
    code, out = _phantom(tmp_path, "isotropic", "--dims", "32", "32", "32", "--diameter", "2",
                         "--n-fibers", "50", "--length", "12", "--seed", "1")
    assert code == 0
    info = json.loads(capsys.readouterr().out)
    truth = json.loads((out / "truth.json").read_text())
    assert info["placed_axes_tensor"] == truth["truth"]
    assert set(truth["truth"]) == {"a_xx", "a_yy", "a_zz", "a_xy", "a_xz", "a_yz"}
    assert sum(truth["truth"][k] for k in ("a_xx", "a_yy", "a_zz")) == pytest.approx(1.0)


def test_shell_core_phantom_truth_layers(tmp_path):
    code, out = _phantom(tmp_path, "shell-core", "--dims", "24", "24", "24", "--diameter", "2",
                         "--layers", "3")
    assert code == 0
    layers = json.loads((out / "truth.json").read_text())["truth_layers"]
    assert [round(t["a_yy"], 12) for t in layers] == [1.0, 0.0, 1.0]


def test_phantom_packing_error_exit_1(tmp_path, capsys):
    code, _ = _phantom(tmp_path, "bundle", "--dims", "16", "16", "16", "--diameter", "6",
                       "--n-fibers", "100")
    assert code == 1
    assert "do not fit" in capsys.readouterr().err


def test_shell_core_guard_exit_1(tmp_path):
    code, _ = _phantom(tmp_path, "shell-core", "--dims", "32", "32", "20", "--diameter", "2",
                       "--tile-edge-vox", "8")
    assert code == 1


# -- profile ------------------------------------------------------------------


def test_profile_from_tiles(demo_run, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["profile", str(demo_run / "tiles.csv"), "--layers", "12", "-o", str(out)]) == 0
    a, b = read_profile_csv(out), read_profile_csv(demo_run / "profile_layers.csv")
    for key in ("a_xx", "a_yy", "a_zz", "center_um", "count"):
        np.testing.assert_array_equal(a[key], b[key])


def test_profile_single_tile_one_layer(tmp_path):
    tiles = tmp_path / "t.csv"
    tiles.write_text("ix,iy,iz,count,a_xx,a_yy,a_zz,a_xy,a_xz,a_yz,valid\n"
                     "0,0,0,50,0.2,0.7,0.1,0.05,0.0,0.01,1\n")
    out = tmp_path / "p.csv"
    assert main(["profile", str(tiles), "--layers", "1", "-o", str(out)]) == 0
    p = read_profile_csv(out)
    np.testing.assert_allclose([p["a_xx"][0], p["a_yy"][0], p["a_zz"][0]], [0.2, 0.7, 0.1])
    assert p["count"][0] == 50
    assert read_tiles_csv(tiles).shape == (1, 1, 1)


def test_profile_missing_column_exit_1(tmp_path, capsys):
    tiles = tmp_path / "t.csv"
    tiles.write_text("ix,iy,iz,count,a_xx,a_yy,a_xy,a_xz,a_yz,valid\n0,0,0,1,1,0,0,0,0,1\n")
    assert main(["profile", str(tiles)]) == 1
    assert "a_zz" in capsys.readouterr().err


def test_module_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "fibertensor", "analyze", "--help"],
                       capture_output=True, text=True, check=True)
    assert "--part-threshold" in r.stdout and "default 1.25" in r.stdout
