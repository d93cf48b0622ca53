import json
import math

import pytest

from dhm.cli import main
from dhm.core import Config
from dhm.dynamic_map import DynamicHilbertMap
from dhm.formats import read_frames, write_frames
from dhm.sim import default_scene, simulate


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def frames_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("frames") / "scene.txt"
    write_frames(simulate(default_scene(0, 5)).frames, path)
    return path


@pytest.fixture(scope="module")
def snapshot(tmp_path_factory, frames_file):
    path = tmp_path_factory.mktemp("snap") / "map.npz"
    assert main(["run", "--frames", str(frames_file), "--save", str(path)]) == 0
    return path


def test_run_prints_step_count(capsys, frames_file, tmp_path):
    code, out, _ = run(capsys, "run", "--frames", frames_file, "--render-every", 2,
                       "--out-dir", tmp_path / "img", "--bounds", "-8,0,8,8", "--res", 0.5)
    assert code == 0 and out.strip() == "steps: 5"
    assert sorted(p.name for p in (tmp_path / "img").iterdir()) == ["frame_00001.pgm", "frame_00003.pgm"]


def test_empty_frame_file(capsys, tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("dhm-frames v1 dim=2\n")
    code, _, err = run(capsys, "run", "--frames", p)
    assert code == 2 and err.strip() == "dhm-error: no frames"


def test_bad_frame_file_reports_line(capsys, tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("dhm-frames v1 dim=2\n0 0 0 1 0 0\n0 0 0 1 0\n")
    code, _, err = run(capsys, "run", "--frames", p)
    assert code == 2 and err.startswith("dhm-error: line 3:") and err.count("\n") == 1


def test_query_matches_library_and_render(capsys, snapshot, frames_file):
    dhm = DynamicHilbertMap().fit(read_frames(frames_file))
    for t in (2, 4, 9):
        code, out, _ = run(capsys, "query", "--load", snapshot, "--at", "-3.5,3", "--time", t)
        assert code == 0 and abs(float(out) - dhm.query([-3.5, 3.0], t)) < 5e-7
    grid = DynamicHilbertMap.load(snapshot).render_grid(4, (-4.0, 2.5, -3.0, 3.5), 0.5)
    code, out, _ = run(capsys, "query", "--load", snapshot, "--at", "-3.75,2.75", "--time", 4)
    assert out.strip() == f"{grid[0, 0]:.6f}"


def test_query_untrained_snapshot(capsys, tmp_path):
    path = tmp_path / "blank.json"
    DynamicHilbertMap(Config()).save(path)
    code, out, _ = run(capsys, "query", "--load", path, "--at", "1,2", "--time", 0)
    assert code == 0 and out.strip() == f"{1 / (1 + math.e):.6f}" == "0.268941"


def test_query_before_history(capsys, snapshot):
    code, _, err = run(capsys, "query", "--load", snapshot, "--at", "0,1", "--time", -1)
    assert code == 3 and err.startswith("dhm-error:")


def test_render_is_bit_exact(capsys, snapshot, tmp_path):
    outs = []
    for name in ("a.pgm", "b.pgm"):
        code, _, _ = run(capsys, "render", "--load", snapshot, "--time", 6, "--bounds", "-8,0,8,8",
                         "--res", 0.25, "--out", tmp_path / name)
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1] and outs[0].startswith(b"P5\n64 32\n255\n")
    code, _, _ = run(capsys, "render", "--load", snapshot, "--bounds", "-8,0,8,8", "--res", 0.25,
                     "--out", tmp_path / "c.ppm", "--ppm")
    assert code == 0 and (tmp_path / "c.ppm").read_bytes().startswith(b"P6\n64 32\n255\n")


@pytest.mark.parametrize("bounds, res", [("0,0,0,1", "0.1"), ("0,0,1,1", "0"), ("0,0,10000,10000", "0.01")])
def test_render_grid_errors(capsys, snapshot, tmp_path, bounds, res):
    code, _, err = run(capsys, "render", "--load", snapshot, "--bounds", bounds, "--res", res,
                       "--out", tmp_path / "x.pgm")
    assert code == 4 and err.startswith("dhm-error:")


def test_save_load_query_round_trip(capsys, frames_file, tmp_path):
    values = {}
    for suffix in (".json", ".npz"):
        snap = tmp_path / f"m{suffix}"
        assert run(capsys, "run", "--frames", frames_file, "--save", snap)[0] == 0
        code, out, _ = run(capsys, "query", "--load", snap, "--at", "4,5", "--time", 7)
        values[suffix] = float(out)
    assert values[".json"] == values[".npz"]


def test_usage_errors(capsys, snapshot, tmp_path):
    assert run(capsys)[0] == 2
    assert run(capsys, "query", "--load", snapshot, "--at", "1")[0] == 2
    assert run(capsys, "query", "--load", tmp_path / "missing.npz", "--at", "1,1")[0] == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[nope]\n")
    code, _, err = run(capsys, "run", "--frames", tmp_path / "x.txt", "--config", bad)
    assert code == 2 and err.startswith("dhm-error:")


def test_simulate_is_deterministic(capsys, tmp_path):
    for name in ("a.txt", "b.txt"):
        assert run(capsys, "simulate", "--scene", "default", "--out", tmp_path / name, "--seed", 3)[0] == 0
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps(default_scene(3, 2).to_dict()))
    assert run(capsys, "simulate", "--scene", scene, "--out", tmp_path / "c.txt")[0] == 0
    assert len(read_frames(tmp_path / "c.txt")) == 2


def test_eval_is_deterministic_with_both_columns(capsys, tmp_path):
    reports = []
    for name in ("r1.json", "r2.json"):
        code, out, _ = run(capsys, "eval", "--scene", "default", "--train-frames", 5, "--horizons", "0,1,3",
                           "--seeds", 1, "--region", "default", "--out", tmp_path / name)
        assert code == 0 and "DHM" in out and "HM" in out
        r = json.loads((tmp_path / name).read_text())
        r.pop("timing_ms")
        reports.append(r)
    assert reports[0] == reports[1]
    assert reports[0]["schema"] == "dhm-report-v1"
    assert set(reports[0]["horizons"]["DHM"]) == set(reports[0]["horizons"]["HM"]) == {"0", "1", "3"}


def test_eval_on_frame_file(capsys, frames_file):
    code, out, _ = run(capsys, "eval", "--frames", frames_file, "--train-frames", 3, "--horizons", "0,1",
                       "--seeds", 1)
    assert code == 0 and "F-MEAS" in out


def test_bench_accounting(capsys, frames_file):
    code, out, _ = run(capsys, "bench", "--frames", frames_file, "--json")
    assert code == 0
    r = json.loads(out)
    stages = r["stages_ms_mean"]
    assert set(stages) == {"cluster", "segment", "icp", "kf", "incorporate", "train", "query"}
    assert all(v >= 0 for v in stages.values())
    assert sum(stages.values()) <= 1.05 * r["step_ms_mean"]
    assert r["step_ms_p95"] >= r["step_ms_mean"] - 1e-9
    code, out, _ = run(capsys, "bench", "--frames", frames_file)
    assert code == 0 and "p95" in out
