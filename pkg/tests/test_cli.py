import json
import os

import numpy as np
import pytest

import dipmotion
from dipmotion import cli
from dipmotion import kinematics as kin
from dipmotion import planner
from dipmotion import scene as sc


def write_scenario(path, action="locomotion", goal=(0.0, 1.0, 0.95),
                   scene=None, **over):
    doc = {
        "seed": 3,
        "initial_pose": [float(v) for v in kin.standing_pose()],
        "tasks": [{"action": action,
                   "goal_joints": [{"joint": 0, "xyz": list(goal)}]}],
        "overrides": {"num_steps": 8, **over},
    }
    if scene is not None:
        doc["scene"] = scene
    path.write_text(json.dumps(doc))
    return str(path)


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert dipmotion.__version__ in capsys.readouterr().out


def test_bake_roundtrip(tmp_path, capsys):
    spec = {"origin": [-1.0, -1.0, -0.5], "spacing": 0.25, "dims": [9, 9, 5],
            "obstacles": [{"type": "box", "center": [0.0, 0.0, 0.4],
                           "half_extents": [0.4, 0.4, 0.4]}]}
    spec_path = tmp_path / "scene.json"
    spec_path.write_text(json.dumps(spec))
    out = tmp_path / "scene.dips"
    assert cli.main(["bake", "--spec", str(spec_path),
                     "--out", str(out)]) == 0
    assert "9x9x5" in capsys.readouterr().out
    grid = sc.load_grid(str(out))
    direct = sc.bake_spec(spec)
    assert np.array_equal(grid.values, direct.values.astype(np.float32))
    assert np.array_equal(grid.walkable, direct.walkable)


def test_bake_bad_spec(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["bake", "--spec", str(bad),
                     "--out", str(tmp_path / "x.dips")]) == 2
    missing = tmp_path / "missing_dims.json"
    missing.write_text(json.dumps({"origin": [0, 0, 0], "spacing": 0.5}))
    assert cli.main(["bake", "--spec", str(missing),
                     "--out", str(tmp_path / "y.dips")]) == 2
    capsys.readouterr()


def test_run_outputs(tmp_path, capsys):
    scn = write_scenario(tmp_path / "walk.json")
    out = tmp_path / "run1"
    assert cli.main(["run", "--scenario", scn, "--out", str(out)]) == 0
    for name in ("trace.csv", "rewards_trace.csv", "metrics.txt",
                 "manifest.json"):
        assert (out / name).exists()

    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0].startswith("frame,pose_0,")
    assert trace[0].endswith("right_wrist_x,right_wrist_y,right_wrist_z")
    assert len(trace) == 1 + 160
    assert trace[1].split(",")[0] == "1"

    rewards_rows = (out / "rewards_trace.csv").read_text().splitlines()
    assert rewards_rows[0] == ("task,t,his,acc,goal,cont,pene,skt,"
                               "total,nat_proxy")
    assert len(rewards_rows) == 1 + 8

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["mode"] == "inversion"
    assert manifest["inpaint"] is True
    assert manifest["steps"] == 8
    assert manifest["version"] == dipmotion.__version__
    assert manifest["scene"] is None

    metrics = (out / "metrics.txt").read_text().splitlines()
    assert any(line.startswith("final_goal_distance ") for line in metrics)
    assert all(not line.startswith("penetration") for line in metrics)
    capsys.readouterr()


def test_run_repeatable_and_seed_sensitive(tmp_path, capsys):
    scn = write_scenario(tmp_path / "walk.json")
    outs = [tmp_path / f"run{i}" for i in range(3)]
    for out in outs[:2]:
        assert cli.main(["run", "--scenario", scn, "--out", str(out)]) == 0
    assert ((outs[0] / "trace.csv").read_bytes()
            == (outs[1] / "trace.csv").read_bytes())
    assert cli.main(["run", "--scenario", scn, "--out", str(outs[2]),
                     "--seed", "4"]) == 0
    assert ((outs[0] / "trace.csv").read_bytes()
            != (outs[2] / "trace.csv").read_bytes())
    manifest = json.loads((outs[2] / "manifest.json").read_text())
    assert manifest["seed"] == 4
    capsys.readouterr()


def test_run_no_inpaint_flag(tmp_path, capsys):
    scn = write_scenario(tmp_path / "walk.json")
    out = tmp_path / "run_ni"
    assert cli.main(["run", "--scenario", scn, "--out", str(out),
                     "--no-inpaint"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["inpaint"] is False
    capsys.readouterr()


def test_run_invalid_inputs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 0}))
    assert cli.main(["run", "--scenario", str(bad),
                     "--out", str(tmp_path / "o1")]) == 2
    assert cli.main(["run", "--scenario", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o2")]) == 2
    capsys.readouterr()


def test_run_sit_without_scene_is_runtime_error(tmp_path, capsys):
    scn = write_scenario(tmp_path / "sit.json", action="sit",
                         goal=(0.0, 1.0, 0.55))
    code = cli.main(["run", "--scenario", scn,
                     "--out", str(tmp_path / "o")])
    assert code == 3
    assert "task 0" in capsys.readouterr().err


def test_check_self_tests(capsys):
    assert cli.main(["check"]) == 0
    out = capsys.readouterr().out
    for name in ("grad", "schedule", "blend"):
        assert f"PASS {name}" in out


def test_ablate_table(tmp_path, capsys):
    scn = write_scenario(tmp_path / "walk.json", goal=(0.0, 0.5, 0.95))
    out = tmp_path / "ablate"
    assert cli.main(["ablate", "--scenario", scn, "--out", str(out),
                     "--seeds", "1", "--steps", "6"]) == 0
    table = (out / "table.csv").read_text().splitlines()
    assert table[0].startswith("mode,inpaint,seed,final_goal_distance")
    assert len(table) == 1 + 6        # 3 modes x inpaint on/off x 1 seed
    modes = {row.split(",")[0] for row in table[1:]}
    assert modes == {"inversion", "direct", "unguided"}
    summary = (out / "table.txt").read_text().splitlines()
    assert len(summary) == 6
    assert capsys.readouterr().out.count("inpaint=") == 6


def test_packaged_scenarios_load():
    assets = os.path.join(os.path.dirname(dipmotion.__file__), "assets")
    names = [n for n in os.listdir(assets) if n.startswith("scenario_")]
    assert len(names) == 4
    for name in sorted(names):
        script = planner.load_script(os.path.join(assets, name))
        assert script.tasks
        if script.scene_path is not None:
            assert os.path.exists(script.scene_path)
