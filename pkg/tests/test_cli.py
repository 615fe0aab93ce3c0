import json
import re
from dataclasses import fields

import numpy as np
import pytest

from mpcslam import cli, io
from mpcslam.geometry import visible
from mpcslam.scenario import letter_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_help_lists_every_field_with_default(capsys):
    parser = cli.build_parser()
    helps = []
    for name in ("simulate", "track", "slam"):
        with pytest.raises(SystemExit):
            parser.parse_args([name, "--help"])
        helps.append(capsys.readouterr().out)
    text = re.sub(r"\s+", " ", " ".join(helps))
    defaults = cli.RunConfig()
    for f in fields(cli.RunConfig):
        flag = "--" + f.name.replace("_", "-")
        assert flag in text, flag
        if f.type not in ("bool", bool):
            assert f"(default: {getattr(defaults, f.name)})" in text


def test_bundled_scenario_los_always_visible():
    sc = cli._resolve_scenario("bundled:lund_synthetic.json")
    assert len(sc.trajectory) >= 2000
    feats = sc.features()
    los = [f for f in feats if f.order == 0][0]
    sub = sc.trajectory.positions[::25]
    assert all(visible(p, los, sc.pa, sc.surfaces) for p in sub)
    truth = sc.ground_truth(feats)
    assert truth["visible"][:, feats.index(los)].all()


def test_letter_generator_contract():
    P = letter_path("L", area=2.0, step=0.01)
    w, h = np.ptp(P[:, 0]), np.ptp(P[:, 1])
    assert w * h == pytest.approx(2.0, rel=1e-9)
    assert np.all(np.linalg.norm(np.diff(P, axis=0), axis=1) <= 0.01 + 1e-12)


def test_simulate_text_option(tmp_path):
    assert run("simulate", "--seed", 1, "--text", "L", "--area", 2.0, "--distances-only",
               "--out", tmp_path) == 0
    truth = io.read_truth(tmp_path / "truth.json")
    P = truth["positions"]
    assert np.ptp(P[:, 0]) * np.ptp(P[:, 1]) == pytest.approx(2.0, rel=1e-6)


def test_simulate_is_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run("simulate", "--seed", 3, "--max-snapshots", 5, "--out", tmp_path / sub) == 0
    for name in ("snapshots.bin", "snapshots.bin.json", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_requires_seed(capsys):
    with pytest.raises(SystemExit) as exc:
        run("simulate", "--out", "x")
    assert exc.value.code == 2


def test_config_error_exit_code(tmp_path, capsys):
    assert run("simulate", "--seed", 1, "--area", -1, "--out", tmp_path) == 2
    assert "simulate:" in capsys.readouterr().err


def test_invalid_scenario_reports_pointer(tmp_path, capsys):
    from importlib import resources

    doc = json.loads((resources.files("mpcslam") / "data" / "lund_synthetic.json").read_text())
    doc["surfaces"][1]["normal"] = [1, 0]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run("simulate", "--seed", 1, "--scenario", bad, "--out", tmp_path / "o") == 2
    assert "/surfaces/1" in capsys.readouterr().err


def test_corrupt_snapshot_file(tmp_path, capsys):
    (tmp_path / "s.bin").write_bytes(b"NOTMAGIC" + bytes(12))
    assert run("track", "--snapshots", tmp_path / "s.bin", "--out", tmp_path) == 2
    assert "magic" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    # a single track cannot support the windowed reconstruction
    (tmp_path / "d.csv").write_text("n,k,d_m,az_rad,el_rad,sinr_db\n"
                                    + "".join(f"{n},0,{1 + 0.01 * n},0,0,10\n" for n in range(50)))
    assert run("slam", "--distances", tmp_path / "d.csv", "--out", tmp_path) == 3
    assert "slam:" in capsys.readouterr().err


def test_known_positions_needs_truth(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("n,k,d_m,az_rad,el_rad,sinr_db\n0,0,1.0,0,0,0\n")
    assert run("slam", "--known-positions", "--distances", tmp_path / "d.csv", "--out", tmp_path) == 2
    assert "--truth" in capsys.readouterr().err


def test_experiment_one_on_clean_distances(tmp_path):
    assert run("simulate", "--seed", 2, "--distances-only", "--outlier-ratio", 0.0,
               "--sigma-inl", 1e-9, "--max-snapshots", 200, "--out", tmp_path) == 0
    assert run("slam", "--known-positions", "--sigma-inl", 0.01, "--distances",
               tmp_path / "distances.csv", "--truth", tmp_path / "truth.json", "--out", tmp_path) == 0
    rep = io.read_report(tmp_path / "report.json")
    assert rep["inlier_ratio"] == 1.0
    assert rep["resid_std_m"] < 1e-6


def test_track_stage_writes_table_and_archive(tmp_path):
    assert run("simulate", "--seed", 4, "--max-snapshots", 6, "--out", tmp_path) == 0
    assert run("track", "--snapshots", tmp_path / "snapshots.bin", "--n-az", 90, "--n-el", 24,
               "--k-max", 5, "--out", tmp_path) == 0
    table = io.read_table(tmp_path / "distances.csv")
    assert set(table.n) == set(range(6))
    arch = io.read_archive(tmp_path / "tracks.jsonl")
    assert {a["id"] for a in arch} == set(table.tracks())


# plots and the full pipeline --------------------------------------------------


def test_run_all_report(smoke_runs):
    rep = io.read_report(smoke_runs[0] / "report.json")
    assert set(rep) == {"rmse_m", "max_dev_m", "inlier_ratio", "resid_std_m"}
    assert all(np.isfinite(v) for v in rep.values())


def test_run_all_deterministic(smoke_runs):
    a, b = smoke_runs
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_trajectory_svg_has_one_vertex_per_agent(smoke_runs):
    out = smoke_runs[0]
    m = io.read_map(out / "map.json")
    svg = (out / "trajectory.svg").read_text()
    pts = re.search(r'<polyline class="estimate" points="([^"]*)"', svg).group(1).split()
    assert len(pts) == len(m.agents)


def test_feature_svg_marks_pa(smoke_runs):
    svg = (smoke_runs[0] / "features.svg").read_text()
    assert svg.count('class="pa"') == 1
    assert 'class="va"' in svg
    assert ">PA<" in svg and ">VA<" in svg


def test_plot_is_deterministic(smoke_runs, tmp_path):
    src = smoke_runs[0]
    args = ["plot", "--map", src / "map.json", "--distances", src / "distances.csv",
            "--truth", src / "truth.json"]
    assert run(*args, "--out", tmp_path) == 0
    for name in ("trajectory.svg", "features.svg", "distances.svg"):
        assert (tmp_path / name).read_bytes() == (src / name).read_bytes()
    assert not re.search(r"\d{4}-\d{2}-\d{2}", (tmp_path / "trajectory.svg").read_text())


def test_run_all_missing_seed(tmp_path, capsys):
    man = tmp_path / "m.json"
    man.write_text(json.dumps({"scenario": "bundled:lund_synthetic.json"}))
    assert run("run-all", "--manifest", man, "--out", tmp_path) == 2
    assert "seed" in capsys.readouterr().err


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        cli.RunConfig().updated({"nope": 1})
    with pytest.raises(ValueError):
        cli.RunConfig(max_step="fast").validate()
    assert cli.RunConfig(max_step="0.05").max_step_value() == 0.05


def test_pick_pa_track_prefers_short_long_lived():
    from mpcslam.table import DistanceTable

    n = np.r_[np.arange(50), np.arange(50), np.arange(5)]
    k = np.r_[np.zeros(50), np.ones(50), 2 * np.ones(5)].astype(int)
    d = np.r_[np.full(50, 3.0), np.full(50, 2.0), np.full(5, 0.5)]
    assert cli.pick_pa_track(DistanceTable.from_pairs(n, k, d)) == 1


def test_threads_env(monkeypatch):
    from mpcslam import slam

    monkeypatch.setenv("MPC_SLAM_THREADS", "2")
    assert slam._threads() == 2
    monkeypatch.setenv("MPC_SLAM_THREADS", "0")
    assert slam._threads() >= 1

