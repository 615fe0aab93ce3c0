"""Command-line pipeline: simulate, track, slam, plot and run-all.

Exit codes: 0 on success, 2 for configuration or input errors, 3 when a
numerical stage fails. Failures print ``<stage>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import ekf, io, plots, slam
from .scenario import ScenarioError, load_scenario, letter_path, scenario_from_dict, synthesize
from .table import DistanceTable

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


@dataclass
class RunConfig:
    """Every tunable of the pipeline with its default."""

    seed: int | None = None
    # simulate
    scenario: str = "bundled:lund_synthetic.json"
    text: str | None = None
    area: float = 2.0
    step: float | None = None
    max_snapshots: int = 0
    distances_only: bool = False
    outlier_ratio: float = 0.25
    # track
    k_max: int = 30
    beta_max: float = 0.95
    eps_r: float = 0.0
    eps_birth: float = 20.0
    q_d: float = 1e-4
    q_az: float = 1e-6
    q_el: float = 1e-6
    q_alpha: float = 1e-4
    q_phase: float = 1e-4
    n_az: int = 360
    n_el: int = 90
    iterations: int = 5
    # slam
    known_positions: bool = False
    sigma_inl: float = slam.SIGMA_INL
    segment_length: int = 100
    segment_overlap: int = 50
    ransac_confidence: float = 0.999
    outlier_prior: float = 0.25
    max_step: str = "auto"
    pa_track: int = -1

    def validate(self) -> None:
        checks = [
            (self.area > 0, "area must be positive"),
            (self.step is None or self.step > 0, "step must be positive"),
            (self.max_snapshots >= 0, "max-snapshots must be >= 0"),
            (0 <= self.outlier_ratio < 1, "outlier-ratio must lie in [0, 1)"),
            (self.k_max >= 1, "k-max must be >= 1"),
            (0 < self.beta_max <= 1, "beta-max must lie in (0, 1]"),
            (min(self.q_d, self.q_az, self.q_el, self.q_alpha, self.q_phase) >= 0,
             "process noise variances must be >= 0"),
            (self.n_az >= 4 and self.n_el >= 2, "angle grids too coarse"),
            (self.iterations >= 1, "iterations must be >= 1"),
            (self.sigma_inl > 0, "sigma-inl must be positive"),
            (0 <= self.segment_overlap < self.segment_length, "segment-overlap must lie in [0, length)"),
            (0 < self.ransac_confidence < 1, "ransac-confidence must lie in (0, 1)"),
            (0 <= self.outlier_prior < 1, "outlier-prior must lie in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        self.max_step_value()

    def max_step_value(self):
        if self.max_step in ("auto", "none"):
            return None if self.max_step == "none" else "auto"
        try:
            v = float(self.max_step)
        except ValueError:
            raise ValueError("max-step must be 'auto', 'none' or a distance in meters") from None
        if not v > 0:
            raise ValueError("max-step must be positive")
        return v

    def tracker(self) -> ekf.TrackerConfig:
        pn = ekf.ProcessNoise(self.q_d, self.q_az, self.q_el, self.q_alpha, self.q_phase)
        return ekf.TrackerConfig(k_max=self.k_max, beta_max=self.beta_max, eps_r=self.eps_r,
                                 eps_birth=self.eps_birth, process=pn, n_az=self.n_az,
                                 n_el=self.n_el, iterations=self.iterations)

    def updated(self, overrides: dict) -> "RunConfig":
        names = {f.name for f in fields(self)}
        bad = sorted(set(overrides) - names)
        if bad:
            raise ValueError(f"unknown configuration keys {bad}")
        return dataclasses.replace(self, **overrides)


STAGE_FIELDS = {
    "simulate": ["seed", "scenario", "text", "area", "step", "max_snapshots", "distances_only",
                 "outlier_ratio", "sigma_inl"],
    "track": ["k_max", "beta_max", "eps_r", "eps_birth", "q_d", "q_az", "q_el", "q_alpha",
              "q_phase", "n_az", "n_el", "iterations"],
    "slam": ["seed", "known_positions", "sigma_inl", "segment_length", "segment_overlap",
             "ransac_confidence", "outlier_prior", "max_step", "pa_track"],
}

HELP = {
    "seed": "random seed",
    "scenario": "scenario JSON path or bundled:<name>",
    "text": "override the trajectory with this text rendered as letters",
    "area": "side of the square the letters are fitted into (m)",
    "step": "trajectory sample spacing (m); default from the scenario",
    "max_snapshots": "keep only the first N snapshots (0 = all)",
    "distances_only": "skip the radio channel, write a distance table from geometry",
    "outlier_ratio": "outlier fraction for --distances-only",
    "k_max": "maximum number of paths per snapshot",
    "beta_max": "stop detection once this energy fraction is explained",
    "eps_r": "SINR (dB) below which a track dies",
    "eps_birth": "SINR (dB) a new detection needs to start a track",
    "q_d": "process noise of the distance rate (m^2)",
    "q_az": "process noise of the azimuth rate (rad^2)",
    "q_el": "process noise of the elevation rate (rad^2)",
    "q_alpha": "process noise of the weight magnitudes",
    "q_phase": "process noise of the weight phases (rad^2)",
    "n_az": "azimuth grid size for detection",
    "n_el": "elevation grid size for detection",
    "iterations": "iterated-update passes per snapshot",
    "known_positions": "locate features with the true agent positions (needs --truth)",
    "sigma_inl": "inlier distance deviation (m)",
    "segment_length": "window length in time instances",
    "segment_overlap": "overlap of consecutive windows",
    "ransac_confidence": "probability of drawing one clean sample",
    "outlier_prior": "assumed outlier fraction for RANSAC iteration counts",
    "max_step": "agent speed bound (m per instance), 'auto' or 'none'",
    "pa_track": "track id of the direct path (-1 = shortest track)",
}


def _add_fields(p: argparse.ArgumentParser, names, required=()):
    defaults = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    for name in names:
        flag = "--" + name.replace("_", "-")
        default = getattr(defaults, name)
        if types[name] in ("bool", bool):
            p.add_argument(flag, dest=name, action="store_true", help=HELP[name])
            continue
        t = types[name]
        conv = int if "int" in str(t) else float if "float" in str(t) else str
        p.add_argument(flag, dest=name, type=conv, default=default, required=name in required,
                       help=HELP[name])


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="mpcslam", description=__doc__, formatter_class=fmt)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesise snapshots (or a distance table) and truth",
                       formatter_class=fmt)
    _add_fields(p, STAGE_FIELDS["simulate"], required=("seed",))
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("track", help="track paths and write the distance table", formatter_class=fmt)
    p.add_argument("--snapshots", required=True, help="snapshot file from simulate")
    p.add_argument("--out", required=True, help="output directory")
    _add_fields(p, STAGE_FIELDS["track"])

    p = sub.add_parser("slam", help="localisation and mapping from the distance table",
                       formatter_class=fmt)
    p.add_argument("--distances", required=True, help="distance table CSV")
    p.add_argument("--truth", default=None, help="truth JSON (needed for --known-positions)")
    p.add_argument("--out", required=True, help="output directory")
    _add_fields(p, STAGE_FIELDS["slam"])

    p = sub.add_parser("plot", help="write SVG figures", formatter_class=fmt)
    p.add_argument("--map", default=None, help="map estimate JSON")
    p.add_argument("--distances", default=None, help="distance table CSV")
    p.add_argument("--truth", default=None, help="truth JSON to overlay")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run-all", help="simulate, track, slam and plot from one manifest",
                       formatter_class=fmt)
    p.add_argument("--manifest", required=True,
                   help="JSON with 'scenario' (path or object), 'seed' and 'config' overrides")
    p.add_argument("--out", required=True, help="output directory")
    return ap


class StageError(Exception):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(message)
        self.stage, self.code = stage, code


def _config_from_args(args) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    cfg = RunConfig().updated({k: v for k, v in vars(args).items() if k in names})
    cfg.validate()
    return cfg


def _resolve_scenario(spec):
    if isinstance(spec, dict):
        return scenario_from_dict(spec)
    if str(spec).startswith("bundled:"):
        name = str(spec).split(":", 1)[1]
        ref = resources.files("mpcslam") / "data" / name
        if not ref.is_file():
            raise FileNotFoundError(f"no bundled scenario {name!r}")
        with resources.as_file(ref) as path:
            return load_scenario(path)
    return load_scenario(spec)


# ---------------------------------------------------------------------------
# stages


def do_simulate(cfg: RunConfig, scenario_spec, out: Path) -> dict:
    sc = _resolve_scenario(scenario_spec)
    if cfg.text is not None:
        step = cfg.step
        if step is None:
            step = float(np.median(sc.trajectory.steps)) if len(sc.trajectory) > 1 else 0.005
        origin = tuple(float(v) for v in sc.trajectory.positions.min(axis=0))
        sc.trajectory.positions = letter_path(cfg.text, cfg.area, step, origin)
    if cfg.max_snapshots:
        sc.trajectory.positions = sc.trajectory.positions[: cfg.max_snapshots]
    sc.trajectory.check_spacing(sc.rf.wavelength)
    out.mkdir(parents=True, exist_ok=True)
    feats = sc.features()
    if cfg.distances_only:
        truth = sc.ground_truth(feats)
        truth["positions"] = sc.trajectory.positions
        truth["features"] = np.array([f.position for f in feats])
        truth["orders"] = np.array([f.order for f in feats])
        table = slam.synthetic_table(truth["positions"], truth["features"], truth["visible"],
                                     cfg.sigma_inl, cfg.outlier_ratio, seed=cfg.seed)
        io.write_table(out / "distances.csv", table)
    else:
        Y, truth = synthesize(sc, cfg.seed, feats)
        io.write_snapshots(out / "snapshots.bin", Y, sc.rf, cfg.seed)
    io.write_truth(out / "truth.json", truth)
    return {"n_snapshots": len(sc.trajectory), "n_features": len(feats)}


def do_track(cfg: RunConfig, snapshots: Path, out: Path) -> DistanceTable:
    Y, rf, _ = io.read_snapshots(snapshots)
    res = ekf.run_filter(Y, rf, cfg.tracker())
    table = DistanceTable.from_rows(res.rows) if res.rows else DistanceTable.from_pairs([], [], [])
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / "distances.csv", table)
    io.write_archive(out / "tracks.jsonl", res.archive)
    return table


def pick_pa_track(table: DistanceTable) -> int:
    """The direct path is the shortest one; among long tracks take the least median distance."""
    best = None
    lengths = {k: len(table.track(k)[0]) for k in table.tracks()}
    if not lengths:
        raise slam.SolvabilityError("distance table is empty")
    thr = 0.5 * max(lengths.values())
    for k, cnt in lengths.items():
        if cnt >= thr:
            med = float(np.median(table.track(k)[1]))
            if best is None or med < best[0]:
                best = (med, k)
    return best[1]


def do_slam(cfg: RunConfig, distances: Path, truth_path: Path | None, out: Path):
    table = io.read_table(distances)
    truth = io.read_truth(truth_path) if truth_path else None
    if cfg.known_positions:
        if truth is None:
            raise ValueError("--known-positions needs --truth with the agent positions")
        m = slam.experiment_one(table, truth["positions"], cfg.sigma_inl, cfg.seed or 0,
                                cfg.ransac_confidence, cfg.outlier_prior)
    else:
        pa = cfg.pa_track if cfg.pa_track >= 0 else pick_pa_track(table)
        m = slam.experiment_two(table, cfg.sigma_inl, cfg.segment_length, cfg.segment_overlap,
                                cfg.seed or 0, pa, cfg.ransac_confidence, cfg.outlier_prior,
                                max_step=cfg.max_step_value())
    m.update_stats(table)
    if truth is not None:
        report = slam.evaluate(m, truth["positions"], table)
    else:
        report = {"rmse_m": float("nan"), "max_dev_m": float("nan"),
                  "inlier_ratio": m.stats["inlier_ratio"], "resid_std_m": m.stats["resid_std_m"]}
    out.mkdir(parents=True, exist_ok=True)
    io.write_map(out / "map.json", m)
    io.write_report(out / "report.json", report)
    return m, report


def do_plot(map_path, distances, truth_path, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    truth = io.read_truth(truth_path) if truth_path else None
    written = []
    if map_path:
        m = io.read_map(map_path)
        times = sorted(m.agents)
        est = m.agent_array(times).reshape(-1, 3)
        feats = dict(m.features)
        tru_pos = tru_feat = None
        if truth is not None and len(times) >= 3:
            tru_pos = truth["positions"][times]
            try:
                R, r0, est = slam.align_to_truth(est, tru_pos)
                feats = {k: R @ a + r0 for k, a in feats.items()}
            except slam.DegenerateGeometryError:
                pass
            tru_feat = truth["features"]
        pa = min(feats) if feats else 0
        if distances:
            table = io.read_table(distances)
            if len(table) and pick_pa_track(table) in feats:
                pa = pick_pa_track(table)
        written.append(out / "trajectory.svg")
        plots.write_svg(written[-1], plots.trajectory_svg(est, tru_pos))
        written.append(out / "features.svg")
        plots.write_svg(written[-1], plots.feature_map_svg(feats, pa, tru_feat, est))
    if distances:
        written.append(out / "distances.svg")
        plots.write_svg(written[-1], plots.distance_svg(io.read_table(distances)))
    return written


def do_run_all(manifest: Path, out: Path) -> dict:
    doc = json.loads(Path(manifest).read_text(encoding="utf-8"))
    if "seed" not in doc:
        raise ValueError("manifest needs a 'seed'")
    scenario = doc.get("scenario", RunConfig.scenario)
    if isinstance(scenario, str) and not scenario.startswith("bundled:"):
        scenario = str((Path(manifest).parent / scenario).resolve())
    cfg = RunConfig().updated({**doc.get("config", {}), "seed": int(doc["seed"])})
    cfg.validate()
    _stage("simulate", do_simulate, cfg, scenario, out)
    if cfg.distances_only:
        dist = out / "distances.csv"
    else:
        _stage("track", do_track, cfg, out / "snapshots.bin", out)
        dist = out / "distances.csv"
    _, report = _stage("slam", do_slam, cfg, dist, out / "truth.json", out)
    _stage("plot", do_plot, out / "map.json", dist, out / "truth.json", out)
    return report


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except (slam.SolvabilityError, slam.DegenerateGeometryError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        raise StageError(name, EXIT_NUMERIC, str(exc)) from exc
    except (ScenarioError, io.FormatError, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        raise StageError(name, EXIT_CONFIG, str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "run-all":
            report = _stage("run-all", do_run_all, Path(args.manifest), out)
            print(json.dumps(report, sort_keys=True))
            return EXIT_OK
        cfg = _stage(args.command, _config_from_args, args)
        if args.command == "simulate":
            info = _stage("simulate", do_simulate, cfg, cfg.scenario, out)
            print(json.dumps(info, sort_keys=True))
        elif args.command == "track":
            table = _stage("track", do_track, cfg, Path(args.snapshots), out)
            print(f"{len(table)} rows, {len(table.tracks())} tracks")
        elif args.command == "slam":
            truth = Path(args.truth) if args.truth else None
            _, report = _stage("slam", do_slam, cfg, Path(args.distances), truth, out)
            print(json.dumps(report, sort_keys=True))
        elif args.command == "plot":
            for p in _stage("plot", do_plot, args.map, args.distances, args.truth, out):
                print(p)
    except StageError as exc:
        print(f"{exc.stage}: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
