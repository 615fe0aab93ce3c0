"""Scenario description, JSON loading, trajectory generators and synthesis."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .channel import DmcParams, RfConfig, basis, cylindrical_array, dmc_pdp
from .geometry import (
    ArrayPose,
    Feature,
    Surface,
    Trajectory,
    enumerate_features,
    true_params,
    visible,
)


class ScenarioError(ValueError):
    """Invalid scenario document; ``pointer`` is a JSON pointer to the culprit."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"


_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_interval = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "required": ["pa", "trajectory", "rf"],
    "properties": {
        "surfaces": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["normal", "offset"],
                "properties": {
                    "normal": _vec3,
                    "offset": {"type": "number"},
                    "extent": {"type": "array", "items": _interval, "minItems": 2, "maxItems": 2},
                    "loss": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                },
            },
        },
        "pa": {
            "type": "object",
            "required": ["position"],
            "properties": {
                "position": _vec3,
                "rotation": {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3},
                "array": {"type": "object"},
            },
        },
        "trajectory": {
            "type": "object",
            "properties": {
                "positions": {"type": "array", "items": _vec3, "minItems": 1},
                "waypoints": {"type": "array", "items": _vec3, "minItems": 2},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "text": {"type": "string", "minLength": 1},
                "area": {"type": "number", "exclusiveMinimum": 0},
                "laps": {"type": "integer", "minimum": 1},
                "origin": _vec3,
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "rf": {
            "type": "object",
            "properties": {
                "fc_hz": {"type": "number", "exclusiveMinimum": 0},
                "bw_hz": {"type": "number", "exclusiveMinimum": 0},
                "nf": {"type": "integer", "minimum": 1},
                "nrx": {"type": "integer", "minimum": 1},
                "spacing_wavelengths": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "flags": {
            "type": "object",
            "properties": {
                "planar_agent": {"type": "boolean"},
                "max_order": {"type": "integer", "minimum": 0},
            },
        },
        "channel": {
            "type": "object",
            "properties": {
                "amplitude": {"type": "number", "exclusiveMinimum": 0},
                "xpd_db": {"type": "number"},
                "snr_db": {"type": "number"},
                "dmc": {
                    "type": "object",
                    "properties": {
                        "alpha": {"type": "number", "minimum": 0},
                        "beta": {"type": "number", "exclusiveMinimum": 0},
                        "tau_on_s": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
    },
}


# single-stroke glyphs in a unit box, drawn as one polyline each
GLYPHS = {
    "L": [(0, 1), (0, 0), (0.6, 0)],
    "U": [(0, 1), (0, 0), (0.6, 0), (0.6, 1)],
    "N": [(0, 0), (0, 1), (0.6, 0), (0.6, 1)],
    "D": [(0, 0), (0, 1), (0.4, 1), (0.6, 0.75), (0.6, 0.25), (0.4, 0), (0, 0)],
    "V": [(0, 1), (0.3, 0), (0.6, 1)],
    "W": [(0, 1), (0.15, 0), (0.3, 0.6), (0.45, 0), (0.6, 1)],
    "M": [(0, 0), (0, 1), (0.3, 0.4), (0.6, 1), (0.6, 0)],
    "Z": [(0, 1), (0.6, 1), (0, 0), (0.6, 0)],
    "S": [(0.6, 1), (0, 1), (0, 0.5), (0.6, 0.5), (0.6, 0), (0, 0)],
    "C": [(0.6, 1), (0, 1), (0, 0), (0.6, 0)],
    "O": [(0, 0), (0, 1), (0.6, 1), (0.6, 0), (0, 0)],
    "I": [(0.3, 1), (0.3, 0)],
    "T": [(0, 1), (0.6, 1), (0.3, 1), (0.3, 0)],
    "E": [(0.6, 1), (0, 1), (0, 0.5), (0.5, 0.5), (0, 0.5), (0, 0), (0.6, 0)],
    "A": [(0, 0), (0.3, 1), (0.6, 0), (0.45, 0.5), (0.15, 0.5)],
}
_FALLBACK_GLYPH = [(0, 0), (0, 1), (0.6, 1), (0.6, 0)]
_ADVANCE = 0.8


def resample_polyline(vertices, step: float) -> np.ndarray:
    """Points spaced ``step`` apart along a polyline (last vertex included)."""
    v = np.asarray(vertices, dtype=float)
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-12])
    v = v[keep]
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(int(np.ceil(s[-1] / step)), 1)
    t = np.linspace(0.0, s[-1], n + 1)
    return np.stack([np.interp(t, s, v[:, i]) for i in range(v.shape[1])], axis=1)


def letter_path(text: str, area: float = 2.0, step: float = 0.005, origin=(0.0, 0.0, 0.0),
                laps: int = 1) -> np.ndarray:
    """Continuous polyline tracing ``text`` inside a box of ``area`` square meters.

    With ``laps > 1`` the agent walks back to the first glyph and traces the
    text again.
    """
    if laps < 1:
        raise ValueError("laps must be >= 1")
    verts = []
    x0 = 0.0
    for ch in text.upper():
        if ch == " ":
            x0 += _ADVANCE
            continue
        g = GLYPHS.get(ch, _FALLBACK_GLYPH)
        verts.extend((x0 + gx, gy) for gx, gy in g)
        x0 += _ADVANCE
    v = np.array(verts * laps, dtype=float)
    w = max(np.ptp(v[:, 0]), 1e-6)
    h = max(np.ptp(v[:, 1]), 1e-6)
    scale = np.sqrt(area / (w * h))
    v = (v - v.min(axis=0)) * scale
    v3 = np.column_stack([v, np.zeros(len(v))]) + np.asarray(origin, dtype=float)
    return resample_polyline(v3, step)


@dataclass
class Scenario:
    surfaces: list[Surface]
    pa: np.ndarray
    trajectory: Trajectory
    rf: RfConfig
    pose: ArrayPose = field(default_factory=ArrayPose)
    max_order: int = 1
    amplitude: float = 1.0
    xpd_db: float = 10.0
    snr_db: float = 25.0
    dmc_alpha: float = 0.0
    dmc_beta: float = 1.0
    dmc_tau_on: float = 0.0

    def __post_init__(self):
        self.pa = np.asarray(self.pa, dtype=float)
        if not np.allclose(self.pose.position, self.pa):
            self.pose = ArrayPose(self.pose.rotation, self.pa.copy())

    @property
    def sigma_w(self) -> float:
        """White-noise deviation giving the configured per-sample LOS SNR."""
        return self.amplitude * 10 ** (-self.snr_db / 20)

    @property
    def dmc(self) -> DmcParams:
        return DmcParams(self.dmc_alpha, self.dmc_beta, self.dmc_tau_on, self.sigma_w)

    def features(self) -> list[Feature]:
        return enumerate_features(self.pa, self.surfaces, self.max_order)

    def draw_weights(self, feats, seed: int) -> np.ndarray:
        """Polarimetric weights per feature, shape ``(L, 4)``."""
        rng = np.random.default_rng([seed, 7])
        xp = 10 ** (-self.xpd_db / 20)
        mags = np.array([[1.0, xp, xp, 1.0]]) * self.amplitude
        out = []
        for f in feats:
            ph = rng.uniform(-np.pi, np.pi, 4)
            out.append(f.loss * mags[0] * np.exp(1j * ph))
        return np.array(out)

    def ground_truth(self, feats=None) -> dict:
        feats = feats if feats is not None else self.features()
        P = self.trajectory.positions
        N, L = len(P), len(feats)
        d = np.zeros((N, L))
        az = np.zeros((N, L))
        el = np.zeros((N, L))
        vis = np.zeros((N, L), dtype=bool)
        for n, p in enumerate(P):
            for l, f in enumerate(feats):
                vis[n, l] = visible(p, f, self.pa, self.surfaces)
                d[n, l], az[n, l], el[n, l] = true_params(p, f, self.pose)
        return {"d": d, "az": az, "el": el, "visible": vis}


def _array_elements(rf_doc: dict, array_doc: dict | None) -> np.ndarray:
    array_doc = array_doc or {}
    if "elements" in array_doc:
        return np.asarray(array_doc["elements"], dtype=float)
    nrx = int(rf_doc.get("nrx", 32))
    spacing = float(rf_doc.get("spacing_wavelengths", 0.5))
    per_ring = int(array_doc.get("n_per_ring", 8))
    if nrx % per_ring == 0 and nrx >= per_ring:
        return cylindrical_array(per_ring, nrx // per_ring, spacing)
    # fallback: uniform linear array along local y
    y = (np.arange(nrx) - (nrx - 1) / 2) * spacing
    return np.column_stack([np.zeros(nrx), y, np.zeros(nrx)])


def scenario_from_dict(doc: dict) -> Scenario:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        pointer = "/" + "/".join(str(p) for p in e.absolute_path)
        raise ScenarioError(e.message, pointer)

    surfaces = []
    for i, s in enumerate(doc.get("surfaces", [])):
        try:
            surfaces.append(
                Surface(
                    np.asarray(s["normal"], dtype=float),
                    float(s["offset"]),
                    tuple(tuple(iv) for iv in s.get("extent", [[-1e9, 1e9], [-1e9, 1e9]])),
                    float(s.get("loss", 0.7)),
                )
            )
        except ValueError as exc:
            raise ScenarioError(str(exc), f"/surfaces/{i}") from None

    rf_doc = doc["rf"]
    pa_doc = doc["pa"]
    try:
        rf = RfConfig(
            fc=float(rf_doc.get("fc_hz", 2.6e9)),
            bw=float(rf_doc.get("bw_hz", 40e6)),
            nf=int(rf_doc.get("nf", 21)),
            elements=_array_elements(rf_doc, pa_doc.get("array")),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), "/rf") from None

    pa = np.asarray(pa_doc["position"], dtype=float)
    rot = np.asarray(pa_doc.get("rotation", np.eye(3)), dtype=float)
    flags = doc.get("flags", {})
    planar = bool(flags.get("planar_agent", True))

    tr = doc["trajectory"]
    if "positions" in tr:
        pos = np.asarray(tr["positions"], dtype=float)
    elif "waypoints" in tr:
        pos = resample_polyline(tr["waypoints"], float(tr.get("step", 0.01)))
    elif "text" in tr:
        pos = letter_path(tr["text"], float(tr.get("area", 2.0)), float(tr.get("step", 0.005)),
                          tr.get("origin", (0.0, 0.0, 0.0)), int(tr.get("laps", 1)))
    else:
        raise ScenarioError("one of positions, waypoints or text is required", "/trajectory")
    try:
        traj = Trajectory(pos, float(tr.get("dt", 1.0)), planar)
        traj.check_spacing(rf.wavelength)
    except ValueError as exc:
        raise ScenarioError(str(exc), "/trajectory") from None

    ch = doc.get("channel", {})
    dmc = ch.get("dmc", {})
    return Scenario(
        surfaces=surfaces,
        pa=pa,
        trajectory=traj,
        rf=rf,
        pose=ArrayPose(rot, pa.copy()),
        max_order=int(flags.get("max_order", 1)),
        amplitude=float(ch.get("amplitude", 1.0)),
        xpd_db=float(ch.get("xpd_db", 10.0)),
        snr_db=float(ch.get("snr_db", 25.0)),
        dmc_alpha=float(dmc.get("alpha", 0.0)),
        dmc_beta=float(dmc.get("beta", 1.0)),
        dmc_tau_on=float(dmc.get("tau_on_s", 0.0)),
    )


def load_scenario(path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc)


def dmc_draw(rf: RfConfig, dmc: DmcParams, rng: np.random.Generator) -> np.ndarray:
    """One dense-multipath realisation, drawn per channel in the delay domain."""
    psi = dmc_pdp(rf, dmc)
    q = np.nonzero(psi > 0)[0]
    if len(q) == 0:
        return np.zeros(rf.size, dtype=complex)
    z = (rng.standard_normal((rf.nch, len(q))) + 1j * rng.standard_normal((rf.nch, len(q)))) / np.sqrt(2)
    tau = q / rf.bw
    V = np.exp(-2j * np.pi * np.outer(rf.freqs, tau))  # (nf, nq)
    return ((z * np.sqrt(psi[q])) @ V.T).reshape(rf.size)


def synthesize(scenario: Scenario, seed: int, feats=None, weights=None, gain_fn=None,
               noise: bool = True) -> tuple[np.ndarray, dict]:
    """Snapshots ``(N, nf * nch)`` and the ground truth used to make them.

    Each snapshot draws its noise from its own ``(seed, n)`` stream, so any
    subset can be regenerated independently. ``gain_fn(n)`` may return a
    per-feature amplitude factor (fading and appearance experiments).
    """
    rf = scenario.rf
    feats = feats if feats is not None else scenario.features()
    truth = scenario.ground_truth(feats)
    gam = weights if weights is not None else scenario.draw_weights(feats, seed)
    dmc = scenario.dmc
    N = len(scenario.trajectory)
    Y = np.zeros((N, rf.size), dtype=complex)
    for n in range(N):
        g = np.ones(len(feats)) if gain_fn is None else np.asarray(gain_fn(n), dtype=float)
        y = np.zeros((4, rf.nrx, rf.nf), dtype=complex)
        for l in range(len(feats)):
            if not truth["visible"][n, l] or g[l] == 0:
                continue
            blocks = basis(rf, truth["d"][n, l], truth["az"][n, l], truth["el"][n, l])
            y += (g[l] * gam[l])[:, None, None] * blocks
        y = y.reshape(rf.size)
        if noise:
            rng = np.random.default_rng([seed, 1, n])
            if dmc.alpha > 0:
                y = y + dmc_draw(rf, dmc, rng)
            w = rng.standard_normal((2, rf.size))
            y = y + dmc.sigma_w * (w[0] + 1j * w[1]) / np.sqrt(2)
        Y[n] = y
    truth["weights"] = gam
    truth["positions"] = scenario.trajectory.positions
    truth["features"] = np.array([f.position for f in feats])
    truth["orders"] = np.array([f.order for f in feats])
    return Y, truth
