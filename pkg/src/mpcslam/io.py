"""File formats used between pipeline stages.

Every writer is deterministic (sorted keys, ``repr`` floats) so that equal
inputs give byte-identical files, and every reader parses back exactly what
was written.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .channel import RfConfig
from .table import COLUMNS, DistanceTable

MAGIC = b"MPCSNAP1"
_HEADER = struct.Struct("<8sIII")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# snapshots


def rf_to_dict(rf: RfConfig) -> dict:
    return {"fc_hz": rf.fc, "bw_hz": rf.bw, "nf": rf.nf, "elements": rf.elements.tolist()}


def rf_from_dict(doc: dict) -> RfConfig:
    return RfConfig(float(doc["fc_hz"]), float(doc["bw_hz"]), int(doc["nf"]),
                    np.asarray(doc["elements"], dtype=float))


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_snapshots(path, Y, rf: RfConfig, seed: int | None = None) -> None:
    """Binary snapshot file plus a JSON sidecar holding the RF setup and seed.

    The header's channel count is ``4 * nrx``: every receive element has two
    ports and the transmitter two, so each snapshot holds ``nf * 4 * nrx``
    complex samples.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2 or Y.shape[1] != rf.size:
        raise ValueError(f"snapshots must have shape (N, {rf.size}), got {Y.shape}")
    body = np.empty((len(Y), rf.size, 2), dtype="<f8")
    body[..., 0] = Y.real
    body[..., 1] = Y.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, len(Y), rf.nf, rf.nch))
        fh.write(body.tobytes())
    _dump_json({"rf": rf_to_dict(rf), "seed": seed, "n_snapshots": len(Y)}, sidecar_path(path))


def read_snapshots(path) -> tuple[np.ndarray, RfConfig, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n, nf, nch = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expect = _HEADER.size + n * nf * nch * 16
    if len(raw) != expect:
        raise FormatError(f"{path}: expected {expect} bytes for {n} x {nf} x {nch}, got {len(raw)}")
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"{path}: missing sidecar {side.name}")
    meta = _load_json(side)
    rf = rf_from_dict(meta["rf"])
    if (rf.nf, rf.nch) != (nf, nch):
        raise FormatError(f"{path}: header ({nf}, {nch}) disagrees with sidecar ({rf.nf}, {rf.nch})")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, nf * nch, 2)
    return body[..., 0] + 1j * body[..., 1], rf, meta


# ---------------------------------------------------------------------------
# distance table and track archive


def write_table(path, table: DistanceTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for n, k, d, az, el, s in table.rows():
            w.writerow([n, k, repr(d), repr(az), repr(el), repr(s)])


def read_table(path) -> DistanceTable:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(h.strip() for h in header) != COLUMNS:
            raise FormatError(f"{path}: header must be {','.join(COLUMNS)}")
        rows = []
        for i, row in enumerate(r, start=2):
            if len(row) != 6:
                raise FormatError(f"{path}:{i}: expected 6 fields, got {len(row)}")
            try:
                rows.append((int(row[0]), int(row[1]), *map(float, row[2:])))
            except ValueError as exc:
                raise FormatError(f"{path}:{i}: {exc}") from exc
    if not rows:
        return DistanceTable.from_pairs([], [], [])
    return DistanceTable.from_rows(rows)


def write_archive(path, archive: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in sorted(archive, key=lambda r: r["id"]):
            fh.write(json.dumps({k: rec[k] for k in ("id", "birth_n", "death_n", "mean_sinr_db")},
                                sort_keys=True) + "\n")


def read_archive(path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def write_detections(path, dets) -> None:
    """Debug dump of one snapshot's detections."""
    cols = ["k", "d_m", "az_rad", "el_rad"]
    for p in ("HH", "HV", "VH", "VV"):
        cols += [f"a{p}", f"p{p}"]
    cols.append("beta_cum")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k, det in enumerate(dets):
            g = np.asarray(det.gamma, dtype=complex)
            row = [k, repr(float(det.d)), repr(float(det.az)), repr(float(det.el))]
            for v in g:
                row += [repr(float(abs(v))), repr(float(np.angle(v)))]
            row.append(repr(float(det.beta)))
            w.writerow(row)


# ---------------------------------------------------------------------------
# map estimate, report and truth


def map_to_dict(m) -> dict:
    counts: dict[int, int] = {}
    for k, _ in m.inliers:
        counts[k] = counts.get(k, 0) + 1
    return {
        "features": [{"k": int(k), "pos": [float(v) for v in m.features[k]],
                      "inlier_count": counts.get(k, 0)} for k in sorted(m.features)],
        "agents": [{"n": int(n), "pos": [float(v) for v in m.agents[n]]} for n in sorted(m.agents)],
        "inliers": [[int(k), int(n)] for k, n in sorted(m.inliers)],
        "stats": {k: (float(v) if np.isfinite(v) else None) for k, v in sorted(m.stats.items())},
    }


def map_from_dict(doc: dict):
    from .slam import MapEstimate

    try:
        feats = {int(f["k"]): np.asarray(f["pos"], dtype=float) for f in doc["features"]}
        agents = {int(a["n"]): np.asarray(a["pos"], dtype=float) for a in doc["agents"]}
        inl = {(int(k), int(n)) for k, n in doc["inliers"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed map estimate: {exc}") from exc
    stats = {k: (float("nan") if v is None else v) for k, v in doc.get("stats", {}).items()}
    return MapEstimate(feats, agents, inl, stats)


def write_map(path, m) -> None:
    _dump_json(map_to_dict(m), path)


def read_map(path):
    return map_from_dict(_load_json(path))


def write_report(path, report: dict) -> None:
    _dump_json({k: (float(v) if np.isfinite(v) else None) for k, v in report.items()}, path)


def read_report(path) -> dict:
    return _load_json(path)


def truth_to_dict(truth: dict) -> dict:
    out = {
        "positions": np.asarray(truth["positions"], float).tolist(),
        "features": np.asarray(truth["features"], float).tolist(),
    }
    if "orders" in truth:
        out["orders"] = np.asarray(truth["orders"], int).tolist()
    for key in ("d", "az", "el"):
        if key in truth:
            out[key] = np.asarray(truth[key], float).tolist()
    if "visible" in truth:
        out["visible"] = np.asarray(truth["visible"], bool).astype(int).tolist()
    if "weights" in truth:
        w = np.asarray(truth["weights"], complex)
        out["weights_re"] = w.real.tolist()
        out["weights_im"] = w.imag.tolist()
    return out


def truth_from_dict(doc: dict) -> dict:
    try:
        out = {"positions": np.asarray(doc["positions"], float),
               "features": np.asarray(doc["features"], float)}
    except KeyError as exc:
        raise FormatError(f"truth file lacks {exc}") from exc
    if "orders" in doc:
        out["orders"] = np.asarray(doc["orders"], int)
    for key in ("d", "az", "el"):
        if key in doc:
            out[key] = np.asarray(doc[key], float)
    if "visible" in doc:
        out["visible"] = np.asarray(doc["visible"], int).astype(bool)
    if "weights_re" in doc:
        out["weights"] = np.asarray(doc["weights_re"]) + 1j * np.asarray(doc["weights_im"])
    return out


def write_truth(path, truth: dict) -> None:
    _dump_json(truth_to_dict(truth), path)


def read_truth(path) -> dict:
    return truth_from_dict(_load_json(path))
