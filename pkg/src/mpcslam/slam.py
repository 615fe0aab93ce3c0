"""Distance-only localisation and mapping from per-track distance estimates.

Two problems are solved. With known agent positions every feature is located
independently by RANSAC trilateration plus Gauss-Newton. Without them the
time axis is cut into overlapping windows, each window is reconstructed in
its own frame from minimal samples, the windows are chained together by
rigid registration of the shared agent positions and everything is refined
jointly over the inlier data.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .table import DistanceTable

log = logging.getLogger(__name__)

SIGMA_INL = 0.046
# planar minimal sample: three tracks need six agent times (3 N >= 2 N - 3 + 9)
MIN_AGENTS = 6


class SolvabilityError(ValueError):
    """A window or graph lacks the observations needed for a unique solution."""


class DegenerateGeometryError(np.linalg.LinAlgError):
    """Collinear or coincident support points."""


def _threads() -> int:
    v = int(os.environ.get("MPC_SLAM_THREADS", "0") or 0)
    return v if v > 0 else (os.cpu_count() or 1)


def ransac_iterations(sample_size: int, outlier_prior: float = 0.25, confidence: float = 0.999) -> int:
    """Number of draws so that an all-inlier sample appears with ``confidence``."""
    w = (1.0 - outlier_prior) ** sample_size
    if w >= 1.0:
        return 1
    if w <= 0.0:
        raise ValueError("outlier prior of 1 leaves no usable sample")
    return int(math.ceil(math.log(1.0 - confidence) / math.log(1.0 - w)))


# ----------------------------------------------------------------------------
# trilateration


def trilaterate(anchors, distances, tol: float = 1e-9, init=None):
    """Point(s) at the given distances from the anchors.

    Three anchors: closed form, returns both mirror solutions about the anchor
    plane (identical when the point lies in it), higher-``z`` solution first.
    Four or more: single Gauss-Newton least-squares solution.
    """
    P = np.asarray(anchors, dtype=float)
    r = np.asarray(distances, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or len(P) != len(r) or len(P) < 3:
        raise ValueError("need >= 3 anchors of shape (m, 3) with matching distances")
    if len(P) == 3:
        return _trilaterate3(P, r, tol)
    return [_trilaterate_ls(P, r, init)]


def _trilaterate3(P, r, tol, clip=False):
    ex = P[1] - P[0]
    dist = np.linalg.norm(ex)
    scale = max(dist, np.linalg.norm(P[2] - P[0]), 1e-300)
    if dist < tol * scale:
        raise DegenerateGeometryError("coincident anchors")
    ex = ex / dist
    q = P[2] - P[0]
    i = ex @ q
    ey = q - i * ex
    j = np.linalg.norm(ey)
    if j < tol * scale:
        raise DegenerateGeometryError("collinear anchors")
    ey = ey / j
    ez = np.cross(ex, ey)
    x = (r[0] ** 2 - r[1] ** 2 + dist**2) / (2 * dist)
    y = (r[0] ** 2 - r[2] ** 2 + i**2 + j**2) / (2 * j) - i * x / j
    z2 = r[0] ** 2 - x**2 - y**2
    if z2 < -tol * max(1.0, r[0] ** 2) and not clip:
        raise ValueError(f"inconsistent distances (negative discriminant {z2:.3e})")
    z = math.sqrt(max(z2, 0.0))
    base = P[0] + x * ex + y * ey
    s1, s2 = base + z * ez, base - z * ez
    return [s1, s2] if s1[2] >= s2[2] else [s2, s1]


def _trilaterate_ls(P, r, init=None, max_iter=50):
    if init is None:
        # linear initial guess from differences against the first anchor
        A = -2 * (P[1:] - P[0])
        b = r[1:] ** 2 - r[0] ** 2 - np.sum(P[1:] ** 2, axis=1) + np.sum(P[0] ** 2)
        x = np.linalg.lstsq(A, b, rcond=None)[0]
        if np.linalg.matrix_rank(A) < 3:
            # coplanar anchors: resolve the mirror side with a minimal solve,
            # picking the first non-collinear triple
            for tri in combinations(range(len(P)), 3):
                try:
                    x = _trilaterate3(P[list(tri)], r[list(tri)], 1e-6)[0]
                    break
                except (DegenerateGeometryError, ValueError):
                    continue
            else:
                raise DegenerateGeometryError("anchors are collinear")
    else:
        x = np.asarray(init, dtype=float).copy()
    return point_refine(x, P, r, max_iter=max_iter)[0]


def point_refine(x0, P, r, free=None, max_iter=50, gtol=1e-9):
    """Gauss-Newton with backtracking for one point from range measurements.

    Returns ``(x, cost_history)``. ``free`` masks the coordinates allowed to
    move.
    """
    x = np.asarray(x0, dtype=float).copy()
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    free = np.ones(3, bool) if free is None else np.asarray(free, bool)

    def cost_of(v):
        return float(np.sum((r - np.linalg.norm(P - v, axis=1)) ** 2))

    cost = cost_of(x)
    costs = [cost]
    for _ in range(max_iter):
        diff = x - P
        dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-12)
        res = r - dist
        J = -(diff / dist[:, None])[:, free]
        grad = J.T @ res
        if np.linalg.norm(grad) < gtol:
            break
        step, *_ = np.linalg.lstsq(J, -res, rcond=None)
        t = 1.0
        improved = False
        while t > 1e-6:
            cand = x.copy()
            cand[free] += t * step
            c = cost_of(cand)
            if c <= cost:
                x, cost, improved = cand, c, True
                break
            t *= 0.5
        costs.append(cost)
        if not improved or np.linalg.norm(t * step) < 1e-13:
            break
    return x, costs


# ----------------------------------------------------------------------------
# Experiment I: known agent positions


def _check_support(P, tol=1e-9):
    c = P - P.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    if len(s) < 2 or s[0] == 0 or s[1] < tol * s[0]:
        raise DegenerateGeometryError("supporting positions are collinear")


def refine_feature(a0, positions, distances, max_iter=50):
    """Least-squares feature position from inlier ranges (cost non-increasing)."""
    P = np.asarray(positions, dtype=float)
    if len(P) < 3:
        raise SolvabilityError("refine_feature needs >= 3 inliers")
    _check_support(P)
    return point_refine(a0, P, distances, max_iter=max_iter)[0]


def ransac_feature(distances, positions, sigma: float = SIGMA_INL, iters: int | None = None,
                   seed=0, confidence: float = 0.999, outlier_prior: float = 0.25,
                   min_inlier_ratio: float = 0.3, refine: bool = True, min_iters: int = 100):
    """Robust trilateration of one feature from ranges at known positions.

    Minimal samples of three positions are trilaterated (higher-``z`` mirror
    solution); the hypothesis with most residuals below ``3 sigma`` wins and
    is locally re-fitted on its inliers. Returns ``(a, inlier_mask)``; the mask
    is empty (all False) when consensus stays below ``min_inlier_ratio``.
    Without an explicit ``iters`` the confidence formula is used with a floor
    of ``min_iters`` draws, since noisy minimal samples from a small aperture
    rarely land close to the truth even when all three are inliers.
    """
    d = np.asarray(distances, dtype=float)
    P = np.asarray(positions, dtype=float)
    m = len(d)
    if m < 3:
        raise SolvabilityError(f"track has {m} samples, ransac_feature needs >= 3")
    rng = np.random.default_rng(seed)
    iters = iters or max(ransac_iterations(3, outlier_prior, confidence), min_iters)
    thr = 3 * sigma
    best_a, best_mask, best_count = None, np.zeros(m, bool), -1

    def score(a):
        mask = np.abs(d - np.linalg.norm(P - a, axis=1)) < thr
        return mask, int(mask.sum())

    def tcost(a):
        # constant-penalty robust cost; refits are judged by it rather than
        # by the count, which a least-squares refit may lower by one or two
        return float(np.sum(np.minimum((d - np.linalg.norm(P - a, axis=1)) ** 2, thr**2)))

    for _ in range(iters):
        idx = rng.choice(m, 3, replace=False)
        try:
            a = _trilaterate3(P[idx], d[idx], 1e-9, clip=True)[0]
        except (DegenerateGeometryError, ValueError):
            continue
        mask, cnt = score(a)
        if cnt > best_count:
            # local optimisation on the consensus set
            if refine and cnt >= 3:
                try:
                    a2 = refine_feature(a, P[mask], d[mask])
                    if tcost(a2) <= tcost(a):
                        mask2, cnt2 = score(a2)
                        a, mask, cnt = a2, mask2, max(cnt, cnt2)
                except (DegenerateGeometryError, SolvabilityError):
                    pass
            best_a, best_mask, best_count = a, mask, cnt
    if best_a is None or best_count < max(3, min_inlier_ratio * m):
        return (best_a if best_a is not None else np.full(3, np.nan)), np.zeros(m, bool)
    if refine:
        try:
            a = refine_feature(best_a, P[best_mask], d[best_mask])
            if tcost(a) <= tcost(best_a):
                best_a, best_mask = a, score(a)[0]
        except (DegenerateGeometryError, SolvabilityError):
            pass
    return best_a, best_mask


# ----------------------------------------------------------------------------
# map containers


@dataclass
class MapEstimate:
    """Feature and agent positions plus the inlier pairs ``(k, n)``."""

    features: dict[int, np.ndarray] = field(default_factory=dict)
    agents: dict[int, np.ndarray] = field(default_factory=dict)
    inliers: set[tuple[int, int]] = field(default_factory=set)
    stats: dict = field(default_factory=dict)

    def residuals(self, table: DistanceTable) -> dict[tuple[int, int], float]:
        out = {}
        for n, k, d in zip(table.n, table.k, table.d):
            key = (int(k), int(n))
            if key in self.inliers and k in self.features and n in self.agents:
                out[key] = float(d - np.linalg.norm(self.agents[n] - self.features[k]))
        return out

    def update_stats(self, table: DistanceTable) -> None:
        res = np.array(list(self.residuals(table).values()))
        self.stats = {
            "inlier_ratio": float(len(self.inliers) / max(len(table), 1)),
            "resid_std_m": float(np.std(res)) if len(res) else float("nan"),
        }

    def agent_array(self, times) -> np.ndarray:
        return np.array([self.agents[int(n)] for n in times])


@dataclass
class Segment:
    n_start: int
    n_end: int
    map: MapEstimate
    degenerate: bool = False
    segment_id: int = 0


# ----------------------------------------------------------------------------
# joint least squares over agents and features


@dataclass
class _Problem:
    P: np.ndarray  # agents (N, 3)
    A: np.ndarray  # features (K, 3)
    ia: np.ndarray
    ik: np.ndarray
    d: np.ndarray
    agent_free: np.ndarray
    feature_free: np.ndarray
    fixed: list  # (agent index, coord)

    def residual(self, P=None, A=None):
        P = self.P if P is None else P
        A = self.A if A is None else A
        return self.d - np.linalg.norm(P[self.ia] - A[self.ik], axis=1)

    def masks(self):
        ma = np.tile(self.agent_free.astype(float), (len(self.P), 1))
        for i, c in self.fixed:
            ma[i, c] = 0.0
        mf = np.tile(self.feature_free.astype(float), (len(self.A), 1))
        return ma, mf


def _unit(pr: _Problem, P, A):
    diff = P[pr.ia] - A[pr.ik]
    dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-12)
    return diff / dist[:, None]


def normal_matrix(pr: _Problem, gauge: bool = True) -> np.ndarray:
    """Dense ``J^T J`` over the free coordinates (small problems only)."""
    u = _unit(pr, pr.P, pr.A)
    N, K = len(pr.P), len(pr.A)
    J = np.zeros((len(pr.d), 3 * N + 3 * K))
    rows = np.arange(len(pr.d))
    for c in range(3):
        J[rows, 3 * pr.ia + c] = -u[:, c]
        J[rows, 3 * N + 3 * pr.ik + c] = u[:, c]
    ma, mf = pr.masks() if gauge else (np.tile(pr.agent_free, (N, 1)).astype(float),
                                        np.tile(pr.feature_free, (K, 1)).astype(float))
    keep = np.r_[ma.ravel(), mf.ravel()] > 0
    J = J[:, keep]
    return J.T @ J


def _lm(pr: _Problem, max_iter=50, tol=1e-10):
    """Levenberg-Marquardt with a Schur complement on the feature block."""
    N, K = len(pr.P), len(pr.A)
    ma, mf = pr.masks()
    P, A = pr.P.copy(), pr.A.copy()
    r = pr.residual(P, A)
    cost = float(r @ r)
    costs = [cost]
    lam = 1e-3
    I3 = np.eye(3)
    for _ in range(max_iter):
        u = _unit(pr, P, A)
        Ja = -u * ma[pr.ia]  # d r / d P[ia]
        Jf = u * mf[pr.ik]  # d r / d A[ik]
        Hpp = np.zeros((N, 3, 3))
        np.add.at(Hpp, pr.ia, Ja[:, :, None] * Ja[:, None, :])
        Hff = np.zeros((K, 3, 3))
        np.add.at(Hff, pr.ik, Jf[:, :, None] * Jf[:, None, :])
        Hpf = np.zeros((N, K, 3, 3))
        np.add.at(Hpf, (pr.ia, pr.ik), Ja[:, :, None] * Jf[:, None, :])
        gp = np.zeros((N, 3))
        np.add.at(gp, pr.ia, -Ja * r[:, None])
        gf = np.zeros((K, 3))
        np.add.at(gf, pr.ik, -Jf * r[:, None])
        if max(np.abs(gp).max(initial=0), np.abs(gf).max(initial=0)) < 1e-12:
            break
        accepted = False
        while lam <= 1e8:
            Dp = Hpp + lam * (Hpp * I3) + (ma == 0)[:, :, None] * I3 + 1e-12 * I3
            Df = Hff + lam * (Hff * I3) + (mf == 0)[:, :, None] * I3 + 1e-12 * I3
            Dp_inv = np.linalg.inv(Dp)
            Bf = Hpf.transpose(0, 2, 1, 3).reshape(N, 3, 3 * K)  # (N, 3, 3K)
            W = Dp_inv @ Bf  # (N, 3, 3K)
            S = np.zeros((3 * K, 3 * K))
            for k in range(K):
                S[3 * k:3 * k + 3, 3 * k:3 * k + 3] = Df[k]
            S -= np.einsum("nia,nib->ab", Bf, W)
            rhs = gf.ravel() - np.einsum("nia,ni->a", W, gp)
            try:
                df = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            dp = np.einsum("nij,nj->ni", Dp_inv, gp) - np.einsum("nia,a->ni", W, df)
            dp *= ma
            df = df.reshape(K, 3) * mf
            P2, A2 = P + dp, A + df
            r2 = pr.residual(P2, A2)
            c2 = float(r2 @ r2)
            if c2 <= cost:
                step = math.sqrt(float(np.sum(dp**2) + np.sum(df**2)))
                P, A, r, cost = P2, A2, r2, c2
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                break
            lam *= 10
        costs.append(cost)
        if not accepted or step < tol:
            break
    return P, A, costs


def _check_graph(ia, ik, N, K, agent_min, feature_min=3):
    ca = np.bincount(ia, minlength=N)
    cf = np.bincount(ik, minlength=K)
    return np.nonzero(ca < agent_min)[0], np.nonzero(cf < feature_min)[0]


def joint_refine(m: MapEstimate, table: DistanceTable, inliers=None, planar: bool = True,
                 max_iter: int = 50, gauge: tuple[int, int] | None = None,
                 mode: str = "2d") -> MapEstimate:
    """Joint least squares over all agents and features on the inlier pairs.

    The gauge pins the first agent (both in-plane coordinates) and the
    in-plane ``y`` of the second one at their current values; agent ``z`` is
    frozen when ``planar``. ``mode="1d"`` handles windows whose agents lie on
    a line (agents move along ``x`` only, features in the ``x-z`` plane).
    """
    inliers = m.inliers if inliers is None else set(inliers)
    fids = sorted(m.features)
    aids = sorted(m.agents)
    fpos = {k: i for i, k in enumerate(fids)}
    apos = {n: i for i, n in enumerate(aids)}
    ia, ik, dd = [], [], []
    for n, k, d in zip(table.n, table.k, table.d):
        key = (int(k), int(n))
        if key in inliers and key[0] in fpos and key[1] in apos:
            ia.append(apos[key[1]])
            ik.append(fpos[key[0]])
            dd.append(d)
    ia, ik, dd = np.array(ia, int), np.array(ik, int), np.array(dd)
    agent_min = 1 if mode == "1d" else (2 if planar else 3)
    orphan_a, orphan_f = _check_graph(ia, ik, len(aids), len(fids), agent_min,
                                      2 if mode == "1d" else 3)
    if len(orphan_a) or len(orphan_f):
        raise SolvabilityError(
            "inlier graph is disconnected: agents "
            f"{[aids[i] for i in orphan_a][:10]} features {[fids[i] for i in orphan_f]}"
        )
    if mode == "1d":
        af, ff = np.array([1, 0, 0], bool), np.array([1, 0, 1], bool)
        fixed = [(0, 0)]
    else:
        af = np.array([1, 1, 0 if planar else 1], bool)
        ff = np.ones(3, bool)
        g0, g1 = gauge if gauge is not None else (0, 1)
        fixed = [(g0, 0), (g0, 1), (g1, 1)] + ([] if planar else [(g0, 2), (g1, 2)])
    pr = _Problem(np.array([m.agents[n] for n in aids]), np.array([m.features[k] for k in fids]),
                  ia, ik, dd, af, ff, fixed)
    P, A, costs = _lm(pr, max_iter=max_iter)
    out = MapEstimate({k: A[i] for i, k in enumerate(fids)}, {n: P[i] for i, n in enumerate(aids)},
                      set(inliers))
    out.stats = {"costs": costs}
    return out


# ----------------------------------------------------------------------------
# Experiment II: window reconstruction


def _minimal_2d(D2):
    """Local agents/features from a complete block of squared ranges.

    ``D2`` is ``(3, m)`` with ``m >= 6`` agent times (row 0 the PA track).
    Agent 0 sits at the origin. With ``b_kj = D2_kj - D2_k0`` the doubly
    differenced block ``b_kj - b_0j = -2 (a_k - a_0) . p_j`` has rank two, so
    ``p_j = L v_j`` for the SVD coordinates ``v_j``. Then
    ``b_0j = v_j^T M v_j - 2 c_0^T v_j`` is linear in ``M = L^T L`` and
    ``c_0 = L^T a_0``. Returns ``(agents (m, 3), features (3, 3))`` or ``None``
    for a degenerate sample.
    """
    b = D2[:, 1:] - D2[:, :1]
    Dt = b[1:] - b[:1]  # (2, m-1)
    U, s, Vt = np.linalg.svd(Dt, full_matrices=False)
    if s[1] < 1e-9 * max(s[0], 1e-300):
        return None
    V = Vt.T  # (m-1, 2) coordinates v_j
    W = U * s  # (2, 2): Dt = W V^T, rows -2 (c_k - c_0)^T
    rows = np.column_stack([V[:, 0] ** 2, 2 * V[:, 0] * V[:, 1], V[:, 1] ** 2, -2 * V])
    sol, *_ = np.linalg.lstsq(rows, b[0], rcond=None)
    if np.linalg.matrix_rank(rows) < 5:
        return None
    M = np.array([[sol[0], sol[1]], [sol[1], sol[2]]])
    try:
        L = np.linalg.cholesky(M).T  # upper, M = L^T L
    except np.linalg.LinAlgError:
        return None
    c = np.vstack([sol[3:5], sol[3:5] - W / 2])  # (3, 2)
    pts = np.zeros((len(V) + 1, 3))
    pts[1:, :2] = V @ L.T
    feats = np.zeros((3, 3))
    feats[:, :2] = np.linalg.solve(L.T, c.T).T
    z2 = D2[:, 0] - np.sum(feats[:, :2] ** 2, axis=1)
    feats[:, 2] = np.sqrt(np.maximum(z2, 0.0))
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(feats)):
        return None
    return pts, feats


def _minimal_1d(D2):
    """Collinear variant: agents on the ``x`` axis, features in the ``x-z`` plane."""
    b = D2[:, 1:] - D2[:, :1]
    Dt = b[1:] - b[:1]
    U, s, Vt = np.linalg.svd(Dt, full_matrices=False)
    v = s[0] * Vt[0]  # (m-1,)
    rows, rhs = [], []
    K = len(D2)
    for k in range(K):
        for j in range(len(v)):
            row = np.zeros(1 + K)
            row[0] = v[j] ** 2
            row[1 + k] = -2 * v[j]
            rows.append(row)
            rhs.append(b[k, j])
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    if sol[0] <= 0:
        return None
    sc = math.sqrt(sol[0])
    pts = np.zeros((len(v) + 1, 3))
    pts[1:, 0] = sc * v
    feats = np.zeros((K, 3))
    feats[:, 0] = sol[1:] / sc
    feats[:, 2] = np.sqrt(np.maximum(D2[:, 0] - feats[:, 0] ** 2, 0.0))
    return pts, feats


def _locate_linear(F, D, mode):
    """Vectorised agent positions from fixed features ``F (3, 3)``; ``D (m, 3)``."""
    if mode == "1d":
        A = -2 * (F[1:, 0] - F[0, 0])  # (2,)
        rhs = D[:, 1:] ** 2 - D[:, :1] ** 2 - np.sum(F[1:] ** 2, 1) + np.sum(F[0] ** 2)
        t = rhs @ A / (A @ A)
        out = np.zeros((len(D), 3))
        out[:, 0] = t
        return out
    A = -2 * (F[1:, :2] - F[0, :2])  # (2, 2)
    rhs = D[:, 1:] ** 2 - D[:, :1] ** 2 - np.sum(F[1:] ** 2, 1) + np.sum(F[0] ** 2)
    try:
        xy = np.linalg.solve(A, rhs.T).T
    except np.linalg.LinAlgError:
        return None
    out = np.zeros((len(D), 3))
    out[:, :2] = xy
    return out


def _feature_from_agents(P, d, sigma, rng, mode, iters=25):
    """Small RANSAC for a feature seen from located agents inside a window."""
    m = len(d)
    thr = 3 * sigma
    best, best_mask, best_cnt = None, None, -1
    free = np.array([1, 0, 1], bool) if mode == "1d" else np.ones(3, bool)
    for _ in range(iters):
        if mode == "1d":
            i, j = rng.choice(m, 2, replace=False)
            t1, t2 = P[i, 0], P[j, 0]
            if abs(t2 - t1) < 1e-9:
                continue
            x = (d[i] ** 2 - d[j] ** 2 + t2**2 - t1**2) / (2 * (t2 - t1))
            a = np.array([x, 0.0, math.sqrt(max(d[i] ** 2 - (t1 - x) ** 2, 0.0))])
        else:
            idx = rng.choice(m, 3, replace=False)
            try:
                a = _trilaterate3(P[idx], d[idx], 1e-9, clip=True)[0]
            except (DegenerateGeometryError, ValueError):
                continue
        mask = np.abs(d - np.linalg.norm(P - a, axis=1)) < thr
        if mask.sum() > best_cnt:
            best, best_mask, best_cnt = a, mask, int(mask.sum())
    if best is None or best_cnt < 3:
        return None
    a = point_refine(best, P[best_mask], d[best_mask], free=free)[0]
    if a[2] < 0:
        a[2] = -a[2]
    return a


def _locate_agent(F, d, x0, sigma, mode):
    free = np.array([1, 0, 0], bool) if mode == "1d" else np.array([1, 1, 0], bool)
    x = point_refine(x0, F, d, free=free, max_iter=20)[0]
    res = np.abs(d - np.linalg.norm(F - x, axis=1))
    keep = res < 3 * sigma
    need = 2 if mode == "1d" else 3
    if keep.sum() >= need and keep.sum() < len(d):
        x = point_refine(x, F[keep], d[keep], free=free, max_iter=20)[0]
    return x


def truncated_cost(m: MapEstimate, table: DistanceTable, sigma: float = SIGMA_INL) -> float:
    """Robust objective ``sum min(r^2, C)`` with ``C = (3 sigma)^2``.

    Pairs whose agent or feature is missing from the map pay the full outlier
    penalty ``C``, so dropping data is never free.
    """
    C = (3 * sigma) ** 2
    total = 0.0
    for n, k, d in zip(table.n, table.k, table.d):
        n, k = int(n), int(k)
        if n in m.agents and k in m.features:
            total += min((d - np.linalg.norm(m.agents[n] - m.features[k])) ** 2, C)
        else:
            total += C
    return total


def _inliers(table, agents, feats, sigma):
    out = set()
    for n, k, d in zip(table.n, table.k, table.d):
        n, k = int(n), int(k)
        if n in agents and k in feats:
            if abs(d - np.linalg.norm(agents[n] - feats[k])) < 3 * sigma:
                out.add((k, n))
    return out


def _relocate_agents(m: MapEstimate, table: DistanceTable, sigma: float, reach: int = 5,
                     max_step: float | str | None = None) -> None:
    """Re-solve every agent against the current features, in place.

    Starting points are the agent's own estimate and those of up to ``reach``
    temporal neighbours on each side; the start giving most inliers wins.
    This repairs agents that settled on a wrong trilateration branch and
    re-admits agents dropped earlier. With ``max_step`` (meters per time
    instance, or ``"auto"`` for 1.5 times the median speed of the current
    estimate) a solution farther than ``reach * max_step`` from the median
    of its neighbours only wins when no continuous solution exists, which
    settles agents whose distances are mostly outliers. An unconstrained pass
    runs first so that wrong neighbours cannot hold a good agent back.
    """
    if max_step is not None:
        _relocate_agents(m, table, sigma, reach, None)
    before = dict(m.agents)
    if max_step == "auto":
        # speed over a 2 * reach baseline, where per-agent noise matters little
        span = 2 * reach
        steps = [np.linalg.norm(before[n + span] - before[n]) / span
                 for n in before if n + span in before]
        max_step = 1.5 * float(np.median(steps)) if steps else None
    obs: dict[int, tuple[list, list]] = {}
    for n, k, d in zip(table.n, table.k, table.d):
        if int(k) in m.features:
            ks, ds = obs.setdefault(int(n), ([], []))
            ks.append(int(k))
            ds.append(float(d))
    for n, (ks, ds) in obs.items():
        if len(ks) < 3:
            continue
        Fk = np.array([m.features[k] for k in ks])
        d = np.array(ds)
        starts = [before[j] for j in [n] + [n + s * r for r in range(1, reach + 1) for s in (-1, 1)]
                  if j in before]
        nbrs = [before[j] for j in range(n - reach, n + reach + 1) if j != n and j in before]
        centre = np.median(nbrs, axis=0) if max_step is not None and len(nbrs) >= 2 else None
        starts = [(x0, (max(10 * sigma, 0.3), 5 * sigma, 3 * sigma)) for x0 in starts]
        if centre is not None:
            # the neighbour median is close already, so only tight gates
            starts.append((centre, (3 * sigma, 3 * sigma)))
        best = None
        free = np.array([1, 1, 0], bool)
        for x0, gates in starts:
            # gate around the start first so outliers never enter the solve
            x = x0
            for gate in gates:
                keep = np.abs(d - np.linalg.norm(Fk - x, axis=1)) < gate
                if keep.sum() < 3:
                    break
                x = point_refine(x, Fk[keep], d[keep], free=free, max_iter=20)[0]
            res = np.abs(d - np.linalg.norm(Fk - x, axis=1))
            keep = res < 3 * sigma
            near = centre is None or np.linalg.norm(x - centre) <= reach * max_step
            score = (bool(near) and keep.sum() >= 3, int(keep.sum()), -float(np.sum(res[keep] ** 2)))
            if best is None or score > best[0]:
                best = (score, x)
        if best is not None and best[0][1] >= 3:
            m.agents[n] = best[1]


def _apply_gauge(m: MapEstimate, order, mode):
    """Move the first agent to the origin and the second onto ``+x``."""
    p0 = m.agents[order[0]].copy()
    p0[2] = 0.0
    ref = None
    for n in order[1:]:
        if np.linalg.norm(m.agents[n][:2] - p0[:2]) > 1e-9:
            ref = m.agents[n] - p0
            break
    R = np.eye(3)
    if ref is not None:
        ang = math.atan2(ref[1], ref[0])
        c, s = math.cos(-ang), math.sin(-ang)
        R[:2, :2] = [[c, -s], [s, c]]
    m.agents = {n: R @ (p - p0) for n, p in m.agents.items()}
    m.features = {k: R @ (a - p0) for k, a in m.features.items()}
    if mode == "1d":
        for a in m.features.values():
            a[1] = 0.0


def smooth_table(table: DistanceTable, sigma: float = SIGMA_INL, half: int = 7) -> DistanceTable:
    """Robust local-quadratic smoothing of every track over ``+-half`` samples.

    A repeated-median line through the neighbourhood gates samples at
    ``3 sigma``; a quadratic is then fitted to the survivors and evaluated at
    the centre. Samples that miss their own fit by ``3 sigma`` are dropped.
    Only used to seed window hypotheses; refinement works on raw data.
    """
    keep_n, keep_k, keep_d = [], [], []
    for k in table.tracks():
        n, d = table.track(k)
        m = len(d)
        if m < 2 * half + 1:
            continue
        idx = np.arange(m)[:, None] + np.arange(-half, half + 1)[None]
        idx = np.clip(idx, 0, m - 1)
        tn = (n[idx] - n[:, None]).astype(float)  # (m, w)
        dn = d[idx]
        # repeated-median slope and intercept (pairwise slopes, then medians)
        dt = tn[:, :, None] - tn[:, None, :]
        dd = dn[:, :, None] - dn[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            sl = np.where(dt != 0, dd / dt, np.nan)
        slope = np.nanmedian(np.nanmedian(sl, axis=2), axis=1)
        icpt = np.median(dn - slope[:, None] * tn, axis=1)
        ok = np.abs(dn - (icpt[:, None] + slope[:, None] * tn)) < 3 * sigma
        out = np.empty(m)
        good = np.zeros(m, bool)
        for i in range(m):
            w = ok[i]
            if w.sum() < 5:
                continue
            A = np.column_stack([np.ones(w.sum()), tn[i, w], tn[i, w] ** 2])
            c, *_ = np.linalg.lstsq(A, dn[i, w], rcond=None)
            out[i] = c[0]
            good[i] = abs(d[i] - c[0]) < 3 * sigma
        keep_n.append(n[good])
        keep_k.append(np.full(good.sum(), k))
        keep_d.append(out[good])
    if not keep_n:
        return DistanceTable.from_pairs([], [], [])
    return DistanceTable.from_pairs(np.concatenate(keep_n), np.concatenate(keep_k),
                                    np.concatenate(keep_d))


def _lateral_spread(P):
    c = P[:, :2] - P[:, :2].mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return float(s[-1] / math.sqrt(len(P))) if len(s) > 1 else 0.0


def init_segment(table: DistanceTable, sigma: float = SIGMA_INL, iters: int | None = None,
                 seed=0, pa_track: int = 0, confidence: float = 0.999,
                 outlier_prior: float = 0.25, segment_id: int = 0,
                 hyp_table: DistanceTable | None = None, hyp_sigma: float | None = None,
                 collinear_tol: float | None = None, refine_rounds: int = 2,
                 n_starts: int = 8) -> Segment:
    """Reconstruct one window in its own frame.

    Minimal samples contain the PA track, two further tracks and six agent
    times (one per sixth of the window) at which all three are observed.
    Each sample yields a planar hypothesis and a collinear one (agents on a
    line); agents are then trilaterated from the three sample features and
    scored by consensus on those tracks. Hypotheses are drawn and scored on
    ``hyp_table`` (default: the raw table) at ``3 hyp_sigma``. The winner is
    extended to all tracks, every agent is re-located from all features and
    the window is refined jointly on the raw inliers. The window is flagged
    ``degenerate`` and solved along a line when the collinear consensus is
    higher or the planar agents spread less than ``collinear_tol`` sideways.
    """
    times = table.times()
    if not times:
        raise SolvabilityError("empty window")
    hyp_table = table if hyp_table is None else hyp_table
    hyp_sigma = sigma if hyp_sigma is None else hyp_sigma
    collinear_tol = 3 * hyp_sigma if collinear_tol is None else collinear_tol

    def observations(tab):
        out: dict[int, dict[int, float]] = {}
        for n, k, d in zip(tab.n, tab.k, tab.d):
            out.setdefault(int(k), {})[int(n)] = float(d)
        return out

    obs = observations(table)
    hobs = observations(hyp_table)
    tracks = [k for k in sorted(obs) if len(obs[k]) >= 3]
    if pa_track not in tracks:
        raise SolvabilityError(f"PA track {pa_track} has < 3 samples in window")
    if len(tracks) < 3:
        raise SolvabilityError(f"K_n >= 3 violated: only {len(tracks)} usable tracks in window")
    htracks = [k for k in tracks if len(hobs.get(k, {})) >= MIN_AGENTS]
    if pa_track not in htracks or len(htracks) < 3:
        htracks, hobs = tracks, obs
    others = [k for k in htracks if k != pa_track]
    rng = np.random.default_rng([int(seed), int(segment_id)])
    iters = iters or ransac_iterations(3 * MIN_AGENTS, outlier_prior, confidence)
    thr = 3 * hyp_sigma
    cands: dict[tuple, tuple] = {}
    complete_any = False
    for _ in range(iters):
        ks = [pa_track] + list(rng.choice(others, 2, replace=False))
        common = sorted(set(hobs[ks[0]]) & set(hobs[ks[1]]) & set(hobs[ks[2]]))
        if len(common) < MIN_AGENTS:
            continue
        complete_any = True
        # stratified draw keeps the sample spread over the window
        edges = np.linspace(0, len(common), MIN_AGENTS + 1).astype(int)
        ns = [common[rng.integers(lo, max(hi, lo + 1))] for lo, hi in zip(edges[:-1], edges[1:])]
        if len(set(ns)) < MIN_AGENTS:
            continue
        D2 = np.array([[hobs[k][n] ** 2 for n in ns] for k in ks])
        Dall = np.array([[hobs[k][n] for k in ks] for n in common])
        for mode, solver in (("2d", _minimal_2d), ("1d", _minimal_1d)):
            hyp = solver(D2)
            if hyp is None:
                continue
            _, F = hyp
            agents = _locate_linear(F, Dall, mode)
            if agents is None:
                continue
            res = np.abs(Dall - np.linalg.norm(agents[:, None, :] - F[None], axis=2))
            cnt = int((res < thr).sum())
            # one candidate per track triple keeps the starts diverse
            key = (mode, tuple(sorted(int(k) for k in ks)))
            if key not in cands or cnt > cands[key][0]:
                cands[key] = (cnt, (ks, F, common, agents))
    if not complete_any:
        raise SolvabilityError(
            f"N >= {MIN_AGENTS} violated: no {MIN_AGENTS} times observe three tracks incl. the PA")
    best: dict[str, list] = {"2d": [], "1d": []}
    for key in sorted(cands, key=lambda q: -cands[q][0]):
        if len(best[key[0]]) < n_starts:
            best[key[0]].append(cands[key])
    c2 = best["2d"][0][0] if best["2d"] else -1
    c1 = best["1d"][0][0] if best["1d"] else -1
    if c1 < 0 and c2 < 0:
        raise SolvabilityError("no valid minimal hypothesis in window")
    if c2 < 0 or c1 > c2:
        mode = "1d"
    else:
        mode = "1d" if _lateral_spread(best["2d"][0][1][3]) < collinear_tol else "2d"
    log.debug("window %d: planar consensus %d, collinear %d -> %s", segment_id, c2, c1, mode)
    # every retained hypothesis is grown to the full window; the final
    # truncated cost on the raw data decides, since the minimal-sample score only
    # sees three tracks and is a weak judge of the basin
    chosen, err = None, None
    for _, hyp in best[mode]:
        try:
            m = _grow_hypothesis(hyp, mode, table, obs, hobs, tracks, times, sigma, hyp_sigma,
                                 rng, refine_rounds)
        except SolvabilityError as e:
            err = e
            continue
        score = truncated_cost(m, table, sigma)
        if chosen is None or score < chosen[0]:
            chosen = (score, m)
    if chosen is None:
        raise err
    m = chosen[1]
    _apply_gauge(m, sorted(m.agents), mode)
    m.update_stats(table)
    return Segment(times[0], times[-1], m, degenerate=(mode == "1d"), segment_id=segment_id)


def _grow_hypothesis(hyp, mode, table, obs, hobs, tracks, times, sigma, hyp_sigma, rng,
                     refine_rounds) -> MapEstimate:
    """Extend a minimal window hypothesis to all tracks and agents, then refine."""
    ks, F, common, agents = hyp
    agents_d = {n: agents[i] for i, n in enumerate(common)}
    feats = {k: F[i] for i, k in enumerate(ks)}
    for k in tracks:
        if k in feats:
            continue
        src = hobs if k in hobs else obs
        ns = [n for n in src[k] if n in agents_d]
        if len(ns) < 3:
            continue
        a = _feature_from_agents(np.array([agents_d[n] for n in ns]), np.array([src[k][n] for n in ns]),
                                 hyp_sigma, rng, mode)
        if a is not None:
            feats[k] = a
    # (re)locate every agent from all known features
    centre = np.mean(list(agents_d.values()), axis=0)
    need = 2 if mode == "1d" else 3
    located = {}
    for n in times:
        src = {k: hobs[k][n] for k in feats if k in hobs and n in hobs[k]}
        if len(src) < need:
            src = {k: obs[k][n] for k in feats if n in obs[k]}
        if len(src) < need:
            continue
        x0 = agents_d.get(n, centre)
        located[n] = _locate_agent(np.array([feats[k] for k in src]), np.array(list(src.values())),
                                   x0, hyp_sigma, mode)
    m = MapEstimate(feats, located)
    for _ in range(refine_rounds):
        m.inliers = _inliers(table, m.agents, m.features, sigma)
        m = _prune_unsupported(m, mode)
        order = sorted(m.agents)
        m = joint_refine(m, table, planar=True, mode=mode, gauge=(0, len(order) // 2))
    m.inliers = _inliers(table, m.agents, m.features, sigma)
    return _prune_unsupported(m, mode)


def _prune_unsupported(m: MapEstimate, mode: str) -> MapEstimate:
    """Drop agents / features without enough inlier support (iterated)."""
    amin = 2 if mode == "1d" else 3
    fmin = 3
    while True:
        ca: dict[int, int] = {}
        cf: dict[int, int] = {}
        for k, n in m.inliers:
            ca[n] = ca.get(n, 0) + 1
            cf[k] = cf.get(k, 0) + 1
        bad_a = [n for n in m.agents if ca.get(n, 0) < amin]
        bad_f = [k for k in m.features if cf.get(k, 0) < fmin]
        if not bad_a and not bad_f:
            return m
        for n in bad_a:
            del m.agents[n]
        for k in bad_f:
            del m.features[k]
        m.inliers = {(k, n) for k, n in m.inliers if n in m.agents and k in m.features}
        if len(m.agents) < 3 or len(m.features) < (2 if mode == "1d" else 3):
            raise SolvabilityError("window lost its support after outlier removal")


# ----------------------------------------------------------------------------
# registration


def _procrustes2d(X, Y, w=None):
    """Proper 2-D rotation and translation minimising ``sum w |R x + t - y|^2``."""
    w = np.ones(len(X)) if w is None else np.asarray(w, float)
    w = w / w.sum()
    mx, my = w @ X, w @ Y
    H = ((X - mx) * w[:, None]).T @ (Y - my)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    t = my - R @ mx
    return R, t


def _transform(R2, t2, mirror, p):
    q = np.asarray(p, dtype=float).copy()
    if mirror:
        q[..., 1] = -q[..., 1]
    out = q.copy()
    out[..., :2] = q[..., :2] @ R2.T + t2
    return out


def register_segments(segments: list[Segment], min_overlap: int = 3,
                      feature_weight: float = 1.0, table: DistanceTable | None = None,
                      sigma: float = SIGMA_INL, refine_iter: int = 5) -> MapEstimate:
    """Chain segments into the frame of the first one and average duplicates.

    Each segment is fitted onto the already registered map from its overlap
    with the previous segment; both handednesses are tried because a window
    reconstruction is only defined up to an in-plane mirror. Trusted features
    (from non-collinear windows) shared with the map join the fit, which
    settles the mirror when the overlap itself is a straight line.

    With a ``table`` the growing map is re-estimated after every segment (a
    few joint iterations on its current inliers), so rotation errors of
    single windows do not compound along the chain.
    """
    if not segments:
        raise ValueError("no segments to register")
    placed_agents: dict[int, list[np.ndarray]] = {}
    placed_feats: dict[int, list[np.ndarray]] = {}
    inliers: set = set()

    def add(seg, R2, t2, mirror):
        for n, p in seg.map.agents.items():
            placed_agents.setdefault(n, []).append(_transform(R2, t2, mirror, p))
        if not seg.degenerate:
            for k, a in seg.map.features.items():
                placed_feats.setdefault(k, []).append(_transform(R2, t2, mirror, a))
        inliers.update(seg.map.inliers)

    add(segments[0], np.eye(2), np.zeros(2), False)
    prev = segments[0]
    for seg in segments[1:]:
        common = sorted(set(seg.map.agents) & set(prev.map.agents))
        if len(common) < min_overlap:
            raise SolvabilityError(
                f"segments starting at {prev.n_start} and {seg.n_start} share {len(common)} agents "
                f"(need >= {min_overlap})"
            )
        X = np.array([seg.map.agents[n][:2] for n in common])
        Y = np.array([np.mean(placed_agents[n], axis=0)[:2] for n in common])
        w = np.ones(len(common))
        if not seg.degenerate:
            shared = sorted(k for k in seg.map.features if k in placed_feats)
            if shared:
                X = np.vstack([X, [seg.map.features[k][:2] for k in shared]])
                Y = np.vstack([Y, [np.mean(placed_feats[k], axis=0)[:2] for k in shared]])
                w = np.r_[w, feature_weight * np.ones(len(shared))]
        best = None
        for mirror in (False, True):
            Xm = X.copy()
            if mirror:
                Xm[:, 1] = -Xm[:, 1]
            R2, t2 = _procrustes2d(Xm, Y, w)
            cost = float(w @ np.sum((Xm @ R2.T + t2 - Y) ** 2, axis=1))
            if best is None or cost < best[0] - 1e-12:
                best = (cost, R2, t2, mirror)
        add(seg, best[1], best[2], best[3])
        prev = seg
        if table is not None:
            _refine_placed(placed_agents, placed_feats, table, sigma, refine_iter)
    m = MapEstimate(
        {k: np.mean(v, axis=0) for k, v in placed_feats.items()},
        {n: np.mean(v, axis=0) for n, v in placed_agents.items()},
        inliers,
    )
    return m


def _refine_placed(placed_agents, placed_feats, table, sigma, max_iter):
    m = MapEstimate({k: np.mean(v, axis=0) for k, v in placed_feats.items()},
                    {n: np.mean(v, axis=0) for n, v in placed_agents.items()})
    sub = table.select(np.isin(table.n, list(m.agents)))
    m.inliers = _inliers(sub, m.agents, m.features, sigma)
    try:
        m = _prune_unsupported(m, "2d")
        if len(m.agents) < MIN_AGENTS or len(m.features) < 3:
            return
        m = joint_refine(m, sub, planar=True, max_iter=max_iter,
                         gauge=(0, len(m.agents) // 2))
    except SolvabilityError:
        return
    for n, p in m.agents.items():
        placed_agents[n] = [p]
    for k, a in m.features.items():
        placed_feats[k] = [a]


def segment_windows(times, length: int = 100, overlap: int = 50):
    if not 0 <= overlap < length:
        raise ValueError("overlap must lie in [0, length)")
    times = sorted(times)
    if len(times) <= length:
        return [(times[0], times[-1] + 1)]
    step = length - overlap
    out = []
    start = 0
    while True:
        end = min(start + length, len(times))
        out.append((times[start], times[end - 1] + 1))
        if end == len(times):
            break
        start += step
        if len(times) - start < overlap + 3:
            # fold a short tail into the last window
            out[-1] = (out[-1][0], times[-1] + 1)
            break
    return out


# ----------------------------------------------------------------------------
# alignment and metrics


def align_to_truth(est, truth):
    """Rotation ``R`` (det +1) and offset ``r0`` minimising ``sum |R p + r0 - t|^2``."""
    X = np.asarray(est, dtype=float)
    Y = np.asarray(truth, dtype=float)
    if X.shape != Y.shape or X.ndim != 2 or len(X) < 3:
        raise ValueError("need equal-length sequences of >= 3 points")
    mx, my = X.mean(0), Y.mean(0)
    Xc, Yc = X - mx, Y - my
    s = np.linalg.svd(Xc, compute_uv=False)
    if s[0] == 0 or (len(s) > 1 and s[1] < 1e-9 * s[0]):
        raise DegenerateGeometryError("estimate has rank-deficient spread")
    H = Xc.T @ Yc
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(X.shape[1])
    D[-1, -1] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    r0 = my - R @ mx
    return R, r0, X @ R.T + r0


def rmse(aligned, truth) -> float:
    a = np.asarray(aligned, dtype=float)
    t = np.asarray(truth, dtype=float)
    if a.shape != t.shape:
        raise ValueError("rmse needs equal shapes")
    return float(np.sqrt(np.sum((a - t) ** 2) / len(a)))


def evaluate(m: MapEstimate, truth_positions, table: DistanceTable | None = None) -> dict:
    """Alignment-based report ``{rmse_m, max_dev_m, inlier_ratio, resid_std_m}``.

    Agents are aligned in 3-D, where a rotation about an in-plane axis also
    absorbs the in-plane mirror ambiguity of a planar reconstruction.
    """
    truth = np.asarray(truth_positions, dtype=float)
    times = sorted(n for n in m.agents if 0 <= n < len(truth))
    est = m.agent_array(times)
    tru = truth[times]
    _, _, al = align_to_truth(est, tru)
    dev = np.linalg.norm(al - tru, axis=1)
    if table is not None:
        m.update_stats(table)
    return {
        "rmse_m": rmse(al, tru),
        "max_dev_m": float(dev.max()),
        "inlier_ratio": float(m.stats.get("inlier_ratio", float("nan"))),
        "resid_std_m": float(m.stats.get("resid_std_m", float("nan"))),
    }


# ----------------------------------------------------------------------------
# drivers


def experiment_one(table: DistanceTable, positions, sigma: float = SIGMA_INL, seed=0,
                   confidence: float = 0.999, outlier_prior: float = 0.25,
                   threads: int | None = None) -> MapEstimate:
    """Per-feature RANSAC with known agent positions ``positions[n]``."""
    positions = np.asarray(positions, dtype=float)
    tracks = table.tracks()

    def one(k):
        n, d = table.track(k)
        if len(d) < 3:
            return k, None, n[:0]
        a, mask = ransac_feature(d, positions[n], sigma, None, [int(seed), int(k)], confidence,
                                 outlier_prior)
        return k, a, n[mask]

    threads = threads or _threads()
    if threads > 1 and len(tracks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, tracks))
    else:
        results = [one(k) for k in tracks]
    m = MapEstimate()
    used = sorted({int(v) for v in table.n})
    m.agents = {n: positions[n].copy() for n in used}
    for k, a, ns in results:
        if a is not None and len(ns):
            m.features[k] = a
            m.inliers.update((k, int(n)) for n in ns)
    m.update_stats(table)
    return m


def experiment_two(table: DistanceTable, sigma: float = SIGMA_INL, length: int = 100,
                   overlap: int = 50, seed=0, pa_track: int = 0, confidence: float = 0.999,
                   outlier_prior: float = 0.25, rounds: int = 2,
                   threads: int | None = None, max_step: float | str | None = "auto") -> MapEstimate:
    """Segmented reconstruction, registration, feature re-fit and joint refinement."""
    wins = segment_windows(table.times(), length, overlap)
    smooth = smooth_table(table, sigma)

    def one(args):
        i, (a, b) = args
        return init_segment(table.window(a, b), sigma, None, seed, pa_track, confidence,
                            outlier_prior, segment_id=i, hyp_table=smooth.window(a, b),
                            hyp_sigma=sigma / 2)

    threads = threads or _threads()
    if threads > 1 and len(wins) > 1:
        with ThreadPoolExecutor(threads) as ex:
            segs = list(ex.map(one, enumerate(wins)))
    else:
        segs = [one(w) for w in enumerate(wins)]
    m = register_segments(segs, table=table, sigma=sigma)
    # every feature is re-fitted against the whole registered trajectory; the
    # window estimates only seed the check below
    placed = np.zeros((max(m.agents) + 1, 3))
    for n, p in m.agents.items():
        placed[n] = p
    sub = table.select(np.isin(table.n, list(m.agents)))
    for k in sub.tracks():
        n, d = sub.track(k)
        if len(d) < 3:
            continue
        a, mask = ransac_feature(d, placed[n], sigma, None, [int(seed), 10_000 + int(k)],
                                 confidence, outlier_prior, min_inlier_ratio=0.2)
        if mask.any():
            m.features[k] = a
    for _ in range(rounds):
        _relocate_agents(m, table, sigma, max_step=max_step)
        m.inliers = _inliers(table, m.agents, m.features, sigma)
        m = _prune_unsupported(m, "2d")
        times = sorted(m.agents)
        m = joint_refine(m, table, planar=True, gauge=(0, len(times) // 2))
    _relocate_agents(m, table, sigma, max_step=max_step)
    m.inliers = _inliers(table, m.agents, m.features, sigma)
    m = _prune_unsupported(m, "2d")
    m.update_stats(table)
    m.stats["segments"] = len(segs)
    m.stats["degenerate_segments"] = int(sum(s.degenerate for s in segs))
    return m


def synthetic_table(positions, features, visible=None, sigma: float = SIGMA_INL,
                    outlier_ratio: float = 0.25, outlier_range: float = 1.0,
                    seed=0) -> DistanceTable:
    """Distance table from geometry with Gaussian inliers and uniform outliers.

    Outliers replace the true distance by ``d + U(-outlier_range, outlier_range)``.
    """
    P = np.asarray(positions, dtype=float)
    F = np.asarray(features, dtype=float)
    N, K = len(P), len(F)
    vis = np.ones((N, K), bool) if visible is None else np.asarray(visible, bool)
    rng = np.random.default_rng(seed)
    D = np.linalg.norm(P[:, None, :] - F[None], axis=2)
    noise = rng.normal(0.0, sigma, (N, K))
    out = rng.random((N, K)) < outlier_ratio
    offs = rng.uniform(-outlier_range, outlier_range, (N, K))
    meas = np.where(out, D + offs, D + noise)
    meas = np.abs(meas)
    nn, kk = np.nonzero(vis)
    return DistanceTable.from_pairs(nn, kk, meas[nn, kk])
