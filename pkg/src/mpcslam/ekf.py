"""Extended Kalman filter tracking of multipath components.

State ordering (``K`` live tracks, component-major)::

    [d(K) az(K) el(K) | d'(K) az'(K) el'(K) | a_HH..a_VV (4K) | ph_HH..ph_VV (4K)]

so component ``c`` of track ``k`` sits at ``c * K + k``. The polarimetric
phases carry a static offset only; all snapshot-to-snapshot phase motion is
explained by the distance through the carrier term of the frequency
response.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import NoiseCovariance, RfConfig, basis_derivs
from .geometry import wrap_angle
from .sage import (
    DegenerateModelError,
    Detection,
    InterpGrids,
    detect_mpcs,
    estimate_dmc,
    gn_refine,
    initialise,
    weights_wls,
)

log = logging.getLogger(__name__)

NSTATE = 14
D, AZ, EL, DD, DAZ, DEL = range(6)
ALPHA0, PHASE0 = 6, 10
SINR_CLAMP = 300.0
V_POLS = (1, 3)  # HV, VV use the V receive port


@dataclass
class ProcessNoise:
    q_d: float = 1e-4
    q_az: float = 1e-6
    q_el: float = 1e-6
    q_alpha: float = 1e-4
    q_phase: float = 1e-4
    dt: float = 1.0

    def __post_init__(self):
        if min(self.q_d, self.q_az, self.q_el, self.q_alpha, self.q_phase) < 0:
            raise ValueError("process noise variances must be non-negative")


def build_F_Q(K: int, pn: ProcessNoise) -> tuple[np.ndarray, np.ndarray]:
    """Discrete white-noise-acceleration transition and noise matrices."""
    if K < 1:
        raise ValueError("need at least one track")
    dt = pn.dt
    F1 = np.eye(NSTATE)
    F1[0:3, 3:6] = dt * np.eye(3)
    blk = np.array([[dt**4 / 4, dt**3 / 2], [dt**3 / 2, dt**2]])
    Qmu = np.kron(np.diag([pn.q_d, pn.q_az, pn.q_el]), blk)
    # interleaved (d, d', az, az', el, el') -> (d, az, el, d', az', el')
    perm = [0, 2, 4, 1, 3, 5]
    Qmu = Qmu[np.ix_(perm, perm)]
    Q1 = np.zeros((NSTATE, NSTATE))
    Q1[:6, :6] = Qmu
    Q1[6:10, 6:10] = pn.q_alpha * np.eye(4)
    Q1[10:14, 10:14] = pn.q_phase * np.eye(4)
    I = np.eye(K)
    return np.kron(F1, I), np.kron(Q1, I)


@dataclass
class TrackState:
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    P: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ids: list[int] = field(default_factory=list)
    birth_n: list[int] = field(default_factory=list)
    odometer: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.ids)

    def idx(self, comp: int, k: int) -> int:
        return comp * self.K + k

    def track_slice(self, k: int) -> np.ndarray:
        return np.arange(NSTATE) * self.K + k

    def component(self, comp: int) -> np.ndarray:
        K = self.K
        return self.x[comp * K:(comp + 1) * K]

    def mu(self, k: int) -> np.ndarray:
        return self.x[[self.idx(c, k) for c in (D, AZ, EL)]]

    def gamma(self, k: int) -> np.ndarray:
        a = self.x[[self.idx(ALPHA0 + p, k) for p in range(4)]]
        ph = self.x[[self.idx(PHASE0 + p, k) for p in range(4)]]
        return a * np.exp(1j * ph)

    def copy(self) -> "TrackState":
        return TrackState(self.x.copy(), self.P.copy(), list(self.ids), list(self.birth_n),
                          list(self.odometer))


def track_vector(d, az, el, gamma, rates=(0.0, 0.0, 0.0)) -> np.ndarray:
    g = np.asarray(gamma, dtype=complex)
    return np.r_[d, az, el, rates, np.abs(g), np.angle(g)]


def from_tracks(vectors, covs, ids, birth_n) -> TrackState:
    """Assemble a state from per-track 14-vectors and 14x14 covariances."""
    K = len(vectors)
    ts = TrackState(np.zeros(NSTATE * K), np.zeros((NSTATE * K, NSTATE * K)), list(ids),
                    list(birth_n), [0.0] * K)
    for k in range(K):
        sl = ts.track_slice(k)
        ts.x[sl] = vectors[k]
        ts.P[np.ix_(sl, sl)] = covs[k]
    return ts


def append_tracks(ts: TrackState, vectors, covs, ids, birth_n) -> TrackState:
    """New state holding ``ts``'s tracks followed by the given ones."""
    K0 = ts.K
    vecs = [ts.x[ts.track_slice(k)] for k in range(K0)] + list(vectors)
    allids = ts.ids + list(ids)
    births = ts.birth_n + list(birth_n)
    out = from_tracks(vecs, [np.zeros((NSTATE, NSTATE))] * len(vecs), allids, births)
    old = np.concatenate([out.track_slice(k) for k in range(K0)]) if K0 else np.zeros(0, int)
    src = np.concatenate([ts.track_slice(k) for k in range(K0)]) if K0 else np.zeros(0, int)
    out.P[np.ix_(old, old)] = ts.P[np.ix_(src, src)]
    for j, c in enumerate(covs):
        sl = out.track_slice(K0 + j)
        out.P[np.ix_(sl, sl)] = c
    out.odometer = ts.odometer + [0.0] * len(vectors)
    return out


def remove_tracks(ts: TrackState, drop) -> TrackState:
    drop = set(drop)
    keep = [k for k in range(ts.K) if k not in drop]
    if len(keep) == ts.K:
        return ts
    out = TrackState(ids=[ts.ids[k] for k in keep], birth_n=[ts.birth_n[k] for k in keep],
                     odometer=[ts.odometer[k] for k in keep])
    sel = np.array([c * ts.K + k for c in range(NSTATE) for k in keep], dtype=int)
    out.x = ts.x[sel]
    out.P = ts.P[np.ix_(sel, sel)]
    return out


def predict(ts: TrackState, pn: ProcessNoise) -> TrackState:
    if ts.K == 0:
        return ts.copy()
    F, Q = build_F_Q(ts.K, pn)
    out = ts.copy()
    out.x = F @ ts.x
    out.P = F @ ts.P @ F.T + Q
    out.P = (out.P + out.P.T) / 2
    for k in range(ts.K):
        out.odometer[k] += float(abs(out.x[out.idx(DD, k)])) * pn.dt
    return out


def signal(ts: TrackState, rf: RfConfig) -> np.ndarray:
    s = np.zeros(rf.size, dtype=complex)
    for k in range(ts.K):
        B, *_ = basis_derivs(rf, *ts.mu(k))
        s += (ts.gamma(k)[:, None, None] * B).reshape(rf.size)
    return s


def jacobian(ts: TrackState, rf: RfConfig) -> np.ndarray:
    """Analytic ``ds/dx``, shape ``(nf * nch, 14 K)``; rate columns are zero."""
    K = ts.K
    J = np.zeros((rf.size, NSTATE * K), dtype=complex)
    for k in range(K):
        g = ts.gamma(k)
        B, Bd, Bp, Bt = basis_derivs(rf, *ts.mu(k))
        for comp, dB in ((D, Bd), (AZ, Bp), (EL, Bt)):
            J[:, comp * K + k] = (g[:, None, None] * dB).reshape(rf.size)
        for p in range(4):
            col = np.zeros((4, rf.nrx, rf.nf), dtype=complex)
            phase = ts.x[ts.idx(PHASE0 + p, k)]
            col[p] = np.exp(1j * phase) * B[p]
            J[:, (ALPHA0 + p) * K + k] = col.reshape(rf.size)
            col[p] = 1j * g[p] * B[p]
            J[:, (PHASE0 + p) * K + k] = col.reshape(rf.size)
    return J


def fisher(J: np.ndarray, R: NoiseCovariance) -> tuple[np.ndarray, np.ndarray]:
    """``(R^-1 J, 2 Re{J^H R^-1 J})``."""
    W = R.solve(J)
    return W, 2 * (J.conj().T @ W).real


def _normalise(ts: TrackState) -> None:
    """Wrap angles, fold elevation and keep magnitudes non-negative in place."""
    K = ts.K
    for k in range(K):
        iaz, iel = ts.idx(AZ, k), ts.idx(EL, k)
        el = ts.x[iel]
        if abs(el) > np.pi / 2:
            ts.x[iel] = np.sign(el) * np.pi - el
            ts.x[iaz] += np.pi
            flip = [iel, ts.idx(DEL, k)]
            for i in flip:
                ts.x[i] = ts.x[i] if i == iel else -ts.x[i]
                ts.P[i, :] *= -1
                ts.P[:, i] *= -1
            # cos(el) changes sign, absorbed by the V-port weights
            for p in V_POLS:
                ts.x[ts.idx(PHASE0 + p, k)] += np.pi
        ts.x[iaz] = wrap_angle(ts.x[iaz])
        for p in range(4):
            ia, ip = ts.idx(ALPHA0 + p, k), ts.idx(PHASE0 + p, k)
            if ts.x[ia] < 0:
                ts.x[ia] = -ts.x[ia]
                ts.x[ip] += np.pi
                ts.P[ia, :] *= -1
                ts.P[:, ia] *= -1
            ts.x[ip] = wrap_angle(ts.x[ip])


def _joseph_posterior(Pm, Dm):
    """``(P^-^-1 + D)^-1`` in Joseph form through a square-root factor of ``D``."""
    lam, V = np.linalg.eigh((Dm + Dm.T) / 2)
    G = V * np.sqrt(np.clip(lam, 0.0, None))
    S = np.eye(len(lam)) + G.T @ Pm @ G
    Kg = np.linalg.solve(S, G.T @ Pm).T
    A = np.eye(len(Pm)) - Kg @ G.T
    P = A @ Pm @ A.T + Kg @ Kg.T
    return (P + P.T) / 2


def _state_diff(ts: TrackState, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = a - b
    K = ts.K
    for comp in [AZ] + [PHASE0 + p for p in range(4)]:
        sl = slice(comp * K, (comp + 1) * K)
        out[sl] = wrap_angle(out[sl])
    return out


def _posterior_cost(cur: TrackState, y, R: NoiseCovariance, rf: RfConfig, xm, Pinv) -> float:
    r = y - signal(cur, rf)
    dx = _state_diff(cur, cur.x, xm)
    return float((r.conj() @ R.solve(r)).real + dx @ Pinv @ dx)


def update(ts: TrackState, y, R: NoiseCovariance, rf: RfConfig, iterations: int = 1,
           tol: float = 1e-9, max_halvings: int = 6) -> TrackState:
    """Measurement update in score / Fisher-information form.

    ``P = (I + K_n D) P^-`` with ``K_n = -P^- (I + D P^-)^-1``, i.e.
    ``P = (P^-^-1 + D)^-1``, evaluated in Joseph form through a square-root
    factor of ``D``; then ``dx = P q``.

    With ``iterations > 1`` the step is repeated as Gauss-Newton on the
    posterior (iterated EKF), relinearising ``s`` at the latest estimate.
    Each step is backtracked until the posterior cost drops: on a sharp
    manoeuvre the full step can overshoot by half a wavelength, where the
    weight phases absorb the carrier shift and the track locks onto an alias.
    A single iteration is the plain EKF step.
    """
    if ts.K == 0:
        return ts.copy()
    y = np.asarray(y, dtype=complex)
    Pm = ts.P
    xm = ts.x
    cur = ts.copy()
    iterated = iterations > 1
    Pinv = np.linalg.pinv(Pm, hermitian=True) if iterated else None
    cost = _posterior_cost(cur, y, R, rf, xm, Pinv) if iterated else 0.0
    for it in range(max(1, iterations)):
        r = y - signal(cur, rf)
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite innovation")
        J = jacobian(cur, rf)
        W, Dm = fisher(J, R)
        q = 2 * (W.conj().T @ r).real
        P = _joseph_posterior(Pm, Dm)
        if it == 0:
            dx = P @ q
        else:
            dx = P @ (q - Pinv @ _state_diff(cur, cur.x, xm))
        if not iterated:
            cur = cur.copy()
            cur.x = cur.x + dx
            cur.P = P
            break
        step, accepted = 1.0, None
        for _ in range(max_halvings + 1):
            nxt = cur.copy()
            nxt.x = cur.x + step * dx
            nxt.P = P
            dists = nxt.component(D)
            if np.all((dists >= 0) & (dists < rf.delay_window)):
                c = _posterior_cost(nxt, y, R, rf, xm, Pinv)
                if c < cost:
                    accepted, cost = nxt, c
                    break
            step *= 0.5
        if accepted is None:
            cur = cur.copy()
            cur.P = P
            break
        cur = accepted
        if np.max(np.abs(step * dx)) < tol:
            break
    _normalise(cur)
    return cur


def _weight_covariance(ts: TrackState, k: int) -> np.ndarray:
    """Covariance of the 8 magnitude and phase states given the path geometry.

    The weight phases absorb the carrier phase of the distance, so their
    marginal variance reflects distance uncertainty; conditioning on the
    structure states leaves the weight uncertainty proper.
    """
    sl = ts.track_slice(k)
    Pk = ts.P[np.ix_(sl, sl)]
    s, w = np.arange(ALPHA0), np.arange(ALPHA0, NSTATE)
    Pss, Psw, Pww = Pk[np.ix_(s, s)], Pk[np.ix_(s, w)], Pk[np.ix_(w, w)]
    return Pww - Psw.T @ np.linalg.pinv(Pss, rcond=1e-12, hermitian=True) @ Psw


def sinr_db(ts: TrackState, k: int) -> float:
    """Sum over polarisations of ``|gamma_p|^2 / var(gamma_p)`` in dB.

    ``var(gamma_p)`` is the linearised variance of the complex weight given
    the path geometry, ``var(alpha) + alpha^2 var(phase)``, the same quantity
    the weighted least-squares covariance gives at birth.
    """
    C = _weight_covariance(ts, k)
    total = 0.0
    for p in range(4):
        a2 = ts.x[ts.idx(ALPHA0 + p, k)] ** 2
        v = C[p, p] + a2 * C[4 + p, 4 + p]
        if a2 == 0:
            continue
        if v <= 0:
            return SINR_CLAMP
        total += a2 / v
    if total <= 0:
        return -SINR_CLAMP
    return float(np.clip(10 * np.log10(total), -SINR_CLAMP, SINR_CLAMP))


def prune(ts: TrackState, eps_r: float = 0.0, n: int = 0) -> tuple[TrackState, list[tuple[int, int]]]:
    """Drop tracks whose SINR fell below ``eps_r`` dB; returns death records."""
    drop = [k for k in range(ts.K) if sinr_db(ts, k) < eps_r]
    deaths = [(ts.ids[k], n) for k in drop]
    return remove_tracks(ts, drop), deaths


def drop_outside_window(ts: TrackState, rf: RfConfig, n: int = 0):
    """Remove tracks whose distance left ``[0, c nf / bw)``; returns death records."""
    drop = [k for k in range(ts.K) if not 0.0 <= ts.x[ts.idx(D, k)] < rf.delay_window]
    return remove_tracks(ts, drop), [(ts.ids[k], n) for k in drop]


def merge_duplicates(ts: TrackState, rf: RfConfig, n: int = 0, d_tol: float | None = None,
                     ang_tol: float = 0.02):
    """Fold tracks that sit on the same path into the oldest one.

    Two tracks closer than ``d_tol`` (default a quarter wavelength) in
    distance and ``ang_tol`` in both angles describe a single path; left alone
    they tend to grow large opposing weights that cancel.  The survivor takes
    the complex sum of the weights.  Returns the new state and death records.
    """
    if ts.K < 2:
        return ts, []
    d_tol = rf.wavelength / 4 if d_tol is None else d_tol
    ts = ts.copy()
    drop: list[int] = []
    order = sorted(range(ts.K), key=lambda k: (ts.birth_n[k], ts.ids[k]))
    for i, a in enumerate(order):
        if a in drop:
            continue
        for b in order[i + 1:]:
            if b in drop:
                continue
            da = np.abs(ts.mu(a) - ts.mu(b))
            if da[0] < d_tol and da[1] < ang_tol and da[2] < ang_tol:
                g = ts.gamma(a) + ts.gamma(b)
                for p in range(4):
                    ts.x[ts.idx(ALPHA0 + p, a)] = abs(g[p])
                    ts.x[ts.idx(PHASE0 + p, a)] = np.angle(g[p])
                drop.append(b)
    return remove_tracks(ts, drop), [(ts.ids[k], n) for k in drop]


@dataclass
class TrackerConfig:
    k_max: int = 30
    beta_max: float = 0.95
    eps_r: float = 0.0
    eps_birth: float = 20.0
    process: ProcessNoise = field(default_factory=ProcessNoise)
    n_az: int = 360
    n_el: int = 90
    oversample: int = 8
    rho_birth: float = 4.0
    rate_prior: tuple[float, float, float] = (0.03**2, 0.01**2, 0.01**2)
    phase_prior: float = np.pi**2
    birth_every: int = 1
    refine_births: bool = True
    iterations: int = 5
    reinit_distance: float | None = None  # defaults to one wavelength
    # white-noise floor relative to the snapshot power; keeps R well
    # conditioned when the residual is only rounding error
    dynamic_range_db: float = 100.0


def _polar_jacobian_single(rf, d, az, el, gamma) -> np.ndarray:
    """Columns ``d, az, el, alpha x4, phase x4`` for an isolated path."""
    tmp = from_tracks([track_vector(d, az, el, gamma)], [np.zeros((NSTATE, NSTATE))], [0], [0])
    J = jacobian(tmp, rf)
    cols = [0, 1, 2] + list(range(6, 14))
    return J[:, cols]


def birth_covariance(rf, det: Detection, R: NoiseCovariance, grids: InterpGrids,
                     cfg: TrackerConfig) -> np.ndarray:
    """Prior for a new track: inflated inverse Fisher information regularised by
    grid-cell quantisation (structure) and weak weight priors."""
    J = _polar_jacobian_single(rf, det.d, det.az, det.el, det.gamma)
    _, Fm = fisher(J, R)
    amp = max(float(np.max(np.abs(det.gamma))), 1e-12)
    prior = np.r_[grids.quantisation_variances(), [amp**2] * 4, [cfg.phase_prior] * 4]
    C = np.linalg.inv(Fm + np.diag(1.0 / prior)) * cfg.rho_birth
    C = (C + C.T) / 2
    P = np.zeros((NSTATE, NSTATE))
    idx = [0, 1, 2] + list(range(6, 14))
    P[np.ix_(idx, idx)] = C
    P[3:6, 3:6] = np.diag(cfg.rate_prior)
    return P


def _birth_sinr(det: Detection, cov_block: np.ndarray | None) -> float:
    if cov_block is None:
        return SINR_CLAMP
    v = np.real(np.diag(cov_block))
    tot = float(np.sum(np.abs(det.gamma) ** 2 / np.maximum(v, 1e-300)))
    return 10 * np.log10(tot) if tot > 0 else -SINR_CLAMP


def birth(ts: TrackState, y, R: NoiseCovariance, rf: RfConfig, grids: InterpGrids,
          cfg: TrackerConfig, n: int, next_id: int) -> tuple[TrackState, int]:
    """Detect new paths on the tracking residual and append the reliable ones."""
    budget = cfg.k_max - ts.K
    if budget <= 0:
        return ts, next_id
    y = np.asarray(y, dtype=complex)
    p_n = float(np.vdot(y, y).real)
    s = signal(ts, rf)
    beta0 = 0.0
    for k in range(ts.K):
        sk = signal(remove_tracks(ts, [j for j in range(ts.K) if j != k]), rf)
        beta0 += float(np.vdot(sk, sk).real) / max(p_n, 1e-300)
    res = y - s
    vecs, covs, ids = [], [], []
    # one detection at a time: the first candidate failing the gate ends the
    # search, since noise alone rarely lets the energy ratio reach beta_max
    while len(vecs) < budget and beta0 < cfg.beta_max:
        dets, _ = detect_mpcs(res, rf, grids, 1, cfg.beta_max, R, total_energy=p_n, beta0=beta0)
        if not dets:
            break
        det = dets[0]
        if cfg.refine_births:
            try:
                det = gn_refine([det], res, rf, R, max_iter=20).detections[0]
            except (DegenerateModelError, FloatingPointError):
                break
        if _birth_sinr(det, det.cov) < cfg.eps_birth:
            break
        vec = track_vector(det.d, det.az, det.el, det.gamma)
        sk = signal(from_tracks([vec], [np.eye(NSTATE)], [0], [0]), rf)
        vecs.append(vec)
        covs.append(birth_covariance(rf, det, R, grids, cfg))
        ids.append(next_id)
        next_id += 1
        res = res - sk
        beta0 += float(np.vdot(sk, sk).real) / max(p_n, 1e-300)
    if not vecs:
        return ts, next_id
    return append_tracks(ts, vecs, covs, ids, [n] * len(ids)), next_id


def reinit_weights(ts: TrackState, y, R: NoiseCovariance, rf: RfConfig,
                   distance: float) -> TrackState:
    """Re-estimate the weights of tracks that moved ``distance`` since the last reset."""
    due = [k for k in range(ts.K) if ts.odometer[k] >= distance]
    if not due:
        return ts
    out = ts.copy()
    y = np.asarray(y, dtype=complex)
    for k in due:
        others = remove_tracks(out, [k])
        res = y - signal(others, rf)
        try:
            gam, cov = weights_wls(out.mu(k), res, R, return_cov=True)
        except DegenerateModelError:
            continue
        ia = [out.idx(ALPHA0 + p, k) for p in range(4)]
        ip = [out.idx(PHASE0 + p, k) for p in range(4)]
        w = ia + ip
        out.x[ia] = np.abs(gam)
        out.x[ip] = np.angle(gam)
        v = np.real(np.diag(cov)) / 2
        out.P[w, :] = 0.0
        out.P[:, w] = 0.0
        out.P[ia, ia] = v
        out.P[ip, ip] = np.minimum(v / np.maximum(np.abs(gam) ** 2, 1e-300), np.pi**2)
        out.odometer[k] = 0.0
    return out


@dataclass
class FilterResult:
    rows: list[tuple[int, int, float, float, float, float]]
    archive: list[dict]
    dmc: list
    final: TrackState


def floor_noise(dmc, y, rf: RfConfig, dynamic_range_db: float):
    """Raise ``sigma_w`` to at least the snapshot power minus the dynamic range.

    Returns ``(dmc, R)``; ``R`` is rebuilt only when the floor is active.
    """
    p = float(np.mean(np.abs(np.asarray(y)) ** 2))
    floor = np.sqrt(p * 10.0 ** (-dynamic_range_db / 10.0))
    if dmc.sigma_w < floor:
        dmc = replace(dmc, sigma_w=float(floor))
    return dmc, NoiseCovariance(rf, dmc)


def initial_state(y, rf: RfConfig, grids: InterpGrids, cfg: TrackerConfig):
    dets, dmc, R = initialise(y, rf, grids, cfg.k_max, cfg.beta_max)
    dmc, R = floor_noise(dmc, y, rf, cfg.dynamic_range_db)
    vecs, covs = [], []
    for det in dets:
        vecs.append(track_vector(det.d, det.az, det.el, det.gamma))
        covs.append(birth_covariance(rf, det, R, grids, cfg))
    ts = from_tracks(vecs, covs, list(range(len(vecs))), [0] * len(vecs))
    return ts, dmc, R


def run_filter(Y, rf: RfConfig, cfg: TrackerConfig | None = None, grids: InterpGrids | None = None,
               callback=None) -> FilterResult:
    """Track all paths through a snapshot sequence.

    The first snapshot is initialised by detection plus refinement; from the
    second on every snapshot runs predict, update, birth, prune and weight
    re-initialisation. Rows of the returned distance table are
    ``(n, k, d, az, el, sinr_db)`` for every live track.
    """
    cfg = cfg or TrackerConfig()
    Y = np.asarray(Y)
    if len(Y) < 2:
        raise ValueError("run_filter needs at least two snapshots")
    grids = grids or InterpGrids(rf, cfg.n_az, cfg.n_el, cfg.oversample)
    reinit_d = cfg.reinit_distance or rf.wavelength
    ts, dmc, R = initial_state(Y[0], rf, grids, cfg)
    next_id = ts.K
    rows = []
    history: dict[int, list[float]] = {}
    born: dict[int, int] = {}
    died: dict[int, int] = {}
    dmcs = [dmc]

    def emit(n):
        for k in range(ts.K):
            s = sinr_db(ts, k)
            tid = ts.ids[k]
            history.setdefault(tid, []).append(s)
            born.setdefault(tid, ts.birth_n[k])
            d, az, el = ts.mu(k)
            rows.append((n, tid, float(d), float(az), float(el), s))

    emit(0)
    if callback:
        callback(0, ts)
    for n in range(1, len(Y)):
        ts = predict(ts, cfg.process)
        ts, out = drop_outside_window(ts, rf, n)
        ts = update(ts, Y[n], R, rf, cfg.iterations)
        ts, out2 = drop_outside_window(ts, rf, n)
        ts, out3 = merge_duplicates(ts, rf, n)
        for tid, dn in out + out2 + out3:
            died[tid] = dn
        res = Y[n] - signal(ts, rf)
        dmc, R = floor_noise(estimate_dmc(res, rf), Y[n], rf, cfg.dynamic_range_db)
        dmcs.append(dmc)
        if cfg.birth_every and n % cfg.birth_every == 0:
            ts, next_id = birth(ts, Y[n], R, rf, grids, cfg, n, next_id)
        ts, deaths = prune(ts, cfg.eps_r, n)
        for tid, dn in deaths:
            died[tid] = dn
        ts = reinit_weights(ts, Y[n], R, rf, reinit_d)
        emit(n)
        if callback:
            callback(n, ts)
    archive = []
    for tid in sorted(history):
        h = history[tid]
        archive.append({
            "id": int(tid),
            "birth_n": int(born[tid]),
            "death_n": None if tid not in died else int(died[tid]),
            "mean_sinr_db": float(np.mean(h)),
        })
    rows.sort(key=lambda r: (r[0], r[1]))
    return FilterResult(rows, archive, dmcs, ts)
