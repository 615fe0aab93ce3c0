"""Successive-cancellation MPC detection, weight estimation, DMC estimation and
maximum-likelihood refinement for the first snapshot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gamma as gamma_dist

from .channel import (
    C0,
    DmcParams,
    NoiseCovariance,
    RfConfig,
    basis,
    basis_derivs,
    basis_matrix,
)
from .geometry import wrap_angle

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12


class DegenerateModelError(np.linalg.LinAlgError):
    """Raised when ``B(mu)`` (or its weighted normal matrix) loses rank."""


@dataclass
class InterpGrids:
    """Angle grid plus the complex shifting matrix used for delay interpolation."""

    rf: RfConfig
    n_az: int = 360
    n_el: int = 90
    oversample: int = 8
    az_range: tuple[float, float] = (-np.pi, np.pi)
    el_range: tuple[float, float] = (-np.pi / 2, np.pi / 2)
    chunk: int = 2048

    def __post_init__(self):
        a0, a1 = self.az_range
        e0, e1 = self.el_range
        self.az = a0 + (a1 - a0) * np.arange(self.n_az) / self.n_az
        self.el = e0 + (e1 - e0) * (np.arange(self.n_el) + 0.5) / self.n_el
        self.nf_interp = self.oversample * self.rf.nf
        k = np.arange(self.rf.nf) - (self.rf.nf - 1) / 2
        # f'_i = i / nf' for i = 0 .. nf'-1 keeps d' inside [0, window)
        self.f_interp = np.arange(self.nf_interp) / self.nf_interp
        self.A_f = np.exp(-2j * np.pi * np.outer(k, self.f_interp))
        self.distances = self.rf.delay_window * self.f_interp
        AZ, EL = np.meshgrid(self.az, self.el, indexing="ij")
        self.grid_az = AZ.ravel()
        self.grid_el = EL.ravel()
        ct = np.cos(self.grid_el)
        u = np.stack([ct * np.cos(self.grid_az), ct * np.sin(self.grid_az), np.sin(self.grid_el)], axis=1)
        # conjugated steering rows, (ngrid, nrx)
        self._steer_h = np.exp(-2j * np.pi * (u @ self.rf.elements.T)) / np.sqrt(self.rf.nrx)

    @property
    def d_step(self) -> float:
        return self.rf.delay_window / self.nf_interp

    @property
    def az_step(self) -> float:
        return (self.az_range[1] - self.az_range[0]) / self.n_az

    @property
    def el_step(self) -> float:
        return (self.el_range[1] - self.el_range[0]) / self.n_el

    def quantisation_variances(self) -> np.ndarray:
        """Uniform-error variances of one grid cell in ``(d, az, el)``."""
        return np.array([self.d_step, self.az_step, self.el_step]) ** 2 / 12


@dataclass
class Detection:
    d: float
    az: float
    el: float
    gamma: np.ndarray
    beta: float = 0.0
    cov: np.ndarray | None = field(default=None, repr=False)

    @property
    def mu(self) -> np.ndarray:
        return np.array([self.d, self.az, self.el])


def power_spectrum(y_res, grids: InterpGrids) -> np.ndarray:
    """Matched-filter power over (angle cell, distance sample), ``(ngrid, nf')``.

    Beamspace first (``ngrid x nrx`` times ``nrx x nf`` per polarisation
    block) then delay (``nf x nf'``); the four blocks add incoherently because
    each carries its own unknown weight.
    """
    rf = grids.rf
    Y = np.asarray(y_res).reshape(4, rf.nrx, rf.nf)
    Af = grids.A_f.conj() / np.sqrt(rf.nf)
    ngrid = len(grids.grid_az)
    out = np.empty((ngrid, grids.nf_interp))
    for g0 in range(0, ngrid, grids.chunk):
        S = grids._steer_h[g0:g0 + grids.chunk]
        acc = np.zeros((len(S), grids.nf_interp))
        for p in range(4):
            z = (S @ Y[p]) @ Af
            acc += z.real**2 + z.imag**2
        out[g0:g0 + grids.chunk] = acc
    return out


def peak_search(y_res, grids: InterpGrids) -> tuple[float, float, float]:
    """Grid triple maximising the power spectrum; ties go to the lowest index."""
    P = power_spectrum(y_res, grids)
    flat = int(np.argmax(P))
    g, i = divmod(flat, grids.nf_interp)
    return float(grids.distances[i]), float(grids.grid_az[g]), float(grids.grid_el[g])


def _check_rank(G: np.ndarray, what: str, rtol: float = 1e-10) -> None:
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= rtol * max(s[0], 1e-300):
        raise DegenerateModelError(f"{what} is rank deficient (cond={s[0] / max(s[-1], 1e-300):.3g})")


def weights_ls(mu, y_res, rf: RfConfig) -> np.ndarray:
    """Least-squares polarimetric weights ``(B^H B)^-1 B^H y``."""
    B = basis_matrix(rf, *mu)
    G = B.conj().T @ B
    _check_rank(G, "B^H B")
    return np.linalg.solve(G, B.conj().T @ np.asarray(y_res))


def weights_wls(mu, y_res, R: NoiseCovariance, return_cov: bool = False):
    """Weighted least-squares weights ``(B^H R^-1 B)^-1 B^H R^-1 y``.

    With ``return_cov`` also returns the estimator covariance
    ``(B^H R^-1 B)^-1``.
    """
    B = basis_matrix(R.rf, *mu)
    W = R.solve(B)
    G = B.conj().T @ W
    G = (G + G.conj().T) / 2
    _check_rank(G, "B^H R^-1 B")
    gam = np.linalg.solve(G, W.conj().T @ np.asarray(y_res))
    if return_cov:
        return gam, np.linalg.inv(G)
    return gam


def _signal(rf: RfConfig, d, az, el, gam) -> np.ndarray:
    return (np.asarray(gam)[:, None, None] * basis(rf, d, az, el)).reshape(rf.size)


def detect_mpcs(y, rf: RfConfig, grids: InterpGrids, k_budget: int = 30, beta_max: float = 0.95,
                R: NoiseCovariance | None = None, total_energy: float | None = None,
                beta0: float = 0.0) -> tuple[list[Detection], np.ndarray]:
    """Detect-estimate-subtract loop.

    ``y`` is the (residual) snapshot to search, ``total_energy`` the energy of
    the full snapshot used for the captured-energy ratio, and ``beta0`` the
    ratio already explained by existing tracks. Returns the detections and
    the final residual.
    """
    y = np.asarray(y, dtype=complex)
    p_n = float(np.vdot(y, y).real) if total_energy is None else float(total_energy)
    res = y.copy()
    beta = beta0
    dets: list[Detection] = []
    if p_n <= 0:
        return dets, res
    while len(dets) < k_budget and beta < beta_max:
        d, az, el = peak_search(res, grids)
        mu = (d, az, el)
        try:
            if R is None:
                gam, cov = weights_ls(mu, res, rf), None
            else:
                gam, cov = weights_wls(mu, res, R, return_cov=True)
        except DegenerateModelError:
            log.debug("skipping degenerate peak at %s", mu)
            break
        s = _signal(rf, d, az, el, gam)
        res = res - s
        beta += float(np.vdot(s, s).real) / p_n
        dets.append(Detection(d, az, el, gam, beta, cov))
    return dets, res


def delay_profile(y_res, rf: RfConfig) -> np.ndarray:
    """Power delay profile averaged over all channels, ``nf`` bins."""
    Y = np.asarray(y_res).reshape(rf.nch, rf.nf)
    k = np.arange(rf.nf)
    Fi = np.exp(2j * np.pi * np.outer(k, k) / rf.nf)
    h = Y @ Fi / rf.nf
    return np.mean(np.abs(h) ** 2, axis=0)


def estimate_dmc(y_res, rf: RfConfig, min_tail: int = 4) -> DmcParams:
    """Dense-multipath and white-noise parameters from a residual snapshot.

    The channel-averaged delay profile is split into an exponential tail
    starting at its peak and a flat floor. The floor level comes from the
    median of the off-tail bins (debiased for the chi-square spread of the
    average); the tail is fitted by a log-linear regression.
    """
    pdp = delay_profile(y_res, rf)
    if not np.any(pdp > 0):
        return DmcParams(0.0, 1.0, 0.0, SIGMA_FLOOR)
    nf = rf.nf
    m = rf.nch
    # median of a mean of m unit exponentials, relative to its mean
    med_ratio = gamma_dist.median(m) / m

    def floor_of(mask):
        vals = pdp[mask] if np.any(mask) else pdp
        return float(np.median(vals) / med_ratio)

    q_on = int(np.argmax(pdp))
    floor = floor_of(np.ones(nf, dtype=bool))
    margin = 3.0 / np.sqrt(m)
    tail = []
    for _ in range(3):
        tail = []
        for j in range(nf):
            q = (q_on + j) % nf
            if pdp[q] - floor > margin * floor:
                tail.append(q)
            else:
                break
        mask = np.ones(nf, dtype=bool)
        mask[tail] = False
        floor = floor_of(mask)
    sigma_w = max(np.sqrt(max(floor, 0.0) * nf), SIGMA_FLOOR)
    if len(tail) < min_tail:
        white = float(np.mean(pdp)) * nf
        return DmcParams(0.0, 1.0, 0.0, max(np.sqrt(white), SIGMA_FLOOR))
    x = np.arange(len(tail), dtype=float)
    yl = np.log(np.maximum(pdp[tail] - floor, 1e-300))
    slope, intercept = np.polyfit(x, yl, 1)
    beta = max(-slope, 1e-6)
    alpha = float(np.exp(intercept) * nf)
    return DmcParams(alpha, float(beta), q_on / rf.bw, float(sigma_w))


# --- maximum-likelihood refinement -------------------------------------------------


def _stack_basis(rf, mus):
    return np.concatenate([basis_matrix(rf, *mu) for mu in mus], axis=1)


def joint_weights(rf: RfConfig, mus, y, R: NoiseCovariance):
    B = _stack_basis(rf, mus)
    W = R.solve(B)
    G = B.conj().T @ W
    G = (G + G.conj().T) / 2
    _check_rank(G, "joint B^H R^-1 B")
    gam = np.linalg.solve(G, W.conj().T @ y)
    return gam.reshape(len(mus), 4), np.linalg.inv(G)


def nll_cost(rf, mus, gams, y, R: NoiseCovariance) -> float:
    r = np.asarray(y, dtype=complex).copy()
    for mu, g in zip(mus, gams):
        r -= _signal(rf, *mu, g)
    return float(np.vdot(r, R.solve(r)).real)


def _cartesian_jacobian(rf, mus, gams):
    """Columns: per path d, az, el, Re(gamma_p) x4, Im(gamma_p) x4."""
    cols = []
    for mu, g in zip(mus, gams):
        B, Bd, Bp, Bt = basis_derivs(rf, *mu)
        for dB in (Bd, Bp, Bt):
            cols.append((g[:, None, None] * dB).reshape(rf.size))
        Bm = basis_matrix(rf, *mu)
        cols.extend(Bm.T)
        cols.extend(1j * Bm.T)
    return np.array(cols).T


@dataclass
class RefineResult:
    detections: list[Detection]
    costs: list[float]
    iterations: int
    converged: bool


def gn_refine(dets, y, rf: RfConfig, R: NoiseCovariance, max_iter: int = 50, tol: float = 1e-6,
              lam0: float = 1e-3) -> RefineResult:
    """Damped Gauss-Newton refinement of all path parameters.

    Works on ``(mu, Re gamma, Im gamma)`` jointly; after every accepted step
    the weights are re-solved by joint weighted least squares at the new
    ``mu``, which can only lower the cost further. Step norm is measured with
    distances in wavelengths and angles in radians.
    """
    if not dets:
        raise ValueError("gn_refine needs at least one detection")
    y = np.asarray(y, dtype=complex)
    K = len(dets)
    mus = [np.array([dt.d, dt.az, dt.el], dtype=float) for dt in dets]
    gams, cov = joint_weights(rf, mus, y, R)
    cost = nll_cost(rf, mus, gams, y, R)
    if not np.isfinite(cost):
        raise FloatingPointError("non-finite cost in gn_refine")
    costs = [cost]
    lam = lam0
    scale = np.tile(np.r_[1.0 / rf.wavelength, 1.0, 1.0, np.zeros(8)], K)
    it = 0
    converged = False
    while it < max_iter:
        r = y.copy()
        for mu, g in zip(mus, gams):
            r -= _signal(rf, *mu, g)
        J = _cartesian_jacobian(rf, mus, gams)
        W = R.solve(J)
        D = 2 * (J.conj().T @ W).real
        q = 2 * (W.conj().T @ r).real
        diag = np.maximum(np.diag(D), 1e-300)
        accepted = False
        while lam <= 1e4:
            try:
                step = np.linalg.solve(D + lam * np.diag(diag), q)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            snorm = float(np.linalg.norm(step * scale))
            if snorm < tol:
                converged = True
                break
            new_mus = [mus[k] + step[11 * k:11 * k + 3] for k in range(K)]
            for m_ in new_mus:
                m_[0] = max(m_[0], 0.0)
            try:
                new_gams, new_cov = joint_weights(rf, new_mus, y, R)
            except DegenerateModelError:
                lam *= 10
                continue
            new_cost = nll_cost(rf, new_mus, new_gams, y, R)
            if not np.isfinite(new_cost):
                raise FloatingPointError("non-finite cost in gn_refine")
            if new_cost <= cost:
                mus, gams, cov, cost = new_mus, new_gams, new_cov, new_cost
                lam = max(lam * 0.3, 1e-8)
                accepted = True
                break
            lam *= 10
        if converged or not accepted:
            converged = converged or not accepted
            break
        costs.append(cost)
        it += 1
    out = []
    for k, (mu, g) in enumerate(zip(mus, gams)):
        az = float(wrap_angle(mu[1]))
        el = float(mu[2])
        if abs(el) > np.pi / 2:
            el = float(np.sign(el) * np.pi - el)
            az = float(wrap_angle(az + np.pi))
            # cos(el) flips sign; the V receive port weights absorb it
            g = g * np.array([1, -1, 1, -1])
        out.append(Detection(float(mu[0]), az, el, g, dets[k].beta, cov[4 * k:4 * k + 4, 4 * k:4 * k + 4]))
    return RefineResult(out, costs, it, converged)


def initialise(y, rf: RfConfig, grids: InterpGrids, k_max: int = 30, beta_max: float = 0.95,
               refine: bool = True):
    """First-snapshot estimate: detect, estimate noise, re-weight, refine.

    Returns ``(detections, dmc_params, covariance_operator)``.
    """
    y = np.asarray(y, dtype=complex)
    dets, res = detect_mpcs(y, rf, grids, k_max, beta_max)
    dmc = estimate_dmc(res, rf)
    R = NoiseCovariance(rf, dmc)
    if not dets:
        return dets, dmc, R
    mus = [dt.mu for dt in dets]
    gams, cov = joint_weights(rf, mus, y, R)
    dets = [Detection(dt.d, dt.az, dt.el, g, dt.beta, cov[4 * k:4 * k + 4, 4 * k:4 * k + 4])
            for k, (dt, g) in enumerate(zip(dets, gams))]
    if refine:
        dets = gn_refine(dets, y, rf, R).detections
        res = y.copy()
        for dt in dets:
            res -= _signal(rf, dt.d, dt.az, dt.el, dt.gamma)
        dmc = estimate_dmc(res, rf)
        R = NoiseCovariance(rf, dmc)
    return dets, dmc, R
