"""Polarimetric SIMO forward model, dense-multipath covariance and synthesis.

Snapshot layout
---------------
A snapshot is a complex vector of length ``nf * nch`` with
``index = ch * nf + freq``. Channels are grouped by polarimetric pair,
``ch = p * nrx + m`` for ``p`` in (HH, HV, VH, VV) and receive element ``m``:
the transmitter has an H and a V port and every receive element has an H
and a V port, so each column of ``B(mu)`` lives on its own block of ``nrx``
channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, toeplitz

from .geometry import angles_to_direction

C0 = 299_792_458.0
POLS = ("HH", "HV", "VH", "VV")
# receive polarisation of each pair (first letter is the transmit side)
RX_POL = ("H", "V", "H", "V")


@dataclass(frozen=True)
class RfConfig:
    fc: float = 2.6e9
    bw: float = 40e6
    nf: int = 21
    # element positions in wavelengths, array-local frame, shape (nrx, 3)
    elements: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))

    def __post_init__(self):
        el = np.atleast_2d(np.asarray(self.elements, dtype=float))
        if el.shape[1] != 3 or len(el) < 1:
            raise ValueError("elements must be an (nrx, 3) array")
        object.__setattr__(self, "elements", el)
        if self.nf < 1 or self.nf % 2 == 0:
            raise ValueError(f"nf must be odd, got {self.nf}")
        if not 0 < self.bw < self.fc:
            raise ValueError("bandwidth must be positive and below the carrier")

    @property
    def nrx(self) -> int:
        return len(self.elements)

    @property
    def nch(self) -> int:
        return 4 * self.nrx

    @property
    def size(self) -> int:
        return self.nf * self.nch

    @property
    def wavelength(self) -> float:
        return C0 / self.fc

    @property
    def freqs(self) -> np.ndarray:
        """Baseband frequency samples, symmetric about zero."""
        k = np.arange(self.nf) - (self.nf - 1) / 2
        return k * self.bw / self.nf

    @property
    def delay_window(self) -> float:
        """Unambiguous distance window ``c * nf / bw`` in meters."""
        return C0 * self.nf / self.bw


def cylindrical_array(n_per_ring=8, n_rings=4, spacing=0.5) -> np.ndarray:
    """Uniform cylindrical array (element positions in wavelengths)."""
    radius = n_per_ring * spacing / (2 * np.pi)
    ang = 2 * np.pi * np.arange(n_per_ring) / n_per_ring
    zs = (np.arange(n_rings) - (n_rings - 1) / 2) * spacing
    pts = [[radius * np.cos(a), radius * np.sin(a), z] for z in zs for a in ang]
    return np.array(pts)


@dataclass(frozen=True)
class DmcParams:
    alpha: float = 0.0
    beta: float = 1.0
    tau_on: float = 0.0
    sigma_w: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.tau_on < 0:
            raise ValueError("alpha_dmc and tau_on must be non-negative")
        if not self.beta > 0:
            raise ValueError(f"beta_dmc must be positive, got {self.beta}")
        if not self.sigma_w > 0:
            raise ValueError("sigma_w must be positive")


def pol_gain(theta, pol: str):
    if pol == "H":
        return np.ones_like(np.asarray(theta, dtype=float))
    if pol == "V":
        return np.cos(theta)
    raise ValueError(f"unknown polarisation {pol!r}")


def steering_vector(rf: RfConfig, phi, theta, pol: str = "H") -> np.ndarray:
    """Ideal array response: unit-modulus phases scaled by the port gain."""
    u = angles_to_direction(phi, theta)
    phase = 2 * np.pi * rf.elements @ u
    return pol_gain(theta, pol) * np.exp(1j * phase)


def freq_response(rf: RfConfig, d) -> np.ndarray:
    """``exp(-j 2 pi (f_i + f_c) d / c)``, carrier phase included."""
    if np.any(np.asarray(d) < 0):
        raise ValueError("distance must be non-negative")
    return np.exp(-2j * np.pi * (rf.freqs + rf.fc) * (d / C0))


def basis(rf: RfConfig, d, phi, theta) -> np.ndarray:
    """Block form of ``B(mu)``: ``(4, nrx, nf)``, column ``p`` on block ``p``."""
    a = steering_vector(rf, phi, theta, "H")
    bf = freq_response(rf, d)
    gv = np.cos(theta)
    blk = a[:, None] * bf[None, :]
    return np.stack([blk, gv * blk, blk, gv * blk])


def basis_derivs(rf: RfConfig, d, phi, theta):
    """``B(mu)`` blocks and their partial derivatives w.r.t. ``(d, phi, theta)``.

    Returns four ``(4, nrx, nf)`` arrays: ``B, dB/dd, dB/dphi, dB/dtheta``.
    """
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    u = np.array([ct * cp, ct * sp, st])
    du_phi = np.array([-ct * sp, ct * cp, 0.0])
    du_theta = np.array([-st * cp, -st * sp, ct])
    r = rf.elements
    a = np.exp(2j * np.pi * (r @ u))
    a_phi = 2j * np.pi * (r @ du_phi) * a
    a_theta = 2j * np.pi * (r @ du_theta) * a
    bf = freq_response(rf, d)
    bf_d = (-2j * np.pi * (rf.freqs + rf.fc) / C0) * bf

    def stack(h, v):
        return np.stack([h, v, h, v])

    blk = a[:, None] * bf[None, :]
    B = stack(blk, ct * blk)
    blk_d = a[:, None] * bf_d[None, :]
    dB_d = stack(blk_d, ct * blk_d)
    blk_p = a_phi[:, None] * bf[None, :]
    dB_phi = stack(blk_p, ct * blk_p)
    blk_t = a_theta[:, None] * bf[None, :]
    dB_theta = stack(blk_t, ct * blk_t - st * blk)
    return B, dB_d, dB_phi, dB_theta


def basis_matrix(rf: RfConfig, d, phi, theta) -> np.ndarray:
    """Dense ``B(mu)`` of shape ``(nf * nch, 4)``."""
    blocks = basis(rf, d, phi, theta)
    B = np.zeros((4, rf.nrx, rf.nf, 4), dtype=complex)
    for p in range(4):
        B[p, :, :, p] = blocks[p]
    return B.reshape(rf.size, 4)


def mpc_signal(rf: RfConfig, mu, gamma) -> np.ndarray:
    """``s(mu, gamma) = B(mu) gamma`` as a flat snapshot vector."""
    d, phi, theta = mu
    gamma = np.asarray(gamma, dtype=complex).reshape(4)
    blocks = basis(rf, d, phi, theta)
    return (gamma[:, None, None] * blocks).reshape(rf.size)


def weights_from_polar(alpha, phase) -> np.ndarray:
    return np.asarray(alpha) * np.exp(1j * np.asarray(phase))


def dmc_pdp(rf: RfConfig, dmc: DmcParams) -> np.ndarray:
    """Sampled one-sided exponential power delay profile over ``nf`` bins."""
    tau = np.arange(rf.nf) / rf.bw
    psi = (dmc.alpha / rf.nf) * np.exp(-dmc.beta * rf.bw * (tau - dmc.tau_on))
    return np.where(tau >= dmc.tau_on - 1e-15, psi, 0.0)


def dmc_covariance_freq(rf: RfConfig, dmc: DmcParams) -> np.ndarray:
    """Hermitian Toeplitz frequency covariance of the dense multipath."""
    if not dmc.beta > 0:
        raise ValueError("beta_dmc must be positive")
    psi = dmc_pdp(rf, dmc)
    k = np.arange(rf.nf)
    kappa = np.exp(-2j * np.pi * np.outer(k, k) / rf.nf) @ psi
    return toeplitz(kappa, kappa.conj())


def full_covariance(rf: RfConfig, dmc: DmcParams) -> np.ndarray:
    """Dense ``I_nch (x) R_f + sigma_w^2 I`` (small configurations only)."""
    return NoiseCovariance(rf, dmc).dense()


class NoiseCovariance:
    """``R = I_nch (x) R_f + sigma_w^2 I`` handled block-wise.

    The full ``(nf * nch)`` square matrix is never formed; every operation
    works on the ``nf x nf`` block shared by all channels.
    """

    def __init__(self, rf: RfConfig, dmc: DmcParams | None = None, block=None):
        self.rf = rf
        self.dmc = dmc
        if block is None:
            dmc = dmc or DmcParams()
            block = dmc_covariance_freq(rf, dmc) + dmc.sigma_w**2 * np.eye(rf.nf)
        self.block = np.asarray(block, dtype=complex)
        self._cho = cho_factor(self.block, lower=True)
        self._L = np.tril(self._cho[0])

    @classmethod
    def white(cls, rf: RfConfig, sigma: float = 1.0) -> "NoiseCovariance":
        return cls(rf, block=sigma**2 * np.eye(rf.nf))

    def _blocks(self, v):
        v = np.asarray(v)
        return v.reshape((self.rf.nch, self.rf.nf) + v.shape[1:])

    def apply(self, v) -> np.ndarray:
        x = self._blocks(v)
        out = np.einsum("ij,cj...->ci...", self.block, x)
        return out.reshape(np.shape(v))

    def solve(self, v) -> np.ndarray:
        x = self._blocks(v)
        nch, nf = x.shape[:2]
        flat = np.moveaxis(x, 1, 0).reshape(nf, -1)
        sol = cho_solve(self._cho, flat)
        sol = np.moveaxis(sol.reshape((nf, nch) + x.shape[2:]), 0, 1)
        return sol.reshape(np.shape(v))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.rf.nch, self.rf.nf) if size is None else (size, self.rf.nch, self.rf.nf)
        z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
        x = z @ self._L.T
        return x.reshape(-1 if size is None else (size, self.rf.size))

    def dense(self) -> np.ndarray:
        """Materialise the full matrix (tests and tiny cases only)."""
        return np.kron(np.eye(self.rf.nch), self.block)

    def logdet(self) -> float:
        return float(2 * self.rf.nch * np.sum(np.log(np.abs(np.diag(self._L)))))
