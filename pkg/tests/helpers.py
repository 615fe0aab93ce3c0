"""Small scenario builders shared by the test modules."""

import numpy as np

from mpcslam.channel import RfConfig, cylindrical_array
from mpcslam.ekf import NSTATE, from_tracks, signal, track_vector
from mpcslam.geometry import Surface, Trajectory
from mpcslam.scenario import Scenario

FULL_RF = RfConfig(elements=cylindrical_array(8, 4))
SMALL_RF = RfConfig(nf=11, elements=cylindrical_array(8, 2))


def radial_positions(n, start=(3.0, 0.5, 0.0), step=0.02):
    start = np.asarray(start, float)
    u = start / np.linalg.norm(start)
    return start + step * np.arange(n)[:, None] * u


def free_space(positions, rf=FULL_RF, snr_db=25.0):
    return Scenario([], np.zeros(3), Trajectory(np.asarray(positions, float)), rf, snr_db=snr_db)


def one_wall(positions, rf=FULL_RF, snr_db=25.0, wall_x=6.0):
    s = [Surface(np.array([-1.0, 0.0, 0.0]), -wall_x)]
    return Scenario(s, np.zeros(3), Trajectory(np.asarray(positions, float)), rf, snr_db=snr_db,
                    max_order=1)


def corner_positions(n_leg=40, step=0.02, start=(2.0, -0.6, 0.0)):
    """Two perpendicular legs: along +y, then a sharp turn towards -x."""
    start = np.asarray(start, float)
    leg1 = start + step * np.arange(n_leg)[:, None] * np.array([0.0, 1.0, 0.0])
    leg2 = leg1[-1] + step * np.arange(1, n_leg + 1)[:, None] * np.array([-1.0, 0.0, 0.0])
    return np.vstack([leg1, leg2])


def random_state(rng, K, rf=SMALL_RF, spread=1e-4):
    vecs, covs = [], []
    for _ in range(K):
        g = rng.uniform(0.3, 1.5, 4) * np.exp(1j * rng.uniform(-np.pi, np.pi, 4))
        vecs.append(track_vector(rng.uniform(1, 60), rng.uniform(-3, 3), rng.uniform(-0.8, 0.8), g,
                                 rates=rng.normal(0, 0.01, 3)))
        A = rng.normal(size=(NSTATE, NSTATE)) * np.sqrt(spread)
        covs.append(A @ A.T + spread * np.eye(NSTATE))
    return from_tracks(vecs, covs, list(range(K)), [0] * K)


def min_eig_ok(P):
    if P.size == 0:
        return True
    lam = np.linalg.eigvalsh(P)
    return np.allclose(P, P.T, atol=1e-12) and lam.min() >= -1e-9 * max(np.trace(P), 1e-300) / len(P)


def numeric_jacobian(ts, rf, rel=1e-6):
    J = np.zeros((rf.size, len(ts.x)), complex)
    for i in range(len(ts.x)):
        h = rel * max(1.0, abs(ts.x[i]))
        a, b = ts.copy(), ts.copy()
        a.x[i] += h
        b.x[i] -= h
        J[:, i] = (signal(a, rf) - signal(b, rf)) / (2 * h)
    return J


def grid_argmin(A, d, lo=0.0, hi=2.0):
    """Brute-force minimiser of the range residual on a 1 mm grid over a cube.

    A 2 cm pass over the whole cube finds the candidate basins; each is then
    searched exhaustively on the 1 mm grid within +-2 cm.
    """

    def cost(X):
        return np.sum((np.linalg.norm(X[:, None, :] - A[None], axis=2) - d) ** 2, axis=1)

    ax = np.arange(lo, hi + 1e-9, 0.02)
    G = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    c = cost(G)
    seeds = G[np.argsort(c)[:8]]
    fine = np.arange(-0.02, 0.02 + 1e-9, 0.001)
    off = np.stack(np.meshgrid(fine, fine, fine, indexing="ij"), -1).reshape(-1, 3)
    best, best_c = None, np.inf
    for s in seeds:
        X = np.round((s + off) / 0.001) * 0.001
        cx = cost(X)
        i = int(np.argmin(cx))
        if cx[i] < best_c:
            best, best_c = X[i], cx[i]
    return best
