"""Estimator-style wrappers around the tracking and mapping stages."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import ekf, slam
from .channel import RfConfig
from .table import DistanceTable


def as_table(X) -> DistanceTable:
    """Accept a table or an array of rows ``(n, k, d)`` / ``(n, k, d, az, el, sinr)``."""
    if isinstance(X, DistanceTable):
        return X
    a = np.asarray(X, dtype=float)
    if a.ndim != 2 or a.shape[1] not in (3, 6):
        raise ValueError(f"expected rows of 3 or 6 columns, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("distance rows contain NaN or inf")
    if np.any(a[:, :2] != np.round(a[:, :2])) or np.any(a[:, :2] < 0):
        raise ValueError("time and track indices must be non-negative integers")
    if a.shape[1] == 3:
        return DistanceTable.from_pairs(a[:, 0].astype(int), a[:, 1].astype(int), a[:, 2])
    return DistanceTable.from_rows(a)


def table_array(table: DistanceTable) -> np.ndarray:
    return np.column_stack([table.n, table.k, table.d, table.az, table.el, table.sinr])


class ChannelTracker(BaseEstimator, TransformerMixin):
    """Detect and track propagation paths through a snapshot sequence.

    ``fit(Y)`` runs the filter over snapshots ``Y`` of shape ``(N, rf.size)``
    and ``transform`` returns the distance-table rows
    ``(n, k, d, az, el, sinr_db)`` as an array.
    """

    def __init__(self, rf: RfConfig | None = None, k_max=30, beta_max=0.95, eps_r=0.0,
                 eps_birth=20.0, q_d=1e-4, q_az=1e-6, q_el=1e-6, q_alpha=1e-4, q_phase=1e-4,
                 n_az=360, n_el=90, oversample=8, iterations=5):
        self.rf = rf
        self.k_max = k_max
        self.beta_max = beta_max
        self.eps_r = eps_r
        self.eps_birth = eps_birth
        self.q_d = q_d
        self.q_az = q_az
        self.q_el = q_el
        self.q_alpha = q_alpha
        self.q_phase = q_phase
        self.n_az = n_az
        self.n_el = n_el
        self.oversample = oversample
        self.iterations = iterations

    def _config(self) -> ekf.TrackerConfig:
        if not 0 < self.beta_max <= 1:
            raise ValueError("beta_max must lie in (0, 1]")
        if self.k_max < 1:
            raise ValueError("k_max must be positive")
        pn = ekf.ProcessNoise(self.q_d, self.q_az, self.q_el, self.q_alpha, self.q_phase)
        return ekf.TrackerConfig(k_max=int(self.k_max), beta_max=float(self.beta_max),
                                 eps_r=float(self.eps_r), eps_birth=float(self.eps_birth),
                                 process=pn, n_az=int(self.n_az), n_el=int(self.n_el),
                                 oversample=int(self.oversample), iterations=int(self.iterations))

    def _check_Y(self, Y) -> np.ndarray:
        if self.rf is None:
            raise ValueError("ChannelTracker needs an RfConfig (rf=...)")
        Y = np.asarray(Y)
        if Y.ndim != 2 or Y.shape[1] != self.rf.size:
            raise ValueError(f"snapshots must have shape (N, {self.rf.size}), got {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise ValueError("snapshots contain NaN or inf")
        return Y.astype(complex)

    def fit(self, Y, y=None):
        Y = self._check_Y(Y)
        self.result_ = ekf.run_filter(Y, self.rf, self._config())
        self.table_ = DistanceTable.from_rows(self.result_.rows)
        self.archive_ = self.result_.archive
        return self

    def transform(self, Y=None):
        check_is_fitted(self, "table_")
        return table_array(self.table_)


class FeatureLocator(BaseEstimator):
    """Feature positions from distances when the agent positions are known."""

    def __init__(self, sigma=slam.SIGMA_INL, confidence=0.999, outlier_prior=0.25, seed=0):
        self.sigma = sigma
        self.confidence = confidence
        self.outlier_prior = outlier_prior
        self.seed = seed

    def fit(self, X, positions):
        """``X``: distance rows or table; ``positions[n]``: agent position at time n."""
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        table = as_table(X)
        P = np.asarray(positions, dtype=float)
        if P.ndim != 2 or P.shape[1] != 3:
            raise ValueError(f"positions must have shape (N, 3), got {P.shape}")
        if len(table) and table.n.max() >= len(P):
            raise ValueError("distance rows refer to times beyond the given positions")
        self.map_ = slam.experiment_one(table, P, self.sigma, self.seed, self.confidence,
                                        self.outlier_prior)
        self.features_ = dict(self.map_.features)
        self.inliers_ = set(self.map_.inliers)
        return self

    def predict(self, positions) -> np.ndarray:
        """Distances ``(N, K)`` from each position to each located feature."""
        check_is_fitted(self, "features_")
        P = np.atleast_2d(np.asarray(positions, dtype=float))
        F = np.array([self.features_[k] for k in sorted(self.features_)]).reshape(-1, 3)
        return np.linalg.norm(P[:, None, :] - F[None], axis=2)


class SegmentedMapper(BaseEstimator, TransformerMixin):
    """Trajectory and features from distances alone (windowed initialisation)."""

    def __init__(self, sigma=slam.SIGMA_INL, length=100, overlap=50, confidence=0.999,
                 outlier_prior=0.25, seed=0, max_step="auto"):
        self.sigma = sigma
        self.length = length
        self.overlap = overlap
        self.confidence = confidence
        self.outlier_prior = outlier_prior
        self.seed = seed
        self.max_step = max_step

    def fit(self, X, y=None):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.overlap < self.length:
            raise ValueError("overlap must lie in [0, length)")
        table = as_table(X)
        self.map_ = slam.experiment_two(table, self.sigma, int(self.length), int(self.overlap),
                                        self.seed, confidence=self.confidence,
                                        outlier_prior=self.outlier_prior, max_step=self.max_step)
        self.times_ = np.array(sorted(self.map_.agents), dtype=int)
        self.features_ = dict(self.map_.features)
        return self

    def transform(self, X=None) -> np.ndarray:
        """Estimated agent positions, one row per entry of ``times_``."""
        check_is_fitted(self, "map_")
        return self.map_.agent_array(list(self.times_))

    def score(self, X, truth_positions) -> float:
        """Negative post-alignment RMSE against the true trajectory."""
        check_is_fitted(self, "map_")
        return -slam.evaluate(self.map_, truth_positions)["rmse_m"]
