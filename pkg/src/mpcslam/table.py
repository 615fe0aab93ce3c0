"""Sparse per-track distance table shared by the tracker and the mapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLUMNS = ("n", "k", "d_m", "az_rad", "el_rad", "sinr_db")


@dataclass
class DistanceTable:
    """Rows ``(n, k, d, az, el, sinr_db)`` sorted by time then track id."""

    n: np.ndarray
    k: np.ndarray
    d: np.ndarray
    az: np.ndarray
    el: np.ndarray
    sinr: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=int)
        self.k = np.asarray(self.k, dtype=int)
        m = len(self.n)
        fields = []
        for name in ("d", "az", "el", "sinr"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (m,):
                raise ValueError(f"column {name} has shape {v.shape}, expected ({m},)")
            fields.append(v)
        self.d, self.az, self.el, self.sinr = fields
        if self.k.shape != (m,):
            raise ValueError("column k has the wrong length")
        order = np.lexsort((self.k, self.n))
        for name in ("n", "k", "d", "az", "el", "sinr"):
            setattr(self, name, getattr(self, name)[order])
        pairs = np.stack([self.n, self.k], axis=1)
        if m and len(np.unique(pairs, axis=0)) != m:
            raise ValueError("duplicate (n, k) entries in distance table")

    @classmethod
    def from_rows(cls, rows) -> "DistanceTable":
        a = np.asarray(list(rows), dtype=float).reshape(-1, 6)
        return cls(a[:, 0].astype(int), a[:, 1].astype(int), a[:, 2], a[:, 3], a[:, 4], a[:, 5])

    @classmethod
    def from_pairs(cls, n, k, d) -> "DistanceTable":
        z = np.zeros(len(d))
        return cls(n, k, d, z, z, z)

    def __len__(self) -> int:
        return len(self.n)

    def rows(self):
        for i in range(len(self)):
            yield (int(self.n[i]), int(self.k[i]), float(self.d[i]), float(self.az[i]),
                   float(self.el[i]), float(self.sinr[i]))

    def tracks(self) -> list[int]:
        return [int(v) for v in np.unique(self.k)]

    def times(self) -> list[int]:
        return [int(v) for v in np.unique(self.n)]

    def track(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.k == k
        return self.n[m], self.d[m]

    def select(self, mask) -> "DistanceTable":
        mask = np.asarray(mask, dtype=bool)
        return DistanceTable(self.n[mask], self.k[mask], self.d[mask], self.az[mask],
                             self.el[mask], self.sinr[mask])

    def window(self, n0: int, n1: int) -> "DistanceTable":
        """Rows with ``n0 <= n < n1``."""
        return self.select((self.n >= n0) & (self.n < n1))
