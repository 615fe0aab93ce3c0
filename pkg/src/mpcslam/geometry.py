"""Mirror-image geometry: virtual anchors, visibility and true path parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEDUP_TOL = 1e-9


def as_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite point {p}")
    return p


def in_plane_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return the (u, v) axes used to express a surface's rectangular extent.

    For non-horizontal planes ``u`` is horizontal and ``v`` points upward, so a
    vertical wall's extent is ``[[horizontal range], [z range]]``.
    """
    n = np.asarray(normal, dtype=float)
    ez = np.array([0.0, 0.0, 1.0])
    c = np.cross(ez, n)
    if np.linalg.norm(c) < 1e-9:
        u = np.array([1.0, 0.0, 0.0])
    else:
        u = c / np.linalg.norm(c)
    v = np.cross(n, u)
    return u, v


@dataclass(frozen=True)
class Surface:
    """Planar reflector ``normal . x = offset`` with a rectangular extent."""

    normal: np.ndarray
    offset: float
    extent: tuple[tuple[float, float], tuple[float, float]] = (
        (-np.inf, np.inf),
        (-np.inf, np.inf),
    )
    loss: float = 0.7

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise ValueError(f"surface normal must be unit length, got |n|={norm}")
        object.__setattr__(self, "normal", n)
        ext = tuple(tuple(float(x) for x in iv) for iv in self.extent)
        if len(ext) != 2 or any(len(iv) != 2 or not iv[0] < iv[1] for iv in ext):
            raise ValueError(f"degenerate surface extent {self.extent}")
        object.__setattr__(self, "extent", ext)
        if not 0.0 < self.loss <= 1.0:
            raise ValueError(f"reflection loss must lie in (0, 1], got {self.loss}")

    def contains(self, q: np.ndarray, tol: float = 1e-12) -> bool:
        u, v = in_plane_axes(self.normal)
        (u0, u1), (v0, v1) = self.extent
        qu, qv = float(q @ u), float(q @ v)
        return (u0 - tol <= qu <= u1 + tol) and (v0 - tol <= qv <= v1 + tol)

    def reflection_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine map ``x -> A x + b`` mirroring across the plane."""
        n = self.normal
        A = np.eye(3) - 2.0 * np.outer(n, n)
        b = 2.0 * self.offset * n
        return A, b


def mirror_anchor(pa, s: Surface) -> np.ndarray:
    """Reflect ``pa`` across the plane of ``s``."""
    pa = as_point(pa)
    return pa - 2.0 * (pa @ s.normal - s.offset) * s.normal


@dataclass(frozen=True)
class Feature:
    """A physical (order 0) or virtual anchor.

    ``transform`` is the composite mirror ``(A, b)`` taking the PA to this
    feature; being a product of reflections it also maps agent positions to
    their unfolded images seen from the PA (applied in reverse order).
    """

    position: np.ndarray
    order: int
    chain: tuple[int, ...]
    loss: float = 1.0
    transform: tuple[np.ndarray, np.ndarray] = field(
        default=(np.eye(3), np.zeros(3)), repr=False, compare=False
    )

    def __post_init__(self):
        if self.order != len(self.chain):
            raise ValueError("feature order must equal surface chain length")


@dataclass(frozen=True)
class ArrayPose:
    """Rotation (local -> global) and translation of the receive array."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class Trajectory:
    positions: np.ndarray
    dt: float = 1.0
    planar: bool = True

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[1] != 3:
            raise ValueError("trajectory positions must be (N, 3)")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def steps(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.positions, axis=0), axis=1)

    def check_spacing(self, wavelength: float) -> None:
        if len(self) > 1 and self.steps.max() >= wavelength / 2:
            raise ValueError(
                f"trajectory step {self.steps.max():.4f} m exceeds half a wavelength "
                f"({wavelength / 2:.4f} m); carrier phase tracking would be ambiguous"
            )
        if self.planar and np.ptp(self.positions[:, 2]) > 1e-12:
            raise ValueError("planar trajectory must have constant z")


def enumerate_features(pa, surfaces, max_order: int) -> list[Feature]:
    """All distinct mirror images of ``pa`` up to ``max_order`` reflections.

    Chains never repeat the same surface twice in a row. Positions closer than
    1e-9 m are merged, keeping the lowest-order chain.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    pa = as_point(pa)
    root = Feature(pa, 0, (), 1.0, (np.eye(3), np.zeros(3)))
    out = [root]
    frontier = [root]
    for _ in range(max_order):
        nxt = []
        for f in frontier:
            for i, s in enumerate(surfaces):
                if f.chain and f.chain[-1] == i:
                    continue
                A_s, b_s = s.reflection_matrix()
                A, b = f.transform
                pos = mirror_anchor(f.position, s)
                g = Feature(
                    pos,
                    f.order + 1,
                    f.chain + (i,),
                    f.loss * s.loss,
                    (A_s @ A, A_s @ b + b_s),
                )
                nxt.append(g)
        frontier = []
        for g in nxt:
            if any(np.linalg.norm(g.position - h.position) < DEDUP_TOL for h in out):
                continue
            out.append(g)
            frontier.append(g)
    return out


def unfold_agent(p, f: Feature) -> np.ndarray:
    """Mirror image of the agent as seen from the PA along the path of ``f``."""
    A, b = f.transform
    # the composite mirror T(x) = A x + b is an involution only per factor, so
    # invert it explicitly: x = A^T (y - b)
    return A.T @ (as_point(p) - b)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def direction_to_angles(u: np.ndarray) -> tuple[float, float]:
    u = u / np.linalg.norm(u)
    phi = float(wrap_angle(np.arctan2(u[1], u[0])))
    theta = float(np.arcsin(np.clip(u[2], -1.0, 1.0)))
    return phi, theta


def angles_to_direction(phi, theta) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def true_params(p, f: Feature, pose: ArrayPose | None = None) -> tuple[float, float, float]:
    """True distance and array-local arrival angles for agent ``p`` via ``f``.

    Azimuth is measured in the array x-y plane from local +x, elevation from
    that plane.
    """
    pose = pose or ArrayPose()
    p = as_point(p)
    d = float(np.linalg.norm(p - f.position))
    if d < 1e-12:
        raise ValueError("agent coincides with feature position")
    img = unfold_agent(p, f)
    u = pose.rotation.T @ (img - np.asarray(pose.position, dtype=float))
    if np.linalg.norm(u) < 1e-12:
        raise ValueError("agent image coincides with the array")
    phi, theta = direction_to_angles(u)
    return d, phi, theta


def reflection_points(p, f: Feature, pa, surfaces) -> list[np.ndarray] | None:
    """Specular points along the agent -> PA path, agent side first.

    Returns ``None`` when some unfolded segment misses its plane (the image is
    on the wrong side).
    """
    p = as_point(p)
    pa = as_point(pa)
    # images of the PA at each level of the chain
    images = [pa]
    for i in f.chain:
        images.append(mirror_anchor(images[-1], surfaces[i]))
    pts = []
    q = p
    for level in range(f.order, 0, -1):
        s = surfaces[f.chain[level - 1]]
        target = images[level]
        dq = q @ s.normal - s.offset
        dt = target @ s.normal - s.offset
        if dq * dt >= 0 or dq == dt:
            return None
        t = dq / (dq - dt)
        hit = q + t * (target - q)
        pts.append(hit)
        q = hit
    return pts


def visible(p, f: Feature, pa=None, surfaces=None) -> bool:
    """Whether the specular path via ``f`` exists at agent position ``p``.

    Order-0 features (line of sight) are always visible.
    """
    if f.order == 0:
        return True
    if pa is None or surfaces is None:
        raise ValueError("pa and surfaces are required for reflected features")
    pts = reflection_points(p, f, pa, surfaces)
    if pts is None:
        return False
    # pts[0] lies on the last surface of the chain
    for j, hit in enumerate(pts):
        s = surfaces[f.chain[f.order - 1 - j]]
        if not s.contains(hit):
            return False
    return True
