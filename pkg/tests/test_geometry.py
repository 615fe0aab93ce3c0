import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from mpcslam.geometry import (ArrayPose, Feature, Surface, Trajectory, enumerate_features,
                              mirror_anchor, true_params, visible)

coord = st.floats(-20, 20, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def wall_x(c, y=(-np.inf, np.inf), z=(-np.inf, np.inf)):
    return Surface(np.array([1.0, 0, 0]), c, (y, z))


# mirror_anchor ------------------------------------------------------------


def test_mirror_examples():
    assert np.allclose(mirror_anchor([0, 0, 2], wall_x(5)), [10, 0, 2])
    y0 = Surface(np.array([0, 1.0, 0]), 0.0)
    assert np.allclose(mirror_anchor([1, 2, 3], y0), [1, -2, 3])
    assert np.allclose(mirror_anchor(mirror_anchor([1, 2, 3], wall_x(5)), y0), [9, -2, 3])


@given(point, st.tuples(coord, coord, coord).filter(lambda v: np.linalg.norm(v) > 1e-3), coord)
def test_mirror_involution(p, n, off):
    s = Surface(unit(n), off)
    assert np.allclose(mirror_anchor(mirror_anchor(p, s), s), p, atol=1e-12, rtol=0)


def test_surface_validation():
    with pytest.raises(ValueError):
        Surface(np.array([1.0, 1.0, 0]), 0.0)
    with pytest.raises(ValueError):
        Surface(np.array([1.0, 0, 0]), 0.0, ((1, 1), (0, 1)))
    with pytest.raises(ValueError):
        Surface(np.array([1.0, 0, 0]), 0.0, loss=0.0)


# enumerate_features -------------------------------------------------------


def test_enumerate_examples():
    pa = np.zeros(3)
    assert len(enumerate_features(pa, [wall_x(3)], 2)) == 2
    assert len(enumerate_features(pa, [wall_x(3), wall_x(-2)], 2)) == 5
    only = enumerate_features(pa, [wall_x(3)], 0)
    assert len(only) == 1 and only[0].order == 0 and np.allclose(only[0].position, pa)
    with pytest.raises(ValueError):
        enumerate_features(pa, [], -1)


def brute_force_images(pa, surfaces, max_order):
    imgs = [np.asarray(pa, float)]
    for order in range(1, max_order + 1):
        for chain in itertools.product(range(len(surfaces)), repeat=order):
            if any(a == b for a, b in zip(chain, chain[1:])):
                continue
            q = np.asarray(pa, float)
            for i in chain:
                n, c = surfaces[i].normal, surfaces[i].offset
                q = q - 2 * (q @ n - c) * n
            if all(np.linalg.norm(q - r) >= 1e-9 for r in imgs):
                imgs.append(q)
    return imgs


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 3), st.integers(0, 10_000))
def test_enumerate_matches_brute_force(ns, order, seed):
    rng = np.random.default_rng(seed)
    surfaces = [Surface(unit(rng.normal(size=3)), float(rng.uniform(-3, 3))) for _ in range(ns)]
    pa = rng.uniform(-1, 1, 3)
    feats = enumerate_features(pa, surfaces, order)
    assert len(feats) == len(brute_force_images(pa, surfaces, order))
    for f in feats:
        assert f.order == len(f.chain)
        assert all(a != b for a, b in zip(f.chain, f.chain[1:]))


def test_enumerate_dedups_coincident_chains():
    # two perpendicular walls: chains (0, 1) and (1, 0) give the same image
    s = [wall_x(2), Surface(np.array([0, 1.0, 0]), 3.0)]
    feats = enumerate_features(np.zeros(3), s, 2)
    assert len(feats) == 4
    assert sum(f.order == 2 for f in feats) == 1


def test_feature_order_must_match_chain():
    with pytest.raises(ValueError):
        Feature(np.zeros(3), 1, ())


# true_params --------------------------------------------------------------


def test_true_params_examples():
    pa = Feature(np.zeros(3), 0, ())
    assert true_params([3, 4, 0], pa)[0] == pytest.approx(5.0)
    d, phi, theta = true_params([10, 0, 0], pa)
    assert (d, phi, theta) == pytest.approx((10.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        true_params([0, 0, 0], pa)


def test_true_params_pose_rotation():
    pa = Feature(np.zeros(3), 0, ())
    c, s = np.cos(0.3), np.sin(0.3)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    _, phi, _ = true_params([5, 0, 0], pa, ArrayPose(rot))
    assert phi == pytest.approx(-0.3)


def fermat_reflection_point(p, pa, s):
    """Point on the plane minimising the path length (independent of mirroring)."""
    u = np.cross(s.normal, [0.0, 0.0, 1.0])
    if np.linalg.norm(u) < 1e-9:
        u = np.array([1.0, 0, 0])
    u = unit(u)
    v = np.cross(s.normal, u)
    o = s.offset * s.normal

    def length(t):
        r = o + t[0] * u + t[1] * v
        return np.linalg.norm(p - r) + np.linalg.norm(r - pa)

    t0 = [(p - o) @ u, (p - o) @ v]
    res = minimize(length, t0, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
    return o + res.x[0] * u + res.x[1] * v, res.fun


@pytest.mark.parametrize("seed", range(5))
def test_first_order_aoa_matches_ray_trace(seed):
    rng = np.random.default_rng(seed)
    pa = np.array([0.0, 0.0, 1.5])
    s = Surface(unit([1.0, rng.uniform(-0.3, 0.3), 0.0]), 4.0)
    va = [f for f in enumerate_features(pa, [s], 1) if f.order == 1][0]
    p = np.array([rng.uniform(0.5, 3), rng.uniform(-2, 2), 1.0])
    d, phi, theta = true_params(p, va, ArrayPose(position=pa))
    r, length = fermat_reflection_point(p, pa, s)
    u = unit(r - pa)
    assert d == pytest.approx(length, abs=1e-7)
    assert phi == pytest.approx(np.arctan2(u[1], u[0]), abs=1e-6)
    assert theta == pytest.approx(np.arcsin(u[2]), abs=1e-6)


@given(point, point, st.floats(0, 1))
def test_distance_triangle_inequality(p, fpos, t):
    if np.linalg.norm(p - fpos) < 1e-6:
        return
    f = Feature(fpos, 0, ())
    d = true_params(p, f, ArrayPose(position=fpos))[0]
    q = p + t * (fpos - p)
    assert np.linalg.norm(p - q) + np.linalg.norm(q - fpos) == pytest.approx(d, rel=1e-12, abs=1e-12)
    off = q + np.array([0.1, -0.2, 0.3])
    assert np.linalg.norm(p - off) + np.linalg.norm(off - fpos) >= d - 1e-12


# visible ------------------------------------------------------------------


def test_visible_examples():
    pa = np.array([0.0, 0.0, 1.0])
    s = [wall_x(2.0, y=(-1.0, 1.0), z=(0.0, 3.0))]
    feats = enumerate_features(pa, s, 1)
    los, va = feats
    assert visible([1.0, 0.5, 1.0], los)
    # reflection point at y = 0.25, inside the wall
    assert visible([1.0, 0.5, 1.0], va, pa, s)
    # agent far along +y: the specular point lands beyond the wall edge
    assert not visible([1.0, 5.0, 1.0], va, pa, s)


def oracle_visible_x_wall(p, pa, c, y_rng, z_rng):
    """Explicit segment-rectangle test for a first-order reflection off x = c."""
    img = np.array([2 * c - pa[0], pa[1], pa[2]])
    if (p[0] - c) * (img[0] - c) >= 0:
        return False
    t = (c - p[0]) / (img[0] - p[0])
    hit = p + t * (img - p)
    return bool(y_rng[0] <= hit[1] <= y_rng[1] and z_rng[0] <= hit[2] <= z_rng[1])


def test_visible_matches_oracle_random():
    rng = np.random.default_rng(1)
    agree = 0
    for _ in range(100):
        c = rng.uniform(1, 4)
        y0 = rng.uniform(-3, 1)
        y_rng = (y0, y0 + rng.uniform(0.5, 3))
        z_rng = (0.0, rng.uniform(1, 3))
        s = [wall_x(c, y_rng, z_rng)]
        pa = np.array([rng.uniform(-1, c - 0.2), rng.uniform(-2, 2), rng.uniform(0.5, 2)])
        p = np.array([rng.uniform(-2, c + 1), rng.uniform(-3, 3), rng.uniform(0.5, 2)])
        va = enumerate_features(pa, s, 1)[1]
        agree += visible(p, va, pa, s) == oracle_visible_x_wall(p, pa, c, y_rng, z_rng)
    assert agree == 100


def test_second_order_visibility_between_parallel_walls():
    pa = np.array([0.0, 0.0, 1.0])
    s = [wall_x(2.0), wall_x(-2.0)]
    feats = enumerate_features(pa, s, 2)
    for f in feats:
        assert visible([1.0, 1.0, 1.0], f, pa, s)
    # agent behind wall 0 sees nothing reflected off it
    behind = [f for f in feats if f.chain == (0,)][0]
    assert not visible([3.0, 0.0, 1.0], behind, pa, s)


def test_trajectory_spacing_check():
    tr = Trajectory(np.array([[0, 0, 0], [0.01, 0, 0], [0.02, 0, 0.0]]))
    tr.check_spacing(0.1153)
    with pytest.raises(ValueError):
        Trajectory(np.array([[0, 0, 0], [0.1, 0, 0.0]])).check_spacing(0.1153)
    with pytest.raises(ValueError):
        Trajectory(np.array([[0, 0, 0], [0.01, 0, 0.01]])).check_spacing(0.1153)
