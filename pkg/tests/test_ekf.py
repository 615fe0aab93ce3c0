import numpy as np
import pytest
from helpers import (FULL_RF, SMALL_RF, corner_positions, free_space, min_eig_ok, numeric_jacobian,
                     one_wall, radial_positions, random_state)
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcslam import ekf
from mpcslam.channel import C0, DmcParams, NoiseCovariance, RfConfig, mpc_signal
from mpcslam.ekf import (AZ, D, DD, EL, NSTATE, ProcessNoise, TrackerConfig, build_F_Q, from_tracks,
                         jacobian, predict, prune, signal, sinr_db, track_vector, update)
from mpcslam.sage import InterpGrids
from mpcslam.scenario import synthesize

ZERO_Q = ProcessNoise(0, 0, 0, 0, 0)


# build_F_Q / predict ------------------------------------------------------


def test_build_F_Q_examples():
    F, Q = build_F_Q(3, ProcessNoise(dt=0.0))
    assert np.array_equal(F, np.eye(42))
    assert np.allclose(Q[:18, :18], 0.0)
    F, Q = build_F_Q(1, ProcessNoise(q_d=1.0, dt=1.0))
    assert np.allclose(Q[np.ix_([D, DD], [D, DD])], [[0.25, 0.5], [0.5, 1.0]])
    F1, _ = build_F_Q(2, ProcessNoise(dt=1.0))
    F2, _ = build_F_Q(2, ProcessNoise(dt=2.0))
    assert np.allclose(F1 @ F1, F2)
    with pytest.raises(ValueError):
        build_F_Q(0, ProcessNoise())
    with pytest.raises(ValueError):
        ProcessNoise(q_d=-1.0)


def test_state_ordering_component_major():
    ts = random_state(np.random.default_rng(0), 3)
    assert ts.idx(AZ, 2) == 3 + 2
    assert np.array_equal(ts.track_slice(1), np.arange(NSTATE) * 3 + 1)


def test_predict_examples():
    ts = from_tracks([track_vector(10.0, 0.1, 0.0, np.ones(4), rates=(0.01, 0, 0))],
                     [np.eye(NSTATE) * 1e-4], [0], [0])
    assert predict(ts, ZERO_Q).x[D] == pytest.approx(10.01)
    P0 = np.eye(NSTATE) * 1e-4
    P0[3:6, 3:6] = 0.0  # known-zero rates: nothing flows into the position block
    still = from_tracks([track_vector(10.0, 0.1, 0.0, np.ones(4))], [P0], [0], [0])
    out = predict(still, ZERO_Q)
    assert np.array_equal(out.x, still.x) and np.allclose(out.P, still.P)


def test_predict_keeps_psd_and_trace():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        ts = random_state(rng, int(rng.integers(1, 4)), spread=10 ** rng.uniform(-8, -1))
        out = predict(ts, ProcessNoise(*rng.uniform(0, 1e-3, 5)))
        assert min_eig_ok(out.P)
        assert np.trace(out.P) >= np.trace(ts.P) - 1e-12


# jacobian -----------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ts = random_state(rng, 2)
    J = jacobian(ts, SMALL_RF)
    Jn = numeric_jacobian(ts, SMALL_RF)
    for i in range(J.shape[1]):
        scale = max(np.linalg.norm(J[:, i]), 1e-300)
        if np.linalg.norm(J[:, i]) == 0:
            assert np.linalg.norm(Jn[:, i]) < 1e-6
        else:
            assert np.linalg.norm(J[:, i] - Jn[:, i]) / scale < 1e-5


def test_jacobian_rate_columns_zero_and_single_frequency():
    ts = random_state(np.random.default_rng(2), 2)
    J = jacobian(ts, SMALL_RF)
    for comp in (DD, DD + 1, DD + 2):
        assert np.all(J[:, comp * 2:(comp + 1) * 2] == 0)
    rf1 = RfConfig(nf=1)
    ts1 = random_state(np.random.default_rng(3), 1)
    s = signal(ts1, rf1)
    assert np.allclose(jacobian(ts1, rf1)[:, D], -2j * np.pi / rf1.wavelength * s)


# update -------------------------------------------------------------------


@pytest.mark.parametrize("iterations", [1, 5])
def test_update_zero_innovation_fixpoint(iterations):
    ts = random_state(np.random.default_rng(4), 2)
    R = NoiseCovariance.white(SMALL_RF, 0.1)
    out = update(ts, signal(ts, SMALL_RF), R, SMALL_RF, iterations)
    assert np.allclose(out.x, ts.x, atol=1e-12)


def test_update_scalar_reduction():
    rf = RfConfig(nf=1)
    sigma = 0.05
    P = np.zeros((NSTATE, NSTATE))
    P[D, D] = 1e-6
    ts = from_tracks([track_vector(4.0, 0.0, 0.0, [1.0, 0, 0, 0])], [P], [0], [0])
    truth = 4.0 + 4e-4
    z = mpc_signal(rf, (truth, 0.0, 0.0), [1.0, 0, 0, 0])
    z = z + np.array([0.01 - 0.02j, 0, 0, 0])
    out = update(ts, z, NoiseCovariance.white(rf, sigma), rf, iterations=1)

    # hand-coded real-valued scalar EKF on (Re, Im) of the only live channel
    k = 2 * np.pi * rf.fc / C0
    h = np.exp(-1j * k * 4.0)
    H = np.array([(-1j * k * h).real, (-1j * k * h).imag])
    innov = np.array([(z[0] - h).real, (z[0] - h).imag])
    S = P[D, D] * np.outer(H, H) + sigma**2 / 2 * np.eye(2)
    gain = P[D, D] * H @ np.linalg.inv(S)
    assert out.x[D] == pytest.approx(4.0 + gain @ innov, abs=1e-12)
    assert out.P[D, D] == pytest.approx(P[D, D] * (1 - gain @ H), rel=1e-9)


def test_update_trace_shrinks_with_static_truth():
    rng = np.random.default_rng(5)
    rf = SMALL_RF
    g = np.ones(4, complex)
    mu = (7.0, 0.4, 0.1)
    ts = from_tracks([track_vector(*mu, g)], [np.diag([1e-6, 1e-4, 1e-4, 0, 0, 0] + [1e-2] * 8)],
                     [0], [0])
    sigma = 0.1  # 20 dB
    R = NoiseCovariance.white(rf, sigma)
    traces = [np.trace(ts.P)]
    for _ in range(50):
        y = mpc_signal(rf, mu, g) + sigma * (rng.standard_normal(rf.size)
                                             + 1j * rng.standard_normal(rf.size)) / np.sqrt(2)
        ts = update(ts, y, R, rf, iterations=1)
        traces.append(np.trace(ts.P))
    assert all(b <= a + 1e-15 for a, b in zip(traces, traces[1:]))
    assert ts.x[D] == pytest.approx(mu[0], abs=1e-3)


def test_update_rejects_non_finite():
    ts = random_state(np.random.default_rng(6), 1)
    y = np.full(SMALL_RF.size, np.nan, complex)
    with pytest.raises(FloatingPointError):
        update(ts, y, NoiseCovariance.white(SMALL_RF), SMALL_RF)


def test_update_wraps_angles():
    ts = random_state(np.random.default_rng(7), 1)
    ts.x[AZ] = np.pi - 1e-4
    out = update(ts, signal(ts, SMALL_RF) * 1.01, NoiseCovariance.white(SMALL_RF), SMALL_RF)
    assert -np.pi <= out.x[AZ] < np.pi
    assert -np.pi / 2 <= out.x[EL] <= np.pi / 2


# sinr / prune -------------------------------------------------------------


def single_pol_state(alpha, var):
    P = np.eye(NSTATE) * 1e-6
    P[6, 6] = var
    return from_tracks([track_vector(5.0, 0.0, 0.0, [alpha, 0, 0, 0])], [P], [0], [0])


def test_sinr_examples():
    assert sinr_db(single_pol_state(1.0, 0.1), 0) == pytest.approx(-10 * np.log10(0.1 + 1e-6))
    ts = single_pol_state(2.0, 0.1)
    ts.P[10, 10] = 0.1
    assert sinr_db(ts, 0) == pytest.approx(10 * np.log10(4.0 / 0.5))
    assert sinr_db(single_pol_state(0.0, 0.1), 0) == -300.0
    exact = single_pol_state(1.0, 0.0)
    exact.P[10, 10] = 0.0
    assert sinr_db(exact, 0) == 300.0


def test_prune_examples():
    vecs = [track_vector(5.0 + k, 0.1 * k, 0.0, [1.0, 0, 0, 0]) for k in range(4)]
    covs = []
    for v in (0.1, 0.1, 0.1, 0.1):
        P = np.eye(NSTATE) * 1e-6
        P[6, 6] = v
        covs.append(P)
    ts = from_tracks(vecs, covs, [10, 11, 12, 13], [0] * 4)
    same, deaths = prune(ts, 0.0, n=3)
    assert same.K == 4 and deaths == []
    none, deaths = prune(ts, 301.0, n=3)
    assert none.K == 0 and sorted(deaths) == [(10, 3), (11, 3), (12, 3), (13, 3)]


def test_prune_mixed_extracts_minor():
    rng = np.random.default_rng(8)
    ts = random_state(rng, 4, spread=1e-3)
    M = rng.normal(size=ts.P.shape) * 1e-3
    ts.P = ts.P + M @ M.T  # dense cross-covariances
    for k, v in zip(range(4), (1e-4, 10.0, 1e-4, 10.0)):
        for p in range(4):
            i = ts.idx(6 + p, k)
            ts.P[i, i] = v
    out, deaths = prune(ts, 0.0, n=5)
    assert [d[0] for d in deaths] == [1, 3]
    keep = [0, 2]
    sel = [c * 4 + k for c in range(NSTATE) for k in keep]
    assert out.ids == keep
    assert np.array_equal(out.P, ts.P[np.ix_(sel, sel)])
    assert np.array_equal(out.x, ts.x[sel])


def test_drop_outside_window_and_merge():
    rf = SMALL_RF
    g = np.ones(4, complex)
    vecs = [track_vector(5.0, 0.3, 0.0, g), track_vector(5.0 + 1e-3, 0.3 + 1e-3, 0.0, 0.5 * g),
            track_vector(20.0, -1.0, 0.0, g)]
    ts = from_tracks(vecs, [np.eye(NSTATE) * 1e-4] * 3, [0, 1, 2], [0, 4, 1])
    merged, deaths = ekf.merge_duplicates(ts, rf, n=9)
    assert merged.ids == [0, 2] and deaths == [(1, 9)]
    assert np.allclose(merged.gamma(0), 1.5 * g)
    ts.x[ts.idx(D, 2)] = rf.delay_window + 1.0
    out, deaths = ekf.drop_outside_window(ts, rf, n=2)
    assert out.ids == [0, 1] and deaths == [(2, 2)]


# birth --------------------------------------------------------------------

GR = InterpGrids(SMALL_RF, n_az=72, n_el=18, oversample=4)


def test_birth_no_false_alarms_on_noise():
    rng = np.random.default_rng(9)
    R = NoiseCovariance.white(SMALL_RF, 0.1)
    cfg = TrackerConfig(k_max=5)
    born = 0
    for _ in range(20):
        y = R.sample(rng)
        ts, _ = ekf.birth(ekf.TrackState(), y, R, SMALL_RF, GR, cfg, n=1, next_id=0)
        born += ts.K > 0
    assert born / 20 < 0.10


def test_birth_detects_new_path_and_respects_budget():
    rng = np.random.default_rng(10)
    rf = SMALL_RF
    g = np.ones(4, complex)
    old = (5.0, 0.3, 0.0)
    new = (14.0, -1.2, 0.05)
    ts = from_tracks([track_vector(*old, g)], [np.eye(NSTATE) * 1e-6], [0], [0])
    R = NoiseCovariance.white(rf, 0.1)
    y = mpc_signal(rf, old, g) + mpc_signal(rf, new, g) + R.sample(rng)
    out, nxt = ekf.birth(ts, y, R, rf, GR, TrackerConfig(k_max=5), n=7, next_id=1)
    assert out.K == 2 and nxt == 2 and out.birth_n == [0, 7]
    assert out.x[out.idx(D, 1)] == pytest.approx(new[0], abs=0.05)
    assert np.all(out.x[[out.idx(DD + c, 1) for c in range(3)]] == 0)
    full, _ = ekf.birth(ts, y, R, rf, GR, TrackerConfig(k_max=1), n=7, next_id=1)
    assert full.K == 1


# reinit_weights -----------------------------------------------------------


def tracked_state(mu, g, var=1e-4):
    return from_tracks([track_vector(*mu, g)], [np.eye(NSTATE) * var], [0], [0])


def test_reinit_noop_below_odometer():
    ts = tracked_state((5.0, 0.2, 0.0), np.ones(4))
    ts.odometer = [0.05]
    R = NoiseCovariance.white(SMALL_RF, 0.1)
    assert ekf.reinit_weights(ts, np.zeros(SMALL_RF.size), R, SMALL_RF, 0.1153) is ts


def test_reinit_tracks_amplitude_step():
    rng = np.random.default_rng(11)
    mu = (5.0, 0.2, 0.0)
    g_old = np.ones(4, complex)
    g_new = np.array([0.4, 0.1, 0.1, 0.4]) * np.exp(1j * np.array([0.3, -1.0, 2.0, 0.7]))
    R = NoiseCovariance.white(SMALL_RF, 0.05)
    ts = tracked_state(mu, g_old)
    ts.odometer = [0.2]
    y = mpc_signal(SMALL_RF, mu, g_new) + R.sample(rng)
    out = ekf.reinit_weights(ts, y, R, SMALL_RF, 0.1153)
    assert np.linalg.norm(out.gamma(0) - g_new) < np.linalg.norm(ts.gamma(0) - g_new)
    assert out.odometer == [0.0]
    # structural part untouched
    assert np.array_equal(out.x[:6], ts.x[:6])
    assert np.array_equal(out.P[:6, :6], ts.P[:6, :6])


def test_reinit_consistent_with_unchanged_signal():
    rng = np.random.default_rng(12)
    mu = (5.0, 0.2, 0.0)
    g = np.array([1.0, 0.3, 0.3, 1.0], complex)
    sigma = 0.05
    R = NoiseCovariance.white(SMALL_RF, sigma)
    ts = tracked_state(mu, g)
    ts.odometer = [0.2]
    out = ekf.reinit_weights(ts, mpc_signal(SMALL_RF, mu, g) + R.sample(rng), R, SMALL_RF, 0.1153)
    sd = np.sqrt(out.P[[out.idx(6 + p, 0) for p in range(4)]][:, [out.idx(6 + p, 0) for p in range(4)]]
                 .diagonal())
    assert np.all(np.abs(np.abs(out.gamma(0)) - np.abs(g)) < 4 * sd)


# randomized filter health -------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_step_sequences_keep_P_healthy(seed):
    rng = np.random.default_rng(seed)
    rf = SMALL_RF
    ts = random_state(rng, 2, rf)
    R = NoiseCovariance(rf, DmcParams(alpha=0.5, beta=0.5, sigma_w=0.2))
    cfg = TrackerConfig(k_max=4)
    for n in range(8):
        op = rng.integers(0, 3)
        if op == 0:
            ts = predict(ts, ProcessNoise(*rng.uniform(0, 1e-4, 5)))
        elif op == 1 and ts.K:
            ts = update(ts, signal(ts, rf) + R.sample(rng), R, rf, int(rng.integers(1, 4)))
        else:
            ts, _ = prune(ts, float(rng.uniform(-10, 40)), n)
        assert min_eig_ok(ts.P)


# run_filter ---------------------------------------------------------------

SMALL_CFG = dict(n_az=90, n_el=24, k_max=5)


def test_run_filter_static_noise_free_fixpoint():
    P = np.tile([[3.0, 0.5, 0.0]], (100, 1))
    sc = free_space(P, rf=SMALL_RF)
    Y, _ = synthesize(sc, seed=0, noise=False)
    res = ekf.run_filter(Y, SMALL_RF, TrackerConfig(**SMALL_CFG))
    d = np.array([r[2] for r in res.rows if r[1] == 0])
    assert len(d) == 100
    assert np.ptp(d) < 1e-6


def test_run_filter_table_rows_contiguous():
    P = radial_positions(40)
    sc = one_wall(P, rf=SMALL_RF)
    Y, _ = synthesize(sc, seed=3)
    res = ekf.run_filter(Y, SMALL_RF, TrackerConfig(**SMALL_CFG))
    tracks = {}
    for n, k, *_ in res.rows:
        tracks.setdefault(k, []).append(n)
    for k, ns in tracks.items():
        assert ns == list(range(ns[0], ns[-1] + 1))
    assert res.rows == sorted(res.rows, key=lambda r: (r[0], r[1]))
    with pytest.raises(ValueError):
        ekf.run_filter(Y[:1], SMALL_RF)


def test_run_filter_phase_calibration():
    n = 120
    sc = free_space(radial_positions(n, step=0.02))
    Y, truth = synthesize(sc, seed=5)
    got = {}

    def cb(t, ts):
        if 0 in ts.ids:
            k = ts.ids.index(0)
            got[t] = (ts.x[ts.idx(D, k)], ts.P[ts.idx(D, k), ts.idx(D, k)])

    ekf.run_filter(Y, FULL_RF, TrackerConfig(n_az=180, n_el=45), callback=cb)
    assert sorted(got) == list(range(n))
    d = np.array([got[t][0] for t in range(n)])
    v = np.array([got[t][1] for t in range(n)])
    step_err = np.diff(d) - np.diff(truth["d"][:, 0])
    ok = np.abs(step_err) <= 3 * np.sqrt(v[1:] + v[:-1])
    assert ok.mean() >= 0.95


def test_run_filter_survives_corner_turn():
    P = corner_positions()
    sc = free_space(P)
    Y, truth = synthesize(sc, seed=2)
    res = ekf.run_filter(Y, FULL_RF, TrackerConfig(n_az=180, n_el=45))
    los = [a for a in res.archive if a["id"] == 0][0]
    assert los["death_n"] is None
    d = np.array([r[2] for r in res.rows if r[1] == 0])
    err = d - truth["d"][:, 0]
    assert np.sqrt(np.mean(err**2)) < FULL_RF.wavelength / 10
