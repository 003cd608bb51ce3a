import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from larc import threshold_model as tm
from larc.kernels import KernelSpec, gram
from larc.threshold_model import ConfigError, LarcConfig, ModelError
from oracles import ReplayOracle


def make_config(**kw):
    base = dict(alpha=0.1, eta1=1.0, lam=0.01, kernel=KernelSpec("rbf", 1.0, 1.0))
    base.update(kw)
    return LarcConfig(**base)


def seeded_run(cfg, T, seed=0, dim=2, probes=None):
    """Drive a state with miscoverage losses from uniform scores."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, dim))
    S = rng.uniform(size=T)
    state = tm.init(cfg, dim)
    if probes is not None:
        state.attach_probes(probes)
    thresholds, losses = [], []
    for x, s in zip(X, S):
        g = tm.predict_threshold(state, x)
        loss = 1.0 if s > g else 0.0
        tm.update(state, x, loss)
        thresholds.append(g)
        losses.append(loss)
    return state, X, np.array(losses), np.array(thresholds)


def test_config_validation():
    with pytest.raises(ConfigError):
        make_config(eta1=1.0, lam=1.0)
    with pytest.raises(ConfigError):
        make_config(alpha=0.0)
    with pytest.raises(ConfigError):
        make_config(lam=0.0)
    with pytest.raises(ConfigError):
        make_config(max_coefficients=0)
    cfg = make_config(lam=1e-4)
    assert LarcConfig.from_config(cfg.to_config()) == cfg


def test_fresh_state_is_zero():
    state = tm.init(make_config(), 2)
    assert tm.predict_threshold(state, [0.3, -1.0]) == 0.0
    assert len(state) == 0
    with pytest.raises(ModelError):
        tm.averaged_threshold(state, [0.0, 0.0])


def test_first_update_example():
    state = tm.init(make_config(), 2)
    tm.update(state, [0.0, 0.0], 1.0)
    assert state.constant == pytest.approx(0.9, abs=1e-15)
    assert state.coeffs.tolist() == pytest.approx([0.9], abs=1e-15)
    # the threshold at the support point is coefficient*kappa + constant
    assert tm.predict_threshold(state, [0.0, 0.0]) == pytest.approx(1.8, abs=1e-15)
    # average after one update is g_1 = 0
    assert tm.averaged_threshold(state, [5.0, 5.0]) == 0.0


def test_loss_equal_alpha_adds_zero_coefficient():
    state = tm.init(make_config(), 1)
    tm.update(state, [0.0], 1.0)
    before = tm.predict_threshold(state, [0.4])
    tm.update(state, [1.0], 0.1)
    assert state.coeffs[-1] == 0.0
    assert state.constant == pytest.approx(0.9)
    # only the shrinkage (1 - eta_2 lambda) acts on the kernel part
    shrink = 1.0 - 0.01 / math.sqrt(2)
    assert tm.predict_threshold(state, [0.4]) == pytest.approx(0.9 + shrink * (before - 0.9), rel=1e-14)


def test_two_step_against_high_precision_values():
    # frozen from a 40-digit evaluation of the recursion (eta1=0.5, lambda=0.1, alpha=0.1)
    cfg = make_config(eta1=0.5, lam=0.1)
    state = tm.init(cfg, 2)
    tm.update(state, [0.0, 0.0], 1.0)
    tm.update(state, [1.0, 0.0], 0.0)
    np.testing.assert_allclose(state.coeffs, [0.4340900974233027, -0.03535533905932738], rtol=0, atol=1e-15)
    assert state.constant == pytest.approx(0.4146446609406726, abs=1e-15)


def test_recursion_matches_replay_oracle():
    cfg = make_config(lam=0.05, kernel=KernelSpec("rbf", 1.0, 0.7))
    state, X, losses, thresholds = seeded_run(cfg, 200, seed=4)
    oracle = ReplayOracle(0.1, 1.0, 0.05, "rbf", 1.0, 0.7)
    oracle.xs, oracle.ls = list(X), list(losses)
    coeffs, const = oracle.coefficients(200)
    np.testing.assert_allclose(state.coeffs, coeffs, rtol=0, atol=1e-12)
    assert state.constant == pytest.approx(const, abs=1e-12)
    probes = np.random.default_rng(9).normal(size=(20, 2))
    for p in probes:
        assert tm.predict_threshold(state, p) == pytest.approx(oracle.g(200, p), abs=1e-9)
    for t in (1, 17, 200):
        assert thresholds[t - 1] == pytest.approx(oracle.g(t - 1, X[t - 1]), abs=1e-9)


def test_averaged_threshold_matches_stored_functions():
    cfg = make_config(lam=0.05)
    rng = np.random.default_rng(2)
    probes = rng.normal(size=(10, 2))
    state = tm.init(cfg, 2)
    stored = []
    for _ in range(150):
        stored.append(state.predict_many(probes))
        x = rng.normal(size=2)
        loss = float(rng.uniform() > tm.predict_threshold(state, x))
        tm.update(state, x, loss)
    expected = np.mean(stored, axis=0)
    np.testing.assert_allclose(state.averaged_many(probes), expected, rtol=0, atol=1e-10)
    for p, e in zip(probes, expected):
        assert tm.averaged_threshold(state, p) == pytest.approx(e, abs=1e-10)


def test_rkhs_norm_single_coefficient():
    state = tm.init(make_config(), 2)
    tm.update(state, [1.0, 2.0], 1.0)
    assert tm.rkhs_norm(state) == pytest.approx(0.9, abs=1e-15)


def test_incremental_norm_matches_gram():
    cfg = make_config(lam=0.02, kernel=KernelSpec("cauchy", 1.0, 0.5))
    state, *_ = seeded_run(cfg, 300, seed=1)
    a = state.coeffs
    exact = float(a @ gram(cfg.kernel, state.support) @ a)
    assert state.sq_norm == pytest.approx(exact, rel=1e-9)
    assert tm.rkhs_norm(state) == pytest.approx(math.sqrt(exact), rel=1e-12)


def test_norm_bound_holds_every_step():
    cfg = make_config(eta1=1.0, lam=0.1)
    rng = np.random.default_rng(7)
    state = tm.init(cfg, 2)
    bound = tm.rkhs_norm_bound(cfg)
    for _ in range(500):
        x = rng.normal(size=2) * 0.3
        tm.update(state, x, float(rng.uniform() < 0.5))
        assert math.sqrt(state.sq_norm) <= bound + 1e-9
    assert tm.rkhs_norm(state) <= bound + 1e-9


def test_bound_box_values():
    cfg = make_config(eta1=0.5, lam=0.1)
    g_min, g_max = tm.bound_box(cfg, 1.0)
    # frozen from a 40-digit evaluation
    assert g_max == pytest.approx(21.023108647964108, abs=1e-12)
    assert g_min == pytest.approx(-20.023108647964108, abs=1e-12)
    flat = make_config(eta1=1.0, lam=0.1, kernel=KernelSpec("rbf", 0.0, 1.0))
    assert tm.bound_box(flat, 3.0) == (-1.0, 2.0)


@settings(max_examples=50, deadline=None)
@given(eta1=st.floats(0.05, 5.0), lam=st.floats(1e-4, 0.15), amp=st.floats(0.0, 3.0),
       length=st.floats(0.1, 10.0), radius=st.floats(0.0, 10.0))
def test_bound_box_identity(eta1, lam, amp, length, radius):
    cfg = make_config(eta1=eta1, lam=lam, kernel=KernelSpec("rbf", amp, length))
    g_min, g_max = tm.bound_box(cfg, radius)
    assert g_max - g_min == pytest.approx(cfg.score_bound + 2 * tm.lipschitz_gap(cfg, radius)
                                          + 2 * eta1 * (2 * amp + 1), rel=1e-12)
    assert tm.sup_norm_bound(cfg) == pytest.approx(math.sqrt(amp) * tm.rkhs_norm_bound(cfg))


def test_truncation_with_large_budget_is_bit_identical():
    probes = np.random.default_rng(0).normal(size=(5, 2))
    a, *_ = seeded_run(make_config(), 400, seed=3, probes=probes)
    b, *_ = seeded_run(make_config(max_coefficients=500), 400, seed=3, probes=probes)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    np.testing.assert_array_equal(a.avg_coeff_sums, b.avg_coeff_sums)
    np.testing.assert_array_equal(a.probe_f, b.probe_f)
    assert a.constant == b.constant and a.sq_norm == b.sq_norm


def test_truncation_keeps_most_recent_points():
    cfg = make_config(max_coefficients=50, lam=0.05)
    state, X, *_ = seeded_run(cfg, 333, seed=8, probes=np.zeros((1, 2)))
    assert len(state) == 50
    np.testing.assert_array_equal(state.support, X[-50:])
    a = state.coeffs
    assert state.sq_norm == pytest.approx(float(a @ gram(cfg.kernel, state.support) @ a), rel=1e-8)
    assert state.probe_f[0] == pytest.approx(float(state.predict_many(np.zeros((1, 2)))[0] - state.constant),
                                             abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 30))
def test_larger_loss_raises_threshold_everywhere(seed, steps):
    state, *_ = seeded_run(make_config(lam=0.05), steps, seed=seed)
    x = np.random.default_rng(seed).normal(size=2)
    probes = np.random.default_rng(seed + 1).normal(size=(8, 2))
    hi = tm.update(state.copy(), x, 1.0).predict_many(probes)
    lo = tm.update(state.copy(), x, 0.0).predict_many(probes)
    assert np.all(hi >= lo)


def test_snapshot_round_trip_continues_identically():
    cfg = make_config(lam=0.03)
    state, *_ = seeded_run(cfg, 120, seed=6)
    clone = tm.LarcState.from_snapshot(cfg, state.to_snapshot())
    x = np.array([0.2, -0.1])
    for s in (state, clone):
        tm.update(s, x, 1.0)
    probes = np.random.default_rng(1).normal(size=(6, 2))
    np.testing.assert_allclose(clone.predict_many(probes), state.predict_many(probes), rtol=0, atol=1e-14)
    np.testing.assert_allclose(clone.averaged_many(probes), state.averaged_many(probes), rtol=0, atol=1e-14)
    empty = tm.LarcState.from_snapshot(cfg, tm.init(cfg, 3).to_snapshot())
    assert empty.dim == 3


def test_update_rejects_bad_inputs():
    state = tm.init(make_config(), 2)
    with pytest.raises(ModelError):
        tm.update(state, [0.0, 0.0], 1.5)
    with pytest.raises(ModelError):
        tm.update(state, [0.0, 0.0], float("nan"))
    with pytest.raises(ModelError):
        tm.update(state, [0.0, 0.0, 1.0], 0.0)
    with pytest.raises(ModelError):
        tm.predict_threshold(state, [np.inf, 0.0])
