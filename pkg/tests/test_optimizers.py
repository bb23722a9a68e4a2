import numpy as np
import pytest

from bspsa.linalg import diag_precision
from bspsa.optimizers import (
    Method,
    ParamSpec,
    PerturbationDraw,
    Tuner,
    TunerState,
    _bspsa_step,
    apply_constraints,
    bspsa1_update,
    bspsa_update,
    bspsas_update,
    check_outcome,
    draw_perturbation,
    marginal_spreads,
    propose,
    spsa_update,
)
from bspsa.schedules import GainSchedule


def const_schedule(c, r=None):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    r_end = None if r is None else np.full(c.shape, r)
    return GainSchedule(c_end=c, r_end=r_end, n_iterations=10**6, kind="constant", alpha=0.0)


def draw(*signs):
    return PerturbationDraw(np.array(signs, dtype=float))


def bspsas_state(theta, spreads, k=1):
    return TunerState(Method.BSPSAS, k, np.asarray(theta, float), 0.6, spreads=np.asarray(spreads, float))


def bspsa_state(theta, spreads, tau=0.6):
    return TunerState(Method.BSPSA, 1, np.asarray(theta, float), tau, precision=diag_precision(spreads))


def rng_with_draw(target):
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        if np.array_equal(draw_perturbation(np.random.default_rng(seed), len(target)).delta, target):
            return rng
    raise AssertionError("no seed produced the requested signs")


# propose ------------------------------------------------------------------


def test_propose_single():
    state = TunerState(Method.SPSA, 1, np.array([0.0]), 0.6)
    plus, minus, d = propose(state, const_schedule(5.0), rng_with_draw([1.0]))
    assert np.array_equal(d.delta, [1.0])
    assert np.array_equal(plus, [5.0]) and np.array_equal(minus, [-5.0])


def test_propose_two_params():
    state = TunerState(Method.SPSA, 1, np.array([10.0, -3.0]), 0.6)
    plus, minus, d = propose(state, const_schedule([2.0, 4.0]), rng_with_draw([-1.0, 1.0]))
    assert np.array_equal(plus, [8.0, 1.0]) and np.array_equal(minus, [12.0, -7.0])


def test_propose_midpoint_is_theta():
    rng = np.random.default_rng(3)
    sched = const_schedule([0.5, 2.0, 8.0])
    state = TunerState(Method.SPSA, 1, np.array([0.25, -1.5, 4.0]), 0.6)
    for _ in range(100):
        plus, minus, _ = propose(state, sched, rng)
        assert np.array_equal((plus + minus) / 2, state.theta)


def test_perturbation_signs_are_fair():
    d = np.concatenate([draw_perturbation(np.random.default_rng(i), 100).delta for i in range(100)])
    assert set(np.unique(d)) == {-1.0, 1.0}
    assert abs(d.mean()) < 0.05


def test_chunked_draws_match_single_draws():
    a = np.random.default_rng(11)
    b = np.random.default_rng(11)
    block = np.where(a.random((5, 3)) < 0.5, 1.0, -1.0)
    rows = np.array([draw_perturbation(b, 3).delta for _ in range(5)])
    assert np.array_equal(block, rows)


def test_perturbation_draw_validation():
    with pytest.raises(ValueError):
        PerturbationDraw(np.array([1.0, 0.5]))
    assert np.array_equal(draw(1, -1).flipped().delta, [-1.0, 1.0])


# spsa ---------------------------------------------------------------------


def test_spsa_zero_outcome_keeps_theta():
    state = TunerState(Method.SPSA, 1, np.array([3.0, -2.0]), 0.6)
    new = spsa_update(state, draw(1, -1), 0, const_schedule([1.0, 2.0], 0.1))
    assert np.array_equal(new.theta, state.theta) and new.k == 2


def test_spsa_reference_step():
    sched = const_schedule(20.0, 0.37 / 400.0)  # a_k = R c^2 = 0.37
    state = TunerState(Method.SPSA, 1, np.array([0.0]), 0.6)
    new = spsa_update(state, draw(1), 2, sched)
    assert new.theta[0] == pytest.approx(0.037, rel=1e-14)


# single-parameter Bayesian update -------------------------------------------


def test_bspsa1_zero_outcome():
    theta, s = bspsa1_update(4.0, 10.0, 5.0, 100.0, 0.6, 0)
    assert theta == 4.0 and s < 10.0


def test_bspsa1_reference_values():
    theta, s = bspsa1_update(0.0, 10.0, 5.0, 100.0, 0.6, 2)
    # the gain per unit of w is 0.27770; the step scales linearly with w
    unit, _ = bspsa1_update(0.0, 10.0, 5.0, 100.0, 0.6, 1)
    assert unit == pytest.approx(0.27770, abs=5e-6)
    assert theta == pytest.approx(2 * 0.27770, abs=1e-5)
    assert s**2 == pytest.approx(99.9722, abs=5e-5)
    # exact rational form: 2 c s^2 sigma^2 w / (4 c^2 s^2 + tau^2 sigma^4)
    assert theta == pytest.approx(2 * 5 * 100 * 1e4 * 2 / (4 * 25 * 100 + 0.36 * 1e8), rel=1e-14)


def test_bspsa1_small_tau_is_spsa_step():
    theta, _ = bspsa1_update(1.0, 10.0, 5.0, 100.0, 1e-9, 1)
    assert theta == pytest.approx(1.0 + 100.0**2 / (2 * 5.0), rel=1e-6)


def test_bspsa1_vectorised():
    th, s = bspsa1_update(np.zeros(3), np.full(3, 10.0), 5.0, 100.0, 0.6, np.array([-2, 0, 2]))
    assert th[0] == -th[2] and th[1] == 0.0 and np.all(s < 10.0)


# bspsas ---------------------------------------------------------------------


def test_bspsas_single_param_matches_bspsa1():
    rng = np.random.default_rng(0)
    for _ in range(200):
        theta, s, c, sigma = rng.normal(0, 20), rng.uniform(0.5, 30), rng.uniform(0.5, 40), rng.uniform(5, 300)
        w = int(rng.integers(-2, 3))
        sign = float(rng.choice([-1.0, 1.0]))
        new = bspsas_update(bspsas_state([theta], [s]), draw(sign), w, const_schedule(c), sigma)
        ref_theta, ref_s = bspsa1_update(theta, s, c, sigma, 0.6, sign * w)
        assert new.theta[0] == pytest.approx(ref_theta, rel=1e-12, abs=1e-12)
        assert new.spreads[0] == pytest.approx(ref_s, rel=1e-12)


def test_bspsas_at_origin_is_componentwise():
    rng = np.random.default_rng(1)
    n = 6
    s = rng.uniform(1, 20, n)
    c = rng.uniform(1, 30, n)
    sigma = rng.uniform(20, 200, n)
    d = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    new = bspsas_update(bspsas_state(np.zeros(n), s), PerturbationDraw(d), 2, const_schedule(c), sigma)
    ref_theta, ref_s = bspsa1_update(0.0, s, c, sigma, 0.6, d * 2)
    np.testing.assert_allclose(new.theta, ref_theta, rtol=1e-12)
    np.testing.assert_allclose(new.spreads, ref_s, rtol=1e-12)


def test_bspsas_spread_update_is_componentwise_at_any_theta():
    rng = np.random.default_rng(2)
    n = 5
    theta = rng.normal(0, 10, n)
    s = rng.uniform(1, 20, n)
    c = rng.uniform(1, 30, n)
    sigma = rng.uniform(20, 200, n)
    new = bspsas_update(bspsas_state(theta, s), draw(1, -1, 1, 1, -1), -1, const_schedule(c), sigma)
    _, ref_s = bspsa1_update(theta, s, c, sigma, 0.6, -1)
    np.testing.assert_allclose(new.spreads, ref_s, rtol=1e-12)


def test_bspsas_cross_term_uses_pre_update_theta():
    theta = np.array([3.0, -4.0])
    s = np.array([5.0, 6.0])
    c = np.array([2.0, 3.0])
    sigma = np.array([50.0, 70.0])
    d = np.array([1.0, -1.0])
    w = 1
    new = bspsas_update(bspsas_state(theta, s), PerturbationDraw(d), w, const_schedule(c), sigma)
    b = d * c * theta / sigma**2
    den = 4 * c**2 * s**2 + 0.36 * sigma**4
    gain = 2 * c * s**2 * sigma**2 / den
    expected = theta + d * gain * (w + (b.sum() - b))
    np.testing.assert_allclose(new.theta, expected, rtol=1e-14)


# bspsa ----------------------------------------------------------------------


def test_bspsa_single_param_matches_bspsa1():
    rng = np.random.default_rng(3)
    for _ in range(200):
        theta, s, c, sigma = rng.normal(0, 20), rng.uniform(0.5, 30), rng.uniform(0.5, 40), rng.uniform(5, 300)
        tau = rng.uniform(0.1, 1.5)
        w = int(rng.integers(-2, 3))
        sign = float(rng.choice([-1.0, 1.0]))
        new = bspsa_update(bspsa_state([theta], [s], tau), draw(sign), w, const_schedule(c), sigma)
        ref_theta, ref_s = bspsa1_update(theta, s, c, sigma, tau, sign * w)
        assert new.theta[0] == pytest.approx(ref_theta, rel=1e-12, abs=1e-12)
        assert 1 / np.sqrt(new.precision[0, 0]) == pytest.approx(ref_s, rel=1e-12)


def test_bspsa_zero_outcome_still_gains_precision():
    state = bspsa_state([1.0, 2.0], [10.0, 10.0])
    new = bspsa_update(state, draw(1, -1), 0, const_schedule([5.0, 5.0]), [100.0, 100.0])
    assert np.array_equal(new.theta, state.theta)
    assert np.all(np.diag(new.precision) > np.diag(state.precision))
    assert new.precision[0, 1] < 0  # opposite signs correlate negatively


def test_bspsa_off_diagonal_averages_out():
    rng = np.random.default_rng(4)
    c = np.array([5.0, 5.0])
    sigma = np.array([100.0, 100.0])
    theta = np.zeros(2)
    p = diag_precision([10.0, 10.0])
    p0 = p.copy()
    k = 20000
    for _ in range(k):
        _bspsa_step(theta, p, np.where(rng.random(2) < 0.5, 1.0, -1.0), c, sigma, 0.6, 0.0)
    inc = (2 * 5.0 / 100.0**2) ** 2 / 0.36
    assert p[0, 0] - p0[0, 0] == pytest.approx(k * inc, rel=1e-9)
    # a +-inc random walk: 5 standard deviations is sqrt(k) * inc * 5
    assert abs(p[0, 1]) < 5 * np.sqrt(k) * inc
    assert abs(p[0, 1]) < 0.05 * (p[0, 0] - p0[0, 0])


def test_bspsa_precision_symmetric_and_positive_definite_long_run():
    rng = np.random.default_rng(5)
    n = 16
    c = rng.uniform(2, 20, n)
    sigma = rng.uniform(50, 200, n)
    theta = rng.normal(0, 5, n)
    p = diag_precision(rng.uniform(3, 20, n))
    deltas = np.where(rng.random((100000, n)) < 0.5, 1.0, -1.0)
    ws = rng.integers(-2, 3, 100000).astype(float)
    for i in range(100000):
        _bspsa_step(theta, p, deltas[i], c, sigma, 0.6, ws[i])
    assert np.array_equal(p, p.T)
    np.linalg.cholesky(p)
    assert np.all(np.isfinite(theta))


# shared invariants -------------------------------------------------------------


def test_spread_strictly_shrinks():
    state = bspsas_state([0.0, 1.0], [10.0, 4.0])
    sched = const_schedule([5.0, 0.01])
    for w in (-2, 0, 2):
        new = bspsas_update(state, draw(1, 1), w, sched, [100.0, 100.0])
        assert np.all(new.spreads < state.spreads)


def test_constant_c_spread_law():
    s1, c, sigma, tau = 12.0, 4.0, 80.0, 0.6
    state = TunerState(Method.BSPSAS, 1, np.array([0.0]), tau, spreads=np.array([s1]))
    sched = const_schedule(c)
    rng = np.random.default_rng(6)
    for _ in range(1000):
        state = bspsas_update(state, draw(1), int(rng.integers(-2, 3)), sched, sigma)
    expected = 1 / s1**2 + 1000 * 4 * c**2 / (tau**2 * sigma**4)
    assert 1 / state.spreads[0] ** 2 == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("method", list(Method))
def test_odd_symmetry(method):
    rng = np.random.default_rng(7)
    params = [ParamSpec(f"x{i}", float(rng.normal(0, 5)), 3.0 + i, s1=5.0 + i, sigma=90.0, r_end=0.01) for i in range(4)]
    tuner = Tuner.build(method, params, 100, 0.6)
    state = tuner.initial_state()
    for _ in range(20):
        state = tuner.update(state, draw_perturbation(rng, 4), int(rng.integers(-2, 3)))
    d = draw_perturbation(rng, 4)
    for w in (-2, -1, 1, 2):
        a = tuner.update(state, d, w)
        b = tuner.update(state, d.flipped(), -w)
        assert np.array_equal(a.theta, b.theta)


@pytest.mark.parametrize("method", list(Method))
def test_deterministic_trajectories(method):
    params = [ParamSpec("a", 1.0, 2.0, s1=3.0, sigma=50.0, r_end=0.02), ParamSpec("b", -1.0, 2.0, s1=3.0, sigma=50.0, r_end=0.02)]
    tuner = Tuner.build(method, params, 300, 0.6)

    def trajectory(seed):
        rng = np.random.default_rng(seed)
        games = np.random.default_rng(seed + 1)
        state = tuner.initial_state()
        out = []
        for _ in range(300):
            _, _, d = tuner.propose(state, rng)
            state = tuner.update(state, d, int(games.integers(-2, 3)))
            out.append(state.theta.copy())
        return np.array(out)

    assert np.array_equal(trajectory(42), trajectory(42))


# constraints and the tuner bundle ------------------------------------------------


def test_apply_constraints():
    free = [ParamSpec("a", 0.0, 1.0)]
    assert np.array_equal(apply_constraints([123.5], free), [123.5])
    boxed = [ParamSpec("a", 0.0, 1.0, lower=0.0, upper=10.0)]
    assert np.array_equal(apply_constraints([12.0], boxed), [10.0])
    mixed = [ParamSpec("a", 0.0, 1.0, lower=-1.0, upper=1.0), ParamSpec("b", 0.0, 1.0)]
    assert np.array_equal(apply_constraints([-3.0, 5.0], mixed), [-1.0, 5.0])


def test_tuner_clamps_after_update_and_rounds_emission():
    params = [ParamSpec("q", 9.6, 2.0, s1=50.0, sigma=10.0, lower=0.0, upper=10.0, integer_valued=True)]
    tuner = Tuner.build(Method.BSPSAS, params, 10, 0.6)
    state = tuner.initial_state()
    new = tuner.update(state, draw(1), 2)
    assert new.theta[0] == 10.0
    plus, minus, d = tuner.propose(state, np.random.default_rng(0))
    assert plus[0] == np.rint(plus[0]) and 0 <= plus[0] <= 10
    assert state.theta[0] == 9.6
    emitted = tuner.emit(plus)
    assert isinstance(emitted["q"], int)


def test_tuner_requires_method_hyperparameters():
    with pytest.raises(ValueError):
        Tuner.build(Method.SPSA, [ParamSpec("a", 0.0, 1.0, s1=1.0, sigma=1.0)], 10, 0.6)
    with pytest.raises(ValueError):
        Tuner.build(Method.BSPSA, [ParamSpec("a", 0.0, 1.0, r_end=1.0)], 10, 0.6)
    with pytest.raises(ValueError):
        Tuner.build(Method.BSPSA, [ParamSpec("a", 0.0, 1.0, s1=1.0, sigma=1.0)] * 2, 10, 0.6)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"s1": 0.0},
        {"s1": -1.0},
        {"sigma": 0.0},
        {"c_end": 0.0},
        {"r_end": -0.1},
        {"lower": 5.0, "upper": 5.0},
        {"theta_start": float("nan")},
    ],
)
def test_param_spec_validation(kwargs):
    base = {"name": "a", "theta_start": 0.0, "c_end": 1.0}
    base.update(kwargs)
    with pytest.raises(ValueError):
        ParamSpec(**base)


@pytest.mark.parametrize("w", [3, -3, 1.0, True, "1"])
def test_outcome_validation(w):
    with pytest.raises(ValueError):
        check_outcome(w)


def test_update_rejects_wrong_method_and_shape():
    state = bspsas_state([0.0], [1.0])
    with pytest.raises(ValueError):
        spsa_update(state, draw(1), 1, const_schedule(1.0, 1.0))
    with pytest.raises(ValueError):
        bspsas_update(state, draw(1, 1), 1, const_schedule(1.0), 10.0)


def test_marginal_spreads():
    state = bspsa_state([0.0, 0.0], [2.0, 5.0])
    np.testing.assert_allclose(marginal_spreads(state), [2.0, 5.0])
    assert marginal_spreads(TunerState(Method.SPSA, 1, np.zeros(1), 0.6)) is None
