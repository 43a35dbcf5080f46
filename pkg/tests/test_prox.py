"""Thresholding operators against the brute-force grid oracle."""

import numpy as np
import pytest

from rvsm.prox import (
    PenaltySpec,
    ThresholdContext,
    hard_threshold,
    penalty_value,
    prox_oracle,
    prox_oracle_batch,
    rho_a,
    soft_threshold,
    threshold,
    tl1_threshold,
    tl1_threshold_level,
)


def test_penalty_spec_validation():
    PenaltySpec("l0", lam=0.0)
    PenaltySpec("tl1", lam=1.0, a=0.01)
    with pytest.raises(ValueError):
        PenaltySpec("l2", lam=1.0)
    with pytest.raises(ValueError):
        PenaltySpec("l1", lam=-0.1)
    with pytest.raises(ValueError):
        PenaltySpec("tl1", lam=1.0)  # missing a
    with pytest.raises(ValueError):
        PenaltySpec("tl1", lam=1.0, a=-2.0)
    with pytest.raises(ValueError):
        PenaltySpec("l0", lam=1.0, a=1.0)  # a is tl1-only


def test_threshold_context_gamma_is_derived():
    ctx = ThresholdContext(lam=0.0005, beta=0.1)
    assert ctx.gamma == 0.0005 / 0.1
    with pytest.raises(ValueError):
        ThresholdContext(lam=1.0, beta=0.0)


def test_penalty_value_examples():
    assert penalty_value(PenaltySpec("l0", lam=1.0), np.zeros(3)) == 0.0
    assert penalty_value(PenaltySpec("l1", lam=2.0), np.array([1.0, -3.0])) == 8.0
    # rho_1(1) = 2*1/(1+1) = 1, evaluated directly from the formula
    assert penalty_value(PenaltySpec("tl1", lam=1.0, a=1.0), np.array([1.0])) == pytest.approx(1.0)


def test_penalty_value_zero_iff_zero_or_lam_zero():
    rng = np.random.default_rng(7)
    v = rng.uniform(-2, 2, size=50)
    for spec in (PenaltySpec("l0", 0.5), PenaltySpec("l1", 0.5), PenaltySpec("tl1", 0.5, a=0.3)):
        assert penalty_value(spec, v) > 0
        assert penalty_value(spec, np.zeros(5)) == 0.0
        zero_weight = PenaltySpec(spec.kind, 0.0, a=spec.a)
        assert penalty_value(zero_weight, v) == 0.0


def test_penalty_value_rejects_non_finite():
    with pytest.raises(ValueError):
        penalty_value(PenaltySpec("l1", 1.0), np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        penalty_value(PenaltySpec("l0", 1.0), np.array([np.inf]))


def test_rho_a_examples_and_bounds():
    assert rho_a(1.0, 0.0) == 0.0
    assert rho_a(1.0, 1.0) == pytest.approx(1.0)
    # large a approaches |x|: 101*0.5/100.5
    assert rho_a(100.0, 0.5) == pytest.approx(0.5024875621890548, abs=1e-12)
    x = np.linspace(-3, 3, 301)
    vals = rho_a(0.7, x)
    assert np.all(vals >= 0)
    assert np.all(vals < 0.7 + 1)
    np.testing.assert_allclose(vals, rho_a(0.7, -x))
    # nondecreasing in |x|
    half = vals[150:]
    assert np.all(np.diff(half) >= 0)
    with pytest.raises(ValueError):
        rho_a(0.0, 1.0)


def test_hard_threshold_examples():
    # sqrt(2 * 0.005) = 0.1
    assert hard_threshold(0.005, 0.05) == 0.0
    assert hard_threshold(0.005, 0.2) == 0.2
    assert hard_threshold(0.005, 0.0) == 0.0
    # boundary |w| = sqrt(2 gamma) maps to 0
    assert hard_threshold(0.005, 0.1) == 0.0
    assert hard_threshold(0.005, -0.1) == 0.0


def test_hard_threshold_dichotomy():
    rng = np.random.default_rng(11)
    w = rng.uniform(-1, 1, size=1000)
    out = hard_threshold(0.005, w)
    assert np.all((out == 0) | (out == w))


def test_soft_threshold_examples():
    assert soft_threshold(0.1, 0.3) == pytest.approx(0.2)
    assert soft_threshold(0.1, -0.05) == 0.0
    assert soft_threshold(0.1, 0.0) == 0.0
    w = np.array([-0.3, -0.1, 0.0, 0.1, 0.25])
    np.testing.assert_allclose(soft_threshold(0.1, w), [-0.2, 0.0, 0.0, 0.0, 0.15], atol=1e-15)


def test_tl1_threshold_level_examples():
    assert tl1_threshold_level(1.0, 0.005) == pytest.approx(0.01)
    # both branches coincide at gamma = a^2 / (2(a+1)) = 0.25 for a = 1
    assert tl1_threshold_level(1.0, 0.25) == pytest.approx(0.5)
    # a -> 0 recovers the hard-threshold level sqrt(2 gamma)
    assert tl1_threshold_level(1e-8, 0.005) == pytest.approx(np.sqrt(0.01), abs=1e-4)
    with pytest.raises(ValueError):
        tl1_threshold_level(-1.0, 0.1)
    with pytest.raises(ValueError):
        tl1_threshold_level(1.0, 0.0)


@pytest.mark.parametrize("a", [0.01, 0.1, 1.0, 100.0])
def test_tl1_threshold_level_branch_continuity(a):
    gamma = a * a / (2.0 * (a + 1.0))
    first = gamma * (a + 1.0) / a
    second = np.sqrt(2.0 * gamma * (a + 1.0)) - a / 2.0
    assert abs(first - second) <= 1e-12 * max(1.0, first)
    assert tl1_threshold_level(a, gamma) == pytest.approx(first)


def test_tl1_threshold_level_monotone():
    gammas = np.geomspace(1e-4, 0.3, 12)
    for a in (0.01, 0.1, 1.0, 100.0):
        levels = [tl1_threshold_level(a, g) for g in gammas]
        assert np.all(np.diff(levels) > 0), f"not increasing in gamma at a={a}"
    for g in (1e-4, 5e-3, 0.1):
        levels = [tl1_threshold_level(a, g) for a in (0.01, 0.1, 1.0, 100.0)]
        assert np.all(np.diff(levels) < 0), f"not decreasing in a at gamma={g}"


def test_tl1_threshold_below_level_is_zero():
    assert tl1_threshold(1.0, 0.005, 0.005) == 0.0
    assert tl1_threshold(0.01, 0.005, 0.02) == 0.0


def test_tl1_threshold_against_oracle_spot():
    # freeze the interesting open-form case by recomputing the oracle here
    got = tl1_threshold(1.0, 0.005, 0.5)
    expect = prox_oracle(PenaltySpec("tl1", 1.0, a=1.0), 0.005, 0.5, -1.0, 1.0, 1e-6)
    assert abs(got - expect) <= 2e-6
    # frozen from the oracle; cross-checked against the stationarity
    # condition x - w + gamma * a(a+1)/(a+x)^2 = 0
    assert got == pytest.approx(0.4955289414598585, abs=1e-9)


def test_tl1_matches_soft_for_large_a():
    w = np.linspace(-1, 1, 201)
    soft = soft_threshold(0.1, w)
    tl1 = tl1_threshold(1e8, 0.1, w)
    assert np.max(np.abs(tl1 - soft)) <= 1e-6
    assert tl1_threshold(1e8, 0.1, 0.3) == pytest.approx(0.2, abs=1e-6)


def test_tl1_matches_hard_for_small_a():
    gamma = 0.005
    level = np.sqrt(2 * gamma)
    w = np.linspace(-1, 1, 401)
    outside = np.abs(np.abs(w) - level) > 1e-3
    hard = hard_threshold(gamma, w[outside])
    tl1 = tl1_threshold(1e-8, gamma, w[outside])
    np.testing.assert_allclose(tl1, hard, atol=1e-6)


@pytest.mark.parametrize("op", [
    lambda w: hard_threshold(0.005, w),
    lambda w: soft_threshold(0.1, w),
    lambda w: tl1_threshold(1.0, 0.005, w),
    lambda w: tl1_threshold(0.01, 0.1, w),
])
def test_threshold_odd_symmetry_and_shrinkage(op):
    rng = np.random.default_rng(3)
    w = rng.uniform(-2, 2, size=500)
    np.testing.assert_allclose(op(-w), -op(w), atol=1e-15)
    assert np.all(np.abs(op(w)) <= np.abs(w) + 1e-15)


def test_prox_oracle_examples():
    assert prox_oracle(PenaltySpec("l1", 1.0), 0.1, 0.3) == pytest.approx(0.2, abs=1e-6)
    assert prox_oracle(PenaltySpec("l0", 1.0), 0.005, 0.09) == 0.0
    assert prox_oracle(PenaltySpec("tl1", 1.0, a=0.01), 0.005, 0.02) == 0.0


def test_prox_oracle_tie_breaks_toward_zero():
    # at |w| = sqrt(2 gamma) both 0 and w minimize the l0 objective;
    # dyadic values keep the tie exact in float64 and w on the grid
    gamma = 0.125
    w = 0.5  # sqrt(2 * 0.125)
    got = prox_oracle(PenaltySpec("l0", 1.0), gamma, w, -1.0, 1.0, 0.25)
    assert got == 0.0


def test_prox_oracle_validates_inputs():
    with pytest.raises(ValueError):
        prox_oracle(PenaltySpec("l1", 1.0), 0.1, 1.5)  # w outside (lo, hi)
    with pytest.raises(ValueError):
        prox_oracle(PenaltySpec("l1", 1.0), 0.1, 0.0, -1.0, 1.0, -1e-6)


@pytest.mark.parametrize("spec", [
    PenaltySpec("l0", 1.0),
    PenaltySpec("l1", 1.0),
    PenaltySpec("tl1", 1.0, a=0.01),
    PenaltySpec("tl1", 1.0, a=1.0),
    PenaltySpec("tl1", 1.0, a=100.0),
])
@pytest.mark.parametrize("gamma", [1e-4, 5e-3, 0.1])
def test_closed_forms_match_oracle_coarse(spec, gamma):
    # fast version of the full acceptance sweep: coarser grid, fewer points
    step = 1e-5
    ws = np.linspace(-0.99, 0.99, 21)
    closed = threshold(spec, gamma, ws)
    grid = prox_oracle_batch(spec, gamma, ws, -1.0, 1.0, step)
    assert np.max(np.abs(closed - grid)) <= 2 * step


def test_threshold_dispatch():
    w = np.array([0.05, 0.3])
    np.testing.assert_allclose(threshold(PenaltySpec("l0", 1.0), 0.005, w), hard_threshold(0.005, w))
    np.testing.assert_allclose(threshold(PenaltySpec("l1", 1.0), 0.1, w), soft_threshold(0.1, w))
    np.testing.assert_allclose(
        threshold(PenaltySpec("tl1", 1.0, a=1.0), 0.1, w), tl1_threshold(1.0, 0.1, w)
    )
