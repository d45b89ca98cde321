import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis.strategies import floats, integers, sampled_from

from nharm.inequalities import (
    GrowthParams,
    ParamsError,
    calibrate_monotonicity_constants,
    contraction_factor,
    convexity_bound_check,
    cordes_admissible,
    cordes_coefficients,
    cordes_epsilon_max,
    cordes_lhs_rhs,
    cordes_report,
    gpow,
    half_weight,
    integrand,
    monotonicity_constants,
    monotonicity_gap,
    p_monotonicity_check,
    power_triangle_check,
    rescaling_identity_check,
    run_inequality_suite,
    sample_exponents,
    sandwich_check,
    uniqueness_lower_check,
    uniqueness_upper_check,
    v_map,
    weight,
)

unit = floats(0.0, 1.0, allow_subnormal=False)
entries = floats(-10.0, 10.0, allow_subnormal=False)


def params_for(n, N, frac, delta, s):
    return GrowthParams(n, N, n + frac, delta, s)


# ---------------------------------------------------------------------------
# Parameters and guarded powers
# ---------------------------------------------------------------------------

def test_growth_params_validation():
    with pytest.raises(ParamsError):
        GrowthParams(1, 1, 2.0)
    with pytest.raises(ParamsError):
        GrowthParams(2, 3, 1.9)
    with pytest.raises(ParamsError):
        GrowthParams(2, 3, 2.5, delta=1.5)
    with pytest.raises(ParamsError):
        GrowthParams(2, 3, 2.5, s=-0.1)
    params = GrowthParams(3, 2, 3.2, 0.1, 0.5)
    assert params.P0 == 3.5
    assert GrowthParams.from_dict(params.to_dict()) == params
    assert params.with_(p=3.1).p == 3.1


def test_gpow_conventions():
    assert gpow(0.0, 0.0) == 1.0
    assert gpow(0.0, 2.0) == 0.0
    assert gpow(-1.0, 2.0) == 0.0
    assert gpow(2.5, 1.0) == 2.5
    assert gpow(4.0, 0.5) == pytest.approx(2.0, rel=1e-15)


# ---------------------------------------------------------------------------
# Integrand and weight
# ---------------------------------------------------------------------------

@given(sampled_from([2, 3]), unit, unit, unit)
def test_integrand_vanishes_at_zero(n, frac, delta, s):
    assert integrand(np.zeros((n, 3)), params_for(n, 3, frac, delta, s)) == 0.0


@given(sampled_from([2, 3]), floats(0.0, 0.999), floats(0.0, 100.0, allow_subnormal=False))
def test_integrand_reduces_to_pure_power(n, frac, t):
    # s = delta = 0 leaves |G|^p / p
    params = params_for(n, 1, frac, 0.0, 0.0)
    G = np.zeros((n, 1))
    G[0, 0] = math.sqrt(t)
    expected = t ** (params.p / 2) / params.p
    assert integrand(G, params) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_integrand_survives_tiny_delta():
    params = GrowthParams(2, 3, 2.5, delta=2.2250738585072014e-308, s=0.0)
    G = np.full((2, 3), 4.0)
    value = integrand(G, params)
    assert math.isfinite(value)
    assert value == pytest.approx(96.0 ** 1.25 / 2.5, rel=1e-12)


@settings(deadline=None)
@given(sampled_from([2, 3]), unit, floats(1e-3, 1.0), unit, floats(0.1, 10.0))
def test_weight_is_twice_the_derivative(n, frac, delta, s, t):
    params = params_for(n, 1, frac, delta, s)

    def f(x):
        G = np.zeros((n, 1))
        G[0, 0] = math.sqrt(x)
        return integrand(G, params)

    h = 1e-5 * t
    fd = (f(t + h) - f(t - h)) / (2 * h)
    assert weight(t, params) == pytest.approx(2 * fd, rel=1e-6)


def test_weight_rejects_negative_argument():
    with pytest.raises(ParamsError):
        weight(-1.0, GrowthParams(2, 1, 2.5))


@given(sampled_from([2, 3]), unit, unit, unit, arrays(np.float64, 6, elements=entries))
def test_v_map_norm_identity(n, frac, delta, s, X):
    params = params_for(n, 2, frac, delta, s)
    t = float(X @ X)
    V = v_map(X, params)
    assert float(V @ V) == pytest.approx(weight(t, params) * t, rel=1e-12, abs=1e-300)
    assert half_weight(t, params) ** 2 == pytest.approx(weight(t, params), rel=1e-12)


# ---------------------------------------------------------------------------
# Monotonicity and uniqueness bounds
# ---------------------------------------------------------------------------

def test_monotonicity_constants():
    c0, c1 = monotonicity_constants(2)
    assert c0 == pytest.approx(4 / 9)
    assert c1 == pytest.approx(4 / 9 * 0.5 / 2.25)
    c0, c1 = monotonicity_constants(3)
    assert c0 == 0.25
    assert c1 == pytest.approx(0.25 / 4 / 4)


@pytest.mark.parametrize("n", [2, 3])
def test_calibrated_constants_dominate_the_pinned_ones(n):
    c0, c1 = monotonicity_constants(n)
    emp0, emp1 = calibrate_monotonicity_constants(n, radii=40, angles=16, p_points=3)
    assert emp0 >= c0 * (1 - 1e-9)
    assert emp1 >= c1 * (1 - 1e-9)


@given(sampled_from([2, 3]), unit, unit, unit,
       arrays(np.float64, 6, elements=entries), arrays(np.float64, 6, elements=entries))
def test_monotonicity_chain(n, frac, delta, s, X, Y):
    params = params_for(n, 2, frac * 0.999, delta, s)
    c0, c1 = monotonicity_constants(n)
    gap = monotonicity_gap(X, Y, params)
    scale = 1e-10 * (1 + gap.pairing + gap.v_gap + gap.p_gap)
    assert gap.pairing >= c0 * gap.v_gap - scale
    assert c0 * gap.v_gap >= c1 * gap.p_gap - scale


@given(sampled_from([2, 3]), unit, unit, unit,
       arrays(np.float64, 3, elements=entries), arrays(np.float64, 3, elements=entries))
def test_uniqueness_bounds(n, frac, delta, s, X, Y):
    params = params_for(n, 3, frac * 0.999, delta, s)
    X, Y = np.resize(X, n * 3), np.resize(Y, n * 3)
    assert uniqueness_lower_check(X, Y, params)
    assert uniqueness_upper_check(X, Y, params)


def test_uniqueness_lower_worked_example():
    params = GrowthParams(2, 1, 3.0, 0.0, 1.0)
    check = uniqueness_lower_check(np.array([1.0, 0.0]), np.zeros(2), params)
    assert check.holds
    assert check.slack == pytest.approx((math.sqrt(2) - 1) / 2, rel=1e-12)


def test_uniqueness_upper_at_the_origin():
    params = GrowthParams(2, 1, 2.5, 0.0, 1.0)
    check = uniqueness_upper_check(np.array([1.0, 0.0]), np.zeros(2), params)
    assert check.holds
    assert check.slack > 0


# ---------------------------------------------------------------------------
# Growth bounds
# ---------------------------------------------------------------------------

@given(sampled_from([2, 3]), unit, unit, unit, arrays(np.float64, 6, elements=entries))
def test_sandwich(n, frac, delta, s, x):
    result = sandwich_check(x, params_for(n, 2, frac * 0.999, delta, s))
    assert result.holds


@given(sampled_from([2, 3]), unit, unit, arrays(np.float64, 6, elements=entries))
def test_convexity_bound(n, frac, delta, x):
    assert convexity_bound_check(x, params_for(n, 2, frac * 0.999, delta, 1.0))


def test_convexity_bound_needs_unit_s():
    with pytest.raises(ParamsError):
        convexity_bound_check(np.ones(2), GrowthParams(2, 1, 2.5, 0.1, 0.5))


@given(sampled_from([2, 3]), floats(0.0, 0.5),
       arrays(np.float64, 4, elements=entries), arrays(np.float64, 4, elements=entries))
def test_power_triangle(n, frac, x, y):
    assert power_triangle_check(x, y, n + frac, n)


def test_power_triangle_rejects_p_beyond_P0():
    with pytest.raises(ParamsError):
        power_triangle_check(np.ones(2), np.zeros(2), 2.9, 2)


@given(sampled_from([2, 3]), unit, unit, unit, floats(0.1, 10.0),
       arrays(np.float64, 6, elements=entries))
def test_rescaling_identity(n, frac, delta, s, r, G):
    assert rescaling_identity_check(G, r, params_for(n, 2, frac, delta, s))


def test_rescaling_identity_rejects_nonpositive_scale():
    with pytest.raises(ParamsError):
        rescaling_identity_check(np.ones(4), 0.0, GrowthParams(2, 2, 2.5))


@given(sampled_from([2, 3]), unit, unit, unit, arrays(np.float64, (3, 2), elements=entries))
def test_p_monotonicity(n, a, b, delta, G):
    G = G[:n]
    p1 = n + 0.999 * min(a, b)
    p2 = n + 0.999 * max(a, b) + 1e-6
    assert p_monotonicity_check(G, p1, p2, delta)


def test_p_monotonicity_needs_ordered_exponents():
    with pytest.raises(ParamsError):
        p_monotonicity_check(np.ones((2, 2)), 2.5, 2.4, 0.1)


# ---------------------------------------------------------------------------
# Cordes condition
# ---------------------------------------------------------------------------

def _epsilon_oracle(p, m):
    t = np.linspace(0.0, 1.0, 10_001)
    q = p - 2.0
    ratio = (m + q * t) ** 2 / ((m - 1) + (1 + q * t) ** 2)
    return float(np.clip(ratio.min() - (m - 1), 0.0, 1.0))


def test_cordes_epsilon_matches_brute_force():
    for p in np.linspace(1.0, 5.0, 33):
        for m in range(2, 13):
            assert cordes_epsilon_max(float(p), m) == pytest.approx(_epsilon_oracle(p, m), abs=1e-9)
    for p in (1.0, 2.5, 5.0):
        assert cordes_epsilon_max(p, 1) == 1.0


@pytest.mark.parametrize("m", range(1, 13))
def test_cordes_epsilon_at_p_two(m):
    assert cordes_epsilon_max(2.0, m) == 1.0


@pytest.mark.parametrize("m", range(3, 13))
def test_cordes_epsilon_closes_at_the_threshold(m):
    threshold = 3 + 2 / (m - 2)
    assert 0 < cordes_epsilon_max(threshold - 1e-6, m) < 1e-4
    assert cordes_epsilon_max(threshold + 1e-6, m) == 0.0


def test_cordes_cli_cells():
    assert cordes_epsilon_max(2.0, 6) == 1.0
    assert cordes_epsilon_max(3.5, 6) == 0.0


@pytest.mark.parametrize("n", range(2, 9))
def test_cordes_admissible_at_p_equal_n(n):
    assert cordes_admissible(n, 1, n) == (n in (2, 3))


@settings(deadline=None)
@given(integers(2, 3), integers(1, 3), floats(1.0, 5.0), floats(1e-3, 1.0),
       arrays(np.float64, 9, elements=entries))
def test_cordes_condition_holds_at_epsilon_max(n, N, p, delta, raw):
    eps = cordes_epsilon_max(p, n * N)
    if eps == 0:
        return
    G = np.resize(raw, (n, N))
    lhs, rhs = cordes_lhs_rhs(cordes_coefficients(G, p, delta), eps)
    assert lhs <= rhs * (1 + 1e-9)


def test_cordes_report_at_p_two():
    rng = np.random.default_rng(5)
    report = cordes_report(rng.standard_normal((20, 2, 3)), 2.0, 0.1)
    assert report.epsilon_max == 1.0
    assert report.admissible
    assert report.lhs == pytest.approx(report.rhs)


def test_cordes_coefficients_undefined_at_zero():
    with pytest.raises(ParamsError):
        cordes_coefficients(np.zeros((2, 2)), 2.5, 0.0)


def test_contraction_factor():
    assert contraction_factor(1.0) == 0.0
    assert contraction_factor(0.75) == pytest.approx(0.5)
    with pytest.raises(ParamsError):
        contraction_factor(0.0)


# ---------------------------------------------------------------------------
# Seeded sweep
# ---------------------------------------------------------------------------

def test_suite_small_sample_is_clean_and_deterministic():
    first = run_inequality_suite(600, 7)
    second = run_inequality_suite(600, 7)
    assert [r.to_dict() for r in first] == [r.to_dict() for r in second]
    assert all(r.passed for r in first), [r.name for r in first if not r.passed]
    names = {r.name for r in first}
    assert {"monotonicity_pairing", "uniqueness_upper", "sandwich_lower",
            "rescaling_identity", "v_map_identity"} <= names


def test_suite_single_sample():
    results = run_inequality_suite(1, 0)
    assert sum(r.samples for r in results if r.name == "convexity") == 1


def test_suite_rejects_empty_run():
    with pytest.raises(ParamsError):
        run_inequality_suite(0, 0)


@pytest.mark.slow
def test_suite_default_sample_count():
    results = run_inequality_suite(100_000, 20240229)
    assert all(r.passed for r in results)


class _ZeroDraws:
    def uniform(self, low, high, size):
        return np.full(size, float(low))


def test_sampled_exponents_stay_above_n():
    p = sample_exponents(_ZeroDraws(), 2, 4)
    assert (p > 2).all()
    assert np.allclose(p, 3 - 1e-9, rtol=0, atol=1e-12)
    drawn = sample_exponents(np.random.default_rng(3), 3, 1000)
    assert (drawn > 3).all() and (drawn < 4).all()
