import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sobolev_gd.spectral_core import DivergenceError, Spectrum, SpectrumSpec
from sobolev_gd.theory_bounds import (
    QUANTITIES,
    Regime,
    TightTarget,
    bias_exact,
    bound_check,
    default_grid,
    dof_trace,
    effective_dimension,
    energy_bias_exact,
    envelope_exponent,
    horizon_exponent,
    n_infty,
    rate_exponent,
    regime_classify,
    regime_thresholds,
    stopping_schedule,
)


def spec(**kw):
    base = {"alpha": 2.0, "beta": 1.0, "mu": 0.5}
    base.update(kw)
    return SpectrumSpec(**base)


def single_mode():
    one = np.ones(1)
    return Spectrum(one, one, one)


# -- regimes -----------------------------------------------------------------------


def test_thresholds_example():
    assert regime_thresholds(spec()) == (0.5, 1.0)


@pytest.mark.parametrize(
    "beta,regime",
    [(0.4, Regime.SUBOPTIMAL), (0.5, Regime.CONST_LR), (1.0, Regime.CONST_LR),
     (1.5, Regime.SMALL_LR)],
)
def test_regime_examples(beta, regime):
    assert regime_classify(spec(beta=beta)) is regime


def test_thresholds_with_equal_orders_reduce_to_kernel_only():
    a, mu = 3.0, 0.4
    hi, lo = regime_thresholds(SpectrumSpec(alpha=a, p=-0.5, q=-0.5, mu=mu))
    assert hi == pytest.approx((a - 0.5 - 1) / a) and lo == pytest.approx((mu * a - 0.5 + 1) / a)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.5, 5), st.floats(0.05, 2), st.floats(-0.6, 0), st.floats(0.2, 0.95))
def test_regimes_partition_beta_axis(alpha, beta, dq, mu):
    s = SpectrumSpec(alpha=alpha, beta=beta, q=dq, p=2 * dq, mu=mu)
    hi, lo = regime_thresholds(s)
    r = regime_classify(s)
    if beta > max(hi, lo):
        assert r is Regime.SMALL_LR
    elif beta < min(hi, lo):
        assert r is Regime.SUBOPTIMAL
    else:
        assert r is Regime.CONST_LR


@settings(max_examples=60, deadline=None)
@given(st.floats(1.5, 5), st.floats(0.05, 2), st.floats(-0.6, 0), st.floats(0.2, 0.95))
def test_thresholds_invariant_when_p_moves_twice_q(alpha, beta, dq, mu):
    # p - 2q is all the thresholds see
    a = SpectrumSpec(alpha=alpha, beta=beta, mu=mu)
    b = SpectrumSpec(alpha=alpha, beta=beta, mu=mu, p=2 * dq, q=dq)
    np.testing.assert_allclose(regime_thresholds(a), regime_thresholds(b), rtol=1e-12, atol=1e-12)


# -- stopping schedule ---------------------------------------------------------------


def test_schedule_classical_example():
    plan = stopping_schedule(spec(), 4096)
    assert plan.regime is Regime.CONST_LR
    assert plan.t_star == 256 and plan.gamma_scale == 1.0
    assert plan.exponents[0.0] == pytest.approx(2 / 3)


def test_schedule_small_step_regime_runs_n_iterations():
    plan = stopping_schedule(spec(beta=1.9), 4096)
    assert plan.regime is Regime.SMALL_LR and plan.t_star == 4096
    e = horizon_exponent(spec(beta=1.9))
    assert plan.gamma_scale == pytest.approx(4096.0 ** (e - 1))
    assert plan.effective_horizon == pytest.approx(4096.0**e)


def test_schedule_suboptimal_uses_embedding_exponent():
    s = spec(beta=0.4)
    # (alpha + p) / (mu alpha + p) = 2 / 1
    assert horizon_exponent(s) == pytest.approx(2.0)
    assert stopping_schedule(s, 1000).t_star == 10**6


def test_schedule_shortens_as_operator_order_grows():
    ts = [stopping_schedule(spec(p=p, q=p / 2, mu=0.9), 4096).t_star for p in (0.0, -0.5, -1.0)]
    assert ts == sorted(ts, reverse=True) and ts[0] > ts[-1]


def test_schedule_rejects_tiny_n():
    with pytest.raises(ValueError):
        stopping_schedule(spec(), 1)


# -- rate exponents --------------------------------------------------------------------


def test_rate_exponent_examples():
    assert rate_exponent(spec(), 0.0) == pytest.approx(2 / 3)
    assert rate_exponent(spec(), 0.5) == pytest.approx(1 / 3)
    assert rate_exponent(spec(p=-1.0, q=-0.5), 0.0) == pytest.approx(1.0)
    assert rate_exponent(spec(), 1.0) == 0.0


def test_rate_exponent_errors():
    with pytest.raises(ValueError):
        rate_exponent(spec(), 1.1)
    with pytest.raises(ValueError):
        rate_exponent(spec(), 0.0, bound="middle")


@settings(max_examples=80, deadline=None)
@given(st.floats(1.2, 5), st.floats(0.2, 0.95), st.floats(0, 1), st.floats(0, 1))
def test_upper_equals_lower_when_source_dominates_embedding(alpha, mu, extra, frac):
    beta = mu + extra
    s = SpectrumSpec(alpha=alpha, beta=beta, mu=mu)
    if regime_classify(s) is Regime.SUBOPTIMAL:
        return
    g = frac * beta
    assert rate_exponent(s, g, "upper") == pytest.approx(rate_exponent(s, g, "lower"), rel=1e-12, abs=1e-15)


# -- spectral sums ---------------------------------------------------------------------


def test_single_mode_quantities():
    sp = single_mode()
    assert effective_dimension(sp, 1.0) == 0.5
    assert dof_trace(sp, 1.0) == 0.5
    assert n_infty(sp, 1.0) == 0.5
    assert bias_exact(sp, [1.0], 1.0) == 0.5
    assert energy_bias_exact(sp, [1.0], 1.0) == 0.5


def test_effective_dimension_closed_form():
    # sum_i 1 / (1 + i^2) = (pi coth pi - 1) / 2
    closed = (math.pi / math.tanh(math.pi) - 1) / 2
    assert effective_dimension(spec(), 1.0) == pytest.approx(closed, rel=1e-8)
    assert effective_dimension(spec(), 1.0) == pytest.approx(1.0766740480876418, rel=1e-12)


def test_effective_dimension_truncated_sum():
    direct = math.fsum(1 / (1 + i * i) for i in range(1, 11))
    value = effective_dimension(spec(n_trunc=10), 1.0, tail=False)
    assert value == pytest.approx(direct, rel=1e-14)


def test_dof_equals_effective_dimension_without_operator():
    s = spec()
    for lam in (1e-4, 1e-2, 1.0):
        assert dof_trace(s, lam) == pytest.approx(effective_dimension(s, lam), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    arrays(float, 64, elements=st.floats(1, 50)),
    arrays(float, 64, elements=st.floats(0.01, 1)),
    st.floats(1e-5, 1),
)
def test_dof_dominates_effective_dimension(p_sym, q_sym, lam):
    i = np.arange(1.0, 65.0)
    sp = Spectrum(i**-2.5, p_sym, q_sym)
    assert dof_trace(sp, lam) >= effective_dimension(sp, lam) * (1 - 1e-12)


def test_n_infty_second_form_equals_first_without_q():
    s = spec(p=-0.5)
    assert n_infty(s, 1e-3, which=2) == pytest.approx(n_infty(s, 1e-3, which=1), rel=1e-12)


def test_n_infty_diverges_when_embedding_fails():
    s = SpectrumSpec(alpha=2.0, p=-1.5, mu=0.6)
    with pytest.raises(DivergenceError):
        n_infty(s, 1e-3, which=3)


def test_n_infty_rejects_bad_selector():
    with pytest.raises(ValueError):
        n_infty(spec(), 1.0, which=4)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 0.9), st.floats(0.01, 0.5))
def test_bias_nonincreasing_as_lambda_decreases(gamma, delta):
    s = spec()
    target = TightTarget(delta=delta)
    values = [bias_exact(s, target, lam, gamma) for lam in np.geomspace(1.0, 1e-6, 9)]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(values, values[1:]))


def test_bias_array_target_and_zero_lambda():
    s = spec(n_trunc=4)
    assert bias_exact(s, [1.0, 0, 0, 0], 0.0) == 0.0
    assert bias_exact(s, [1.0], 1.0) == 0.5
    with pytest.raises(ValueError):
        bias_exact(s, [1.0], -1.0)


# -- envelope checks --------------------------------------------------------------------


@pytest.mark.parametrize("quantity", QUANTITIES)
def test_bound_check_passes_on_derived_envelopes(quantity):
    report = bound_check(quantity, spec(alpha=3.0, p=-0.5, q=-0.25, mu=0.9))
    assert report.passed, report.reason


@pytest.mark.parametrize("quantity", ["bias", "effective_dimension", "n_infty_1"])
def test_bound_check_negative_control_fails(quantity):
    assert not bound_check(quantity, spec(), exponent_shift=0.2).passed


def test_bias_check_detects_loose_envelope():
    report = bound_check("bias", spec(), exponent_shift=-0.4)
    assert not report.passed and "sharp" in report.reason


def test_envelope_exponent_examples():
    s = spec()
    assert envelope_exponent("bias", s) == pytest.approx(0.5)
    assert envelope_exponent("effective_dimension", s) == pytest.approx(-0.5)
    assert envelope_exponent("n_infty_1", s) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        envelope_exponent("bias", s, envelope="other")
    with pytest.raises(ValueError):
        envelope_exponent("trace", s)


@pytest.mark.parametrize("grid", [np.geomspace(1e-6, 1, 10), np.geomspace(1e-3, 1, 25),
                                  np.linspace(-1, 1, 25)])
def test_bound_check_grid_errors(grid):
    with pytest.raises(ValueError):
        bound_check("dof", spec(), grid=grid)


def test_bound_check_outputs(tmp_path):
    report = bound_check("dof", spec())
    path = tmp_path / "dof.csv"
    report.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "lambda,value,envelope,ratio" and len(lines) == 26
    verdict = json.loads(report.verdict_json())
    assert verdict["passed"] is True and verdict["quantity"] == "dof"
    assert len(default_grid()) == 25
