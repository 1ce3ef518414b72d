import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sobolev_gd.spectral_core import (
    Basis,
    DivergenceError,
    FunctionCoeffs,
    Spectrum,
    SpectrumSpec,
    apply_operator,
    diverges,
    eigenvalues,
    eval_function,
    make_target,
    power_norm,
    power_norm_partial_sums,
    target_tail_mass,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# -- SpectrumSpec ------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha": 1.0},
        {"alpha": 2.0, "p": 0.5},
        {"alpha": 2.0, "q": 0.1},
        {"alpha": 2.0, "p": -2.5},
        {"alpha": 2.0, "beta": 0.0},
        {"alpha": 2.0, "mu": 1.5},
        {"alpha": 2.0, "c_p": 0.0},
        {"alpha": 2.0, "n_trunc": 0},
        {"alpha": 2.0, "dimension": 1.5},
    ],
)
def test_spec_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SpectrumSpec(**kwargs)


def test_spec_mu_defaults_to_inverse_alpha_and_warns_on_divergent_embedding():
    with pytest.warns(RuntimeWarning, match="embedding"):
        spec = SpectrumSpec(alpha=4.0)
    assert spec.mu == 0.25


def test_spec_json_round_trip(tmp_path):
    spec = SpectrumSpec(alpha=3.0, p=-0.5, q=-0.25, beta=0.8, mu=0.5, n_trunc=64, dimension=2)
    path = tmp_path / "spec.json"
    spec.to_json(path)
    assert SpectrumSpec.from_json(path) == spec
    assert set(spec.to_dict()) == {
        "alpha", "p", "q", "beta", "mu", "c_lambda", "c_p", "c_q", "n_trunc", "dimension",
    }


def test_spec_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        SpectrumSpec.from_dict({"alpha": 2.0, "gamma": 1.0})


def test_spec_eigenvalues_are_ordered():
    lam = SpectrumSpec(alpha=2.5, mu=0.5).spectrum().lam
    assert np.all(np.diff(lam) < 0) and lam[-1] > 0


# -- eigenvalues -------------------------------------------------------------------


def test_eigenvalues_first_mode_is_one():
    assert eigenvalues(SpectrumSpec(alpha=2.0, mu=0.6), 1) == (1.0, 1.0, 1.0)


def test_eigenvalues_second_mode():
    assert eigenvalues(SpectrumSpec(alpha=2.0, mu=0.6), 2)[0] == 0.25


def test_eigenvalues_fractional_alpha_against_separate_power():
    spec = SpectrumSpec(alpha=1.5, p=-1.0, mu=0.9)
    lam, p, q = eigenvalues(spec, 4)
    assert lam == pytest.approx(math.exp(-1.5 * math.log(4)), rel=1e-15)
    assert lam == pytest.approx(0.125, rel=1e-15)
    assert p == pytest.approx(4.0, rel=1e-15)
    assert q == 1.0


@pytest.mark.parametrize("i", [0, 513, 2.5])
def test_eigenvalues_index_out_of_range(i):
    with pytest.raises(IndexError):
        eigenvalues(SpectrumSpec(alpha=2.0, mu=0.6), i)


# -- power_norm --------------------------------------------------------------------


def test_power_norm_unit_mode():
    assert power_norm([1.0], 1.0, SpectrumSpec(alpha=2.0, mu=0.6)) == 1.0


def test_power_norm_l2_case():
    assert power_norm([0.0, 2.0], 0.0, SpectrumSpec(alpha=2.0, mu=0.6)) == 2.0


def test_power_norm_harmonic_example():
    # kernel decay 1/i is below the alpha > 1 model range, so pass explicit eigenvalues
    i = np.arange(1.0, 4.0)
    sp = Spectrum(1.0 / i, np.ones(3), np.ones(3))
    assert power_norm(1.0 / i, 1.0, sp) == pytest.approx(math.sqrt(11.0 / 6.0), rel=1e-15)


def test_power_norm_overflow_raises():
    spec = SpectrumSpec(alpha=40.0, mu=0.5, n_trunc=1000)
    u = np.ones(1000)
    with pytest.raises(DivergenceError):
        power_norm(u, 10.0, spec)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 16, elements=finite), st.floats(0, 1), st.floats(0, 1))
def test_power_norm_ordering(a, g1, g2):
    g1, g2 = sorted((g1, g2))
    spec = SpectrumSpec(alpha=2.0, mu=0.6, c_lambda=1.7, n_trunc=16)
    factor = max(1.0, spec.c_lambda ** ((g2 - g1) / 2))
    assert power_norm(a, g1, spec) <= factor * power_norm(a, g2, spec) * (1 + 1e-12) + 1e-300


@settings(max_examples=40, deadline=None)
@given(arrays(float, 16, elements=finite), st.floats(0, 1))
def test_smoothing_by_kernel_power_is_an_isometry(a, g):
    spec = SpectrumSpec(alpha=2.0, mu=0.6, n_trunc=16)
    smoothed = apply_operator(a, "L_power", spec, s=g / 2)
    assert power_norm(smoothed, g, spec) == pytest.approx(power_norm(a, 0.0, spec), rel=1e-12, abs=1e-300)


# -- apply_operator ----------------------------------------------------------------


def test_apply_a1_identity_when_p_zero():
    spec = SpectrumSpec(alpha=2.0, mu=0.6, n_trunc=5)
    u = np.arange(5.0)
    np.testing.assert_array_equal(apply_operator(u, "A1", spec), u)


def test_apply_a1_product():
    spec = SpectrumSpec(alpha=2.0, p=-1.0, mu=0.6)
    np.testing.assert_allclose(apply_operator([1.0, 1.0], "A1", spec), [1.0, 2.0], rtol=1e-15)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 12, elements=finite), st.floats(-1.5, 0), st.floats(-1.5, 0))
def test_operator_factorization(a, p, q):
    spec = SpectrumSpec(alpha=2.0, p=p, q=q, mu=0.6, n_trunc=12)
    lhs = np.asarray(apply_operator(a, "A1", spec))
    rhs = np.asarray(apply_operator(apply_operator(a, "A2", spec), "A", spec))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)


def test_apply_operator_errors():
    sp = Spectrum(np.ones(2), np.ones(2), np.array([1.0, 0.0]))
    with pytest.raises(ZeroDivisionError):
        apply_operator([1.0, 1.0], "A", sp)
    with pytest.raises(ValueError):
        apply_operator([1.0], "L_power", SpectrumSpec(alpha=2.0, mu=0.6))
    with pytest.raises(ValueError):
        apply_operator([1.0], "B", SpectrumSpec(alpha=2.0, mu=0.6))


# -- make_target -------------------------------------------------------------------


def test_make_target_beta_zero_is_harmonic():
    # beta must be positive in a spec; a vanishing kernel power is reached with tiny beta
    spec = SpectrumSpec(alpha=2.0, beta=1e-300, mu=0.6, n_trunc=50)
    a = np.asarray(make_target(spec, delta=0.5))
    np.testing.assert_allclose(a, 1.0 / np.arange(1, 51), rtol=1e-12)


def test_make_target_beta_norm_is_zeta_partial_sum():
    spec = SpectrumSpec(alpha=2.0, beta=1.0, mu=0.6, n_trunc=1000)
    delta = 0.05
    a = make_target(spec, delta=delta)
    direct = math.fsum(k ** (-(1 + 2 * delta)) for k in range(1, 1001))
    assert power_norm(a, 1.0, spec) ** 2 == pytest.approx(direct, rel=1e-12)


def test_make_target_norm_above_source_order_diverges():
    totals = []
    for k in range(8, 15):
        spec = SpectrumSpec(alpha=2.0, beta=1.0, mu=0.6, n_trunc=2**k)
        a = make_target(spec, delta=0.05)
        totals.append(power_norm_partial_sums(a, 1.5, spec)[-1])
        assert diverges(a, 1.5, spec)
        assert not diverges(a, 0.5, spec)
    assert np.all(np.diff(totals) > 0)
    # partial sums grow like N^(1 - 0.1): doubling N multiplies them by about 2^0.9
    assert totals[-1] / totals[-2] > 1.8


def test_target_tail_mass_matches_direct_sum():
    spec = SpectrumSpec(alpha=2.0, beta=1.0, mu=0.6, n_trunc=256)
    long = SpectrumSpec(alpha=2.0, beta=1.0, mu=0.6, n_trunc=2**18)
    a = np.asarray(make_target(long, delta=0.3))
    w = long.spectrum().lam ** (-0.5)
    direct = float(np.sum(w[256:] * a[256:] ** 2))
    assert target_tail_mass(spec, 0.3, gamma=0.5) == pytest.approx(direct, rel=2e-2)
    assert target_tail_mass(spec, 0.05, gamma=1.5) == math.inf


def test_make_target_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        make_target(SpectrumSpec(alpha=2.0, mu=0.6), delta=0.0)


# -- Basis and evaluation -------------------------------------------------------------


def test_basis_ordering_one_dimension():
    b = Basis(5, 1)
    assert b.mode_index == {1: (0,), 2: (1,), 3: (1,), 4: (2,), 5: (2,)}
    np.testing.assert_array_equal(b.is_sine, [False, False, True, False, True])


def test_basis_ordering_two_dimensions_nondecreasing_norm():
    b = Basis(41, 2)
    norms = np.sum(b.frequencies**2, axis=1)
    assert np.all(np.diff(norms) >= 0)
    assert tuple(b.frequencies[1]) == (0, 1) and tuple(b.frequencies[3]) == (1, 0)


@pytest.mark.parametrize("d,n", [(1, 33), (2, 41), (3, 57)])
def test_basis_orthonormal_under_quadrature(d, n):
    b = Basis(n, d)
    top = int(np.max(np.abs(b.frequencies)))
    pts = 2 * top + 2 if d > 1 else 4096
    axes = np.meshgrid(*[np.arange(pts) / pts] * d, indexing="ij")
    xs = np.stack([a.ravel() for a in axes], axis=1)
    E = b.design_matrix(xs)
    np.testing.assert_allclose(E.T @ E / xs.shape[0], np.eye(n), atol=1e-10)


def test_eval_function_constant_mode():
    b = Basis(8, 1)
    assert eval_function([3.5], 0.123, b) == pytest.approx(3.5)


def test_eval_function_cosine_at_zero():
    assert eval_function([0.0, 1.0], 0.0, Basis(8, 1)) == pytest.approx(math.sqrt(2.0), rel=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 9, elements=st.floats(-3, 3)))
def test_parseval(a):
    b = Basis(9, 1)
    xs = np.arange(1024) / 1024
    vals = eval_function(a, xs, b)
    spec = SpectrumSpec(alpha=2.0, mu=0.6, n_trunc=9)
    assert np.mean(vals**2) == pytest.approx(power_norm(a, 0.0, spec) ** 2, rel=1e-8, abs=1e-8)


def test_eval_function_too_many_coefficients():
    with pytest.raises(ValueError):
        eval_function(np.ones(4), 0.0, Basis(3, 1))


def test_function_coeffs_arithmetic():
    u = FunctionCoeffs([1.0, 2.0])
    v = u + [1.0, 1.0, 1.0]
    np.testing.assert_array_equal(np.asarray(v), [2.0, 3.0, 1.0])
    np.testing.assert_array_equal(np.asarray(2 * u), [2.0, 4.0])
    with pytest.raises(ValueError):
        FunctionCoeffs([np.nan])
