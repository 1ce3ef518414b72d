"""Stopping schedules, rate exponents and exact spectral sums with envelope checks.

Every spectral sum is evaluated mode by mode up to a truncation and, for
power-law specs, completed by an integral over the tail ``(N + 1/2, inf)``
of the same summand.  Envelope checks compare a quantity against
``lam**e`` on a logarithmic grid of regularization levels.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate

from .spectral_core import DivergenceError, Spectrum, SpectrumSpec, make_target

__all__ = [
    "Regime",
    "StoppingPlan",
    "BoundCheckReport",
    "QUANTITIES",
    "regime_thresholds",
    "regime_classify",
    "horizon_exponent",
    "stopping_schedule",
    "rate_exponent",
    "bias_exact",
    "energy_bias_exact",
    "effective_dimension",
    "dof_trace",
    "n_infty",
    "envelope_exponent",
    "default_grid",
    "bound_check",
]

TREND_TOL = -0.02
SHARPNESS_MAX = 0.3
BOUND_TRUNCATION = 2**20


class Regime(str, Enum):
    SMALL_LR = "SmallLR_nIter"
    CONST_LR = "ConstLR"
    SUBOPTIMAL = "SubOptimal"

    def __str__(self):
        return self.value


# -- regimes and schedules ---------------------------------------------------------


def regime_thresholds(spec):
    """Return ``(upper, lower)`` source thresholds on ``beta``.

    ``upper = (alpha + 2q - p - 1) / alpha`` separates the small-step regime
    and ``lower = (mu alpha + 2q - p + 1) / alpha`` the saturated one.
    """
    a, p, q, mu = spec.alpha, spec.p, spec.q, spec.mu
    return (a + 2 * q - p - 1) / a, (mu * a + 2 * q - p + 1) / a


def regime_classify(spec):
    """Classify ``spec`` into one of the three early-stopping regimes.

    ``beta`` inside the closed band between the two thresholds is the
    constant-step regime; above it the step shrinks with ``n``; below it the
    rate is saturated by the embedding order.  The band is taken as
    ``[min, max]`` of the thresholds so that the labels stay a partition when
    the thresholds cross.
    """
    hi, lo = regime_thresholds(spec)
    top, bottom = max(hi, lo), min(hi, lo)
    if spec.beta > top:
        return Regime.SMALL_LR
    if spec.beta < bottom:
        return Regime.SUBOPTIMAL
    return Regime.CONST_LR


def _core_exponent(spec):
    denom = spec.beta * spec.alpha + 2 * (spec.p - spec.q) + 1
    if not denom > 0:
        raise ValueError(f"beta*alpha + 2(p-q) + 1 must be positive, got {denom}")
    return (spec.alpha + spec.p) / denom


def horizon_exponent(spec):
    """Exponent ``e`` with effective horizon ``gamma * t ~ n**e`` for the regime of ``spec``."""
    if regime_classify(spec) is Regime.SUBOPTIMAL:
        return (spec.alpha + spec.p) / (spec.mu * spec.alpha + spec.p)
    return _core_exponent(spec)


@dataclass(frozen=True)
class StoppingPlan:
    """Iteration count and step rule for one sample size.

    ``gamma_scale`` multiplies the base step ``step_fraction / rho``; the
    effective horizon is ``gamma_scale * t_star`` in units of that base step.
    """

    regime: Regime
    n: int
    t_star: int
    t_star_real: float
    gamma_scale: float
    gamma_rule: str
    horizon_exponent: float
    exponents: dict = field(default_factory=dict)

    @property
    def effective_horizon(self):
        return self.gamma_scale * self.t_star


def stopping_schedule(spec, n, gammas_eval=(0.0,)):
    """Regime-dependent stopping time and step rule for sample size ``n``."""
    if n < 2:
        raise ValueError("stopping_schedule needs n >= 2")
    regime = regime_classify(spec)
    e = horizon_exponent(spec)
    if regime is Regime.SMALL_LR:
        t_real = float(n)
        scale = float(n) ** (e - 1.0)
        rule = f"base step * n^({e - 1.0:.6g})"
    else:
        t_real = float(n) ** e
        scale = 1.0
        rule = "constant base step"
    # guard ceil against representation error at exact powers
    t_star = max(1, math.ceil(t_real * (1 - 1e-12)))
    exponents = {
        float(g): rate_exponent(spec, g, "upper") for g in gammas_eval if g <= spec.beta
    }
    return StoppingPlan(regime, int(n), t_star, t_real, scale, rule, e, exponents)


def rate_exponent(spec, gamma_eval, bound="upper"):
    """Positive ``r`` such that the squared ``gamma_eval``-norm error scales as ``n**(-r)``.

    Both bounds use the denominator term ``2 (p - q)``.
    """
    if gamma_eval > spec.beta:
        raise ValueError(f"gamma_eval={gamma_eval} exceeds beta={spec.beta}: no decay")
    a, p, q = spec.alpha, spec.p, spec.q
    if bound == "upper":
        num = (spec.beta - gamma_eval) * a
        if regime_classify(spec) is Regime.SUBOPTIMAL:
            return num / (spec.mu * a + p)
        return num / (spec.beta * a + 2 * (p - q) + 1)
    if bound == "lower":
        b = max(spec.beta, spec.mu)
        return (b - gamma_eval) * a / (b * a + 2 * (p - q) + 1)
    raise ValueError(f"bound must be 'upper' or 'lower', got {bound!r}")


# -- exact spectral sums ------------------------------------------------------------


def _is_power_law(spec):
    return isinstance(spec, SpectrumSpec)


def _spectrum_fn(spec):
    """Continuous-index versions of ``lambda_i, p_i, q_i`` for the tail integral."""
    def fn(x):
        return (
            spec.c_lambda * x ** (-spec.alpha),
            spec.c_p * x ** (-spec.p),
            spec.c_q * x ** (-spec.q),
        )
    return fn


def _tail_integral(summand, start, span=1e6):
    """``int_start^inf summand(x) dx``, or ``inf`` if the summand decays too slowly.

    Quadrature in ``log x`` up to ``start * span``; beyond that the summand is
    a pure power law and the remainder is closed analytically.
    """
    def f(x):
        return float(summand(np.array([x]))[0])

    end = start * span
    f_end, f_far = f(end), f(4.0 * end)
    if f(start) == 0.0:
        return 0.0
    slope = math.log(f_far / f_end) / math.log(4.0) if f_far > 0 else -math.inf
    if slope >= -1.0:
        return math.inf
    val, _ = integrate.quad(
        lambda s: f(start * math.exp(s)) * start * math.exp(s),
        0.0,
        math.log(span),
        limit=200,
        epsabs=0.0,
        epsrel=1e-10,
    )
    return val + f_end * end / (-slope - 1.0)


def _spectral_sum(spec, weight, n_modes=None, tail=True):
    """``sum_i weight(lam_i, p_i, q_i, i)`` with optional integral tail."""
    if isinstance(spec, Spectrum):
        sp = spec if n_modes is None else spec.head(n_modes)
        idx = np.arange(1, sp.n_modes + 1, dtype=float)
        return float(np.sum(weight(sp.lam, sp.p, sp.q, idx)))
    n = spec.n_trunc if n_modes is None else int(n_modes)
    sp, idx = _cached_spectrum(spec, n)
    total = float(np.sum(weight(sp.lam, sp.p, sp.q, idx)))
    if tail:
        fn = _spectrum_fn(spec)
        total += _tail_integral(lambda x: weight(*fn(x), x), n + 0.5)
    return total


@lru_cache(maxsize=8)
def _cached_spectrum(spec, n):
    return spec.spectrum(n), np.arange(1, n + 1, dtype=float)


def _sup_sq(idx):
    return np.where(idx == 1, 1.0, 2.0)


def _coeff_fn(target, spec):
    """Per-mode target coefficients as a function of the mode index."""
    if isinstance(target, TightTarget):
        return lambda lam, idx: target.scale * lam ** (spec.beta / 2.0) * idx ** (-(0.5 + target.delta))
    arr = np.asarray(target, dtype=float)

    def fn(lam, idx):
        out = np.zeros_like(idx)
        k = np.minimum(idx.astype(int), arr.shape[0] + 1) - 1
        inside = idx <= arr.shape[0]
        out[inside] = arr[k[inside]]
        return out

    return fn


@dataclass(frozen=True)
class TightTarget:
    """Power-law target ``scale * lam_i**(beta/2) * i**-(1/2 + delta)`` known in closed form.

    Passing one instead of a coefficient array lets the spectral sums include
    the exact tail beyond any truncation.
    """

    delta: float = 0.05
    scale: float = 1.0

    def coeffs(self, spec, n_modes=None):
        return make_target(spec, delta=self.delta, scale=self.scale, n_modes=n_modes)


def _target_sum(spec, target, weight, n_modes=None):
    coeff = _coeff_fn(target, spec)
    tail = isinstance(target, TightTarget) and _is_power_law(spec)
    if n_modes is None and not tail:
        n_modes = len(np.asarray(target))

    def w(lam, p, q, idx):
        return weight(lam, p, q, idx) * coeff(lam, idx) ** 2

    return _spectral_sum(spec, w, n_modes=n_modes, tail=tail)


def _finite_or_raise(value, what):
    if not math.isfinite(value):
        raise DivergenceError(f"{what} diverges")
    return value


def bias_exact(spec, target, lam, gamma_eval=0.0, n_modes=None):
    """Ridge-filter bias ``( sum_i (lam / (lam_i p_i + lam))^2 a_i^2 lam_i^-gamma )^(1/2)``.

    ``target`` is a coefficient array or a :class:`TightTarget`.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if lam == 0:
        return 0.0

    def w(lm, p, q, idx):
        return (lam / (lm * p + lam)) ** 2 * lm ** (-gamma_eval)

    return math.sqrt(_finite_or_raise(_target_sum(spec, target, w, n_modes), "bias"))


def energy_bias_exact(spec, target, lam, n_modes=None):
    """Bias of ``A1 g_lam - A2 f`` in L2: coefficients ``p_i lam / (lam_i p_i + lam) a_i``."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if lam == 0:
        return 0.0

    def w(lm, p, q, idx):
        return (p * lam / (lm * p + lam)) ** 2

    return math.sqrt(_finite_or_raise(_target_sum(spec, target, w, n_modes), "energy bias"))


def _check_lam(lam):
    if not lam > 0:
        raise ValueError("lam must be positive")


def effective_dimension(spec, lam, n_modes=None, tail=True):
    """``N(lam) = sum_i lam_i q_i^2 / (lam_i p_i + lam)``; ``inf`` if the series diverges."""
    _check_lam(lam)
    return _spectral_sum(spec, lambda lm, p, q, i: lm * q**2 / (lm * p + lam), n_modes, tail)


def dof_trace(spec, lam, n_modes=None, tail=True):
    """``sum_i lam_i / (lam_i p_i + lam)``."""
    _check_lam(lam)
    return _spectral_sum(spec, lambda lm, p, q, i: lm / (lm * p + lam), n_modes, tail)


def n_infty(spec, lam, which=1, n_modes=None, tail=True):
    """Uniform bound ``sum_i s_i sup|e_i|^2 / (lam_i p_i + lam)`` with ``s_i`` chosen by ``which``.

    ``which`` selects ``s_i = lam_i`` (1), ``lam_i q_i^2`` (2) or ``lam_i p_i^2`` (3).
    Raises :class:`DivergenceError` when the series diverges.
    """
    _check_lam(lam)
    if which == 1:
        def w(lm, p, q, i):
            return lm * _sup_sq(i) / (lm * p + lam)
    elif which == 2:
        def w(lm, p, q, i):
            return lm * q**2 * _sup_sq(i) / (lm * p + lam)
    elif which == 3:
        def w(lm, p, q, i):
            return lm * p**2 * _sup_sq(i) / (lm * p + lam)
    else:
        raise ValueError("which must be 1, 2 or 3")
    return _finite_or_raise(_spectral_sum(spec, w, n_modes, tail), f"N_infty^{which}")


# -- envelope checks -------------------------------------------------------------------

QUANTITIES = (
    "bias",
    "energy_bias",
    "effective_dimension",
    "dof",
    "n_infty_1",
    "n_infty_2",
    "n_infty_3",
)


def envelope_exponent(quantity, spec, envelope="derived", gamma_eval=0.0):
    """Exponent ``e`` of the envelope ``lam**e`` for ``quantity``.

    ``envelope`` is ``"derived"`` (exponents recomputed from the power-law
    sums), ``"printed"`` (the forms usually quoted) or ``"printed_alt"`` (the
    second quoted form of ``n_infty_3``; identical to ``"printed"`` elsewhere).
    """
    a, p, q, mu, beta = spec.alpha, spec.p, spec.q, spec.mu, spec.beta
    d = a + p
    printed = envelope in ("printed", "printed_alt")
    if envelope not in ("derived", "printed", "printed_alt"):
        raise ValueError(f"unknown envelope kind {envelope!r}")
    if quantity == "bias":
        return (beta - gamma_eval) * a / (2 * d)
    if quantity == "energy_bias":
        return (beta * a - 2 * p) / (2 * d) if printed else (beta * a + 2 * p) / (2 * d)
    if quantity == "effective_dimension":
        return (p - 2 * q - 1) / d if printed else -(1 + p - 2 * q) / d
    if quantity == "dof":
        return (-p - 1) / d
    if quantity == "n_infty_1":
        return -(mu * a + p) / d
    if quantity == "n_infty_2":
        return -(mu * a + p + 2 * q) / d if printed else -(mu * a + p - 2 * q) / d
    if quantity == "n_infty_3":
        if envelope == "printed":
            return -(mu * a + 3 * p) / d
        if envelope == "printed_alt":
            return -(mu * a + 2 * p) / d
        return -(mu * a - p) / d
    raise ValueError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")


def default_grid(points=25, low=1e-6, high=1.0):
    return np.geomspace(low, high, points)


def _evaluate(quantity, spec, lam, target, gamma_eval, n_modes):
    if quantity == "bias":
        return bias_exact(spec, target, lam, gamma_eval, n_modes=n_modes)
    if quantity == "energy_bias":
        return energy_bias_exact(spec, target, lam, n_modes=n_modes)
    if quantity == "effective_dimension":
        return effective_dimension(spec, lam, n_modes=n_modes)
    if quantity == "dof":
        return dof_trace(spec, lam, n_modes=n_modes)
    if quantity.startswith("n_infty_"):
        return n_infty(spec, lam, int(quantity[-1]), n_modes=n_modes)
    raise ValueError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass(eq=False)
class BoundCheckReport:
    """Measured values against an envelope ``lam**exponent`` on a log grid.

    ``trend_slope`` is the log-log slope of ``value / envelope`` fitted on the
    smaller-``lam`` half of the grid; a bound that holds up to a constant
    leaves it at or above ``TREND_TOL``.  ``sharpness_slope`` (bias only)
    is the slope over the full grid and must stay below ``SHARPNESS_MAX``.
    """

    quantity: str
    envelope_kind: str
    exponent: float
    lambdas: np.ndarray
    values: np.ndarray
    envelope: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    trend_slope: float
    sharpness_slope: float | None
    passed: bool
    reason: str = ""

    def to_csv(self, path):
        import csv

        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "value", "envelope", "ratio"])
            for row in zip(self.lambdas, self.values, self.envelope, self.ratios):
                writer.writerow([repr(float(v)) for v in row])

    def verdict(self):
        return {
            "quantity": self.quantity,
            "envelope": self.envelope_kind,
            "exponent": self.exponent,
            "max_ratio": self.max_ratio,
            "trend_slope": self.trend_slope,
            "sharpness_slope": self.sharpness_slope,
            "passed": self.passed,
            "reason": self.reason,
        }

    def verdict_json(self):
        return json.dumps(self.verdict(), sort_keys=True)


def bound_check(
    quantity,
    spec,
    grid=None,
    envelope="derived",
    exponent_shift=0.0,
    gamma_eval=0.0,
    target=None,
    n_modes=BOUND_TRUNCATION,
):
    """Check that ``quantity(lam) / lam**e`` stays bounded and trend-flat as ``lam -> 0``.

    ``exponent_shift`` is added to the envelope exponent (a positive shift
    tightens the envelope and serves as a negative control).
    """
    lams = default_grid() if grid is None else np.sort(np.asarray(grid, dtype=float))
    if lams.size < 20:
        raise ValueError("grid needs at least 20 points")
    if np.any(lams <= 0) or math.log10(lams[-1] / lams[0]) < 4 - 1e-9:
        raise ValueError("grid must be positive and span at least 4 decades")
    if target is None:
        target = TightTarget()
    e = envelope_exponent(quantity, spec, envelope, gamma_eval) + exponent_shift
    values = np.empty_like(lams)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            for k, lam in enumerate(lams):
                values[k] = _evaluate(quantity, spec, lam, target, gamma_eval, n_modes)
    except DivergenceError as exc:
        nan = np.full_like(lams, np.nan)
        return BoundCheckReport(quantity, envelope, e, lams, nan, lams**e, nan, math.inf,
                                math.nan, None, False, str(exc))
    env = lams**e
    ratios = values / env
    if not np.all(np.isfinite(ratios)) or np.any(values <= 0):
        return BoundCheckReport(quantity, envelope, e, lams, values, env, ratios, math.inf,
                                math.nan, None, False, "non-finite or vanishing values")
    half = lams.size // 2
    trend = _slope(lams[:half], ratios[:half])
    sharp = _slope(lams, ratios) if quantity == "bias" else None
    reasons = []
    if trend < TREND_TOL:
        reasons.append(f"ratio grows as lam -> 0 (slope {trend:.4f})")
    if sharp is not None and sharp > SHARPNESS_MAX:
        reasons.append(f"envelope not sharp (slope {sharp:.4f})")
    return BoundCheckReport(
        quantity,
        envelope,
        e,
        lams,
        values,
        env,
        ratios,
        float(np.max(ratios)),
        trend,
        sharp,
        not reasons,
        "; ".join(reasons),
    )
