"""Operator symbols for ``-Laplace u + u = f`` on the torus and the stopping-time comparison.

The deep Ritz loss and the strong-form residual loss lead to the same
minimizer but different symbol pairs ``(a1, a2)``:

* Ritz:        ``a1 = 1 + w^2``,         ``a2 = 1``
* residual:    ``a1 = (1 + w^2)^2``,     ``a2 = 1 + w^2``
* gradient-augmented residual with weight ``c``:
               ``a1 = (c + w^2)(1 + w^2)^2``, ``a2 = (c + w^2)(1 + w^2)``

where ``w^2 = 4 pi^2 |m|^2``.  The observation operator ``a1 / a2 = 1 + w^2``
is shared, so one dataset serves every loss.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._stats import fit_slope
from .simulate import NoiseModel, build_system, derive_seed, modal_solution, sample_dataset
from .spectral_core import Basis, Spectrum
from .theory_bounds import horizon_exponent

__all__ = [
    "PdeOperatorSet",
    "fit_decay_exponent",
    "drm_operators",
    "pinn_operators",
    "sobolev_pinn_operators",
    "SobolevObjectiveValue",
    "sobolev_objective",
    "ibp_identity_check",
    "quadrature_grid",
    "AccelerationResult",
    "acceleration_experiment",
]


def fit_decay_exponent(symbol):
    """Exponent ``p`` with ``symbol_i ~ i^(-p)``: minus the log-log slope over modes ``2..N``.

    The constant mode is left out because its symbol is pinned to 1
    regardless of the operator order.
    """
    s = np.asarray(symbol, dtype=float)
    if s.shape[0] < 3:
        raise ValueError("need at least three modes to fit a decay exponent")
    idx = np.arange(2, s.shape[0] + 1, dtype=float)
    slope = np.polyfit(np.log(idx), np.log(s[1:]), 1)[0]
    return float(-slope)


@dataclass(frozen=True, eq=False)
class PdeOperatorSet:
    """Per-mode symbols of ``A1`` and ``A2`` for one training loss."""

    name: str
    basis: Basis
    a1_symbol: np.ndarray
    a2_symbol: np.ndarray
    equivalent_p: float = field(init=False)
    equivalent_q: float = field(init=False)

    def __post_init__(self):
        for key in ("a1_symbol", "a2_symbol"):
            arr = np.array(getattr(self, key), dtype=float)
            if arr.shape != (len(self.basis),):
                raise ValueError(f"{key} must have one entry per basis mode")
            if np.any(arr < 1.0 - 1e-12):
                raise ValueError(f"{key} must be >= 1")
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        object.__setattr__(self, "equivalent_p", fit_decay_exponent(self.a1_symbol))
        object.__setattr__(self, "equivalent_q", fit_decay_exponent(self.a2_symbol))

    def spectrum(self, alpha, c_lambda=1.0):
        """Kernel ``c_lambda i^-alpha`` paired with the exact symbols."""
        i = np.arange(1, len(self.basis) + 1, dtype=float)
        return Spectrum(c_lambda * i ** (-alpha), self.a1_symbol, self.a2_symbol)

    def equivalent_spec(self, base):
        """Power-law spec with the fitted ``(p, q)`` and the remaining fields of ``base``."""
        return base.replace(
            p=min(0.0, self.equivalent_p), q=min(0.0, self.equivalent_q), n_trunc=len(self.basis)
        )


def _basis(d, basis, n_modes):
    if basis is None:
        return Basis(n_modes, d)
    if basis.dimension != d:
        raise ValueError(f"basis has dimension {basis.dimension}, expected {d}")
    return basis


def drm_operators(d=1, basis=None, n_modes=512):
    """Ritz-energy symbols ``(1 + w^2, 1)``."""
    b = _basis(d, basis, n_modes)
    w2 = b.wavenumber_sq
    return PdeOperatorSet("DRM", b, 1.0 + w2, np.ones_like(w2))


def pinn_operators(d=1, basis=None, n_modes=512):
    """Strong-residual symbols ``((1 + w^2)^2, 1 + w^2)``."""
    b = _basis(d, basis, n_modes)
    w2 = b.wavenumber_sq
    return PdeOperatorSet("PINN", b, (1.0 + w2) ** 2, 1.0 + w2)


def sobolev_pinn_operators(d=1, basis=None, n_modes=512, weight=1.0):
    """Residual plus gradient-residual symbols ``((c + w^2)(1 + w^2)^2, (c + w^2)(1 + w^2))``."""
    if not weight > 0:
        raise ValueError("weight must be positive")
    b = _basis(d, basis, n_modes)
    w2 = b.wavenumber_sq
    return PdeOperatorSet("SOBOLEV_PINN", b, (weight + w2) * (1.0 + w2) ** 2, (weight + w2) * (1.0 + w2))


# -- Sobolev training objective -------------------------------------------------------


def quadrature_grid(basis, n_modes=None):
    """Uniform grid on which products of two basis functions integrate exactly."""
    k = len(basis) if n_modes is None else int(n_modes)
    top = int(np.max(np.abs(basis.frequencies[:k]))) if k else 0
    pts = 2 * top + 2
    axes = [np.arange(pts) / pts] * basis.dimension
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class SobolevObjectiveValue:
    """Both evaluations of the gradient-augmented residual loss.

    ``direct`` is the spectral sum ``sum_m (c + w^2) ((1 + w^2) u_m - f_m)^2``;
    ``expanded`` integrates on a grid after moving the gradient off ``f``:
    ``c ||Lu - f||^2 + ||grad Lu||^2 + 2 <Laplace Lu, f> + ||grad f||^2``.
    """

    direct: float
    expanded: float

    def __float__(self):
        return self.direct

    @property
    def residual(self):
        return abs(self.direct - self.expanded)


def _pair(u, f, basis):
    a = np.zeros(len(basis))
    b = np.zeros(len(basis))
    ua, fa = np.asarray(u, dtype=float), np.asarray(f, dtype=float)
    if max(ua.shape[0], fa.shape[0]) > len(basis):
        raise ValueError("coefficients exceed the basis")
    a[: ua.shape[0]] = ua
    b[: fa.shape[0]] = fa
    return a, b


def _grid_integrals(basis, n_modes, coeff_sets):
    xs = quadrature_grid(basis, n_modes)
    E = basis.design_matrix(xs, n_modes=n_modes)
    D = basis.gradient_design(xs, n_modes=n_modes)
    vals = {k: E @ c[:n_modes] for k, c in coeff_sets.items()}
    grads = {k: np.einsum("cji,i->cj", D, c[:n_modes]) for k, c in coeff_sets.items()}
    return vals, grads


def _active(a, b):
    nz = np.nonzero((a != 0) | (b != 0))[0]
    return int(nz[-1]) + 1 if nz.size else 1


def sobolev_objective(u, f, weight, basis):
    """Gradient-augmented residual loss of ``-Laplace u + u = f`` for band-limited ``u, f``."""
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    a, b = _pair(u, f, basis)
    w2 = basis.wavenumber_sq
    r = (1.0 + w2) * a - b
    direct = float(np.sum((weight + w2) * r**2))
    k = _active(a, b)
    Lu = (1.0 + w2) * a
    vals, grads = _grid_integrals(basis, k, {"Lu": Lu, "lapLu": -w2 * Lu, "f": b})
    expanded = (
        weight * np.mean((vals["Lu"] - vals["f"]) ** 2)
        + np.mean(np.sum(grads["Lu"] ** 2, axis=0))
        + 2.0 * np.mean(vals["lapLu"] * vals["f"])
        + np.mean(np.sum(grads["f"] ** 2, axis=0))
    )
    return SobolevObjectiveValue(direct, float(expanded))


def ibp_identity_check(u, f, basis):
    """``| int |grad(u - f)|^2 - ( int |grad u|^2 + 2 int Laplace u f + int |grad f|^2 ) |``.

    The left side is summed spectrally, the right side integrated on a grid.
    """
    a, b = _pair(u, f, basis)
    w2 = basis.wavenumber_sq
    lhs = float(np.sum(w2 * (a - b) ** 2))
    k = _active(a, b)
    vals, grads = _grid_integrals(basis, k, {"u": a, "lapu": -w2 * a, "f": b})
    rhs = (
        np.mean(np.sum(grads["u"] ** 2, axis=0))
        + 2.0 * np.mean(vals["lapu"] * vals["f"])
        + np.mean(np.sum(grads["f"] ** 2, axis=0))
    )
    return abs(lhs - float(rhs))


# -- stopping-time comparison -----------------------------------------------------------


@dataclass(eq=False)
class AccelerationResult:
    """Per-replication optima plus the optimum of the replication-averaged error curve.

    ``rows`` holds ``(operator, n, replication, t_opt, err_at_t_opt)``;
    ``mean_t_opt[name][k]`` is the minimizer of the mean error curve at
    ``n_grid[k]``, which is what the slopes are fitted to.
    """

    n_grid: list
    rows: list
    mean_t_opt: dict
    mean_err: dict
    slopes: dict
    theory: dict
    equivalent: dict
    gamma_eval: float

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["operator", "n", "replication", "t_opt", "err_at_t_opt"])
            for name, n, rep, t, e in self.rows:
                writer.writerow([name, n, rep, t, repr(float(e))])

    def summary(self):
        return {
            "gamma_eval": self.gamma_eval,
            "n_grid": list(self.n_grid),
            "operators": {
                name: {
                    "slope": self.slopes[name][0],
                    "stderr": self.slopes[name][1],
                    "theory_exponent": self.theory[name],
                    "equivalent_p": self.equivalent[name][0],
                    "equivalent_q": self.equivalent[name][1],
                    "mean_curve_t_opt": list(map(int, self.mean_t_opt[name])),
                    "mean_curve_err": list(map(float, self.mean_err[name])),
                }
                for name in self.slopes
            },
        }

    def summary_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _golden_integer_min(fn, lo, hi):
    """Integer minimizer of a unimodal ``fn`` on ``[lo, hi]`` by golden-section search."""
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    cache = {}

    def f(t):
        if t not in cache:
            cache[t] = fn(t)
        return cache[t]

    while hi - lo > 3:
        a = int(round(hi - ratio * (hi - lo)))
        b = int(round(lo + ratio * (hi - lo)))
        if a == b:
            b = a + 1
        if f(a) <= f(b):
            hi = b
        else:
            lo = a
    best = min(range(lo, hi + 1), key=f)
    return best, f(best)


def _scan_optimum(curve_fn, coarse):
    """Minimize over a coarse geometric grid, then refine between its neighbours."""
    values = curve_fn(coarse)
    j = int(np.argmin(values))
    lo = int(coarse[max(j - 1, 0)])
    hi = int(coarse[min(j + 1, len(coarse) - 1)])
    return _golden_integer_min(lambda t: float(curve_fn(np.array([t]))[0]), lo, hi)


def acceleration_experiment(
    spec_base,
    operators,
    n_grid,
    replications=10,
    seed=0,
    sigma=1.0,
    gamma_eval=0.5,
    delta=0.05,
    t_max=10**11,
    points_per_decade=60,
):
    """Compare minimizers of the averaged-GD error over ``t`` across losses.

    Every operator set sees the same datasets (seeded by ``(seed, n, rep)``)
    and the same target ``a_i = lam_i^(beta/2) i^-(1/2 + delta)``.  The
    averaged iterate is evaluated in closed form (:func:`modal_solution`),
    which reproduces the explicit recursion of :func:`gd_run`.
    """
    operators = list(operators)
    if not operators:
        raise ValueError("need at least one operator set")
    basis = operators[0].basis
    if any(op.basis != basis for op in operators):
        raise ValueError("operator sets must share a basis")
    if gamma_eval >= spec_base.beta:
        raise ValueError("gamma_eval must be below beta")
    n_modes = len(basis)
    i = np.arange(1, n_modes + 1, dtype=float)
    lam = spec_base.c_lambda * i ** (-spec_base.alpha)
    target = lam ** (spec_base.beta / 2.0) * i ** (-(0.5 + delta))
    weights = lam ** (-gamma_eval)
    decades = math.log10(t_max)
    coarse = np.unique(np.round(np.logspace(0, decades, int(decades * points_per_decade) + 1))).astype(np.int64)

    rows, mean_t, mean_e, slopes, theory, equiv = [], {}, {}, {}, {}, {}
    for op in operators:
        sp = op.spectrum(spec_base.alpha, spec_base.c_lambda)
        mean_t[op.name], mean_e[op.name] = [], []
        for n in n_grid:
            sols = []
            for rep in range(replications):
                data = sample_dataset(sp, target, n, NoiseModel(sigma), derive_seed(seed, n, rep), basis)
                sol = modal_solution(build_system(data.xs, data.ys, sp, basis=basis))
                sols.append(sol)
                t, e = _scan_optimum(lambda ts, s=sol: s.errors(ts, target, weights), coarse)
                rows.append((op.name, int(n), rep, int(t), e))

            def mean_curve(ts, sols=sols):
                return np.mean([s.errors(ts, target, weights) for s in sols], axis=0)

            t, e = _scan_optimum(mean_curve, coarse)
            mean_t[op.name].append(t)
            mean_e[op.name].append(e)
        slopes[op.name] = fit_slope(zip(n_grid, mean_t[op.name]))
        equiv[op.name] = (op.equivalent_p, op.equivalent_q)
        theory[op.name] = horizon_exponent(op.equivalent_spec(spec_base))
    return AccelerationResult(list(n_grid), rows, mean_t, mean_e, slopes, theory, equiv, gamma_eval)
