"""scikit-learn style wrappers around the spectral solvers.

Inputs ``X`` are points on the torus ``[0, 1)^d`` with shape ``(n, d)``;
targets are noisy observations of ``A u*``.  The fitted model is stored as a
coefficient vector in the shared eigenbasis, and :meth:`predict` evaluates the
recovered ``u`` (not its image under ``A``) at new points.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .simulate import (
    DEFAULT_STEP_FRACTION,
    GDConfig,
    _iterate,
    build_system,
)
from .spectral_core import Basis, SpectrumSpec, as_spectrum

__all__ = ["SpectralGDRegressor", "SpectralRidgeRegressor"]


def _spec_and_basis(spec, n_features):
    sp = as_spectrum(spec)
    dim = spec.dimension if isinstance(spec, SpectrumSpec) else n_features
    if dim != n_features:
        raise ValueError(f"spec is {dim}-dimensional but X has {n_features} features")
    return sp, Basis(sp.n_modes, dim)


class _SpectralBase(RegressorMixin, BaseEstimator):
    def _setup(self, X, y):
        if self.spec is None:
            raise ValueError("spec must be provided")
        X, y = validate_data(self, X, y, y_numeric=True)
        if np.any((X < 0) | (X >= 1)):
            X = np.mod(X, 1.0)
        sp, basis = _spec_and_basis(self.spec, X.shape[1])
        return X, y, sp, basis

    def _design(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        return self.basis_.design_matrix(np.mod(X, 1.0), n_modes=self.coef_.shape[0])

    def predict(self, X):
        """Evaluate the recovered function ``u`` at ``X``."""
        return self._design(X) @ self.coef_

    def predict_observation(self, X):
        """Evaluate ``A u`` at ``X``, the quantity the training targets measure."""
        sp = self.spectrum_
        return self._design(X) @ (sp.p / sp.q * self.coef_)

    def score(self, X, y, sample_weight=None):
        """R^2 of :meth:`predict_observation` against observed ``y``."""
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict_observation(X), sample_weight=sample_weight)

    def power_error(self, target, gamma_eval=0.0):
        """Squared ``gamma``-norm distance of the fitted coefficients to ``target``."""
        check_is_fitted(self, "coef_")
        a = np.zeros_like(self.coef_)
        t = np.asarray(target, dtype=float)[: a.shape[0]]
        a[: t.shape[0]] = t
        w = self.spectrum_.lam ** (-float(gamma_eval))
        return float(np.dot(w, (self.coef_ - a) ** 2))


class SpectralGDRegressor(_SpectralBase):
    """Early-stopped averaged stop-gradient gradient descent.

    Parameters
    ----------
    spec : SpectrumSpec or Spectrum
        Kernel and operator spectra.
    n_iter : int
        Number of gradient steps ``t``.
    learning_rate : float or "auto"
        Step size; ``"auto"`` uses ``step_fraction / rho`` with ``rho`` the
        spectral radius of the empirical operator.
    step_fraction : float
        Fraction of the stability limit used when ``learning_rate="auto"``.
    averaging : bool
        Return the running average of the iterates (``True``) or the last one.

    Attributes
    ----------
    coef_ : ndarray of shape (n_modes,)
        Returned coefficients (averaged or last, per ``averaging``).
    coef_last_ : ndarray of shape (n_modes,)
        Last iterate.
    learning_rate_ : float
    spectral_radius_ : float

    Examples
    --------
    >>> import numpy as np
    >>> from sobolev_gd import SpectrumSpec, SpectralGDRegressor
    >>> rng = np.random.default_rng(0)
    >>> X = rng.random((200, 1)); y = np.cos(2 * np.pi * X[:, 0])
    >>> est = SpectralGDRegressor(SpectrumSpec(alpha=2, n_trunc=16), n_iter=50).fit(X, y)
    >>> est.coef_.shape
    (16,)
    """

    def __init__(self, spec=None, n_iter=100, learning_rate="auto",
                 step_fraction=DEFAULT_STEP_FRACTION, averaging=True):
        self.spec = spec
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.step_fraction = step_fraction
        self.averaging = averaging

    def fit(self, X, y):
        X, y, sp, basis = self._setup(X, y)
        if int(self.n_iter) != self.n_iter or self.n_iter < 0:
            raise ValueError("n_iter must be a nonnegative integer")
        if self.learning_rate == "auto":
            config = GDConfig(t_max=int(self.n_iter), step_fraction=self.step_fraction)
        elif isinstance(self.learning_rate, (int, float)) and self.learning_rate > 0:
            config = GDConfig(gamma=float(self.learning_rate), t_max=int(self.n_iter))
        else:
            raise ValueError(f"invalid learning_rate {self.learning_rate!r}")
        system = build_system(X, y, sp, basis=basis)
        gamma = config.resolve_gamma(system.rho)
        *_, avg, last, _, _, _ = _iterate(system, gamma, config.t_max, gammas_eval=())
        self.basis_ = basis
        self.spectrum_ = sp
        self.learning_rate_ = gamma
        self.spectral_radius_ = system.rho
        self.coef_last_ = last
        self.coef_ = avg if self.averaging else last
        return self


class SpectralRidgeRegressor(_SpectralBase):
    """Tikhonov solution ``(M + lam I) theta = v`` of the same linear system.

    Serves as a reference point for the early-stopped estimator; ``lam`` plays
    the role of ``1 / (gamma t)``.
    """

    def __init__(self, spec=None, lam=1e-3):
        self.spec = spec
        self.lam = lam

    def fit(self, X, y):
        X, y, sp, basis = self._setup(X, y)
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        system = build_system(X, y, sp, basis=basis)
        n = system.v.shape[0]
        self.basis_ = basis
        self.spectrum_ = sp
        self.spectral_radius_ = system.rho
        self.coef_ = np.linalg.solve(system.M + self.lam * np.eye(n), system.v)
        return self
