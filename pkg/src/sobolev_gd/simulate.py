"""Data generation and averaged stop-gradient gradient descent.

Iterates are kept in L2 coordinates: ``theta`` holds the coefficients of
``u_theta = sum_i theta_i e_i``.  One step of the dynamics reads

    theta_t = theta_{t-1} + gamma * Lam (Q b - G P theta_{t-1})

with ``G = E^T E / n`` and ``b = E^T y / n`` built from the design matrix
``E[j, i] = e_i(x_j)``.  The operator ``Lam G P`` is not symmetric, but it is
similar to ``(Lam P)^{1/2} G (Lam P)^{1/2}``, which is how its spectral radius
is computed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral_core import (
    Basis,
    DivergenceError,
    FunctionCoeffs,
    Spectrum,
    SpectrumSpec,
    as_spectrum,
)

__all__ = [
    "StabilityError",
    "NoiseModel",
    "Dataset",
    "GDConfig",
    "Trajectory",
    "derive_seed",
    "make_rng",
    "sample_dataset",
    "LinearSystem",
    "build_system",
    "gd_run",
    "filter_gd",
    "FilterBoundReport",
    "filter_bound_check",
    "residual_gd",
    "shrinkage_gd",
    "population_gd",
    "population_recursion",
    "ridge_oracle",
    "dense_recursion_oracle",
    "ModalSolution",
    "modal_solution",
    "spectral_radius",
]

OVERFLOW_GUARD = 1e12
DEFAULT_STEP_FRACTION = 0.9
# sup_x (1 / (gamma t)) q_t(x) never exceeds this constant
FILTER_CONSTANT = 2.0
# slack for round-off when a bound is attained exactly
FILTER_BOUND_RTOL = 1e-12


class StabilityError(ValueError):
    """The learning rate exceeds the stable range of the operator."""


# -- randomness -------------------------------------------------------------


def derive_seed(base_seed, *keys):
    """Deterministic 64-bit seed for a (base seed, key...) tuple."""
    seq = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed):
    """Counter-based generator (Philox) for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


# -- data -------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Mean-zero Gaussian observation noise.

    ``L`` is the Bernstein scale of the moment condition; Gaussian noise
    satisfies it with ``L = sigma``.
    """

    sigma: float = 0.0
    L: float | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.L is None:
            object.__setattr__(self, "L", self.sigma)
        if self.L < 0:
            raise ValueError("L must be nonnegative")


@dataclass(frozen=True, eq=False)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    seed: int = 0
    sigma: float = 0.0

    def __post_init__(self):
        xs = np.array(self.xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        ys = np.array(self.ys, dtype=float).reshape(-1)
        if xs.shape[0] != ys.shape[0]:
            raise ValueError("xs and ys disagree on the number of samples")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self):
        return self.ys.shape[0]

    @property
    def d(self):
        return self.xs.shape[1]

    def to_csv(self, path):
        """Write a header line ``n,d,sigma,seed`` followed by ``x_1..x_d,y`` rows."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "d", "sigma", "seed"])
            writer.writerow([self.n, self.d, repr(float(self.sigma)), self.seed])
            writer.writerow([f"x{c}" for c in range(self.d)] + ["y"])
            for x, y in zip(self.xs, self.ys):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != ["n", "d", "sigma", "seed"]:
            raise ValueError("missing dataset header")
        n, d, sigma, seed = int(rows[1][0]), int(rows[1][1]), float(rows[1][2]), int(rows[1][3])
        body = np.array(rows[3:], dtype=float).reshape(n, d + 1)
        return cls(body[:, :d], body[:, d], seed=seed, sigma=sigma)


def sample_dataset(spec, target, n, noise, seed, basis=None):
    """Draw ``n`` uniform torus points and noisy observations of ``f* = A u*``."""
    if n < 1:
        raise ValueError("need at least one sample")
    a = np.asarray(target, dtype=float)
    dim = getattr(spec, "dimension", None) or (basis.dimension if basis is not None else 1)
    if basis is None:
        basis = Basis(a.shape[0], dim)
    if a.shape[0] > len(basis):
        raise ValueError("target exceeds the basis size")
    sp = as_spectrum(spec, a.shape[0])
    f_coeffs = sp.observation_symbol * a
    rng = make_rng(seed)
    # uniform inverse CDF is the identity on [0, 1)
    xs = rng.random((int(n), basis.dimension))
    eta = rng.standard_normal(int(n))
    ys = basis.design_matrix(xs, n_modes=a.shape[0]) @ f_coeffs + noise.sigma * eta
    return Dataset(xs, ys, seed=int(seed), sigma=float(noise.sigma))


# -- gradient descent -----------------------------------------------------------


@dataclass(frozen=True)
class GDConfig:
    """Settings of one gradient-descent run.

    ``gamma=None`` selects ``step_fraction / rho`` with ``rho`` the spectral
    radius of the empirical operator.  ``early_exit`` (a factor > 1) stops the
    run once the averaged error has climbed that far above its running minimum
    and ``t`` is at least twice the minimizing iteration.
    """

    gamma: float | None = None
    t_max: int = 100
    record_every: int = 1
    averaging: bool = True
    step_fraction: float = DEFAULT_STEP_FRACTION
    gamma_scale: float = 1.0
    store_iterates: bool = False
    early_exit: float | None = None

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("learning rate must be positive")
        if self.t_max < 0 or int(self.t_max) != self.t_max:
            raise ValueError("t_max must be a nonnegative integer")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if not 0 < self.step_fraction <= 1:
            raise ValueError("step_fraction must lie in (0, 1]")
        if self.early_exit is not None and not self.early_exit > 1:
            raise ValueError("early_exit must exceed 1")
        object.__setattr__(self, "t_max", int(self.t_max))

    def resolve_gamma(self, rho):
        gamma = self.gamma if self.gamma is not None else self.step_fraction * self.gamma_scale / rho
        if gamma * rho > 1.0 + 1e-12:
            raise StabilityError(f"gamma * rho = {gamma * rho:.6g} exceeds 1")
        return gamma


@dataclass(eq=False)
class Trajectory:
    """Recorded errors (and optionally iterates) of one run.

    ``errors[g]`` and ``errors_last[g]`` hold squared gamma-norm errors of the
    averaged and the plain iterate at the recorded iterations ``ts``.
    """

    ts: np.ndarray
    gammas_eval: tuple
    errors: dict
    errors_last: dict
    gamma: float
    rho: float
    final: FunctionCoeffs
    final_last: FunctionCoeffs
    iterates: np.ndarray | None = None
    iterates_last: np.ndarray | None = None
    stopped_early: bool = False
    meta: dict = field(default_factory=dict)

    def error_at(self, t, gamma_eval=None, averaged=True):
        g = self.gammas_eval[0] if gamma_eval is None else gamma_eval
        idx = np.searchsorted(self.ts, t)
        if idx >= self.ts.shape[0] or self.ts[idx] != t:
            raise KeyError(f"iteration {t} was not recorded")
        return float((self.errors if averaged else self.errors_last)[g][idx])

    def t_opt(self, gamma_eval=None, averaged=True):
        """Recorded iteration minimizing the error, and that squared error."""
        g = self.gammas_eval[0] if gamma_eval is None else gamma_eval
        errs = (self.errors if averaged else self.errors_last)[g]
        idx = int(np.argmin(errs))
        return int(self.ts[idx]), float(errs[idx])

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "gamma_eval", "error_sq", "averaged_flag"])
            for g in self.gammas_eval:
                for flag, table in ((1, self.errors), (0, self.errors_last)):
                    for t, e in zip(self.ts, table[g]):
                        writer.writerow([int(t), repr(float(g)), repr(float(e)), flag])


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Precomputed ``M = Lam G P`` and ``v = Lam Q b`` for one dataset."""

    M: np.ndarray
    v: np.ndarray
    rho: float
    spectrum: Spectrum


def spectral_radius(spectrum, gram):
    scale = np.sqrt(spectrum.lam * spectrum.p)
    sym = scale[:, None] * gram * scale[None, :]
    return float(np.linalg.eigvalsh(sym)[-1])


def build_system(xs, ys, model, n_modes=None, basis=None):
    """Assemble the empirical operator and right-hand side in coefficient space."""
    sp = as_spectrum(model, n_modes)
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if basis is None:
        basis = Basis(sp.n_modes, xs.shape[1])
    if np.any(sp.p <= 0):
        raise ValueError("A1 symbol must be positive")
    E = basis.design_matrix(xs, n_modes=sp.n_modes)
    n = E.shape[0]
    gram = E.T @ E / n
    b = E.T @ np.asarray(ys, dtype=float) / n
    M = sp.lam[:, None] * gram * sp.p[None, :]
    v = sp.lam * sp.q * b
    return LinearSystem(M, v, spectral_radius(sp, gram), sp)


def _iterate(system, gamma, t_max, target=None, gammas_eval=(0.0,), record_every=1,
             store_iterates=False, early_exit=None):
    M, v = system.M, system.v
    N = v.shape[0]
    theta = np.zeros(N)
    running = np.zeros(N)
    avg = np.zeros(N)
    if target is not None:
        a = np.zeros(N)
        tgt = np.asarray(target, dtype=float)
        if tgt.shape[0] > N:
            raise ValueError("target has more modes than the system")
        a[: tgt.shape[0]] = tgt
        weights = {g: system.spectrum.lam ** (-float(g)) for g in gammas_eval}
    else:
        gammas_eval = ()
    ts, errs, errs_last, its, its_last = [], {g: [] for g in gammas_eval}, {g: [] for g in gammas_eval}, [], []
    best, best_t, stopped = math.inf, 0, False

    def record(t):
        ts.append(t)
        for g in gammas_eval:
            w = weights[g]
            errs[g].append(float(np.dot(w, (avg - a) ** 2)))
            errs_last[g].append(float(np.dot(w, (theta - a) ** 2)))
        if store_iterates:
            its.append(avg.copy())
            its_last.append(theta.copy())

    record(0)
    for t in range(1, t_max + 1):
        # averaged iterate over theta_0 .. theta_{t-1}
        running += theta
        avg = running / t
        theta = theta + gamma * (v - M @ theta)
        if not np.all(np.abs(theta) <= OVERFLOW_GUARD):
            raise DivergenceError(f"iterate left the overflow guard at t={t}", iteration=t)
        if t % record_every == 0 or t == t_max:
            record(t)
            if early_exit is not None and gammas_eval:
                e = errs[gammas_eval[0]][-1]
                if e < best:
                    best, best_t = e, t
                elif e > early_exit * best and t >= 2 * best_t + 10:
                    stopped = True
                    break
    return (
        np.array(ts),
        {g: np.array(x) for g, x in errs.items()},
        {g: np.array(x) for g, x in errs_last.items()},
        avg,
        theta,
        np.array(its) if store_iterates else None,
        np.array(its_last) if store_iterates else None,
        stopped,
    )


def gd_run(data, spec, config, target, gammas_eval=(0.0,), basis=None):
    """Run averaged stop-gradient GD on a dataset and record gamma-norm errors.

    The averaged iterate follows ``bar theta_t = (1/t) sum_{s<t} theta_s`` with
    ``bar theta_0 = theta_0 = 0``.
    """
    sp = as_spectrum(spec)
    system = build_system(data.xs, data.ys, sp, basis=basis)
    gamma = config.resolve_gamma(system.rho)
    gammas_eval = tuple(float(g) for g in gammas_eval)
    ts, errs, errs_last, avg, last, its, its_last, stopped = _iterate(
        system,
        gamma,
        config.t_max,
        target=target,
        gammas_eval=gammas_eval,
        record_every=config.record_every,
        store_iterates=config.store_iterates,
        early_exit=config.early_exit,
    )
    if not config.averaging:
        errs = errs_last
        avg = last
        its = its_last
    return Trajectory(
        ts=ts,
        gammas_eval=gammas_eval,
        errors=errs,
        errors_last=errs_last,
        gamma=gamma,
        rho=system.rho,
        final=FunctionCoeffs(avg),
        final_last=FunctionCoeffs(last),
        iterates=its,
        iterates_last=its_last,
        stopped_early=stopped,
    )


# -- spectral filter ------------------------------------------------------------


def _check_filter_args(t, gamma, x):
    if t < 1 or int(t) != t:
        raise ValueError("t must be a positive integer")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("filter argument must be nonnegative")
    if np.any(gamma * x > 1.0 + 1e-12):
        raise StabilityError("gamma * x exceeds 1")
    return int(t), x


def _filter_series(t, z):
    """``sum_{k=2}^{t} C(t, k) (-z)^(k-2) / t``; accurate when ``t z`` is small.

    Equals ``(1 - r_t(x)) / z`` with ``z = gamma x``.  Successive terms are
    formed by ratio so nothing overflows for large ``t``.
    """
    out = np.zeros_like(z)
    term = np.full_like(z, (t - 1) / 2.0)
    for k in range(2, min(t, 24) + 1):
        out += term
        term = -term * (t - k) * z / (k + 1)
    return out


def shrinkage_gd(t, gamma, x):
    """``1 - r_t(x) = x q_t(x)``, the fraction of a mode recovered after ``t`` averaged steps."""
    t, x = _check_filter_args(t, gamma, x)
    z = np.minimum(gamma * x, 1.0)
    small = t * z < 1e-2
    with np.errstate(divide="ignore", invalid="ignore"):
        decay = -np.expm1(t * np.log1p(-z))
        out = 1.0 - decay / (t * z)
    if np.any(small):
        zs = np.where(small, z, 0.0)
        out = np.where(small, zs * _filter_series(t, zs), out)
    return out if out.ndim else float(out)


def residual_gd(t, gamma, x):
    """Residual ``r_t(x) = (1 - (1 - gamma x)^t) / (gamma t x)``, equal to 1 at ``x = 0``."""
    return 1.0 - shrinkage_gd(t, gamma, x)


def filter_gd(t, gamma, x):
    """Averaged-GD filter ``q_t(x) = (1/x) (1 - (1 - (1-gamma x)^t) / (gamma t x))``.

    At ``x = 0`` the analytic limit ``gamma (t - 1) / 2`` is returned.
    """
    t, x = _check_filter_args(t, gamma, x)
    z = np.minimum(gamma * x, 1.0)
    small = t * z < 1e-2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shrinkage_gd(t, gamma, x) / x
    if np.any(small):
        series = _filter_series(t, np.where(small, z, 0.0))
        out = np.where(small, gamma * series, out)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class FilterBoundReport:
    """Outcome of :func:`filter_bound_check`; ``worst_*`` are max ratios to the bound."""

    n_checks: int
    residual_violations: int
    filter_violations: int
    worst_residual_ratio: float
    worst_filter_ratio: float

    @property
    def passed(self):
        return self.residual_violations == 0 and self.filter_violations == 0

    def to_dict(self):
        out = dict(self.__dict__)
        out["passed"] = self.passed
        return out


def filter_bound_check(t_values=range(1, 1025), gamma=1.0, u_values=(0.0, 0.25, 0.5, 0.75, 1.0),
                       grid_points=400):
    """Check ``x^u r_t(x) <= (gamma t)^-u`` and ``q_t(x) / (gamma t) <= 2`` on a grid.

    The grid covers ``(0, 1/gamma]`` geometrically from ``1e-10 / gamma`` plus a
    uniform part, and always contains ``1/gamma``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.unique(np.concatenate([
        np.geomspace(1e-10, 1.0, grid_points),
        np.linspace(1.0 / grid_points, 1.0, grid_points),
    ])) / gamma
    n_checks = res_bad = filt_bad = 0
    worst_res = worst_filt = 0.0
    for t in t_values:
        r = residual_gd(int(t), gamma, x)
        qt = filter_gd(int(t), gamma, x) / (gamma * t)
        ratio = qt / FILTER_CONSTANT
        filt_bad += int(np.count_nonzero(ratio > 1.0 + FILTER_BOUND_RTOL))
        worst_filt = max(worst_filt, float(ratio.max()))
        for u in u_values:
            ratio = x**u * r * (gamma * t) ** u
            res_bad += int(np.count_nonzero(ratio > 1.0 + FILTER_BOUND_RTOL))
            worst_res = max(worst_res, float(ratio.max()))
        n_checks += x.shape[0] * (len(u_values) + 1)
    return FilterBoundReport(n_checks, res_bad, filt_bad, worst_res, worst_filt)


def population_gd(spec, target, t, gamma=None, gammas_eval=(0.0,)):
    """Noiseless infinite-data averaged GD after ``t`` steps, computed mode-wise.

    Returns the averaged iterate ``(1 - r_t(lambda_i p_i)) a_i`` and a dict of
    squared gamma-norm biases.
    """
    a = np.asarray(target, dtype=float)
    sp = as_spectrum(spec, a.shape[0])
    x = sp.effective
    if gamma is None:
        gamma = DEFAULT_STEP_FRACTION / float(np.max(x))
    if gamma * np.max(x) > 1.0 + 1e-12:
        raise StabilityError("gamma * max(lambda_i p_i) exceeds 1")
    theta = shrinkage_gd(int(t), gamma, x) * a
    errors = {float(g): float(np.sum(sp.lam ** (-float(g)) * (theta - a) ** 2)) for g in gammas_eval}
    return FunctionCoeffs(theta), errors


def population_recursion(spec, target, t_max, gamma):
    """Run the population recursion explicitly; row ``t`` is ``bar theta_t``.

    ``theta_t = theta_{t-1} + gamma Lam (Q f - P theta_{t-1})`` with ``f = A u*``,
    i.e. the same stop-gradient step with ``G`` replaced by the identity.
    """
    a = np.asarray(target, dtype=float)
    sp = as_spectrum(spec, a.shape[0])
    f = sp.observation_symbol * a
    theta = np.zeros_like(a)
    running = np.zeros_like(a)
    out = np.zeros((int(t_max) + 1, a.shape[0]))
    for t in range(1, int(t_max) + 1):
        running += theta
        out[t] = running / t
        theta = theta + gamma * sp.lam * (sp.q * f - sp.p * theta)
    return out


def ridge_oracle(data, spec, lam, basis=None):
    """Solve ``(Lam G P + lam I) theta = Lam Q b`` (empirical Tikhonov comparator)."""
    if not lam > 0:
        raise ValueError("ridge parameter must be positive")
    system = build_system(data.xs, data.ys, spec, basis=basis)
    N = system.v.shape[0]
    try:
        theta = np.linalg.solve(system.M + lam * np.eye(N), system.v)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"ridge system is singular: {exc}") from exc
    return FunctionCoeffs(theta)


def _mode_value(freq, sine, x):
    if not any(freq):
        return 1.0
    phase = 2.0 * math.pi * sum(m * xc for m, xc in zip(freq, x))
    return math.sqrt(2.0) * (math.sin(phase) if sine else math.cos(phase))


def dense_recursion_oracle(data, spec, gamma, t_max, n_modes=None):
    """Literal per-sample implementation of the GD recursion (small problems only).

    Evaluates every basis function at every sample with ``math`` and forms
    each update as an explicit double sum, without the Gram-matrix shortcut.
    Returns arrays of plain and averaged iterates, one row per iteration.
    """
    sp = as_spectrum(spec, n_modes)
    N = sp.n_modes
    basis = Basis(N, data.d)
    freqs = [tuple(int(v) for v in m) for m in basis.frequencies]
    sines = [bool(s) for s in basis.is_sine]
    xs = [tuple(float(v) for v in x) for x in data.xs]
    ys = [float(y) for y in data.ys]
    n = len(ys)
    values = [[_mode_value(freqs[i], sines[i], x) for i in range(N)] for x in xs]
    lam, p, q = (list(map(float, arr)) for arr in (sp.lam, sp.p, sp.q))
    theta = [0.0] * N
    running = [0.0] * N
    plain = [list(theta)]
    averaged = [[0.0] * N]
    for t in range(1, int(t_max) + 1):
        running = [r + th for r, th in zip(running, theta)]
        averaged.append([r / t for r in running])
        new = []
        for i in range(N):
            acc = 0.0
            for j in range(n):
                pred = sum(theta[k] * p[k] * values[j][k] for k in range(N))
                acc += values[j][i] * (q[i] * ys[j] - pred)
            new.append(theta[i] + gamma * lam[i] * acc / n)
        theta = new
        plain.append(list(theta))
    return np.array(plain), np.array(averaged)


@dataclass(frozen=True, eq=False)
class ModalSolution:
    """Closed form of the averaged iterate at any ``t`` for one dataset.

    With ``W = diag((lam / p)^(1/2))`` the operator ``M = Lam G P`` equals
    ``W S W^-1`` for the symmetric ``S = (Lam P)^(1/2) G (Lam P)^(1/2)``.
    Diagonalizing ``S = U diag(s) U^T`` gives
    ``bar theta_t = W U diag(q_t(s)) U^T W^-1 v``, the same iterate that
    :func:`gd_run` produces by recursion.
    """

    basis_matrix: np.ndarray
    eigenvalues: np.ndarray
    coords: np.ndarray
    gamma: float
    rho: float

    def averaged(self, t):
        """``bar theta_t`` for one or several iteration counts (rows)."""
        ts = np.atleast_1d(np.asarray(t))
        q = np.array([filter_gd(int(k), self.gamma, self.eigenvalues) if k >= 1
                      else np.zeros_like(self.eigenvalues) for k in ts])
        out = (q * self.coords) @ self.basis_matrix.T
        return out if np.ndim(t) else out[0]

    def errors(self, t, target, weights):
        """Squared weighted distances ``sum_i w_i (bar theta_t,i - a_i)^2``."""
        th = np.atleast_2d(self.averaged(np.atleast_1d(t)))
        a = np.zeros(th.shape[1])
        tgt = np.asarray(target, dtype=float)
        a[: tgt.shape[0]] = tgt
        return ((th - a) ** 2 * weights).sum(axis=1)


def modal_solution(system, gamma=None, step_fraction=DEFAULT_STEP_FRACTION):
    """Diagonalize a :class:`LinearSystem` for closed-form averaged iterates."""
    sp = system.spectrum
    w = np.sqrt(sp.lam / sp.p)
    S = system.M / w[:, None] * w[None, :]
    S = 0.5 * (S + S.T)
    s, U = np.linalg.eigh(S)
    rho = float(s[-1])
    gamma = step_fraction / rho if gamma is None else gamma
    if gamma * rho > 1.0 + 1e-12:
        raise StabilityError(f"gamma * rho = {gamma * rho:.6g} exceeds 1")
    # round-off can leave tiny negative eigenvalues of a PSD matrix
    s = np.clip(s, 0.0, 1.0 / gamma)
    return ModalSolution(w[:, None] * U, s, U.T @ (system.v / w), float(gamma), rho)
