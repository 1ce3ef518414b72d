"""Diagonal spectral model shared by every other module.

A function is represented only by its coefficients ``a`` in a fixed
orthonormal torus Fourier basis ``e_1, e_2, ...``.  The kernel integral
operator and the two loss operators ``A1`` and ``A2`` are all diagonal in
that basis, with eigenvalues

    lambda_i = c_lambda * i**(-alpha)
    p_i      = c_p      * i**(-p)
    q_i      = c_q      * i**(-q)

and the observation operator is ``A = A2^{-1} A1`` with symbol ``p_i / q_i``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np

__all__ = [
    "DivergenceError",
    "SpectrumSpec",
    "Spectrum",
    "FunctionCoeffs",
    "Basis",
    "eigenvalues",
    "power_norm",
    "power_norm_partial_sums",
    "diverges",
    "apply_operator",
    "make_target",
    "target_tail_mass",
    "eval_function",
]

# partial sums above this are reported as divergent rather than returned
NORM_OVERFLOW = 1e200

SPEC_KEYS = (
    "alpha",
    "p",
    "q",
    "beta",
    "mu",
    "c_lambda",
    "c_p",
    "c_q",
    "n_trunc",
    "dimension",
)


class DivergenceError(ArithmeticError):
    """A norm or iteration left the representable range."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class SpectrumSpec:
    """Power-law description of the kernel and operator spectra.

    Parameters
    ----------
    alpha : float
        Kernel eigenvalue decay, ``alpha > 1``.
    p, q : float
        Symbol exponents of ``A1`` and ``A2`` (``<= 0``; zero is the plain
        regression case ``A1 = A2 = id``).
    beta : float
        Source condition order of the target.
    mu : float, optional
        Embedding order; defaults to ``1 / alpha``.
    c_lambda, c_p, c_q : float
        Scale constants.
    n_trunc : int
        Number of retained eigenmodes.
    dimension : int
        Torus dimension of the basis.
    """

    alpha: float
    p: float = 0.0
    q: float = 0.0
    beta: float = 1.0
    mu: float | None = None
    c_lambda: float = 1.0
    c_p: float = 1.0
    c_q: float = 1.0
    n_trunc: int = 512
    dimension: int = 1

    def __post_init__(self):
        if self.mu is None:
            object.__setattr__(self, "mu", 1.0 / self.alpha)
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.p > 0 or self.q > 0:
            raise ValueError(f"p and q must be <= 0, got p={self.p}, q={self.q}")
        if not self.alpha + self.p > 0:
            raise ValueError(f"alpha + p must be positive, got {self.alpha + self.p}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.mu <= 1:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        if min(self.c_lambda, self.c_p, self.c_q) <= 0:
            raise ValueError("scale constants must be positive")
        if int(self.n_trunc) != self.n_trunc or self.n_trunc < 1:
            raise ValueError(f"n_trunc must be a positive integer, got {self.n_trunc}")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension}")
        object.__setattr__(self, "n_trunc", int(self.n_trunc))
        object.__setattr__(self, "dimension", int(self.dimension))
        if self.mu * self.alpha <= 1:
            # sum_i lambda_i^mu sup|e_i|^2 behaves like sum_i i^(-mu*alpha)
            warnings.warn(
                f"L-infinity embedding sum diverges for mu*alpha={self.mu * self.alpha:g} <= 1",
                RuntimeWarning,
                stacklevel=3,
            )

    # -- derived quantities -------------------------------------------------

    def spectrum(self, n_modes=None):
        """Eigenvalue arrays ``(lam, p, q)`` for modes ``1..n_modes``."""
        n = self.n_trunc if n_modes is None else int(n_modes)
        i = np.arange(1, n + 1, dtype=float)
        lam = self.c_lambda * i ** (-self.alpha)
        psym = self.c_p * i ** (-self.p)
        qsym = self.c_q * i ** (-self.q)
        return Spectrum(lam, psym, qsym)

    @property
    def kernel_bound(self):
        """Truncated sup_x K(x, x) = sum_i lambda_i sup e_i^2 (the constant R)."""
        lam = self.spectrum().lam
        return float(lam[0] + 2.0 * lam[1:].sum())

    @property
    def capacity_trace(self):
        """Truncated Q = tr(Sigma^{1/alpha})."""
        lam = self.spectrum().lam
        return float(np.sum(lam ** (1.0 / self.alpha)))

    @property
    def embedding_constant(self):
        """Truncated kappa_mu^2 = sum_i lambda_i^mu sup e_i^2."""
        lam = self.spectrum().lam
        return float(lam[0] ** self.mu + 2.0 * np.sum(lam[1:] ** self.mu))

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        if "alpha" in changes and "mu" not in changes and self.mu == 1.0 / self.alpha:
            values["mu"] = None
        return SpectrumSpec(**values)

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        return {key: getattr(self, key) for key in SPEC_KEYS}

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(SPEC_KEYS)
        if unknown:
            raise ValueError(f"unknown spectrum keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source):
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Explicit per-mode eigenvalues of the kernel, ``A1`` and ``A2``.

    Power-law specs produce one through :meth:`SpectrumSpec.spectrum`; the PDE
    operator sets produce one from exact Fourier symbols.
    """

    lam: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        for name in ("lam", "p", "q"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.lam.shape == self.p.shape == self.q.shape) or self.lam.ndim != 1:
            raise ValueError("lam, p and q must be 1-d arrays of equal length")
        if np.any(self.lam <= 0):
            raise ValueError("kernel eigenvalues must be positive")

    def __len__(self):
        return self.lam.shape[0]

    @property
    def n_modes(self):
        return self.lam.shape[0]

    @property
    def observation_symbol(self):
        """Symbol ``p_i / q_i`` of ``A = A2^{-1} A1``."""
        if np.any(self.q == 0):
            raise ZeroDivisionError("A2 symbol vanishes on a retained mode")
        return self.p / self.q

    @property
    def effective(self):
        """Eigenvalues ``lambda_i p_i`` of the population operator Sigma_{Id,A1}."""
        return self.lam * self.p

    def head(self, n_modes):
        return Spectrum(self.lam[:n_modes], self.p[:n_modes], self.q[:n_modes])


def as_spectrum(model, n_modes=None):
    if isinstance(model, Spectrum):
        return model if n_modes is None else model.head(n_modes)
    return model.spectrum(n_modes)


@dataclass(frozen=True, eq=False)
class FunctionCoeffs:
    """Coefficients ``(a_1, ..., a_N)`` of ``u = sum_i a_i e_i``."""

    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficients must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    def __len__(self):
        return self.coeffs.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coeffs, dtype=dtype)

    def __sub__(self, other):
        a, b = _aligned(self.coeffs, np.asarray(other))
        return FunctionCoeffs(a - b)

    def __add__(self, other):
        a, b = _aligned(self.coeffs, np.asarray(other))
        return FunctionCoeffs(a + b)

    def __mul__(self, scalar):
        return FunctionCoeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def padded(self, n):
        if n < len(self):
            raise ValueError("cannot pad to fewer modes")
        out = np.zeros(n)
        out[: len(self)] = self.coeffs
        return FunctionCoeffs(out)


def _aligned(a, b):
    n = max(a.shape[0], b.shape[0])
    out_a = np.zeros(n)
    out_b = np.zeros(n)
    out_a[: a.shape[0]] = a
    out_b[: b.shape[0]] = b
    return out_a, out_b


class Basis:
    """Real orthonormal Fourier basis on the torus ``[0, 1)^d``.

    Modes are ordered by nondecreasing ``|m|``, lexicographic tie-break on the
    frequency vector, cosine before sine.  Mode 1 is the constant.  Only one
    representative of each ``{m, -m}`` pair is kept (first nonzero entry
    positive), scaled by ``sqrt(2)`` so every mode has unit L2 norm.
    """

    def __init__(self, n_modes, dimension=1):
        if n_modes < 1:
            raise ValueError("basis needs at least one mode")
        self.n_modes = int(n_modes)
        self.dimension = int(dimension)
        self.frequencies, self.is_sine = _mode_table(self.n_modes, self.dimension)
        self.frequencies.setflags(write=False)
        self.is_sine.setflags(write=False)

    def __len__(self):
        return self.n_modes

    def __eq__(self, other):
        return isinstance(other, Basis) and (other.n_modes, other.dimension) == (
            self.n_modes,
            self.dimension,
        )

    def __hash__(self):
        return hash((self.n_modes, self.dimension))

    @property
    def mode_index(self):
        """Map from 1-based mode index to its frequency vector."""
        return {i + 1: tuple(int(v) for v in m) for i, m in enumerate(self.frequencies)}

    @property
    def wavenumber_sq(self):
        """``omega^2 = 4 pi^2 |m|^2`` per mode."""
        return 4.0 * np.pi**2 * np.sum(self.frequencies.astype(float) ** 2, axis=1)

    @property
    def sup_sq(self):
        """``sup_x e_i(x)^2``: 1 for the constant mode, 2 otherwise."""
        out = np.full(self.n_modes, 2.0)
        out[~np.any(self.frequencies != 0, axis=1)] = 1.0
        return out

    def design_matrix(self, xs, n_modes=None):
        """Matrix ``E[j, i] = e_i(x_j)`` for points ``xs`` of shape (n, d)."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dimension)
        k = self.n_modes if n_modes is None else int(n_modes)
        phase = 2.0 * np.pi * (xs @ self.frequencies[:k].T.astype(float))
        constant = ~np.any(self.frequencies[:k] != 0, axis=1)
        out = np.where(self.is_sine[:k], np.sin(phase), np.cos(phase)) * np.sqrt(2.0)
        out[:, constant] = 1.0
        return out

    def gradient_design(self, xs, n_modes=None):
        """Array ``D[c, j, i] = d/dx_c e_i(x_j)``."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dimension)
        k = self.n_modes if n_modes is None else int(n_modes)
        freq = self.frequencies[:k].astype(float)
        phase = 2.0 * np.pi * (xs @ freq.T)
        # d/dx cos = -sin, d/dx sin = cos, chain factor 2 pi m_c
        base = np.where(self.is_sine[:k], np.cos(phase), -np.sin(phase)) * np.sqrt(2.0)
        return np.stack([base * (2.0 * np.pi * freq[:, c]) for c in range(self.dimension)])


@lru_cache(maxsize=32)
def _mode_table(n_modes, dimension):
    radius = 1
    while True:
        grid = np.array(list(product(range(-radius, radius + 1), repeat=dimension)), dtype=np.int64)
        nonzero = grid[np.any(grid != 0, axis=1)]
        first = nonzero[np.arange(len(nonzero)), np.argmax(nonzero != 0, axis=1)]
        reps = nonzero[first > 0]
        norms = np.sum(reps**2, axis=1)
        # every frequency with |m| <= radius is inside the box, so the ordering
        # is final for all modes below that norm
        complete = reps[norms <= radius**2]
        if 1 + 2 * len(complete) >= n_modes:
            order = np.lexsort(tuple(complete[:, c] for c in reversed(range(dimension))) + (np.sum(complete**2, axis=1),))
            complete = complete[order]
            freqs = [np.zeros(dimension, dtype=np.int64)]
            sine = [False]
            for m in complete:
                freqs.extend([m, m])
                sine.extend([False, True])
            freqs = np.array(freqs[:n_modes])
            sine = np.array(sine[:n_modes])
            return freqs, sine
        radius *= 2


def eigenvalues(spec, i):
    """Return ``(lambda_i, p_i, q_i)`` for a 1-based mode index."""
    if not 1 <= i <= spec.n_trunc or int(i) != i:
        raise IndexError(f"mode index {i} outside 1..{spec.n_trunc}")
    return (
        spec.c_lambda * float(i) ** (-spec.alpha),
        spec.c_p * float(i) ** (-spec.p),
        spec.c_q * float(i) ** (-spec.q),
    )


def _norm_weights(model, gamma, n):
    lam = as_spectrum(model, n).lam if not isinstance(model, Spectrum) else model.lam[:n]
    if lam.shape[0] < n:
        raise ValueError(f"function has {n} coefficients but the model only {lam.shape[0]} modes")
    return lam ** (-float(gamma))


def power_norm(u, gamma, spec):
    """Gamma-power norm ``(sum_i lambda_i^{-gamma} a_i^2)^{1/2}``.

    Raises
    ------
    DivergenceError
        If the weighted sum overflows.
    """
    a = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("coefficients must be finite")
    with np.errstate(over="ignore"):
        terms = _norm_weights(spec, gamma, a.shape[0]) * a * a
        total = float(np.sum(terms))
    if not math.isfinite(total) or total > NORM_OVERFLOW:
        raise DivergenceError(f"gamma={gamma} norm diverges")
    return math.sqrt(total)


def power_norm_partial_sums(u, gamma, spec):
    """Cumulative squared gamma-norm ``S_N = sum_{i<=N} lambda_i^{-gamma} a_i^2``."""
    a = np.asarray(u, dtype=float)
    return np.cumsum(_norm_weights(spec, gamma, a.shape[0]) * a * a)


def diverges(u, gamma, spec, rel_growth=0.05):
    """Heuristic out-of-space flag from the last doubling of the partial sums.

    For a convergent series the mass contributed by modes ``N/2 < i <= N`` is a
    vanishing fraction of the total; a fraction above ``rel_growth`` is taken
    as evidence that the norm is infinite in the untruncated model.
    """
    sums = power_norm_partial_sums(u, gamma, spec)
    n = sums.shape[0]
    if n < 4 or not np.isfinite(sums[-1]) or sums[-1] > NORM_OVERFLOW:
        return bool(n >= 1 and (not np.isfinite(sums[-1]) or sums[-1] > NORM_OVERFLOW))
    total = sums[-1]
    if total == 0:
        return False
    return bool((total - sums[n // 2 - 1]) / total > rel_growth)


def apply_operator(u, which, spec, s=None):
    """Apply a diagonal operator coefficient-wise.

    ``which`` is one of ``"A1"``, ``"A2"``, ``"A"`` (the observation operator
    ``A2^{-1} A1``) or ``"L_power"`` (``L^s``, requires ``s``).
    """
    a = np.asarray(u, dtype=float)
    sp = as_spectrum(spec, a.shape[0]) if not isinstance(spec, Spectrum) else spec.head(a.shape[0])
    if which == "A1":
        out = sp.p * a
    elif which == "A2":
        out = sp.q * a
    elif which == "A":
        if np.any(sp.q == 0):
            raise ZeroDivisionError("A2 symbol vanishes on a retained mode")
        out = sp.p / sp.q * a
    elif which in ("L_power", "L"):
        if s is None:
            raise ValueError("L_power needs an exponent s")
        out = sp.lam ** float(s) * a
    else:
        raise ValueError(f"unknown operator {which!r}")
    return FunctionCoeffs(out)


def make_target(spec, delta=0.05, scale=1.0, n_modes=None):
    """Target ``u* = L^{beta/2} phi`` with ``phi_i = scale * i^{-(1/2 + delta)}``.

    The resulting coefficients ``a_i = scale * lambda_i^{beta/2} i^{-(1/2+delta)}``
    have ``||u*||_beta^2 = scale^2 sum_i i^{-(1+2 delta)}`` and, as ``delta``
    shrinks, no extra smoothness beyond order ``beta``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    n = spec.n_trunc if n_modes is None else int(n_modes)
    i = np.arange(1, n + 1, dtype=float)
    lam = spec.c_lambda * i ** (-spec.alpha)
    return FunctionCoeffs(scale * lam ** (spec.beta / 2.0) * i ** (-(0.5 + delta)))


def target_tail_mass(spec, delta, scale=1.0, gamma=0.0, n_modes=None):
    """Integral estimate of ``sum_{i > N} lambda_i^{-gamma} a_i^2`` for :func:`make_target`.

    Returns ``inf`` when the untruncated gamma-norm of the target is infinite.
    """
    n = spec.n_trunc if n_modes is None else int(n_modes)
    decay = spec.alpha * (spec.beta - gamma) + 2.0 * delta
    if decay <= 0:
        return math.inf
    const = scale**2 * spec.c_lambda ** (spec.beta - gamma)
    # integral of tau^{-(1+decay)} from N + 1/2 (midpoint correction)
    return const * (n + 0.5) ** (-decay) / decay


def eval_function(u, x, basis):
    """Pointwise synthesis ``sum_i a_i e_i(x)``; ``x`` may hold several points."""
    a = np.asarray(u, dtype=float)
    if a.shape[0] > len(basis):
        raise ValueError("more coefficients than basis functions")
    xs = np.asarray(x, dtype=float)
    single = xs.ndim == 0 or (xs.ndim == 1 and basis.dimension > 1 and xs.shape[0] == basis.dimension)
    values = basis.design_matrix(xs.reshape(-1, basis.dimension), n_modes=a.shape[0]) @ a
    return float(values[0]) if single else values
