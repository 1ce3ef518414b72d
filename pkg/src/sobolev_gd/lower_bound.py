"""Packing construction for the minimax lower bound and its numerical certification.

A binary codebook with large pairwise Hamming distance indexes a family of
functions supported on modes ``m+1 .. 2m``.  Each member is scaled so its
``gamma``-norm equals ``eps * weight / m``, which turns Hamming distance into
``gamma``-separation.  Fano's inequality then converts the Kullback-Leibler
spread of the observation images into a lower bound on testing error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .simulate import make_rng
from .spectral_core import FunctionCoeffs, apply_operator

__all__ = [
    "Codebook",
    "HypothesisFamily",
    "CertificationReport",
    "FanoResult",
    "pairwise_hamming",
    "gilbert_varshamov",
    "m_budgets",
    "budget_m",
    "build_hypotheses",
    "certify_family",
    "fano_bound",
]

SEPARATION_RTOL = 1e-12


def pairwise_hamming(words):
    """Full ``M x M`` Hamming distance matrix of 0/1 rows."""
    w = np.asarray(words, dtype=np.int64)
    return w @ (1 - w).T + (1 - w) @ w.T


@dataclass(frozen=True, eq=False)
class Codebook:
    """Binary words of length ``m``; row 0 is the all-zero word."""

    m: int
    words: np.ndarray
    min_pairwise_hamming: int

    def __post_init__(self):
        w = np.array(self.words, dtype=np.uint8)
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    def __len__(self):
        return self.words.shape[0]

    @property
    def bitstrings(self):
        return ["".join(map(str, row)) for row in self.words]


def gilbert_varshamov(m, seed=0, max_tries=100_000, min_distance=None, size=None):
    """Randomized greedy code with pairwise Hamming distance ``>= ceil(m/8)``.

    Candidates are drawn uniformly and kept when far from every kept word,
    until ``size`` words (default ``2**ceil(m/8)``) are found.  The result is
    verified exhaustively before it is returned.

    Raises
    ------
    RuntimeError
        If ``max_tries`` candidates were drawn without reaching ``size``.
    """
    if m < 8:
        raise ValueError("block length must be at least 8")
    dmin = math.ceil(m / 8) if min_distance is None else int(min_distance)
    target = 2 ** math.ceil(m / 8) if size is None else int(size)
    rng = make_rng(seed)
    kept = np.zeros((target, m), dtype=np.int64)
    count = 1
    tries = 0
    batch = 256
    while count < target:
        if tries >= max_tries:
            raise RuntimeError(
                f"found {count} of {target} words in {max_tries} tries; raise max_tries"
            )
        cand = rng.integers(0, 2, size=(min(batch, max_tries - tries), m))
        tries += cand.shape[0]
        for c in cand:
            dist = np.count_nonzero(kept[:count] != c, axis=1)
            if dist.min() >= dmin:
                kept[count] = c
                count += 1
                if count == target:
                    break
    ham = pairwise_hamming(kept)
    np.fill_diagonal(ham, m + 1)
    observed = int(ham.min()) if target > 1 else m
    if observed < dmin:
        raise AssertionError(f"verification failed: min distance {observed} < {dmin}")
    return Codebook(m, kept, observed)


def m_budgets(spec, epsilon, gamma_eval=0.0, const=1.0):
    """Largest block lengths allowed by the ``beta`` and ``mu`` budgets.

    Returns a dict; the ``mu`` entry is omitted when ``mu <= gamma_eval``
    (no constraint).
    """
    out = {"beta": const * epsilon ** (-1.0 / (spec.alpha * (spec.beta - gamma_eval)))}
    if spec.mu > gamma_eval:
        out["mu"] = const * epsilon ** (-1.0 / (spec.alpha * (spec.mu - gamma_eval)))
    return out


def budget_m(spec, epsilon, gamma_eval=0.0, const=1.0, cap=None):
    """Largest multiple of 8 within both budgets (and ``cap``)."""
    limit = min(m_budgets(spec, epsilon, gamma_eval, const).values())
    if cap is not None:
        limit = min(limit, cap)
    m = 8 * int(math.floor(limit / 8))
    if m < 8:
        raise ValueError(f"budgets allow no block length >= 8 at epsilon={epsilon}")
    return m


@dataclass(frozen=True, eq=False)
class HypothesisFamily:
    epsilon: float
    m: int
    gamma_eval: float
    code: Codebook
    hypotheses: np.ndarray
    images: np.ndarray
    spec: object = field(repr=False)

    def __len__(self):
        return self.hypotheses.shape[0]

    def hypothesis(self, k):
        return FunctionCoeffs(self.hypotheses[k])

    def image(self, k):
        return FunctionCoeffs(self.images[k])

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "m": self.m,
            "gamma_eval": self.gamma_eval,
            "codewords": self.code.bitstrings,
            "hypotheses": [list(map(float, row)) for row in self.hypotheses],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def build_hypotheses(spec, epsilon, m, code, gamma_eval=0.0, budget_const=1.0):
    """``u_w = (eps/m)^(1/2) sum_i w_i lam_{i+m}^(gamma/2) e_{i+m}`` for every codeword.

    Raises
    ------
    ValueError
        If ``2m`` exceeds the truncation or ``m`` breaks an m-budget.
    """
    if code.m != m:
        raise ValueError("codebook block length differs from m")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if gamma_eval >= spec.beta:
        raise ValueError("gamma_eval must be below beta")
    if 2 * m > spec.n_trunc:
        raise ValueError(f"2m = {2 * m} exceeds n_trunc = {spec.n_trunc}")
    for name, limit in m_budgets(spec, epsilon, gamma_eval, budget_const).items():
        if m > limit * (1 + 1e-12):
            raise ValueError(f"m = {m} violates the {name}-budget {limit:.6g}")
    lam = spec.spectrum(2 * m).lam[m:]
    scale = math.sqrt(epsilon / m) * lam ** (gamma_eval / 2.0)
    hyp = np.zeros((len(code), 2 * m))
    hyp[:, m:] = code.words * scale
    images = np.array([np.asarray(apply_operator(FunctionCoeffs(h), "A", spec)) for h in hyp])
    hyp.setflags(write=False)
    images.setflags(write=False)
    return HypothesisFamily(float(epsilon), int(m), float(gamma_eval), code, hyp, images, spec)


def _norms_sq(coeffs, lam, power):
    return (coeffs**2 * lam ** (-power)).sum(axis=1)


@dataclass(frozen=True)
class CertificationReport:
    max_beta_norm_sq: float
    beta_norm_limit: float
    max_mu_norm_sq: float
    min_separation_sq: float
    separation_threshold: float
    separation_identity_error: float
    beta_ok: bool
    separation_ok: bool
    identity_ok: bool

    @property
    def passed(self):
        return self.beta_ok and self.separation_ok and self.identity_ok

    def to_dict(self):
        out = dict(self.__dict__)
        out["passed"] = self.passed
        return out


def certify_family(family, spec, beta_norm_limit=None, budget_const=1.0):
    """Check norms, separation and the Hamming-to-distance identity of a family.

    The default ``beta_norm_limit`` is ``(2c)^(alpha (beta - gamma)) c_lambda^(gamma - beta)``,
    which any family within the ``beta``-budget with constant ``c`` obeys.
    """
    g = family.gamma_eval
    if beta_norm_limit is None:
        beta_norm_limit = (2 * budget_const) ** (spec.alpha * (spec.beta - g)) * spec.c_lambda ** (g - spec.beta)
    lam = spec.spectrum(family.hypotheses.shape[1]).lam
    U = family.hypotheses
    beta_sq = _norms_sq(U, lam, spec.beta)
    mu_sq = _norms_sq(U, lam, spec.mu)
    if len(family) < 2:
        min_sep, ident_err = math.inf, 0.0
    else:
        V = U * lam ** (-g / 2.0)
        sq = (V**2).sum(axis=1)
        dist = sq[:, None] + sq[None, :] - 2.0 * V @ V.T
        predicted = family.epsilon / family.m * pairwise_hamming(family.code.words)
        ident_err = float(np.max(np.abs(dist - predicted)))
        off = ~np.eye(len(family), dtype=bool)
        min_sep = float(dist[off].min())
    threshold = family.epsilon / 8.0
    tol = SEPARATION_RTOL * max(family.epsilon, 1e-300)
    return CertificationReport(
        max_beta_norm_sq=float(beta_sq.max()),
        beta_norm_limit=float(beta_norm_limit),
        max_mu_norm_sq=float(mu_sq.max()),
        min_separation_sq=min_sep,
        separation_threshold=threshold,
        separation_identity_error=ident_err,
        beta_ok=bool(beta_sq.max() <= beta_norm_limit),
        separation_ok=bool(min_sep >= threshold - tol),
        identity_ok=bool(ident_err <= tol),
    )


@dataclass(frozen=True)
class FanoResult:
    mutual_info_bound: float
    failure_prob_lower_bound: float
    rate_exponent: float
    epsilon_rate: float


def fano_bound(family, n, sigma, L=None):
    """Fano lower bound on the probability of misidentifying the hypothesis.

    ``I <= n / (2 sbar^2 M) sum_j ||f_j - f_0||^2`` with ``sbar = min(sigma, L)``;
    the failure bound ``1 - (I + log 2) / log M`` is clamped to ``[0, 1]``.
    ``rate_exponent`` is the exponent of ``n`` in the matched separation
    ``eps(n) = n**rate_exponent``.
    """
    M = len(family)
    if M < 2:
        raise ValueError("need at least two hypotheses")
    sbar = min(sigma, sigma if L is None else L)
    if not sbar > 0:
        raise ValueError("noise level must be positive")
    diffs = family.images - family.images[0]
    info = n / (2.0 * sbar**2 * M) * float((diffs**2).sum())
    failure = min(1.0, max(0.0, 1.0 - (info + math.log(2.0)) / math.log(M)))
    spec, g = family.spec, family.gamma_eval
    b = max(spec.beta, spec.mu)
    exponent = -(b - g) * spec.alpha / (b * spec.alpha + 2.0 * (spec.p - spec.q) + 1.0)
    return FanoResult(info, failure, exponent, float(n) ** exponent)
