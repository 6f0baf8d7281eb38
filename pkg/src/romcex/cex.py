"""Conditional expectation by least squares over ensembles.

The conditional expectation of ``x`` given ``z`` is approximated by the
minimizer of the sampled quadratic loss ``mean ||x - phi(z)||^2`` over a
subspace of functions ``phi``: constants (the plain mean), affine maps (the
Kalman gain) or polynomials of bounded total degree.

Ensembles store samples as columns: ``x`` is ``(d_x, N)`` and ``z`` is
``(d_z, N)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import lstsq

from .exceptions import DomainError, SizeError, SupportError
from .linalg import chol_psd

__all__ = [
    "EnsembleState",
    "AffineCexMap",
    "PolynomialCexMap",
    "ConditionalProbability",
    "QuadratureResult",
    "expectation",
    "sampled_loss",
    "cex_affine",
    "gmkf_update",
    "monomial_exponents",
    "monomial_features",
    "cex_polynomial",
    "conditional_probability",
    "bayes_quadrature_1d",
    "galerkin_residual",
    "linear_gaussian_ensemble",
    "linear_gaussian_posterior",
]

MAX_FEATURES = 2000


@dataclass(frozen=True)
class EnsembleState:
    x: np.ndarray
    z: np.ndarray
    seed: int = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if x.shape[1] != z.shape[1]:
            raise DomainError(f"x has {x.shape[1]} samples but z has {z.shape[1]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def size(self):
        return self.x.shape[1]

    def save(self, stem):
        """Write ``<stem>.x.csv``, ``<stem>.z.csv`` and a ``<stem>.json`` sidecar."""
        from .io import atomic_write, canonical_json, matrix_to_csv

        stem = Path(stem)
        atomic_write(stem.with_suffix(".x.csv"), matrix_to_csv(self.x))
        atomic_write(stem.with_suffix(".z.csv"), matrix_to_csv(self.z))
        atomic_write(stem.with_suffix(".json"), canonical_json({"seed": self.seed, "size": self.size, **self.meta}))

    @classmethod
    def load(cls, stem):
        from .linalg import read_matrix_csv

        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        seed = meta.pop("seed", None)
        meta.pop("size", None)
        return cls(read_matrix_csv(stem.with_suffix(".x.csv")), read_matrix_csv(stem.with_suffix(".z.csv")),
                   seed, meta)


def _samples(ensemble, which):
    if which not in ("x", "z"):
        raise DomainError("component selector must be 'x' or 'z'")
    return getattr(ensemble, which)


def expectation(ensemble: EnsembleState, which="x"):
    """Sample mean, i.e. the constant minimizing the sampled quadratic loss."""
    v = _samples(ensemble, which)
    if v.shape[1] == 0:
        raise DomainError("ensemble is empty")
    return v.mean(axis=1)


def sampled_loss(x, prediction):
    """``mean_k ||x_k - prediction_k||^2`` over sample columns."""
    d = np.atleast_2d(x) - np.atleast_2d(prediction)
    return float(np.mean(np.sum(d * d, axis=0)))


@dataclass(frozen=True)
class AffineCexMap:
    """``phi(z) = gain @ z + offset``."""

    gain: np.ndarray
    offset: np.ndarray
    jitter: float = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return self.gain @ z + self.offset
        return self.gain @ z + self.offset[:, None]


def _cov(a, b):
    n = a.shape[1]
    if n < 2:
        raise DomainError("at least two samples are needed for a covariance")
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    return ac @ bc.T / (n - 1)


def cex_affine(ensemble: EnsembleState):
    """Gauss-Markov affine estimator from sample moments.

    ``K = C_xz C_z^{-1}`` and ``a = xbar - K zbar``. ``C_z`` is factorized
    by :func:`romcex.linalg.chol_psd`, so a singular ``C_z`` is regularized
    by jitter and a :class:`~romcex.exceptions.ConditioningError` is raised
    past the jitter cap.
    """
    x, z = ensemble.x, ensemble.z
    c_z = _cov(z, z)
    c_xz = _cov(x, z)
    chol = chol_psd(0.5 * (c_z + c_z.T))
    gain = chol.solve(c_xz.T).T
    offset = x.mean(axis=1) - gain @ z.mean(axis=1)
    return AffineCexMap(gain, offset, chol.jitter_used)


def gmkf_update(ensemble: EnsembleState, observation, cex_map: AffineCexMap = None):
    """Ensemble Gauss-Markov-Kalman update ``x_a = x + K (y - z)`` column-wise."""
    cex_map = cex_affine(ensemble) if cex_map is None else cex_map
    y = np.asarray(observation, dtype=float).reshape(-1, 1)
    if y.shape[0] != ensemble.z.shape[0]:
        raise DomainError("observation dimension does not match z")
    return ensemble.x + cex_map.gain @ (y - ensemble.z)


def monomial_exponents(dim, degree, max_features=MAX_FEATURES):
    """All exponent tuples of total degree ``<= degree`` in ``dim`` variables, graded order."""
    if degree < 0:
        raise DomainError("degree must be nonnegative")
    from math import comb

    count = comb(dim + degree, degree)
    if count > max_features:
        raise SizeError(f"{count} monomial features exceed the cap of {max_features}")
    out = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), total):
            e = [0] * dim
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


def monomial_features(z, exponents):
    """Feature matrix ``(n_features, N)`` of monomials evaluated at sample columns."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    feats = np.ones((len(exponents), z.shape[1]))
    for r, e in enumerate(exponents):
        for i, p in enumerate(e):
            if p:
                feats[r] *= z[i] ** p
    return feats


@dataclass(frozen=True)
class PolynomialCexMap:
    """``phi(z) = coefficients @ monomials(z)``."""

    exponents: tuple
    coefficients: np.ndarray
    rank: int = None

    @property
    def degree(self):
        return max((sum(e) for e in self.exponents), default=0)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        feats = monomial_features(z.reshape(-1, 1) if single else z, self.exponents)
        out = self.coefficients @ feats
        return out[:, 0] if single else out


def _regress(target, features):
    # column scaling keeps high-degree monomials from dominating the conditioning
    scale = np.sqrt(np.mean(features**2, axis=1))
    scale[scale == 0] = 1.0
    coef, _, rank, _ = lstsq((features / scale[:, None]).T, target.T, lapack_driver="gelsd")
    return (coef.T / scale), int(rank)


def cex_polynomial(ensemble: EnsembleState, degree, max_features=MAX_FEATURES):
    """Least-squares regression of ``x`` on all monomials of ``z`` up to ``degree``.

    Rank-deficient feature sets are handled by the minimum-norm solution; the
    numerical rank is stored on the returned map.
    """
    if degree < 1:
        raise DomainError("degree must be at least 1")
    exps = tuple(monomial_exponents(ensemble.z.shape[0], degree, max_features))
    coef, rank = _regress(ensemble.x, monomial_features(ensemble.z, exps))
    return PolynomialCexMap(exps, coef, rank)


@dataclass(frozen=True)
class ConditionalProbability:
    value: float
    raw: float
    clamped: bool


def conditional_probability(ensemble: EnsembleState, event: Callable, observation, degree=1):
    """Probability of ``event(x)`` given ``z = observation``.

    The indicator random variable is projected onto polynomials of ``z``; the
    fitted map evaluated at the observation is clamped to ``[0, 1]``.
    """
    indicator = np.asarray([bool(event(col)) for col in ensemble.x.T], dtype=float)
    ind_ens = EnsembleState(indicator[None, :], ensemble.z, ensemble.seed)
    fit = cex_polynomial(ind_ens, degree)
    raw = float(fit(np.atleast_1d(np.asarray(observation, dtype=float)))[0])
    value = min(1.0, max(0.0, raw))
    return ConditionalProbability(value, raw, value != raw)


def galerkin_residual(ensemble: EnsembleState, fitted, degree):
    """Sampled correlations ``mean (x - phi(z)) chi(z)`` for monomial tests ``chi``.

    Returns an array ``(d_x, n_features)``; it vanishes for test features
    inside the space the map was fitted on.
    """
    exps = monomial_exponents(ensemble.z.shape[0], degree)
    resid = ensemble.x - fitted(ensemble.z)
    feats = monomial_features(ensemble.z, exps)
    return resid @ feats.T / ensemble.size


@dataclass(frozen=True)
class QuadratureResult:
    mean: float
    variance: float
    pdf: np.ndarray
    grid: np.ndarray
    evidence: float


def bayes_quadrature_1d(prior_pdf, likelihood, observation, grid):
    """Posterior of a scalar parameter by trapezoidal quadrature of Bayes' rule.

    ``likelihood(observation, x)`` is evaluated on the grid; the evidence
    (normalizing constant) must exceed ``1e-300``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be an increasing 1-d array of at least 3 points")
    prior = np.asarray(prior_pdf(grid), dtype=float)
    like = np.broadcast_to(np.asarray(likelihood(observation, grid), dtype=float), grid.shape)
    joint = prior * like
    evidence = float(trapezoid(joint, grid))
    if not evidence > 1e-300:
        raise SupportError(f"evidence {evidence:.3e} vanishes on the grid")
    post = joint / evidence
    mean = float(trapezoid(grid * post, grid))
    var = float(trapezoid((grid - mean) ** 2 * post, grid))
    return QuadratureResult(mean, var, post, grid, evidence)


def linear_gaussian_ensemble(n, prior_mean=0.0, prior_std=1.0, coefficient=1.0, noise_std=1.0, seed=0):
    """Scalar ensemble ``x ~ N(m, s^2)``, ``z = h x + eps`` with ``eps ~ N(0, sigma^2)``."""
    rng = np.random.default_rng(seed)
    x = prior_mean + prior_std * rng.standard_normal(n)
    z = coefficient * x + noise_std * rng.standard_normal(n)
    meta = {"prior_mean": prior_mean, "prior_std": prior_std, "coefficient": coefficient, "noise_std": noise_std}
    return EnsembleState(x[None, :], z[None, :], seed, meta)


def linear_gaussian_posterior(observation, prior_mean=0.0, prior_std=1.0, coefficient=1.0, noise_std=1.0):
    """Closed-form conjugate posterior ``(mean, variance)``."""
    prec = 1.0 / prior_std**2 + coefficient**2 / noise_std**2
    var = 1.0 / prec
    mean = var * (prior_mean / prior_std**2 + coefficient * observation / noise_std**2)
    return mean, var
