"""Modelling- and numerical-error random variables on a product sample space.

Two additive error channels perturb states: ``eta_M`` (modelling error) and
``eta_N`` (numerical error). They are drawn from independent streams, so a
grid of ``N_M x N_N`` draws is a sample of the product measure and nested
means over it are Fubini integrals.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable

import numpy as np

from .exceptions import DomainError
from .gpe import KernelSpec
from .linalg import matrix_sqrt_psd
from .parametric import SnapshotSet

__all__ = [
    "NoiseSpec",
    "ProductSampler",
    "TotalExpectation",
    "perturb_snapshots",
    "total_expectation",
    "generalized_loss",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian error: iid with std ``scale``, or correlated over state
    indices with covariance ``scale^2 * kernel(i, j)``."""

    kind: str = "iid-gaussian"
    scale: float = 0.0
    label: str = "eta_M"
    kernel: KernelSpec = None

    def __post_init__(self):
        if self.kind not in ("iid-gaussian", "correlated-gaussian"):
            raise DomainError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise DomainError("noise scale must be nonnegative")
        if self.label not in ("eta_M", "eta_N"):
            raise DomainError("label must be 'eta_M' or 'eta_N'")
        if self.kind == "correlated-gaussian" and self.kernel is None:
            object.__setattr__(self, "kernel", KernelSpec("exponential", length_scale=1.0))

    def covariance(self, dim):
        if self.kind == "iid-gaussian":
            return self.scale**2 * np.eye(dim)
        idx = np.arange(dim, dtype=float).reshape(-1, 1)
        k = self.kernel(idx, idx) / self.kernel.amplitude**2
        return self.scale**2 * k

    def draw(self, rng, count, dim):
        """``(count, dim)`` samples."""
        white = rng.standard_normal((count, dim))
        if self.scale == 0:
            return np.zeros((count, dim))
        if self.kind == "iid-gaussian":
            return self.scale * white
        root = matrix_sqrt_psd(self.covariance(dim))
        return white @ root

    def energy(self, dim):
        """``E ||eta||^2``."""
        return float(np.trace(self.covariance(dim)))

    def to_dict(self):
        d = {"kind": self.kind, "scale": self.scale, "label": self.label}
        if self.kind == "correlated-gaussian":
            d["kernel"] = self.kernel.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, label=None):
        kern = d.get("kernel")
        return cls(d.get("kind", "iid-gaussian"), float(d.get("scale", 0.0)), label or d.get("label", "eta_M"),
                   None if kern is None else KernelSpec.from_dict(kern))


@dataclass(frozen=True)
class ProductSampler:
    spec_m: NoiseSpec
    spec_n: NoiseSpec
    seed: int = 0
    counts: tuple = (100, 100)

    def __post_init__(self):
        if self.spec_m.label != "eta_M":
            object.__setattr__(self, "spec_m", replace(self.spec_m, label="eta_M"))
        if self.spec_n.label != "eta_N":
            object.__setattr__(self, "spec_n", replace(self.spec_n, label="eta_N"))
        if len(self.counts) != 2 or min(self.counts) < 1:
            raise DomainError("counts must be two positive integers")

    def _rng(self, channel, purpose=0):
        return np.random.default_rng([int(self.seed), channel, purpose])

    def draws_m(self, dim, count=None, purpose=0):
        return self.spec_m.draw(self._rng(0, purpose), self.counts[0] if count is None else count, dim)

    def draws_n(self, dim, count=None, purpose=0):
        return self.spec_n.draw(self._rng(1, purpose), self.counts[1] if count is None else count, dim)

    def to_dict(self):
        return {"eta_m": self.spec_m.to_dict(), "eta_n": self.spec_n.to_dict(), "seed": self.seed,
                "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d):
        return cls(NoiseSpec.from_dict(d.get("eta_m", {}), "eta_M"), NoiseSpec.from_dict(d.get("eta_n", {}), "eta_N"),
                   int(d.get("seed", 0)), tuple(d.get("counts", (100, 100))))


def perturb_snapshots(snapshots: SnapshotSet, sampler: ProductSampler):
    """Replace each state ``r_k`` by ``r_k + eta_M + eta_N`` with one draw of each per column."""
    n, m = snapshots.states.shape
    eta_m = sampler.draws_m(n, count=m, purpose=1)
    eta_n = sampler.draws_n(n, count=m, purpose=1)
    prov = dict(snapshots.provenance)
    prov.update({"perturbation": sampler.to_dict(), "eta_m": eta_m.tolist(), "eta_n": eta_n.tolist()})
    return SnapshotSet(snapshots.params, snapshots.states + eta_m.T + eta_n.T, snapshots.weights, prov)


@dataclass(frozen=True)
class TotalExpectation:
    value: float
    nested: Fraction
    flat: Fraction


def total_expectation(evaluator: Callable, sampler: ProductSampler, dim=1):
    """Mean of ``evaluator(eta_m, eta_n)`` over the product grid of draws.

    The inner mean over ``eta_M`` and the outer mean over ``eta_N`` are
    accumulated in exact rational arithmetic, as is the flat mean over all
    ``N_M * N_N`` pairs; the two must agree exactly and the result is rounded
    to float once.
    """
    em = sampler.draws_m(dim)
    en = sampler.draws_n(dim)
    n_m, n_n = len(em), len(en)
    values = [[Fraction(float(evaluator(em[i], en[j]))) for i in range(n_m)] for j in range(n_n)]
    nested = sum((sum(col, Fraction(0)) / n_m for col in values), Fraction(0)) / n_n
    flat = sum((v for col in values for v in col), Fraction(0)) / (n_m * n_n)
    if nested != flat:
        raise AssertionError("nested and flat means disagree")
    return TotalExpectation(float(nested), nested, flat)


def generalized_loss(x_samples, candidate_map: Callable, z_samples, sampler: ProductSampler, weights=None):
    """Loss ``E ||r(mu, omega) - chi(z)||^2`` with ``r(mu, omega) = r(mu) + eta_M + eta_N``.

    The expectation is the ``rho``-weighted sum over parameter columns of the
    mean over the ``N_M x N_N`` grid of error draws. ``candidate_map`` maps a
    column of ``z_samples`` to a state-sized vector.
    """
    if isinstance(x_samples, SnapshotSet):
        weights = x_samples.weights if weights is None else weights
        x_samples = x_samples.states
    x = np.atleast_2d(np.asarray(x_samples, dtype=float))
    z = np.atleast_2d(np.asarray(z_samples, dtype=float))
    n, m = x.shape
    if z.shape[1] != m:
        raise DomainError("x and z must have the same number of columns")
    weights = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=float)
    em = sampler.draws_m(n)
    en = sampler.draws_n(n)
    total = 0.0
    for k in range(m):
        pred = np.asarray(candidate_map(z[:, k]), dtype=float)
        if pred.shape != (n,):
            raise DomainError("candidate map must return a state-sized vector")
        e = x[:, k] - pred
        # mean over the grid of ||e + a_i + b_j||^2, expanded to avoid the 3-way array
        a, b = em, en
        val = (e @ e + np.mean(np.sum(a * a, axis=1)) + np.mean(np.sum(b * b, axis=1))
               + 2 * e @ a.mean(axis=0) + 2 * e @ b.mean(axis=0) + 2 * a.mean(axis=0) @ b.mean(axis=0))
        total += weights[k] * val
    return float(total)
