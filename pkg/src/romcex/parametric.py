"""Snapshot sets viewed as linear maps, their correlations and the KLE.

A :class:`SnapshotSet` carries states ``r(mu_k)`` as columns together with
probability weights ``rho_k``. The associated linear map is represented by
the matrix ``R`` with rows ``sqrt(rho_k) r(mu_k)^T``; with this scaling the
adjoint is a plain transpose and ``R^T R`` is the weighted correlation of the
states.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError
from .linalg import svd

__all__ = [
    "SnapshotSet",
    "CorrelationPair",
    "KleBasis",
    "build_map",
    "correlation_u",
    "gram_kernel",
    "kle",
    "reconstruct",
    "reconstruction_error",
    "truncate_by_threshold",
]


@dataclass(frozen=True)
class SnapshotSet:
    """States ``(n, m)`` for ``m`` parameter points with weights summing to one."""

    params: np.ndarray
    states: np.ndarray
    weights: np.ndarray = None
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        m = states.shape[1]
        params = np.asarray(self.params, dtype=float)
        if params.ndim == 1:
            if params.size % m:
                raise DomainError(f"{params.size} parameter values do not split over {m} snapshots")
            params = params.reshape(m, -1) if params.size else np.zeros((m, 0))
        weights = np.full(m, 1.0 / m) if self.weights is None else np.asarray(self.weights, dtype=float)
        if params.shape[0] != m or weights.shape != (m,):
            raise DomainError(
                f"{m} state columns but {params.shape[0]} parameters and {weights.shape[0]} weights"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1")
        if not np.all(np.isfinite(states)):
            raise DomainError("states must be finite")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "weights", weights)

    @property
    def n_states(self):
        return self.states.shape[0]

    @property
    def n_snapshots(self):
        return self.states.shape[1]

    def energy(self):
        """Weighted total energy ``sum_k rho_k ||r_k||^2``."""
        return float(np.sum(self.weights * np.sum(self.states**2, axis=0)))

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.params, self.states, self.weights):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class CorrelationPair:
    c_u: np.ndarray
    c_q: np.ndarray


@dataclass(frozen=True)
class KleBasis:
    """Singular triplets ``(sigma_j, v_j, s_j)`` of the scaled snapshot map.

    ``modes`` holds the ``v_j`` as columns (n, r); ``param_functions`` holds
    ``s_j(mu_k)`` as columns (m, r).
    """

    sigmas: np.ndarray
    modes: np.ndarray
    param_functions: np.ndarray
    weights: np.ndarray
    tol: float = 1e-12
    source_digest: str = ""

    @property
    def rank(self):
        return len(self.sigmas)

    def tail_energy(self, rank):
        return float(np.sum(self.sigmas[rank:] ** 2))


def build_map(snapshots: SnapshotSet):
    """Matrix of the parametric map: row ``k`` is ``sqrt(rho_k) r(mu_k)``."""
    return np.sqrt(snapshots.weights)[:, None] * snapshots.states.T


def correlation_u(snapshots: SnapshotSet):
    """State correlation ``sum_k rho_k r_k r_k^T`` and weighted Gram ``R R^T``."""
    r = build_map(snapshots)
    c_u = r.T @ r
    c_q = r @ r.T
    return CorrelationPair(0.5 * (c_u + c_u.T), 0.5 * (c_q + c_q.T))


def gram_kernel(snapshots: SnapshotSet):
    """Unweighted kernel ``<r(mu_i), r(mu_j)>`` on the snapshot parameters."""
    k = snapshots.states.T @ snapshots.states
    return 0.5 * (k + k.T)


def kle(snapshots: SnapshotSet, tol=1e-12):
    """Karhunen-Loeve expansion of the snapshots.

    The SVD of the scaled map gives ``sigma_j`` and the modes ``v_j``;
    parameter functions are recovered as ``s_j(mu_k) = <r(mu_k), v_j> / sigma_j``.
    Components with ``sigma_j <= tol * sigma_1`` are dropped, so an all-zero
    snapshot set yields an empty basis.
    """
    res = svd(build_map(snapshots), tol=tol)
    sig = res.singular_values
    keep = sig > tol * sig[0] if sig.size and sig[0] > 0 else np.zeros(sig.size, dtype=bool)
    sig = sig[keep]
    modes = res.right[:, keep]
    s = (snapshots.states.T @ modes) / sig if sig.size else np.zeros((snapshots.n_snapshots, 0))
    return KleBasis(sig, modes, s, snapshots.weights.copy(), tol, snapshots.digest())


def reconstruct(basis: KleBasis, rank, k=None):
    """``sum_{j <= rank} sigma_j s_j(mu_k) v_j``; all snapshots when ``k`` is None."""
    if not 0 <= rank <= basis.rank:
        raise DomainError(f"rank must be in 0..{basis.rank}, got {rank}")
    m = basis.param_functions.shape[0]
    if k is not None and not 0 <= k < m:
        raise DomainError(f"parameter index {k} out of range 0..{m - 1}")
    coeff = basis.param_functions[:, :rank] * basis.sigmas[:rank]
    full = basis.modes[:, :rank] @ coeff.T
    return full if k is None else full[:, k]


def reconstruction_error(snapshots: SnapshotSet, basis: KleBasis, rank):
    """Weighted squared error ``sum_k rho_k ||r_k - r_rank(mu_k)||^2``."""
    diff = snapshots.states - reconstruct(basis, rank)
    return float(np.sum(snapshots.weights * np.sum(diff**2, axis=0)))


def truncate_by_threshold(basis: KleBasis, a):
    """Keep only the triplets with ``sigma_j >= a``."""
    if a <= 0:
        raise DomainError("threshold must be positive")
    m = int(np.count_nonzero(basis.sigmas >= a))
    return KleBasis(
        basis.sigmas[:m].copy(),
        basis.modes[:, :m].copy(),
        basis.param_functions[:, :m].copy(),
        basis.weights,
        basis.tol,
        basis.source_digest,
    )
