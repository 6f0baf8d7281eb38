"""Reduced-order model builders: POD, reduced basis method, low-rank tensors."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lstsq

from .exceptions import CoercivityError, ConditioningError, DomainError
from .linalg import gram_schmidt, svd
from .parametric import SnapshotSet, build_map

logger = logging.getLogger(__name__)

__all__ = [
    "PodBasis",
    "AffineOperator",
    "RbmModel",
    "RbmSolution",
    "TensorCP",
    "pod_basis",
    "pod_objective",
    "rbm_offline",
    "rbm_online",
    "energy_error",
    "tensor_als",
]


# ---------------------------------------------------------------- POD


@dataclass(frozen=True)
class PodBasis:
    columns: np.ndarray
    captured_energy: float
    singular_values: np.ndarray = field(default=None, compare=False)

    @property
    def k(self):
        return self.columns.shape[1]


def _weighted_snapshot_matrix(snapshots):
    return build_map(snapshots).T


def pod_objective(z, v):
    """Projection error ``||Z - V V^T Z||_F`` of a snapshot matrix onto ``span V``."""
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(z - v @ (v.T @ z)))


def pod_basis(snapshots: SnapshotSet, k, tol=1e-12):
    """First ``k`` left singular vectors of the weighted snapshot matrix.

    Raises
    ------
    DomainError
        ``k`` exceeds the numerical rank of the snapshots.
    """
    z = _weighted_snapshot_matrix(snapshots)
    res = svd(z, tol=tol)
    if not 0 <= k <= res.rank:
        raise DomainError(f"k={k} exceeds snapshot rank {res.rank}")
    total = float(np.sum(res.singular_values**2))
    captured = float(np.sum(res.singular_values[:k] ** 2) / total) if total > 0 else 1.0
    return PodBasis(res.left[:, :k].copy(), captured, res.singular_values.copy())


# ---------------------------------------------------------------- RBM

_THETA = re.compile(r"^mu\[(\d+)\]$")


def _theta_value(form, mu):
    if form == "const":
        return 1.0
    match = _THETA.match(form)
    if match:
        return float(mu[int(match.group(1))])
    raise DomainError(f"unknown coefficient form {form!r} (use 'const' or 'mu[q]')")


@dataclass(frozen=True)
class AffineOperator:
    """``A(mu) = sum_q theta_q(mu) A_q`` with forms ``'const'`` or ``'mu[q]'``.

    ``box`` is ``(lower, upper)`` bounds of the admissible parameters.
    """

    components: tuple
    theta: tuple
    box: tuple = None

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len(comps) != len(self.theta):
            raise DomainError("one coefficient form per component is required")
        n = comps[0].shape[0]
        for c in comps:
            if c.shape != (n, n) or np.max(np.abs(c - c.T), initial=0) > 1e-12 * max(1, np.abs(c).max()):
                raise DomainError("components must be symmetric and of equal size")
        for form in self.theta:
            _theta_value(form, np.zeros(64))
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "theta", tuple(self.theta))

    @property
    def n(self):
        return self.components[0].shape[0]

    def coefficients(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return np.array([_theta_value(f, mu) for f in self.theta])

    def matrix(self, mu):
        return sum(t * a for t, a in zip(self.coefficients(mu), self.components))

    def in_box(self, mu, slack=1e-12):
        if self.box is None:
            return True
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        mu = np.atleast_1d(mu)
        return bool(np.all(mu >= lo - slack) and np.all(mu <= hi + slack))

    def check_coercive(self, params):
        for mu in params:
            try:
                np.linalg.cholesky(self.matrix(mu))
            except np.linalg.LinAlgError:
                raise CoercivityError(f"operator is not positive definite at mu={list(np.atleast_1d(mu))}",
                                      mu=mu) from None

    def sample_box(self, n_samples, seed=0):
        """Box corners plus ``n_samples`` uniform draws (used for the coercivity check)."""
        if self.box is None:
            return []
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        d = lo.size
        corners = [np.where([(c >> i) & 1 for i in range(d)], hi, lo) for c in range(2**d)] if d <= 10 else []
        rng = np.random.default_rng(seed)
        return corners + list(lo + (hi - lo) * rng.random((n_samples, d)))


@dataclass(frozen=True)
class RbmModel:
    operator: AffineOperator
    load: np.ndarray
    basis: np.ndarray
    reduced_components: tuple
    reduced_load: np.ndarray
    train_params: np.ndarray
    snapshots: np.ndarray = field(compare=False, default=None)

    @property
    def n_rb(self):
        return self.basis.shape[1]


@dataclass(frozen=True)
class RbmSolution:
    coefficients: np.ndarray
    lifted: np.ndarray
    energy: float


def rbm_offline(operator: AffineOperator, load, train_params, drop_tol=1e-10, box_samples=32, seed=0):
    """Offline stage: truth solves at the training parameters, orthonormal basis,
    reduced matrices ``V^T A_q V`` and load ``V^T f``.

    Snapshots are orthonormalized in order; directions already spanned (within
    ``drop_tol`` relative) are dropped, so nested training sets give nested
    spaces.
    """
    train_params = [np.atleast_1d(np.asarray(mu, dtype=float)) for mu in train_params]
    if not train_params:
        raise DomainError("at least one training parameter is required")
    load = np.asarray(load, dtype=float)
    if load.shape != (operator.n,):
        raise DomainError("load does not match operator size")
    operator.check_coercive(list(train_params) + operator.sample_box(box_samples, seed))
    snaps = np.column_stack([np.linalg.solve(operator.matrix(mu), load) for mu in train_params])
    basis, kept = gram_schmidt(snaps, drop_tol=drop_tol)
    if len(kept) < len(train_params):
        logger.info("dropped %d linearly dependent snapshots", len(train_params) - len(kept))
    red = tuple(basis.T @ a @ basis for a in operator.components)
    red = tuple(0.5 * (r + r.T) for r in red)
    return RbmModel(operator, load, basis, red, basis.T @ load, np.array(train_params), snaps)


def rbm_online(model: RbmModel, mu):
    """Galerkin solve in the reduced space; cost independent of the full size."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if not model.operator.in_box(mu):
        raise DomainError(f"mu={list(mu)} lies outside the parameter box")
    theta = model.operator.coefficients(mu)
    a_r = sum(t * a for t, a in zip(theta, model.reduced_components))
    if model.n_rb == 0:
        return RbmSolution(np.zeros(0), np.zeros(model.operator.n), 0.0)
    cond = np.linalg.cond(a_r)
    if not np.isfinite(cond) or cond > 1e14:
        raise ConditioningError(f"reduced system is singular (condition number {cond:.3e})")
    c = np.linalg.solve(a_r, model.reduced_load)
    return RbmSolution(c, model.basis @ c, float(c @ a_r @ c))


def energy_error(operator: AffineOperator, mu, u, u_n):
    e = np.asarray(u) - np.asarray(u_n)
    return float(e @ operator.matrix(mu) @ e)


# ---------------------------------------------------------------- tensors


@dataclass(frozen=True)
class TensorCP:
    """Sum of rank-one terms ``a_j (x) b_j (x) c_j`` over the (mu, omega_M, omega_N) grids.

    ``a_j`` and ``c_j`` have unit norm; the term's magnitude sits in ``b_j``.
    ``history`` records the Frobenius objective after every single-factor
    update.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    history: tuple = field(default=(), compare=False)

    @property
    def rank(self):
        return self.a.shape[1]

    def full(self):
        return np.einsum("ir,jr,kr->ijk", self.a, self.b, self.c)

    def norms(self):
        return np.linalg.norm(self.b, axis=0)


def _rank1(a, b, c):
    return np.einsum("i,j,k->ijk", a, b, c)


def _random_unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _fit_rank1(res, a, b, c, sweeps, tol, rng, history):
    """Alternating least squares for one rank-one term against ``res``.

    ``res`` is the data minus all other terms, so the objective recorded in
    ``history`` is the error of the whole CP sum.
    """
    target = res
    reset_done = False

    def objective():
        return float(np.linalg.norm(target - _rank1(a, b, c)))

    prev = objective()
    for _ in range(sweeps):
        for which in range(3):
            if which == 0:
                denom = (b @ b) * (c @ c)
                new = np.einsum("ijk,j,k->i", target, b, c) / denom if denom > 0 else np.zeros_like(a)
            elif which == 1:
                denom = (a @ a) * (c @ c)
                new = np.einsum("ijk,i,k->j", target, a, c) / denom if denom > 0 else np.zeros_like(b)
            else:
                denom = (a @ a) * (b @ b)
                new = np.einsum("ijk,i,j->k", target, a, b) / denom if denom > 0 else np.zeros_like(c)
            if np.linalg.norm(new) <= 1e-300:
                if reset_done:
                    return None
                reset_done = True
                new = _random_unit(rng, new.size)
                # a random restart is not a least-squares update; only accept it if it does not hurt
                trial = [a, b, c]
                trial[which] = new
                if np.linalg.norm(target - _rank1(*trial)) > prev:
                    return None
            if which == 0:
                a = new
            elif which == 1:
                b = new
            else:
                c = new
            history.append(float(np.linalg.norm(target - _rank1(a, b, c))))
        cur = objective()
        if prev == 0 or (prev - cur) <= tol * prev:
            prev = cur
            break
        prev = cur
    return a, b, c


def _normalize_term(a, b, c):
    na, nc = np.linalg.norm(a), np.linalg.norm(c)
    if na == 0 or nc == 0:
        return np.zeros_like(a), np.zeros_like(b), np.zeros_like(c)
    return a / na, b * na * nc, c / nc


def tensor_als(samples, rank, sweeps=200, tol=1e-12, seed=0, refit_sweeps=0):
    """Greedy rank-one construction of a CP approximation.

    Term ``k`` is fitted to the residual of the first ``k - 1`` terms (which
    stay frozen) by alternating least squares over the three factors, until
    the relative objective decrease drops below ``tol`` or ``sweeps`` is
    exhausted. With ``refit_sweeps > 0`` the greedy terms then seed up to
    that many sweeps of joint CP-ALS, where each update solves for a whole
    factor matrix; every update is still an exact least-squares step, so the
    recorded objective never increases.

    A factor that collapses to zero is reset once to a random unit vector; if
    it collapses again the term is kept as zero.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 3:
        raise DomainError("samples must be a 3-way array")
    if rank < 1:
        raise DomainError("rank must be at least 1")
    if not np.all(np.isfinite(x)):
        raise DomainError("samples must be finite")
    rng = np.random.default_rng(seed)
    n1, n2, n3 = x.shape
    terms = []
    history = []
    approx = np.zeros_like(x)

    for _ in range(rank):
        res = x - approx
        if np.linalg.norm(res) == 0:
            terms.append((np.zeros(n1), np.zeros(n2), np.zeros(n3)))
            continue
        a0, b0, c0 = _init_from_unfolding(res, rng)
        local = []
        fit = _fit_rank1(res, a0, b0, c0, sweeps, tol, rng, local)
        history.extend(local)
        if fit is None:
            terms.append((np.zeros(n1), np.zeros(n2), np.zeros(n3)))
            continue
        term = _normalize_term(*fit)
        terms.append(term)
        approx = approx + _rank1(*term)
    a = np.column_stack([t[0] for t in terms])
    b = np.column_stack([t[1] for t in terms])
    c = np.column_stack([t[2] for t in terms])
    if refit_sweeps > 0 and rank > 1 and np.linalg.norm(x) > 0:
        a, b, c = _joint_als(x, a, b, c, refit_sweeps, tol, history)
    return TensorCP(a, b, c, tuple(history))


def _factor_update(x, f1, f2, mode):
    """Least-squares update of one whole factor with the other two fixed."""
    if mode == 0:
        rhs = np.einsum("ijk,jr,kr->ir", x, f1, f2)
    elif mode == 1:
        rhs = np.einsum("ijk,ir,kr->jr", x, f1, f2)
    else:
        rhs = np.einsum("ijk,ir,jr->kr", x, f1, f2)
    gram = (f1.T @ f1) * (f2.T @ f2)
    # minimum-norm solution keeps the update exact when terms are collinear
    return lstsq(gram, rhs.T)[0].T


def _joint_als(x, a, b, c, sweeps, tol, history):
    """Classical CP-ALS over all terms at once, starting from the greedy terms."""

    def objective():
        return float(np.linalg.norm(x - np.einsum("ir,jr,kr->ijk", a, b, c)))

    prev = objective()
    for _ in range(sweeps):
        for mode in range(3):
            if mode == 0:
                new = _factor_update(x, b, c, 0)
                trial = (new, b, c)
            elif mode == 1:
                new = _factor_update(x, a, c, 1)
                trial = (a, new, c)
            else:
                new = _factor_update(x, a, b, 2)
                trial = (a, b, new)
            val = float(np.linalg.norm(x - np.einsum("ir,jr,kr->ijk", *trial)))
            best = history[-1] if history else prev
            # guard against round-off increases on an already converged fit
            if val <= best:
                a, b, c = trial
                best = val
            history.append(best)
        cur = objective()
        if prev == 0 or (prev - cur) <= tol * prev:
            break
        prev = cur
    # move the magnitude of each term into b, as in the greedy phase
    na = np.linalg.norm(a, axis=0)
    nc = np.linalg.norm(c, axis=0)
    ok = (na > 0) & (nc > 0)
    scale_a = np.where(ok, na, 1.0)
    scale_c = np.where(ok, nc, 1.0)
    return a / scale_a, b * scale_a * scale_c * ok, c / scale_c


def _init_from_unfolding(res, rng):
    """Start from the dominant left singular vectors of the mu- and omega_N-unfoldings."""
    n1, n2, n3 = res.shape
    a = svd(res.reshape(n1, n2 * n3)).left[:, 0]
    c = svd(np.moveaxis(res, 2, 0).reshape(n3, n1 * n2)).left[:, 0]
    b = np.einsum("ijk,i,k->j", res, a, c)
    if np.linalg.norm(b) == 0:
        b = _random_unit(rng, n2)
    return a, b, c
