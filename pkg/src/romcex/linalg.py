"""Dense symmetric eigen-solver, SVD and the factorizations built on them.

Everything here works on plain ``numpy.ndarray`` matrices. The eigen-solver
is a cyclic Jacobi iteration; the SVD is obtained from the eigenvectors of the
smaller Gram matrix. Both are meant for desk-scale problems (a few hundred
rows at most).

Vector signs are normalized so that the first entry of largest magnitude of
every eigenvector (and of every right singular vector) is positive.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    ConditioningError,
    ConvergenceError,
    DegeneracyError,
    DomainError,
    NotPSDError,
)

__all__ = [
    "Tolerances",
    "DEFAULTS",
    "SymEigen",
    "SvdResult",
    "CholFactor",
    "sym_eigen",
    "svd",
    "distinct_eigenvalues",
    "spectral_projector",
    "matrix_sqrt_psd",
    "chol_psd",
    "s_number",
    "truncated_svd",
    "gram_schmidt",
    "write_matrix_csv",
    "read_matrix_csv",
]


@dataclass(frozen=True)
class Tolerances:
    """Default tolerances; override per call or via :func:`dataclasses.replace`."""

    eigen: float = 1e-14
    max_sweeps: int = 100
    svd: float = 1e-12
    symmetry: float = 1e-10
    projector_gap: float = 1e-8
    projector_merge: float = 1e-12
    psd: float = 1e-10
    jitter_base: float = 1e-12
    jitter_factor: float = 10.0
    jitter_cap: float = 1e-4


DEFAULTS = Tolerances()


@dataclass(frozen=True)
class SymEigen:
    """Eigenvalues in ascending order with orthonormal eigenvectors as columns."""

    values: np.ndarray
    vectors: np.ndarray
    sweeps: int = 0

    def residual(self, a):
        a = np.asarray(a, dtype=float)
        return float(np.max(np.abs(a @ self.vectors - self.vectors * self.values), initial=0.0))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``r = left @ diag(singular_values) @ right.T``, values descending."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    @property
    def rank(self):
        return int(np.count_nonzero(self.singular_values))

    def reconstruct(self, k=None):
        k = len(self.singular_values) if k is None else k
        return (self.left[:, :k] * self.singular_values[:k]) @ self.right[:, :k].T


@dataclass(frozen=True)
class CholFactor:
    """``lower @ lower.T == matrix + jitter_used * I``."""

    lower: np.ndarray
    jitter_used: float = 0.0
    attempts: int = field(default=1, compare=False)

    def solve(self, b):
        from scipy.linalg import cho_solve

        return cho_solve((self.lower, True), np.asarray(b, dtype=float))


def _as_matrix(a, name="matrix"):
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2:
        raise DomainError(f"{name} must be two-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def _check_symmetric(a, tol):
    if a.shape[0] != a.shape[1]:
        raise DomainError(f"matrix must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    asym = float(np.max(np.abs(a - a.T), initial=0.0))
    if asym > tol * scale:
        raise DomainError(f"matrix is not symmetric (max |a - a.T| = {asym:.3e})")


def _fix_signs(vectors):
    """Flip columns so the first entry of largest magnitude is positive."""
    if vectors.size == 0:
        return vectors, np.ones(vectors.shape[1])
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs, signs


def _off_norm(a):
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def sym_eigen(a, tol=None, max_sweeps=None):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all off-diagonal pairs until the off-diagonal Frobenius norm
    drops below ``tol * ||a||_F``.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Symmetric matrix.
    tol : float, optional
        Relative stopping threshold, default ``DEFAULTS.eigen``.
    max_sweeps : int, optional
        Sweep cap, default 100.

    Returns
    -------
    SymEigen
        Eigenvalues ascending (ties kept in original diagonal order) and
        orthonormal eigenvectors as columns.

    Raises
    ------
    DomainError
        Non-square or asymmetric input, or ``tol <= 0``.
    ConvergenceError
        The sweep cap was hit before the threshold was met.
    """
    tol = DEFAULTS.eigen if tol is None else float(tol)
    max_sweeps = DEFAULTS.max_sweeps if max_sweeps is None else int(max_sweeps)
    if tol <= 0:
        raise DomainError("tol must be positive")
    a = _as_matrix(a)
    _check_symmetric(a, max(tol, DEFAULTS.symmetry))
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    fro = float(np.linalg.norm(a))
    threshold = tol * fro
    sweeps = 0
    while _off_norm(a) > threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", _off_norm(a))
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app, aqq = a[p, p], a[q, q]
                # skip rotations that cannot change the diagonal in floating point
                if abs(apq) < 1e-18 * (abs(app) + abs(aqq)) and sweeps > 3:
                    a[p, q] = a[q, p] = 0.0
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cp = a[:, p].copy()
                cq = a[:, q]
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp = a[p, :].copy()
                rq = a[q, :]
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    vectors, _ = _fix_signs(v[:, order])
    return SymEigen(values=values[order], vectors=vectors, sweeps=sweeps)


def gram_schmidt(vectors, basis=None, drop_tol=1e-10):
    """Orthonormalize columns (modified Gram-Schmidt, two passes).

    Columns whose remaining norm falls below ``drop_tol`` times their original
    norm are dropped. ``basis`` holds already orthonormal columns that the
    result must be orthogonal to (they are not returned).

    Returns
    -------
    q : ndarray
        Orthonormal columns.
    kept : list of int
        Indices of the input columns that survived.
    """
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[0]
    prior = np.zeros((n, 0)) if basis is None else np.asarray(basis, dtype=float)
    out, kept = [], []
    for j in range(vectors.shape[1]):
        w = vectors[:, j].copy()
        norm0 = np.linalg.norm(w)
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for q in (*prior.T, *out):
                w -= (q @ w) * q
        norm = np.linalg.norm(w)
        if norm <= drop_tol * norm0:
            continue
        out.append(w / norm)
        kept.append(j)
    q = np.column_stack(out) if out else np.zeros((n, 0))
    return q, kept


def _complete(columns, n, count):
    """Extend orthonormal ``columns`` by ``count`` vectors from the standard basis."""
    extra, _ = gram_schmidt(np.eye(n), basis=columns, drop_tol=1e-8)
    return extra[:, :count]


def svd(r, tol=None):
    """Thin singular value decomposition via the smaller Gram matrix.

    The eigenvectors of ``r.T @ r`` (or ``r @ r.T`` when that is smaller) give
    one orthonormal factor; singular values are the norms of its image under
    ``r`` and the other factor is the normalized image. Values at or below
    ``tol * sigma_1`` are set to zero and the corresponding vectors completed
    by Gram-Schmidt.

    Returns
    -------
    SvdResult
        ``left`` is (m, p), ``right`` is (n, p) with ``p = min(m, n)``.
    """
    tol = DEFAULTS.svd if tol is None else float(tol)
    r = _as_matrix(r)
    m, n = r.shape
    p = min(m, n)
    transposed = m < n
    a = r.T if transposed else r  # a is tall: (max, min)
    if p == 0:
        return SvdResult(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))
    eig = sym_eigen(a.T @ a)
    small = eig.vectors[:, ::-1]
    image = a @ small
    sigma = np.linalg.norm(image, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, small, image = sigma[order], small[:, order], image[:, order]
    cutoff = tol * sigma[0] if sigma[0] > 0 else np.inf
    keep = sigma > cutoff
    k = int(np.count_nonzero(keep))
    sigma = np.where(keep, sigma, 0.0)
    big, _ = gram_schmidt(image[:, :k] / sigma[:k], drop_tol=1e-14)
    if big.shape[1] < k:  # pathological loss of orthogonality
        k = big.shape[1]
        sigma[k:] = 0.0
    big = np.column_stack([big, _complete(big, a.shape[0], p - k)])
    if transposed:
        left, right = small, big
    else:
        left, right = big, small
    right, signs = _fix_signs(right)
    left = left * signs
    return SvdResult(left=left, singular_values=sigma, right=right)


def truncated_svd(r, k, tol=None):
    """Best rank-``k`` approximation of ``r`` in spectral and Frobenius norm."""
    res = svd(r, tol)
    if k < 0:
        raise DomainError("rank must be nonnegative")
    return res.reconstruct(min(k, len(res.singular_values)))


def distinct_eigenvalues(eig, merge_tol):
    """Group ascending eigenvalues into clusters closer than ``merge_tol``.

    Returns a list of ``(value, column_indices)`` pairs.
    """
    groups = []
    for i, lam in enumerate(eig.values):
        if groups and lam - eig.values[groups[-1][-1]] <= merge_tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [(float(np.mean(eig.values[g])), g) for g in groups]


def spectral_projector(a, eig=None, which=0, gap=None):
    """Orthogonal projector onto the eigenspace of one distinct eigenvalue.

    Evaluated as the Lagrange polynomial ``prod_{k != m} (a - l_k I)/(l_m - l_k)``
    over the distinct eigenvalues ``l_k``. ``which`` indexes the distinct
    eigenvalues in ascending order.

    Raises
    ------
    DegeneracyError
        Another eigenvalue lies within ``gap`` (default ``1e-8 * ||a||_F``)
        of the chosen one without being numerically equal to it.
    """
    a = _as_matrix(a)
    eig = sym_eigen(a) if eig is None else eig
    fro = float(np.linalg.norm(a))
    gap = DEFAULTS.projector_gap * fro if gap is None else float(gap)
    merge = DEFAULTS.projector_merge * max(fro, 1.0)
    groups = distinct_eigenvalues(eig, merge)
    if not 0 <= which < len(groups):
        raise DomainError(f"distinct eigenvalue index {which} out of range 0..{len(groups) - 1}")
    lam_m = groups[which][0]
    n = a.shape[0]
    out = np.eye(n)
    for j, (lam_k, _) in enumerate(groups):
        if j == which:
            continue
        if abs(lam_m - lam_k) <= gap:
            raise DegeneracyError(
                f"eigenvalue {lam_m:.6g} is within {gap:.3e} of {lam_k:.6g}; projector is ill-defined"
            )
        out = out @ (a - lam_k * np.eye(n)) / (lam_m - lam_k)
    return out


def matrix_sqrt_psd(c, tol=None):
    """Symmetric square root ``V diag(sqrt(lambda)) V^T`` of a PSD matrix.

    Eigenvalues in ``[-tol * max(1, ||c||_F), 0)`` are clamped to zero.
    """
    tol = DEFAULTS.psd if tol is None else float(tol)
    c = _as_matrix(c)
    eig = sym_eigen(c)
    floor = -tol * max(1.0, float(np.linalg.norm(c)))
    if eig.values.size and eig.values[0] < floor:
        raise NotPSDError(f"matrix has negative eigenvalue {eig.values[0]:.3e}")
    root = np.sqrt(np.clip(eig.values, 0.0, None))
    s = (eig.vectors * root) @ eig.vectors.T
    return 0.5 * (s + s.T)


def chol_psd(c, base_jitter=None, cap=None, factor=None):
    """Cholesky factor of a symmetric PSD matrix with escalating diagonal jitter.

    The first attempt uses no jitter. Subsequent attempts add
    ``base_jitter * trace/n``, multiplied by ``factor`` each retry, up to
    ``cap * trace/n``. ``base_jitter``, ``cap`` are relative to the mean
    diagonal.

    Raises
    ------
    ConditioningError
        No factorization succeeded below the jitter cap.
    """
    c = _as_matrix(c)
    _check_symmetric(c, DEFAULTS.symmetry)
    base_jitter = DEFAULTS.jitter_base if base_jitter is None else float(base_jitter)
    cap = DEFAULTS.jitter_cap if cap is None else float(cap)
    factor = DEFAULTS.jitter_factor if factor is None else float(factor)
    n = c.shape[0]
    if n == 0:
        return CholFactor(np.zeros((0, 0)), 0.0)
    scale = float(np.trace(c)) / n
    if scale <= 0:
        scale = 1.0
    jitter = 0.0
    attempts = 0
    step = base_jitter * scale
    while True:
        attempts += 1
        try:
            lower = np.linalg.cholesky(c + jitter * np.eye(n))
            if np.all(np.isfinite(lower)):
                return CholFactor(lower=lower, jitter_used=jitter, attempts=attempts)
        except np.linalg.LinAlgError:
            pass
        jitter = step if jitter == 0.0 else jitter * factor
        if jitter > cap * scale * (1 + 1e-12):
            raise ConditioningError(
                f"Cholesky failed with jitter up to {cap * scale:.3e} (matrix {n}x{n})"
            )


def s_number(r, k, tol=None):
    """k-th singular number: distance of ``r`` to matrices of rank < k.

    Equals the k-th singular value; ``k = min(m, n) + 1`` gives 0.
    """
    r = _as_matrix(r)
    p = min(r.shape)
    if not 1 <= k <= p + 1:
        raise DomainError(f"k must be in 1..{p + 1}, got {k}")
    if k == p + 1:
        return 0.0
    return float(svd(r, tol).singular_values[k - 1])


def write_matrix_csv(path, matrix):
    """Write a matrix as CSV: one row per line, no header, round-trip precision."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    buf = io.StringIO()
    for row in matrix:
        buf.write(",".join(repr(float(x)) for x in row))
        buf.write("\n")
    Path(path).write_text(buf.getvalue())


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=float)
