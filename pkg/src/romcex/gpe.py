"""Kriging / Gaussian process emulation of parametric outputs.

The emulator predicts ``g(mu)^T K^{-1} z`` where ``K`` is the kernel Gram
matrix on the training inputs and ``g(mu)`` the kernel vector between the
training inputs and ``mu``. Vector outputs use a separable covariance
``k(mu_i, mu_j) * S``; the blocked system then reduces to one scalar solve
per output component, and the dense blocked route is kept as a cross-check
for small problems.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .exceptions import DomainError, SizeError
from .linalg import CholFactor, chol_psd

__all__ = ["KernelSpec", "GpeEmulator", "gpe_train", "gpe_predict", "gpe_weights", "loo_errors"]

KINDS = ("squared-exponential", "exponential", "empirical-gram")
BLOCKED_LIMIT = 2000


@dataclass(frozen=True)
class KernelSpec:
    """Covariance kernel on parameter space.

    ``empirical-gram`` uses ``<phi(mu_1), phi(mu_2)>`` with a user-supplied
    ``feature_map`` (e.g. a reduced model returning states). ``length_scale``
    of ``None`` is replaced at training time by the median pairwise distance
    of the training inputs.
    """

    kind: str = "squared-exponential"
    length_scale: Optional[float] = None
    amplitude: float = 1.0
    cross_covariance: Optional[np.ndarray] = None
    feature_map: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown kernel kind {self.kind!r}")
        if self.length_scale is not None and self.length_scale <= 0:
            raise DomainError("length_scale must be positive")
        if self.amplitude <= 0:
            raise DomainError("amplitude must be positive")
        if self.kind == "empirical-gram" and self.feature_map is None:
            raise DomainError("empirical-gram kernel needs a feature_map")

    def __call__(self, p1, p2):
        p1 = np.atleast_2d(np.asarray(p1, dtype=float))
        p2 = np.atleast_2d(np.asarray(p2, dtype=float))
        if self.kind == "empirical-gram":
            f1 = np.array([np.ravel(self.feature_map(p)) for p in p1])
            f2 = np.array([np.ravel(self.feature_map(p)) for p in p2])
            return self.amplitude**2 * (f1 @ f2.T)
        d = cdist(p1, p2)
        ell = 1.0 if self.length_scale is None else self.length_scale
        if self.kind == "exponential":
            return self.amplitude**2 * np.exp(-d / ell)
        return self.amplitude**2 * np.exp(-0.5 * (d / ell) ** 2)

    def to_dict(self):
        return {
            "kind": self.kind,
            "length_scale": self.length_scale,
            "amplitude": self.amplitude,
            "cross_covariance": None if self.cross_covariance is None else np.asarray(self.cross_covariance).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        cc = d.get("cross_covariance")
        return cls(d.get("kind", "squared-exponential"), d.get("length_scale"), d.get("amplitude", 1.0),
                   None if cc is None else np.asarray(cc, dtype=float))


@dataclass(frozen=True)
class GpeEmulator:
    train_inputs: np.ndarray  # (m, p)
    train_values: np.ndarray  # (m, d)
    kernel: KernelSpec
    factor: CholFactor
    mean_model: np.ndarray  # (d,)
    alpha: np.ndarray  # (m, d): K^{-1} (values - mean)
    solver: str = "separable"

    @property
    def n_outputs(self):
        return self.train_values.shape[1]

    def save(self, path):
        """Persist kernel and training data; the factor is recomputed on load."""
        doc = {
            "kernel": self.kernel.to_dict(),
            "mean_mode": "zero" if not np.any(self.mean_model) else "constant-fit",
            "solver": self.solver,
            "train_inputs": self.train_inputs.tolist(),
            "train_values": self.train_values.tolist(),
        }
        from .io import atomic_write, canonical_json

        atomic_write(path, canonical_json(doc))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        return gpe_train(doc["train_inputs"], doc["train_values"], KernelSpec.from_dict(doc["kernel"]),
                         doc["mean_mode"], solver=doc.get("solver", "separable"))


def _dedupe(inputs, values, tol=0.0):
    keep = []
    for i in range(len(inputs)):
        if any(np.linalg.norm(inputs[i] - inputs[j]) <= tol for j in keep):
            continue
        keep.append(i)
    if len(keep) < len(inputs):
        warnings.warn(f"collapsed {len(inputs) - len(keep)} duplicate training inputs", stacklevel=3)
    return inputs[keep], values[keep]


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1)
    return x


def gpe_train(train_inputs, train_values, kernel: KernelSpec = None, mean_mode="zero", solver="separable"):
    """Factorize the kernel Gram matrix on the training inputs.

    Parameters
    ----------
    train_inputs : array_like, shape (m,) or (m, p)
    train_values : array_like, shape (m,) or (m, d)
    kernel : KernelSpec, optional
        Defaults to squared-exponential with the median-distance length scale.
    mean_mode : {'zero', 'constant-fit'}
        ``constant-fit`` subtracts the per-component training mean first.
    solver : {'separable', 'blocked'}
        ``blocked`` assembles the full ``(m d) x (m d)`` system with the
        kernel's cross covariance (limited to ``m d <= 2000``).
    """
    inputs = _as_points(train_inputs)
    values = np.asarray(train_values, dtype=float)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    if values.shape[0] != inputs.shape[0]:
        raise DomainError("one training value per input is required")
    if inputs.shape[0] == 0:
        raise DomainError("no training data")
    if not np.all(np.isfinite(values)):
        raise DomainError("training values must be finite")
    if mean_mode not in ("zero", "constant-fit"):
        raise DomainError(f"unknown mean mode {mean_mode!r}")
    inputs, values = _dedupe(inputs, values)
    kernel = KernelSpec() if kernel is None else kernel
    if kernel.length_scale is None and kernel.kind != "empirical-gram":
        dists = pdist(inputs)
        ell = float(np.median(dists)) if dists.size and np.median(dists) > 0 else 1.0
        kernel = replace(kernel, length_scale=ell)
    m, d = values.shape
    mean = values.mean(axis=0) if mean_mode == "constant-fit" else np.zeros(d)
    centered = values - mean
    gram = kernel(inputs, inputs)
    gram = 0.5 * (gram + gram.T)
    factor = chol_psd(gram)
    if solver == "separable":
        alpha = factor.solve(centered)
    elif solver == "blocked":
        alpha = _blocked_alpha(gram, centered, kernel, d)
    else:
        raise DomainError(f"unknown solver {solver!r}")
    return GpeEmulator(inputs, values, kernel, factor, mean, alpha, solver)


def _cross(kernel, d):
    if kernel.cross_covariance is None:
        return np.eye(d)
    s = np.asarray(kernel.cross_covariance, dtype=float)
    if s.shape != (d, d):
        raise DomainError(f"cross covariance must be {d}x{d}")
    return s


def _blocked_alpha(gram, centered, kernel, d):
    """Solve ``(K (x) S) vec(alpha_full) = vec(Z)`` densely; returns per-component weights.

    Prediction is ``(g (x) S)^T (K (x) S)^{-1} Z`` which is returned in the
    same ``(m, d)`` layout as the separable path: ``alpha = S @ W`` row-wise.
    """
    m = gram.shape[0]
    if m * d > BLOCKED_LIMIT:
        raise SizeError(f"blocked Kriging system of size {m * d} exceeds {BLOCKED_LIMIT}")
    s = _cross(kernel, d)
    big = np.kron(gram, s)
    chol = chol_psd(0.5 * (big + big.T))
    w = chol.solve(centered.reshape(-1)).reshape(m, d)
    # the prediction G^T W with G = g (x) S contracts S against each block of W
    return w @ s.T


def gpe_weights(emulator: GpeEmulator, mu):
    """Kriging weights ``w(mu) = K^{-1} g(mu)`` (scalar kernel)."""
    g = emulator.kernel(emulator.train_inputs, _as_points(mu).reshape(1, -1))[:, 0]
    return emulator.factor.solve(g)


def gpe_predict(emulator: GpeEmulator, mu):
    """Mean prediction at one point (returns ``(d,)``) or at rows of a 2-d array (``(q, d)``)."""
    pts = np.asarray(mu, dtype=float)
    p = emulator.train_inputs.shape[1]
    single = pts.ndim <= 1 and pts.size == p
    pts = pts.reshape(-1, p)
    if pts.shape[0] == 0:
        return np.zeros((0, emulator.n_outputs))
    g = emulator.kernel(pts, emulator.train_inputs)
    out = g @ emulator.alpha + emulator.mean_model
    return out[0] if single else out


def loo_errors(train_inputs, train_values, kernel=None, mean_mode="zero"):
    """Leave-one-out prediction errors ``||f(mu_i) - f_hat_{-i}(mu_i)||`` by refitting."""
    inputs = _as_points(train_inputs)
    values = np.asarray(train_values, dtype=float).reshape(inputs.shape[0], -1)
    if kernel is None or kernel.length_scale is None:
        # fix the length scale from the full set so every fold uses the same kernel
        base = KernelSpec() if kernel is None else kernel
        if base.kind != "empirical-gram":
            dists = pdist(inputs)
            base = replace(base, length_scale=float(np.median(dists)) if dists.size else 1.0)
        kernel = base
    errs = []
    for i in range(inputs.shape[0]):
        mask = np.arange(inputs.shape[0]) != i
        em = gpe_train(inputs[mask], values[mask], kernel, mean_mode)
        errs.append(float(np.linalg.norm(gpe_predict(em, inputs[i]) - values[i])))
    return np.array(errs)
