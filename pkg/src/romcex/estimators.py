"""scikit-learn compatible wrappers around the functional core.

Samples are rows, as in scikit-learn: a snapshot matrix passed to
:class:`KarhunenLoeveTransformer` is ``(n_snapshots, n_states)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from . import cex, gpe, parametric, rom
from .exceptions import DomainError


def _snapshot_set(X, sample_weight):
    m = X.shape[0]
    w = np.full(m, 1.0 / m) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w.shape != (m,) or np.any(w < 0) or w.sum() <= 0:
        raise DomainError("sample_weight must be nonnegative with positive sum")
    return parametric.SnapshotSet(np.arange(m, dtype=float), X.T, w / w.sum())


class KarhunenLoeveTransformer(TransformerMixin, BaseEstimator):
    """Project states onto the leading KLE modes of the training snapshots.

    ``transform`` returns the mode coordinates ``<r, v_j>`` (for a training
    snapshot these equal ``sigma_j s_j(mu)``); ``inverse_transform`` lifts
    coordinates back to states.

    Parameters
    ----------
    n_components : int or None
        Number of modes kept; all nonzero modes when None.
    threshold : float or None
        Keep only modes with singular value at least this large.
    tol : float
        Relative cut-off for numerically zero singular values.
    """

    def __init__(self, n_components=None, threshold=None, tol=1e-12):
        self.n_components = n_components
        self.threshold = threshold
        self.tol = tol

    def fit(self, X, y=None, sample_weight=None):
        X = validate_data(self, X, dtype=float)
        basis = parametric.kle(_snapshot_set(X, sample_weight), tol=self.tol)
        if self.threshold is not None:
            basis = parametric.truncate_by_threshold(basis, self.threshold)
        k = basis.rank if self.n_components is None else min(self.n_components, basis.rank)
        self.basis_ = basis
        self.singular_values_ = basis.sigmas[:k]
        self.components_ = basis.modes[:, :k].T
        self.param_functions_ = basis.param_functions[:, :k]
        total = float(np.sum(basis.sigmas**2))
        self.explained_energy_ratio_ = basis.sigmas[:k] ** 2 / total if total > 0 else np.zeros(k)
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = validate_data(self, X, dtype=float, reset=False)
        return X @ self.components_.T

    def inverse_transform(self, Xt):
        check_is_fitted(self, "components_")
        return check_array(Xt, dtype=float) @ self.components_


class ProperOrthogonalDecomposition(TransformerMixin, BaseEstimator):
    """POD basis of rank ``n_components`` from (optionally weighted) snapshots."""

    def __init__(self, n_components=1, tol=1e-12):
        self.n_components = n_components
        self.tol = tol

    def fit(self, X, y=None, sample_weight=None):
        X = validate_data(self, X, dtype=float)
        pod = rom.pod_basis(_snapshot_set(X, sample_weight), self.n_components, tol=self.tol)
        self.components_ = pod.columns.T
        self.captured_energy_ = pod.captured_energy
        self.singular_values_ = pod.singular_values
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = validate_data(self, X, dtype=float, reset=False)
        return X @ self.components_.T

    def inverse_transform(self, Xt):
        check_is_fitted(self, "components_")
        return check_array(Xt, dtype=float) @ self.components_


class GaussianProcessEmulator(RegressorMixin, BaseEstimator):
    """Kriging predictor ``g(mu)^T K^{-1} y``.

    Parameters
    ----------
    kernel : {'squared-exponential', 'exponential'}
    length_scale : float or None
        None selects the median pairwise distance of the training inputs.
    amplitude : float
    mean : {'zero', 'constant-fit'}
    cross_covariance : array of shape (n_outputs, n_outputs) or None
        Separable output covariance for vector targets.
    solver : {'separable', 'blocked'}
    """

    def __init__(self, kernel="squared-exponential", length_scale=None, amplitude=1.0, mean="zero",
                 cross_covariance=None, solver="separable"):
        self.kernel = kernel
        self.length_scale = length_scale
        self.amplitude = amplitude
        self.mean = mean
        self.cross_covariance = cross_covariance
        self.solver = solver

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=float, multi_output=True, y_numeric=True)
        spec = gpe.KernelSpec(self.kernel, self.length_scale, self.amplitude, self.cross_covariance)
        self._y_1d = np.ndim(y) == 1
        self.emulator_ = gpe.gpe_train(X, y, spec, self.mean, self.solver)
        self.length_scale_ = self.emulator_.kernel.length_scale
        return self

    def predict(self, X):
        check_is_fitted(self, "emulator_")
        X = validate_data(self, X, dtype=float, reset=False)
        out = gpe.gpe_predict(self.emulator_, X)
        out = np.atleast_2d(out)
        return out[:, 0] if self._y_1d else out


class ConditionalExpectationRegressor(RegressorMixin, BaseEstimator):
    """Least-squares estimate of ``E(x | z)`` over polynomials of total degree ``degree``.

    ``fit(Z, X)`` takes observations as rows of ``Z`` and the quantities to be
    estimated as rows of ``X``. Degree 1 uses the sample-covariance Kalman gain.
    """

    def __init__(self, degree=1):
        self.degree = degree

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=float, multi_output=True, y_numeric=True)
        self._y_1d = np.ndim(y) == 1
        ens = cex.EnsembleState(np.atleast_2d(y.T) if y.ndim > 1 else y[None, :], X.T)
        if self.degree == 1:
            self.map_ = cex.cex_affine(ens)
        else:
            self.map_ = cex.cex_polynomial(ens, self.degree)
        return self

    def predict(self, X):
        check_is_fitted(self, "map_")
        X = validate_data(self, X, dtype=float, reset=False)
        out = self.map_(X.T).T
        return out[:, 0] if self._y_1d else out


class ReducedBasisSolver(RegressorMixin, BaseEstimator):
    """Reduced basis method for ``A(mu) u = f`` with affine ``A``.

    ``fit(train_params)`` runs the offline stage; ``predict(params)`` returns
    lifted reduced solutions as rows.
    """

    def __init__(self, operator=None, load=None, drop_tol=1e-10):
        self.operator = operator
        self.load = load
        self.drop_tol = drop_tol

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.model_ = rom.rbm_offline(self.operator, self.load, list(X), drop_tol=self.drop_tol)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        return np.array([rom.rbm_online(self.model_, mu).lifted for mu in X])

    def score(self, X, y, sample_weight=None):
        """Negative mean energy-norm error against reference solutions ``y``."""
        pred = self.predict(X)
        errs = [rom.energy_error(self.operator, mu, u, p) for mu, u, p in zip(check_array(X), y, pred)]
        return -float(np.average(errs, weights=sample_weight))
