"""Cell-centered finite-volume model of steady and transient Darcy flow.

The aquifer is the unit-cell grid ``[0, nx*hx] x [0, ny*hy]`` with isotropic
conductivity ``kappa = exp(q)``. The head ``w`` solves

    dw/dt - div(kappa grad w) = g

with Dirichlet data on selected outer edges (the others are no-flux). Face
transmissibilities use the harmonic mean of the two adjacent cell
conductivities; boundary faces use the cell value over half a cell.

Cells are numbered ``k = j * nx + i`` with ``i`` along x.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import cho_solve_banded, cholesky_banded

from .exceptions import DomainError, WellPosednessError, RomcexError
from .linalg import sym_eigen

logger = logging.getLogger(__name__)

EDGES = ("west", "east", "south", "north")


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    hx: float = 1.0
    hy: float = 1.0
    extraction_cells: tuple = ()

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise DomainError("grid needs at least 2 cells in each direction")
        if self.hx <= 0 or self.hy <= 0:
            raise DomainError("cell sizes must be positive")
        cells = tuple(sorted(set(int(c) for c in self.extraction_cells)))
        object.__setattr__(self, "extraction_cells", cells)
        for c in cells:
            i, j = c % self.nx, c // self.nx
            if not (0 < i < self.nx - 1 and 0 < j < self.ny - 1) or c >= self.n_cells:
                raise DomainError(f"extraction cell {c} is not strictly interior")

    @classmethod
    def unit_square(cls, n, extraction_cells=()):
        return cls(n, n, 1.0 / n, 1.0 / n, tuple(extraction_cells))

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def cell_area(self):
        return self.hx * self.hy

    def index(self, i, j):
        return j * self.nx + i

    def centers(self):
        """(n_cells, 2) array of cell-center coordinates."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def block(self, i0, i1, j0, j1):
        """Cell indices of the block ``i0 <= i < i1, j0 <= j < j1``."""
        return tuple(self.index(i, j) for j in range(j0, j1) for i in range(i0, i1))

    def interior_faces(self):
        """Arrays ``(left, right, area_over_distance)`` for every interior face."""
        left, right, geom = [], [], []
        for j in range(self.ny):
            for i in range(self.nx - 1):
                left.append(self.index(i, j))
                right.append(self.index(i + 1, j))
                geom.append(self.hy / self.hx)
        for j in range(self.ny - 1):
            for i in range(self.nx):
                left.append(self.index(i, j))
                right.append(self.index(i, j + 1))
                geom.append(self.hx / self.hy)
        return np.array(left, dtype=int), np.array(right, dtype=int), np.array(geom)

    def boundary_faces(self, edge):
        """Cells adjacent to an outer edge, their face geometry factor, and face midpoints."""
        if edge in ("west", "east"):
            i = 0 if edge == "west" else self.nx - 1
            cells = np.array([self.index(i, j) for j in range(self.ny)], dtype=int)
            geom = np.full(self.ny, self.hy / (0.5 * self.hx))
            x = 0.0 if edge == "west" else self.nx * self.hx
            pts = np.column_stack([np.full(self.ny, x), (np.arange(self.ny) + 0.5) * self.hy])
        elif edge in ("south", "north"):
            j = 0 if edge == "south" else self.ny - 1
            cells = np.array([self.index(i, j) for i in range(self.nx)], dtype=int)
            geom = np.full(self.nx, self.hx / (0.5 * self.hy))
            y = 0.0 if edge == "south" else self.ny * self.hy
            pts = np.column_stack([(np.arange(self.nx) + 0.5) * self.hx, np.full(self.nx, y)])
        else:
            raise DomainError(f"unknown edge {edge!r}")
        return cells, geom, pts


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed head on outer edges; an edge set to ``None`` is no-flux.

    Each edge holds one value per boundary face (length ``ny`` for west/east,
    ``nx`` for south/north).
    """

    west: Optional[np.ndarray] = None
    east: Optional[np.ndarray] = None
    south: Optional[np.ndarray] = None
    north: Optional[np.ndarray] = None

    @classmethod
    def constant(cls, grid, value=0.0, edges=EDGES):
        return cls.from_function(grid, lambda x, y: np.full(len(x), float(value)), edges)

    @classmethod
    def from_function(cls, grid, fn: Callable, edges=EDGES):
        values = {}
        for edge in edges:
            _, _, pts = grid.boundary_faces(edge)
            values[edge] = np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)
        return cls(**values)

    def edges(self):
        return [e for e in EDGES if getattr(self, e) is not None]

    def values(self, edge):
        return np.asarray(getattr(self, edge), dtype=float)

    def bounds(self):
        vals = np.concatenate([self.values(e) for e in self.edges()])
        return float(vals.min()), float(vals.max())


@dataclass(frozen=True)
class ConductivityField:
    log_values: np.ndarray

    @property
    def kappa(self):
        return np.exp(self.log_values)

    @classmethod
    def constant(cls, grid, kappa=1.0):
        return cls(np.full(grid.n_cells, np.log(kappa)))


@dataclass(frozen=True)
class KleFieldSpec:
    mean: float = 0.0
    variance: float = 1.0
    correlation_length: float = 0.3
    n_modes: int = 8
    covariance_kind: str = "exponential"

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError("variance must be nonnegative")
        if self.correlation_length <= 0:
            raise DomainError("correlation_length must be positive")
        if self.covariance_kind not in ("exponential", "squared-exponential"):
            raise DomainError(f"unknown covariance kind {self.covariance_kind!r}")

    def covariance(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.sqrt(np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1))
        if self.covariance_kind == "exponential":
            return self.variance * np.exp(-d / self.correlation_length)
        return self.variance * np.exp(-0.5 * (d / self.correlation_length) ** 2)


@dataclass(frozen=True)
class FieldModes:
    """Leading eigenpairs of the cell covariance matrix (descending)."""

    eigenvalues: np.ndarray
    modes: np.ndarray  # (n_cells, n_modes), orthonormal columns
    mean: float = 0.0

    @property
    def n_modes(self):
        return len(self.eigenvalues)


@dataclass(frozen=True)
class DarcySolution:
    head: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class DarcyModel:
    """Everything needed to run the aquifer forward model for one parameter."""

    grid: Grid2D
    field_spec: KleFieldSpec
    source: np.ndarray
    dirichlet: Dirichlet
    modes: Optional[FieldModes] = field(default=None, compare=False)

    def with_modes(self):
        if self.modes is not None:
            return self
        return DarcyModel(self.grid, self.field_spec, self.source, self.dirichlet,
                          field_modes(self.grid, self.field_spec))


def covariance_modes(points, spec: KleFieldSpec, n_modes=None):
    """Eigenpairs of the covariance matrix on a point set, largest first."""
    cov = spec.covariance(points)
    n = cov.shape[0]
    n_modes = spec.n_modes if n_modes is None else n_modes
    if n_modes > n:
        raise DomainError(f"n_modes={n_modes} exceeds the {n} available points")
    if spec.variance == 0:
        return FieldModes(np.zeros(n_modes), np.eye(n)[:, :n_modes], spec.mean)
    eig = sym_eigen(cov)
    values = np.clip(eig.values[::-1][:n_modes], 0.0, None)
    return FieldModes(values, eig.vectors[:, ::-1][:, :n_modes], spec.mean)


def field_modes(grid: Grid2D, spec: KleFieldSpec):
    """Discrete Karhunen-Loeve modes of the log-conductivity on the cell centers.

    On a uniform grid the cell quadrature weight is a constant, so the
    eigenvectors of the covariance matrix are the discrete eigenfunctions; the
    eigenvalues returned are those of the covariance matrix itself, so that
    ``sum_j lambda_j v_j v_j^T`` reproduces the cell covariance.
    """
    if spec.n_modes > grid.n_cells:
        raise DomainError(f"n_modes={spec.n_modes} exceeds grid size {grid.n_cells}")
    return covariance_modes(grid.centers(), spec)


def sample_conductivity(modes: FieldModes, xi=None, seed=None):
    """``q = mean + sum_j sqrt(lambda_j) xi_j v_j`` and ``kappa = exp(q)``."""
    if xi is None:
        if seed is None:
            raise DomainError("either xi or seed is required")
        xi = np.random.default_rng(seed).standard_normal(modes.n_modes)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (modes.n_modes,):
        raise DomainError(f"xi must have length {modes.n_modes}, got shape {xi.shape}")
    q = modes.mean + modes.modes @ (np.sqrt(modes.eigenvalues) * xi)
    return ConductivityField(q)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def transmissibilities(grid, field):
    """Interior face list with harmonic-mean transmissibilities."""
    kappa = field.kappa
    left, right, geom = grid.interior_faces()
    return left, right, geom * _harmonic(kappa[left], kappa[right])


def assemble(grid: Grid2D, field: ConductivityField, dirichlet: Dirichlet):
    """Assemble the flux operator.

    Returns ``(A, b)`` with ``A`` sparse SPD and ``b`` the Dirichlet
    contribution, so that the cell-integrated steady balance is
    ``A w = b + g * cell_area``.
    """
    if not dirichlet.edges():
        raise WellPosednessError("at least one Dirichlet edge is required")
    kappa = field.kappa
    if kappa.shape != (grid.n_cells,):
        raise DomainError("conductivity field does not match the grid")
    n = grid.n_cells
    left, right, t = transmissibilities(grid, field)
    diag = np.zeros(n)
    np.add.at(diag, left, t)
    np.add.at(diag, right, t)
    b = np.zeros(n)
    for edge in dirichlet.edges():
        cells, geom, _ = grid.boundary_faces(edge)
        tb = geom * kappa[cells]
        np.add.at(diag, cells, tb)
        np.add.at(b, cells, tb * dirichlet.values(edge))
    rows = np.concatenate([np.arange(n), left, right])
    cols = np.concatenate([np.arange(n), right, left])
    vals = np.concatenate([diag, -t, -t])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)), b


def _banded(a, bandwidth):
    """Upper banded storage of a symmetric sparse matrix for ``cholesky_banded``."""
    n = a.shape[0]
    ab = np.zeros((bandwidth + 1, n))
    for offset in range(bandwidth + 1):
        ab[bandwidth - offset, offset:] = a.diagonal(offset)
    return ab


def _solve_spd(a, rhs, bandwidth):
    ab = _banded(a, bandwidth)
    try:
        cb = cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise WellPosednessError(f"assembled system is singular: {exc}") from exc
    w = cho_solve_banded((cb, False), rhs)
    res = np.linalg.norm(a @ w - rhs)
    scale = np.linalg.norm(rhs) + 1e-300
    if res > 1e-12 * scale * 1e3 and res > 1e-14:
        logger.warning("relative residual %.3e above solver tolerance", res / scale)
    return w


def solve_steady(grid: Grid2D, field: ConductivityField, source, dirichlet: Dirichlet):
    """Steady head: banded Cholesky solve of the 5-point finite-volume system."""
    source = _source(grid, source)
    a, b = assemble(grid, field, dirichlet)
    w = _solve_spd(a, b + source * grid.cell_area, grid.nx)
    return DarcySolution(w, 0.0)


def solve_transient(grid, field, source, dirichlet, w0, dt, n_steps):
    """Implicit Euler time stepping; returns ``n_steps + 1`` solutions including ``w0``."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    source = _source(grid, source)
    a, b = assemble(grid, field, dirichlet)
    mass = grid.cell_area / dt
    lhs = a + mass * sparse.identity(grid.n_cells, format="csr")
    ab = _banded(lhs, grid.nx)
    try:
        cb = cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise WellPosednessError(f"assembled system is singular: {exc}") from exc
    w = np.asarray(w0, dtype=float).copy()
    if w.shape != (grid.n_cells,):
        raise DomainError("initial head does not match the grid")
    out = [DarcySolution(w.copy(), 0.0)]
    forcing = b + source * grid.cell_area
    for step in range(1, n_steps + 1):
        w = cho_solve_banded((cb, False), forcing + mass * w)
        out.append(DarcySolution(w.copy(), step * dt))
    return out


def _source(grid, source):
    source = np.broadcast_to(np.asarray(source, dtype=float), (grid.n_cells,)).copy()
    return source


def boundary_fluxes(grid, field, solution, dirichlet):
    """Outward flux through every Dirichlet boundary face, keyed by edge."""
    kappa = field.kappa
    w = solution.head
    out = {}
    for edge in dirichlet.edges():
        cells, geom, _ = grid.boundary_faces(edge)
        out[edge] = geom * kappa[cells] * (w[cells] - dirichlet.values(edge))
    return out


def qoi_inflow(grid: Grid2D, field: ConductivityField, solution):
    """Total inflow into the extraction subdomain across its boundary.

    Sum over faces between an extraction cell and a non-extraction neighbour of
    ``T_f (w_outside - w_inside)``.
    """
    if isinstance(solution, Sequence) and not isinstance(solution, DarcySolution):
        raise DomainError("pass a single DarcySolution (select the time index first)")
    if not grid.extraction_cells:
        raise DomainError("grid has no extraction cells")
    inside = np.zeros(grid.n_cells, dtype=bool)
    inside[list(grid.extraction_cells)] = True
    left, right, t = transmissibilities(grid, field)
    w = solution.head
    cross = inside[left] != inside[right]
    l, r, tc = left[cross], right[cross], t[cross]
    w_in = np.where(inside[l], w[l], w[r])
    w_out = np.where(inside[l], w[r], w[l])
    return float(np.sum(tc * (w_out - w_in)))


@dataclass(frozen=True)
class PlanEntry:
    """One forward solve: KLE coordinates ``xi`` and the recorded parameter ``mu``.

    ``mu`` defaults to ``xi``; missing ``xi`` is drawn from the stream
    ``(seed, index)``.
    """

    mu: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None


def stream(seed, index):
    """Independent generator for plan entry ``index``."""
    return np.random.default_rng([int(seed), int(index)])


def _resolve_entry(entry, modes, seed, index):
    xi = entry.xi
    if xi is None:
        if entry.mu is not None and len(entry.mu) == modes.n_modes:
            xi = entry.mu
        else:
            xi = stream(seed, index).standard_normal(modes.n_modes)
    xi = np.asarray(xi, dtype=float)
    mu = xi if entry.mu is None else np.asarray(entry.mu, dtype=float)
    return np.atleast_1d(mu), xi


def generate_snapshots(model: DarcyModel, plan, seed=0, threads=1):
    """Solve the steady model once per plan entry and collect a SnapshotSet.

    Results do not depend on ``threads``; every entry has its own RNG stream.
    """
    from .parametric import SnapshotSet

    plan = list(plan)
    if not plan:
        raise DomainError("parameter plan is empty")
    model = model.with_modes()
    resolved = [_resolve_entry(PlanEntry(*e) if isinstance(e, tuple) else e, model.modes, seed, k)
                for k, e in enumerate(plan)]

    def run(k):
        mu, xi = resolved[k]
        try:
            fld = sample_conductivity(model.modes, xi)
            return solve_steady(model.grid, fld, model.source, model.dirichlet).head
        except RomcexError as exc:
            raise type(exc)(f"plan entry {k}: {exc}") from exc

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            heads = list(pool.map(run, range(len(plan))))
    else:
        heads = [run(k) for k in range(len(plan))]
    params = np.array([mu for mu, _ in resolved])
    xis = np.array([xi for _, xi in resolved])
    return SnapshotSet(
        params=params,
        states=np.column_stack(heads),
        weights=np.full(len(plan), 1.0 / len(plan)),
        provenance={"seed": int(seed), "xi": xis.tolist(), "source": "darcy"},
    )


def random_plan(n_samples, n_modes, seed):
    """Plan of ``n_samples`` standard-normal KLE coordinate draws."""
    return [PlanEntry(xi=stream(seed, k).standard_normal(n_modes)) for k in range(n_samples)]


def affine_components(grid: Grid2D, subdomains, dirichlet: Optional[Dirichlet] = None):
    """Affine split ``A(mu) = sum_q mu_q A_q`` for piecewise-constant conductivity.

    ``subdomains`` is a list of cell-index collections covering the grid.
    Faces inside a subdomain carry that subdomain's coefficient; faces on an
    interface between subdomains use the arithmetic mean of the two
    coefficients, which keeps the decomposition affine. Dirichlet data must be
    homogeneous (default: all edges zero).
    """
    dirichlet = Dirichlet.constant(grid, 0.0) if dirichlet is None else dirichlet
    label = np.full(grid.n_cells, -1)
    for q, cells in enumerate(subdomains):
        label[list(cells)] = q
    if np.any(label < 0):
        raise DomainError("subdomains must cover every cell")
    n = grid.n_cells
    left, right, geom = grid.interior_faces()
    comps = []
    for q in range(len(subdomains)):
        w_face = 0.5 * ((label[left] == q).astype(float) + (label[right] == q).astype(float))
        t = geom * w_face
        diag = np.zeros(n)
        np.add.at(diag, left, t)
        np.add.at(diag, right, t)
        for edge in dirichlet.edges():
            cells, g, _ = grid.boundary_faces(edge)
            np.add.at(diag, cells, g * (label[cells] == q))
        rows = np.concatenate([np.arange(n), left, right])
        cols = np.concatenate([np.arange(n), right, left])
        vals = np.concatenate([diag, -t, -t])
        comps.append(sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)).toarray())
    return comps
