"""File formats: CSV matrices with JSON sidecars, and JSON model configuration.

All writes go through :func:`atomic_write` (temp file + rename).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .darcy import DarcyModel, Dirichlet, EDGES, Grid2D, KleFieldSpec
from .exceptions import DomainError, ValidationError
from .linalg import read_matrix_csv as csv_to_matrix
from .parametric import KleBasis, SnapshotSet
from .rom import AffineOperator, RbmModel, TensorCP

__all__ = [
    "atomic_write",
    "canonical_json",
    "matrix_to_csv",
    "csv_to_matrix",
    "save_snapshots",
    "load_snapshots",
    "save_kle",
    "load_kle",
    "save_rbm",
    "load_rbm",
    "save_tensor",
    "load_tensor",
    "write_tensor_samples",
    "read_tensor_samples",
    "darcy_model_from_config",
]


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def matrix_to_csv(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    buf = io.StringIO()
    for row in matrix:
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def save_snapshots(snapshots: SnapshotSet, stem, extra=None):
    """``<stem>.csv`` holds the ``(n, m)`` state matrix; ``<stem>.json`` the rest."""
    stem = Path(stem)
    atomic_write(stem.with_suffix(".csv"), matrix_to_csv(snapshots.states))
    side = {
        "params": snapshots.params.tolist(),
        "weights": snapshots.weights.tolist(),
        "provenance": snapshots.provenance,
        "digest": snapshots.digest(),
    }
    if extra:
        side.update(extra)
    atomic_write(stem.with_suffix(".json"), canonical_json(side))


def load_snapshots(stem):
    stem = Path(stem)
    if stem.suffix in (".csv", ".json"):
        stem = stem.with_suffix("")
    states = csv_to_matrix(stem.with_suffix(".csv"))
    side_path = stem.with_suffix(".json")
    if side_path.exists():
        side = json.loads(side_path.read_text())
        params = np.array(side.get("params", []), dtype=float)
        weights = side.get("weights")
        prov = side.get("provenance", {})
    else:
        params, weights, prov = np.arange(states.shape[1], dtype=float), None, {}
    if params.size == 0:
        params = np.zeros((states.shape[1], 0))
    return SnapshotSet(params, states, weights, prov)


def save_kle(basis: KleBasis, stem, meta=None):
    stem = Path(stem)
    atomic_write(stem.parent / f"{stem.name}.sigmas.csv", matrix_to_csv(basis.sigmas))
    atomic_write(stem.parent / f"{stem.name}.modes.csv", matrix_to_csv(basis.modes))
    atomic_write(stem.parent / f"{stem.name}.param_functions.csv", matrix_to_csv(basis.param_functions))
    doc = {"weights": basis.weights.tolist(), "tol": basis.tol, "source_digest": basis.source_digest,
           "rank": basis.rank, "n_states": basis.modes.shape[0]}
    doc.update(meta or {})
    atomic_write(stem.parent / f"{stem.name}.json", canonical_json(doc))


def load_kle(stem):
    stem = Path(stem)
    doc = json.loads((stem.parent / f"{stem.name}.json").read_text())
    r, n = doc["rank"], doc["n_states"]
    m = len(doc["weights"])
    sig = csv_to_matrix(stem.parent / f"{stem.name}.sigmas.csv").reshape(-1)[:r]
    modes = csv_to_matrix(stem.parent / f"{stem.name}.modes.csv").reshape(n, r)
    s = csv_to_matrix(stem.parent / f"{stem.name}.param_functions.csv").reshape(m, r)
    return KleBasis(sig, modes, s, np.array(doc["weights"]), doc["tol"], doc["source_digest"])


def save_rbm(model: RbmModel, stem):
    stem = Path(stem)
    atomic_write(stem.parent / f"{stem.name}.basis.csv", matrix_to_csv(model.basis))
    for q, a in enumerate(model.operator.components):
        atomic_write(stem.parent / f"{stem.name}.A{q}.csv", matrix_to_csv(a))
    doc = {
        "theta": list(model.operator.theta),
        "box": None if model.operator.box is None else [np.atleast_1d(b).tolist() for b in model.operator.box],
        "load": model.load.tolist(),
        "train_params": model.train_params.tolist(),
        "reduced_components": [r.tolist() for r in model.reduced_components],
        "reduced_load": model.reduced_load.tolist(),
        "n": model.operator.n,
        "n_rb": model.n_rb,
    }
    atomic_write(stem.parent / f"{stem.name}.json", canonical_json(doc))


def load_rbm(stem):
    stem = Path(stem)
    doc = json.loads((stem.parent / f"{stem.name}.json").read_text())
    n, k = doc["n"], doc["n_rb"]
    comps = [csv_to_matrix(stem.parent / f"{stem.name}.A{q}.csv") for q in range(len(doc["theta"]))]
    box = None if doc["box"] is None else tuple(np.array(b) for b in doc["box"])
    op = AffineOperator(tuple(comps), tuple(doc["theta"]), box)
    basis = csv_to_matrix(stem.parent / f"{stem.name}.basis.csv").reshape(n, k)
    return RbmModel(op, np.array(doc["load"]), basis, tuple(np.array(r).reshape(k, k) for r in doc["reduced_components"]),
                    np.array(doc["reduced_load"]), np.array(doc["train_params"]))


def save_tensor(cp: TensorCP, stem):
    stem = Path(stem)
    for name in ("a", "b", "c"):
        atomic_write(stem.parent / f"{stem.name}.{name}.csv", matrix_to_csv(getattr(cp, name)))
    atomic_write(stem.parent / f"{stem.name}.json", canonical_json(
        {"rank": cp.rank, "shape": [cp.a.shape[0], cp.b.shape[0], cp.c.shape[0]], "history": list(cp.history)}))


def load_tensor(stem):
    stem = Path(stem)
    doc = json.loads((stem.parent / f"{stem.name}.json").read_text())
    r = doc["rank"]
    f = [csv_to_matrix(stem.parent / f"{stem.name}.{x}.csv").reshape(n, r) for x, n in zip("abc", doc["shape"])]
    return TensorCP(*f, tuple(doc["history"]))


def write_tensor_samples(path, array):
    """CSV with header ``i_mu,i_M,i_N,value``, one line per entry."""
    array = np.asarray(array, dtype=float)
    buf = io.StringIO()
    buf.write("i_mu,i_M,i_N,value\n")
    for idx in np.ndindex(array.shape):
        buf.write(f"{idx[0]},{idx[1]},{idx[2]},{float(array[idx])!r}\n")
    atomic_write(path, buf.getvalue())


def read_tensor_samples(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["i_mu", "i_M", "i_N", "value"]:
            raise DomainError("tensor sample CSV needs the header i_mu,i_M,i_N,value")
        rows = [(int(r["i_mu"]), int(r["i_M"]), int(r["i_N"]), float(r["value"])) for r in reader]
    if not rows:
        raise DomainError("tensor sample CSV is empty")
    shape = tuple(max(r[i] for r in rows) + 1 for i in range(3))
    out = np.full(shape, np.nan)
    for i, j, k, v in rows:
        out[i, j, k] = v
    if np.isnan(out).any():
        raise DomainError("tensor sample CSV does not cover the full index grid")
    return out


def _require(d, key, path):
    if key not in d:
        raise ValidationError("missing required field", f"{path}.{key}")
    return d[key]


def darcy_model_from_config(cfg, path="model.darcy"):
    """Build a :class:`DarcyModel` from its JSON section.

    Expected keys: ``grid`` (``nx``, ``ny``, optional ``hx``, ``hy``),
    ``field`` (KleFieldSpec fields), ``source`` (scalar or per-cell list),
    ``extraction_cells`` (list), ``boundary`` (edge -> value, list, or null for no-flux).
    """
    try:
        g = _require(cfg, "grid", path)
        nx, ny = int(_require(g, "nx", f"{path}.grid")), int(_require(g, "ny", f"{path}.grid"))
        grid = Grid2D(nx, ny, float(g.get("hx", 1.0 / nx)), float(g.get("hy", 1.0 / ny)),
                      tuple(cfg.get("extraction_cells", ())))
    except (DomainError, TypeError, ValueError) as exc:
        raise ValidationError(str(exc), f"{path}.grid") from exc
    try:
        spec = KleFieldSpec(**cfg.get("field", {}))
    except (TypeError, DomainError) as exc:
        raise ValidationError(str(exc), f"{path}.field") from exc
    if spec.n_modes > grid.n_cells:
        raise ValidationError("n_modes exceeds grid size", f"{path}.field.n_modes")
    source = np.broadcast_to(np.asarray(cfg.get("source", 1.0), dtype=float), (grid.n_cells,)).copy()
    bc = cfg.get("boundary", {e: 0.0 for e in EDGES})
    values = {}
    for edge in EDGES:
        v = bc.get(edge)
        if v is None:
            continue
        size = grid.ny if edge in ("west", "east") else grid.nx
        arr = np.broadcast_to(np.asarray(v, dtype=float), (size,)).copy()
        values[edge] = arr
    if not values:
        raise ValidationError("at least one Dirichlet edge is required", f"{path}.boundary")
    return DarcyModel(grid, spec, source, Dirichlet(**values))
