"""Batch pipeline: ``generate``, ``build-rom``, ``emulate``, ``assimilate``, ``report``.

Every stage reads the JSON config, writes its numeric artifacts as CSV plus a
JSON report fragment into the output directory, and never writes anything
before validation has passed. Exit codes: 0 success, 2 validation,
3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import __version__
from .cex import (
    EnsembleState,
    bayes_quadrature_1d,
    cex_affine,
    cex_polynomial,
    conditional_probability,
    gmkf_update,
    linear_gaussian_ensemble,
    linear_gaussian_posterior,
    sampled_loss,
)
from .config import load_config, resolve_path
from .darcy import (
    PlanEntry,
    affine_components,
    generate_snapshots,
    qoi_inflow,
    random_plan,
    sample_conductivity,
    solve_steady,
)
from .exceptions import DomainError, NumericalError, RomcexError, ValidationError
from .gpe import KernelSpec, gpe_predict, gpe_train, loo_errors
from .io import (
    atomic_write,
    canonical_json,
    csv_to_matrix,
    darcy_model_from_config,
    load_snapshots,
    matrix_to_csv,
    read_tensor_samples,
    save_kle,
    save_rbm,
    save_snapshots,
    save_tensor,
)
from .parametric import kle, reconstruction_error, truncate_by_threshold
from .rom import AffineOperator, energy_error, pod_basis, pod_objective, rbm_offline, rbm_online, tensor_als
from .uq import NoiseSpec, ProductSampler, generalized_loss

logger = logging.getLogger("romcex")

FRAGMENTS = {
    "generate": "generate.json",
    "build-rom": "build_rom.json",
    "emulate": "emulate.json",
    "assimilate": "assimilate.json",
}


# ---------------------------------------------------------------- helpers


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_hash(cfg):
    # output location and thread count do not change results
    clean = {k: v for k, v in cfg.items() if not k.startswith("_") and k not in ("output_dir", "threads")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True).encode()).hexdigest()


def _provenance(cfg):
    return {
        "config_hash": _config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {"romcex": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }


def _write_fragment(out, stage, body, artifacts, cfg):
    """Write a stage fragment listing every artifact with its hash."""
    body = dict(body)
    body["stage"] = stage
    body["provenance"] = _provenance(cfg)
    body["artifacts"] = {name: _sha(out / name) for name in sorted(artifacts)}
    atomic_write(out / FRAGMENTS[stage], canonical_json(body))
    return body


def _out_dir(cfg):
    out = Path(cfg["output_dir"])
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(cfg):
    t = cfg.get("threads", 1)
    return os.cpu_count() or 1 if t == 0 else t


def _model(cfg):
    return darcy_model_from_config(cfg["model"]["darcy"]).with_modes()


def _sampler(cfg):
    if cfg.get("uq") is None:
        return None
    return ProductSampler.from_dict({**cfg["uq"], "seed": cfg["seed"]})


def _snapshots(cfg, out, path=None):
    stem = Path(path) if path else out / "snapshots"
    if not stem.with_suffix(".csv").exists() and not (stem.suffix == ".csv" and stem.exists()):
        raise FileNotFoundError(f"snapshot file {stem.with_suffix('.csv')} not found; run 'generate' first")
    return load_snapshots(stem)


def _rank(cfg, basis):
    rank = cfg["rom"].get("rank")
    return basis.rank if rank is None else min(rank, basis.rank)


def _qoi_values(model, snapshots):
    xis = snapshots.provenance.get("xi")
    if not model.grid.extraction_cells or xis is None:
        return None
    out = []
    for k, xi in enumerate(xis):
        fld = sample_conductivity(model.modes, np.asarray(xi))
        from .darcy import DarcySolution

        out.append(qoi_inflow(model.grid, fld, DarcySolution(snapshots.states[:, k])))
    return np.array(out)


# ---------------------------------------------------------------- stages


def cmd_generate(cfg):
    """Run the forward model on the parameter plan (or import external snapshots)."""
    out = _out_dir(cfg)
    body = {}
    if cfg["model"].get("darcy") is not None:
        model = _model(cfg)
        n = cfg["model"].get("n_samples", 16)
        plan = cfg["model"].get("plan")
        if plan is not None:
            plan = [PlanEntry(xi=np.asarray(p, dtype=float)) for p in plan]
        else:
            plan = random_plan(n, model.modes.n_modes, cfg["seed"])
        snaps = generate_snapshots(model, plan, seed=cfg["seed"], threads=_threads(cfg))
        qoi = _qoi_values(model, snaps)
        if qoi is not None:
            m = len(qoi)
            stderr = float(np.std(qoi, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
            body["qoi"] = {"values": qoi.tolist(), "mean": float(qoi.mean()), "stderr": stderr}
        body["field_eigenvalues"] = model.modes.eigenvalues.tolist()
    else:
        snaps = load_snapshots(resolve_path(cfg, cfg["model"]["snapshots"]))
    save_snapshots(snaps, out / "snapshots")
    body.update({"n_states": snaps.n_states, "n_snapshots": snaps.n_snapshots, "digest": snaps.digest()})
    return _write_fragment(out, "generate", body, ["snapshots.csv", "snapshots.json"], cfg)


def _kle_tables(snaps, basis):
    sv = [{"j": j + 1, "sigma": float(s), "sigma_sq": float(s * s)} for j, s in enumerate(basis.sigmas)]
    errs = []
    for m in range(basis.rank + 1):
        err = reconstruction_error(snaps, basis, m)
        tail = basis.tail_energy(m)
        errs.append({"rank": m, "weighted_sq_error": err, "tail_energy": tail, "tail_sum": float(np.sum(basis.sigmas[m:])),
                     "identity_gap": abs(err - tail)})
    return sv, errs


def _uq_block(cfg, snaps, basis, rank):
    sampler = _sampler(cfg)
    if sampler is None:
        return None
    modes = basis.modes[:, :rank]

    def chi(z):
        return modes @ (modes.T @ z)

    zero = ProductSampler(NoiseSpec(scale=0.0), NoiseSpec(scale=0.0, label="eta_N"), sampler.seed, sampler.counts)
    with_noise = generalized_loss(snaps, chi, snaps.states, sampler)
    without = generalized_loss(snaps, chi, snaps.states, zero)
    n = snaps.n_states
    return {"rank": rank, "loss_with_noise": with_noise, "loss_without_noise": without,
            "noise_energy": sampler.spec_m.energy(n) + sampler.spec_n.energy(n), "sampler": sampler.to_dict()}


def _rbm(cfg, out):
    model = _model(cfg)
    grid = model.grid
    rcfg = cfg["rom"].get("rbm", {})
    half = grid.nx // 2
    subdomains = [grid.block(0, half, 0, grid.ny), grid.block(half, grid.nx, 0, grid.ny)]
    comps = affine_components(grid, subdomains)
    box = tuple(np.array(b, dtype=float) for b in rcfg.get("box", [[0.1, 0.1], [10.0, 10.0]]))
    op = AffineOperator(tuple(comps), ("mu[0]", "mu[1]"), box)
    load = model.source * grid.cell_area
    train = [np.array(t, dtype=float) for t in rcfg.get("train", [[1.0, 1.0], [0.5, 2.0], [2.0, 0.5], [5.0, 0.2]])]
    test = [np.array(t, dtype=float) for t in rcfg.get("test", [[0.3, 3.0], [1.5, 1.5], [4.0, 0.7]])]
    rbm = rbm_offline(op, load, train)
    save_rbm(rbm, out / "rom" / "rbm")
    table = []
    for size in range(1, len(train) + 1):
        sub = rbm_offline(op, load, train[:size])
        row = {"n_train": size, "n_rb": sub.n_rb, "energy_errors": []}
        for mu in test:
            u = np.linalg.solve(op.matrix(mu), load)
            row["energy_errors"].append(energy_error(op, mu, u, rbm_online(sub, mu).lifted))
        table.append(row)
    files = ["rom/rbm.basis.csv", "rom/rbm.json"] + [f"rom/rbm.A{q}.csv" for q in range(len(comps))]
    return {"method": "rbm", "n_rb": rbm.n_rb, "test_params": [t.tolist() for t in test],
            "nested_energy_errors": table}, files


def _tensor(cfg, out, snaps):
    tcfg = cfg["rom"].get("tensor", {})
    if tcfg.get("samples") is not None:
        arr = read_tensor_samples(resolve_path(cfg, tcfg["samples"]))
    else:
        sampler = _sampler(cfg) or ProductSampler(NoiseSpec(), NoiseSpec(label="eta_N"), cfg["seed"], (10, 10))
        idx = int(tcfg.get("state_index", snaps.n_states // 2))
        base = snaps.states[idx, :]
        em = sampler.draws_m(snaps.n_states)[:, idx]
        en = sampler.draws_n(snaps.n_states)[:, idx]
        arr = base[:, None, None] + em[None, :, None] + en[None, None, :]
    rank = cfg["rom"].get("rank") or 3
    cp = tensor_als(arr, rank, sweeps=tcfg.get("sweeps", 200), tol=tcfg.get("tol", 1e-12), seed=cfg["seed"],
                    refit_sweeps=tcfg.get("refit_sweeps", 0))
    save_tensor(cp, out / "rom" / "tensor")
    norm = float(np.linalg.norm(arr))
    rel = []
    for r in range(1, cp.rank + 1):
        approx = np.einsum("ir,jr,kr->ijk", cp.a[:, :r], cp.b[:, :r], cp.c[:, :r])
        rel.append({"rank": r, "relative_error": float(np.linalg.norm(arr - approx) / norm) if norm else 0.0})
    monotone = bool(np.all(np.diff(cp.history) <= 1e-12 * max(norm, 1.0)))
    return {"method": "tensor", "shape": list(arr.shape), "errors": rel, "objective_monotone": monotone}, [
        "rom/tensor.a.csv", "rom/tensor.b.csv", "rom/tensor.c.csv", "rom/tensor.json"]


def cmd_build_rom(cfg, snapshots_path=None):
    """Build the configured ROM; always reports the KLE spectrum and tail-error table."""
    out = _out_dir(cfg)
    snaps = _snapshots(cfg, out, snapshots_path)
    rom_cfg = cfg["rom"]
    basis = kle(snaps, tol=rom_cfg.get("tol", 1e-12))
    if rom_cfg.get("threshold") is not None:
        basis = truncate_by_threshold(basis, rom_cfg["threshold"])
    sv, errs = _kle_tables(snaps, basis)
    rank = _rank(cfg, basis)
    save_kle(basis, out / "rom" / "kle")
    files = ["rom/kle.sigmas.csv", "rom/kle.modes.csv", "rom/kle.param_functions.csv", "rom/kle.json"]
    body = {"method": rom_cfg["method"], "rank": rank, "singular_values": sv, "reconstruction_errors": errs,
            "total_energy": snaps.energy()}
    method = rom_cfg["method"]
    if method == "pod":
        pod = pod_basis(snaps, rank, tol=rom_cfg.get("tol", 1e-12))
        z = np.sqrt(snaps.weights) * snaps.states
        atomic_write(out / "rom" / "pod.csv", matrix_to_csv(pod.columns))
        files.append("rom/pod.csv")
        body["pod"] = {"k": pod.k, "captured_energy": pod.captured_energy,
                       "objective_sq": pod_objective(z, pod.columns) ** 2, "tail_energy": basis.tail_energy(rank)}
    elif method == "rbm":
        extra, more = _rbm(cfg, out)
        body["rbm"] = extra
        files += more
    elif method == "tensor":
        extra, more = _tensor(cfg, out, snaps)
        body["tensor"] = extra
        files += more
    uq = _uq_block(cfg, snaps, basis, rank)
    if uq is not None:
        body["uq"] = uq
    return _write_fragment(out, "build-rom", body, files, cfg)


def _emulator_targets(cfg, snaps, out):
    target = cfg["emulator"]["target"]
    if target == "states":
        return snaps.states.T
    if target == "qoi":
        return _qoi_values(_model(cfg), snaps).reshape(-1, 1)
    basis = kle(snaps, tol=cfg["rom"].get("tol", 1e-12))
    rank = _rank(cfg, basis)
    return basis.param_functions[:, :rank] * basis.sigmas[:rank]


def _queries(cfg, queries_path):
    if queries_path is not None:
        q = csv_to_matrix(queries_path)
    elif cfg["emulator"].get("queries_file") is not None:
        q = csv_to_matrix(resolve_path(cfg, cfg["emulator"]["queries_file"]))
    else:
        q = np.asarray(cfg["emulator"].get("queries", []), dtype=float)
    return q


def cmd_emulate(cfg, snapshots_path=None, queries_path=None):
    """Kriging emulator from parameters to the configured target, with LOO errors."""
    out = _out_dir(cfg)
    snaps = _snapshots(cfg, out, snapshots_path)
    ecfg = cfg["emulator"]
    y = _emulator_targets(cfg, snaps, out)
    x = snaps.params
    n_train = ecfg.get("n_train") or snaps.n_snapshots
    x_tr, y_tr = x[:n_train], y[:n_train]
    kernel = KernelSpec.from_dict(ecfg.get("kernel", {}))
    em = gpe_train(x_tr, y_tr, kernel, ecfg["mean_mode"])
    em.save(out / "emulator.json")
    train_pred = gpe_predict(em, x_tr).reshape(y_tr.shape)
    scale = np.maximum(np.linalg.norm(y_tr, axis=1), 1e-300)
    train_rel = (np.linalg.norm(train_pred - y_tr, axis=1) / scale).tolist()
    loo = loo_errors(x_tr, y_tr, em.kernel, ecfg["mean_mode"]) if len(x_tr) > 2 else np.array([])
    const = []
    for i in range(len(x_tr)):
        others = np.delete(y_tr, i, axis=0)
        const.append(float(np.linalg.norm(others.mean(axis=0) - y_tr[i])) if len(others) else float("nan"))
    q = _queries(cfg, queries_path)
    p = x.shape[1]
    q = q.reshape(-1, p) if q.size else np.zeros((0, p))
    preds = gpe_predict(em, q).reshape(q.shape[0], y.shape[1]) if q.shape[0] else np.zeros((0, y.shape[1]))
    header = ",".join([f"mu_{i}" for i in range(p)] + [f"out_{j}" for j in range(y.shape[1])])
    rows = matrix_to_csv(np.hstack([q, preds])) if q.shape[0] else ""
    atomic_write(out / "predictions.csv", header + "\n" + rows)
    body = {
        "target": ecfg["target"],
        "kernel": em.kernel.to_dict(),
        "n_train": int(len(x_tr)),
        "training_relative_errors": train_rel,
        "loo": [{"index": i, "loo_error": float(e), "constant_mean_error": c} for i, (e, c) in enumerate(zip(loo, const))],
        "loo_rms": float(np.sqrt(np.mean(loo**2))) if loo.size else None,
        "constant_mean_rms": float(np.sqrt(np.mean(np.square(const)))) if const else None,
        "n_queries": int(q.shape[0]),
    }
    return _write_fragment(out, "emulate", body, ["emulator.json", "predictions.csv"], cfg)


def _loss_table(ens, degrees):
    rows = []
    for d in degrees:
        fit = cex_affine(ens) if d == 1 else cex_polynomial(ens, d)
        rows.append({"degree": d, "loss": sampled_loss(ens.x, fit(ens.z))})
    return rows


def _assimilate_linear_gaussian(cfg, out):
    a = cfg["assimilation"]
    y = float(np.atleast_1d(a["observed"])[0])
    ens = linear_gaussian_ensemble(a["ensemble_size"], a["prior_mean"], a["prior_std"], a["coefficient"],
                                   a["noise_std"], seed=cfg["seed"])
    xa = gmkf_update(ens, [y])
    mean_cf, var_cf = linear_gaussian_posterior(y, a["prior_mean"], a["prior_std"], a["coefficient"], a["noise_std"])
    g = a.get("grid", {})
    grid = np.linspace(g.get("lo", -8.0), g.get("hi", 8.0), g.get("n", 4001))
    pm, ps, h, s = a["prior_mean"], a["prior_std"], a["coefficient"], a["noise_std"]
    quad = bayes_quadrature_1d(
        lambda x: np.exp(-0.5 * ((x - pm) / ps) ** 2) / (ps * np.sqrt(2 * np.pi)),
        lambda obs, x: np.exp(-0.5 * ((obs - h * x) / s) ** 2) / (s * np.sqrt(2 * np.pi)),
        y, grid)
    gm, gv = float(xa.mean()), float(xa.var(ddof=1))
    prob_quad = float(trapezoid(np.where(grid > 0, quad.pdf, 0.0), grid))
    deg = max(a.get("degrees", [3]))
    prob_cex = conditional_probability(ens, lambda col: col[0] > 0, [y], degree=deg)
    comparison = {
        "observation": y,
        "gmkf": {"mean": gm, "variance": gv},
        "quadrature": {"mean": quad.mean, "variance": quad.variance},
        "closed_form": {"mean": mean_cf, "variance": var_cf},
        "relative_difference": {
            "mean": abs(gm - quad.mean) / max(abs(quad.mean), 1e-300),
            "variance": abs(gv - quad.variance) / quad.variance,
        },
        "prior_predictive_mean": float(ens.z.mean()),
        "event_x_positive": {"quadrature": prob_quad, "cex": prob_cex.value, "cex_raw": prob_cex.raw,
                             "clamped": prob_cex.clamped, "degree": deg},
    }
    comparison["agree_within_2pct"] = bool(max(comparison["relative_difference"].values()) <= 0.02)
    return ens, xa, comparison


def _assimilate_darcy(cfg, out):
    a = cfg["assimilation"]
    model = _model(cfg)
    snaps = _snapshots(cfg, out)
    obs = [int(i) for i in a["observe"]]
    rng = np.random.default_rng([cfg["seed"], 7])
    noise = float(a.get("noise_std", 0.01))
    z = snaps.states[obs, :] + noise * rng.standard_normal((len(obs), snaps.n_snapshots))
    ens = EnsembleState(snaps.params.T, z, cfg["seed"], {"observe": obs, "noise_std": noise})
    if a.get("observed") is not None and len(a["observed"]) == len(obs):
        y = np.asarray(a["observed"], dtype=float)
        truth = None
    else:
        # synthetic truth from an independent KLE draw
        xi = np.random.default_rng([cfg["seed"], 8]).standard_normal(model.modes.n_modes)
        fld = sample_conductivity(model.modes, xi)
        head = solve_steady(model.grid, fld, model.source, model.dirichlet).head
        y = head[obs] + noise * rng.standard_normal(len(obs))
        truth = xi.tolist()
    xa = gmkf_update(ens, y)
    comparison = {
        "observation": y.tolist(),
        "gmkf": {"mean": xa.mean(axis=1).tolist(), "variance": xa.var(axis=1, ddof=1).tolist()},
        "prior": {"mean": ens.x.mean(axis=1).tolist(), "variance": ens.x.var(axis=1, ddof=1).tolist()},
        "truth": truth,
        "quadrature": None,
    }
    return ens, xa, comparison


def cmd_assimilate(cfg):
    """One Gauss-Markov-Kalman update plus polynomial-CEX loss comparison."""
    out = _out_dir(cfg)
    a = cfg["assimilation"]
    if a["kind"] == "linear-gaussian":
        ens, xa, comparison = _assimilate_linear_gaussian(cfg, out)
    else:
        ens, xa, comparison = _assimilate_darcy(cfg, out)
    ens.save(out / "prior")
    EnsembleState(xa, ens.z, ens.seed, ens.meta).save(out / "posterior")
    losses = _loss_table(ens, sorted(a.get("degrees", [1])))
    body = {"kind": a["kind"], "ensemble_size": ens.size, "comparison": comparison, "losses": losses,
            "loss_non_increasing": bool(all(b["loss"] <= f["loss"] + 1e-12 for f, b in zip(losses, losses[1:])))}
    files = ["prior.x.csv", "prior.z.csv", "prior.json", "posterior.x.csv", "posterior.z.csv", "posterior.json"]
    return _write_fragment(out, "assimilate", body, files, cfg)


def _fmt(x):
    return f"{x:.6e}" if isinstance(x, float) else str(x)


def _text_report(report):
    lines = ["romcex run report", "=================", ""]
    prov = report["provenance"]
    lines.append(f"config hash: {prov['config_hash']}")
    lines.append(f"seed: {prov['seed']}")
    lines.append("")
    rom = report["stages"]["build-rom"]
    lines.append("singular values")
    lines.append(f"{'j':>4} {'sigma':>16} {'sigma^2':>16}")
    for r in rom["singular_values"]:
        lines.append(f"{r['j']:>4} {_fmt(r['sigma']):>16} {_fmt(r['sigma_sq']):>16}")
    lines.append("")
    lines.append("reconstruction error vs rank")
    lines.append(f"{'rank':>4} {'weighted sq err':>16} {'tail energy':>16} {'tail sum':>16}")
    for r in rom["reconstruction_errors"]:
        lines.append(f"{r['rank']:>4} {_fmt(r['weighted_sq_error']):>16} {_fmt(r['tail_energy']):>16} {_fmt(r['tail_sum']):>16}")
    lines.append("")
    emu = report["stages"]["emulate"]
    lines.append(f"emulator: target={emu['target']} n_train={emu['n_train']} "
                 f"loo_rms={_fmt(emu['loo_rms'])} constant_mean_rms={_fmt(emu['constant_mean_rms'])}")
    lines.append("")
    asm = report["stages"]["assimilate"]
    comp = asm["comparison"]
    lines.append(f"assimilation ({asm['kind']}, N={asm['ensemble_size']})")
    for key in ("gmkf", "quadrature", "closed_form", "prior"):
        if comp.get(key):
            lines.append(f"  {key:<12} mean={comp[key]['mean']} variance={comp[key]['variance']}")
    for row in asm["losses"]:
        lines.append(f"  degree {row['degree']}: loss {_fmt(row['loss'])}")
    gen = report["stages"]["generate"]
    if "qoi" in gen:
        lines.append("")
        lines.append(f"QoI inflow: {_fmt(gen['qoi']['mean'])} +/- {_fmt(gen['qoi']['stderr'])}")
    lines.append("")
    lines.append(f"report hash: {report['report_hash']}")
    return "\n".join(lines) + "\n"


def cmd_report(run_dir):
    """Consolidate stage fragments, verifying every referenced artifact hash."""
    run_dir = Path(run_dir)
    missing = [name for name in FRAGMENTS.values() if not (run_dir / name).exists()]
    if missing:
        raise FileNotFoundError(f"run directory {run_dir} is missing artifacts: {', '.join(missing)}")
    stages = {}
    problems = []
    for stage, name in FRAGMENTS.items():
        frag = json.loads((run_dir / name).read_text())
        for art, digest in frag.get("artifacts", {}).items():
            path = run_dir / art
            if not path.exists():
                problems.append(f"{name}: {art} does not exist")
            elif _sha(path) != digest:
                problems.append(f"{name}: {art} hash mismatch")
        stages[stage] = frag
    if problems:
        raise FileNotFoundError("unresolved artifact references: " + "; ".join(problems))
    hashes = {s["provenance"]["config_hash"] for s in stages.values()}
    report = {
        "provenance": {**stages["generate"]["provenance"], "config_hashes_consistent": len(hashes) == 1},
        "stages": stages,
    }
    report["report_hash"] = hashlib.sha256(json.dumps(report, sort_keys=True).encode()).hexdigest()
    atomic_write(run_dir / "report.json", canonical_json(report))
    atomic_write(run_dir / "report.txt", _text_report(report))
    return report


# ---------------------------------------------------------------- entry point


def _parser():
    p = argparse.ArgumentParser(prog="romcex", description="Parametric ROM / conditional-expectation pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "run the forward model and persist snapshots"),
        ("build-rom", "build KLE/POD/RBM/tensor reduced models"),
        ("emulate", "train a Kriging emulator and predict at query points"),
        ("assimilate", "Gauss-Markov-Kalman update with quadrature comparison"),
        ("report", "consolidate a run directory into a report"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="pipeline JSON config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory (overrides config)")
        sp.add_argument("--threads", type=int, help="worker threads, 0 = auto")
        if name in ("build-rom", "emulate"):
            sp.add_argument("--snapshots", type=Path, help="snapshot stem (default <out>/snapshots)")
        if name == "emulate":
            sp.add_argument("--queries", type=Path, help="CSV of query parameters, one per row")
    return p


def _setup_logging():
    level = os.environ.get("ROMCEX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            run_dir = args.out
            if run_dir is None:
                run_dir = Path(load_config(args.config)["output_dir"]) if args.config else Path("run")
            report = cmd_report(run_dir)
            print(f"report written to {Path(run_dir) / 'report.json'} (hash {report['report_hash'][:12]})")
            return 0
        if args.config is None:
            raise ValidationError("--config is required", "config")
        overrides = {"seed": args.seed, "threads": args.threads,
                     "output_dir": str(args.out) if args.out is not None else None}
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            frag = cmd_generate(cfg)
        elif args.command == "build-rom":
            frag = cmd_build_rom(cfg, args.snapshots)
        elif args.command == "emulate":
            frag = cmd_emulate(cfg, args.snapshots, args.queries)
        else:
            frag = cmd_assimilate(cfg)
        print(f"{args.command}: wrote {len(frag['artifacts'])} artifacts to {cfg['output_dir']}")
        return 0
    except (ValidationError, DomainError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    except RomcexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
