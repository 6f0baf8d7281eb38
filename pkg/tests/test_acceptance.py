"""Exit criteria of the build, one test per criterion.

Each test records a ``PASS``/``FAIL`` line that is printed in the terminal
summary. Run on its own with ``pytest tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from romcex import linalg
from romcex.cex import (
    EnsembleState,
    bayes_quadrature_1d,
    cex_affine,
    cex_polynomial,
    galerkin_residual,
    gmkf_update,
    linear_gaussian_ensemble,
    linear_gaussian_posterior,
    sampled_loss,
)
from romcex.darcy import (
    ConductivityField,
    Dirichlet,
    Grid2D,
    affine_components,
    boundary_fluxes,
    sample_conductivity,
    solve_steady,
)
from romcex.gpe import KernelSpec, gpe_predict, gpe_train
from romcex.parametric import SnapshotSet, correlation_u, kle, reconstruction_error
from romcex.rom import AffineOperator, energy_error, pod_basis, pod_objective, rbm_offline, rbm_online, tensor_als
from romcex.uq import NoiseSpec, ProductSampler, generalized_loss, total_expectation

from conftest import ACCEPTANCE_LINES, darcy_model, darcy_snapshots

pytestmark = pytest.mark.acceptance


def record(number, name, ok, detail):
    line = f"[{number:2d}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_s_number_identity():
    rng = np.random.default_rng(1)
    worst_gap, beaten = 0.0, 0
    for _ in range(50):
        m, n = rng.integers(1, 9), rng.integers(1, 7)
        a = rng.standard_normal((m, n))
        res = linalg.svd(a)
        sig = np.append(res.singular_values, 0.0)
        for k in range(min(m, n)):
            err = np.linalg.norm(a - res.reconstruct(k), 2)
            worst_gap = max(worst_gap, abs(err - sig[k]))
            assert np.isclose(linalg.s_number(a, k + 1), sig[k])
            if k == 0:
                continue
            # rank-k competitors; the truncation is rank k and its error is sigma_{k+1}
            for _ in range(20):
                b = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
                beaten += np.linalg.norm(a - b, 2) < sig[k] - 1e-12
    record(1, "s-number identity", worst_gap <= 1e-8 and beaten == 0,
           f"max |err - sigma| = {worst_gap:.2e}, competitors beating truncation = {beaten}")


def test_02_spectrum_equality():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        n, m = rng.integers(2, 10), rng.integers(2, 10)
        w = rng.random(m) + 0.05
        s = SnapshotSet(np.arange(float(m)), rng.standard_normal((n, m)), w / w.sum())
        pair = correlation_u(s)
        eu = linalg.sym_eigen(pair.c_u).values[::-1]
        eq = linalg.sym_eigen(pair.c_q).values[::-1]
        r = min(n, m)
        top = max(eu[0], 1e-300)
        worst = max(worst, np.max(np.abs(eu[:r] - eq[:r])) / top)
        assert np.all(np.abs(eu[r:]) <= 1e-10 * top) and np.all(np.abs(eq[r:]) <= 1e-10 * top)
    record(2, "spectrum equality C_U vs C_Q", worst <= 1e-8, f"max relative gap = {worst:.2e}")


def test_03_kle_tail_identity():
    s = darcy_snapshots(n=8, n_samples=16, seed=3)
    b = kle(s)
    gaps = [abs(reconstruction_error(s, b, m) - np.sum(b.sigmas[m:] ** 2)) for m in range(b.rank + 1)]
    record(3, "KLE tail identity", max(gaps) <= 1e-8, f"rank {b.rank}, max gap = {max(gaps):.2e}")


def test_04_pod_optimality():
    s = darcy_snapshots(n=8, n_samples=16, seed=4)
    z = s.states * np.sqrt(s.weights)
    b = kle(s)
    rng = np.random.default_rng(4)
    gap, beaten = 0.0, 0
    for k in (1, 2, 3):
        pod = pod_basis(s, k)
        opt = pod_objective(z, pod.columns) ** 2
        gap = max(gap, abs(opt - b.tail_energy(k)))
        for _ in range(500):
            q, _ = np.linalg.qr(rng.standard_normal((z.shape[0], k)))
            beaten += pod_objective(z, q) ** 2 < opt
    record(4, "POD optimality", gap <= 1e-8 and beaten == 0,
           f"|objective - tail| = {gap:.2e}, Stiefel competitors beating optimum = {beaten}/1500")


def test_05_kriging_interpolation():
    rng = np.random.default_rng(5)
    x = rng.random((12, 2))
    y = np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]) + 2.0
    worst = 0.0
    for mode in ("zero", "constant-fit"):
        em = gpe_train(x, y, mean_mode=mode)
        worst = max(worst, np.max(np.abs(gpe_predict(em, x)[:, 0] - y) / np.abs(y)))
    yv = np.column_stack([y, x[:, 0] ** 2 + 1, np.exp(x[:, 1])])
    kern = KernelSpec(cross_covariance=np.array([[1.0, 0.4, 0.0], [0.4, 1.0, 0.2], [0.0, 0.2, 1.0]]))
    for solver in ("separable", "blocked"):
        em = gpe_train(x, yv, kern, "constant-fit", solver)
        worst = max(worst, np.max(np.abs(gpe_predict(em, x) - yv) / np.abs(yv)))
    record(5, "Kriging interpolation", worst <= 1e-6, f"max relative error at training points = {worst:.2e}")


def test_06_gmkf_linear_gaussian():
    start = time.perf_counter()
    y = 1.0
    ens = linear_gaussian_ensemble(100_000, prior_mean=0.0, prior_std=1.0, coefficient=1.0, noise_std=1.0, seed=6)
    xa = gmkf_update(ens, [y])
    elapsed = time.perf_counter() - start
    mean_cf, var_cf = linear_gaussian_posterior(y)
    grid = np.linspace(-8, 8, 4001)
    pdf = lambda x: np.exp(-0.5 * x**2) / np.sqrt(2 * np.pi)  # noqa: E731
    quad = bayes_quadrature_1d(pdf, lambda obs, x: pdf(obs - x), y, grid)
    m, v = xa.mean(), xa.var(ddof=1)
    rel = max(abs(m / mean_cf - 1), abs(v / var_cf - 1), abs(m / quad.mean - 1), abs(v / quad.variance - 1))
    record(6, "GMKF linear-Gaussian exactness", rel <= 0.02 and elapsed < 10,
           f"mean {m:.4f} vs {mean_cf:.4f}, var {v:.4f} vs {var_cf:.4f}, max rel = {rel:.2%}, {elapsed:.2f}s")


def test_07_galerkin_orthogonality():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((2, 20_000))
    x = np.vstack([np.tanh(z[0]) + z[1] ** 2, z[0] * z[1]]) + 0.1 * rng.standard_normal((2, 20_000))
    ens = EnsembleState(x, z)
    fit = cex_affine(ens)
    corr = np.max(np.abs(galerkin_residual(ens, fit, 1)))
    pred = fit(z)
    lhs = np.mean(np.sum(x**2, axis=0))
    rhs = np.mean(np.sum(pred**2, axis=0)) + sampled_loss(x, pred)
    pyth = abs(lhs - rhs) / lhs
    record(7, "Galerkin orthogonality", corr <= 1e-10 and pyth <= 1e-8,
           f"max residual correlation = {corr:.2e}, Pythagoras relative gap = {pyth:.2e}")


def test_08_loss_monotone_in_degree():
    rng = np.random.default_rng(8)
    n = 5000
    models = {
        "cubic": lambda x, e: x**3 + 0.5 * e,
        "sine": lambda x, e: np.sin(2 * x) + 0.2 * e,
        "exp": lambda x, e: np.exp(0.5 * x) + 0.3 * e,
    }
    ok, parts = True, []
    for name, h in models.items():
        x = rng.standard_normal((1, n))
        z = h(x, rng.standard_normal((1, n)))
        ens = EnsembleState(x, z)
        losses = [sampled_loss(x, (cex_affine(ens) if d == 1 else cex_polynomial(ens, d))(z)) for d in (1, 2, 3)]
        ok &= bool(np.all(np.diff(losses) <= 1e-12))
        parts.append(f"{name} " + "/".join(f"{v:.4f}" for v in losses))
    record(8, "loss monotone over nested feature spaces", ok, "; ".join(parts))


def test_09_als_behavior():
    rng = np.random.default_rng(9)
    fac = [rng.standard_normal((n, 2)) for n in (8, 6, 5)]
    fac[1][:, 0] *= 5.0
    x = np.einsum("ir,jr,kr->ijk", *fac)
    cp = tensor_als(x, 2, refit_sweeps=200, seed=9)
    hist = np.asarray(cp.history)
    rises = int(np.sum(np.diff(hist) > 1e-12 * np.linalg.norm(x)))
    rel = np.linalg.norm(cp.full() - x) / np.linalg.norm(x)
    record(9, "ALS behavior", rises == 0 and rel <= 1e-6,
           f"{len(hist)} factor updates, increases = {rises}, relative error = {rel:.2e}")


def test_10_rbm_consistency():
    grid = Grid2D.unit_square(8)
    comps = affine_components(grid, [grid.block(0, 4, 0, 8), grid.block(4, 8, 0, 8)])
    op = AffineOperator(tuple(comps), ("mu[0]", "mu[1]"), (np.array([0.1, 0.1]), np.array([10.0, 10.0])))
    f = np.full(grid.n_cells, grid.cell_area)
    train = [[1.0, 1.0], [0.2, 5.0], [8.0, 0.3], [2.0, 3.0], [0.5, 0.5]]
    model = rbm_offline(op, f, train)
    snap_err = max(np.max(np.abs(rbm_online(model, mu).lifted - np.linalg.solve(op.matrix(mu), f))) for mu in train)
    rises = 0
    for mu in ([0.6, 2.2], [4.0, 0.9], [9.5, 9.5]):
        u = np.linalg.solve(op.matrix(mu), f)
        errs = [energy_error(op, mu, u, rbm_online(rbm_offline(op, f, train[:k]), mu).lifted)
                for k in range(1, len(train) + 1)]
        rises += int(np.sum(np.diff(errs) > 1e-12 * (u @ op.matrix(mu) @ u)))
    record(10, "RBM consistency", snap_err <= 1e-8 and rises == 0,
           f"max training-point error = {snap_err:.2e}, energy-error increases = {rises}")


def test_11_darcy_conservation_and_convergence():
    model = darcy_model(8)
    fld = sample_conductivity(model.modes, seed=11)
    sol = solve_steady(model.grid, fld, model.source, model.dirichlet)
    out = sum(v.sum() for v in boundary_fluxes(model.grid, fld, sol, model.dirichlet).values())
    balance = abs(out - model.source.sum() * model.grid.cell_area)

    def error(n):
        grid = Grid2D.unit_square(n)
        c = grid.centers()
        exact = np.sin(np.pi * c[:, 0]) * np.sin(np.pi * c[:, 1])
        s = solve_steady(grid, ConductivityField.constant(grid), 2 * np.pi**2 * exact, Dirichlet.constant(grid))
        return np.sqrt(np.mean((s.head - exact) ** 2))

    ratio = error(8) / error(16)
    record(11, "Darcy conservation and convergence", balance <= 1e-10 and 3.5 <= ratio <= 4.5,
           f"flux imbalance = {balance:.2e}, error ratio 8->16 = {ratio:.3f}")


def test_12_fubini_product_measure():
    sm, sn = 0.2, 0.3
    sampler = ProductSampler(NoiseSpec(scale=sm), NoiseSpec(scale=sn, label="eta_N"), seed=12, counts=(100, 100))
    te = total_expectation(lambda a, b: float(np.sum(a * b) + np.sum(a**2)), sampler, dim=4)
    exact = te.nested == te.flat
    s = darcy_snapshots(n=8, n_samples=16, seed=12)
    b = kle(s)
    modes = b.modes[:, :2]
    chi = lambda z: modes @ (modes.T @ z)  # noqa: E731
    quiet = ProductSampler(NoiseSpec(), NoiseSpec(label="eta_N"), seed=12, counts=(100, 100))
    base = generalized_loss(s, chi, s.states, quiet)
    loss = generalized_loss(s, chi, s.states, sampler)
    analytic = b.tail_energy(2) + s.n_states * (sm**2 + sn**2)
    rel = abs(loss / analytic - 1)
    record(12, "Fubini / product-measure checks", exact and rel <= 0.05 and abs(base - b.tail_energy(2)) <= 1e-10,
           f"nested == flat exactly: {exact}, loss {loss:.5f} vs analytic {analytic:.5f} ({rel:.2%})")
