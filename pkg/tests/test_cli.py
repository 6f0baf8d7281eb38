import json

import numpy as np
import pytest

from romcex import cli
from romcex.exceptions import ConditioningError
from romcex.gpe import KernelSpec, loo_errors
from romcex.io import load_snapshots, write_tensor_samples
from romcex.parametric import kle


def darcy_cfg(n=4, samples=2, **extra):
    cfg = {
        "seed": 5,
        "output_dir": "run",
        "model": {
            "darcy": {
                "grid": {"nx": n, "ny": n},
                "field": {"n_modes": 3, "variance": 0.5, "correlation_length": 0.4},
                "source": 1.0,
                "boundary": {"west": 0.0, "east": 0.0, "south": None, "north": None},
            },
            "n_samples": samples,
        },
        "assimilation": {"ensemble_size": 20_000},
    }
    for key, val in extra.items():
        cfg[key] = val
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(tmp_path, cfg, *stages, out="run"):
    path = write(tmp_path, cfg)
    for stage in stages:
        assert cli.main([stage, "--config", str(path), "--out", str(tmp_path / out)]) == 0
    return tmp_path / out


def frag(run_dir, name):
    return json.loads((run_dir / name).read_text())


def test_generate_minimal(tmp_path):
    out = run(tmp_path, darcy_cfg(), "generate")
    rows = (out / "snapshots.csv").read_text().splitlines()
    assert len(rows) == 16 and all(len(r.split(",")) == 2 for r in rows)


def test_generate_deterministic(tmp_path):
    a = run(tmp_path, darcy_cfg(samples=4), "generate", out="a")
    b = run(tmp_path, darcy_cfg(samples=4), "generate", out="b")
    assert (a / "snapshots.csv").read_bytes() == (b / "snapshots.csv").read_bytes()
    other = run(tmp_path, {**darcy_cfg(samples=4), "seed": 6}, "generate", out="c")
    assert (a / "snapshots.csv").read_bytes() != (other / "snapshots.csv").read_bytes()


def test_generate_sidecar_round_trip(tmp_path):
    out = run(tmp_path, darcy_cfg(n=6, samples=16), "generate")
    s = load_snapshots(out / "snapshots")
    side = json.loads((out / "snapshots.json").read_text())
    assert s.n_snapshots == 16
    assert np.array_equal(s.params, np.array(side["params"]))
    assert s.digest() == frag(out, "generate.json")["digest"]


def test_build_rom_tables(tmp_path):
    out = run(tmp_path, darcy_cfg(n=8, samples=16), "generate", "build-rom")
    body = frag(out, "build_rom.json")
    rows = body["reconstruction_errors"]
    assert rows[-1]["weighted_sq_error"] <= 1e-8
    assert np.isclose(rows[0]["weighted_sq_error"], body["total_energy"], rtol=1e-12)
    assert all(r["identity_gap"] <= 1e-8 for r in rows)


@pytest.mark.parametrize("method", ["pod", "rbm", "tensor"])
def test_build_rom_methods(tmp_path, method):
    cfg = darcy_cfg(n=6, samples=6, rom={"method": method, "rank": 2},
                    uq={"eta_m": {"scale": 0.01}, "eta_n": {"scale": 0.02}, "counts": [6, 5]})
    out = run(tmp_path, cfg, "generate", "build-rom")
    body = frag(out, "build_rom.json")
    assert body["uq"]["loss_with_noise"] >= body["uq"]["loss_without_noise"]
    if method == "pod":
        assert abs(body["pod"]["objective_sq"] - body["pod"]["tail_energy"]) <= 1e-8
    elif method == "rbm":
        for mu_errs in zip(*[r["energy_errors"] for r in body["rbm"]["nested_energy_errors"]]):
            assert np.all(np.diff(mu_errs) <= 1e-12)
    else:
        assert body["tensor"]["shape"] == [6, 6, 5]
        assert body["tensor"]["objective_monotone"]


def test_tensor_from_samples_file(tmp_path):
    x = np.einsum("i,j,k->ijk", [1.0, 2.0], [1.0, -1.0, 0.5], [3.0, 1.0])
    write_tensor_samples(tmp_path / "t.csv", x)
    cfg = darcy_cfg(rom={"method": "tensor", "rank": 1, "tensor": {"samples": "t.csv"}})
    out = run(tmp_path, cfg, "generate", "build-rom")
    assert frag(out, "build_rom.json")["tensor"]["errors"][0]["relative_error"] <= 1e-10


def test_emulate_training_point_and_loo(tmp_path):
    cfg = darcy_cfg(n=6, samples=8)
    out = run(tmp_path, cfg, "generate")
    s = load_snapshots(out / "snapshots")
    cfg["emulator"] = {"queries": s.params[:2].tolist(), "mean_mode": "constant-fit"}
    run(tmp_path, cfg, "emulate")
    lines = (out / "predictions.csv").read_text().splitlines()
    assert lines[0].startswith("mu_0,mu_1,mu_2,out_0")
    pred = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])[:, 3:]
    b = kle(s)
    target = b.param_functions * b.sigmas
    assert np.allclose(pred, target[:2], rtol=1e-6, atol=1e-6 * np.abs(target).max())
    body = frag(out, "emulate.json")
    direct = loo_errors(s.params, target, KernelSpec.from_dict(body["kernel"]), "constant-fit")
    assert np.allclose([r["loo_error"] for r in body["loo"]], direct, rtol=1e-10)


def test_emulate_empty_queries(tmp_path):
    out = run(tmp_path, darcy_cfg(samples=3), "generate", "emulate")
    assert (out / "predictions.csv").read_text() == "mu_0,mu_1,mu_2,out_0,out_1,out_2\n"


def test_emulate_qoi_target(tmp_path):
    cfg = darcy_cfg(n=6, samples=5)
    cfg["model"]["darcy"]["extraction_cells"] = [14, 15]
    cfg["emulator"] = {"target": "qoi"}
    out = run(tmp_path, cfg, "generate", "emulate")
    assert "qoi" in frag(out, "generate.json")
    assert frag(out, "emulate.json")["target"] == "qoi"


def test_assimilate_linear_gaussian(tmp_path):
    cfg = darcy_cfg()
    cfg["assimilation"] = {"ensemble_size": 100_000}
    out = run(tmp_path, cfg, "assimilate")
    body = frag(out, "assimilate.json")
    rel = body["comparison"]["relative_difference"]
    assert rel["mean"] <= 0.02 and rel["variance"] <= 0.02
    assert body["loss_non_increasing"]
    losses = [r["loss"] for r in body["losses"]]
    assert losses == sorted(losses, reverse=True)


def test_assimilate_observation_at_prior_mean(tmp_path):
    cfg = darcy_cfg()
    cfg["assimilation"] = {"ensemble_size": 5000, "observed": [0.0], "prior_mean": 0.0}
    out = run(tmp_path, cfg, "assimilate")
    comp = frag(out, "assimilate.json")["comparison"]
    # the mean update is K (y - zbar); zbar is the prior predictive mean
    cfg["assimilation"]["observed"] = [comp["prior_predictive_mean"]]
    out = run(tmp_path, cfg, "assimilate", out="run2")
    x = np.loadtxt(out / "prior.x.csv", delimiter=",")
    xa = np.loadtxt(out / "posterior.x.csv", delimiter=",")
    assert abs(xa.mean() - x.mean()) <= 1e-12


def test_assimilate_darcy_kind(tmp_path):
    cfg = darcy_cfg(n=6, samples=20)
    cfg["assimilation"] = {"kind": "darcy", "observe": [7, 20], "ensemble_size": 20, "noise_std": 0.01}
    out = run(tmp_path, cfg, "generate", "assimilate")
    body = frag(out, "assimilate.json")
    assert len(body["comparison"]["gmkf"]["mean"]) == 3


def test_report_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 4
    err = capsys.readouterr().err
    assert "generate.json" in err and "assimilate.json" in err


def test_report_complete_and_deterministic(tmp_path):
    cfg = darcy_cfg(n=6, samples=6)
    out = run(tmp_path, cfg, "generate", "build-rom", "emulate", "assimilate", "report")
    first = frag(out, "report.json")
    assert first["provenance"]["config_hashes_consistent"]
    assert "report hash" in (out / "report.txt").read_text()
    assert cli.main(["report", "--out", str(out)]) == 0
    assert frag(out, "report.json")["report_hash"] == first["report_hash"]
    other = run(tmp_path, cfg, "generate", "build-rom", "emulate", "assimilate", "report", out="again")
    assert frag(other, "report.json")["report_hash"] == first["report_hash"]


def test_report_detects_tampering(tmp_path):
    out = run(tmp_path, darcy_cfg(samples=3), "generate", "build-rom", "emulate", "assimilate")
    (out / "snapshots.csv").write_text("0.0\n")
    assert cli.main(["report", "--out", str(out)]) == 4


def test_validation_exit_code_writes_nothing(tmp_path, capsys):
    cfg = darcy_cfg()
    cfg["rom"] = {"method": "svd"}
    path = write(tmp_path, cfg)
    assert cli.main(["generate", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "rom.method" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_model_and_bad_json(tmp_path):
    assert cli.main(["generate", "--config", str(write(tmp_path, {"seed": 1}))]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["generate", "--config", str(bad)]) == 2


def test_missing_snapshots_is_io_error(tmp_path):
    path = write(tmp_path, darcy_cfg())
    assert cli.main(["build-rom", "--config", str(path), "--out", str(tmp_path / "none")]) == 4


def test_numerical_error_exit_code(tmp_path, monkeypatch):
    def boom(cfg):
        raise ConditioningError("singular")

    monkeypatch.setattr(cli, "cmd_assimilate", boom)
    assert cli.main(["assimilate", "--config", str(write(tmp_path, darcy_cfg()))]) == 3


def test_external_snapshots(tmp_path):
    (tmp_path / "ext.csv").write_text("1.0,0.0,2.0\n0.0,1.0,1.0\n")
    cfg = {"model": {"snapshots": "ext.csv"}, "assimilation": {"ensemble_size": 100}}
    out = run(tmp_path, cfg, "generate", "build-rom")
    assert frag(out, "build_rom.json")["rank"] == 2
