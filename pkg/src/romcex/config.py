"""Pipeline configuration: loading, defaults and fail-fast validation."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .exceptions import DomainError, ValidationError
from .io import darcy_model_from_config
from .uq import ProductSampler

ROM_METHODS = ("kle", "pod", "rbm", "tensor")
ASSIMILATION_KINDS = ("linear-gaussian", "darcy")

DEFAULTS = {
    "seed": 0,
    "output_dir": "run",
    "threads": 1,
    "rom": {"method": "kle", "rank": None, "threshold": None, "tol": 1e-12},
    "emulator": {"kernel": {"kind": "squared-exponential"}, "mean_mode": "constant-fit", "target": "kle",
                 "n_train": None, "queries": []},
    "assimilation": {"kind": "linear-gaussian", "prior_mean": 0.0, "prior_std": 1.0, "coefficient": 1.0,
                     "noise_std": 1.0, "observed": [1.0], "ensemble_size": 100000, "degrees": [1, 2, 3],
                     "grid": {"lo": -8.0, "hi": 8.0, "n": 4001}},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None):
    """Read a JSON config, apply defaults and ``overrides``, then validate.

    Relative file paths inside the config are resolved against the config
    file's directory.
    """
    doc = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc}", str(path)) from exc
        base_dir = path.resolve().parent
    cfg = _merge(DEFAULTS, doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    cfg["_base_dir"] = str(base_dir)
    validate(cfg)
    return cfg


def resolve_path(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base_dir", ".")) / p


def validate(cfg):
    """Raise :class:`ValidationError` naming the first offending field."""
    if not isinstance(cfg.get("seed"), int) or cfg["seed"] < 0:
        raise ValidationError("must be a nonnegative integer", "seed")
    if not isinstance(cfg.get("threads"), int) or cfg["threads"] < 0:
        raise ValidationError("must be a nonnegative integer", "threads")
    model = cfg.get("model")
    if not isinstance(model, dict):
        raise ValidationError("missing model section", "model")
    sources = [k for k in ("darcy", "snapshots") if model.get(k) is not None]
    if len(sources) != 1:
        raise ValidationError("exactly one of 'darcy' or 'snapshots' is required", "model")
    if "darcy" in sources:
        darcy_model_from_config(model["darcy"])
        n = model.get("n_samples", 16)
        if not isinstance(n, int) or n < 1:
            raise ValidationError("must be a positive integer", "model.n_samples")
    else:
        stem = resolve_path(cfg, model["snapshots"])
        stem = stem.with_suffix("") if stem.suffix in (".csv", ".json") else stem
        if not stem.with_suffix(".csv").exists():
            raise ValidationError(f"file {stem.with_suffix('.csv')} does not exist", "model.snapshots")

    rom = cfg["rom"]
    if rom.get("method") not in ROM_METHODS:
        raise ValidationError(f"must be one of {ROM_METHODS}", "rom.method")
    if rom.get("rank") is not None and (not isinstance(rom["rank"], int) or rom["rank"] < 0):
        raise ValidationError("must be a nonnegative integer", "rom.rank")
    if rom.get("threshold") is not None and not rom["threshold"] > 0:
        raise ValidationError("must be positive", "rom.threshold")
    if rom["method"] == "rbm" and "darcy" not in sources:
        raise ValidationError("the rbm method needs a darcy model", "rom.method")
    if rom["method"] == "tensor":
        samples = rom.get("tensor", {}).get("samples")
        if samples is not None and not resolve_path(cfg, samples).exists():
            raise ValidationError(f"file {samples} does not exist", "rom.tensor.samples")

    emu = cfg["emulator"]
    if emu.get("target") not in ("kle", "states", "qoi"):
        raise ValidationError("must be 'kle', 'states' or 'qoi'", "emulator.target")
    if emu.get("mean_mode") not in ("zero", "constant-fit"):
        raise ValidationError("must be 'zero' or 'constant-fit'", "emulator.mean_mode")
    if emu["target"] == "qoi" and not model.get("darcy", {}).get("extraction_cells"):
        raise ValidationError("qoi target needs extraction cells", "emulator.target")
    try:
        from .gpe import KernelSpec

        KernelSpec.from_dict(emu.get("kernel", {}))
    except DomainError as exc:
        raise ValidationError(str(exc), "emulator.kernel") from exc
    if emu.get("queries_file") is not None and not resolve_path(cfg, emu["queries_file"]).exists():
        raise ValidationError("file does not exist", "emulator.queries_file")

    asm = cfg["assimilation"]
    if asm.get("kind") not in ASSIMILATION_KINDS:
        raise ValidationError(f"must be one of {ASSIMILATION_KINDS}", "assimilation.kind")
    if asm["kind"] == "darcy":
        if "darcy" not in sources:
            raise ValidationError("darcy assimilation needs a darcy model", "assimilation.kind")
        if not asm.get("observe"):
            raise ValidationError("list of observed cell indices required", "assimilation.observe")
    else:
        for key in ("prior_std", "noise_std"):
            if not asm.get(key, 0) > 0:
                raise ValidationError("must be positive", f"assimilation.{key}")
    if not isinstance(asm.get("ensemble_size"), int) or asm["ensemble_size"] < 2:
        raise ValidationError("must be an integer >= 2", "assimilation.ensemble_size")
    degrees = asm.get("degrees", [1])
    if not degrees or any((not isinstance(d, int)) or d < 1 for d in degrees):
        raise ValidationError("must be a list of positive integers", "assimilation.degrees")

    if cfg.get("uq") is not None:
        try:
            ProductSampler.from_dict({**cfg["uq"], "seed": cfg["seed"]})
        except DomainError as exc:
            raise ValidationError(str(exc), "uq") from exc
    return cfg
