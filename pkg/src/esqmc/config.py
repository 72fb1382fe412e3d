"""Run configuration: JSON in, validated dataclass out, resolved echo back.

Unknown keys are rejected rather than ignored: a typo in a week-long run's
config should fail at parse time, not silently fall back to a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources

from .errors import ConfigError

_MODEL_KEYS = {"kind", "length", "lx", "ly", "j_leg", "j_rung", "j", "theta", "periodic"}
_CUT_KEYS = {"kind", "leg", "row", "block", "origin"}
_RUN_KEYS = {
    "model", "cut", "beta", "seeds", "n_therm", "n_samples", "n_bins",
    "top_k", "lambda_floor", "jackknife", "label_spin", "fits", "out_dir", "tag",
}
_FIT_KEYS = {"model", "mode", "all_sz", "g"}
_FIT_MODELS = ("sine", "quadratic", "sin2", "linear", "tos")


@dataclass(frozen=True)
class ModelConfig:
    kind: str  # "ladder" | "square"
    length: int | None = None
    lx: int | None = None
    ly: int | None = None
    j_leg: float | None = None
    j_rung: float | None = None
    j: float = 1.0
    theta: float | None = None
    periodic: bool = True


@dataclass(frozen=True)
class CutConfig:
    kind: str  # "chain" | "ring" | "block"
    leg: int = 0
    row: int = 0
    block: tuple[int, int] | None = None
    origin: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class RunConfig:
    """Everything one simulation + analysis needs, fully resolved."""

    model: ModelConfig
    cut: CutConfig
    beta: float
    seeds: tuple[int, ...] = (1,)
    n_therm: int | None = None
    n_samples: int = 1_000_000
    n_bins: int = 32
    top_k: int | None = None
    lambda_floor: float | None = None
    jackknife: str = "auto"
    label_spin: bool = True
    fits: tuple = ()
    out_dir: str = "runs"
    tag: str = ""

    def resolved_n_therm(self, n_sites: int) -> int:
        if self.n_therm is not None:
            return self.n_therm
        return max(10_000, 10 * n_sites)

    def echo(self) -> dict:
        d = asdict(self)
        # unused geometry fields are None; prune them so the echo is
        # itself a valid config (theta and explicit couplings would
        # otherwise both appear present)
        d["model"] = {k: v for k, v in d["model"].items() if v is not None}
        d["cut"] = {k: v for k, v in d["cut"].items() if v is not None}
        d["n_therm"] = self.resolved_n_therm(_n_sites_of(self.model))
        return d


def _n_sites_of(model: ModelConfig) -> int:
    if model.kind == "ladder":
        return 2 * (model.length or 0)
    return (model.lx or 0) * (model.ly or 0)


def default_beta(model: ModelConfig) -> float:
    """max(100, 4L): safely past every gap this package targets."""
    if model.kind == "ladder":
        return float(max(100, 4 * (model.length or 0)))
    return float(max(100, 4 * max(model.lx or 0, model.ly or 0)))


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_keys(raw: dict, allowed: set, where: str) -> None:
    unknown = set(raw) - allowed
    _require(not unknown, f"unknown key(s) {sorted(unknown)} in {where}")


def parse_config(raw: dict) -> RunConfig:
    """Validate a raw dict (from JSON) into a RunConfig."""
    _require(isinstance(raw, dict), "config must be a JSON object")
    _check_keys(raw, _RUN_KEYS, "run config")
    _require("model" in raw, "config needs a 'model' section")
    _require("cut" in raw, "config needs a 'cut' section")
    mraw = dict(raw["model"])
    _check_keys(mraw, _MODEL_KEYS, "model section")
    kind = mraw.get("kind")
    _require(kind in ("ladder", "square"), f"model.kind must be ladder|square, got {kind!r}")
    if kind == "ladder":
        _require("length" in mraw, "ladder model needs 'length'")
        if "theta" in mraw:
            _require(
                "j_leg" not in mraw and "j_rung" not in mraw,
                "give either theta or explicit couplings, not both",
            )
        else:
            _require(
                "j_leg" in mraw and "j_rung" in mraw,
                "ladder model needs j_leg and j_rung (or theta)",
            )
    else:
        _require("lx" in mraw and "ly" in mraw, "square model needs lx and ly")
    model = ModelConfig(**mraw)

    craw = dict(raw["cut"])
    _check_keys(craw, _CUT_KEYS, "cut section")
    ckind = craw.get("kind")
    _require(ckind in ("chain", "ring", "block"), f"cut.kind must be chain|ring|block, got {ckind!r}")
    if ckind == "chain":
        _require(kind == "ladder", "chain cut applies to ladder models")
    if ckind in ("ring", "block"):
        _require(kind == "square", f"{ckind} cut applies to square models")
    if ckind == "block":
        _require("block" in craw, "block cut needs 'block': [w, h]")
    if "block" in craw and craw["block"] is not None:
        craw["block"] = tuple(craw["block"])
    if "origin" in craw:
        craw["origin"] = tuple(craw["origin"])
    cut = CutConfig(**craw)

    beta = raw.get("beta")
    if beta is None:
        beta = default_beta(model)
    _require(isinstance(beta, (int, float)) and beta > 0, f"beta must be positive, got {beta!r}")

    seeds = tuple(raw.get("seeds", (1,)))
    _require(len(seeds) > 0 and len(set(seeds)) == len(seeds), "seeds must be non-empty and distinct")

    fits = []
    for entry in raw.get("fits", ()):
        _require(isinstance(entry, dict), f"each fits entry must be an object, got {entry!r}")
        _check_keys(entry, _FIT_KEYS, "fits entry")
        _require(entry.get("model") in _FIT_MODELS,
                 f"fits entry model must be one of {_FIT_MODELS}, got {entry.get('model')!r}")
        fits.append(dict(entry))

    cfg = RunConfig(
        model=model,
        cut=cut,
        beta=float(beta),
        seeds=seeds,
        n_therm=raw.get("n_therm"),
        n_samples=int(raw.get("n_samples", 1_000_000)),
        n_bins=int(raw.get("n_bins", 32)),
        top_k=raw.get("top_k"),
        lambda_floor=raw.get("lambda_floor"),
        jackknife=raw.get("jackknife", "auto"),
        label_spin=bool(raw.get("label_spin", True)),
        fits=tuple(fits),
        out_dir=raw.get("out_dir", "runs"),
        tag=raw.get("tag", ""),
    )
    _require(cfg.n_samples >= cfg.n_bins >= 1, "need n_samples >= n_bins >= 1")
    _require(cfg.jackknife in ("auto", "full", "sz0", "none"),
             f"jackknife must be auto|full|sz0|none, got {cfg.jackknife!r}")
    return cfg


def load_config(path_or_preset: str, overrides: dict | None = None) -> RunConfig:
    """Load JSON from a file path or a bundled preset name."""
    raw = None
    try:
        with open(path_or_preset) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        preset = resources.files("esqmc").joinpath(f"presets/{path_or_preset}.json")
        if preset.is_file():
            raw = json.loads(preset.read_text())
    if raw is None:
        raise ConfigError(
            f"{path_or_preset!r} is neither a config file nor a preset "
            f"(available presets: {', '.join(list_presets())})"
        )
    if overrides:
        raw = _deep_update(raw, overrides)
    return parse_config(raw)


def _deep_update(base: dict, updates: dict) -> dict:
    out = dict(base)
    for key, val in updates.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], val)
        else:
            out[key] = val
    return out


def list_presets() -> list[str]:
    pdir = resources.files("esqmc").joinpath("presets")
    return sorted(p.name[:-5] for p in pdir.iterdir() if p.name.endswith(".json"))


def build_system(cfg: RunConfig):
    """Materialize (lattice, bipartition, mask, symmetry) from a config."""
    from .lattice import (
        build_ladder, build_square, ladder_couplings, make_bipartition,
        rotation_mask, translations_of_a,
    )

    model = cfg.model
    if model.kind == "ladder":
        if model.theta is not None:
            j_leg, j_rung = ladder_couplings(model.theta)
        else:
            j_leg, j_rung = model.j_leg, model.j_rung
        lattice = build_ladder(model.length, j_leg, j_rung, model.periodic)
    else:
        lattice = build_square(model.lx, model.ly, model.j, model.periodic)
    bipartition = make_bipartition(
        lattice, cfg.cut.kind, leg=cfg.cut.leg, row=cfg.cut.row,
        block=cfg.cut.block, origin=cfg.cut.origin,
    )
    mask = rotation_mask(lattice)
    symmetry = translations_of_a(lattice, bipartition)
    return lattice, bipartition, mask, symmetry
