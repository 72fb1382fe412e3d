"""End-to-end drivers: simulate, solve, compare, export.

A pipeline run writes into ``<out_dir>/<tag>/``:

- ``config.json``     the fully resolved configuration that actually ran
- ``spectrum.csv``    levels with quantum numbers and errors
- ``stats.json``      per-chain sampling diagnostics
- ``rdm.npz``         sparse sampled matrix (with ``rdm.meta.json`` sidecar)
- ``fit_<model>.json``  one report per configured fit
- ``state_<seed>.ckpt``  resumable sampler state per chain
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import sse
from .accumulator import RdmAccumulator, RunMetadata, SampledRDM, merge
from .config import RunConfig, build_system
from .errors import AccumulatorError, SolverError
from .fits import (
    FitResult,
    fit_linear_band,
    fit_quadratic,
    fit_sine_dispersion,
    fit_tos,
)
from .spectrum import DenseRDM, EntanglementSpectrum, solve_spectrum

log = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    config: RunConfig
    rdm: object
    spectrum: EntanglementSpectrum
    stats: list
    out_dir: str | None


def run_pipeline(cfg: RunConfig, write: bool = True) -> PipelineResult:
    """Simulate every seed, merge, finalize, solve, export."""
    lattice, bipartition, mask, symmetry = build_system(cfg)
    n_therm = cfg.resolved_n_therm(lattice.n_sites)
    out_dir = None
    if write:
        out_dir = os.path.join(cfg.out_dir, cfg.tag or _default_tag(cfg))
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(cfg.echo(), fh, indent=2)
            fh.write("\n")

    merged: RdmAccumulator | None = None
    all_stats = []
    for seed in cfg.seeds:
        state = sse.init_simulation(lattice, bipartition, cfg.beta, seed, mask)
        acc, stats = sse.run(state, n_therm, cfg.n_samples, n_bins=cfg.n_bins)
        all_stats.append(stats)
        merged = acc if merged is None else merge(merged, acc)
        if write:
            sse.checkpoint(state, os.path.join(out_dir, f"state_{seed}.ckpt"))
    rdm = merged.finalize(require_errors=False)
    spectrum = solve_spectrum(
        rdm,
        symmetry=symmetry,
        bipartition=bipartition,
        mask=mask,
        top_k=cfg.top_k,
        lambda_floor=cfg.lambda_floor,
        jackknife=cfg.jackknife,
        label_spin=cfg.label_spin,
    )
    if write:
        spectrum.to_csv(os.path.join(out_dir, "spectrum.csv"))
        with open(os.path.join(out_dir, "stats.json"), "w") as fh:
            json.dump([s.as_dict() for s in all_stats], fh, indent=2)
            fh.write("\n")
        export_rdm(rdm, os.path.join(out_dir, "rdm.npz"))
    for entry in cfg.fits:
        try:
            result = fit_spectrum(spectrum, **entry)
        except SolverError as err:
            raise SolverError(f"fit stage ({entry.get('model')}): {err}") from err
        if write:
            result.to_json(os.path.join(out_dir, f"fit_{entry['model']}.json"))
    if write:
        log.info("wrote %s", out_dir)
    return PipelineResult(cfg, rdm, spectrum, all_stats, out_dir)


def _default_tag(cfg: RunConfig) -> str:
    m = cfg.model
    size = f"L{m.length}" if m.kind == "ladder" else f"{m.lx}x{m.ly}"
    return f"{m.kind}-{size}-{cfg.cut.kind}-beta{cfg.beta:g}"


def oracle_spectrum(cfg: RunConfig, thermal: bool = False) -> EntanglementSpectrum:
    """Exact-diagonalization reference spectrum for a (small) config."""
    from . import oracle

    lattice, bipartition, _mask, symmetry = build_system(cfg)
    if thermal:
        rho, _ = oracle.thermal_rdm(lattice, bipartition, cfg.beta)
    else:
        rho = oracle.exact_rdm(oracle.ground_state(lattice), bipartition)
    return solve_spectrum(
        DenseRDM.from_matrix(rho), symmetry=symmetry,
        lambda_floor=cfg.lambda_floor if cfg.lambda_floor is not None else 1e-10,
        top_k=cfg.top_k,
    )


def compare_spectra(
    sampled: EntanglementSpectrum,
    reference: EntanglementSpectrum,
    lam_min: float = 1e-3,
    sigma_factor: float = 3.0,
    xi_abs: float = 0.05,
) -> dict:
    """Level-by-level comparison of two spectra above a weight cutoff.

    Reference levels with lambda >= ``lam_min`` are matched to sampled
    levels by (sz, k) and rank. A level passes when |xi - xi_ref| is
    within ``sigma_factor`` jackknife errors AND within ``xi_abs``
    absolutely. Returns a dict with per-level rows and overall verdict.
    """
    def cells(spec, floor):
        out: dict = {}
        for lv in spec.levels:
            if floor is not None and lv.lam < floor:
                continue
            out.setdefault((lv.sz, lv.k), []).extend([lv] * lv.multiplicity)
        return out

    rows = []
    ok_all = True
    ref_cells = cells(reference, lam_min)
    sam_cells = cells(sampled, None)
    for cell, ref_levels in sorted(ref_cells.items(), key=str):
        sam_levels = sam_cells.get(cell, [])
        for rank, ref_lv in enumerate(ref_levels):
            if rank >= len(sam_levels):
                rows.append({
                    "sz": cell[0], "k": cell[1], "rank": rank, "xi_ref": ref_lv.xi,
                    "xi": None, "err": None, "pass": False, "why": "missing",
                })
                ok_all = False
                continue
            sam = sam_levels[rank]
            diff = abs(sam.xi - ref_lv.xi)
            err = sam.xi_err
            passed = diff <= xi_abs and (
                err is None or diff <= sigma_factor * max(err, 1e-12)
            )
            rows.append({
                "sz": cell[0], "k": cell[1], "rank": rank, "xi_ref": ref_lv.xi,
                "xi": sam.xi, "err": err, "diff": diff, "pass": bool(passed),
            })
            ok_all = ok_all and passed
    return {"levels": rows, "all_pass": ok_all, "n_compared": len(rows)}


def export_comparison(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, default=float)
        fh.write("\n")


def fit_spectrum(
    spectrum: EntanglementSpectrum,
    model: str,
    mode: str = "two-point",
    all_sz: bool = False,
    g: int | None = None,
) -> FitResult:
    """Run one named fitter over the lowest momentum band of a spectrum.

    Folds momentum indices onto [0, g/2], converts to radians, subtracts
    the ground level, and dispatches. The ``tos`` model instead collects
    the lowest xi per spin label.
    """
    if model == "tos":
        per_s: dict = {}
        for lv in spectrum.levels:
            if lv.s_est is None:
                continue
            per_s[lv.s_est] = min(per_s.get(lv.s_est, np.inf), lv.xi)
        svals = sorted(per_s)
        return fit_tos(np.array(svals), np.array([per_s[s] for s in svals]))

    band = spectrum.lowest_band(sz=None if all_sz else 0.0)
    if not band:
        raise SolverError("spectrum carries no momentum-resolved levels")
    if g is None:
        g = spectrum.g or (max(k for k, _ in band) + 1)
    xi0 = spectrum.xi0
    ks, xis = [], []
    for k, xi in band:
        fold = min(k, g - k)
        ks.append(2 * np.pi * fold / g)
        xis.append(xi - xi0)
    ks = np.asarray(ks)
    xis = np.asarray(xis)
    if model == "sine":
        return fit_sine_dispersion(ks, xis, mode=mode)
    if model == "quadratic":
        return fit_quadratic(ks, xis, model="k2")
    if model == "sin2":
        return fit_quadratic(ks, xis, model="sin2")
    if model == "linear":
        return fit_linear_band(ks, xis)
    raise SolverError(f"unknown fit model {model!r}")


def export_rdm(rdm: SampledRDM, path: str) -> None:
    """Write the sparse sampled matrix as ``.npz`` plus a JSON sidecar.

    The npz holds the sorted packed keys, normalized symmetric elements,
    and (when available) per-element errors; the ``<path>.meta.json``
    sidecar records run identity, trace count, and sample count. Source
    bins are not exported, so a reloaded matrix supports everything but
    jackknife resampling.
    """
    base = path[:-4] if path.endswith(".npz") else path
    arrays = {"keys": rdm.keys, "probs": rdm.probs}
    if rdm.errors is not None:
        arrays["errors"] = rdm.errors
    np.savez_compressed(base + ".npz", **arrays)
    sidecar = {
        "n_a": rdm.n_a,
        "trace_count": int(rdm.trace_count),
        "n_samples": int(rdm.n_samples),
        "n_keys": int(rdm.keys.size),
        "meta": {
            "n_sites": rdm.meta.n_sites,
            "n_a": rdm.meta.n_a,
            "beta": rdm.meta.beta,
            "digest": rdm.meta.digest,
            "seeds": list(rdm.meta.seeds),
        },
    }
    with open(base + ".meta.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_rdm(path: str) -> SampledRDM:
    """Reload an exported matrix (no bins, so no jackknife on reload)."""
    base = path[:-4] if path.endswith(".npz") else path
    with np.load(base + ".npz") as data:
        keys = data["keys"]
        probs = data["probs"]
        errors = data["errors"] if "errors" in data else None
    with open(base + ".meta.json") as fh:
        sidecar = json.load(fh)
    m = sidecar["meta"]
    meta = RunMetadata(m["n_sites"], m["n_a"], m["beta"], m["digest"], tuple(m["seeds"]))
    n_a = int(sidecar["n_a"])
    mask = (1 << n_a) - 1
    transposed = ((keys & mask) << n_a) | (keys >> n_a)
    perm = np.searchsorted(keys, transposed)
    if not np.array_equal(keys[perm], transposed):
        raise AccumulatorError(f"{base}.npz key set is not closed under transposition")
    return SampledRDM(
        n_a=n_a,
        keys=keys,
        probs=probs,
        errors=errors,
        trace_count=int(sidecar["trace_count"]),
        n_samples=int(sidecar["n_samples"]),
        meta=meta,
        bins=(),
        _transpose_perm=perm,
        _sym_counts=probs * float(sidecar["trace_count"]),
    )
