"""Command-line interface.

Verbs:

- ``simulate``  run the sampler for a config/preset, write spectrum + state
- ``spectrum``  re-solve a finished run directory (new floors, top-k, ...)
- ``fit``       run a named fitter over a spectrum CSV
- ``oracle``    exact-diagonalization spectrum for a (small) config
- ``compare``   level-by-level comparison of two spectrum CSVs or a run vs ED
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import EsqmcError


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="config JSON path or preset name")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry (dots descend, values parsed as JSON): "
        "--set model.length=12 --set beta=32",
    )


def _overrides(pairs: list[str]) -> dict:
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise SystemExit(f"--set needs KEY=VALUE, got {pair!r}")
        key, _, val = pair.partition("=")
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = parsed
    return out


def _cmd_simulate(args) -> int:
    from .config import load_config
    from .pipeline import run_pipeline

    cfg = load_config(args.config, _overrides(args.set))
    result = run_pipeline(cfg)
    print(f"spectrum with {len(result.spectrum.levels)} levels -> {result.out_dir}")
    return 0


def _cmd_spectrum(args) -> int:
    from .config import load_config
    from .pipeline import run_pipeline

    overrides = _overrides(args.set)
    cfg = load_config(args.config, overrides)
    result = run_pipeline(cfg, write=not args.no_write)
    for lv in result.spectrum.levels[: args.top]:
        err = f" +- {lv.xi_err:.4f}" if lv.xi_err is not None else ""
        k = f" k={lv.k}" if lv.k is not None else ""
        s = f" S={lv.s_est:g}" if lv.s_est is not None else ""
        print(f"xi={lv.xi:10.5f}{err}  sz={lv.sz:+g}{k}{s}  mult={lv.multiplicity}")
    return 0


def _cmd_fit(args) -> int:
    from .errors import SolverError
    from .pipeline import fit_spectrum
    from .spectrum import EntanglementSpectrum

    spec = EntanglementSpectrum.from_csv(args.spectrum)
    try:
        result = fit_spectrum(
            spec, args.model, mode=args.mode, all_sz=args.all_sz, g=args.g,
        )
    except SolverError as err:
        print(str(err), file=sys.stderr)
        return 1
    print(json.dumps(result.to_dict(), indent=2, default=float))
    if args.out:
        result.to_json(args.out)
    return 0


def _cmd_oracle(args) -> int:
    from .config import load_config
    from .pipeline import oracle_spectrum

    cfg = load_config(args.config, _overrides(args.set))
    spec = oracle_spectrum(cfg, thermal=args.thermal)
    if args.out:
        spec.to_csv(args.out)
        print(f"wrote {args.out}")
    for lv in spec.levels[: args.top]:
        k = f" k={lv.k}" if lv.k is not None else ""
        s = f" S={lv.s_est:g}" if lv.s_est is not None else ""
        print(f"xi={lv.xi:10.5f}  sz={lv.sz:+g}{k}{s}  mult={lv.multiplicity}")
    return 0


def _cmd_compare(args) -> int:
    from .pipeline import compare_spectra, export_comparison
    from .spectrum import EntanglementSpectrum

    sampled = EntanglementSpectrum.from_csv(args.sampled)
    reference = EntanglementSpectrum.from_csv(args.reference)
    report = compare_spectra(
        sampled, reference, lam_min=args.lam_min,
        sigma_factor=args.sigma, xi_abs=args.xi_abs,
    )
    for row in report["levels"]:
        status = "ok " if row["pass"] else "FAIL"
        xi = "missing" if row["xi"] is None else f"{row['xi']:.5f}"
        print(f"[{status}] sz={row['sz']:+g} k={row['k']} rank={row['rank']} "
              f"xi={xi} ref={row['xi_ref']:.5f}")
    print(f"{'all pass' if report['all_pass'] else 'FAILURES'} "
          f"({report['n_compared']} levels compared)")
    if args.out:
        export_comparison(report, args.out)
    return 0 if report["all_pass"] else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="esqmc",
        description="entanglement spectra of Heisenberg systems from QMC-sampled "
        "region density matrices",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="sample a region density matrix and solve it")
    _add_config_arg(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("spectrum", help="run and print the level table")
    _add_config_arg(p)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--no-write", action="store_true")
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("fit", help="fit a band or tower from a spectrum CSV")
    p.add_argument("spectrum")
    p.add_argument("--model", default="sine",
                   choices=["sine", "quadratic", "sin2", "linear", "tos"])
    p.add_argument("--mode", default="two-point", choices=["two-point", "window"])
    p.add_argument("--g", type=int, default=None, help="translation order (momentum units)")
    p.add_argument("--all-sz", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("oracle", help="exact reference spectrum for a small config")
    _add_config_arg(p)
    p.add_argument("--thermal", action="store_true", help="finite-beta matrix, not ground state")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("compare", help="level-by-level comparison of two spectrum CSVs")
    p.add_argument("sampled")
    p.add_argument("reference")
    p.add_argument("--lam-min", type=float, default=1e-3)
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--xi-abs", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_compare)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except EsqmcError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
