"""Command-line entry point: simulate, fit, validate-approx, design.

Every command resolves its parameters from an optional key-value config file
overridden by flags, and writes a manifest of the resolved values next to its
outputs. Feeding a manifest back through ``--config`` repeats the run.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import (DesignConstraints, PackingError, compute_T, design_summary, heralding_sweep,
                    make_pixel_basis, optimize_basis)
from .fitting import FitConvergenceError, FitError, fit_full
from .kvfile import KVFormatError, dump_kv, read_kv, write_kv
from .model import (OPTICS_KEYS, PARAM_KEYS, MODELS, ParameterError, optics_from_mapping, params_from_mapping,
                    params_from_optics, params_to_mapping)
from .quadrature import QuadratureSpec
from .scan import (ScanFormatError, default_grid, dense_probability_grid, peak_count_scale, read_scan,
                   simulate_scan, write_probability_grid, write_scan)
from .validity import PATHS, cl_overlap, threshold_ratio

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
CL_TARGET = 0.99


class NumericFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config resolution

PARAM_FLAGS = {"sigma_p": "sigma_p_rad_per_mm", "sigma_s": "sigma_s_rad_per_mm",
               "sigma_c": "sigma_c_rad_per_mm", "origin_s": "origin_s_rad_per_mm",
               "origin_i": "origin_i_rad_per_mm", "amp_scale": "amp_scale"}


def _load_config(path):
    if path is None:
        return {}
    return read_kv(path)


def _merge(cfg: dict, args, mapping: dict) -> dict:
    """Overlay non-None flag values onto config keys."""
    out = dict(cfg)
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    return out


def resolve_params(cfg: dict, args):
    """JtmaParams from explicit widths, else from an optical description; flags win."""
    cfg = _merge(cfg, args, PARAM_FLAGS)
    if all(PARAM_KEYS[k] in cfg for k in ("sigma_p", "sigma_s", "sigma_c")):
        return params_from_mapping(cfg)
    if any(key in cfg for key in OPTICS_KEYS.values()):
        base = params_from_optics(optics_from_mapping(cfg))
        merged = params_to_mapping(base)
        merged.update({k: v for k, v in cfg.items() if k in PARAM_KEYS.values()})
        return params_from_mapping(merged)
    raise ParameterError("no JTMA parameters: give sigma_p/sigma_s/sigma_c or an optical system")


def _spec(cfg: dict, args) -> QuadratureSpec:
    order = args.order if args.order is not None else int(cfg.get("quad_order", 32))
    tol = args.tol if args.tol is not None else float(cfg.get("quad_rel_tol", 1e-6))
    refs = args.max_refinements if args.max_refinements is not None else int(cfg.get("quad_max_refinements", 4))
    radius = cfg.get("quad_truncation_radius")
    return QuadratureSpec(order, float(radius) if radius not in (None, "none") else None, tol, refs)


def _spec_to_mapping(spec: QuadratureSpec) -> dict:
    return {"quad_order": spec.order, "quad_rel_tol": spec.target_rel_tol,
            "quad_max_refinements": spec.max_refinements,
            "quad_truncation_radius": spec.truncation_radius if spec.truncation_radius else "none"}


def _pick(args, cfg, attr, key, default, cast):
    val = getattr(args, attr, None)
    if val is not None:
        return cast(val)
    return cast(cfg[key]) if key in cfg else default


def _write_manifest(path: Path, command: str, resolved: dict) -> None:
    data = {"command": command, "jtmakit_version": __version__}
    data.update(resolved)
    write_kv(path, data, header=f"manifest for 'jtmakit {command}'; rerun with --config {path.name}")


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    p = resolve_params(cfg, args)
    spec = _spec(cfg, args)
    model = _pick(args, cfg, "model", "model", "cl", str)
    if model not in MODELS:
        raise ParameterError(f"model must be one of {MODELS}")
    n = _pick(args, cfg, "grid", "grid_n", 21, int)
    extent = _pick(args, cfg, "extent", "grid_extent_sigma_c", 2.0, float)
    noise = _pick(args, cfg, "noise", "noise", "none", str)
    seed = _pick(args, cfg, "seed", "seed", None, lambda v: None if v in (None, "none") else int(v))
    if noise == "poisson" and seed is None:
        raise ParameterError("poisson noise needs --seed for reproducibility")
    background = _pick(args, cfg, "background", "background_counts", 0.0, float)
    dwell = _pick(args, cfg, "dwell", "dwell_time_s", 1.0, float)
    peak = _pick(args, cfg, "peak_counts", "peak_counts", None, lambda v: None if v in (None, "none") else float(v))
    count_scale = _pick(args, cfg, "count_scale", "count_scale", None,
                        lambda v: None if v in (None, "none") else float(v))
    if count_scale is None:
        peak = 1e4 if peak is None else peak
        count_scale = peak_count_scale(p, peak, model, spec)
    if n < 2:
        raise ParameterError("grid needs at least 2 points per axis")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    grid = default_grid(p, n, extent).shifted(p.origin_s, p.origin_i)
    data = simulate_scan(grid, p, model, spec, noise, seed, count_scale, dwell, background,
                         threads=args.threads)
    if not data.metadata.get("quadrature_converged", True):
        print("warning: some scan cells did not meet the quadrature tolerance", file=sys.stderr)
    write_scan(data, out)
    resolved = params_to_mapping(p)
    resolved.update(model=model, grid_n=n, grid_extent_sigma_c=extent, noise=noise,
                    seed=seed if seed is not None else "none", background_counts=background,
                    dwell_time_s=dwell, count_scale=count_scale,
                    peak_counts=peak if peak is not None else "none", out=str(out))
    resolved.update(_spec_to_mapping(spec))
    dense = _pick(args, cfg, "dense", "dense_n", 0, int)
    if dense:
        dgrid, probs = dense_probability_grid(p, dense, extent, model, spec, args.threads)
        dense_path = out.with_name(out.stem + "_dense.csv")
        write_probability_grid(dgrid, probs, dense_path)
        resolved["dense_n"] = dense
    _write_manifest(out.with_name(out.stem + ".manifest"), "simulate", resolved)
    print(f"wrote {out} ({n}x{n} cells, model={model}, noise={noise})")
    return EXIT_OK


def cmd_fit(args) -> int:
    data = read_scan(args.scan)
    report = fit_full(data)
    out = Path(args.out) if args.out else Path(args.scan).with_suffix(".fit.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    print(report.table())
    for msg in report.messages:
        print(f"note: {msg}", file=sys.stderr)
    _write_manifest(out.with_name(out.stem + ".manifest"), "fit", {"scan": str(args.scan), "out": str(out)})
    return EXIT_OK if report.converged else EXIT_NUMERIC


def cmd_validate_approx(args) -> int:
    cfg = _load_config(args.config)
    rows = []
    ratios = list(args.ratios or [])
    system_ratio = None
    if args.config or any(getattr(args, a) is not None for a in PARAM_FLAGS):
        try:
            p = resolve_params(cfg, args)
            system_ratio = p.sigma_s / p.sigma_c
            ratios.append(system_ratio)
        except ParameterError:
            if not ratios:
                raise
    if not ratios:
        raise ParameterError("give --ratios or a parameter/optics config")
    thresholds = {path: threshold_ratio(CL_TARGET, path) for path in PATHS}
    lines = ["ratio,overlap_coincidence,overlap_singles,cl_coincidence,cl_singles"]
    for r in ratios:
        oc, os_ = cl_overlap(r, "coincidence"), cl_overlap(r, "singles")
        rows.append((r, oc, os_))
        lines.append(f"{r:.6g},{oc:.6g},{os_:.6g},{'pass' if oc >= CL_TARGET else 'fail'},"
                     f"{'pass' if os_ >= CL_TARGET else 'fail'}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    print(f"# threshold for overlap {CL_TARGET}: coincidence {thresholds['coincidence']:.5g}, "
          f"singles {thresholds['singles']:.5g}")
    if system_ratio is not None:
        oc = cl_overlap(system_ratio, "coincidence")
        verdict = "pass" if oc >= CL_TARGET else "fail"
        print(f"system sigma_S/sigma_C = {system_ratio:.5g}: collection-limited approximation {verdict} "
              f"(coincidence overlap {oc:.5g})")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
        _write_manifest(Path(args.out).with_suffix(".manifest"), "validate-approx",
                        {"ratios": [float(r) for r in ratios], "out": str(args.out)})
    return EXIT_OK


def cmd_design(args) -> int:
    cfg = _load_config(args.config)
    p = resolve_params(cfg, args).centered()
    d = _pick(args, cfg, "d", "d", None, int)
    if d is None:
        raise ParameterError("--d is required")
    objective = _pick(args, cfg, "objective", "objective", "max_ent", str)
    cons = DesignConstraints(_pick(args, cfg, "crosstalk_cap", "crosstalk_cap", 0.01, float),
                             _pick(args, cfg, "spacing_factor", "spacing_factor", 1.0, float),
                             _pick(args, cfg, "alpha", "alpha", 1.5, float))
    layout = _pick(args, cfg, "layout", "before_layout", "hex", str)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lam = _pick(args, cfg, "lambda_nm", "lambda_signal_nm", None, float)
    focal = _pick(args, cfg, "focal_length_mm", "focal_length_mm", None, float)

    before = make_pixel_basis(d, layout, p, cons.spacing_factor, cons.alpha)
    T_before = compute_T(before, before.mirrored(), p, "cl", threads=args.threads)
    result = optimize_basis(d, p, objective, cons)

    (out_dir / "before_basis.txt").write_text(before.dumps(lam, focal), encoding="utf-8", newline="\n")
    (out_dir / "after_basis.txt").write_text(result.basis_s.dumps(lam, focal), encoding="utf-8", newline="\n")
    T_before.write(out_dir / "before_T.csv")
    result.T.write(out_dir / "after_T.csv")
    mb = T_before.metrics().to_dict()
    mb.update(crosstalk_ratio=T_before.crosstalk(), diagonal_spread=T_before.diagonal_spread())
    summary = {f"before_{k}": v for k, v in mb.items()}
    summary.update({f"after_{k}": v for k, v in design_summary(result).items()})
    (out_dir / "metrics.txt").write_text(dump_kv(summary, header="basis design metrics"),
                                         encoding="utf-8", newline="\n")
    resolved = params_to_mapping(p)
    resolved.update(d=d, objective=objective, crosstalk_cap=cons.crosstalk_cap,
                    spacing_factor=cons.spacing_factor, alpha=cons.alpha, before_layout=layout,
                    out_dir=str(out_dir))
    if lam is not None:
        resolved["lambda_signal_nm"] = lam
    if focal is not None:
        resolved["focal_length_mm"] = focal
    if args.heralding_d1:
        d2 = args.heralding_d2 or [args.heralding_d1 * k for k in (1, 1.5, 2, 3, 4)]
        eta = heralding_sweep(args.heralding_d1, d2, p)
        lines = ["d2_rad_per_mm,eta"] + [f"{a!r},{e!r}" for a, e in zip(d2, eta)]
        (out_dir / "heralding.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        resolved.update(heralding_d1=args.heralding_d1, heralding_d2=list(d2))
    _write_manifest(out_dir / "design.manifest", "design", resolved)
    print(f"before: d_ent >= {mb['d_ent_lower_bound']}, K = {mb['schmidt_number']:.3f}, "
          f"F = {mb['fidelity_to_maxent']:.4f}")
    m = result.metrics
    print(f"after:  d_ent >= {m.d_ent_lower_bound}, K = {m.schmidt_number:.3f}, F = {m.fidelity:.4f}, "
          f"feasible = {result.feasible}")
    return EXIT_OK if result.feasible else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser

def _add_param_flags(sp):
    g = sp.add_argument_group("JTMA parameters (override the config file)")
    g.add_argument("--config", "--params", dest="config", help="key-value config file (params or optics)")
    g.add_argument("--sigma-p", dest="sigma_p", type=float, help="pump width parameter, rad/mm")
    g.add_argument("--sigma-s", dest="sigma_s", type=float, help="phase-matching width, rad/mm")
    g.add_argument("--sigma-c", dest="sigma_c", type=float, help="collection width, rad/mm")
    g.add_argument("--origin-s", dest="origin_s", type=float)
    g.add_argument("--origin-i", dest="origin_i", type=float)
    g.add_argument("--amp-scale", dest="amp_scale", type=float)


def _add_quad_flags(sp):
    g = sp.add_argument_group("quadrature")
    g.add_argument("--order", type=int)
    g.add_argument("--tol", type=float)
    g.add_argument("--max-refinements", dest="max_refinements", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jtmakit", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                    help="worker threads for independent integrals (results do not depend on it)")
    ap.add_argument("--version", action="version", version=f"jtmakit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="synthetic 2Dpi scan")
    _add_param_flags(sp)
    _add_quad_flags(sp)
    sp.add_argument("--model", choices=MODELS)
    sp.add_argument("--grid", type=int, help="points per axis")
    sp.add_argument("--extent", type=float, help="half-width of the grid in units of sigma_C")
    sp.add_argument("--noise", choices=("none", "poisson"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--peak-counts", dest="peak_counts", type=float,
                    help="counts of a fully constructive cell (default 1e4)")
    sp.add_argument("--count-scale", dest="count_scale", type=float, help="counts per unit probability")
    sp.add_argument("--background", type=float, help="constant accidental counts per cell")
    sp.add_argument("--dwell", type=float, help="dwell time per cell, s")
    sp.add_argument("--dense", type=int, help="also write an n x n noise-free probability grid")
    sp.add_argument("--out", default="scan.csv")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit origins, sigma_C and sigma_P to a scan")
    sp.add_argument("scan")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("validate-approx", help="collection-limited approximation overlaps")
    _add_param_flags(sp)
    sp.add_argument("--ratios", type=float, nargs="+", help="sigma_S/sigma_C values")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_validate_approx)

    sp = sub.add_parser("design", help="pixel-basis design for maximal entanglement")
    _add_param_flags(sp)
    sp.add_argument("--d", type=int)
    sp.add_argument("--objective", choices=("max_ent",))
    sp.add_argument("--crosstalk-cap", dest="crosstalk_cap", type=float)
    sp.add_argument("--spacing-factor", dest="spacing_factor", type=float)
    sp.add_argument("--alpha", type=float, help="collection radius in units of sigma_C")
    sp.add_argument("--layout", choices=("hex", "rings"), help="layout of the uniform starting mask")
    sp.add_argument("--lambda-nm", dest="lambda_nm", type=float, help="signal wavelength for SLM coordinates")
    sp.add_argument("--focal-length-mm", dest="focal_length_mm", type=float)
    sp.add_argument("--heralding-d1", dest="heralding_d1", type=float, help="signal pixel diameter, rad/mm")
    sp.add_argument("--heralding-d2", dest="heralding_d2", type=float, nargs="+")
    sp.add_argument("--out-dir", dest="out_dir", default="design_out")
    sp.set_defaults(func=cmd_design)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: cannot access {getattr(exc, 'filename', '') or exc}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except PackingError as exc:
        print(f"error: packing infeasible: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FitConvergenceError, NumericFailure, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParameterError, ScanFormatError, KVFormatError, FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
