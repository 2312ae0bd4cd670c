"""Command-line front end: simulate, calibrate, find-center, nrf, image, snr-study.

Every run archives its resolved configuration next to its outputs and is
deterministic given (config, seed). Exit codes: 0 success, 2 configuration
error, 3 data/geometry error, 4 invalid regime.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation

from . import bundle as bio
from . import imaging
from .alignment import cs_scan, refine_center, write_scan_csv
from .errors import (BundleError, ConfigError, GeometryError,
                     InvalidRegimeError, NoCorrelationError, SsnqiError)
from .estimators import (FlatField, build_flat_field, frame_report,
                         mean_moments, spatial_moments,
                         write_nrf_reports_csv)
from .frames import bin_array
from .maps import (linear_gradient_map, mask_support, pi_mask, radial_map,
                   square_mask, uniform_map)
from .regions import inset_pair
from .sim import generate_stack, standard_scene

_EXIT_CODES = {
    ConfigError: 2,
    GeometryError: 3,
    BundleError: 3,
    InvalidRegimeError: 4,
    NoCorrelationError: 4,
}

_SCENE_KEYS = {
    "region_height": None, "region_width": None, "margin": 0,
    "cells_y": None, "cells_x": None,
    "mu": None, "m_temp": None,
    "gain_jitter": 0.1, "coherence_jitter": 0.0,
    "center_offset": [0.0, 0.0],
    "eta_s": None, "eta_i": None,
    "straylight_mean": 0.0, "readout_sigma": 0.0, "hardware_bin": 1,
    "object": None, "with_object": None,
    "dci_shift": [0, 1],
    "n_frames": None, "seed": 0,
}
_REQUIRED_KEYS = [k for k, v in _SCENE_KEYS.items() if v is None and k not in
                  ("object", "with_object")]

_MAP_KINDS = {
    "uniform": {"value"},
    "linear": {"base", "swing", "axis", "reverse"},
    "radial": {"center_value", "edge_drop"},
}
_OBJECT_KINDS = {
    "square": {"alpha", "size", "offset"},
    "pi": {"alpha", "size"},
    "uniform": {"alpha"},
}


def _reject_unknown(d: dict, allowed, where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _build_map(spec, shape, where: str) -> np.ndarray:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where} must be an object with a 'kind' key")
    kind = spec["kind"]
    if kind not in _MAP_KINDS:
        raise ConfigError(f"{where}: unknown map kind {kind!r}")
    _reject_unknown({k: v for k, v in spec.items() if k != "kind"},
                    _MAP_KINDS[kind], where)
    if kind == "uniform":
        return uniform_map(shape, spec["value"])
    if kind == "linear":
        return linear_gradient_map(shape, spec["base"], spec["swing"],
                                   axis=spec.get("axis", 1),
                                   reverse=spec.get("reverse", False))
    return radial_map(shape, spec["center_value"], spec["edge_drop"])


def _build_object(spec, shape):
    if spec is None:
        return None
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("object must be null or an object with a 'kind' key")
    kind = spec["kind"]
    if kind not in _OBJECT_KINDS:
        raise ConfigError(f"object: unknown kind {kind!r}")
    _reject_unknown({k: v for k, v in spec.items() if k != "kind"},
                    _OBJECT_KINDS[kind], "object")
    if kind == "square":
        offset = spec.get("offset")
        return square_mask(shape, spec["alpha"], spec["size"],
                           None if offset is None else tuple(offset))
    if kind == "pi":
        return pi_mask(shape, spec["alpha"], spec.get("size"))
    return np.full(shape, float(spec["alpha"]))


def load_run_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    _reject_unknown(raw, _SCENE_KEYS, "config")
    missing = [k for k in _REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    resolved = dict(_SCENE_KEYS)
    resolved.update(raw)
    if resolved["with_object"] is None:
        resolved["with_object"] = resolved["object"] is not None
    return resolved


def scene_from_config(cfg: dict, seed_override: int | None = None):
    shape = (cfg["region_height"], cfg["region_width"])
    seed = cfg["seed"] if seed_override is None else seed_override
    return standard_scene(
        height=cfg["region_height"], width=cfg["region_width"],
        cells_y=cfg["cells_y"], cells_x=cfg["cells_x"],
        mu=cfg["mu"], m_temp=cfg["m_temp"],
        eta_s=_build_map(cfg["eta_s"], shape, "eta_s"),
        eta_i=_build_map(cfg["eta_i"], shape, "eta_i"),
        margin=cfg["margin"],
        straylight_mean=cfg["straylight_mean"],
        readout_sigma=cfg["readout_sigma"],
        hardware_bin=cfg["hardware_bin"],
        gain_jitter=cfg["gain_jitter"],
        coherence_jitter=cfg["coherence_jitter"],
        center_offset=tuple(cfg["center_offset"]),
        object_alpha=_build_object(cfg["object"], shape),
        dci_shift=tuple(cfg["dci_shift"]),
        seed=seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _archive_resolved(out: Path, payload: dict) -> None:
    with open(out / "config.resolved.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _parse_bins(text: str) -> list[int]:
    try:
        bins = [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise ConfigError(f"bad binning list {text!r}") from exc
    if not bins or any(b < 1 for b in bins):
        raise ConfigError(f"bad binning list {text!r}")
    return bins


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = scene_from_config(cfg)
    n_frames = args.frames if args.frames is not None else cfg["n_frames"]
    frames, truth = generate_stack(config, n_frames,
                                   with_object=cfg["with_object"],
                                   threads=args.threads)
    out = _out_dir(args)
    bio.write_bundle(out, frames, truth,
                     csv_export=args.format in ("csv", "both"),
                     pgm_export=args.format in ("pgm", "both"))
    _archive_resolved(out, cfg)
    print(f"wrote {n_frames} frames to {out}")
    return 0


def cmd_calibrate(args) -> int:
    b = bio.read_bundle(args.bundle)
    if b.with_object:
        raise ConfigError("flat field needs an object-free bundle")
    flat = build_flat_field(b.frames, b.config.regions, args.q, args.bin)
    out = _out_dir(args)
    bio.save_flat_field(out / "flatfield", flat)
    _archive_resolved(out, {"command": "calibrate", "bundle": str(args.bundle),
                            "q": args.q, "bin": args.bin})
    dead = int(flat.dead_s.sum() + flat.dead_i.sum())
    print(f"flat field from {args.q} frames at bin {args.bin}: "
          f"{dead} dead pixel(s), written to {out / 'flatfield'}")
    return 0


def cmd_find_center(args) -> int:
    b = bio.read_bundle(args.bundle)
    frames = b.frames[:args.frames] if args.frames else b.frames
    scan = cs_scan(frames, b.config.regions, args.window, args.scan_bin)
    refined = refine_center(scan, b.config.regions)
    out = _out_dir(args)
    write_scan_csv(out / "sigma_surface.csv", scan)
    report = {
        "best_shift": list(scan.best_shift),
        "center_integer": list(scan.center_estimate),
        "center_refined": list(refined),
        "scan_bin": scan.scan_bin,
        "boundary_warning": scan.boundary_warning,
        "sigma_at_dip": scan.sigma_at(*scan.best_shift),
        "frames_used": len(frames),
    }
    with open(out / "center.json", "w") as fh:
        json.dump(report, fh, indent=2)
    _archive_resolved(out, {"command": "find-center", "bundle": str(args.bundle),
                            "window": args.window, "scan_bin": args.scan_bin,
                            "frames": len(frames)})
    print(f"dip at shift {scan.best_shift}, center estimate {refined}"
          + (" (boundary, not refined)" if scan.boundary_warning else ""))
    return 0


def _load_background_moments(path, n: int, flat: FlatField | None):
    bg = bio.read_bundle(path)
    per_frame = [spatial_moments(f, bg.config.regions, n, flat=flat)
                 for f in bg.frames]
    return mean_moments(per_frame)


def cmd_nrf(args) -> int:
    b = bio.read_bundle(args.bundle)
    bins = _parse_bins(args.bins)
    out = _out_dir(args)
    summary = []
    for n in bins:
        flat = None
        if args.flat_field:
            flat = bio.load_flat_field(Path(args.flat_field))
            if flat.bin != n:
                raise GeometryError(
                    f"flat field at bin {flat.bin} cannot serve analysis bin {n}")
        elif args.self_flat:
            if b.with_object:
                raise ConfigError("self flat field needs an object-free bundle")
            flat = build_flat_field(b.frames, b.config.regions, args.self_flat, n)
        bg = None
        if args.background:
            bg = _load_background_moments(args.background, n, flat)
        reports = [frame_report(f, b.config.regions, n, flat=flat, bg=bg)
                   for f in b.frames]
        write_nrf_reports_csv(out / f"nrf_bin{n:02d}.csv", reports)
        sigma = float(np.mean([r.sigma for r in reports]))
        fano_i = float(np.mean([r.fano_i for r in reports]))
        row = {"bin": n, "sigma": sigma, "fano_i": fano_i,
               "mean_photons": float(np.mean([r.mean_photons for r in reports]))}
        if bg is not None:
            row["sigma_bg"] = float(np.mean([r.sigma_bg_corrected for r in reports]))
        summary.append(row)
        extra = f" bg-corrected {row['sigma_bg']:.4f}" if bg is not None else ""
        print(f"bin {n:2d}: sigma {sigma:.4f}{extra}  fano_i {fano_i:.3f}")
    with open(out / "nrf_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    _archive_resolved(out, {"command": "nrf", "bundle": str(args.bundle),
                            "bins": bins, "flat_field": args.flat_field,
                            "self_flat": args.self_flat,
                            "background": args.background})
    return 0


def _check_congruent(a, b) -> None:
    if (a.config.source.grid_height != b.config.source.grid_height
            or a.config.source.grid_width != b.config.source.grid_width
            or a.config.regions.a_s != b.config.regions.a_s
            or a.config.regions.a_i != b.config.regions.a_i):
        raise GeometryError("object and blank bundles have mismatched geometry")


def analysis_pair(config, n: int, extra: int = 0):
    """Inset analysis regions: stay clear of the DCI displacement band, the
    coherence-jitter spill at the illumination edge, and ``extra`` pixels.
    The inset is rounded up to a whole number of analysis superpixels."""
    dy, dx = config.regions.dci_shift
    need = max(n * max(abs(dy), abs(dx)),
               int(np.ceil(4.0 * config.source.coherence_jitter)), extra)
    inset = ((need + n - 1) // n) * n
    if inset == 0:
        return config.regions
    return inset_pair(config.regions, inset)


def _crop_flat(flat: FlatField, regions, analysis, n: int) -> FlatField:
    """Restrict full-region correction maps to the analysis window."""
    if analysis.a_s == regions.a_s and analysis.a_i == regions.a_i:
        return flat

    def window(full, inset_rect, full_rect):
        oy = (inset_rect.top - full_rect.top) // n
        ox = (inset_rect.left - full_rect.left) // n
        return full[oy:oy + inset_rect.height // n, ox:ox + inset_rect.width // n]

    return FlatField(
        g_s=window(flat.g_s, analysis.a_s, regions.a_s),
        g_i=window(flat.g_i, analysis.a_i, regions.a_i),
        dead_s=window(flat.dead_s, analysis.a_s, regions.a_s),
        dead_i=window(flat.dead_i, analysis.a_i, regions.a_i),
        bin=flat.bin, q_frames_used=flat.q_frames_used)


def _binned_support(config, analysis, n: int) -> np.ndarray:
    """Object support in the analysis window at the analysis binning."""
    if config.object is None:
        raise ConfigError("bundle carries no object mask")
    alpha_binned = bin_array(config.object.alpha, n)
    oy = (analysis.a_s.top - config.regions.a_s.top) // n
    ox = (analysis.a_s.left - config.regions.a_s.left) // n
    bh = analysis.a_s.height // n
    bw = analysis.a_s.width // n
    return alpha_binned[oy:oy + bh, ox:ox + bw] > 0


def per_frame_sigma_fano(frames, regions, n, exclude=None):
    """Per-frame NRF and idler-arm Fano, optionally masking out superpixels."""
    valid = None if exclude is None else ~np.asarray(exclude, dtype=bool)
    sigmas = np.empty(len(frames))
    fanos = np.empty(len(frames))
    for k, f in enumerate(frames):
        m = spatial_moments(f, regions, n, valid=valid)
        sigmas[k] = (m.var_s + m.var_i - 2.0 * m.cov_si) / (m.mean_s + m.mean_i)
        fanos[k] = m.var_i / m.mean_i
    return sigmas, fanos


def _scheme_maps(obj_bundle, blank_bundle, n: int, flat: FlatField | None,
                 regions=None):
    """Per-frame absorption maps for all three schemes; the blank stack's
    per-superpixel mean serves as the direct-imaging illumination reference."""
    if regions is None:
        regions = obj_bundle.config.regions
    acc = None
    for f in blank_bundle.frames:
        s, _, _ = imaging.paired_blocks(f, regions, n, flat=flat)
        acc = s if acc is None else acc + s
    illum = acc / len(blank_bundle.frames)
    maps = {imaging.SSNQI: [], imaging.DCI: [], imaging.DIRECT: []}
    for f in obj_bundle.frames:
        maps[imaging.SSNQI].append(imaging.ssnqi_image(f, regions, flat=flat, n=n))
        maps[imaging.DCI].append(imaging.dci_image(f, regions, flat=flat, n=n))
        maps[imaging.DIRECT].append(imaging.direct_image(f, regions, illum,
                                                         flat=flat, n=n))
    return {k: np.array(v) for k, v in maps.items()}, illum


def cmd_image(args) -> int:
    obj = bio.read_bundle(args.bundle)
    blank = bio.read_bundle(args.blank)
    _check_congruent(obj, blank)
    n = args.bin
    flat = bio.load_flat_field(Path(args.flat_field)) if args.flat_field else None
    regions = analysis_pair(obj.config, n)
    if flat is not None:
        flat = _crop_flat(flat, obj.config.regions, regions, n)
    maps, _ = _scheme_maps(obj, blank, n, flat, regions)
    support = _binned_support(obj.config, regions, n)
    sigmas, fanos = per_frame_sigma_fano(
        obj.frames, regions, n, exclude=binary_dilation(support))
    cls = imaging.FrameClass(indices=np.arange(len(obj.frames)),
                             sigma_mean=float(sigmas.mean()),
                             fano_mean=float(fanos.mean()),
                             band=(float(sigmas.min()), float(sigmas.max())))
    out = _out_dir(args)
    scales = {}
    for scheme, stack in maps.items():
        amap = imaging.class_absorption_map(stack, scheme, cls)
        imaging.write_absorption_csv(out / f"alpha_{scheme.lower()}.csv", amap)
        if args.format in ("pgm", "both"):
            scales[scheme] = bio.write_pgm(out / f"alpha_{scheme.lower()}.pgm",
                                           amap.alpha)
    manifest = {"bin": n, "sigma_mean": cls.sigma_mean, "fano_mean": cls.fano_mean,
                "frames": len(obj.frames),
                "pgm_scale": {k: list(v) for k, v in scales.items()}}
    with open(out / "images.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    _archive_resolved(out, {"command": "image", "bundle": str(args.bundle),
                            "blank": str(args.blank), "bin": n,
                            "flat_field": args.flat_field})
    print(f"class sigma {cls.sigma_mean:.3f}, maps written to {out}")
    return 0


def cmd_snr_study(args) -> int:
    obj = bio.read_bundle(args.bundle)
    blank = bio.read_bundle(args.blank)
    _check_congruent(obj, blank)
    if obj.config.object is None:
        raise ConfigError("snr-study needs an object-bearing bundle")
    n = args.bin
    flat = bio.load_flat_field(Path(args.flat_field)) if args.flat_field else None
    regions = analysis_pair(obj.config, n)
    if flat is not None:
        flat = _crop_flat(flat, obj.config.regions, regions, n)
    support = _binned_support(obj.config, regions, n)
    sigmas, fanos = per_frame_sigma_fano(
        obj.frames, regions, n, exclude=binary_dilation(support))
    classes = imaging.class_grouping(sigmas, fanos, bandwidth=args.bandwidth,
                                     fano_band=args.fano_band)
    maps, _ = _scheme_maps(obj, blank, n, flat, regions)
    alpha_nominal = float(obj.config.object.alpha[mask_support(
        obj.config.object.alpha)].mean())
    study = imaging.snr_study(classes, maps, support, alpha_nominal,
                              min_frames=args.min_frames)
    out = _out_dir(args)
    imaging.write_snr_study_csv(out / "snr_study.csv", study)
    if args.format in ("pgm", "both"):
        for c in study.classes:
            for scheme, m in c.snr_maps.items():
                finite = np.where(np.isfinite(m), m, 0.0)
                bio.write_pgm(out / f"snr_{scheme.lower()}_band"
                              f"{c.band[0]:.1f}.pgm", finite)
    _archive_resolved(out, {"command": "snr-study", "bundle": str(args.bundle),
                            "blank": str(args.blank), "bin": n,
                            "bandwidth": args.bandwidth,
                            "fano_band": args.fano_band,
                            "min_frames": args.min_frames,
                            "alpha": alpha_nominal})
    for c in study.classes:
        print(f"class [{c.band[0]:.1f}, {c.band[1]:.1f}): sigma {c.sigma:.3f} "
              f"n {c.n_frames}  R_dci {c.r_dci:.3f} (theory {c.r_dci_theory:.3f})  "
              f"R_direct {c.r_direct:.3f} (theory {c.r_direct_theory:.3f})")
    for band, count in study.excluded:
        print(f"class [{band[0]:.1f}, {band[1]:.1f}) excluded: "
              f"only {count} frame(s)")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssnqi",
        description="Twin-beam simulator and sub-shot-noise imaging analysis")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads (determinism-preserving)")
    common.add_argument("--format", choices=["csv", "pgm", "both"], default="csv",
                        help="extra export format")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a frame bundle from a scene config")
    p.add_argument("--config", required=True, help="scene config JSON")
    p.add_argument("--frames", type=int, default=None,
                   help="override the config frame count")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common],
                       help="build flat-field maps from an object-free bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--q", type=int, required=True, help="frames to accumulate")
    p.add_argument("--bin", type=int, required=True, help="superpixel size")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("find-center", parents=[common],
                       help="locate the symmetry center by the sigma-dip scan")
    p.add_argument("--bundle", required=True)
    p.add_argument("--window", type=int, required=True,
                   help="scan half-width in fine pixels")
    p.add_argument("--scan-bin", type=int, default=2)
    p.add_argument("--frames", type=int, default=None,
                   help="use only the first K frames")
    p.set_defaults(func=cmd_find_center)

    p = sub.add_parser("nrf", parents=[common],
                       help="per-frame noise reduction factor at one or more binnings")
    p.add_argument("--bundle", required=True)
    p.add_argument("--bins", required=True, help="comma-separated, e.g. 12,24,32")
    p.add_argument("--flat-field", default=None, help="saved flat-field directory")
    p.add_argument("--self-flat", type=int, default=None,
                   help="build the flat field from the first Q frames of the bundle")
    p.add_argument("--background", default=None, help="background-only bundle")
    p.set_defaults(func=cmd_nrf)

    p = sub.add_parser("image", parents=[common],
                       help="class-averaged absorption maps per scheme")
    p.add_argument("--bundle", required=True, help="object bundle")
    p.add_argument("--blank", required=True, help="object-free bundle")
    p.add_argument("--bin", type=int, required=True)
    p.add_argument("--flat-field", default=None)
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("snr-study", parents=[common],
                       help="per-class SNR ratios against theory")
    p.add_argument("--bundle", required=True, help="object bundle")
    p.add_argument("--blank", required=True, help="object-free bundle")
    p.add_argument("--bin", type=int, required=True)
    p.add_argument("--flat-field", default=None)
    p.add_argument("--bandwidth", type=float, default=0.1)
    p.add_argument("--fano-band", type=float, default=0.2)
    p.add_argument("--min-frames", type=int, default=10)
    p.set_defaults(func=cmd_snr_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SsnqiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in _EXIT_CODES.items():
            if isinstance(exc, cls):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
