"""Frame-bundle disk format.

One directory per stack:

* ``manifest.json`` - scene configuration, grid geometry, endianness tag,
  frame file list, ground-truth file names;
* ``frames/shot_NNNNNN.u32`` - raw count grids, little-endian unsigned
  32-bit, row-major;
* ``truth/*.f64`` - efficiency/absorption maps, real-valued 64-bit raw,
  same layout convention as the frames;
* ``truth/per_shot.csv`` - per-shot gain, dropped photons, clamped pixels.

Optional exports: one CSV per frame, and PGM (P2 ascii / P5 binary)
grayscale previews whose count-to-gray scale is recorded in the manifest.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import BundleError
from .frames import Frame
from .regions import Rect, RegionPair
from .sim import (DetectionParams, ObjectMask, SceneConfig, SourceParams,
                  StackTruth)

FRAME_DTYPE = "<u4"
MAP_DTYPE = "<f8"
BUNDLE_FORMAT = "ssnqi-bundle-v1"


def _write_raw(path: Path, array: np.ndarray, dtype: str) -> None:
    try:
        array.astype(dtype).tofile(path)
    except OSError as exc:
        raise BundleError(f"cannot write {path}: {exc}") from exc


def _read_raw(path: Path, dtype: str, shape: tuple[int, int]) -> np.ndarray:
    try:
        flat = np.fromfile(path, dtype=dtype)
    except OSError as exc:
        raise BundleError(f"cannot read {path}: {exc}") from exc
    if flat.size != shape[0] * shape[1]:
        raise BundleError(
            f"{path}: expected {shape[0] * shape[1]} values, found {flat.size}")
    return flat.reshape(shape)


def write_pgm(path, array: np.ndarray, binary: bool = True,
              maxval: int = 65535,
              bounds: tuple[float, float] | None = None) -> tuple[float, float]:
    """Grayscale preview with linear value-to-gray mapping; returns the bounds used."""
    a = np.asarray(array, dtype=float)
    if bounds is None:
        bounds = (float(a.min()), float(a.max()))
    lo, hi = bounds
    span = hi - lo if hi > lo else 1.0
    gray = np.clip(np.rint((a - lo) / span * maxval), 0, maxval).astype(np.uint16)
    h, w = gray.shape
    try:
        with open(path, "wb") as fh:
            if binary:
                fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
                # P5 stores 2-byte samples big-endian when maxval > 255.
                fh.write(gray.astype(">u2" if maxval > 255 else "u1").tobytes())
            else:
                fh.write(f"P2\n{w} {h}\n{maxval}\n".encode())
                for row in gray:
                    fh.write((" ".join(str(v) for v in row) + "\n").encode())
    except OSError as exc:
        raise BundleError(f"cannot write {path}: {exc}") from exc
    return bounds


def _rect_to_list(r: Rect) -> list[int]:
    return [r.top, r.left, r.height, r.width]


def _config_manifest(config: SceneConfig) -> dict:
    src, det, reg = config.source, config.detection, config.regions
    return {
        "source": {
            "grid_height": src.grid_height, "grid_width": src.grid_width,
            "cells_y": src.cells_y, "cells_x": src.cells_x,
            "mu": src.mu, "m_temp": src.m_temp,
            "gain_jitter": src.gain_jitter,
            "coherence_jitter": src.coherence_jitter,
            "center": list(src.center),
        },
        "detection": {
            "straylight_mean": det.straylight_mean,
            "readout_sigma": det.readout_sigma,
            "hardware_bin": det.hardware_bin,
            "eta_s_file": "truth/eta_s.f64",
            "eta_i_file": "truth/eta_i.f64",
        },
        "regions": {
            "a_s": _rect_to_list(reg.a_s), "a_i": _rect_to_list(reg.a_i),
            "center": list(reg.center), "dci_shift": list(reg.dci_shift),
        },
        "object": None if config.object is None else {"alpha_file": "truth/alpha.f64"},
        "seed": config.seed,
    }


def write_bundle(path, frames: list[Frame], truth: StackTruth,
                 csv_export: bool = False, pgm_export: bool = False) -> Path:
    """Persist a stack with its full ground truth; returns the bundle root."""
    root = Path(path)
    try:
        (root / "frames").mkdir(parents=True, exist_ok=True)
        (root / "truth").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BundleError(f"cannot create bundle at {root}: {exc}") from exc

    config = truth.config
    frame_files = []
    pgm_scale = None
    for k, frame in enumerate(frames):
        name = f"frames/shot_{k:06d}.u32"
        if frame.counts.min() < 0:
            raise BundleError(f"frame {k} holds negative counts")
        _write_raw(root / name, frame.counts, FRAME_DTYPE)
        frame_files.append(name)
        if csv_export:
            with open(root / f"frames/shot_{k:06d}.csv", "w", newline="") as fh:
                csv.writer(fh).writerows(frame.counts.tolist())
        if pgm_export:
            pgm_scale = write_pgm(root / f"frames/shot_{k:06d}.pgm", frame.counts,
                                  bounds=pgm_scale)

    det = config.detection
    _write_raw(root / "truth/eta_s.f64", det.eta_s, MAP_DTYPE)
    _write_raw(root / "truth/eta_i.f64", det.eta_i, MAP_DTYPE)
    if config.object is not None:
        _write_raw(root / "truth/alpha.f64", config.object.alpha, MAP_DTYPE)

    with open(root / "truth/per_shot.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shot_id", "gain", "dropped_photons", "clamped_pixels",
                    "emitted_pairs"])
        for k in range(len(frames)):
            w.writerow([k, truth.gains[k], truth.dropped_photons[k],
                        truth.clamped_pixels[k], truth.emitted_pairs[k]])

    hb = det.hardware_bin
    manifest = {
        "format": BUNDLE_FORMAT,
        "endianness": "little",
        "frame_dtype": FRAME_DTYPE,
        "frame_shape": [config.source.grid_height // hb, config.source.grid_width // hb],
        "frame_bin": hb,
        "n_frames": len(frames),
        "frames": frame_files,
        "with_object": truth.with_object,
        "per_shot_file": "truth/per_shot.csv",
        "config": _config_manifest(config),
    }
    if pgm_export and pgm_scale is not None:
        manifest["pgm_scale"] = list(pgm_scale)
    try:
        with open(root / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
    except OSError as exc:
        raise BundleError(f"cannot write manifest at {root}: {exc}") from exc
    return root


def _config_from_manifest(root: Path, m: dict) -> SceneConfig:
    src = m["config"]["source"]
    det = m["config"]["detection"]
    reg = m["config"]["regions"]
    a_s = Rect(*reg["a_s"])
    eta_s = _read_raw(root / det["eta_s_file"], MAP_DTYPE, (a_s.height, a_s.width))
    eta_i = _read_raw(root / det["eta_i_file"], MAP_DTYPE, (a_s.height, a_s.width))
    obj = None
    if m["config"]["object"] is not None:
        alpha = _read_raw(root / m["config"]["object"]["alpha_file"], MAP_DTYPE,
                          (a_s.height, a_s.width))
        obj = ObjectMask(alpha)
    return SceneConfig(
        source=SourceParams(
            grid_height=src["grid_height"], grid_width=src["grid_width"],
            cells_y=src["cells_y"], cells_x=src["cells_x"],
            mu=src["mu"], m_temp=src["m_temp"],
            gain_jitter=src["gain_jitter"],
            coherence_jitter=src["coherence_jitter"],
            center=tuple(src["center"])),
        detection=DetectionParams(
            eta_s=eta_s, eta_i=eta_i,
            straylight_mean=det["straylight_mean"],
            readout_sigma=det["readout_sigma"],
            hardware_bin=det["hardware_bin"]),
        regions=RegionPair(
            a_s=a_s, a_i=Rect(*reg["a_i"]),
            center=tuple(reg["center"]), dci_shift=tuple(reg["dci_shift"])),
        object=obj,
        seed=m["config"]["seed"])


class Bundle:
    """A read-back stack: frames, reconstructed config, ground truth, manifest."""

    def __init__(self, frames: list[Frame], truth: StackTruth, manifest: dict):
        self.frames = frames
        self.truth = truth
        self.manifest = manifest

    @property
    def config(self) -> SceneConfig:
        return self.truth.config

    @property
    def with_object(self) -> bool:
        return self.truth.with_object


def read_bundle(path) -> Bundle:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise BundleError(f"no manifest.json under {root}")
    with open(mpath) as fh:
        m = json.load(fh)
    if m.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"{mpath}: unknown bundle format {m.get('format')!r}")
    config = _config_from_manifest(root, m)
    shape = tuple(m["frame_shape"])
    frames = [Frame(_read_raw(root / name, m["frame_dtype"], shape),
                    bin=m["frame_bin"], shot_id=k)
              for k, name in enumerate(m["frames"])]
    gains, dropped, clamped, emitted = [], [], [], []
    with open(root / m["per_shot_file"], newline="") as fh:
        for row in csv.DictReader(fh):
            gains.append(float(row["gain"]))
            dropped.append(int(row["dropped_photons"]))
            clamped.append(int(row["clamped_pixels"]))
            emitted.append(int(row["emitted_pairs"]))
    truth = StackTruth(config=config, with_object=m["with_object"],
                       gains=np.array(gains), dropped_photons=np.array(dropped),
                       clamped_pixels=np.array(clamped),
                       emitted_pairs=np.array(emitted))
    return Bundle(frames=frames, truth=truth, manifest=m)


def save_flat_field(path, flat) -> Path:
    """Persist correction maps in the raw-grid format (real-valued, 64-bit)."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BundleError(f"cannot create {root}: {exc}") from exc
    _write_raw(root / "g_s.f64", flat.g_s, MAP_DTYPE)
    _write_raw(root / "g_i.f64", flat.g_i, MAP_DTYPE)
    _write_raw(root / "dead_s.u8", flat.dead_s.astype(np.uint8), "u1")
    _write_raw(root / "dead_i.u8", flat.dead_i.astype(np.uint8), "u1")
    meta = {"bin": flat.bin, "q_frames_used": flat.q_frames_used,
            "shape": list(flat.g_s.shape), "dtype": MAP_DTYPE}
    with open(root / "flatfield.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return root


def load_flat_field(path):
    from .estimators import FlatField
    root = Path(path)
    meta_path = root / "flatfield.json"
    if not meta_path.exists():
        raise BundleError(f"no flatfield.json under {root}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    shape = tuple(meta["shape"])
    return FlatField(
        g_s=_read_raw(root / "g_s.f64", MAP_DTYPE, shape),
        g_i=_read_raw(root / "g_i.f64", MAP_DTYPE, shape),
        dead_s=_read_raw(root / "dead_s.u8", "u1", shape).astype(bool),
        dead_i=_read_raw(root / "dead_i.u8", "u1", shape).astype(bool),
        bin=meta["bin"], q_frames_used=meta["q_frames_used"])
