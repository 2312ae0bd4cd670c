"""Absorption imaging schemes and their figures of merit.

Three estimates of the absorption map alpha(x) from object-bearing frames:

* quantum-correlated subtraction (SSNQI): idler noise pattern at the
  point-symmetric position cancels the signal arm's noise;
* differential classical imaging (DCI): same subtraction with the idler
  region displaced by one superpixel, which keeps the intensity statistics
  but destroys the pairwise correlation;
* direct imaging: signal arm against the object-free illumination reference.

Figures of merit: squared correlation coefficient against a noise-free
reference, and per-pixel SNR ratios between schemes, grouped by per-frame
correlation classes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion

from .errors import GeometryError, InvalidRegimeError
from .estimators import FlatField, paired_blocks
from .frames import Frame
from .regions import RegionPair

SSNQI = "SSNQI"
DCI = "DCI"
DIRECT = "DIRECT"
SCHEMES = (SSNQI, DCI, DIRECT)


@dataclass
class AbsorptionMap:
    alpha: np.ndarray
    scheme: str
    frames_used: int
    sigma_class: float
    fano_class: float

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidRegimeError(f"unknown scheme {self.scheme!r}")
        if self.frames_used < 1:
            raise InvalidRegimeError("frames_used must be >= 1")


@dataclass
class FrameClass:
    """Frames whose per-frame correlation degree falls in one band."""

    indices: np.ndarray
    sigma_mean: float
    fano_mean: float
    band: tuple[float, float]

    @property
    def n_frames(self) -> int:
        return len(self.indices)


@dataclass
class SnrClassResult:
    sigma: float
    fano: float
    n_frames: int
    band: tuple[float, float]
    snr_maps: dict
    r_dci: float
    r_direct: float
    r_dci_theory: float
    r_direct_theory: float


@dataclass
class SnrStudy:
    classes: list[SnrClassResult]
    excluded: list[tuple[tuple[float, float], int]] = field(default_factory=list)


@dataclass
class FigureOfMeritReport:
    """Per-frame squared correlation coefficients against the reference."""

    c_ssnqi: np.ndarray
    c_dci: np.ndarray
    c_direct: np.ndarray

    @property
    def means(self) -> dict:
        return {SSNQI: float(self.c_ssnqi.mean()),
                DCI: float(self.c_dci.mean()),
                DIRECT: float(self.c_direct.mean())}


def _difference_image(frame: Frame, regions: RegionPair, n: int | None,
                      flat: FlatField | None, idler_shift: tuple[int, int]):
    s, i, ok = paired_blocks(frame, regions, n, flat=flat, idler_shift=idler_shift)
    if not ok.all():
        raise GeometryError("incomplete pairing over the analysis region")
    return s, i


def ssnqi_image(frame: Frame, regions: RegionPair, flat: FlatField | None = None,
                n: int | None = None) -> np.ndarray:
    """Per-frame absorption estimate from the quantum-correlated subtraction.

    alpha(x) = [N_i(-x) - N_s'(x)] / <N_i>, the normalization being this
    frame's mean idler photons per superpixel over the region.
    """
    s, i = _difference_image(frame, regions, n, flat, (0, 0))
    mean_i = i.mean()
    if mean_i <= 0:
        raise InvalidRegimeError("idler region holds no photons")
    return (i - s) / mean_i


def dci_image(frame: Frame, regions: RegionPair, flat: FlatField | None = None,
              n: int | None = None,
              shift: tuple[int, int] | None = None) -> np.ndarray:
    """Classically-correlated variant: idler region displaced by ``shift``
    analysis superpixels (default: the pair's dci_shift)."""
    if shift is None:
        shift = regions.dci_shift
    s, i = _difference_image(frame, regions, n, flat, tuple(shift))
    mean_i = i.mean()
    if mean_i <= 0:
        raise InvalidRegimeError("idler region holds no photons")
    return (i - s) / mean_i


def direct_image(frame: Frame, regions: RegionPair, reference: np.ndarray,
                 flat: FlatField | None = None,
                 n: int | None = None) -> np.ndarray:
    """Single-beam absorption: alpha(x) = 1 - N_s'(x) / reference(x).

    ``reference`` is the per-superpixel illumination estimate from an
    object-free calibration stack (see ``reference_image``).
    """
    s, _, ok = paired_blocks(frame, regions, n, flat=flat)
    if not ok.all():
        raise GeometryError("incomplete pairing over the analysis region")
    reference = np.asarray(reference, dtype=float)
    if reference.shape != s.shape:
        raise GeometryError(
            f"reference shape {reference.shape} does not match region {s.shape}")
    if (reference <= 0).any():
        raise InvalidRegimeError("illumination reference contains empty pixels")
    return 1.0 - s / reference


def reference_image(images) -> np.ndarray:
    """Pixel-wise mean over a stack of images: residual noise shrinks as 1/sqrt(n)."""
    arr = np.asarray(images, dtype=float)
    if arr.ndim == 2:
        return arr.copy()
    if arr.ndim != 3:
        raise GeometryError(f"expected a stack of 2D images, got shape {arr.shape}")
    return arr.mean(axis=0)


def correlation_coefficient(image: np.ndarray, reference: np.ndarray) -> float:
    """Squared Pearson correlation of the two fluctuation fields, in [0, 1].

    Invariant under affine rescaling of either image.
    """
    a = np.asarray(image, dtype=float).ravel()
    b = np.asarray(reference, dtype=float).ravel()
    if a.shape != b.shape:
        raise GeometryError("image and reference shapes differ")
    da = a - a.mean()
    db = b - b.mean()
    va = (da ** 2).mean()
    vb = (db ** 2).mean()
    if va == 0 or vb == 0:
        raise InvalidRegimeError("constant image has no fluctuation field")
    return float((da * db).mean() ** 2 / (va * vb))


def class_grouping(sigmas, fanos, bandwidth: float = 0.1,
                   fano_band: float | None = None) -> list[FrameClass]:
    """Partition frames into sigma bands of the given width.

    With ``fano_band`` set, only frames with |F - 1| <= fano_band take part
    (quasi-Poissonian selection). Class means are plain arithmetic means of
    the member frames' sigma and Fano values.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    fanos = np.asarray(fanos, dtype=float)
    if sigmas.shape != fanos.shape:
        raise InvalidRegimeError("per-frame sigma and Fano lists differ in length")
    keep = np.ones(len(sigmas), dtype=bool)
    if fano_band is not None:
        keep = np.abs(fanos - 1.0) <= fano_band
    classes = []
    bands = np.floor(sigmas[keep] / bandwidth).astype(int)
    for b in np.unique(bands):
        idx = np.flatnonzero(keep & (np.floor(sigmas / bandwidth).astype(int) == b))
        classes.append(FrameClass(
            indices=idx,
            sigma_mean=float(sigmas[idx].mean()),
            fano_mean=float(fanos[idx].mean()),
            band=(b * bandwidth, (b + 1) * bandwidth)))
    return classes


def r_dci_theory(sigma: float, alpha: float, excess_noise: float = 0.0,
                 excess_noise_classical: float | None = None) -> float:
    """Predicted SNR ratio of the correlated scheme over the differential
    classical one, at equal illumination.

    ``excess_noise`` is the twin-beam arms' detected photons per mode;
    ``excess_noise_classical`` the reference beam's (defaults to the same,
    as when both images come from the same source).
    """
    if excess_noise_classical is None:
        excess_noise_classical = excess_noise
    num = 2.0 - alpha + alpha ** 2 * excess_noise_classical
    den = alpha ** 2 * excess_noise + 2.0 * sigma * (1.0 - alpha) + alpha
    return float(np.sqrt(num / den))


def r_direct_theory(sigma: float) -> float:
    """Weak-absorption SNR ratio over direct imaging: crosses 1 at sigma = 0.5."""
    return float(1.0 / np.sqrt(2.0 * sigma))


def class_absorption_map(maps: np.ndarray, scheme: str,
                         cls: FrameClass) -> AbsorptionMap:
    """Average the per-frame maps of one class into an AbsorptionMap."""
    sel = np.asarray(maps, dtype=float)[cls.indices]
    return AbsorptionMap(alpha=sel.mean(axis=0), scheme=scheme,
                         frames_used=cls.n_frames,
                         sigma_class=cls.sigma_mean, fano_class=cls.fano_mean)


def snr_study(classes: list[FrameClass], alpha_maps: dict,
              support: np.ndarray, alpha_nominal: float,
              min_frames: int = 10) -> SnrStudy:
    """Across-frame SNR per pixel and scheme, ratios averaged over the object.

    ``alpha_maps`` maps scheme name to the (n_frames, H, W) stack of
    per-frame absorption maps; ``support`` is the object's footprint at the
    analysis binning. The spatial average excludes a one-superpixel border of
    the support (partial-coverage pixels). Classes with fewer than
    ``min_frames`` members are excluded and reported.
    """
    support = np.asarray(support, dtype=bool)
    interior = binary_erosion(support)
    if not interior.any():
        raise GeometryError("object support vanishes after border erosion")

    results = []
    excluded = []
    for cls in classes:
        if cls.n_frames < min_frames:
            excluded.append((cls.band, cls.n_frames))
            continue
        snr_maps = {}
        for scheme in SCHEMES:
            if scheme not in alpha_maps:
                continue
            sel = np.asarray(alpha_maps[scheme], dtype=float)[cls.indices]
            mean = sel.mean(axis=0)
            var = sel.var(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                snr_maps[scheme] = np.where(var > 0, mean / np.sqrt(var), np.inf)
        e_n = max(cls.fano_mean - 1.0, 0.0)
        r_dci = float((snr_maps[SSNQI][interior] / snr_maps[DCI][interior]).mean()) \
            if DCI in snr_maps else float("nan")
        r_direct = float((snr_maps[SSNQI][interior] / snr_maps[DIRECT][interior]).mean()) \
            if DIRECT in snr_maps else float("nan")
        results.append(SnrClassResult(
            sigma=cls.sigma_mean, fano=cls.fano_mean, n_frames=cls.n_frames,
            band=cls.band, snr_maps=snr_maps,
            r_dci=r_dci, r_direct=r_direct,
            r_dci_theory=r_dci_theory(cls.sigma_mean, alpha_nominal, e_n),
            r_direct_theory=r_direct_theory(cls.sigma_mean)))
    return SnrStudy(classes=results, excluded=excluded)


def figure_of_merit(images: dict, reference: np.ndarray) -> FigureOfMeritReport:
    """Per-frame squared correlation against the reference, per scheme."""
    c = {}
    for scheme in SCHEMES:
        stack = np.asarray(images[scheme], dtype=float)
        c[scheme] = np.array([correlation_coefficient(img, reference) for img in stack])
    return FigureOfMeritReport(c_ssnqi=c[SSNQI], c_dci=c[DCI], c_direct=c[DIRECT])


def write_snr_study_csv(path, study: SnrStudy) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["band_lo", "band_hi", "sigma", "fano", "n_frames",
                    "r_dci", "r_dci_theory", "r_direct", "r_direct_theory"])
        for c in study.classes:
            w.writerow([c.band[0], c.band[1], c.sigma, c.fano, c.n_frames,
                        c.r_dci, c.r_dci_theory, c.r_direct, c.r_direct_theory])


def write_absorption_csv(path, amap: AbsorptionMap) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", amap.scheme])
        w.writerow(["frames_used", amap.frames_used])
        w.writerow(["sigma_class", amap.sigma_class])
        w.writerow(["fano_class", amap.fano_class])
        w.writerow(["rows"])
        for row in amap.alpha:
            w.writerow(list(row))
