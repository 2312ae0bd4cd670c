"""Spatial moment estimators, noise reduction factor, and corrections.

Statistics are single-frame spatial averages over the ensemble of paired
superpixels, population convention (divide by the pixel count R, not R - 1):
the sample convention would rescale the NRF by R / (R - 1). Frames may hold
real-valued grids (after flat fielding); integer-only steps assert nothing
beyond non-negativity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError, InvalidRegimeError
from .frames import Frame, bin_array
from .regions import RegionPair, pair_index

__all__ = [
    "Moments", "NrfReport", "FlatField", "BackgroundCorrected",
    "paired_blocks", "spatial_moments", "mean_moments", "nrf", "fano",
    "build_flat_field", "apply_flat_field", "background_correct",
    "frame_report", "predicted_nrf", "predicted_experimental_nrf",
    "predicted_nrf_flat_field", "predicted_nrf_uncorrelated",
    "write_moments_csv", "write_nrf_reports_csv",
]


@dataclass(frozen=True)
class Moments:
    """First and second spatial moments over the paired pixels of one frame."""

    mean_s: float
    mean_i: float
    var_s: float
    var_i: float
    cov_si: float
    n_pixels: int

    def __post_init__(self):
        if self.n_pixels < 2:
            raise GeometryError(f"need at least 2 paired pixels, got {self.n_pixels}")


@dataclass(frozen=True)
class NrfReport:
    sigma: float
    fano_s: float
    fano_i: float
    mean_photons: float
    bin: int
    flat_field_applied: bool = False
    sigma_bg_corrected: float | None = None
    fano_bg_corrected: float | None = None
    shot_id: int = 0


@dataclass(frozen=True)
class BackgroundCorrected:
    sigma: float
    fano_s: float
    fano_i: float


@dataclass
class FlatField:
    """Multiplicative per-superpixel correction maps, region-local.

    ``g_s`` / ``g_i`` equalize the per-pixel accumulated counts; pixels that
    collected nothing over the calibration stack are flagged dead and must be
    excluded from statistics rather than imputed (imputation correlates
    neighbours and biases the NRF down). At dead pixels g is set to 1.
    """

    g_s: np.ndarray
    g_i: np.ndarray
    dead_s: np.ndarray
    dead_i: np.ndarray
    bin: int
    q_frames_used: int

    @classmethod
    def identity(cls, shape: tuple[int, int], n: int) -> "FlatField":
        ones = np.ones(shape)
        no_dead = np.zeros(shape, dtype=bool)
        return cls(g_s=ones.copy(), g_i=ones.copy(),
                   dead_s=no_dead.copy(), dead_i=no_dead.copy(),
                   bin=n, q_frames_used=0)


def _region_block(frame: Frame, rect, n: int) -> np.ndarray:
    """Region content summed to n x n fine-pixel superpixels."""
    if n % frame.bin:
        raise GeometryError(
            f"analysis binning {n} incompatible with frame binning {frame.bin}")
    block = frame.region(rect)
    sub = n // frame.bin
    return bin_array(block, sub) if sub > 1 else block


def paired_blocks(frame: Frame, regions: RegionPair, n: int | None = None,
                  flat: FlatField | None = None,
                  idler_shift: tuple[int, int] = (0, 0),
                  valid: np.ndarray | None = None):
    """Signal block, geometrically paired idler block, and validity mask.

    ``n`` is the total analysis binning in fine pixels (default: the frame's
    own). The idler block is re-indexed so element (i, j) is the superpixel
    paired with signal superpixel (i, j) by point reflection about
    ``regions.center``. ``idler_shift`` displaces the idler rectangle by
    whole analysis superpixels before pairing (the DCI trick).
    """
    if n is None:
        n = frame.bin
    s = np.asarray(_region_block(frame, regions.a_s, n), dtype=float)
    a_i = regions.a_i.shifted(idler_shift[0] * n, idler_shift[1] * n)
    i_local = np.asarray(_region_block(frame, a_i, n), dtype=float)
    pidx = pair_index(regions, n)
    ok = pidx.valid.copy()
    if flat is not None:
        if flat.bin != n:
            raise GeometryError(f"flat field built at bin {flat.bin}, analysis at {n}")
        if flat.g_s.shape != s.shape:
            raise GeometryError(
                f"flat field shape {flat.g_s.shape} does not match region {s.shape}")
        s = s * flat.g_s
        i_local = i_local * flat.g_i
        ok &= ~flat.dead_s
        ok &= ~flat.dead_i[pidx.rows, pidx.cols]
    i = i_local[pidx.rows, pidx.cols]
    if valid is not None:
        ok &= valid
    return s, i, ok


def spatial_moments(frame: Frame, regions: RegionPair, n: int | None = None,
                    flat: FlatField | None = None,
                    valid: np.ndarray | None = None) -> Moments:
    """Population mean/variance/covariance over the paired superpixels of one frame."""
    s, i, ok = paired_blocks(frame, regions, n, flat=flat, valid=valid)
    r = int(ok.sum())
    if r < 2:
        raise GeometryError(f"only {r} valid superpixel pairs")
    sv = s[ok]
    iv = i[ok]
    ms = sv.mean()
    mi = iv.mean()
    return Moments(
        mean_s=float(ms), mean_i=float(mi),
        var_s=float(((sv - ms) ** 2).mean()),
        var_i=float(((iv - mi) ** 2).mean()),
        cov_si=float(((sv - ms) * (iv - mi)).mean()),
        n_pixels=r)


def mean_moments(moments: list[Moments]) -> Moments:
    """Field-wise average of per-frame moments (ensemble background estimate)."""
    if not moments:
        raise InvalidRegimeError("empty moments list")
    return Moments(
        mean_s=float(np.mean([m.mean_s for m in moments])),
        mean_i=float(np.mean([m.mean_i for m in moments])),
        var_s=float(np.mean([m.var_s for m in moments])),
        var_i=float(np.mean([m.var_i for m in moments])),
        cov_si=float(np.mean([m.cov_si for m in moments])),
        n_pixels=moments[0].n_pixels)


def nrf(moments: Moments) -> float:
    """Noise reduction factor: difference-variance over the shot-noise level."""
    denom = moments.mean_s + moments.mean_i
    if denom <= 0:
        raise InvalidRegimeError("zero total mean, NRF undefined")
    return (moments.var_s + moments.var_i - 2.0 * moments.cov_si) / denom


def fano(mean: float, var: float) -> float:
    """Variance-to-mean ratio; 1 for Poisson, 1 + detected-photons-per-mode here."""
    if mean <= 0:
        raise InvalidRegimeError("zero mean, Fano factor undefined")
    return var / mean


def build_flat_field(frames: list[Frame], regions: RegionPair, q: int,
                     n: int) -> FlatField:
    """Accumulate q object-free frames and normalize to the region mean.

    The correction g is the region-mean of the accumulated map divided by the
    per-pixel value, so multiplying frames by g equalizes per-pixel means
    while leaving the region mean unchanged.
    """
    if q < 1:
        raise ConfigError(f"flat field needs q >= 1 frames, got {q}")
    if q > len(frames):
        raise ConfigError(
            f"flat field requested q={q} frames but only {len(frames)} available")
    f_s = None
    f_i = None
    for frame in frames[:q]:
        s = np.asarray(_region_block(frame, regions.a_s, n), dtype=float)
        i = np.asarray(_region_block(frame, regions.a_i, n), dtype=float)
        f_s = s if f_s is None else f_s + s
        f_i = i if f_i is None else f_i + i

    def gain_map(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dead = f <= 0
        alive_mean = f[~dead].mean() if (~dead).any() else 1.0
        g = np.ones_like(f)
        np.divide(alive_mean, f, out=g, where=~dead)
        return g, dead

    g_s, dead_s = gain_map(f_s)
    g_i, dead_i = gain_map(f_i)
    return FlatField(g_s=g_s, g_i=g_i, dead_s=dead_s, dead_i=dead_i,
                     bin=n, q_frames_used=q)


def apply_flat_field(frame: Frame, flat: FlatField, regions: RegionPair) -> Frame:
    """Multiply region contents by the correction maps; outside pixels pass through.

    The frame must already be binned to the flat field's superpixel size.
    """
    if frame.bin != flat.bin:
        raise GeometryError(
            f"frame at bin {frame.bin} but flat field built at bin {flat.bin}")
    out = frame.counts.astype(float).copy()
    b = frame.bin
    for rect, g in ((regions.a_s, flat.g_s), (regions.a_i, flat.g_i)):
        r = slice(rect.top // b, rect.bottom // b)
        c = slice(rect.left // b, rect.right // b)
        if out[r, c].shape != g.shape:
            raise GeometryError(
                f"flat map shape {g.shape} does not match region {rect} at bin {b}")
        out[r, c] *= g
    return Frame(out, bin=frame.bin, shot_id=frame.shot_id)


def background_correct(lit: Moments, bg: Moments) -> BackgroundCorrected:
    """Subtract the background's mean and variance from the NRF and Fano factors.

    The background moments come from a stack acquired with the source off but
    identical geometry and readout.
    """
    num = (lit.var_s + lit.var_i - 2.0 * lit.cov_si) - bg.var_s - bg.var_i
    den = (lit.mean_s + lit.mean_i) - (bg.mean_s + bg.mean_i)
    if den <= 0:
        raise InvalidRegimeError(
            f"background mean {bg.mean_s + bg.mean_i:.3f} reaches the signal "
            f"level {lit.mean_s + lit.mean_i:.3f}")
    den_s = lit.mean_s - bg.mean_s
    den_i = lit.mean_i - bg.mean_i
    if den_s <= 0 or den_i <= 0:
        raise InvalidRegimeError("background exceeds one arm's mean")
    return BackgroundCorrected(
        sigma=num / den,
        fano_s=(lit.var_s - bg.var_s) / den_s,
        fano_i=(lit.var_i - bg.var_i) / den_i)


def frame_report(frame: Frame, regions: RegionPair, n: int | None = None,
                 flat: FlatField | None = None,
                 bg: Moments | None = None) -> NrfReport:
    """One frame's NRF/Fano summary, optionally flat-fielded and background-corrected."""
    m = spatial_moments(frame, regions, n, flat=flat)
    sigma_bg = None
    fano_bg = None
    if bg is not None:
        corrected = background_correct(m, bg)
        sigma_bg = corrected.sigma
        fano_bg = 0.5 * (corrected.fano_s + corrected.fano_i)
    return NrfReport(
        sigma=nrf(m),
        fano_s=fano(m.mean_s, m.var_s),
        fano_i=fano(m.mean_i, m.var_i),
        mean_photons=0.5 * (m.mean_s + m.mean_i),
        bin=n if n is not None else frame.bin,
        flat_field_applied=flat is not None,
        sigma_bg_corrected=sigma_bg,
        fano_bg_corrected=fano_bg,
        shot_id=frame.shot_id)


# ---------------------------------------------------------------------------
# Closed-form predictions
# ---------------------------------------------------------------------------

def predicted_nrf(eta_s, eta_i, n_mean: float, modes: float):
    """Per-pixel-pair NRF for efficiencies (eta_s, eta_i), incident mean
    ``n_mean`` photons per superpixel and ``modes`` collected modes.

    Balanced arms give 1 - eta; an imbalance adds
    0.5 * (eta_s - eta_i)^2 / eta_plus * (n_mean / modes + 1/2).
    Accepts scalars or per-pixel maps.
    """
    eta_s = np.asarray(eta_s, dtype=float)
    eta_i = np.asarray(eta_i, dtype=float)
    eta_p = 0.5 * (eta_s + eta_i)
    eta_m = eta_s - eta_i
    sigma = 1.0 - eta_p + 0.5 * (eta_m ** 2 / eta_p) * (n_mean / modes + 0.5)
    return float(sigma) if sigma.ndim == 0 else sigma


def predicted_experimental_nrf(eta_bar_s: float, eta_bar_i: float,
                               var_eta_s: float, var_eta_i: float,
                               n_mean: float, modes: float) -> float:
    """Single-frame spatial-estimator NRF including the disuniformity excess.

    Spatial variance of the efficiency maps feeds the per-frame statistics an
    extra term [V(eta_s) + V(eta_i)] / (2 eta_plus) * (n_mean + n_mean/modes)
    that grows with the photon number and can dominate; the flat field
    removes it.
    """
    base = predicted_nrf(eta_bar_s, eta_bar_i, n_mean, modes)
    eta_p = 0.5 * (eta_bar_s + eta_bar_i)
    return base + (var_eta_s + var_eta_i) / (2.0 * eta_p) * (n_mean + n_mean / modes)


def predicted_nrf_flat_field(eta_bar_s: float, eta_bar_i: float,
                             n_mean: float, modes: float) -> float:
    """Expected NRF after flat-field compensation of the disuniformity."""
    eta_p = 0.5 * (eta_bar_s + eta_bar_i)
    eta_m = eta_bar_s - eta_bar_i
    return 1.0 - eta_p + 0.5 * (eta_m ** 2 / eta_p) * (n_mean / modes)


def predicted_nrf_uncorrelated(eta: float, m_c: float, m_u: float,
                               e_n: float) -> float:
    """NRF when a pixel pair shares m_c correlated modes and sees m_u
    uncorrelated ones (misalignment / sub-coherence-area binning).

    Only the ratio m_u / m_c matters, so any common scale (e.g. fractions
    from ``correlated_mode_fraction``) may be passed.
    """
    if m_c <= 0:
        raise InvalidRegimeError("no correlated modes, prediction undefined")
    frac = m_c / (m_c + m_u)
    return 1.0 - eta * frac * (1.0 - (m_u / m_c) * e_n)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

_MOMENTS_FIELDS = ["shot_id", "mean_s", "mean_i", "var_s", "var_i", "cov_si", "n_pixels"]
_REPORT_FIELDS = ["shot_id", "bin", "sigma", "fano_s", "fano_i", "mean_photons",
                  "flat_field_applied", "sigma_bg_corrected", "fano_bg_corrected"]


def write_moments_csv(path, moments: list[Moments], shot_ids=None) -> None:
    shot_ids = shot_ids if shot_ids is not None else range(len(moments))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_MOMENTS_FIELDS)
        for sid, m in zip(shot_ids, moments):
            w.writerow([sid, m.mean_s, m.mean_i, m.var_s, m.var_i, m.cov_si, m.n_pixels])


def write_nrf_reports_csv(path, reports: list[NrfReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_REPORT_FIELDS)
        for r in reports:
            w.writerow([r.shot_id, r.bin, r.sigma, r.fano_s, r.fano_i,
                        r.mean_photons, int(r.flat_field_applied),
                        "" if r.sigma_bg_corrected is None else r.sigma_bg_corrected,
                        "" if r.fano_bg_corrected is None else r.fano_bg_corrected])
