"""Center-of-symmetry search by scanning the idler region position.

The idler rectangle is translated over an integer grid of fine-pixel shifts;
at each shift the NRF is averaged over the stack at a small scan binning.
Genuine twin-beam correlation produces a dip in the sigma surface at the
shift that restores the pairing; the symmetry center is the midpoint between
paired pixels, i.e. the nominal center plus half the dip shift.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, NoCorrelationError
from .estimators import _region_block
from .frames import Frame
from .regions import RegionPair, pair_index


@dataclass
class CsScanResult:
    shifts: np.ndarray       # (K, 2) int fine-pixel displacements (dy, dx)
    sigmas: np.ndarray       # (K,) stack-averaged NRF per shift
    best_shift: tuple[int, int]
    center_estimate: tuple[float, float]
    scan_bin: int
    boundary_warning: bool = False

    def sigma_at(self, dy: int, dx: int) -> float:
        hit = np.flatnonzero((self.shifts[:, 0] == dy) & (self.shifts[:, 1] == dx))
        if hit.size == 0:
            raise KeyError(f"shift ({dy}, {dx}) not scanned")
        return float(self.sigmas[hit[0]])


def cs_scan(frames: list[Frame], regions: RegionPair, window: int,
            scan_bin: int = 2, dip_tolerance: float = 0.1) -> CsScanResult:
    """Exhaustive (2w+1)^2 scan of idler-region shifts, sigma per shift.

    Shifts move the idler rectangle by whole fine pixels; each evaluation
    re-bins the shifted content at ``scan_bin`` (kept finer than the analysis
    binning; raw sigma, no flat field, since only the dip location matters).
    Equal minima are broken toward the lexicographically smallest shift. A
    surface that never dips below 1 - dip_tolerance means the arms carry no
    usable correlation.
    """
    if window < 1:
        raise GeometryError(f"search window must be >= 1, got {window}")
    gh, gw = frames[0].shape
    a_i = regions.a_i
    if (a_i.top - window < 0 or a_i.left - window < 0
            or a_i.bottom + window > gh * frames[0].bin
            or a_i.right + window > gw * frames[0].bin):
        raise GeometryError(
            f"window {window} pushes the idler region outside the frame")

    offsets = np.arange(-window, window + 1)
    # Signal blocks are shift-independent; bin them once per frame.
    s_blocks = [np.asarray(_region_block(f, regions.a_s, scan_bin), dtype=float)
                for f in frames]
    shifts = []
    sigmas = []
    for dy in offsets:
        for dx in offsets:
            trial = regions.with_idler_shift(int(dy), int(dx))
            pidx = pair_index(trial, scan_bin)
            if not pidx.valid.all():
                raise GeometryError(
                    f"pairing incomplete at shift ({dy}, {dx}); enlarge the regions")
            acc = 0.0
            for frame, s in zip(frames, s_blocks):
                i_local = np.asarray(_region_block(frame, trial.a_i, scan_bin), dtype=float)
                i = i_local[pidx.rows, pidx.cols]
                ms = s.mean()
                mi = i.mean()
                num = ((s - ms) ** 2).mean() + ((i - mi) ** 2).mean() \
                    - 2.0 * ((s - ms) * (i - mi)).mean()
                acc += num / (ms + mi)
            shifts.append((int(dy), int(dx)))
            sigmas.append(acc / len(frames))
    shifts = np.array(shifts, dtype=int)
    sigmas = np.array(sigmas)

    smin = sigmas.min()
    if smin > 1.0 - dip_tolerance:
        raise NoCorrelationError(
            f"no dip below {1.0 - dip_tolerance:.2f}: min sigma {smin:.3f}")
    # Lexicographic tie-break over exact minima keeps the scan deterministic.
    at_min = np.flatnonzero(sigmas == smin)
    order = np.lexsort((shifts[at_min, 1], shifts[at_min, 0]))
    best = (int(shifts[at_min[order[0]], 0]), int(shifts[at_min[order[0]], 1]))

    cy, cx = regions.center
    center = (float(cy + best[0] / 2.0), float(cx + best[1] / 2.0))
    return CsScanResult(shifts=shifts, sigmas=sigmas, best_shift=best,
                        center_estimate=center, scan_bin=scan_bin)


def refine_center(scan: CsScanResult, regions: RegionPair) -> tuple[float, float]:
    """Sub-pixel center from 1D parabolic interpolation through the dip.

    Fits a parabola per axis through the dip and its two axial neighbours and
    shifts the center estimate by half the vertex offset. A dip on the window
    boundary cannot be interpolated: the integer estimate is returned and the
    scan is flagged.
    """
    by, bx = scan.best_shift
    lo_y, hi_y = scan.shifts[:, 0].min(), scan.shifts[:, 0].max()
    lo_x, hi_x = scan.shifts[:, 1].min(), scan.shifts[:, 1].max()
    if by in (lo_y, hi_y) or bx in (lo_x, hi_x):
        scan.boundary_warning = True
        return scan.center_estimate

    def vertex(sm: float, s0: float, sp: float) -> float:
        curv = sm - 2.0 * s0 + sp
        if curv <= 0:
            return 0.0
        return 0.5 * (sm - sp) / curv

    dy = vertex(scan.sigma_at(by - 1, bx), scan.sigma_at(by, bx), scan.sigma_at(by + 1, bx))
    dx = vertex(scan.sigma_at(by, bx - 1), scan.sigma_at(by, bx), scan.sigma_at(by, bx + 1))
    cy, cx = regions.center
    return (float(cy + (by + dy) / 2.0), float(cx + (bx + dx) / 2.0))


def write_scan_csv(path, scan: CsScanResult) -> None:
    """Sigma surface as (shift_y, shift_x, sigma) rows for plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shift_y", "shift_x", "sigma"])
        for (dy, dx), s in zip(scan.shifts, scan.sigmas):
            w.writerow([dy, dx, s])
