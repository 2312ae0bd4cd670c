"""Region-pair geometry: two congruent rectangles related by point symmetry.

All coordinates are fine-grid pixels in (row, col) order. The symmetry
center may be fractional; a center component of the form k + 0.5 sits on a
pixel boundary, which is the natural choice for even-sized grids because the
point reflection then maps the pixel lattice onto itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, half-open: rows [top, top+height), cols [left, left+width)."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise GeometryError(f"rectangle must have positive size, got {self.height}x{self.width}")

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    def shifted(self, dy: int, dx: int) -> "Rect":
        return Rect(self.top + dy, self.left + dx, self.height, self.width)

    def contains(self, other: "Rect") -> bool:
        return (self.top <= other.top and self.left <= other.left
                and self.bottom >= other.bottom and self.right >= other.right)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.bottom), slice(self.left, self.right)


@dataclass(frozen=True)
class RegionPair:
    """Signal region, idler region, their symmetry center and the DCI displacement.

    The idler rectangle must be the point reflection of the signal rectangle
    about ``center`` (pixel p reflects to 2*center - p). ``dci_shift`` is the
    deliberate extra displacement, in superpixels of the analysis binning,
    used to build the classically-correlated (DCI) image; it plays no role in
    the quantum-correlated pairing.
    """

    a_s: Rect
    a_i: Rect
    center: tuple[float, float]
    dci_shift: tuple[int, int] = (0, 1)

    def __post_init__(self):
        if (self.a_s.height, self.a_s.width) != (self.a_i.height, self.a_i.width):
            raise GeometryError(
                f"regions not congruent: {self.a_s.height}x{self.a_s.width} vs "
                f"{self.a_i.height}x{self.a_i.width}")
        cy, cx = self.center
        # Reflection of a_s's pixel-index span must coincide with a_i's span.
        # A fractional center moves the reflected span off-lattice by less
        # than one pixel, so compare with that slack.
        ref_top = 2.0 * cy - (self.a_s.bottom - 1)
        ref_left = 2.0 * cx - (self.a_s.right - 1)
        if abs(ref_top - self.a_i.top) >= 1.0 or abs(ref_left - self.a_i.left) >= 1.0:
            raise GeometryError(
                f"idler region {self.a_i} is not the reflection of {self.a_s} "
                f"about center {self.center}")

    def with_center(self, center: tuple[float, float]) -> "RegionPair":
        return RegionPair(self.a_s, self.a_i, center, self.dci_shift)

    def with_idler_shift(self, dy: int, dx: int) -> "RegionPair":
        """Translate the idler rectangle and move the center by half as much,
        keeping the pair a valid point reflection."""
        cy, cx = self.center
        return RegionPair(self.a_s, self.a_i.shifted(dy, dx),
                          (cy + dy / 2.0, cx + dx / 2.0), self.dci_shift)


def reflect_points(center: tuple[float, float], ys, xs):
    """Point reflection of (ys, xs) about the center; returns float arrays."""
    cy, cx = center
    return 2.0 * cy - np.asarray(ys, dtype=float), 2.0 * cx - np.asarray(xs, dtype=float)


@dataclass(frozen=True)
class PairIndex:
    """Signal-superpixel -> idler-superpixel pairing at one binning.

    ``rows``/``cols`` give, for every signal-local superpixel, the idler-local
    superpixel that contains the reflection of its center; ``valid`` is False
    where the reflected point falls outside the idler region.
    """

    rows: np.ndarray
    cols: np.ndarray
    valid: np.ndarray
    bin: int = field(default=1)


def pair_index(regions: RegionPair, n: int) -> PairIndex:
    """Build the pairing map at binning n (n fine pixels per superpixel side).

    Pixel k of the binned signal region pairs with the binned idler superpixel
    containing the point reflection of k's center, per the fractional-center
    convention (no interpolation).
    """
    h, w = regions.a_s.height, regions.a_s.width
    if h % n or w % n:
        raise GeometryError(f"binning {n} does not divide region size {h}x{w}")
    bh, bw = h // n, w // n
    # Fine-grid centers of the signal superpixels.
    uy = regions.a_s.top + np.arange(bh) * n + (n - 1) / 2.0
    ux = regions.a_s.left + np.arange(bw) * n + (n - 1) / 2.0
    ry, rx = reflect_points(regions.center, uy, ux)
    pr = np.floor((ry - regions.a_i.top) / n).astype(np.int64)
    pc = np.floor((rx - regions.a_i.left) / n).astype(np.int64)
    vr = (pr >= 0) & (pr < bh)
    vc = (pc >= 0) & (pc < bw)
    rows = np.broadcast_to(pr[:, None], (bh, bw)).copy()
    cols = np.broadcast_to(pc[None, :], (bh, bw)).copy()
    valid = np.broadcast_to(vr[:, None], (bh, bw)) & np.broadcast_to(vc[None, :], (bh, bw))
    rows[~valid] = 0
    cols[~valid] = 0
    return PairIndex(rows=rows, cols=cols, valid=valid.copy(), bin=n)


def inset_pair(regions: RegionPair, inset: int) -> RegionPair:
    """Congruent pair inset by ``inset`` fine pixels on every side.

    The inset preserves the point-reflection relation (the center is
    unchanged), so analyses can stay clear of illumination edges, jitter
    spill, or the DCI displacement band.
    """
    if 2 * inset >= min(regions.a_s.height, regions.a_s.width):
        raise GeometryError(f"inset {inset} consumes the whole region")

    def shrink(r: Rect) -> Rect:
        return Rect(r.top + inset, r.left + inset,
                    r.height - 2 * inset, r.width - 2 * inset)

    return RegionPair(shrink(regions.a_s), shrink(regions.a_i),
                      regions.center, regions.dci_shift)


def standard_pair(height: int, width: int, margin: int = 0,
                  dci_shift: tuple[int, int] = (0, 1)) -> tuple[RegionPair, tuple[int, int]]:
    """Canonical two-region layout and the grid size that holds it.

    The signal region sits at (margin, margin); the idler region is its exact
    mirror on the right half. The returned grid is (height + 2*margin,
    2*width + 4*margin) and the symmetry center lies on the grid midpoint,
    which is half-integer for even sizes so every binning that divides the
    region size pairs superpixels exactly.
    """
    gh = height + 2 * margin
    gw = 2 * width + 4 * margin
    a_s = Rect(margin, margin, height, width)
    a_i = Rect(margin, gw - margin - width, height, width)
    center = ((gh - 1) / 2.0, (gw - 1) / 2.0)
    return RegionPair(a_s, a_i, center, dci_shift), (gh, gw)
