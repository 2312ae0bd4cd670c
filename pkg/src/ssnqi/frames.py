"""Frame container and binning.

A Frame is one acquisition: a 2D grid of photon counts covering the whole
simulated detector (both regions plus any margin). ``bin`` records how many
fine pixels per side one grid element aggregates; raw fine-grid frames have
bin=1, hardware-binned readouts carry the readout superpixel size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .regions import Rect


@dataclass
class Frame:
    counts: np.ndarray
    bin: int = 1
    shot_id: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2:
            raise GeometryError(f"frame counts must be 2D, got shape {self.counts.shape}")
        if self.bin < 1:
            raise GeometryError(f"bin factor must be >= 1, got {self.bin}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def region(self, rect: Rect) -> np.ndarray:
        """View of a fine-coordinate rectangle in this frame's grid.

        For a binned frame the rectangle must align with the superpixel grid.
        """
        b = self.bin
        for name, value in (("top", rect.top), ("left", rect.left),
                            ("height", rect.height), ("width", rect.width)):
            if value % b:
                raise GeometryError(
                    f"region {name}={value} not aligned to frame binning {b}")
        r = slice(rect.top // b, (rect.top + rect.height) // b)
        c = slice(rect.left // b, (rect.left + rect.width) // b)
        view = self.counts[r, c]
        if view.shape != (rect.height // b, rect.width // b):
            raise GeometryError(f"region {rect} exceeds frame of shape {self.shape} at bin {b}")
        return view


def bin_array(a: np.ndarray, n: int) -> np.ndarray:
    """Sum n x n blocks of a 2D array. Exact integer arithmetic for integer input."""
    h, w = a.shape
    if h % n:
        raise GeometryError(f"binning {n} does not divide frame height {h}")
    if w % n:
        raise GeometryError(f"binning {n} does not divide frame width {w}")
    return a.reshape(h // n, n, w // n, n).sum(axis=(1, 3))


def bin_frame(frame: Frame, n: int) -> Frame:
    """Group the frame grid into n x n superpixels, each holding the exact block sum."""
    if n == 1:
        return Frame(frame.counts.copy(), bin=frame.bin, shot_id=frame.shot_id)
    return Frame(bin_array(frame.counts, n), bin=n * frame.bin, shot_id=frame.shot_id)
