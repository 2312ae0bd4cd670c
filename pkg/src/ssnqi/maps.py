"""Generators for detection-efficiency maps and absorption masks.

Maps are region-local 2D float arrays, one value per fine pixel. Efficiency
values must stay in [0, 1]; gradient magnitudes are given as the full swing
in absolute efficiency units (a "3% gradient" around 0.7 spans 0.685..0.715).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def uniform_map(shape: tuple[int, int], value: float) -> np.ndarray:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"efficiency {value} outside [0, 1]")
    return np.full(shape, float(value))


def linear_gradient_map(shape: tuple[int, int], base: float, swing: float,
                        axis: int = 1, reverse: bool = False) -> np.ndarray:
    """Linear ramp base - swing/2 .. base + swing/2 along the given axis.

    A uniformly sampled ramp of full swing w has spatial variance w^2 / 12.
    """
    h, w = shape
    npix = shape[axis]
    ramp = (np.arange(npix) + 0.5) / npix - 0.5
    if reverse:
        ramp = -ramp
    vals = base + swing * ramp
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise ConfigError(
            f"gradient {base}+-{swing / 2} leaves [0, 1]: range [{vals.min()}, {vals.max()}]")
    out = np.empty(shape)
    if axis == 1:
        out[:] = vals[None, :]
    elif axis == 0:
        out[:] = vals[:, None]
    else:
        raise ConfigError(f"axis must be 0 or 1, got {axis}")
    return out


def radial_map(shape: tuple[int, int], center_value: float, edge_drop: float) -> np.ndarray:
    """Smooth radial roll-off: center_value at the middle, center_value - edge_drop
    at the farthest corner, quadratic in radius (models filter transmission roll-off)."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    vals = center_value - edge_drop * r2 / r2.max()
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise ConfigError(f"radial profile leaves [0, 1]: range [{vals.min()}, {vals.max()}]")
    return vals


def square_mask(shape: tuple[int, int], alpha: float, size: int,
                offset: tuple[int, int] | None = None) -> np.ndarray:
    """Uniform absorbing square of the given side length, centered by default."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"absorption {alpha} outside [0, 1]")
    h, w = shape
    if size > h or size > w:
        raise ConfigError(f"object size {size} exceeds region {h}x{w}")
    if offset is None:
        offset = ((h - size) // 2, (w - size) // 2)
    out = np.zeros(shape)
    out[offset[0]:offset[0] + size, offset[1]:offset[1] + size] = alpha
    return out


def pi_mask(shape: tuple[int, int], alpha: float, size: int | None = None) -> np.ndarray:
    """Blocky lowercase-pi glyph: a horizontal bar over two vertical legs.

    ``size`` is the glyph's bounding-square side in fine pixels (default: 2/3
    of the smaller region side), centered in the region.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"absorption {alpha} outside [0, 1]")
    h, w = shape
    if size is None:
        size = (min(h, w) * 2) // 3
    if size < 6:
        raise ConfigError(f"pi glyph needs at least 6 pixels, got {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    bar = max(size // 6, 1)
    out = np.zeros(shape)
    # Horizontal bar, slightly wider than the legs' span.
    out[top:top + bar, left:left + size] = alpha
    # Two legs, inset from the bar ends.
    leg_x1 = left + size // 6
    leg_x2 = left + size - size // 6 - bar
    out[top:top + size, leg_x1:leg_x1 + bar] = alpha
    out[top:top + size, leg_x2:leg_x2 + bar] = alpha
    return out


def mask_support(alpha: np.ndarray) -> np.ndarray:
    """Boolean support of an absorption mask."""
    return np.asarray(alpha) > 0.0
