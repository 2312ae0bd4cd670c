"""Stochastic twin-beam frame generator.

Model
-----
The source emits photon pairs from a grid of coherence cells tiling the
signal region. Per shot, one cell emits ``n`` pairs where ``n`` is the sum of
``m_temp`` independent Bose-Einstein (geometric) mode occupations with mean
``gain * mu`` each, i.e. negative binomial with mean ``gain * mu * m_temp``
and variance ``mean * (1 + gain * mu)``. Every pair puts one candidate photon
at the cell's center pixel in the signal region and one at the point
reflection of that pixel about the symmetry center, displaced by an isotropic
Gaussian of std ``coherence_jitter`` (fine pixels), in the idler region.
Candidates survive detection independently: with probability
``eta_s * (1 - alpha)`` on the signal side and ``eta_i`` at the landing pixel
on the idler side; photons jittered off the idler region are dropped and
counted. Poissonian straylight is added per fine pixel of the whole grid,
then the grid is read out at ``hardware_bin`` (block sums) with one Gaussian
read-noise draw per readout pixel, rounded and clamped at zero.

Per-cell survival counts are drawn as binomials (and, under jitter, photon
displacements individually), which is distributionally identical to looping
over photons; the literal per-photon loop lives in the test suite as an
independent oracle.

Determinism: every frame derives its generator from (seed, shot_id), so
stacks are bit-reproducible and frame generation parallelizes without
changing the output. Photon draws precede readout draws, so stacks differing
only in ``hardware_bin`` share the photon field exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, GeometryError
from .frames import Frame, bin_array
from .maps import uniform_map
from .regions import Rect, RegionPair, pair_index, standard_pair


@dataclass(frozen=True)
class SourceParams:
    """Twin-beam source on a fine pixel grid.

    ``cells_x * cells_y`` coherence cells exactly tile the signal region;
    ``mu`` is the mean photon-pair number per mode, ``m_temp`` the temporal
    modes per cell per shot. ``gain_jitter`` is the relative std of the
    per-shot pump fluctuation; ``coherence_jitter`` the std (fine pixels) of
    the idler photon's displacement from the exact symmetric point.
    ``center`` is the true symmetry center in fine-pixel (row, col)
    coordinates, fractional values allowed.
    """

    grid_height: int
    grid_width: int
    cells_y: int
    cells_x: int
    mu: float
    m_temp: int
    gain_jitter: float = 0.1
    coherence_jitter: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.grid_height <= 0 or self.grid_width <= 0:
            raise ConfigError("grid dimensions must be positive")
        if self.cells_y <= 0 or self.cells_x <= 0:
            raise ConfigError("cell counts must be positive")
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")
        if self.m_temp < 1:
            raise ConfigError(f"m_temp must be >= 1, got {self.m_temp}")
        if self.gain_jitter < 0 or self.coherence_jitter < 0:
            raise ConfigError("jitter parameters must be >= 0")


@dataclass(frozen=True)
class DetectionParams:
    """Detection chain: efficiency maps, straylight, and CCD readout.

    ``eta_s`` / ``eta_i`` are region-local maps in [0, 1], congruent to the
    signal / idler rectangles. ``straylight_mean`` is the Poisson background
    mean per fine pixel; ``readout_sigma`` the read-noise std per readout
    pixel. ``hardware_bin`` sets the readout superpixel side: photons are
    summed into hardware_bin^2 blocks before the single read-noise draw per
    superpixel, mirroring on-chip binning.
    """

    eta_s: np.ndarray
    eta_i: np.ndarray
    straylight_mean: float = 0.0
    readout_sigma: float = 0.0
    hardware_bin: int = 1

    def __post_init__(self):
        object.__setattr__(self, "eta_s", np.asarray(self.eta_s, dtype=float))
        object.__setattr__(self, "eta_i", np.asarray(self.eta_i, dtype=float))
        for name, m in (("eta_s", self.eta_s), ("eta_i", self.eta_i)):
            if m.ndim != 2:
                raise ConfigError(f"{name} must be a 2D map")
            if m.min() < 0.0 or m.max() > 1.0:
                raise ConfigError(f"{name} values outside [0, 1]")
        if self.straylight_mean < 0:
            raise ConfigError("straylight_mean must be >= 0")
        if self.readout_sigma < 0:
            raise ConfigError("readout_sigma must be >= 0")
        if self.hardware_bin < 1:
            raise ConfigError("hardware_bin must be >= 1")


@dataclass(frozen=True)
class ObjectMask:
    """Absorption map in [0, 1] per fine pixel of the signal region."""

    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        if self.alpha.ndim != 2:
            raise ConfigError("alpha must be a 2D map")
        if self.alpha.min() < 0.0 or self.alpha.max() > 1.0:
            raise ConfigError("alpha values outside [0, 1]")


@dataclass(frozen=True)
class SceneConfig:
    source: SourceParams
    detection: DetectionParams
    regions: RegionPair
    object: ObjectMask | None = None
    seed: int = 0

    def __post_init__(self):
        src, det, reg = self.source, self.detection, self.regions
        grid = Rect(0, 0, src.grid_height, src.grid_width)
        if not (grid.contains(reg.a_s) and grid.contains(reg.a_i)):
            raise GeometryError("regions do not fit inside the grid")
        rshape = (reg.a_s.height, reg.a_s.width)
        if det.eta_s.shape != rshape:
            raise GeometryError(
                f"eta_s shape {det.eta_s.shape} not congruent to signal region {rshape}")
        if det.eta_i.shape != rshape:
            raise GeometryError(
                f"eta_i shape {det.eta_i.shape} not congruent to idler region {rshape}")
        if self.object is not None and self.object.alpha.shape != rshape:
            raise GeometryError(
                f"object mask shape {self.object.alpha.shape} not congruent to "
                f"signal region {rshape}")
        if reg.a_s.height % src.cells_y or reg.a_s.width % src.cells_x:
            raise ConfigError(
                f"{src.cells_y}x{src.cells_x} cells do not tile the "
                f"{reg.a_s.height}x{reg.a_s.width} signal region")
        if src.grid_height % det.hardware_bin or src.grid_width % det.hardware_bin:
            raise ConfigError(
                f"hardware binning {det.hardware_bin} does not divide the grid "
                f"{src.grid_height}x{src.grid_width}")
        if not 0 <= self.seed < 2 ** 63:
            raise ConfigError(f"seed must be a non-negative 63-bit integer, got {self.seed}")

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.regions.a_s.height // self.source.cells_y,
                self.regions.a_s.width // self.source.cells_x)

    @property
    def n_cells(self) -> int:
        return self.source.cells_y * self.source.cells_x

    def cells_per_superpixel(self, n: int) -> float:
        ch, cw = self.cell_shape
        return (n * n) / (ch * cw)

    def modes_per_superpixel(self, n: int) -> float:
        """Total (temporal x spatial) modes collected by one n x n superpixel."""
        return self.source.m_temp * self.cells_per_superpixel(n)

    def incident_per_superpixel(self, n: int) -> float:
        """Mean photons impinging one n x n superpixel per shot, before losses."""
        return self.source.mu * self.modes_per_superpixel(n)


@dataclass
class FrameTruth:
    gain: float
    dropped_photons: int
    clamped_pixels: int
    emitted_pairs: int


@dataclass
class StackTruth:
    """Ground truth persisted alongside a generated stack."""

    config: SceneConfig
    with_object: bool
    gains: np.ndarray
    dropped_photons: np.ndarray
    clamped_pixels: np.ndarray
    emitted_pairs: np.ndarray


def sample_mode_pair_counts(mu, m_temp, gain, rng, size=None):
    """Photon-pair count emitted by one coherence cell in one shot.

    Sum of ``m_temp`` independent geometric mode occupations of mean
    ``gain * mu``: negative binomial with mean ``gain * mu * m_temp`` and
    variance ``mean * (1 + gain * mu)``.
    """
    mean_occ = gain * mu
    p = 1.0 / (1.0 + mean_occ)
    return rng.negative_binomial(m_temp, p, size=size)


class _SceneGeometry:
    """Precomputed cell/pixel lookup tables for one SceneConfig."""

    def __init__(self, config: SceneConfig):
        src = config.source
        reg = config.regions
        ch, cw = config.cell_shape
        iy = np.arange(src.cells_y) * ch + (ch - 1) // 2
        ix = np.arange(src.cells_x) * cw + (cw - 1) // 2
        # Global fine-grid pixel of every cell center (signal side).
        self.cell_y = (reg.a_s.top + iy)[:, None].repeat(src.cells_x, 1).ravel()
        self.cell_x = (reg.a_s.left + ix)[None, :].repeat(src.cells_y, 0).ravel()
        cy, cx = src.center
        self.mirror_y = 2.0 * cy - self.cell_y
        self.mirror_x = 2.0 * cx - self.cell_x
        # Signal survival probability per cell, object in or out.
        sl_y = self.cell_y - reg.a_s.top
        sl_x = self.cell_x - reg.a_s.left
        eta_s_cell = config.detection.eta_s[sl_y, sl_x]
        alpha_cell = (config.object.alpha[sl_y, sl_x]
                      if config.object is not None else np.zeros_like(eta_s_cell))
        self.p_signal_blank = eta_s_cell
        self.p_signal_object = eta_s_cell * (1.0 - alpha_cell)
        # Zero-jitter idler destinations: nearest pixel to the mirror point.
        dy = np.floor(self.mirror_y + 0.5).astype(np.int64)
        dx = np.floor(self.mirror_x + 0.5).astype(np.int64)
        inside = ((dy >= reg.a_i.top) & (dy < reg.a_i.bottom)
                  & (dx >= reg.a_i.left) & (dx < reg.a_i.right))
        self.idler_dest_y = np.where(inside, dy, reg.a_i.top)
        self.idler_dest_x = np.where(inside, dx, reg.a_i.left)
        self.idler_inside = inside
        p_i = config.detection.eta_i[self.idler_dest_y - reg.a_i.top,
                                     self.idler_dest_x - reg.a_i.left]
        self.p_idler_static = np.where(inside, p_i, 0.0)


def _generate_on_geometry(config: SceneConfig, geom: _SceneGeometry,
                          with_object: bool, rng: np.random.Generator,
                          shot_id: int) -> tuple[Frame, FrameTruth]:
    src, det, reg = config.source, config.detection, config.regions
    gh, gw = src.grid_height, src.grid_width
    grid = np.zeros((gh, gw), dtype=np.int64)

    gain = 1.0
    if src.gain_jitter > 0:
        gain = max(0.0, 1.0 + rng.normal(0.0, src.gain_jitter))

    pairs = sample_mode_pair_counts(src.mu, src.m_temp, gain, rng, size=config.n_cells)

    # Signal arm: all of a cell's photons share its center pixel.
    p_sig = geom.p_signal_object if with_object else geom.p_signal_blank
    kept_s = rng.binomial(pairs, p_sig)
    np.add.at(grid, (geom.cell_y, geom.cell_x), kept_s)

    dropped = 0
    if src.coherence_jitter == 0.0:
        kept_i = rng.binomial(pairs, geom.p_idler_static)
        np.add.at(grid, (geom.idler_dest_y, geom.idler_dest_x), kept_i)
        dropped = int(pairs[~geom.idler_inside].sum())
    else:
        total = int(pairs.sum())
        if total:
            py = np.repeat(geom.mirror_y, pairs)
            px = np.repeat(geom.mirror_x, pairs)
            py = np.floor(py + rng.normal(0.0, src.coherence_jitter, total) + 0.5)
            px = np.floor(px + rng.normal(0.0, src.coherence_jitter, total) + 0.5)
            u = rng.random(total)
            iy = py.astype(np.int64)
            ix = px.astype(np.int64)
            inside = ((iy >= reg.a_i.top) & (iy < reg.a_i.bottom)
                      & (ix >= reg.a_i.left) & (ix < reg.a_i.right))
            dropped = total - int(inside.sum())
            iy, ix, u = iy[inside], ix[inside], u[inside]
            kept = u < det.eta_i[iy - reg.a_i.top, ix - reg.a_i.left]
            flat = (iy[kept] * gw + ix[kept])
            grid += np.bincount(flat, minlength=gh * gw).reshape(gh, gw)

    if det.straylight_mean > 0:
        grid += rng.poisson(det.straylight_mean, size=(gh, gw))

    hb = det.hardware_bin
    if hb > 1:
        grid = bin_array(grid, hb)

    clamped = 0
    if det.readout_sigma > 0:
        noisy = np.rint(grid + rng.normal(0.0, det.readout_sigma, size=grid.shape))
        clamped = int((noisy < 0).sum())
        grid = np.maximum(noisy, 0.0).astype(np.int64)

    truth = FrameTruth(gain=gain, dropped_photons=dropped,
                       clamped_pixels=clamped, emitted_pairs=int(pairs.sum()))
    return Frame(grid.astype(np.uint32), bin=hb, shot_id=shot_id), truth


def frame_rng(seed: int, shot_id: int) -> np.random.Generator:
    """Independent deterministic stream for one shot of one stack."""
    return np.random.default_rng(np.random.SeedSequence([seed, shot_id]))


def generate_frame(config: SceneConfig, with_object: bool,
                   rng: np.random.Generator, shot_id: int = 0) -> tuple[Frame, FrameTruth]:
    """Generate a single frame covering both regions; see module docstring."""
    geom = _SceneGeometry(config)
    return _generate_on_geometry(config, geom, with_object, rng, shot_id)


def generate_stack(config: SceneConfig, n_frames: int, with_object: bool = False,
                   threads: int = 1) -> tuple[list[Frame], StackTruth]:
    """Generate n_frames independent frames plus the ground-truth record.

    Each frame owns the stream derived from (config.seed, shot_id); results
    are merged by shot_id, so any thread count yields identical stacks.
    """
    if n_frames < 1:
        raise ConfigError(f"n_frames must be >= 1, got {n_frames}")
    geom = _SceneGeometry(config)

    def one(shot: int) -> tuple[Frame, FrameTruth]:
        return _generate_on_geometry(config, geom, with_object,
                                     frame_rng(config.seed, shot), shot)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_frames)))
    else:
        results = [one(shot) for shot in range(n_frames)]

    frames = [f for f, _ in results]
    truths = [t for _, t in results]
    truth = StackTruth(
        config=config,
        with_object=with_object,
        gains=np.array([t.gain for t in truths]),
        dropped_photons=np.array([t.dropped_photons for t in truths]),
        clamped_pixels=np.array([t.clamped_pixels for t in truths]),
        emitted_pairs=np.array([t.emitted_pairs for t in truths]),
    )
    return frames, truth


def correlated_mode_fraction(config: SceneConfig, n: int,
                             analysis: RegionPair | None = None) -> float:
    """Geometric model of the correlated-mode fraction at binning n.

    For every coherence cell inside the (possibly inset) analysis signal
    region, integrate the Gaussian landing distribution of its idler photons
    over the superpixel paired with the cell's signal superpixel, pairing
    taken at the analysis center. The average over cells is the fraction of
    modes whose partners arrive where the subtraction expects them; feed
    `(p, 1 - p)` (any common scale) to ``predicted_nrf_uncorrelated``.
    """
    if analysis is None:
        analysis = config.regions
    geom = _SceneGeometry(config)
    a_s, a_i = analysis.a_s, analysis.a_i
    inside = ((geom.cell_y >= a_s.top) & (geom.cell_y < a_s.bottom)
              & (geom.cell_x >= a_s.left) & (geom.cell_x < a_s.right))
    if not inside.any():
        raise GeometryError("no coherence cells inside the analysis region")
    cy = geom.cell_y[inside]
    cx = geom.cell_x[inside]
    my = geom.mirror_y[inside]
    mx = geom.mirror_x[inside]
    pidx = pair_index(analysis, n)
    bi = (cy - a_s.top) // n
    bj = (cx - a_s.left) // n
    valid = pidx.valid[bi, bj]
    pr = pidx.rows[bi, bj]
    pc = pidx.cols[bi, bj]
    # Continuous landing interval of the paired superpixel: pixel r collects
    # positions [r - 0.5, r + 0.5).
    y_lo = a_i.top + pr * n - 0.5
    y_hi = y_lo + n
    x_lo = a_i.left + pc * n - 0.5
    x_hi = x_lo + n
    sig = config.source.coherence_jitter
    if sig == 0.0:
        p = ((my >= y_lo) & (my < y_hi) & (mx >= x_lo) & (mx < x_hi)).astype(float)
    else:
        p = ((ndtr((y_hi - my) / sig) - ndtr((y_lo - my) / sig))
             * (ndtr((x_hi - mx) / sig) - ndtr((x_lo - mx) / sig)))
    p = np.where(valid, p, 0.0)
    return float(p.mean())


def standard_scene(height: int, width: int, cells_y: int, cells_x: int,
                   mu: float, m_temp: int, eta_s, eta_i,
                   margin: int = 0,
                   straylight_mean: float = 0.0, readout_sigma: float = 0.0,
                   hardware_bin: int = 1,
                   gain_jitter: float = 0.0, coherence_jitter: float = 0.0,
                   center_offset: tuple[float, float] = (0.0, 0.0),
                   object_alpha: np.ndarray | None = None,
                   dci_shift: tuple[int, int] = (0, 1),
                   seed: int = 0) -> SceneConfig:
    """Convenience builder: canonical mirrored layout with the given physics.

    ``eta_s`` / ``eta_i`` may be scalars (uniform maps) or region-shaped
    arrays. ``center_offset`` displaces the true symmetry center from the
    canonical grid midpoint; the nominal RegionPair keeps the canonical
    center, which is what the alignment scan is meant to recover.
    """
    regions, (gh, gw) = standard_pair(height, width, margin, dci_shift)
    shape = (height, width)
    if np.isscalar(eta_s):
        eta_s = uniform_map(shape, eta_s)
    if np.isscalar(eta_i):
        eta_i = uniform_map(shape, eta_i)
    ccy, ccx = regions.center
    source = SourceParams(
        grid_height=gh, grid_width=gw, cells_y=cells_y, cells_x=cells_x,
        mu=mu, m_temp=m_temp, gain_jitter=gain_jitter,
        coherence_jitter=coherence_jitter,
        center=(ccy + center_offset[0], ccx + center_offset[1]))
    detection = DetectionParams(
        eta_s=eta_s, eta_i=eta_i, straylight_mean=straylight_mean,
        readout_sigma=readout_sigma, hardware_bin=hardware_bin)
    obj = ObjectMask(object_alpha) if object_alpha is not None else None
    return SceneConfig(source=source, detection=detection, regions=regions,
                       object=obj, seed=seed)
