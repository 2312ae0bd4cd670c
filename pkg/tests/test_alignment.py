"""Center-of-symmetry scan tests: dip recovery, refinement, guards."""

import numpy as np
import pytest

from ssnqi import (Frame, GeometryError, NoCorrelationError, cs_scan,
                   generate_stack, refine_center, standard_scene)
from ssnqi.alignment import CsScanResult, write_scan_csv


def _planted_stack(shift, n_frames=40, jitter=0.0, seed=40, cells=16,
                   m_temp=400, mu=0.1):
    """Frames with canonical geometry; the returned RegionPair mis-declares
    the idler rectangle by -shift, so the scan must recover +shift."""
    cfg = standard_scene(96, 96, cells, cells, mu=mu, m_temp=m_temp,
                         eta_s=0.7, eta_i=0.7, margin=16, gain_jitter=0.0,
                         coherence_jitter=jitter, seed=seed)
    frames, _ = generate_stack(cfg, n_frames)
    return cfg, frames, cfg.regions.with_idler_shift(-shift[0], -shift[1])


class TestCsScan:
    def test_planted_offset_recovered_exactly(self):
        cfg, frames, declared = _planted_stack((3, 2))
        scan = cs_scan(frames, declared, window=5, scan_bin=1)
        assert scan.best_shift == (3, 2)
        dip = scan.sigma_at(3, 2)
        for dy, dx in ((2, 2), (4, 2), (3, 1), (3, 3)):
            assert dip < scan.sigma_at(dy, dx)
        # Recovered center is the true (canonical) one.
        assert scan.center_estimate == pytest.approx(cfg.source.center)

    def test_zero_offset_gives_region_midpoint(self):
        cfg, frames, declared = _planted_stack((0, 0))
        scan = cs_scan(frames, declared, window=3, scan_bin=1)
        assert scan.best_shift == (0, 0)
        assert scan.center_estimate == pytest.approx(cfg.regions.center)

    def test_uncorrelated_arms_flagged(self):
        cfg = standard_scene(96, 96, 16, 16, mu=0.0, m_temp=1,
                             eta_s=1.0, eta_i=1.0, margin=16,
                             straylight_mean=5.0, seed=41)
        frames, _ = generate_stack(cfg, 40)
        with pytest.raises(NoCorrelationError):
            cs_scan(frames, cfg.regions, window=2, scan_bin=1)

    def test_window_out_of_bounds(self):
        cfg, frames, declared = _planted_stack((0, 0))
        with pytest.raises(GeometryError):
            cs_scan(frames, declared, window=20, scan_bin=1)

    def test_translation_equivariance(self):
        # Rolling the frame contents by v moves the pattern's symmetry
        # center by v, hence the dip by 2v.
        cfg, frames, declared = _planted_stack((1, 1), n_frames=30, seed=42)
        scan = cs_scan(frames, declared, window=4, scan_bin=1)
        v = (1, 1)
        rolled = [Frame(np.roll(np.roll(f.counts, v[0], axis=0), v[1], axis=1),
                        bin=f.bin, shot_id=f.shot_id) for f in frames]
        scan2 = cs_scan(rolled, declared, window=4, scan_bin=1)
        assert scan2.best_shift == (scan.best_shift[0] + 2 * v[0],
                                    scan.best_shift[1] + 2 * v[1])

    def test_scan_order_is_pure_reduction(self):
        cfg, frames, declared = _planted_stack((2, 0), n_frames=20, seed=43)
        a = cs_scan(frames, declared, window=3, scan_bin=1)
        b = cs_scan(list(reversed(frames)), declared, window=3, scan_bin=1)
        assert a.best_shift == b.best_shift
        assert np.allclose(a.sigmas, b.sigmas)

    def test_jittered_recovery_at_scan_bin_two(self):
        # Broadband source (1px cells) keeps per-pixel statistics smooth.
        cfg, frames, declared = _planted_stack(
            (4, 4), n_frames=60, jitter=1.2, seed=44, cells=96, m_temp=100,
            mu=0.05)
        scan = cs_scan(frames, declared, window=6, scan_bin=1,
                       dip_tolerance=0.02)
        assert scan.best_shift == (4, 4)

    def test_csv_export(self, tmp_path):
        cfg, frames, declared = _planted_stack((0, 0), n_frames=10, seed=45)
        scan = cs_scan(frames, declared, window=2, scan_bin=1)
        path = tmp_path / "surface.csv"
        write_scan_csv(path, scan)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "shift_y,shift_x,sigma"
        assert len(rows) == 1 + 25


class TestRefineCenter:
    def _synthetic_scan(self, vy, vx, window=3):
        """Exact quadratic sigma surface with vertex at (vy, vx)."""
        shifts = []
        sigmas = []
        for dy in range(-window, window + 1):
            for dx in range(-window, window + 1):
                shifts.append((dy, dx))
                sigmas.append(0.3 + (dy - vy) ** 2 + (dx - vx) ** 2)
        shifts = np.array(shifts)
        sigmas = np.array(sigmas)
        k = int(np.argmin(sigmas))
        best = (int(shifts[k, 0]), int(shifts[k, 1]))
        return CsScanResult(shifts=shifts, sigmas=sigmas, best_shift=best,
                            center_estimate=(0.0, 0.0), scan_bin=1)

    def test_parabola_identity(self):
        from ssnqi.regions import RegionPair, Rect
        regions = RegionPair(Rect(0, 0, 4, 4), Rect(0, 4, 4, 4), (1.5, 3.5))
        scan = self._synthetic_scan(1.5, 0.0)
        cy, cx = refine_center(scan, regions)
        assert cy - 1.5 == pytest.approx(1.5 / 2, abs=1e-6)
        assert cx - 3.5 == pytest.approx(0.0, abs=1e-6)

    def test_boundary_dip_falls_back_with_warning(self):
        from ssnqi.regions import RegionPair, Rect
        regions = RegionPair(Rect(0, 0, 4, 4), Rect(0, 4, 4, 4), (1.5, 3.5))
        scan = self._synthetic_scan(3.0, 0.0)  # vertex on the window edge
        center = refine_center(scan, regions)
        assert scan.boundary_warning
        assert center == scan.center_estimate

    def test_half_pixel_center_recovered(self):
        # True center displaced by (0.25, 0): pattern displaced half a pixel.
        cfg = standard_scene(96, 96, 96, 96, mu=0.05, m_temp=100,
                             eta_s=0.7, eta_i=0.7, margin=16, gain_jitter=0.0,
                             coherence_jitter=1.2, center_offset=(0.25, 0.0),
                             seed=46)
        frames, _ = generate_stack(cfg, 200)
        scan = cs_scan(frames, cfg.regions, window=3, scan_bin=1,
                       dip_tolerance=0.02)
        refined = refine_center(scan, cfg.regions)
        assert abs(refined[0] - cfg.source.center[0]) <= 0.5
        assert abs(refined[1] - cfg.source.center[1]) <= 0.5
