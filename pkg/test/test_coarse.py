import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from irisloc import coarse, imgcore, synth
from irisloc.coarse import AnnulusParams, CorrelationSurface

from config import SEED
from utils import disc_image


def gaussian_surface(shape, peaks, sigma=3.0):
    rows, cols = shape
    X, Y = np.meshgrid(np.arange(cols, dtype=np.float64), np.arange(rows, dtype=np.float64))
    surface = np.zeros(shape)
    for x, y in peaks:
        surface = np.maximum(surface, np.exp(-((X - x) ** 2 + (Y - y) ** 2) / (2 * sigma ** 2)))
    return surface


class AnnulusParamsTest(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(coarse.ConfigurationError):
            AnnulusParams(r_min=8, r_max=8)
        with self.assertRaises(coarse.ConfigurationError):
            AnnulusParams(r_min=4, r_max=8, beta=0.0)
        with self.assertRaises(coarse.ConfigurationError):
            AnnulusParams(r_min=4, r_max=8, lam=1.5)

    def test_kernel_size(self):
        self.assertEqual(AnnulusParams(3, 7.2).kernel_size, 2 * 8 + 3)
        self.assertEqual(AnnulusParams(3, 7).margin, 7)

    def test_face_ratio_range(self):
        self.assertEqual(coarse.radius_range_from_face(200), (8, 17))
        with self.assertRaises(coarse.ConfigurationError):
            coarse.radius_range_from_face(30)


class KernelTest(unittest.TestCase):
    def setUp(self):
        self.p = AnnulusParams(r_min=4, r_max=9)

    def test_coa_support_and_magnitude(self):
        o = coarse.build_coa_kernel(self.p)
        h = (self.p.kernel_size - 1) // 2
        n, m = np.mgrid[-h:h + 1, -h:h + 1]
        r = np.hypot(m, n)
        support = (r > self.p.r_min) & (r < self.p.r_max)
        np.testing.assert_allclose(np.abs(o[support]), 1.0 / r[support])
        self.assertTrue(np.all(o[~support] == 0))
        self.assertEqual(o[h, h], 0)

    def test_coa_is_odd(self):
        o = coarse.build_coa_kernel(self.p)
        np.testing.assert_allclose(o, -o[::-1, ::-1], atol=1e-12)

    def test_coa_points_outward(self):
        o = coarse.build_coa_kernel(self.p)
        h = (self.p.kernel_size - 1) // 2
        # six pixels to the right of the anchor: phase zero
        self.assertAlmostEqual(o[h, h + 6].real, 1.0 / 6.0)
        self.assertAlmostEqual(o[h, h + 6].imag, 0.0)
        # six pixels below: phase pi/2
        self.assertAlmostEqual(o[h + 6, h].imag, 1.0 / 6.0)

    def test_weight_kernel_capped(self):
        w = coarse.build_weight_kernel(self.p)
        self.assertEqual(w.at(0, 0), 1.0)
        self.assertAlmostEqual(w.at(3, 4), 0.2)
        self.assertEqual(w.at(w.anchor, w.anchor), 0.0)

    def test_roi_too_small(self):
        with self.assertRaises(coarse.ConfigurationError):
            coarse.build_coa_kernel(self.p, roi_shape=(10, 40))

    def test_single_kernel_matches_staged_pipeline(self):
        rng = np.random.default_rng(SEED)
        ks = coarse.build_kernels(self.p)
        o = ks.o_coa
        beta = self.p.beta
        margin = self.p.kernel_size
        for _ in range(50):
            img = rng.uniform(0, 255, (48, 48))
            direct = imgcore.convolve2d(img, ks.c_rcc, imgcore.SPATIAL)
            sx = imgcore.convolve2d(img, imgcore.SCHARR_X, imgcore.SPATIAL)
            sy = imgcore.convolve2d(img, imgcore.SCHARR_Y, imgcore.SPATIAL)
            staged = (beta * imgcore.convolve2d(sx, o.real, imgcore.SPATIAL)
                      + (1.0 / beta) * imgcore.convolve2d(sy, o.imag, imgcore.SPATIAL))
            diff = np.abs(direct - staged)[margin:-margin, margin:-margin]
            self.assertLess(float(diff.max()), 1e-6)


class CoarseLocalizationTest(unittest.TestCase):
    def setUp(self):
        self.p = AnnulusParams(r_min=5, r_max=11)

    def test_dark_disc_peak(self):
        img = disc_image((64, 64), (30.0, 33.0), 8.0)
        for mode in (imgcore.FFT, imgcore.SPATIAL):
            peak = coarse.coarse_ic(img, self.p, mode=mode)
            self.assertIsNotNone(peak)
            self.assertLessEqual(math.hypot(peak.x - 30.0, peak.y - 33.0), 1.0)
            self.assertGreater(peak.psr, 0.0)

    def test_modes_agree_on_candidates(self):
        img = disc_image((64, 64), (35.0, 29.0), 7.0)
        fft = coarse.coarse_ic(img, self.p, mode=imgcore.FFT)
        spatial = coarse.coarse_ic(img, self.p, mode=imgcore.SPATIAL)
        self.assertEqual(fft.position, spatial.position)

    def test_occluded_top(self):
        img, truth = synth.render_eye(synth.eye_spec((80, 60), (40.0, 30.0), 8.0, occlusion=0.4))
        peak = coarse.coarse_ic(img, self.p)
        self.assertIsNotNone(peak)
        self.assertLessEqual(math.hypot(peak.x - truth.centre[0], peak.y - truth.centre[1]), 2.0 + 1e-9)

    def test_blank_roi_gives_nothing(self):
        self.assertIsNone(coarse.coarse_ic(np.full((64, 64), 128.0), self.p))

    def test_psr_gate(self):
        img = disc_image((64, 64), (30.0, 33.0), 8.0)
        self.assertIsNone(coarse.coarse_ic(img, self.p, min_psr=1e6))

    def test_roi_smaller_than_kernel(self):
        with self.assertRaises(imgcore.DimensionError):
            coarse.coarse_ic(np.zeros((20, 20)), self.p)


class CorrelationOutputTest(unittest.TestCase):
    def setUp(self):
        self.img = disc_image((64, 64), (30.0, 33.0), 8.0)

    def surface(self, lam, img=None):
        ks = coarse.build_kernels(AnnulusParams(r_min=5, r_max=11, lam=lam))
        return coarse.correlation_output(self.img if img is None else img, ks, imgcore.SPATIAL)

    def test_gradient_only(self):
        cs = self.surface(1.0)
        np.testing.assert_array_equal(cs.co, coarse.normalize(cs.gradient_term))

    def test_intensity_only(self):
        cs = self.surface(0.0)
        np.testing.assert_array_equal(cs.co, coarse.normalize(cs.intensity_term))
        y, x = np.unravel_index(int(np.argmax(cs.co)), cs.co.shape)
        self.assertLessEqual(math.hypot(x - 30.0, y - 33.0), 1.0)

    def test_gradient_term_ignores_offset(self):
        base = self.surface(0.5)
        brighter = self.surface(0.5, self.img + 40.0)
        m = base.params.kernel_size
        inner = (slice(m, -m), slice(m, -m))
        scale = float(np.abs(base.gradient_term).max())
        np.testing.assert_allclose(brighter.gradient_term[inner], base.gradient_term[inner], atol=1e-9 * scale)
        self.assertFalse(np.allclose(brighter.intensity_term[inner], base.intensity_term[inner]))


class CandidateTest(unittest.TestCase):
    def setUp(self):
        self.p = AnnulusParams(r_min=3, r_max=5)

    def surface(self, co):
        return CorrelationSurface(co=co, gradient_term=co, intensity_term=co, params=self.p)

    def test_equal_peaks_break_ties_in_scan_order(self):
        cs = self.surface(gaussian_surface((60, 60), [(40, 30), (20, 20)]))
        candidates = coarse.find_candidates(cs, k=5)
        self.assertEqual(len(candidates), 2)
        self.assertEqual(candidates[0].position, (20, 20))
        self.assertEqual(candidates[1].position, (40, 30))

    def test_single_impulse(self):
        co = np.zeros((60, 60))
        co[30, 25] = 1.0
        candidates = coarse.find_candidates(self.surface(co))
        self.assertEqual([c.position for c in candidates], [(25, 30)])

    def test_constant_surface(self):
        self.assertEqual(coarse.find_candidates(self.surface(np.full((60, 60), 0.5))), [])

    def test_border_maxima_ignored(self):
        cs = self.surface(gaussian_surface((60, 60), [(2, 30), (30, 30)]))
        positions = [c.position for c in coarse.find_candidates(cs)]
        self.assertEqual(positions, [(30, 30)])

    def test_k_limits_count(self):
        peaks = [(15, 15), (45, 15), (15, 45), (45, 45)]
        cs = self.surface(gaussian_surface((60, 60), peaks))
        self.assertEqual(len(coarse.find_candidates(cs, k=2)), 2)
        with self.assertRaises(ValueError):
            coarse.find_candidates(cs, k=0)

    def test_psr_bounds(self):
        cs = self.surface(gaussian_surface((60, 60), [(30, 30)]))
        with self.assertRaises(coarse.BoundsError):
            coarse.psr(cs, (3, 30))

    def test_flat_window_psr_is_zero(self):
        self.assertEqual(coarse.psr_from_window(np.ones((11, 11))), 0.0)

    @settings(max_examples=50, deadline=None)
    @given(scale=st.floats(0.1, 100.0), shift=st.floats(-50.0, 50.0), seed=st.integers(0, 2 ** 16))
    def test_psr_affine_invariant(self, scale, shift, seed):
        window = np.random.default_rng(seed).uniform(size=(11, 11))
        window[5, 5] = 2.0
        base = coarse.psr_from_window(window)
        self.assertAlmostEqual(coarse.psr_from_window(scale * window + shift), base, places=6)


class NormalizeTest(unittest.TestCase):
    def test_range(self):
        out = coarse.normalize(np.array([[2.0, 4.0], [6.0, 10.0]]))
        self.assertEqual(out.min(), 0.0)
        self.assertEqual(out.max(), 1.0)

    def test_flat(self):
        np.testing.assert_array_equal(coarse.normalize(np.full((3, 3), 5.0)), 0.0)
        self.assertFalse(coarse.has_range(np.full((3, 3), 5.0)))
