import math
import os
import tempfile
import unittest

import numpy as np

from irisloc import gaze, synth
from irisloc.gaze import LEFT, RIGHT, CalibrationSet, EcIcVector, PolyModel, ScreenGeometry

from config import SEED

GEOM = ScreenGeometry()


def linear_ecic(target):
    cx, cy = GEOM.centre
    return EcIcVector((target[0] - cx) / 30.0, (target[1] - cy) / 30.0)


def curved_ecic(target):
    cx, cy = GEOM.centre
    u, w = (target[0] - cx) / cx, (target[1] - cy) / cy
    return EcIcVector(6.0 * math.copysign(math.sqrt(abs(u)), u), 4.0 * math.copysign(math.sqrt(abs(w)), w))


def offset_model(dx, dy):
    return PolyModel(a=(1.0, 0.0, 0.0, 0.0, 0.0, dx), b=(0.0, 1.0, 0.0, 0.0, 0.0, dy))


class CornerTest(unittest.TestCase):
    def setUp(self):
        spec = synth.eye_spec((66, 60), (33.0, 30.0), 8.0, half_width=26.0, opening=12.0, blur=0.5)
        self.img, self.truth = synth.render_eye(spec)

    def test_nasal_corners(self):
        (x1, y1), (x2, y2) = self.truth.corners
        found = gaze.detect_inner_corner(self.img, LEFT)
        self.assertIsNotNone(found)
        self.assertLess(math.hypot(found[0] - x2, found[1] - y2), 3.0)
        found = gaze.detect_inner_corner(self.img, RIGHT)
        self.assertIsNotNone(found)
        self.assertLess(math.hypot(found[0] - x1, found[1] - y1), 3.0)

    def test_flat_roi(self):
        self.assertIsNone(gaze.detect_inner_corner(np.full((40, 60), 120.0), LEFT))

    def test_low_contrast_roi(self):
        bright = gaze.detect_inner_corner(self.img, LEFT)
        dim = gaze.detect_inner_corner(self.img * 0.01, LEFT)
        self.assertIsNotNone(dim)
        self.assertAlmostEqual(dim[0], bright[0], places=6)
        self.assertAlmostEqual(dim[1], bright[1], places=6)

    def test_straight_edge_has_no_corner(self):
        roi = np.full((40, 60), 100.0)
        roi[20:, :] = 180.0
        self.assertIsNone(gaze.detect_inner_corner(roi, LEFT))
        self.assertIsNone(gaze.detect_inner_corner(roi, RIGHT))

    def test_bad_side(self):
        with self.assertRaises(ValueError):
            gaze.detect_inner_corner(self.img, 'up')

    def test_ecic_and_angle(self):
        self.assertEqual(gaze.ecic((10, 20), (15, 18)), EcIcVector(5.0, -2.0))
        self.assertAlmostEqual(gaze.corner_angle((0, 0), (10, 10)), math.pi / 4)


class PolyTest(unittest.TestCase):
    def test_linear_mapping_is_exact(self):
        grid = gaze.calibration_grid(4, GEOM)
        model = gaze.fit_poly([(linear_ecic(t), t) for t in grid])
        predicted = [model.predict(linear_ecic(t)) for t in grid]
        self.assertLess(gaze.angular_errors(predicted, grid, GEOM)['overall'], 0.05)

    def test_too_few_samples(self):
        grid = gaze.calibration_grid(2, GEOM)
        with self.assertRaises(gaze.FitError):
            gaze.fit_poly([(linear_ecic(t), t) for t in grid])

    def test_rank_deficient(self):
        samples = [(EcIcVector(1.0, 1.0), (float(i), 0.0)) for i in range(8)]
        with self.assertRaises(gaze.FitError):
            gaze.fit_poly(samples)


class RbfTest(unittest.TestCase):
    def calibration(self, mapping, per_target=20, noise=0.05):
        rng = np.random.default_rng(SEED)
        cal = CalibrationSet()
        for target in gaze.calibration_grid(5, GEOM):
            v = mapping(target)
            for _ in range(per_target):
                sample = EcIcVector(v.x + rng.normal(0, noise), v.y + rng.normal(0, noise))
                cal.add(target, sample, sample)
        return cal

    def test_landmarks_are_medians(self):
        cal = CalibrationSet()
        cal.add((0, 0), EcIcVector(1, 1), None)
        cal.add((0, 0), EcIcVector(3, 5), None)
        cal.add((0, 0), EcIcVector(2, 2), None)
        np.testing.assert_array_equal(gaze.compute_landmarks(cal, LEFT), [[2.0, 2.0]])
        with self.assertRaises(gaze.CalibrationError):
            gaze.compute_landmarks(cal, RIGHT)

    def test_default_sigma(self):
        landmarks = np.array([[x, y] for x in range(3) for y in range(3)], dtype=np.float64)
        self.assertEqual(gaze.default_sigma(landmarks), 1.0)

    def test_rbf_beats_poly_on_curved_mapping(self):
        cal = self.calibration(curved_ecic)
        grid = cal.grid
        rbf = gaze.fit_model(cal, 'rbf', LEFT)
        poly = gaze.fit_model(cal, 'poly', LEFT)
        clean = [curved_ecic(t) for t in grid]
        rbf_err = gaze.angular_errors([rbf.predict(v) for v in clean], grid, GEOM)['overall']
        poly_err = gaze.angular_errors([poly.predict(v) for v in clean], grid, GEOM)['overall']
        self.assertLessEqual(rbf_err, poly_err)

    def test_explicit_sigma(self):
        model = gaze.fit_rbf(self.calibration(linear_ecic, per_target=3), sigma_k=2.5)
        self.assertEqual(model.sigma_k, 2.5)
        self.assertEqual(len(model.wx), 26)
        with self.assertRaises(gaze.FitError):
            gaze.fit_rbf(self.calibration(linear_ecic, per_target=3), sigma_k=-1.0)

    def test_unknown_model(self):
        with self.assertRaises(ValueError):
            gaze.fit_model(self.calibration(linear_ecic, per_target=1), 'spline', LEFT)


class PogTest(unittest.TestCase):
    def setUp(self):
        self.models = (offset_model(100.0, 0.0), offset_model(0.0, 100.0))

    def test_binocular_mean(self):
        est = gaze.estimate_pog(EcIcVector(0, 0), EcIcVector(0, 0), self.models, 0.0, GEOM)
        self.assertFalse(est.monocular)
        self.assertEqual(est.point, (50.0, 50.0))

    def test_monocular_fallback(self):
        est = gaze.estimate_pog(None, EcIcVector(10, 10), self.models, 0.0, GEOM)
        self.assertTrue(est.monocular)
        self.assertEqual(est.point, (10.0, 110.0))

    def test_no_eyes(self):
        with self.assertRaises(gaze.GazeError):
            gaze.estimate_pog(None, None, self.models, 0.0, GEOM)

    def test_rotation_about_screen_centre(self):
        cx, cy = GEOM.centre
        x, y = gaze.rotation_correct((cx + 100.0, cy), math.pi / 2, GEOM)
        self.assertAlmostEqual(x, cx)
        self.assertAlmostEqual(y, cy + 100.0)
        self.assertEqual(gaze.rotation_correct((5.0, 7.0), 0.0, GEOM), (5.0, 7.0))


class AccuracyTest(unittest.TestCase):
    def test_pixels_to_degrees(self):
        self.assertAlmostEqual(gaze.angular_accuracy(56.0, GEOM), 1.346, delta=1e-3)

    def test_errors_split(self):
        errors = gaze.angular_errors([(10.0, 0.0)], [(0.0, 0.0)], GEOM)
        self.assertGreater(errors['horizontal'], 0.0)
        self.assertEqual(errors['vertical'], 0.0)
        self.assertAlmostEqual(errors['overall'], errors['horizontal'])

    def test_grid(self):
        grid = gaze.calibration_grid(3, GEOM)
        self.assertEqual(len(grid), 9)
        self.assertEqual(grid[0], (0.1 * GEOM.width_px, 0.1 * GEOM.height_px))
        self.assertAlmostEqual(grid[4][0], GEOM.centre[0])
        self.assertAlmostEqual(grid[4][1], GEOM.centre[1])
        with self.assertRaises(ValueError):
            gaze.calibration_grid(1, GEOM)


class CalibrationCsvTest(unittest.TestCase):
    def test_file_round_trip(self):
        rows = [((100.0, 200.0), 'L', EcIcVector(1.5, -2.25), 0),
                ((100.0, 200.0), 'R', EcIcVector(1.0, -2.0), 0),
                ((100.0, 200.0), 'L', EcIcVector(1.25, -2.5), 1),
                ((300.0, 200.0), 'R', EcIcVector(-1.0, 0.5), 2)]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'cal.csv')
            gaze.write_calibration_csv(rows, path)
            with open(path) as f:
                self.assertEqual(f.readline().strip(), ','.join(gaze.CSV_FIELDS))
            cal = gaze.read_calibration_csv(path, baseline_angle=0.1)
        self.assertEqual(cal.grid, [(100.0, 200.0), (300.0, 200.0)])
        self.assertEqual(cal.baseline_angle, 0.1)
        self.assertEqual(cal.samples[0][0], (EcIcVector(1.5, -2.25), EcIcVector(1.0, -2.0)))
        self.assertEqual(cal.samples[0][1], (EcIcVector(1.25, -2.5), None))
        self.assertEqual(cal.samples[1][0], (None, EcIcVector(-1.0, 0.5)))

    def test_bad_eye_tag(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'cal.csv')
            with open(path, 'w') as f:
                f.write(','.join(gaze.CSV_FIELDS) + '\n1,2,X,0,0,0\n')
            with self.assertRaises(gaze.CalibrationError):
                gaze.read_calibration_csv(path)

    def test_non_numeric_field(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'cal.csv')
            with open(path, 'w') as f:
                f.write(','.join(gaze.CSV_FIELDS) + '\n1,2,L,abc,0,0\n')
            with self.assertRaises(gaze.CalibrationError):
                gaze.read_calibration_csv(path)
