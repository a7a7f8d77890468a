import csv
import os
import tempfile
import unittest

from irisloc import benchmark, synth
from irisloc.benchmark import ErrorRecord
from irisloc.config import RunConfig
from irisloc.providers import DatasetItem

from config import SEED, SMALL_CORPUS


def synth_items(kind, n, seed=SEED):
    items = []
    for k, spec in enumerate(synth.corpus(kind, n, seed)):
        image, truth = synth.render_face(spec)
        items.append(DatasetItem(image_path='%s_%03d.pgm' % (kind, k), gt_left=truth.left.centre,
                                 gt_right=truth.right.centre, face_box=truth.face_box, image=image))
    return items


def oracle(offset_left, offset_right):
    def run(image, item):
        return ((item.gt_left[0] + offset_left, item.gt_left[1]),
                (item.gt_right[0] + offset_right, item.gt_right[1]))
    return run


class MetricTest(unittest.TestCase):
    def test_error_values(self):
        r = benchmark.wec_aec_bec((103.0, 100.0), (200.0, 104.0), (100.0, 100.0), (200.0, 100.0))
        self.assertEqual(r.w, 100.0)
        self.assertEqual((r.d_l, r.d_r), (3.0, 4.0))
        self.assertAlmostEqual(r.e_wec, 0.04)
        self.assertAlmostEqual(r.e_aec, 0.035)
        self.assertAlmostEqual(r.e_bec, 0.03)

    def test_coincident_truth(self):
        with self.assertRaises(benchmark.MetricError):
            benchmark.wec_aec_bec((0, 0), (1, 1), (5, 5), (5, 5))

    def test_curve(self):
        records = [ErrorRecord(0, 0, 1, e, e, e) for e in (0.01, 0.05, 0.07, 0.3)]
        curve = benchmark.accuracy_curve(records, (0.2, 0.05, 0.1))
        self.assertEqual(curve.thresholds, (0.05, 0.1, 0.2))
        self.assertEqual(curve.fraction_detected, (0.5, 0.75, 0.75))
        self.assertEqual(curve.at(0.1), 0.75)
        with self.assertRaises(KeyError):
            curve.at(0.15)
        with self.assertRaises(ValueError):
            benchmark.accuracy_curve(records, metric='median')

    def test_empty_curve(self):
        curve = benchmark.accuracy_curve([], (0.05,))
        self.assertEqual(curve.fraction_detected, (0.0,))

    def test_curves_are_monotone(self):
        records = [benchmark.wec_aec_bec((k * 0.7, 0), (100 + k * 0.3, 0), (0, 0), (100, 0)) for k in range(30)]
        curves = benchmark.accuracy_curves(records, (0.05, 0.1, 0.15, 0.2, 0.25))
        for curve in curves.values():
            self.assertEqual(list(curve.fraction_detected), sorted(curve.fraction_detected))
        for wec, aec, bec in zip(*(curves[m].fraction_detected for m in benchmark.METRICS)):
            self.assertTrue(wec <= aec <= bec)


class EvaluateTest(unittest.TestCase):
    def test_oracle_offsets(self):
        items = synth_items(synth.CLEAN, 3)
        results = benchmark.evaluate(items, RunConfig(), locator=oracle(2.0, 0.0))
        self.assertEqual([r.name for r in results], [item.name for item in items])
        for r, item in zip(results, items):
            self.assertAlmostEqual(r.record.d_l, 2.0)
            self.assertEqual(r.record.d_r, 0.0)
            self.assertAlmostEqual(r.record.e_wec, 2.0 / item.interocular)
            self.assertEqual(r.record.e_bec, 0.0)

    def test_clean_corpus(self):
        items = synth_items(synth.CLEAN, SMALL_CORPUS)
        results = benchmark.evaluate(items)
        curve = benchmark.accuracy_curve([r.record for r in results], (0.05,))
        self.assertGreaterEqual(curve.at(0.05), 0.98)

    def test_hard_corpus(self):
        items = synth_items(synth.HARD, SMALL_CORPUS)
        results = benchmark.evaluate(items)
        curve = benchmark.accuracy_curve([r.record for r in results], (0.05, 0.10))
        self.assertGreaterEqual(curve.at(0.05), 0.85)
        self.assertGreaterEqual(curve.at(0.10), 0.95)

    def test_workers_match_serial(self):
        items = synth_items(synth.CLEAN, 3, seed=SEED + 5)
        serial = benchmark.evaluate(items, RunConfig())
        parallel = benchmark.evaluate(items, RunConfig.from_dict({'run': {'workers': 2}}))
        self.assertEqual([r.record for r in serial], [r.record for r in parallel])

    def test_face_box_from_truth_when_missing(self):
        item = DatasetItem(image_path='x.pgm', gt_left=(100.0, 80.0), gt_right=(160.0, 80.0))
        box = benchmark.item_face_box(item, RunConfig())
        self.assertAlmostEqual(box[2], 60.0 / 0.43)


class SweepTest(unittest.TestCase):
    def test_invalid_scale_reported(self):
        items = synth_items(synth.CLEAN, 2)
        rows = benchmark.resolution_sweep(items, (1.0, 0.5, 0.02), locator=oracle(0.0, 0.0))
        self.assertEqual([r.valid for r in rows], [True, True, False])
        self.assertEqual(rows[0].wec, 1.0)
        self.assertEqual(rows[1].wec, 1.0)
        self.assertIsNone(rows[2].wec)

    def test_scaled_truth(self):
        item = synth_items(synth.CLEAN, 1)[0]
        scaled = benchmark.scale_item(item, 0.5, None)
        self.assertEqual(scaled.gt_left, (item.gt_left[0] * 0.5, item.gt_left[1] * 0.5))
        self.assertEqual(scaled.face_box, (30.0, 10.0, 100.0, 100.0))


class ReportTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.records = [benchmark.wec_aec_bec((1, 0), (100, 2), (0, 0), (100, 0)),
                        benchmark.wec_aec_bec((9, 0), (100, 0), (0, 0), (100, 0))]

    def tearDown(self):
        self.tmp.cleanup()

    def read(self, name):
        with open(os.path.join(self.tmp.name, name), newline='') as f:
            return list(csv.reader(f))

    def test_item_csv(self):
        results = [benchmark.ItemResult('a.pgm', self.records[0], (1, 0), (100, 2))]
        benchmark.write_item_csv(results, os.path.join(self.tmp.name, 'per_item.csv'))
        rows = self.read('per_item.csv')
        self.assertEqual(rows[0], ['filename', 'd_l', 'd_r', 'w', 'e_wec', 'e_aec', 'e_bec'])
        self.assertEqual(rows[1], ['a.pgm', '1.000000', '2.000000', '100.000000', '0.020000', '0.015000',
                                   '0.010000'])

    def test_summary_csv_and_table(self):
        curves = benchmark.accuracy_curves(self.records, (0.05, 0.1))
        benchmark.write_summary_csv(curves, os.path.join(self.tmp.name, 'summary.csv'))
        rows = self.read('summary.csv')
        self.assertEqual(len(rows), 1 + 3 * 2)
        self.assertEqual(rows[1], ['wec', '0.050000', '0.500000'])
        table = benchmark.format_table(curves)
        lines = table.splitlines()
        self.assertEqual([line.split()[0] for line in lines[1:]], ['WEC', 'AEC', 'BEC'])
        self.assertIn('100.00', lines[3])

    def test_sweep_csv(self):
        rows = [benchmark.SweepRow(1.0, 0.9, True, 10), benchmark.SweepRow(0.02, None, False, 10)]
        benchmark.write_sweep_csv(rows, os.path.join(self.tmp.name, 'sweep.csv'))
        self.assertEqual(self.read('sweep.csv'), [['scale', 'wec@0.05', 'valid'], ['1.000000', '0.900000', '1'],
                                                  ['0.020000', '', '0']])
