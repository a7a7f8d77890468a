import os
import tempfile
import unittest

import numpy as np

from irisloc import imgcore, providers
from irisloc.config import RunConfig
from irisloc.providers import DatasetItem, ParseError, SequenceFrame

from config import BIOID_DIR, GI4E_DIR


def blank(path, shape=(20, 30)):
    imgcore.save_image(np.full(shape, 100.0), path)


class ProviderTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = os.path.join(self.dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, 'w') as f:
            f.write(text)
        return path


class BioIdTest(ProviderTestCase):
    def test_pairs_and_image_order(self):
        blank(os.path.join(self.dir, 'BioID_0000.pgm'))
        self.write('BioID_0000.eye', "#LX\tLY\tRX\tRY\n232\t110\t161\t110\n")
        blank(os.path.join(self.dir, 'BioID_0001.pgm'))
        items = providers.load_bioid(self.dir)
        self.assertEqual(len(items), 1)
        self.assertEqual(items[0].name, 'BioID_0000.pgm')
        self.assertEqual(items[0].gt_left, (161.0, 110.0))
        self.assertEqual(items[0].gt_right, (232.0, 110.0))
        self.assertEqual(items[0].interocular, 71.0)
        self.assertEqual(items[0].load().shape, (20, 30))

    def test_malformed_eye_file(self):
        path = self.write('bad.eye', "#LX LY RX RY\n1 2 3\n")
        with self.assertRaises(ParseError):
            providers.BioIdProvider.parse_eye_file(path)
        path = self.write('worse.eye', "#LX LY RX RY\n1 2 x 4\n")
        with self.assertRaises(ParseError):
            providers.BioIdProvider.parse_eye_file(path)

    def test_missing_directory(self):
        with self.assertRaises(FileNotFoundError):
            providers.load_bioid(os.path.join(self.dir, 'nope'))


class Gi4eTest(ProviderTestCase):
    def setUp(self):
        super(Gi4eTest, self).setUp()
        os.makedirs(os.path.join(self.dir, 'images'))
        blank(os.path.join(self.dir, 'images', '001_01.png'))
        self.write('labels/image_labels.txt',
                   "001_01.png 10 20 30 21 50 22 70 23 90 24 110 25\n"
                   "missing.png 1 2 3 4 5 6 7 8 9 10 11 12\n")

    def test_default_columns(self):
        items = providers.load_gi4e(self.dir)
        self.assertEqual(len(items), 1)
        item = items[0]
        self.assertEqual(item.gt_left, (30.0, 21.0))
        self.assertEqual(item.gt_right, (90.0, 24.0))
        self.assertEqual(item.gt_corners, ((50.0, 22.0), (70.0, 23.0)))
        self.assertTrue(item.image_path.endswith(os.path.join('images', '001_01.png')))

    def test_column_map(self):
        items = providers.load_gi4e(self.dir, column_map={'left': 1, 'right': 6})
        self.assertEqual((items[0].gt_left, items[0].gt_right), ((10.0, 20.0), (110.0, 25.0)))
        self.assertIsNone(items[0].gt_corners)
        with self.assertRaises(ParseError):
            providers.load_gi4e(self.dir, column_map={'left': 1, 'right': 7})

    def test_column_map_from_config(self):
        cfg = RunConfig.from_dict({'dataset': {'gi4e_columns': 'left=1,right=6,left_corner=2,right_corner=5'}})
        items = providers.load_dataset('gi4e', self.dir, cfg.dataset.column_map)
        self.assertEqual(items[0].gt_left, (10.0, 20.0))
        self.assertEqual(items[0].gt_right, (110.0, 25.0))
        self.assertEqual(items[0].gt_corners, ((30.0, 21.0), (90.0, 24.0)))
        self.assertEqual(RunConfig().dataset.column_map, providers.GI4E_COLUMNS)

    def test_odd_row(self):
        self.write('labels/image_labels.txt', "001_01.png 1 2 3\n")
        with self.assertRaises(ParseError):
            providers.load_gi4e(self.dir)


class ColumnMapTest(unittest.TestCase):
    def test_parse(self):
        self.assertEqual(providers.parse_column_map('left=2; right=5 ,'), {'left': 2, 'right': 5})

    def test_bad_entries(self):
        for text in ('left=2,right=5,nose=1', 'left=2', 'left=0,right=5', 'left=2,right=x', 'left,right=5'):
            with self.assertRaises(ValueError):
                providers.parse_column_map(text)


class ManifestTest(ProviderTestCase):
    def test_manifest_round_trip(self):
        blank(os.path.join(self.dir, 'a.pgm'))
        items = [DatasetItem(os.path.join(self.dir, 'a.pgm'), (10.0, 20.0), (40.0, 21.5),
                             gt_corners=((15.0, 20.0), (35.0, 20.0)), face_box=(0.0, 0.0, 50.0, 50.0)),
                 DatasetItem(os.path.join(self.dir, 'a.pgm'), (11.0, 20.0), (41.0, 20.0))]
        path = os.path.join(self.dir, 'manifest.csv')
        providers.save_custom(items, path)
        loaded = providers.load_dataset('custom', path)
        self.assertEqual(loaded[0].gt_right, (40.0, 21.5))
        self.assertEqual(loaded[0].gt_corners, ((15.0, 20.0), (35.0, 20.0)))
        self.assertEqual(loaded[0].face_box, (0.0, 0.0, 50.0, 50.0))
        self.assertIsNone(loaded[1].face_box)
        self.assertEqual(os.path.abspath(loaded[1].image_path), os.path.abspath(items[1].image_path))

    def test_missing_columns(self):
        path = self.write('m.csv', "filename,lx,ly\na.pgm,1,2\n")
        with self.assertRaises(ParseError):
            providers.load_custom(path)

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            providers.load_dataset('celeba', self.dir)


class LabelledDirTest(ProviderTestCase):
    def test_open_and_closed(self):
        for sub, count in (('open', 2), ('closed', 1)):
            os.makedirs(os.path.join(self.dir, sub))
            for k in range(count):
                blank(os.path.join(self.dir, sub, 'eye_%d.pgm' % k))
        images, labels = providers.load_labelled_dir(self.dir)
        self.assertEqual(len(images), 3)
        self.assertEqual(list(labels), [1, 1, -1])

    def test_missing_class(self):
        os.makedirs(os.path.join(self.dir, 'open'))
        with self.assertRaises(FileNotFoundError):
            providers.load_labelled_dir(self.dir)


class SequenceTest(ProviderTestCase):
    def test_sequence_round_trip(self):
        frames = []
        for k in range(3):
            path = os.path.join(self.dir, 'frame_%04d.pgm' % k)
            blank(path)
            frames.append(SequenceFrame(k, path, (0.0, 0.0, 30.0, 30.0) if k else None, (5.0, 8.0), (20.0, 8.0)))
        path = os.path.join(self.dir, 'sequence.csv')
        providers.save_sequence(frames, path)
        loaded = providers.load_sequence(path)
        self.assertEqual([f.index for f in loaded], [0, 1, 2])
        self.assertIsNone(loaded[0].face_box)
        self.assertEqual(loaded[1].face_box, (0.0, 0.0, 30.0, 30.0))
        self.assertEqual(loaded[2].gt_right, (20.0, 8.0))

    def test_gap_in_frames(self):
        blank(os.path.join(self.dir, 'f.pgm'))
        path = self.write('seq.csv', "frame,filename,face_x,face_y,face_w,face_h\n0,f.pgm,0,0,10,10\n"
                                     "2,f.pgm,0,0,10,10\n")
        with self.assertRaises(ParseError):
            providers.load_sequence(path)

    def test_missing_frame_file(self):
        path = self.write('seq.csv', "frame,filename,face_x,face_y,face_w,face_h\n0,gone.pgm,0,0,10,10\n")
        with self.assertRaises(ParseError):
            providers.load_sequence(path)

    def test_frame_without_geometry(self):
        blank(os.path.join(self.dir, 'f.pgm'))
        path = self.write('seq.csv', "frame,filename\n0,f.pgm\n")
        with self.assertRaises(ParseError):
            providers.load_sequence(path)


@unittest.skipUnless(BIOID_DIR, "IRISLOC_BIOID is not set")
class BioIdDatasetTest(unittest.TestCase):
    def test_full_dataset(self):
        items = providers.load_bioid(BIOID_DIR)
        self.assertEqual(len(items), 1521)
        for item in items[:20]:
            self.assertLess(item.gt_left[0], item.gt_right[0])


@unittest.skipUnless(GI4E_DIR, "IRISLOC_GI4E is not set")
class Gi4eDatasetTest(unittest.TestCase):
    def test_full_dataset(self):
        items = providers.load_gi4e(GI4E_DIR)
        self.assertEqual(len(items), 1236)
