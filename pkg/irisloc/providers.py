"""Dataset providers: BioID, Gi4E, the custom CSV manifest and labelled eye folders.

Left and right always mean image-left and image-right.
"""
import csv
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from irisloc import imgcore
from irisloc.imgcore import GrayImage

log = logging.getLogger(__name__)

Point = Tuple[float, float]

IMAGE_SUFFIXES = ('.pgm', '.png', '.jpg', '.jpeg', '.bmp')
GI4E_COLUMNS = {'left': 2, 'right': 5, 'left_corner': 3, 'right_corner': 4}
MANIFEST_FIELDS = ['filename', 'lx', 'ly', 'rx', 'ry', 'lcx', 'lcy', 'rcx', 'rcy',
                   'face_x', 'face_y', 'face_w', 'face_h']


class ParseError(ValueError):
    pass


@dataclass
class DatasetItem:
    image_path: str
    gt_left: Point
    gt_right: Point
    gt_corners: Optional[Tuple[Point, Point]] = None
    face_box: Optional[Tuple[float, float, float, float]] = None
    image: Optional[np.ndarray] = None

    @property
    def name(self) -> str:
        return os.path.basename(self.image_path)

    @property
    def interocular(self) -> float:
        return float(np.hypot(self.gt_right[0] - self.gt_left[0], self.gt_right[1] - self.gt_left[1]))

    def load(self) -> GrayImage:
        if self.image is not None:
            return self.image
        return imgcore.load_image(self.image_path)


def parse_column_map(text: str) -> Dict[str, int]:
    """`left=2,right=5,left_corner=3,right_corner=4` -> {name: 1-based pair index}."""
    columns = {}
    for part in text.replace(';', ',').split(','):
        if not part.strip():
            continue
        name, sep, value = part.partition('=')
        name = name.strip()
        if not sep or name not in GI4E_COLUMNS:
            raise ValueError("bad column map entry %r" % part.strip())
        try:
            index = int(value)
        except ValueError:
            raise ValueError("column %s needs an integer pair index, got %r" % (name, value.strip()))
        if index < 1:
            raise ValueError("column %s pair index must be at least 1" % name)
        columns[name] = index
    for key in ('left', 'right'):
        if key not in columns:
            raise ValueError("column map needs a %r entry" % key)
    return columns


def _image_order(a: Point, b: Point) -> Tuple[Point, Point]:
    return (a, b) if a[0] <= b[0] else (b, a)


def _floats(tokens, path) -> List[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError("%s: non-numeric value in %r" % (path, ' '.join(tokens)))


class BioIdProvider(object):
    """Paired <name>.pgm / <name>.eye files; the .eye file holds '#LX LY RX RY' then four numbers."""

    def __init__(self, directory: str):
        self._dir = directory

    @property
    def directory(self) -> str:
        return self._dir

    @staticmethod
    def parse_eye_file(path: str) -> Tuple[Point, Point]:
        with open(path) as f:
            lines = [line.strip() for line in f if line.strip()]
        data = [line for line in lines if not line.startswith('#')]
        if not data:
            raise ParseError("%s: no coordinate line" % path)
        tokens = data[0].split()
        if len(tokens) != 4:
            raise ParseError("%s: expected 4 numbers, found %d" % (path, len(tokens)))
        lx, ly, rx, ry = _floats(tokens, path)
        return _image_order((lx, ly), (rx, ry))

    def items(self) -> List[DatasetItem]:
        if not os.path.isdir(self._dir):
            raise FileNotFoundError(self._dir)
        names = sorted(os.listdir(self._dir))
        stems = {os.path.splitext(n)[0] for n in names if n.lower().endswith(('.pgm', '.eye'))}
        out = []
        for stem in sorted(stems):
            image_path = os.path.join(self._dir, stem + '.pgm')
            eye_path = os.path.join(self._dir, stem + '.eye')
            if not (os.path.isfile(image_path) and os.path.isfile(eye_path)):
                log.warning("skipping %s: missing .pgm/.eye pair", stem)
                continue
            left, right = self.parse_eye_file(eye_path)
            out.append(DatasetItem(image_path=image_path, gt_left=left, gt_right=right))
        return out


class Gi4eProvider(object):
    """Label rows `filename x1 y1 x2 y2 ...`; column_map holds 1-based pair indices."""

    def __init__(self, directory: str, column_map: Optional[Dict[str, int]] = None,
                 label_file: Optional[str] = None):
        self._dir = directory
        self._columns = dict(GI4E_COLUMNS if column_map is None else column_map)
        for key in ('left', 'right'):
            if key not in self._columns:
                raise ValueError("column map needs a %r entry" % key)
        self._label_file = label_file

    def label_file(self) -> str:
        if self._label_file is not None:
            return self._label_file
        for candidate in (os.path.join(self._dir, 'labels', 'image_labels.txt'),
                          os.path.join(self._dir, 'image_labels.txt')):
            if os.path.isfile(candidate):
                return candidate
        raise FileNotFoundError("no Gi4E label file under %s" % self._dir)

    def _resolve(self, filename: str) -> Optional[str]:
        for base in (os.path.join(self._dir, 'images'), self._dir):
            path = os.path.join(base, filename)
            if os.path.isfile(path):
                return path
        return None

    def parse_row(self, tokens: List[str], path: str):
        numbers = _floats(tokens[1:], path)
        if len(numbers) % 2 != 0:
            raise ParseError("%s: odd coordinate count in row for %s" % (path, tokens[0]))
        pairs = [(numbers[i], numbers[i + 1]) for i in range(0, len(numbers), 2)]

        def pick(key):
            index = self._columns[key]
            if not 1 <= index <= len(pairs):
                raise ParseError("%s: pair %d requested, row has %d" % (path, index, len(pairs)))
            return pairs[index - 1]

        corners = None
        if 'left_corner' in self._columns and 'right_corner' in self._columns:
            corners = (pick('left_corner'), pick('right_corner'))
        return pick('left'), pick('right'), corners

    def items(self) -> List[DatasetItem]:
        path = self.label_file()
        out = []
        with open(path) as f:
            for line in f:
                tokens = line.split()
                if not tokens or tokens[0].startswith('#'):
                    continue
                left, right, corners = self.parse_row(tokens, path)
                image_path = self._resolve(tokens[0])
                if image_path is None:
                    log.warning("skipping %s: image not found", tokens[0])
                    continue
                out.append(DatasetItem(image_path=image_path, gt_left=left, gt_right=right, gt_corners=corners))
        return out


class ManifestProvider(object):
    """CSV manifest `filename, lx, ly, rx, ry` plus optional corner and face-box columns."""

    def __init__(self, path: str):
        self._path = path

    def items(self) -> List[DatasetItem]:
        base = os.path.dirname(os.path.abspath(self._path))
        out = []
        with open(self._path, newline='') as f:
            reader = csv.DictReader(f)
            missing = {'filename', 'lx', 'ly', 'rx', 'ry'} - set(reader.fieldnames or [])
            if missing:
                raise ParseError("%s: missing columns %s" % (self._path, ', '.join(sorted(missing))))
            for row in reader:
                out.append(self._item(row, base))
        return out

    def _item(self, row: Dict[str, str], base: str) -> DatasetItem:
        def value(key):
            text = (row.get(key) or '').strip()
            if not text:
                return None
            try:
                return float(text)
            except ValueError:
                raise ParseError("%s: bad %s value %r" % (self._path, key, text))

        lx, ly, rx, ry = (value(k) for k in ('lx', 'ly', 'rx', 'ry'))
        if None in (lx, ly, rx, ry):
            raise ParseError("%s: incomplete eye coordinates for %s" % (self._path, row['filename']))
        corners = None
        corner_values = [value(k) for k in ('lcx', 'lcy', 'rcx', 'rcy')]
        if None not in corner_values:
            corners = ((corner_values[0], corner_values[1]), (corner_values[2], corner_values[3]))
        face = [value(k) for k in ('face_x', 'face_y', 'face_w', 'face_h')]
        return DatasetItem(image_path=os.path.join(base, row['filename']), gt_left=(lx, ly), gt_right=(rx, ry),
                           gt_corners=corners, face_box=tuple(face) if None not in face else None)


def load_bioid(directory: str) -> List[DatasetItem]:
    return BioIdProvider(directory).items()


def load_gi4e(directory: str, column_map: Optional[Dict[str, int]] = None,
              label_file: Optional[str] = None) -> List[DatasetItem]:
    return Gi4eProvider(directory, column_map, label_file).items()


def load_custom(path: str) -> List[DatasetItem]:
    return ManifestProvider(path).items()


def save_custom(items: List[DatasetItem], path: str):
    """Write a manifest; filenames are stored relative to the manifest directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(MANIFEST_FIELDS)
        for item in items:
            row = [os.path.relpath(os.path.abspath(item.image_path), base)]
            row += ['%.6f' % v for v in (*item.gt_left, *item.gt_right)]
            if item.gt_corners is not None:
                row += ['%.6f' % v for v in (*item.gt_corners[0], *item.gt_corners[1])]
            else:
                row += [''] * 4
            row += ['%.6f' % v for v in item.face_box] if item.face_box is not None else [''] * 4
            writer.writerow(row)


def load_dataset(kind: str, path: str, column_map: Optional[Dict[str, int]] = None) -> List[DatasetItem]:
    if kind == 'bioid':
        return load_bioid(path)
    if kind == 'gi4e':
        return load_gi4e(path, column_map)
    if kind == 'custom':
        return load_custom(path)
    raise ValueError("unknown dataset kind %r" % kind)


def load_labelled_dir(directory: str) -> Tuple[List[GrayImage], np.ndarray]:
    """Eye crops from `open/` (+1) and `closed/` (-1) subfolders."""
    images, labels = [], []
    for sub, label in (('open', 1), ('closed', -1)):
        folder = os.path.join(directory, sub)
        if not os.path.isdir(folder):
            raise FileNotFoundError("missing %s" % folder)
        for name in sorted(os.listdir(folder)):
            if name.lower().endswith(IMAGE_SUFFIXES):
                images.append(imgcore.load_image(os.path.join(folder, name)))
                labels.append(label)
    return images, np.array(labels)


SEQUENCE_FIELDS = ['frame', 'filename', 'face_x', 'face_y', 'face_w', 'face_h', 'lx', 'ly', 'rx', 'ry']


class SequenceFrame(NamedTuple):
    index: int
    image_path: str
    face_box: Optional[Tuple[float, float, float, float]]
    gt_left: Optional[Point]
    gt_right: Optional[Point]


def load_sequence(path: str) -> List[SequenceFrame]:
    """Frame manifest; frame indices must run 0, 1, 2, ... without gaps."""
    base = os.path.dirname(os.path.abspath(path))
    frames = []
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        missing = {'frame', 'filename'} - set(reader.fieldnames or [])
        if missing:
            raise ParseError("%s: missing columns %s" % (path, ', '.join(sorted(missing))))
        for row in reader:
            def value(key):
                text = (row.get(key) or '').strip()
                try:
                    return float(text) if text else None
                except ValueError:
                    raise ParseError("%s: bad %s value %r" % (path, key, text))
            try:
                index = int(row['frame'])
            except ValueError:
                raise ParseError("%s: bad frame index %r" % (path, row['frame']))
            if index != len(frames):
                raise ParseError("%s: expected frame %d, found %d" % (path, len(frames), index))
            face = [value(k) for k in ('face_x', 'face_y', 'face_w', 'face_h')]
            eyes = [value(k) for k in ('lx', 'ly', 'rx', 'ry')]
            has_truth = None not in eyes
            frames.append(SequenceFrame(index=index, image_path=os.path.join(base, row['filename']),
                                        face_box=tuple(face) if None not in face else None,
                                        gt_left=(eyes[0], eyes[1]) if has_truth else None,
                                        gt_right=(eyes[2], eyes[3]) if has_truth else None))
    for frame in frames:
        if not os.path.isfile(frame.image_path):
            raise ParseError("%s: frame %d file %s is missing" % (path, frame.index, frame.image_path))
        if frame.face_box is None and frame.gt_left is None:
            raise ParseError("%s: frame %d has neither a face box nor eye positions" % (path, frame.index))
    return frames


def save_sequence(frames: List[SequenceFrame], path: str):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SEQUENCE_FIELDS)
        for frame in frames:
            row = [frame.index, os.path.relpath(os.path.abspath(frame.image_path), base)]
            row += ['%.6f' % v for v in frame.face_box] if frame.face_box is not None else [''] * 4
            if frame.gt_left is not None and frame.gt_right is not None:
                row += ['%.6f' % v for v in (*frame.gt_left, *frame.gt_right)]
            else:
                row += [''] * 4
            writer.writerow(row)
