import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from irisloc import imgcore
from irisloc.imgcore import GrayImage

log = logging.getLogger(__name__)

LEFT = 'left'
RIGHT = 'right'

POLY_BASIS = ('x', 'y', 'xy', 'x2', 'y2', '1')
RIDGE = 1e-6
HARRIS_K = 0.04


class FitError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


class GazeError(ValueError):
    pass


class EcIcVector(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class ScreenGeometry:
    width_px: float = 1366.0
    height_px: float = 768.0
    width_mm: float = 344.0
    height_mm: float = 193.0
    head_distance_mm: float = 600.0

    def __post_init__(self):
        if min(self.width_px, self.height_px, self.width_mm, self.height_mm, self.head_distance_mm) <= 0:
            raise ValueError("screen geometry must be positive")

    @property
    def centre(self) -> Tuple[float, float]:
        return 0.5 * self.width_px, 0.5 * self.height_px

    @property
    def mm_per_px_x(self) -> float:
        return self.width_mm / self.width_px

    @property
    def mm_per_px_y(self) -> float:
        return self.height_mm / self.height_px


@dataclass(frozen=True)
class PolyModel:
    a: Tuple[float, ...]
    b: Tuple[float, ...]

    def predict(self, v) -> Tuple[float, float]:
        return predict_poly(self, v)


@dataclass(frozen=True)
class RbfModel:
    landmarks: np.ndarray
    sigma_k: float
    wx: np.ndarray
    wy: np.ndarray

    def __post_init__(self):
        if self.sigma_k <= 0:
            raise FitError("sigma_k must be positive, got %r" % self.sigma_k)

    def predict(self, v) -> Tuple[float, float]:
        return predict_rbf(self, v)


CalibrationModel = Union[PolyModel, RbfModel]


@dataclass
class CalibrationSet:
    """Calibration session: per grid target, the (left, right) EC-IC samples seen."""
    grid: List[Tuple[float, float]] = field(default_factory=list)
    samples: List[List[Tuple[Optional[EcIcVector], Optional[EcIcVector]]]] = field(default_factory=list)
    baseline_angle: float = 0.0

    def add(self, target, left: Optional[EcIcVector], right: Optional[EcIcVector]):
        target = (float(target[0]), float(target[1]))
        if target not in self.grid:
            self.grid.append(target)
            self.samples.append([])
        self.samples[self.grid.index(target)].append((left, right))

    def eye_samples(self, eye: str) -> List[List[EcIcVector]]:
        pick = 0 if eye == LEFT else 1
        return [[pair[pick] for pair in per_target if pair[pick] is not None] for per_target in self.samples]

    def pairs(self, eye: str) -> List[Tuple[EcIcVector, Tuple[float, float]]]:
        out = []
        for target, per_target in zip(self.grid, self.eye_samples(eye)):
            out.extend((v, target) for v in per_target)
        return out


class PogEstimate(NamedTuple):
    point: Tuple[float, float]
    monocular: bool


def detect_inner_corner(eye_roi: GrayImage, side: str, sigma: float = 1.0,
                        response_floor: float = 0.01) -> Optional[Tuple[float, float]]:
    """Harris maximum over the nasal third of an eye ROI, sub-pixel refined.

    `side` names the ROI by image position: the left ROI's nasal side is its
    right third, and vice versa. The response is divided by the squared mean
    gradient energy of the ROI, so `response_floor` does not depend on contrast.
    Returns None when nothing clears the floor.
    """
    roi = np.asarray(eye_roi, dtype=np.float64)
    rows, cols = roi.shape
    grad = imgcore.scharr_gradients(roi)
    sxx = ndimage.gaussian_filter(grad.gx * grad.gx, sigma, mode='reflect')
    syy = ndimage.gaussian_filter(grad.gy * grad.gy, sigma, mode='reflect')
    sxy = ndimage.gaussian_filter(grad.gx * grad.gy, sigma, mode='reflect')
    response = sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2
    energy = float(np.mean(sxx + syy))
    if energy <= 1e-12:
        return None
    response = response / (energy * energy)

    third = cols // 3
    mask = np.zeros(roi.shape, dtype=bool)
    if side == LEFT:
        mask[2:rows - 2, max(cols - third, 2):cols - 2] = True
    elif side == RIGHT:
        mask[2:rows - 2, 2:min(third, cols - 2)] = True
    else:
        raise ValueError("side must be %r or %r" % (LEFT, RIGHT))
    masked = np.where(mask, response, -np.inf)
    flat = int(np.argmax(masked))
    iy, ix = np.unravel_index(flat, roi.shape)
    if not mask[iy, ix] or response[iy, ix] <= response_floor:
        return None
    dx = imgcore.parabolic_offset(response[iy, ix - 1], response[iy, ix], response[iy, ix + 1])
    dy = imgcore.parabolic_offset(response[iy - 1, ix], response[iy, ix], response[iy + 1, ix])
    return ix + dx, iy + dy


def ecic(corner, iris) -> EcIcVector:
    return EcIcVector(float(iris[0]) - float(corner[0]), float(iris[1]) - float(corner[1]))


def _poly_design(vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, 2)
    x, y = v[:, 0], v[:, 1]
    return np.stack([x, y, x * y, x * x, y * y, np.ones_like(x)], axis=1)


def fit_poly(samples: Sequence[Tuple[EcIcVector, Tuple[float, float]]]) -> PolyModel:
    if len(samples) < 6:
        raise FitError("second-order fit needs at least 6 samples, got %d" % len(samples))
    design = _poly_design([s[0] for s in samples])
    targets = np.asarray([s[1] for s in samples], dtype=np.float64)
    if np.linalg.matrix_rank(design) < 6:
        raise FitError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return PolyModel(a=tuple(float(c) for c in coef[:, 0]), b=tuple(float(c) for c in coef[:, 1]))


def predict_poly(m: PolyModel, v) -> Tuple[float, float]:
    row = _poly_design([v])[0]
    return float(row @ np.asarray(m.a)), float(row @ np.asarray(m.b))


def compute_landmarks(cal: CalibrationSet, eye: str = LEFT) -> np.ndarray:
    """One landmark per grid point: the componentwise median of its samples."""
    landmarks = []
    for target, per_target in zip(cal.grid, cal.eye_samples(eye)):
        if not per_target:
            raise CalibrationError("no %s-eye samples at calibration point %s" % (eye, target))
        landmarks.append(np.median(np.asarray(per_target, dtype=np.float64), axis=0))
    if not landmarks:
        raise CalibrationError("calibration set is empty")
    return np.array(landmarks)


def default_sigma(landmarks: np.ndarray) -> float:
    """Mean nearest-neighbour distance between landmarks."""
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.shape[0] < 2:
        return 1.0
    d = np.sqrt(((lm[:, None, :] - lm[None, :, :]) ** 2).sum(axis=2))
    np.fill_diagonal(d, np.inf)
    sigma = float(d.min(axis=1).mean())
    return sigma if sigma > 0 else 1.0


def rbf_features(vectors, landmarks: np.ndarray, sigma_k: float) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, 2)
    d2 = ((v[:, None, :] - np.asarray(landmarks)[None, :, :]) ** 2).sum(axis=2)
    return np.hstack([np.exp(-d2 / (2.0 * sigma_k ** 2)), np.ones((v.shape[0], 1))])


def rbf_transform(v, m: RbfModel) -> np.ndarray:
    return rbf_features([v], m.landmarks, m.sigma_k)[0]


def fit_rbf(cal: CalibrationSet, sigma_k: Optional[float] = None, eye: str = LEFT,
            ridge: float = RIDGE) -> RbfModel:
    landmarks = compute_landmarks(cal, eye)
    sigma = default_sigma(landmarks) if sigma_k is None else float(sigma_k)
    pairs = cal.pairs(eye)
    if len(pairs) < landmarks.shape[0]:
        raise FitError("%d samples cannot determine %d landmark weights" % (len(pairs), landmarks.shape[0]))
    phi = rbf_features([p[0] for p in pairs], landmarks, sigma)
    targets = np.asarray([p[1] for p in pairs], dtype=np.float64)
    normal = phi.T @ phi + ridge * np.eye(phi.shape[1])
    try:
        weights = np.linalg.solve(normal, phi.T @ targets)
    except np.linalg.LinAlgError as e:
        raise FitError("RBF normal equations are singular") from e
    if not np.all(np.isfinite(weights)):
        raise FitError("RBF normal equations are singular")
    return RbfModel(landmarks=landmarks, sigma_k=sigma, wx=weights[:, 0], wy=weights[:, 1])


def predict_rbf(m: RbfModel, v) -> Tuple[float, float]:
    phi = rbf_transform(v, m)
    return float(phi @ m.wx), float(phi @ m.wy)


def fit_model(cal: CalibrationSet, kind: str, eye: str, sigma_k: Optional[float] = None) -> CalibrationModel:
    if kind == 'poly':
        return fit_poly(cal.pairs(eye))
    if kind == 'rbf':
        return fit_rbf(cal, sigma_k, eye)
    raise ValueError("unknown model type %r" % kind)


def rotation_correct(p, theta: float, geom: ScreenGeometry) -> Tuple[float, float]:
    """Rotate a screen point by theta about the screen centre."""
    cx, cy = geom.centre
    dx, dy = float(p[0]) - cx, float(p[1]) - cy
    c, s = math.cos(theta), math.sin(theta)
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def corner_angle(left_corner, right_corner) -> float:
    return math.atan2(float(right_corner[1]) - float(left_corner[1]), float(right_corner[0]) - float(left_corner[0]))


def estimate_pog(left: Optional[EcIcVector], right: Optional[EcIcVector],
                 models: Tuple[CalibrationModel, CalibrationModel], theta: float,
                 geom: ScreenGeometry) -> PogEstimate:
    """Binocular mean of the per-eye predictions, then in-plane rotation correction."""
    predictions = []
    if left is not None:
        predictions.append(models[0].predict(left))
    if right is not None:
        predictions.append(models[1].predict(right))
    if not predictions:
        raise GazeError("neither eye is available")
    monocular = len(predictions) == 1
    if monocular:
        log.warning("monocular gaze estimate (%s eye only)", LEFT if left is not None else RIGHT)
    mean = np.mean(np.asarray(predictions), axis=0)
    return PogEstimate(point=rotation_correct(mean, theta, geom), monocular=monocular)


def angular_accuracy(err_px: float, geom: ScreenGeometry) -> float:
    return math.degrees(math.atan(err_px * geom.mm_per_px_x / geom.head_distance_mm))


def angular_errors(predicted, targets, geom: ScreenGeometry) -> Dict[str, float]:
    """Mean absolute visual angle, horizontally, vertically and overall, in degrees."""
    diff = np.asarray(predicted, dtype=np.float64).reshape(-1, 2) - np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    dx_mm = np.abs(diff[:, 0]) * geom.mm_per_px_x
    dy_mm = np.abs(diff[:, 1]) * geom.mm_per_px_y
    to_deg = lambda mm: np.degrees(np.arctan(mm / geom.head_distance_mm))
    return {
        'horizontal': float(to_deg(dx_mm).mean()),
        'vertical': float(to_deg(dy_mm).mean()),
        'overall': float(to_deg(np.hypot(dx_mm, dy_mm)).mean()),
    }


def calibration_grid(n: int, geom: ScreenGeometry, margin: float = 0.1) -> List[Tuple[float, float]]:
    """n x n uniformly spaced targets, inset by `margin` of the screen size."""
    if n < 2:
        raise ValueError("grid needs at least 2 points per side")
    xs = np.linspace(margin * geom.width_px, (1.0 - margin) * geom.width_px, n)
    ys = np.linspace(margin * geom.height_px, (1.0 - margin) * geom.height_px, n)
    return [(float(x), float(y)) for y in ys for x in xs]


CSV_FIELDS = ['target_x', 'target_y', 'eye', 'ecic_x', 'ecic_y', 'frame_index']


def write_calibration_csv(rows, path):
    """rows: iterables of (target, eye 'L'/'R', EcIcVector, frame_index)."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_FIELDS)
        for target, eye, v, frame in rows:
            writer.writerow(['%.6f' % target[0], '%.6f' % target[1], eye, '%.6f' % v[0], '%.6f' % v[1], int(frame)])


def read_calibration_csv(path, baseline_angle: float = 0.0) -> CalibrationSet:
    frames: 'OrderedDict[Tuple[int, Tuple[float, float]], Dict[str, EcIcVector]]' = OrderedDict()
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise CalibrationError("calibration CSV %s lacks columns %s" % (path, sorted(missing)))
        for row in reader:
            eye = (row['eye'] or '').strip().upper()
            if eye not in ('L', 'R'):
                raise CalibrationError("bad eye tag %r in %s" % (row['eye'], path))
            try:
                target = (float(row['target_x']), float(row['target_y']))
                key = (int(row['frame_index']), target)
                vector = EcIcVector(float(row['ecic_x']), float(row['ecic_y']))
            except (TypeError, ValueError):
                raise CalibrationError("non-numeric field on line %d of %s" % (reader.line_num, path))
            frames.setdefault(key, {})[eye] = vector
    cal = CalibrationSet(baseline_angle=baseline_angle)
    for (_, target), eyes in frames.items():
        cal.add(target, eyes.get('L'), eyes.get('R'))
    return cal
