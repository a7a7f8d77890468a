"""Synthetic eye and face renderer used as the ground-truth oracle."""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from irisloc.config import EyeLayout
from irisloc.imgcore import GrayImage
from irisloc.refine import EllipseParams

log = logging.getLogger(__name__)

CLEAN = 'clean'
HARD = 'hard'
CLOSED = 'closed'
KINDS = (CLEAN, HARD, CLOSED)

FACE_WIDTH = 200
FACE_SIZE = (320, 240)

Point = Tuple[float, float]


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthEyeSpec:
    size: Tuple[int, int]
    iris: EllipseParams
    corners: Tuple[Point, Point]
    opening: float
    skin: float = 150.0
    sclera: float = 215.0
    iris_level: float = 60.0
    occlusion: float = 0.0
    noise_sigma: float = 0.0
    blur: float = 0.0
    seed: int = 0
    supersample: int = 4

    def __post_init__(self):
        for level in (self.skin, self.sclera, self.iris_level):
            if not 0.0 <= level <= 255.0:
                raise SpecError("intensity %r outside [0, 255]" % level)
        if not 0.0 <= self.occlusion <= 1.0:
            raise SpecError("occlusion fraction must lie in [0, 1], got %r" % self.occlusion)
        if self.noise_sigma < 0 or self.blur < 0 or self.opening <= 0 or self.supersample < 1:
            raise SpecError("noise, blur, opening and supersampling must be non-negative")
        width, height = self.size
        cx, cy = self.iris.centre
        ex, ey = _extent(self.iris)
        if cx - ex < 0 or cy - ey < 0 or cx + ex > width - 1 or cy + ey > height - 1:
            raise SpecError("iris ellipse %s leaves the %dx%d image" % (self.iris, width, height))

    @property
    def is_open(self) -> bool:
        return self.occlusion < 1.0

    def moved(self, dx: float, dy: float) -> 'SynthEyeSpec':
        return replace(self, iris=self.iris.translated(dx, dy))


@dataclass(frozen=True)
class SynthFaceSpec:
    size: Tuple[int, int]
    face_box: Tuple[int, int, int, int]
    eyes: Tuple[SynthEyeSpec, SynthEyeSpec]
    noise_sigma: float = 0.0
    blur: float = 0.0
    seed: int = 0

    @property
    def is_open(self) -> bool:
        return all(eye.is_open for eye in self.eyes)


class SynthTruth(NamedTuple):
    centre: Point
    ellipse: EllipseParams
    corners: Tuple[Point, Point]
    is_open: bool


class FaceTruth(NamedTuple):
    left: SynthTruth
    right: SynthTruth
    face_box: Tuple[int, int, int, int]

    @property
    def is_open(self) -> bool:
        return self.left.is_open and self.right.is_open


def _extent(e: EllipseParams) -> Tuple[float, float]:
    c, s = math.cos(e.orientation), math.sin(e.orientation)
    return math.sqrt((e.a * c) ** 2 + (e.b * s) ** 2), math.sqrt((e.a * s) ** 2 + (e.b * c) ** 2)


def _draw_eye(value: np.ndarray, X: np.ndarray, Y: np.ndarray, spec: SynthEyeSpec):
    (x1, y1), (x2, y2) = spec.corners
    mx, my = 0.5 * (x1 + x2), 0.5 * (y1 + y2)
    half = 0.5 * math.hypot(x2 - x1, y2 - y1)
    ax, ay = (x2 - x1) / (2.0 * half), (y2 - y1) / (2.0 * half)
    u = (X - mx) * ax + (Y - my) * ay
    v = -(X - mx) * ay + (Y - my) * ax
    lens = (np.abs(u) < half) & (np.abs(v) < spec.opening * (1.0 - (u / half) ** 2))

    if not spec.is_open:
        value[lens] = spec.skin
        lash = (np.abs(u) < half) & (np.abs(v) < 0.75)
        value[lash] = 0.5 * spec.skin
        return

    value[lens] = spec.sclera
    e = spec.iris
    c, s = math.cos(e.orientation), math.sin(e.orientation)
    dx, dy = X - e.centre[0], Y - e.centre[1]
    p = dx * c + dy * s
    q = -dx * s + dy * c
    iris = lens & ((p / e.a) ** 2 + (q / e.b) ** 2 < 1.0)
    value[iris] = spec.iris_level
    if spec.occlusion > 0.0:
        _, ey = _extent(e)
        lid_y = e.centre[1] - ey + spec.occlusion * 2.0 * ey
        value[lens & (Y < lid_y)] = spec.skin


def _canvas(size: Tuple[int, int], supersample: int):
    width, height = size
    xs = (np.arange(width * supersample) + 0.5) / supersample - 0.5
    ys = (np.arange(height * supersample) + 0.5) / supersample - 0.5
    return np.meshgrid(xs, ys)


def _finish(value: np.ndarray, size: Tuple[int, int], supersample: int, blur: float, noise: float,
            seed: int) -> GrayImage:
    width, height = size
    img = value.reshape(height, supersample, width, supersample).mean(axis=(1, 3))
    if blur > 0:
        img = ndimage.gaussian_filter(img, blur, mode='nearest')
    if noise > 0:
        img = img + np.random.default_rng(seed).normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 255.0)


def _truth(spec: SynthEyeSpec, dx: float = 0.0, dy: float = 0.0) -> SynthTruth:
    e = spec.iris.translated(dx, dy)
    corners = tuple((x + dx, y + dy) for x, y in spec.corners)
    return SynthTruth(centre=e.centre, ellipse=e, corners=corners, is_open=spec.is_open)


def render_eye(spec: SynthEyeSpec) -> Tuple[GrayImage, SynthTruth]:
    """Skin, sclera lens, anti-aliased iris, optional flat eyelid, then blur and noise."""
    X, Y = _canvas(spec.size, spec.supersample)
    value = np.full(X.shape, spec.skin)
    _draw_eye(value, X, Y, spec)
    img = _finish(value, spec.size, spec.supersample, spec.blur, spec.noise_sigma, spec.seed)
    return img, _truth(spec)


def render_face(spec: SynthFaceSpec) -> Tuple[GrayImage, FaceTruth]:
    """Two eyes on a skin canvas; eye specs are in image coordinates."""
    supersample = spec.eyes[0].supersample
    X, Y = _canvas(spec.size, supersample)
    value = np.full(X.shape, spec.eyes[0].skin)
    for eye in spec.eyes:
        _draw_eye(value, X, Y, eye)
    img = _finish(value, spec.size, supersample, spec.blur, spec.noise_sigma, spec.seed)
    return img, FaceTruth(left=_truth(spec.eyes[0]), right=_truth(spec.eyes[1]), face_box=spec.face_box)


def render_sequence(trajectory: Sequence[Union[SynthEyeSpec, SynthFaceSpec]]):
    """Render every frame of a trajectory; returns (frames, truths)."""
    if not trajectory:
        return [], []
    size = trajectory[0].size
    frames, truths = [], []
    for spec in trajectory:
        if spec.size != size:
            raise SpecError("frame size %s differs from %s" % (spec.size, size))
        img, truth = render_face(spec) if isinstance(spec, SynthFaceSpec) else render_eye(spec)
        frames.append(img)
        truths.append(truth)
    return frames, truths


def _with_motion(spec, dx: float, dy: float, seed: int, closed: bool):
    if isinstance(spec, SynthFaceSpec):
        eyes = tuple(_with_motion(eye, dx, dy, seed, closed) for eye in spec.eyes)
        return replace(spec, eyes=eyes, seed=seed)
    moved = spec.moved(dx, dy)
    return replace(moved, seed=seed, occlusion=1.0 if closed else spec.occlusion)


def linear_trajectory(base, n: int, velocity: Point, blinks: Sequence[int] = ()):
    """Constant-velocity iris motion; frames listed in `blinks` are rendered closed."""
    blinks = set(blinks)
    return [_with_motion(base, velocity[0] * k, velocity[1] * k, base.seed + k, k in blinks) for k in range(n)]


def circular_trajectory(base, n: int, radius: float, period: float, blinks: Sequence[int] = ()):
    blinks = set(blinks)
    out = []
    for k in range(n):
        phase = 2.0 * math.pi * k / period
        out.append(_with_motion(base, radius * math.cos(phase) - radius, radius * math.sin(phase),
                                base.seed + k, k in blinks))
    return out


def jitter_track(n: int, velocity: Point = (1.0, 0.5), sigma: float = 2.0, start: Point = (100.0, 80.0),
                 seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Constant-velocity truth and noisy measurements of it."""
    k = np.arange(n, dtype=np.float64)[:, None]
    truth = np.asarray(start, dtype=np.float64) + k * np.asarray(velocity, dtype=np.float64)
    noise = np.random.default_rng(seed).normal(0.0, sigma, truth.shape)
    return truth, truth + noise


def eye_spec(size: Tuple[int, int], centre: Point, radius: float, ratio: float = 1.0, occlusion: float = 0.0,
             noise: float = 0.0, blur: float = 0.0, seed: int = 0, half_width: Optional[float] = None,
             opening: Optional[float] = None, lens_centre: Optional[Point] = None, **levels) -> SynthEyeSpec:
    """Convenience constructor: lens around `lens_centre`, iris of `radius` foreshortened horizontally."""
    lx, ly = lens_centre if lens_centre is not None else centre
    half_width = half_width if half_width is not None else 2.2 * radius
    opening = opening if opening is not None else 1.25 * radius
    if ratio < 1.0:
        iris = EllipseParams(centre=centre, a=radius, b=radius * ratio, orientation=math.pi / 2)
    else:
        iris = EllipseParams.circle(centre, radius)
    return SynthEyeSpec(size=size, iris=iris, corners=((lx - half_width, ly), (lx + half_width, ly)),
                        opening=opening, occlusion=occlusion, noise_sigma=noise, blur=blur, seed=seed, **levels)


def face_layout(face_box, layout: EyeLayout = EyeLayout()) -> Tuple[Point, Point]:
    """Eye-ROI centres of the anthropometric layout, in image coordinates."""
    x, y, w, h = face_box
    cy = y + 0.5 * (layout.y_top + layout.y_bottom) * h
    left = x + 0.5 * (layout.left_x0 + layout.left_x1) * w
    right = x + 0.5 * (layout.right_x0 + layout.right_x1) * w
    return (left, cy), (right, cy)


def _draw_params(kind: str, rng: np.random.Generator) -> dict:
    if kind == CLEAN:
        dx = rng.uniform(-3.0, 3.0)
        return dict(dx=dx, dy=rng.uniform(-1.5, 1.5), ratio=1.0, occlusion=0.0, noise=rng.uniform(0.0, 3.0),
                    blur=rng.uniform(0.4, 0.8))
    if kind == HARD:
        dx = rng.uniform(-8.0, 8.0)
        ratio = max(0.45, 1.0 - 0.55 * abs(dx) / 8.0 * rng.uniform(0.5, 1.0))
        return dict(dx=dx, dy=rng.uniform(-2.0, 2.0), ratio=ratio, occlusion=rng.uniform(0.0, 0.45),
                    noise=rng.uniform(0.0, 12.0), blur=rng.uniform(0.0, 1.5))
    if kind == CLOSED:
        return dict(dx=rng.uniform(-3.0, 3.0), dy=0.0, ratio=1.0, occlusion=1.0, noise=rng.uniform(0.0, 6.0),
                    blur=rng.uniform(0.4, 1.0))
    raise SpecError("unknown corpus kind %r" % kind)


def face_spec(kind: str, rng: np.random.Generator, seed: int, face_width: int = FACE_WIDTH,
              size: Tuple[int, int] = FACE_SIZE) -> SynthFaceSpec:
    width, height = size
    face_box = ((width - face_width) // 2, (height - face_width) // 2, face_width, face_width)
    radius = face_width / 17.0 * rng.uniform(0.92, 1.08)
    drawn = _draw_params(kind, rng)
    levels = dict(skin=rng.uniform(135.0, 165.0), sclera=rng.uniform(200.0, 230.0),
                  iris_level=rng.uniform(40.0, 80.0))
    eyes = []
    for centre in face_layout(face_box):
        iris_centre = (centre[0] + drawn['dx'], centre[1] + drawn['dy'])
        eyes.append(eye_spec(size, iris_centre, radius, ratio=drawn['ratio'], occlusion=drawn['occlusion'],
                             lens_centre=centre, opening=1.3 * radius if kind != HARD else 1.2 * radius,
                             **levels))
    return SynthFaceSpec(size=size, face_box=face_box, eyes=tuple(eyes), noise_sigma=drawn['noise'],
                         blur=drawn['blur'], seed=seed)


def corpus(kind: str, n: int, seed: int = 0, face_width: int = FACE_WIDTH) -> List[SynthFaceSpec]:
    """Reproducible face specs of one corpus kind."""
    rng = np.random.default_rng(seed)
    return [face_spec(kind, rng, seed=int(rng.integers(2 ** 31)), face_width=face_width) for _ in range(n)]


def closure_corpus(n_open: int, n_closed: int, seed: int = 0, size: Tuple[int, int] = (66, 60)):
    """Labelled eye crops: (+1 open, -1 closed)."""
    rng = np.random.default_rng(seed)
    width, height = size
    images, labels = [], []
    for label, count in ((1, n_open), (-1, n_closed)):
        for _ in range(count):
            radius = rng.uniform(10.0, 13.0)
            centre = (width / 2.0 + rng.uniform(-6.0, 6.0), height / 2.0 + rng.uniform(-2.0, 2.0))
            occlusion = rng.uniform(0.0, 0.4) if label > 0 else 1.0
            spec = eye_spec(size, centre, radius, occlusion=occlusion, noise=rng.uniform(0.0, 8.0),
                            blur=rng.uniform(0.3, 1.2), seed=int(rng.integers(2 ** 31)),
                            lens_centre=(width / 2.0, height / 2.0), skin=rng.uniform(130.0, 170.0),
                            sclera=rng.uniform(195.0, 235.0), iris_level=rng.uniform(35.0, 85.0))
            img, _ = render_eye(spec)
            images.append(img)
            labels.append(label)
    return images, np.array(labels)
