import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from irisloc import imgcore
from irisloc.imgcore import GrayImage
from irisloc.refine import FitResult

log = logging.getLogger(__name__)

OPEN = 'open'
CLOSED = 'closed'

DEFAULT_Q = (0.05, 0.05, 0.5, 0.5)
DEFAULT_R = 1.0
DEFAULT_NCC_THRESHOLD = 0.7
DEFAULT_TEMPLATE_SIZE = 15
DEFAULT_SEARCH_RADIUS = 12

TRANSITION = np.array([[1.0, 0.0, 1.0, 0.0],
                       [0.0, 1.0, 0.0, 1.0],
                       [0.0, 0.0, 1.0, 0.0],
                       [0.0, 0.0, 0.0, 1.0]])
OBSERVATION = np.array([[1.0, 0.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0, 0.0]])


class UninitializedError(Exception):
    pass


class UndefinedScoreError(ValueError):
    pass


@dataclass(frozen=True)
class KfState:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    F: np.ndarray = field(default_factory=lambda: TRANSITION.copy())
    H: np.ndarray = field(default_factory=lambda: OBSERVATION.copy())
    update_skipped: bool = False

    @property
    def position(self) -> Tuple[float, float]:
        return float(self.x[0]), float(self.x[1])

    @property
    def velocity(self) -> Tuple[float, float]:
        return float(self.x[2]), float(self.x[3])


def kf_init(position, q: Sequence[float] = DEFAULT_Q, r=DEFAULT_R, p0: Sequence[float] = (4.0, 4.0, 25.0, 25.0),
            velocity=(0.0, 0.0)) -> KfState:
    R = np.asarray(r, dtype=np.float64)
    if R.ndim == 0:
        R = np.eye(2) * float(R)
    return KfState(x=np.array([position[0], position[1], velocity[0], velocity[1]], dtype=np.float64),
                   P=np.diag(np.asarray(p0, dtype=np.float64)), Q=np.diag(np.asarray(q, dtype=np.float64)), R=R)


def kf_predict(s: KfState) -> KfState:
    x = s.F @ s.x
    P = s.F @ s.P @ s.F.T + s.Q
    return replace(s, x=x, P=0.5 * (P + P.T), update_skipped=False)


def kf_update(s: KfState, z) -> KfState:
    z = np.asarray(z, dtype=np.float64).reshape(2)
    innovation = z - s.H @ s.x
    S = s.H @ s.P @ s.H.T + s.R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e12:
        log.warning("innovation covariance is singular, skipping update")
        return replace(s, update_skipped=True)
    K = np.linalg.solve(S.T, (s.P @ s.H.T).T).T
    x = s.x + K @ innovation
    I_KH = np.eye(4) - K @ s.H
    P = I_KH @ s.P @ I_KH.T + K @ s.R @ K.T
    return replace(s, x=x, P=0.5 * (P + P.T), update_skipped=False)


def estimate_measurement_noise(residuals) -> np.ndarray:
    """Sample covariance of detector residuals, used as R."""
    res = np.asarray(residuals, dtype=np.float64).reshape(-1, 2)
    if res.shape[0] < 2:
        raise ValueError("need at least two residuals to estimate R")
    cov = np.cov(res, rowvar=False)
    return cov + np.eye(2) * 1e-6


def ic_tracker_step(s: Optional[KfState], detection: Optional[FitResult], eye_state: str = OPEN):
    """One frame: always predict, correct only on an accepted detection of an open eye."""
    if s is None:
        raise UninitializedError("tracker has not been initialised from an accepted detection")
    s = kf_predict(s)
    if eye_state == OPEN and detection is not None and detection.accepted:
        s = kf_update(s, detection.centre)
    return s, s.position


class IrisTracker(object):
    """Single-owner Kalman session for one eye of one sequence."""

    def __init__(self, q: Sequence[float] = DEFAULT_Q, r=DEFAULT_R):
        self._q = tuple(q)
        self._r = r
        self._state: Optional[KfState] = None

    @property
    def state(self) -> Optional[KfState]:
        return self._state

    @property
    def initialized(self) -> bool:
        return self._state is not None

    def set_measurement_noise(self, R):
        self._r = R
        if self._state is not None:
            self._state = replace(self._state, R=np.asarray(R, dtype=np.float64))

    def predicted(self) -> Optional[Tuple[float, float]]:
        if self._state is None:
            return None
        return kf_predict(self._state).position

    def step(self, detection: Optional[FitResult], eye_state: str = OPEN) -> Optional[Tuple[float, float]]:
        if self._state is None:
            if eye_state == OPEN and detection is not None and detection.accepted:
                self._state = kf_init(detection.centre, self._q, self._r)
                return self._state.position
            return None
        self._state, position = ic_tracker_step(self._state, detection, eye_state)
        return position


@dataclass
class CornerTemplate:
    patch: np.ndarray
    last_position: Tuple[float, float]
    ncc_threshold: float = DEFAULT_NCC_THRESHOLD
    search_radius: int = DEFAULT_SEARCH_RADIUS

    def __post_init__(self):
        rows, cols = np.shape(self.patch)
        if rows != cols or rows % 2 == 0:
            raise ValueError("template patch must be an odd square, got %s" % (np.shape(self.patch),))

    @property
    def half(self) -> int:
        return np.shape(self.patch)[0] // 2

    @classmethod
    def capture(cls, frame: GrayImage, position, size: int = DEFAULT_TEMPLATE_SIZE,
                ncc_threshold: float = DEFAULT_NCC_THRESHOLD,
                search_radius: int = DEFAULT_SEARCH_RADIUS) -> Optional['CornerTemplate']:
        half = size // 2
        x, y = int(round(position[0])), int(round(position[1]))
        rows, cols = np.shape(frame)
        if x - half < 0 or y - half < 0 or x + half >= cols or y + half >= rows:
            return None
        patch = np.array(frame[y - half:y + half + 1, x - half:x + half + 1], dtype=np.float64)
        return cls(patch=patch, last_position=(float(position[0]), float(position[1])),
                   ncc_threshold=ncc_threshold, search_radius=search_radius)


class TemplateMatch(NamedTuple):
    position: Tuple[float, float]
    score: float


def ncc_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("patch shapes differ: %s vs %s" % (a.shape, b.shape))
    a0, b0 = a - a.mean(), b - b.mean()
    den = np.sqrt((a0 * a0).sum() * (b0 * b0).sum())
    if den <= 1e-12:
        raise UndefinedScoreError("NCC is undefined for a zero-variance patch")
    return float(np.clip((a0 * b0).sum() / den, -1.0, 1.0))


def ncc_surface(region: np.ndarray, patch: np.ndarray) -> np.ndarray:
    """Zero-mean NCC of the patch at every valid placement inside region."""
    windows = sliding_window_view(np.asarray(region, dtype=np.float64), patch.shape)
    t0 = patch - patch.mean()
    w0 = windows - windows.mean(axis=(-2, -1), keepdims=True)
    num = (w0 * t0).sum(axis=(-2, -1))
    den = np.sqrt((w0 * w0).sum(axis=(-2, -1)) * (t0 * t0).sum())
    with np.errstate(divide='ignore', invalid='ignore'):
        scores = np.where(den > 1e-12, num / den, -1.0)
    return np.clip(scores, -1.0, 1.0)


def track_template(frame: GrayImage, t: CornerTemplate) -> Optional[TemplateMatch]:
    """Exhaustive NCC search around the last position; None means reinitialise."""
    rows, cols = np.shape(frame)
    half = t.half
    lx, ly = int(round(t.last_position[0])), int(round(t.last_position[1]))
    x0 = max(lx - t.search_radius, half)
    x1 = min(lx + t.search_radius, cols - 1 - half)
    y0 = max(ly - t.search_radius, half)
    y1 = min(ly + t.search_radius, rows - 1 - half)
    if x0 > x1 or y0 > y1:
        return None
    if np.ptp(t.patch) == 0:
        return None
    region = frame[y0 - half:y1 + half + 1, x0 - half:x1 + half + 1]
    scores = ncc_surface(region, t.patch)
    iy, ix = np.unravel_index(int(np.argmax(scores)), scores.shape)
    best = float(scores[iy, ix])
    if best < t.ncc_threshold:
        log.info("template score %.3f below %.2f, reinitialising", best, t.ncc_threshold)
        return None
    dx = dy = 0.0
    if 0 < ix < scores.shape[1] - 1:
        dx = imgcore.parabolic_offset(scores[iy, ix - 1], best, scores[iy, ix + 1])
    if 0 < iy < scores.shape[0] - 1:
        dy = imgcore.parabolic_offset(scores[iy - 1, ix], best, scores[iy + 1, ix])
    return TemplateMatch(position=(x0 + ix + dx, y0 + iy + dy), score=best)
