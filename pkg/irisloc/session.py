import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from irisloc import closure, gaze, track
from irisloc.closure import SvmModel
from irisloc.config import RunConfig
from irisloc.gaze import EcIcVector
from irisloc.pipeline import LEFT, RIGHT, EyeDetection, EyeLocator
from irisloc.track import CornerTemplate, IrisTracker

log = logging.getLogger(__name__)

Point = Tuple[float, float]


@dataclass
class EyeFrame:
    detection: EyeDetection
    state: str
    kf_position: Optional[Point]
    corner: Optional[Point]

    @property
    def ecic_raw(self) -> Optional[EcIcVector]:
        if self.corner is None or not self.detection.accepted:
            return None
        return gaze.ecic(self.corner, self.detection.position)

    @property
    def ecic_filtered(self) -> Optional[EcIcVector]:
        if self.corner is None or self.kf_position is None:
            return None
        return gaze.ecic(self.corner, self.kf_position)


@dataclass
class FrameResult:
    index: int
    left: EyeFrame
    right: EyeFrame

    @property
    def eyes(self) -> Tuple[EyeFrame, EyeFrame]:
        return self.left, self.right


class _EyeSession(object):

    def __init__(self, side: str, config: RunConfig):
        self._side = side
        self._config = config
        tracker_cfg = config.tracker
        self._estimate_r = tracker_cfg.r == 0.0
        self._tracker = IrisTracker(q=tracker_cfg.q, r=track.DEFAULT_R if self._estimate_r else tracker_cfg.r)
        self._residuals: List[Point] = []
        self._template: Optional[CornerTemplate] = None

    @property
    def tracker(self) -> IrisTracker:
        return self._tracker

    def predicted(self) -> Optional[Point]:
        return self._tracker.predicted()

    def _collect_residual(self, detection: EyeDetection, state: str):
        if not self._estimate_r or not self._tracker.initialized:
            return
        if state != track.OPEN or not detection.accepted:
            return
        predicted = self._tracker.predicted()
        self._residuals.append((detection.position[0] - predicted[0], detection.position[1] - predicted[1]))
        if len(self._residuals) >= self._config.tracker.calibration_frames:
            R = track.estimate_measurement_noise(self._residuals)
            log.info("%s eye: measurement noise estimated from %d frames: %s", self._side, len(self._residuals),
                     np.diag(R))
            self._tracker.set_measurement_noise(R)
            self._estimate_r = False

    def _corner(self, frame: np.ndarray, detection: EyeDetection) -> Optional[Point]:
        if self._template is not None:
            match = track.track_template(frame, self._template)
            if match is not None:
                self._template.last_position = match.position
                return match.position
            log.info("%s corner template lost, re-detecting", self._side)
            self._template = None
        box = detection.roi
        found = gaze.detect_inner_corner(box.crop(frame), self._side)
        if found is None:
            return None
        position = (found[0] + box.x0, found[1] + box.y0)
        cfg = self._config.tracker
        self._template = CornerTemplate.capture(frame, position, cfg.template_size, cfg.ncc_threshold,
                                                cfg.search_radius)
        return position

    def step(self, frame: np.ndarray, detection: EyeDetection, model: Optional[SvmModel]) -> EyeFrame:
        state = track.OPEN
        if model is not None:
            state = closure.eye_state(detection.roi.crop(frame), model, closure.HogConfig(model.cell_size))
        self._collect_residual(detection, state)
        position = self._tracker.step(detection.result, state)
        return EyeFrame(detection=detection, state=state, kf_position=position, corner=self._corner(frame, detection))


class SequenceTracker(object):
    """Per-sequence session: detection, closure gating, Kalman smoothing and corner tracking for both eyes."""

    def __init__(self, config: RunConfig = RunConfig(), model: Optional[SvmModel] = None,
                 locator: Optional[EyeLocator] = None):
        self._config = config
        self._model = model
        self._locator = locator if locator is not None else EyeLocator(config)
        self._eyes = (_EyeSession(LEFT, config), _EyeSession(RIGHT, config))
        self._index = 0

    @property
    def config(self) -> RunConfig:
        return self._config

    @property
    def frames_seen(self) -> int:
        return self._index

    def trackers(self) -> Tuple[IrisTracker, IrisTracker]:
        return self._eyes[0].tracker, self._eyes[1].tracker

    def step(self, frame: np.ndarray, face_box) -> FrameResult:
        frame = np.asarray(frame, dtype=np.float64)
        predictions = tuple(eye.predicted() for eye in self._eyes)
        detections = self._locator.locate_eyes(frame, face_box, predictions)
        left, right = (eye.step(frame, det, self._model) for eye, det in zip(self._eyes, detections))
        result = FrameResult(index=self._index, left=left, right=right)
        self._index += 1
        return result


def track_sequence(frames: Sequence[np.ndarray], face_boxes: Sequence, config: RunConfig = RunConfig(),
                   model: Optional[SvmModel] = None) -> List[FrameResult]:
    session = SequenceTracker(config, model)
    return [session.step(frame, box) for frame, box in zip(frames, face_boxes)]


def rmse(estimates: Sequence[Optional[Point]], truth: Sequence[Point]) -> float:
    """Root-mean-square distance over frames that have an estimate."""
    pairs = [(e, t) for e, t in zip(estimates, truth) if e is not None]
    if not pairs:
        return float('nan')
    d2 = [(e[0] - t[0]) ** 2 + (e[1] - t[1]) ** 2 for e, t in pairs]
    return float(np.sqrt(np.mean(d2)))
