"""Eye-region layout and the two-stage localizer run per eye ROI."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from irisloc import coarse, imgcore, refine
from irisloc.coarse import AnnulusParams, BoundsError, KernelSet, PeakCandidate
from irisloc.config import AnnulusSection, EyeLayout, RunConfig
from irisloc.imgcore import GrayImage
from irisloc.refine import EllipseParams, FitResult

log = logging.getLogger(__name__)

LEFT = 'left'
RIGHT = 'right'

Point = Tuple[float, float]


class FaceBox(NamedTuple):
    x: float
    y: float
    w: float
    h: float


class Box(NamedTuple):
    """Integer pixel box, end-exclusive."""
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def centre(self) -> Point:
        return 0.5 * (self.x0 + self.x1 - 1), 0.5 * (self.y0 + self.y1 - 1)

    def crop(self, image: GrayImage) -> GrayImage:
        return image[self.y0:self.y1, self.x0:self.x1]

    def recentred(self, centre: Point, image_shape=None) -> 'Box':
        x0 = int(round(centre[0] - 0.5 * (self.width - 1)))
        y0 = int(round(centre[1] - 0.5 * (self.height - 1)))
        return _clip(Box(x0, y0, x0 + self.width, y0 + self.height), image_shape, keep_size=True)


def _clip(box: Box, image_shape, keep_size: bool = False) -> Box:
    if image_shape is None:
        return box
    rows, cols = image_shape[:2]
    x0, y0, x1, y1 = box
    if keep_size:
        dx = max(0, -x0) - max(0, x1 - cols)
        dy = max(0, -y0) - max(0, y1 - rows)
        x0, x1, y0, y1 = x0 + dx, x1 + dx, y0 + dy, y1 + dy
    return Box(max(0, x0), max(0, y0), min(cols, x1), min(rows, y1))


def eye_rois(face_box, layout: EyeLayout = EyeLayout(), image_shape=None) -> Tuple[Box, Box]:
    x, y, w, h = face_box
    y0 = int(math.floor(y + layout.y_top * h))
    y1 = int(math.ceil(y + layout.y_bottom * h))
    left = Box(int(math.floor(x + layout.left_x0 * w)), y0, int(math.ceil(x + layout.left_x1 * w)), y1)
    right = Box(int(math.floor(x + layout.right_x0 * w)), y0, int(math.ceil(x + layout.right_x1 * w)), y1)
    return _clip(left, image_shape), _clip(right, image_shape)


def face_box_from_truth(gt_left: Point, gt_right: Point, layout: EyeLayout = EyeLayout()) -> FaceBox:
    """Square face box that puts the given eyes on the layout's ROI centres."""
    left_c = 0.5 * (layout.left_x0 + layout.left_x1)
    right_c = 0.5 * (layout.right_x0 + layout.right_x1)
    row_c = 0.5 * (layout.y_top + layout.y_bottom)
    d = math.hypot(gt_right[0] - gt_left[0], gt_right[1] - gt_left[1])
    if d <= 0:
        raise ValueError("eye positions coincide")
    w = d / (right_c - left_c)
    mx = 0.5 * (gt_left[0] + gt_right[0])
    my = 0.5 * (gt_left[1] + gt_right[1])
    return FaceBox(mx - 0.5 * (left_c + right_c) * w, my - row_c * w, w, w)


def annulus_for_face(face_width: float, cfg: AnnulusSection = AnnulusSection()) -> AnnulusParams:
    if cfg.pinned:
        r_min, r_max = cfg.r_min, cfg.r_max
    else:
        r_min, r_max = coarse.radius_range_from_face(face_width, cfg.ratio_min, cfg.ratio_max)
    return AnnulusParams(r_min=r_min, r_max=r_max, beta=cfg.beta, lam=cfg.lam)


@dataclass
class EyeDetection:
    eye: str
    roi: Box
    position: Point
    coarse: Optional[PeakCandidate] = None
    fit: Optional[FitResult] = None

    @property
    def found(self) -> bool:
        return self.coarse is not None

    @property
    def accepted(self) -> bool:
        return self.fit is not None and self.fit.accepted

    @property
    def psr(self) -> float:
        return self.coarse.psr if self.coarse is not None else 0.0

    @property
    def ellipse(self) -> Optional[EllipseParams]:
        """Fitted ellipse in image coordinates."""
        if self.fit is None:
            return None
        return self.fit.ellipse.translated(self.roi.x0, self.roi.y0)

    @property
    def result(self) -> Optional[FitResult]:
        """The fit moved into image coordinates, as the tracker consumes it."""
        if self.fit is None:
            return None
        return FitResult(ellipse=self.ellipse, inliers=self.fit.inliers, gof=self.fit.gof,
                         accepted=self.fit.accepted, support=self.fit.support)


class EyeLocator(object):
    """Coarse correlation plus ellipse refinement, with kernels cached per radius range."""

    def __init__(self, config: RunConfig = RunConfig()):
        self._config = config
        self._kernels: Dict[AnnulusParams, KernelSet] = {}

    @property
    def config(self) -> RunConfig:
        return self._config

    def kernels(self, params: AnnulusParams) -> KernelSet:
        if params not in self._kernels:
            self._kernels[params] = coarse.build_kernels(params)
        return self._kernels[params]

    def params_for(self, face_width: float) -> AnnulusParams:
        return annulus_for_face(face_width, self._config.annulus)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng([self._config.ransac.seed, self._config.stage_seed('ransac')])

    def locate_eye(self, roi: GrayImage, params: AnnulusParams,
                   rng: Optional[np.random.Generator] = None) -> Tuple[Optional[PeakCandidate], Optional[FitResult]]:
        """Coarse and refined centre in ROI coordinates."""
        cfg = self._config
        if min(np.shape(roi)) < params.kernel_size:
            raise imgcore.DimensionError("ROI %s smaller than the %d px kernel" % (np.shape(roi), params.kernel_size))
        peak = coarse.coarse_ic(roi, params, cfg.annulus.candidates, cfg.annulus.mode, self.kernels(params),
                                cfg.annulus.min_psr)
        if peak is None:
            return None, None
        try:
            fit = refine.refine_ic(roi, peak, params, cfg.refine, cfg.ransac,
                                   rng=rng if rng is not None else self.rng())
        except BoundsError:
            log.debug("coarse peak %s too close to the ROI border to refine", peak.position)
            fit = FitResult(ellipse=EllipseParams.circle(peak.position, params.mid_radius))
        log.debug("coarse %s psr %.2f -> %s accepted=%s", peak.position, peak.psr, fit.centre, fit.accepted)
        return peak, fit

    def locate_eyes(self, image: GrayImage, face_box,
                    predictions: Optional[Tuple[Optional[Point], Optional[Point]]] = None
                    ) -> Tuple[EyeDetection, EyeDetection]:
        """Both eyes in image coordinates; a prediction re-centres that eye's ROI."""
        image = np.asarray(image, dtype=np.float64)
        params = self.params_for(face_box[2])
        boxes = eye_rois(face_box, self._config.layout, image.shape)
        out = []
        for k, (eye, box) in enumerate(zip((LEFT, RIGHT), boxes)):
            if predictions is not None and predictions[k] is not None and self._config.tracker.limit_search:
                box = box.recentred(predictions[k], image.shape)
            peak, fit = self.locate_eye(box.crop(image), params)
            if fit is None:
                position = box.centre
            else:
                position = (fit.centre[0] + box.x0, fit.centre[1] + box.y0)
            out.append(EyeDetection(eye=eye, roi=box, position=position, coarse=peak, fit=fit))
        return out[0], out[1]


def locate_eye(roi: GrayImage, params: AnnulusParams, cfg: RunConfig = RunConfig()):
    return EyeLocator(cfg).locate_eye(roi, params)


def locate_eyes(image: GrayImage, face_box, cfg: RunConfig = RunConfig()) -> Tuple[EyeDetection, EyeDetection]:
    return EyeLocator(cfg).locate_eyes(image, face_box)
