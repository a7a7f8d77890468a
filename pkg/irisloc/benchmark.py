"""Normalized eye-localization error metrics, accuracy curves and resolution sweeps."""
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from irisloc import imgcore
from irisloc.coarse import ConfigurationError
from irisloc.config import DEFAULT_THRESHOLDS, RunConfig
from irisloc.pipeline import EyeLocator, face_box_from_truth
from irisloc.providers import DatasetItem

log = logging.getLogger(__name__)

WEC = 'wec'
AEC = 'aec'
BEC = 'bec'
METRICS = (WEC, AEC, BEC)

Point = Tuple[float, float]
Locator = Callable[[np.ndarray, DatasetItem], Tuple[Point, Point]]


class MetricError(ValueError):
    pass


class ErrorRecord(NamedTuple):
    d_l: float
    d_r: float
    w: float
    e_wec: float
    e_aec: float
    e_bec: float

    def metric(self, name: str) -> float:
        return getattr(self, 'e_' + name)


@dataclass(frozen=True)
class AccuracyCurve:
    metric: str
    thresholds: Tuple[float, ...]
    fraction_detected: Tuple[float, ...]

    def at(self, threshold: float) -> float:
        for t, fraction in zip(self.thresholds, self.fraction_detected):
            if abs(t - threshold) < 1e-12:
                return fraction
        raise KeyError(threshold)


class ItemResult(NamedTuple):
    name: str
    record: ErrorRecord
    det_left: Point
    det_right: Point


def wec_aec_bec(det_left: Point, det_right: Point, gt_left: Point, gt_right: Point) -> ErrorRecord:
    w = math.hypot(gt_right[0] - gt_left[0], gt_right[1] - gt_left[1])
    if w <= 0:
        raise MetricError("ground-truth eyes coincide")
    d_l = math.hypot(det_left[0] - gt_left[0], det_left[1] - gt_left[1])
    d_r = math.hypot(det_right[0] - gt_right[0], det_right[1] - gt_right[1])
    return ErrorRecord(d_l=d_l, d_r=d_r, w=w, e_wec=max(d_l, d_r) / w, e_aec=(d_l + d_r) / (2.0 * w),
                       e_bec=min(d_l, d_r) / w)


def accuracy_curve(records: Sequence[ErrorRecord], thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                   metric: str = WEC) -> AccuracyCurve:
    if metric not in METRICS:
        raise ValueError("unknown metric %r" % metric)
    values = np.array([r.metric(metric) for r in records], dtype=np.float64)
    thresholds = tuple(sorted(float(t) for t in thresholds))
    if values.size == 0:
        return AccuracyCurve(metric, thresholds, tuple(0.0 for _ in thresholds))
    return AccuracyCurve(metric, thresholds, tuple(float((values <= t).mean()) for t in thresholds))


def accuracy_curves(records: Sequence[ErrorRecord],
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> Dict[str, AccuracyCurve]:
    return {m: accuracy_curve(records, thresholds, m) for m in METRICS}


def item_face_box(item: DatasetItem, config: RunConfig):
    if item.face_box is not None:
        return item.face_box
    return face_box_from_truth(item.gt_left, item.gt_right, config.layout)


def pipeline_locator(config: RunConfig) -> Locator:
    locator = EyeLocator(config)

    def run(image, item):
        left, right = locator.locate_eyes(image, item_face_box(item, config))
        return left.position, right.position
    return run


def evaluate_item(item: DatasetItem, config: RunConfig, locator: Optional[Locator] = None) -> ItemResult:
    run = locator if locator is not None else pipeline_locator(config)
    det_left, det_right = run(item.load(), item)
    record = wec_aec_bec(det_left, det_right, item.gt_left, item.gt_right)
    return ItemResult(item.name, record, det_left, det_right)


def _evaluate_job(args):
    item, config = args
    return evaluate_item(item, config)


def evaluate(items: Sequence[DatasetItem], config: RunConfig = RunConfig(),
             locator: Optional[Locator] = None) -> List[ItemResult]:
    """Per-item errors in input order; fans out to worker processes when run.workers > 1."""
    if config.run.workers > 1 and locator is None and len(items) > 1:
        with ProcessPoolExecutor(max_workers=config.run.workers) as pool:
            results = list(pool.map(_evaluate_job, [(item, config) for item in items]))
    else:
        run = locator if locator is not None else pipeline_locator(config)
        results = [evaluate_item(item, config, run) for item in items]
    for r in results:
        if not r.record.e_bec <= r.record.e_aec <= r.record.e_wec:
            raise MetricError("metric ordering violated for %s" % r.name)
    return results


class SweepRow(NamedTuple):
    scale: float
    wec: Optional[float]
    valid: bool
    count: int


def scale_item(item: DatasetItem, scale: float, image: np.ndarray) -> DatasetItem:
    def s(p):
        return p[0] * scale, p[1] * scale
    corners = None if item.gt_corners is None else (s(item.gt_corners[0]), s(item.gt_corners[1]))
    face = None if item.face_box is None else tuple(v * scale for v in item.face_box)
    return replace(item, gt_left=s(item.gt_left), gt_right=s(item.gt_right), gt_corners=corners, face_box=face,
                   image=image)


def resolution_sweep(items: Sequence[DatasetItem], scales: Sequence[float], config: RunConfig = RunConfig(),
                     locator: Optional[Locator] = None, threshold: float = 0.05) -> List[SweepRow]:
    """WEC at `threshold` per scale, on downscaled images with ground truth scaled alike."""
    run = locator if locator is not None else pipeline_locator(config)
    originals = [item.load() for item in items]
    rows = []
    for scale in scales:
        records = []
        try:
            for item, image in zip(items, originals):
                small = image if scale == 1.0 else imgcore.downscale(image, scale)
                scaled = scale_item(item, scale, small)
                det_left, det_right = run(small, scaled)
                records.append(wec_aec_bec(det_left, det_right, scaled.gt_left, scaled.gt_right))
        except (imgcore.ArgumentError, imgcore.DimensionError, ConfigurationError) as e:
            log.warning("scale %.3f invalid: %s", scale, e)
            rows.append(SweepRow(scale=float(scale), wec=None, valid=False, count=len(items)))
            continue
        fraction = accuracy_curve(records, (threshold,), WEC).fraction_detected[0]
        rows.append(SweepRow(scale=float(scale), wec=fraction, valid=True, count=len(records)))
    return rows


def _writer(f):
    return csv.writer(f, lineterminator='\n')


def write_item_csv(results: Sequence[ItemResult], path):
    with open(path, 'w', newline='') as f:
        writer = _writer(f)
        writer.writerow(['filename', 'd_l', 'd_r', 'w', 'e_wec', 'e_aec', 'e_bec'])
        for r in results:
            writer.writerow([r.name] + ['%.6f' % v for v in r.record])


def write_summary_csv(curves: Dict[str, AccuracyCurve], path):
    with open(path, 'w', newline='') as f:
        writer = _writer(f)
        writer.writerow(['metric', 'threshold', 'fraction'])
        for metric in METRICS:
            curve = curves[metric]
            for t, fraction in zip(curve.thresholds, curve.fraction_detected):
                writer.writerow([metric, '%.6f' % t, '%.6f' % fraction])


def write_sweep_csv(rows: Sequence[SweepRow], path, threshold: float = 0.05):
    with open(path, 'w', newline='') as f:
        writer = _writer(f)
        writer.writerow(['scale', 'wec@%.2f' % threshold, 'valid'])
        for row in rows:
            writer.writerow(['%.6f' % row.scale, '' if row.wec is None else '%.6f' % row.wec,
                             int(row.valid)])


def format_table(curves: Dict[str, AccuracyCurve]) -> str:
    """Plain-text table, one row per metric, one column per threshold, in percent."""
    thresholds = curves[WEC].thresholds
    lines = ['%-6s' % 'metric' + ''.join('  e<=%.2f' % t for t in thresholds)]
    for metric in METRICS:
        lines.append('%-6s' % metric.upper()
                     + ''.join('  %7.2f' % (100.0 * f) for f in curves[metric].fraction_detected))
    return '\n'.join(lines)
