import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from irisloc import imgcore
from irisloc.coarse import AnnulusParams, BoundsError, PeakCandidate
from irisloc.imgcore import GradientField, GrayImage

log = logging.getLogger(__name__)

COS_60 = 0.5


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryPoint:
    angle: float
    radius: float
    position: Tuple[float, float]
    gradient: Tuple[float, float]


@dataclass(frozen=True)
class EllipseParams:
    centre: Tuple[float, float]
    a: float
    b: float
    orientation: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise DegenerateFitError("ellipse axes must satisfy a >= b > 0, got %r, %r" % (self.a, self.b))

    @classmethod
    def circle(cls, centre, radius: float) -> 'EllipseParams':
        return cls(centre=(float(centre[0]), float(centre[1])), a=float(radius), b=float(radius), orientation=0.0)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return np.array([[c, -s], [s, c]])

    def quadratic_form(self) -> np.ndarray:
        rot = self.rotation()
        return rot @ np.diag([1.0 / self.a ** 2, 1.0 / self.b ** 2]) @ rot.T

    def sample(self, n: int = 256) -> np.ndarray:
        t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        local = np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=1)
        return local @ self.rotation().T + np.asarray(self.centre)

    def normals(self, points: np.ndarray) -> np.ndarray:
        """Unit outward normals of the level set through each point."""
        rel = np.asarray(points, dtype=np.float64) - np.asarray(self.centre)
        n = rel @ self.quadratic_form()
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        return n / norm

    def nearest(self, points: np.ndarray, n_samples: int = 256) -> Tuple[np.ndarray, np.ndarray]:
        """Approximate point-to-ellipse distance and the outward normal at the nearest sample."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        samples = self.sample(n_samples)
        sample_normals = self.normals(samples)
        d2 = ((pts[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
        idx = d2.argmin(axis=1)
        normal = sample_normals[idx]
        dist = np.abs(((pts - samples[idx]) * normal).sum(axis=1))
        return dist, normal

    def translated(self, dx: float, dy: float) -> 'EllipseParams':
        return EllipseParams((self.centre[0] + dx, self.centre[1] + dy), self.a, self.b, self.orientation)

    def scaled(self, factor: float) -> 'EllipseParams':
        return EllipseParams((self.centre[0] * factor, self.centre[1] * factor),
                             self.a * factor, self.b * factor, self.orientation)


@dataclass
class FitResult:
    ellipse: EllipseParams
    inliers: List[BoundaryPoint] = field(default_factory=list)
    gof: float = 0.0
    accepted: bool = False
    support: int = 0

    @property
    def centre(self) -> Tuple[float, float]:
        return self.ellipse.centre


@dataclass(frozen=True)
class RansacConfig:
    iters: int = 200
    dist_thresh: float = 1.0
    gof_threshold: float = 0.5
    min_inlier_ratio: float = 0.5
    min_axis_ratio: float = 0.4
    axis_low: float = 0.7
    axis_high: float = 1.4
    normal_samples: int = 256
    seed: int = 0
    literal_gof: bool = False

    def __post_init__(self):
        if self.iters < 1 or self.dist_thresh <= 0 or self.normal_samples < 8:
            raise ValueError("invalid RANSAC configuration %r" % (self,))


@dataclass(frozen=True)
class RefineConfig:
    n_rays: int = 64
    median_window: int = 5
    median_drop: float = 2.0
    step: float = 0.5
    edge_floor: float = 50.0
    edge_ratio: float = 0.2
    smooth_sigma: float = 1.0

    def __post_init__(self):
        if self.n_rays < 5 or self.median_window < 3 or self.median_window % 2 == 0 or self.step <= 0:
            raise ValueError("invalid refinement configuration %r" % (self,))


def _as_xy(points) -> np.ndarray:
    if len(points) and isinstance(points[0], BoundaryPoint):
        return np.array([p.position for p in points], dtype=np.float64)
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def _gradients_of(points: Sequence[BoundaryPoint]) -> np.ndarray:
    return np.array([p.gradient for p in points], dtype=np.float64).reshape(-1, 2)


def trace_boundary(roi: GrayImage, grad: GradientField, centre, p: AnnulusParams, n_rays: int = 64,
                   cfg: RefineConfig = RefineConfig()) -> List[BoundaryPoint]:
    """Starburst-style radial search for dark-to-bright edges agreeing with the ray."""
    rows, cols = np.shape(roi)
    cx, cy = float(centre[0]), float(centre[1])
    if cx < p.r_max or cy < p.r_max or cx > cols - 1 - p.r_max or cy > rows - 1 - p.r_max:
        raise BoundsError("centre %s closer than r_max=%r to the %dx%d ROI border" % ((cx, cy), p.r_max, cols, rows))

    lo, hi = 0.5 * p.r_min, 1.5 * p.r_max
    radii = np.arange(lo, hi + 1e-9, cfg.step)
    angles = 2.0 * math.pi * np.arange(n_rays) / n_rays
    ux, uy = np.cos(angles)[:, None], np.sin(angles)[:, None]
    xs, ys = cx + radii[None, :] * ux, cy + radii[None, :] * uy
    gx = imgcore.sample_bilinear(grad.gx, xs, ys)
    gy = imgcore.sample_bilinear(grad.gy, xs, ys)
    along = gx * ux + gy * uy
    magnitude = np.hypot(gx, gy)

    threshold = max(cfg.edge_floor, cfg.edge_ratio * float(along.max(initial=0.0)))
    qualifies = (along > threshold) & (along > COS_60 * magnitude)

    points = []
    for k in range(n_rays):
        if not qualifies[k].any():
            continue
        profile = np.where(qualifies[k], along[k], -np.inf)
        i = int(np.argmax(profile))
        offset = 0.0
        if 0 < i < radii.size - 1:
            offset = imgcore.parabolic_offset(along[k, i - 1], along[k, i], along[k, i + 1])
        radius = float(np.clip(radii[i] + offset * cfg.step, lo, hi))
        px, py = cx + radius * float(ux[k, 0]), cy + radius * float(uy[k, 0])
        g = np.array([imgcore.sample_bilinear(grad.gx, [px], [py])[0],
                      imgcore.sample_bilinear(grad.gy, [px], [py])[0]])
        norm = np.linalg.norm(g)
        unit = g / norm if norm > 0 else np.array([ux[k, 0], uy[k, 0]])
        points.append(BoundaryPoint(angle=float(angles[k]), radius=radius, position=(px, py),
                                    gradient=(float(unit[0]), float(unit[1]))))
    return points


def polar_median_filter(points: List[BoundaryPoint], window: int = 5, drop: float = 2.0) -> List[BoundaryPoint]:
    if window < 3 or window % 2 == 0:
        raise ValueError("median window must be odd and at least 3, got %r" % window)
    if len(points) < window:
        return list(points)
    ordered = sorted(points, key=lambda pt: pt.angle)
    radii = np.array([pt.radius for pt in ordered])
    half = window // 2
    stacked = np.stack([np.roll(radii, shift) for shift in range(-half, half + 1)])
    medians = np.median(stacked, axis=0)
    kept = []
    for pt, median in zip(ordered, medians):
        if abs(pt.radius - median) > drop:
            continue
        ux, uy = math.cos(pt.angle), math.sin(pt.angle)
        ox, oy = pt.position[0] - pt.radius * ux, pt.position[1] - pt.radius * uy
        kept.append(BoundaryPoint(angle=pt.angle, radius=float(median),
                                  position=(ox + median * ux, oy + median * uy), gradient=pt.gradient))
    return kept


def conic_to_params(conic) -> EllipseParams:
    a_, b_, c_, d_, e_, f_ = [float(v) for v in conic]
    den = b_ * b_ - 4.0 * a_ * c_
    if den >= 0:
        raise DegenerateFitError("conic is not an ellipse (discriminant %g)" % den)
    x0 = (2.0 * c_ * d_ - b_ * e_) / den
    y0 = (2.0 * a_ * e_ - b_ * d_) / den
    f0 = a_ * x0 * x0 + b_ * x0 * y0 + c_ * y0 * y0 + d_ * x0 + e_ * y0 + f_
    values, vectors = np.linalg.eigh(np.array([[a_, 0.5 * b_], [0.5 * b_, c_]]))
    with np.errstate(divide='ignore', invalid='ignore'):
        squared = -f0 / values
    if not np.all(np.isfinite(squared)) or np.any(squared <= 0):
        raise DegenerateFitError("conic has no real ellipse")
    axes = np.sqrt(squared)
    major = int(np.argmax(axes))
    direction = vectors[:, major]
    orientation = math.atan2(direction[1], direction[0]) % math.pi
    if orientation >= math.pi:
        orientation = 0.0
    return EllipseParams(centre=(x0, y0), a=float(axes[major]), b=float(axes[1 - major]), orientation=orientation)


def fit_ellipse_direct(points) -> EllipseParams:
    """Direct least-squares ellipse fit under 4AC - B^2 = 1 (numerically stable form)."""
    xy = _as_xy(points)
    if xy.shape[0] < 5:
        raise DegenerateFitError("need at least 5 points, got %d" % xy.shape[0])
    mean = xy.mean(axis=0)
    scale = float(np.sqrt(((xy - mean) ** 2).sum(axis=1).mean()))
    if scale == 0.0:
        raise DegenerateFitError("points coincide")
    x = (xy[:, 0] - mean[0]) / scale
    y = (xy[:, 1] - mean[1]) / scale

    d1 = np.stack([x * x, x * y, y * y], axis=1)
    d2 = np.stack([x, y, np.ones_like(x)], axis=1)
    s1, s2, s3 = d1.T @ d1, d1.T @ d2, d2.T @ d2
    if np.linalg.cond(s3) > 1e12:
        raise DegenerateFitError("points are collinear")
    t = -np.linalg.solve(s3, s2.T)
    m = s1 + s2 @ t
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    values, vectors = np.linalg.eig(m)
    vectors = np.real(vectors)
    constraint = 4.0 * vectors[0] * vectors[2] - vectors[1] ** 2
    good = np.nonzero(constraint > 0)[0]
    if good.size == 0:
        raise DegenerateFitError("no elliptical solution")
    pick = good[np.argmin(np.abs(np.real(values[good])))]
    a1 = vectors[:, pick]
    conic = np.concatenate([a1, t @ a1])
    return conic_to_params(conic).scaled(scale).translated(mean[0], mean[1])


def goodness_of_fit(e: EllipseParams, grad: GradientField, points: List[BoundaryPoint],
                    literal: bool = False) -> float:
    """Mean agreement of ellipse outward normals with image gradients at the inliers.

    Each term is clamped to [0, 1], so only gradients pointing outward count.
    With literal=True the sum of min(dot, 0) is returned instead.
    """
    if not points:
        raise ValueError("goodness of fit needs at least one point")
    xy = _as_xy(points)
    normals = e.normals(xy)
    g = np.stack([imgcore.sample_bilinear(grad.gx, xy[:, 0], xy[:, 1]),
                  imgcore.sample_bilinear(grad.gy, xy[:, 0], xy[:, 1])], axis=1)
    norm = np.linalg.norm(g, axis=1)
    dots = np.zeros(len(xy))
    nonzero = norm > 0
    dots[nonzero] = (normals[nonzero] * g[nonzero]).sum(axis=1) / norm[nonzero]
    if literal:
        return float(np.minimum(dots, 0.0).sum())
    return float(np.clip(dots, 0.0, 1.0).mean())


def _support(e: EllipseParams, xy: np.ndarray, grads: np.ndarray, cfg: RansacConfig) -> np.ndarray:
    dist, normal = e.nearest(xy, cfg.normal_samples)
    return (dist < cfg.dist_thresh) & ((grads * normal).sum(axis=1) > 0)


def _plausible(e: EllipseParams, p: Optional[AnnulusParams], cfg: RansacConfig) -> bool:
    if e.b / e.a < cfg.min_axis_ratio:
        return False
    if p is None:
        return True
    lo, hi = cfg.axis_low * p.r_min, cfg.axis_high * p.r_max
    return lo <= e.b and e.a <= hi


def ransac_ellipse(points: List[BoundaryPoint], grad: GradientField, cfg: RansacConfig = RansacConfig(),
                   params: Optional[AnnulusParams] = None,
                   rng: Optional[np.random.Generator] = None) -> Optional[FitResult]:
    """Gradient-aware RANSAC ellipse fit; None when no model can be formed."""
    if len(points) < 5:
        return None
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    xy = _as_xy(points)
    grads = _gradients_of(points)

    best, best_mask, best_count = None, None, -1
    for _ in range(cfg.iters):
        idx = rng.choice(len(points), size=5, replace=False)
        try:
            model = fit_ellipse_direct(xy[idx])
        except DegenerateFitError:
            continue
        mask = _support(model, xy, grads, cfg)
        count = int(mask.sum())
        if count > best_count:
            best, best_mask, best_count = model, mask, count
    if best is None:
        return None

    if best_count >= 5:
        try:
            refit = fit_ellipse_direct(xy[best_mask])
            refit_mask = _support(refit, xy, grads, cfg)
            if refit_mask.sum() >= best_count:
                best, best_mask, best_count = refit, refit_mask, int(refit_mask.sum())
        except DegenerateFitError:
            pass

    inliers = [pt for pt, keep in zip(points, best_mask) if keep]
    gof = goodness_of_fit(best, grad, inliers, literal=cfg.literal_gof) if inliers else 0.0
    accepted = (bool(inliers) and gof >= cfg.gof_threshold and len(inliers) >= 5
                and len(inliers) >= cfg.min_inlier_ratio * len(points) and _plausible(best, params, cfg))
    log.debug("RANSAC support %d/%d gof %.3f accepted %s", best_count, len(points), gof, accepted)
    return FitResult(ellipse=best, inliers=inliers, gof=gof, accepted=accepted, support=best_count)


def refine_ic(roi: GrayImage, coarse: PeakCandidate, p: AnnulusParams, cfg: RefineConfig = RefineConfig(),
              ransac: RansacConfig = RansacConfig(), grad: Optional[GradientField] = None,
              rng: Optional[np.random.Generator] = None) -> FitResult:
    if grad is None:
        grad = imgcore.scharr_gradients(imgcore.smooth(roi, cfg.smooth_sigma))
    points = trace_boundary(roi, grad, coarse.position, p, cfg.n_rays, cfg)
    points = polar_median_filter(points, cfg.median_window, cfg.median_drop)
    fit = ransac_ellipse(points, grad, ransac, params=p, rng=rng)
    fallback = EllipseParams.circle(coarse.position, p.mid_radius)
    if fit is None:
        return FitResult(ellipse=fallback)
    dx = fit.ellipse.centre[0] - coarse.position[0]
    dy = fit.ellipse.centre[1] - coarse.position[1]
    if fit.accepted and math.hypot(dx, dy) > p.r_max:
        fit.accepted = False
    if not fit.accepted:
        return FitResult(ellipse=fallback, inliers=fit.inliers, gof=fit.gof, accepted=False, support=fit.support)
    return fit
