import math

import numpy as np

from irisloc.imgcore import GradientField
from irisloc.refine import BoundaryPoint, EllipseParams


def ellipse_image(shape, ellipse: EllipseParams, inside=60.0, outside=200.0, supersample=4):
    """Anti-aliased dark ellipse on a flat background."""
    rows, cols = shape
    xs = (np.arange(cols * supersample) + 0.5) / supersample - 0.5
    ys = (np.arange(rows * supersample) + 0.5) / supersample - 0.5
    X, Y = np.meshgrid(xs, ys)
    c, s = math.cos(ellipse.orientation), math.sin(ellipse.orientation)
    dx, dy = X - ellipse.centre[0], Y - ellipse.centre[1]
    p = dx * c + dy * s
    q = -dx * s + dy * c
    inside_mask = (p / ellipse.a) ** 2 + (q / ellipse.b) ** 2 < 1.0
    value = np.where(inside_mask, inside, outside)
    return value.reshape(rows, supersample, cols, supersample).mean(axis=(1, 3))


def disc_image(shape, centre, radius, inside=60.0, outside=200.0):
    return ellipse_image(shape, EllipseParams.circle(centre, radius), inside, outside)


def normal_field(shape, ellipse: EllipseParams) -> GradientField:
    """Gradient field equal to the ellipse's outward normal everywhere."""
    rows, cols = shape
    X, Y = np.meshgrid(np.arange(cols, dtype=np.float64), np.arange(rows, dtype=np.float64))
    normals = ellipse.normals(np.stack([X.ravel(), Y.ravel()], axis=1))
    return GradientField(normals[:, 0].reshape(shape), normals[:, 1].reshape(shape))


def boundary_points(ellipse: EllipseParams, n, noise=0.0, outliers=0, rng=None, spread=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    xy = ellipse.sample(n) + rng.normal(0.0, noise, (n, 2)) if noise > 0 else ellipse.sample(n)
    normals = ellipse.normals(ellipse.sample(n))
    cx, cy = ellipse.centre
    points = []
    for (x, y), g in zip(xy, normals):
        points.append(BoundaryPoint(angle=math.atan2(y - cy, x - cx) % (2 * math.pi),
                                    radius=math.hypot(x - cx, y - cy), position=(float(x), float(y)),
                                    gradient=(float(g[0]), float(g[1]))))
    spread = spread if spread is not None else 1.5 * ellipse.a
    for _ in range(outliers):
        x, y = cx + rng.uniform(-spread, spread), cy + rng.uniform(-spread, spread)
        phi = rng.uniform(0.0, 2 * math.pi)
        points.append(BoundaryPoint(angle=math.atan2(y - cy, x - cx) % (2 * math.pi),
                                    radius=math.hypot(x - cx, y - cy), position=(x, y),
                                    gradient=(math.cos(phi), math.sin(phi))))
    return points


def gaussian_blob(shape, centre, sigma, peak=200.0, floor=20.0):
    rows, cols = shape
    X, Y = np.meshgrid(np.arange(cols, dtype=np.float64), np.arange(rows, dtype=np.float64))
    return floor + peak * np.exp(-((X - centre[0]) ** 2 + (Y - centre[1]) ** 2) / (2.0 * sigma ** 2))
