import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from irisloc import imgcore
from irisloc.imgcore import GrayImage, Kernel2D, SCHARR_X, SCHARR_Y

log = logging.getLogger(__name__)

# Defaults used for the BioID and Gi4E runs.
DEFAULT_BETA = 2.0
DEFAULT_LAMBDA = 0.95
DEFAULT_CANDIDATES = 5
PSR_WINDOW = 11

FACE_RATIO_MIN = 1.0 / 25.0
FACE_RATIO_MAX = 1.0 / 12.0


class ConfigurationError(ValueError):
    pass


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class AnnulusParams:
    r_min: float
    r_max: float
    beta: float = DEFAULT_BETA
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise ConfigurationError("need 0 < r_min < r_max, got %r, %r" % (self.r_min, self.r_max))
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive, got %r" % self.beta)
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigurationError("lambda must lie in [0, 1], got %r" % self.lam)

    @property
    def kernel_size(self) -> int:
        return 2 * int(math.ceil(self.r_max)) + 3

    @property
    def margin(self) -> int:
        return int(math.ceil(self.r_max))

    @property
    def mid_radius(self) -> float:
        return 0.5 * (self.r_min + self.r_max)


@dataclass(frozen=True)
class KernelSet:
    o_coa: np.ndarray
    w_a: Kernel2D
    c_rcc: Kernel2D
    params: AnnulusParams

    @property
    def size(self) -> int:
        return self.c_rcc.size


@dataclass
class CorrelationSurface:
    co: np.ndarray
    gradient_term: np.ndarray
    intensity_term: np.ndarray
    params: AnnulusParams


@dataclass(frozen=True)
class PeakCandidate:
    position: Tuple[int, int]
    co_value: float
    psr: float

    @property
    def x(self) -> int:
        return self.position[0]

    @property
    def y(self) -> int:
        return self.position[1]


def _offsets(size: int):
    h = (size - 1) // 2
    n, m = np.mgrid[-h:h + 1, -h:h + 1].astype(np.float64)
    return m, n


def build_coa_kernel(p: AnnulusParams, roi_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Complex annulus operator: radially outward unit phasors weighted by 1/r.

    Orientation is atan2(n, m) over the full circle, so the kernel is odd under
    point reflection.
    """
    size = p.kernel_size
    if roi_shape is not None and (size > roi_shape[0] or size > roi_shape[1]):
        raise ConfigurationError("r_max %r needs a %dx%d kernel, ROI is %s" % (p.r_max, size, size, roi_shape))
    m, n = _offsets(size)
    r2 = m * m + n * n
    support = (r2 > p.r_min ** 2) & (r2 < p.r_max ** 2)
    r = np.sqrt(r2)
    theta = np.arctan2(n, m)
    kernel = np.zeros((size, size), dtype=np.complex128)
    kernel[support] = np.exp(1j * theta[support]) / r[support]
    return kernel


def build_weight_kernel(p: AnnulusParams) -> Kernel2D:
    m, n = _offsets(p.kernel_size)
    r2 = m * m + n * n
    data = np.zeros(r2.shape)
    disc = (r2 < p.r_max ** 2) & (r2 > 0)
    data[disc] = 1.0 / np.sqrt(r2[disc])
    # 1/r is singular at the origin; cap at the radius-1 value
    data[r2 == 0] = 1.0
    return Kernel2D(data)


def _crop_centre(a: np.ndarray, size: int) -> np.ndarray:
    off = (a.shape[0] - size) // 2
    return a[off:off + size, off:off + size]


def compose_rcc(p: AnnulusParams) -> Kernel2D:
    """Fold the Scharr derivatives into the annulus operator.

    I (*) c_rcc == beta * (I (*) S_x) (*) Re(O) + (1/beta) * (I (*) S_y) (*) Im(O)
    away from the border. The full composition only grows the support by one
    pixel, which the zero ring of the annulus kernel absorbs.
    """
    o_coa = build_coa_kernel(p)
    composed = (p.beta * imgcore.full_convolve(o_coa.real, SCHARR_X)
                + (1.0 / p.beta) * imgcore.full_convolve(o_coa.imag, SCHARR_Y))
    return Kernel2D(_crop_centre(composed, p.kernel_size))


def build_kernels(p: AnnulusParams) -> KernelSet:
    return KernelSet(o_coa=build_coa_kernel(p), w_a=build_weight_kernel(p), c_rcc=compose_rcc(p), params=p)


def normalize(surface: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Min-max scale to [0, 1]; surfaces without dynamic range map to zeros."""
    lo, hi = float(surface.min()), float(surface.max())
    if hi - lo <= rtol * max(1.0, abs(hi), abs(lo)):
        return np.zeros_like(surface)
    return (surface - lo) / (hi - lo)


def has_range(surface: np.ndarray, rtol: float = 1e-9) -> bool:
    return bool(normalize(surface, rtol).any())


def correlation_output(roi: GrayImage, ks: KernelSet, mode: str = imgcore.FFT) -> CorrelationSurface:
    roi = np.asarray(roi, dtype=np.float64)
    if roi.shape[0] < ks.size or roi.shape[1] < ks.size:
        raise imgcore.DimensionError("ROI %s is smaller than the %dx%d kernel" % (roi.shape, ks.size, ks.size))
    gradient_term = imgcore.convolve2d(roi, ks.c_rcc, mode)
    intensity_term = imgcore.convolve2d(255.0 - roi, ks.w_a, mode)
    lam = ks.params.lam
    co = lam * normalize(gradient_term) + (1.0 - lam) * normalize(intensity_term)
    return CorrelationSurface(co=co, gradient_term=gradient_term, intensity_term=intensity_term, params=ks.params)


def psr_from_window(window: np.ndarray) -> float:
    window = np.asarray(window, dtype=np.float64)
    cy, cx = window.shape[0] // 2, window.shape[1] // 2
    peak = window[cy, cx]
    mask = np.ones(window.shape, dtype=bool)
    mask[cy, cx] = False
    side = window[mask]
    sigma = side.std()
    if sigma < 1e-9:
        return 0.0
    return float((peak - side.mean()) / sigma)


def psr(cs: CorrelationSurface, at: Tuple[int, int]) -> float:
    """Peak-to-sidelobe ratio over the 11x11 window centred at `at` = (x, y)."""
    x, y = at
    h = PSR_WINDOW // 2
    rows, cols = cs.co.shape
    if x - h < 0 or y - h < 0 or x + h >= cols or y + h >= rows:
        raise BoundsError("PSR window at %s leaves the %s surface" % ((x, y), cs.co.shape))
    return psr_from_window(cs.co[y - h:y + h + 1, x - h:x + h + 1])


def _strict_maxima(co: np.ndarray, eps: float) -> np.ndarray:
    ring = np.ones((3, 3), dtype=bool)
    ring[1, 1] = False
    neighbours = ndimage.maximum_filter(co, footprint=ring, mode='constant', cval=-np.inf)
    return co > neighbours + eps


def find_candidates(cs: CorrelationSurface, k: int = DEFAULT_CANDIDATES, eps: float = 1e-9) -> List[PeakCandidate]:
    if k < 1:
        raise ValueError("candidate count must be at least 1")
    co = cs.co
    margin = max(cs.params.margin, PSR_WINDOW // 2)
    maxima = _strict_maxima(co, eps)
    maxima[:margin, :] = False
    maxima[-margin:, :] = False
    maxima[:, :margin] = False
    maxima[:, -margin:] = False
    ys, xs = np.nonzero(maxima)
    if ys.size == 0:
        return []
    # strongest k by raw value, scan order on ties
    values = co[ys, xs]
    order = np.lexsort((ys * co.shape[1] + xs, -values))[:k]
    candidates = []
    for idx in order:
        pos = (int(xs[idx]), int(ys[idx]))
        candidates.append((pos, float(values[idx]), psr(cs, pos), int(ys[idx] * co.shape[1] + xs[idx])))
    candidates.sort(key=lambda c: (-c[2], -c[1], c[3]))
    return [PeakCandidate(position=pos, co_value=value, psr=score) for pos, value, score, _ in candidates]


def radius_range_from_face(face_width: float, ratio_min: float = FACE_RATIO_MIN,
                           ratio_max: float = FACE_RATIO_MAX) -> Tuple[int, int]:
    if face_width <= 0:
        raise ConfigurationError("face width must be positive, got %r" % face_width)
    r_min = int(round(face_width * ratio_min))
    r_max = int(round(face_width * ratio_max))
    if r_min < 2:
        raise ConfigurationError("face width %r gives r_min %d below 2 pixels" % (face_width, r_min))
    if r_max <= r_min:
        raise ConfigurationError("face width %r gives an empty radius range" % face_width)
    return r_min, r_max


def coarse_ic(roi: GrayImage, p: AnnulusParams, k: int = DEFAULT_CANDIDATES, mode: str = imgcore.FFT,
              kernels: Optional[KernelSet] = None, min_psr: float = 0.0) -> Optional[PeakCandidate]:
    """Coarse iris centre in ROI coordinates, or None when nothing qualifies."""
    ks = kernels if kernels is not None else build_kernels(p)
    cs = correlation_output(roi, ks, mode)
    if not has_range(cs.gradient_term, rtol=1e-6):
        log.debug("no gradient structure in ROI %s", np.shape(roi))
        return None
    candidates = find_candidates(cs, k)
    log.debug("coarse candidates: %s", candidates)
    if not candidates:
        return None
    best = candidates[0]
    if best.psr < min_psr:
        log.debug("best PSR %.3f below gate %.3f", best.psr, min_psr)
        return None
    return best
