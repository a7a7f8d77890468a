import logging
from typing import NamedTuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage, signal

log = logging.getLogger(__name__)

# Rows are y, columns are x. Intensities stay float64 in [0, 255].
GrayImage = np.ndarray

SCHARR_X = np.array([[-3.0, 0.0, 3.0],
                     [-10.0, 0.0, 10.0],
                     [-3.0, 0.0, 3.0]])
SCHARR_Y = SCHARR_X.T.copy()

SPATIAL = 'spatial'
FFT = 'fft'


class DimensionError(ValueError):
    pass


class ArgumentError(ValueError):
    pass


class GradientField(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray

    @property
    def shape(self):
        return self.gx.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)


class Kernel2D(object):

    def __init__(self, data):
        data = np.asarray(data)
        if data.ndim != 2 or data.shape[0] != data.shape[1] or data.shape[0] % 2 == 0:
            raise DimensionError("kernel must be an odd square, got shape %s" % (data.shape,))
        self._data = data

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def size(self) -> int:
        return self._data.shape[0]

    @property
    def anchor(self) -> int:
        return (self.size - 1) // 2

    def at(self, m: int, n: int):
        """Coefficient at horizontal offset m and vertical offset n from the anchor."""
        return self._data[self.anchor + n, self.anchor + m]


def as_gray(data) -> GrayImage:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError("expected a non-empty 2-D raster, got shape %s" % (img.shape,))
    if img.min() < 0.0 or img.max() > 255.0:
        raise ArgumentError("intensities must lie in [0, 255]")
    return img


def luma(rgb: np.ndarray) -> GrayImage:
    rgb = np.asarray(rgb, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def load_image(path) -> GrayImage:
    """Read a PGM (P5 or plain P2) or PNG file as a float raster.

    Colour inputs are reduced with the Rec. 601 luma weights.
    """
    with Image.open(path) as im:
        if im.mode in ('RGBA', 'LA', 'P'):
            im = im.convert('RGBA' if im.mode != 'LA' else 'LA')
        arr = np.asarray(im)
    if arr.ndim == 3:
        if arr.shape[2] in (3, 4):
            arr = luma(arr[..., :3])
        else:
            arr = arr[..., 0]
    arr = arr.astype(np.float64)
    if arr.max(initial=0.0) > 255.0:
        # 16-bit PGM
        arr = arr * (255.0 / 65535.0)
    return as_gray(arr)


def save_image(img: GrayImage, path):
    Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8)).save(path)


def scharr_gradients(img: GrayImage) -> GradientField:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise DimensionError("gradients need at least a 3x3 image, got shape %s" % (img.shape,))
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    # correlation with the 3x3 stencils, interior only
    up, mid, down = img[:-2, :], img[1:-1, :], img[2:, :]
    dx = lambda a: a[:, 2:] - a[:, :-2]
    gx[1:-1, 1:-1] = 3.0 * dx(up) + 10.0 * dx(mid) + 3.0 * dx(down)
    left, centre, right = img[:, :-2], img[:, 1:-1], img[:, 2:]
    dy = lambda a: a[2:, :] - a[:-2, :]
    gy[1:-1, 1:-1] = 3.0 * dy(left) + 10.0 * dy(centre) + 3.0 * dy(right)
    return GradientField(gx, gy)


def convolve2d(img: np.ndarray, k: Union[Kernel2D, np.ndarray], mode: str = FFT) -> np.ndarray:
    """'Same'-size linear convolution with zero padding."""
    kernel = k.data if isinstance(k, Kernel2D) else np.asarray(k)
    img = np.asarray(img)
    if kernel.shape[0] > img.shape[0] or kernel.shape[1] > img.shape[1]:
        raise DimensionError("kernel %s larger than image %s" % (kernel.shape, img.shape))
    if mode == SPATIAL:
        return signal.convolve2d(img, kernel, mode='same', boundary='fill', fillvalue=0)
    if mode == FFT:
        out = signal.fftconvolve(img, kernel, mode='same')
        if not (np.iscomplexobj(img) or np.iscomplexobj(kernel)):
            out = np.real(out)
        return out
    raise ArgumentError("unknown convolution mode %r" % mode)


def full_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel-with-kernel composition."""
    return signal.convolve2d(a, b, mode='full')


def resize_bilinear(img: GrayImage, height: int, width: int) -> GrayImage:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (height, width):
        return img.copy()
    # pixel-centre alignment
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    yy, xx = np.meshgrid(np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing='ij')
    out = ndimage.map_coordinates(img, [yy, xx], order=1, mode='nearest')
    return np.clip(out, 0.0, 255.0)


def downscale(img: GrayImage, factor: float) -> GrayImage:
    if not (0.0 < factor <= 1.0):
        raise ArgumentError("scale factor must lie in (0, 1], got %r" % factor)
    h, w = np.shape(img)
    height, width = int(round(h * factor)), int(round(w * factor))
    if height < 8 or width < 8:
        raise ArgumentError("scaled image %dx%d is below the 8x8 minimum" % (width, height))
    return resize_bilinear(img, height, width)


def hist_equalize(img: GrayImage) -> GrayImage:
    img = np.asarray(img, dtype=np.float64)
    if img.size == 0:
        raise DimensionError("cannot equalize an empty image")
    levels = np.clip(np.rint(img), 0, 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    if cdf[-1] == cdf_min:
        return img.copy()
    lut = np.rint((cdf - cdf_min) / float(cdf[-1] - cdf_min) * 255.0)
    return np.clip(lut[levels], 0.0, 255.0)


def sample_bilinear(field: np.ndarray, xs, ys) -> np.ndarray:
    """Sample a surface at sub-pixel (x, y); zero outside."""
    return ndimage.map_coordinates(field, [np.asarray(ys, dtype=np.float64), np.asarray(xs, dtype=np.float64)],
                                   order=1, mode='constant', cval=0.0)


def smooth(img: GrayImage, sigma: float) -> GrayImage:
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64)
    return ndimage.gaussian_filter(np.asarray(img, dtype=np.float64), sigma, mode='nearest')


def parabolic_offset(left: float, centre: float, right: float) -> float:
    """Vertex offset in [-0.5, 0.5] of the parabola through three equally spaced samples."""
    denom = left - 2.0 * centre + right
    if denom >= 0.0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))
