import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from irisloc import imgcore
from irisloc.coarse import ConfigurationError
from irisloc.imgcore import GrayImage
from irisloc.track import CLOSED, OPEN

log = logging.getLogger(__name__)

PATCH_SIZE = 30
N_ORIENTATIONS = 8
BLOCK_CELLS = 2
L2HYS_CLIP = 0.2


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class HogConfig:
    cell_size: int = 4
    n_orientations: int = N_ORIENTATIONS
    clip: float = L2HYS_CLIP

    def __post_init__(self):
        if self.cell_size < 1 or PATCH_SIZE // self.cell_size < BLOCK_CELLS:
            raise ConfigurationError("cell size %r leaves fewer than 2x2 cells" % self.cell_size)
        if self.n_orientations != N_ORIENTATIONS:
            raise ConfigurationError("HOG uses %d orientations" % N_ORIENTATIONS)

    @property
    def n_cells(self) -> int:
        # trailing pixels that do not fill a cell are dropped
        return PATCH_SIZE // self.cell_size

    @property
    def feature_length(self) -> int:
        blocks = self.n_cells - BLOCK_CELLS + 1
        return blocks * blocks * BLOCK_CELLS * BLOCK_CELLS * self.n_orientations


@dataclass(frozen=True)
class SvmModel:
    w: np.ndarray
    b: float
    c: float
    cell_size: int = 4

    @property
    def dimension(self) -> int:
        return int(np.shape(self.w)[0])

    def decision(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.w + self.b


def preprocess_eye(roi: GrayImage) -> GrayImage:
    return imgcore.resize_bilinear(imgcore.hist_equalize(roi), PATCH_SIZE, PATCH_SIZE)


def cell_histograms(img: GrayImage, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Per-cell orientation histograms, shape (cells, cells, bins)."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (PATCH_SIZE, PATCH_SIZE):
        raise imgcore.DimensionError("HOG expects a %dx%d patch, got %s" % (PATCH_SIZE, PATCH_SIZE, img.shape))
    grad = imgcore.scharr_gradients(img)
    magnitude = grad.magnitude()
    # unsigned orientation, bin centres at (i + 0.5) * 180 / bins
    angle = np.mod(np.arctan2(grad.gy, grad.gx), math.pi)
    width = math.pi / cfg.n_orientations
    position = angle / width - 0.5
    lower = np.floor(position).astype(np.int64)
    upper_weight = position - lower
    lower_bin = np.mod(lower, cfg.n_orientations)
    upper_bin = np.mod(lower + 1, cfg.n_orientations)

    cells, size = cfg.n_cells, cfg.cell_size
    hist = np.zeros((cells, cells, cfg.n_orientations))
    span = cells * size
    cell_row = np.arange(span) // size
    rr, cc = np.meshgrid(cell_row, cell_row, indexing='ij')
    flat_cell = (rr * cells + cc).ravel()
    mag = magnitude[:span, :span].ravel()
    w_up = upper_weight[:span, :span].ravel()
    flat = hist.reshape(-1, cfg.n_orientations)
    np.add.at(flat, (flat_cell, lower_bin[:span, :span].ravel()), mag * (1.0 - w_up))
    np.add.at(flat, (flat_cell, upper_bin[:span, :span].ravel()), mag * w_up)
    return hist


def _l2hys(v: np.ndarray, clip: float, eps: float = 1e-6) -> np.ndarray:
    v = v / math.sqrt(float(v @ v) + eps * eps)
    v = np.minimum(v, clip)
    return v / math.sqrt(float(v @ v) + eps * eps)


def hog_features(img: GrayImage, cfg: HogConfig = HogConfig()) -> np.ndarray:
    hist = cell_histograms(img, cfg)
    blocks = cfg.n_cells - BLOCK_CELLS + 1
    parts = []
    for i in range(blocks):
        for j in range(blocks):
            parts.append(_l2hys(hist[i:i + BLOCK_CELLS, j:j + BLOCK_CELLS].ravel(), cfg.clip))
    return np.concatenate(parts)


def _augment(features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def svm_objective(m: SvmModel, features, labels) -> float:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    lam = 1.0 / (m.c * X.shape[0])
    margins = y * m.decision(X)
    w = np.append(m.w, m.b)
    return float(0.5 * lam * (w @ w) + np.maximum(0.0, 1.0 - margins).mean())


def svm_train(features, labels, c: float = 1.0, epochs: int = 50, seed: int = 0,
              cell_size: int = 4) -> SvmModel:
    """Pegasos stochastic subgradient descent on the primal hinge loss.

    The bias rides along as a constant feature. Weights are averaged over the
    iterates of the final epoch.
    """
    X = _augment(features)
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise TrainingError("%d feature rows for %d labels" % (X.shape[0], y.shape[0]))
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("training needs both classes")
    if c <= 0 or epochs < 1:
        raise TrainingError("need c > 0 and at least one epoch")
    n = X.shape[0]
    lam = 1.0 / (c * n)
    radius = 1.0 / math.sqrt(lam)
    rng = np.random.default_rng(seed)
    w = np.zeros(X.shape[1])
    avg = np.zeros_like(w)
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        if epoch == epochs - 1:
            avg[:] = 0.0
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[i] * (w @ X[i]) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y[i] * X[i]
            norm = math.sqrt(float(w @ w))
            if norm > radius:
                w *= radius / norm
            if epoch == epochs - 1:
                avg += w
    avg /= n
    return SvmModel(w=avg[:-1].copy(), b=float(avg[-1]), c=float(c), cell_size=cell_size)


def eye_state(roi: GrayImage, m: SvmModel, cfg: HogConfig = HogConfig()) -> str:
    features = hog_features(preprocess_eye(roi), cfg)
    if features.shape[0] != m.dimension:
        raise ConfigurationError("model expects %d features, HOG produced %d" % (m.dimension, features.shape[0]))
    return OPEN if float(m.decision(features)) >= 0.0 else CLOSED


def extract_features(rois: Sequence[GrayImage], cfg: HogConfig = HogConfig()) -> np.ndarray:
    return np.array([hog_features(preprocess_eye(roi), cfg) for roi in rois])


def cross_validate(features, labels, folds: int = 10, repeats: int = 10, c: float = 1.0, epochs: int = 50,
                   seed: int = 0) -> Tuple[float, float]:
    """Repeated k-fold accuracy, returned as (mean, standard deviation) over all folds."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] < folds:
        raise TrainingError("%d samples cannot fill %d folds" % (X.shape[0], folds))
    rng = np.random.default_rng(seed)
    scores: List[float] = []
    for repeat in range(repeats):
        order = rng.permutation(X.shape[0])
        for k, test in enumerate(np.array_split(order, folds)):
            train = np.setdiff1d(order, test)
            model = svm_train(X[train], y[train], c=c, epochs=epochs, seed=int(rng.integers(2 ** 31)))
            predicted = np.where(model.decision(X[test]) >= 0.0, 1.0, -1.0)
            scores.append(float((predicted == y[test]).mean()))
    log.info("cross-validation over %d folds: %.4f +- %.4f", len(scores), np.mean(scores), np.std(scores))
    return float(np.mean(scores)), float(np.std(scores))
