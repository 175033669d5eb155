"""Evaluation metrics: accuracy, fooling ratio, L-infinity distance and
the universal image quality index (UIQI).

UIQI slides an 8x8 window with stride 1 over every channel and averages

    Q = 4 * cov(x, y) * mean(x) * mean(y)
        / ((var(x) + var(y)) * (mean(x)^2 + mean(y)^2))

over all windows. Identical windows score 1 even where the formula is
0/0; windows whose denominator vanishes while the contents differ carry
no signal and are excluded from the mean (the count of such windows is
available from ``uiqi_stats``). Biased and unbiased variance conventions
cancel in Q, so the biased form is used throughout.
"""

import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, InvalidShapeError


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise InvalidShapeError("accuracy expects two equal-length label vectors")
    if predictions.size == 0:
        raise InvalidArgumentError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def fooling_ratio(clean_predictions, adversarial_predictions):
    """Fraction of inputs whose predicted class changed under attack."""
    clean = np.asarray(clean_predictions)
    adv = np.asarray(adversarial_predictions)
    if clean.shape != adv.shape or clean.ndim != 1:
        raise InvalidShapeError("fooling_ratio expects two equal-length label vectors")
    if clean.size == 0:
        raise InvalidArgumentError("fooling ratio of an empty set is undefined")
    return float(np.mean(clean != adv))


def linf(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidShapeError("linf expects arrays of identical shape")
    return float(np.abs(a - b).max())


@dataclasses.dataclass(frozen=True)
class UiqiStats:
    mean: float
    window_count: int
    excluded_count: int


def uiqi_stats(x, y, window=8):
    """UIQI over one image pair, with window bookkeeping. Accepts (H, W) or
    (C, H, W); channels contribute their windows to a single mean."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidShapeError("uiqi expects images of identical shape")
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    if x.ndim != 3:
        raise InvalidShapeError("uiqi expects (H, W) or (C, H, W) images")
    if window < 2:
        raise InvalidArgumentError("window must be at least 2")
    if x.shape[-2] < window or x.shape[-1] < window:
        raise InvalidArgumentError("image smaller than the quality window")

    wx = sliding_window_view(x, (window, window), axis=(1, 2))
    wy = sliding_window_view(y, (window, window), axis=(1, 2))
    axis = (-2, -1)
    mx = wx.mean(axis=axis)
    my = wy.mean(axis=axis)
    vx = wx.var(axis=axis)
    vy = wy.var(axis=axis)
    cov = (wx * wy).mean(axis=axis) - mx * my

    numerator = 4.0 * cov * mx * my
    denominator = (vx + vy) * (mx * mx + my * my)
    identical = np.abs(wx - wy).max(axis=axis) == 0.0
    degenerate = denominator == 0.0

    q = np.ones_like(denominator)
    regular = ~degenerate
    q[regular] = numerator[regular] / denominator[regular]
    q[identical] = 1.0
    excluded = degenerate & ~identical

    kept = ~excluded
    count = int(kept.sum())
    if count == 0:
        raise InvalidArgumentError("every window was degenerate; UIQI is undefined")
    return UiqiStats(float(q[kept].mean()), int(q.size), int(excluded.sum()))


def uiqi(x, y, window=8):
    """Mean UIQI over all windows and channels of one image pair."""
    return uiqi_stats(x, y, window).mean


def mean_uiqi(clean_batch, adv_batch, window=8):
    """Average UIQI across an (N, C, H, W) batch of image pairs."""
    clean_batch = np.asarray(clean_batch)
    adv_batch = np.asarray(adv_batch)
    if clean_batch.shape != adv_batch.shape or clean_batch.ndim != 4:
        raise InvalidShapeError("mean_uiqi expects matching (N, C, H, W) batches")
    values = [uiqi(clean_batch[i], adv_batch[i], window) for i in range(clean_batch.shape[0])]
    return float(np.mean(values))
