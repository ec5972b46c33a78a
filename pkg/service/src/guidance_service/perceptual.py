"""Weights-free perceptual distance: L1 over a 3-level mean-pool pyramid.

Stands in for a learned perceptual metric when no model is loaded.  The
distance per level is the mean absolute difference; levels are the image
itself plus two 2x reductions, summed.  The gradient with respect to the
first image is exact, which is what lets clients trust finite-difference
checks against this endpoint.
"""

import numpy as np

from .config import ServiceError


def _pool2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    h2, w2 = h // 2, w // 2
    trimmed = img[: 2 * h2, : 2 * w2]
    return trimmed.reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3)).reshape(
        h2, w2, *img.shape[2:])


def _unpool2(g: np.ndarray, parent_shape) -> np.ndarray:
    out = np.zeros(parent_shape, dtype=g.dtype)
    h2, w2 = g.shape[:2]
    out[: 2 * h2, : 2 * w2] = (
        np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25)
    return out


def pyramid_l1_grad(image_a: np.ndarray, image_b: np.ndarray):
    """Distance and its gradient with respect to image_a."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ServiceError(400, f"shape mismatch: {a.shape} vs {b.shape}")
    levels_a, levels_b = [a], [b]
    for _ in range(2):
        levels_a.append(_pool2(levels_a[-1]))
        levels_b.append(_pool2(levels_b[-1]))
    loss = 0.0
    level_grads = []
    for al, bl in zip(levels_a, levels_b):
        d = al - bl
        loss += float(np.mean(np.abs(d)))
        level_grads.append(np.sign(d) / d.size)
    g = level_grads[2]
    for lvl in (1, 0):
        g = _unpool2(g, levels_a[lvl].shape) + level_grads[lvl]
    return loss, g
