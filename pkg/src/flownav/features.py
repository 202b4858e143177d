"""Shi-Tomasi corner detection (min-eigenvalue response)."""

import math
from dataclasses import dataclass

import numpy as np

from . import imgproc
from .errors import InvalidParameterError

# Structure-tensor window: 5x5 Gaussian weighting.
WINDOW_SIGMA = 1.5
WINDOW_RADIUS = 2
BORDER_MARGIN = 3


@dataclass(frozen=True)
class FeaturePoint:
    """Trackable image point with its min-eigenvalue corner score."""

    x: float
    y: float
    score: float = 0.0


def corner_response(img):
    """Min eigenvalue of the gradient structure tensor at every pixel."""
    gx, gy = imgproc.spatial_gradient(img)
    k = imgproc.gaussian_kernel(WINDOW_SIGMA, WINDOW_RADIUS)

    def win(a):
        out = imgproc.convolve(imgproc.GrayImage(a), k, "horizontal")
        return imgproc.convolve(out, k, "vertical").data

    sxx = win(gx * gx)
    sxy = win(gx * gy)
    syy = win(gy * gy)
    trace = sxx + syy
    delta = np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy)
    lam_min = 0.5 * (trace - delta)
    return np.maximum(lam_min, 0.0)


def detect_corners(img, max_corners=400, quality_level=0.005, min_distance=7,
                   row_range=None):
    """Select strong, well-separated corners, sorted by descending score.

    row_range optionally limits detection to rows [lo, hi) — e.g. to skip a
    featureless sky band.
    """
    if img.width < 7 or img.height < 7:
        raise InvalidParameterError("image must be at least 7x7")
    if not 0.0 < quality_level <= 1.0:
        raise InvalidParameterError("quality_level must be in (0, 1]")

    m = BORDER_MARGIN
    if row_range is not None:
        # evaluate the response only on the padded row band; the response at
        # a pixel depends on a 3-px neighbourhood, so a 5-px pad is exact
        lo, hi = max(row_range[0], 0), min(row_range[1], img.height)
        pad = 5
        y_off = max(lo - pad, 0)
        sub = corner_response(imgproc.GrayImage(img.data[y_off:hi + pad]))
        resp = np.zeros((img.height, img.width))
        resp[y_off:y_off + sub.shape[0]] = sub
    else:
        resp = corner_response(img)
    mask = np.zeros_like(resp, dtype=bool)
    mask[m:-m, m:-m] = True
    if row_range is not None:
        mask[:lo] = False
        mask[hi:] = False
    resp = np.where(mask, resp, 0.0)

    max_score = resp.max()
    if max_score <= 0.0:
        return []
    ys, xs = np.nonzero(resp >= quality_level * max_score)
    scores = resp[ys, xs]
    # deterministic ordering: score desc, then row/col
    order = np.lexsort((xs, ys, -scores))
    ys, xs, scores = ys[order], xs[order], scores[order]

    # prefilter: keep only the best candidate per cell of side
    # min_distance/sqrt(2) — any two points in such a cell conflict anyway,
    # so this is exactly equivalent to the full greedy suppression
    pre = max(1, int(min_distance / math.sqrt(2.0)))
    if pre > 1 and len(xs) > 1:
        key = (ys // pre).astype(np.int64) * (img.width // pre + 2) + xs // pre
        perm = np.argsort(key, kind="stable")
        first = np.ones(len(perm), dtype=bool)
        first[1:] = key[perm][1:] != key[perm][:-1]
        keep = np.sort(perm[first])
        ys, xs, scores = ys[keep], xs[keep], scores[keep]

    # greedy NMS on a coarse occupancy grid
    cell = max(1, int(min_distance))
    occupied = {}
    picked = []
    min_d2 = float(min_distance) ** 2
    for x, y, s in zip(xs, ys, scores):
        cx, cy = int(x) // cell, int(y) // cell
        ok = True
        for nx in (cx - 1, cx, cx + 1):
            for ny in (cy - 1, cy, cy + 1):
                for px, py in occupied.get((nx, ny), ()):
                    if (px - x) ** 2 + (py - y) ** 2 < min_d2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            picked.append(FeaturePoint(float(x), float(y), float(s)))
            occupied.setdefault((cx, cy), []).append((float(x), float(y)))
            if len(picked) >= max_corners:
                break
    return picked
