"""Pyramidal Lucas-Kanade sparse optical flow."""

from dataclasses import dataclass, field

import numpy as np

from . import imgproc
from .errors import InvalidParameterError
from .features import FeaturePoint

PYRAMID_SIGMA = 1.0
MIN_EIGEN = 1e-6


@dataclass(frozen=True)
class FlowVector:
    origin: FeaturePoint
    vx: float
    vy: float
    valid: bool


@dataclass
class FlowField:
    vectors: list
    frame_interval: float = 1.0 / 60.0

    def valid_arrays(self):
        """(points Nx2, displacements Nx2) for the valid vectors."""
        pts = np.array([[v.origin.x, v.origin.y] for v in self.vectors if v.valid],
                       dtype=np.float64).reshape(-1, 2)
        vs = np.array([[v.vx, v.vy] for v in self.vectors if v.valid],
                      dtype=np.float64).reshape(-1, 2)
        return pts, vs


def build_pyramid(img, levels):
    """Level 0 is the input; each next level is smoothed and halved (floor)."""
    if levels < 1:
        raise InvalidParameterError("levels must be >= 1")
    pyr = [img]
    for _ in range(1, levels):
        prev = pyr[-1]
        nw, nh = prev.width // 2, prev.height // 2
        if nw < 16 or nh < 16:
            raise InvalidParameterError(
                f"level {len(pyr)} would be {nw}x{nh}; coarsest level must be >= 16x16")
        sm = imgproc.smooth(prev, PYRAMID_SIGMA, radius=2)
        pyr.append(imgproc.GrayImage(np.ascontiguousarray(sm.data[: 2 * nh : 2, : 2 * nw : 2])))
    return pyr


def _bilinear(data, xs, ys):
    """Sample data at float coords with clamped bilinear interpolation."""
    h, w = data.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = xs.astype(np.intp)          # xs >= 0, so truncation == floor
    y0 = ys.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    flat = data.ravel()
    b0 = y0 * w
    b1 = y1 * w
    top = flat.take(b0 + x0) * (1 - fx) + flat.take(b0 + x1) * fx
    bot = flat.take(b1 + x0) * (1 - fx) + flat.take(b1 + x1) * fx
    return top * (1 - fy) + bot * fy


def track(prev, next_, points, window=25, epsilon=0.03, max_iters=30, levels=3,
          frame_interval=1.0 / 60.0, prev_pyr=None, next_pyr=None):
    """Coarse-to-fine iterative LK solve for each feature point.

    Points whose window leaves the finest image, or whose normal matrix is
    near-singular, or that fail to converge, are marked invalid. Callers that
    track consecutive frames may pass precomputed pyramids to avoid
    rebuilding them.
    """
    if prev.width != next_.width or prev.height != next_.height:
        raise InvalidParameterError("frame dimensions differ")
    if window % 2 == 0:
        raise InvalidParameterError("window must be odd")
    if not points:
        return FlowField([], frame_interval)

    pyr_prev = prev_pyr if prev_pyr is not None else build_pyramid(prev, levels)
    pyr_next = next_pyr if next_pyr is not None else build_pyramid(next_, levels)
    grads = [imgproc.spatial_gradient(p) for p in pyr_prev]

    r = window // 2
    offs = np.arange(-r, r + 1, dtype=np.float32)
    off_x = np.tile(offs, window)          # (window*window,)
    off_y = np.repeat(offs, window)

    n = len(points)
    px = np.array([p.x for p in points])
    py = np.array([p.y for p in points])
    d = np.zeros((n, 2))                   # displacement, current-level units
    alive = np.ones(n, dtype=bool)         # conditioning ok so far
    converged = np.zeros(n, dtype=bool)

    for lvl in range(levels - 1, -1, -1):
        scale = 2.0 ** lvl
        # float32 image data: sub-pixel residuals stay far above float32
        # resolution while halving the memory traffic of the solver
        data_p = pyr_prev[lvl].data.astype(np.float32)
        data_n = pyr_next[lvl].data.astype(np.float32)
        gx, gy = (g.astype(np.float32) for g in grads[lvl])
        h, w = data_p.shape

        cx = (px / scale).astype(np.float32)
        cy = (py / scale).astype(np.float32)
        d = d * 2.0 if lvl < levels - 1 else d

        inside = (cx - r >= 0) & (cx + r <= w - 1) & (cy - r >= 0) & (cy + r <= h - 1)
        if lvl == 0:
            alive &= inside
        do = alive & inside
        if not do.any():
            continue
        idx = np.nonzero(do)[0]

        sx = cx[idx, None] + off_x[None, :]   # (m, win*win)
        sy = cy[idx, None] + off_y[None, :]
        patch_p = _bilinear(data_p, sx, sy)
        patch_gx = _bilinear(gx, sx, sy)
        patch_gy = _bilinear(gy, sx, sy)

        g11 = np.sum(patch_gx * patch_gx, axis=1)
        g12 = np.sum(patch_gx * patch_gy, axis=1)
        g22 = np.sum(patch_gy * patch_gy, axis=1)
        trace = g11 + g22
        lam_min = 0.5 * (trace - np.sqrt((g11 - g22) ** 2 + 4 * g12 * g12))
        good = lam_min >= MIN_EIGEN
        if lvl == 0:
            alive[idx[~good]] = False
        det = g11 * g22 - g12 * g12
        det = np.where(good, det, 1.0)

        dv = d[idx].astype(np.float32)
        active = good.copy()
        done = np.zeros(len(idx), dtype=bool)
        for _ in range(max_iters):
            if not active.any():
                break
            a = np.nonzero(active)[0]
            nx = sx[a] + dv[a, 0:1]
            ny = sy[a] + dv[a, 1:2]
            diff = patch_p[a] - _bilinear(data_n, nx, ny)
            b1 = np.sum(diff * patch_gx[a], axis=1)
            b2 = np.sum(diff * patch_gy[a], axis=1)
            ux = (g22[a] * b1 - g12[a] * b2) / det[a]
            uy = (-g12[a] * b1 + g11[a] * b2) / det[a]
            dv[a, 0] += ux
            dv[a, 1] += uy
            small = np.hypot(ux, uy) < epsilon
            done[a[small]] = True
            active[a[small]] = False
        d[idx] = dv
        if lvl == 0:
            # displaced window must also stay inside the frame — clamped
            # sampling at the border silently corrupts the solve
            ex = cx[idx] + dv[:, 0]
            ey = cy[idx] + dv[:, 1]
            dest_inside = ((ex - r >= 0) & (ex + r <= w - 1)
                           & (ey - r >= 0) & (ey + r <= h - 1))
            converged[idx] = done & good & dest_inside

    vectors = []
    for i, p in enumerate(points):
        ok = bool(alive[i] and converged[i])
        vectors.append(FlowVector(p, float(d[i, 0]), float(d[i, 1]), ok))
    return FlowField(vectors, frame_interval)
