"""Dense image primitives: grayscale rasters, separable convolution, Gaussian
kernels, spatial gradients, Otsu thresholding and PGM file I/O.

Intensities are kept as float64 in [0, 1] internally; 8-bit only touches the
file boundary.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateDistributionError, InvalidParameterError, PgmParseError

# Rec.601 luma weights for any RGB input that reaches us.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class GrayImage:
    """Single-channel intensity raster, row-major, values in [0, 1]."""

    data: np.ndarray  # shape (height, width), float64

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @classmethod
    def from_array(cls, arr):
        """Build a validated image from any array-like of unit-range floats."""
        data = np.asarray(arr, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidParameterError(f"expected a 2-D raster, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidParameterError("image contains non-finite intensities")
        if data.min() < -1e-9 or data.max() > 1.0 + 1e-9:
            raise InvalidParameterError("intensities must lie in [0, 1]")
        return cls(np.clip(data, 0.0, 1.0))

    def validate(self):
        if self.data.ndim != 2:
            raise InvalidParameterError("image data must be 2-D")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise InvalidParameterError("intensities must lie in [0, 1]")


@dataclass
class BinaryImage:
    """Boolean raster, same layout as GrayImage."""

    mask: np.ndarray  # shape (height, width), bool

    @property
    def width(self):
        return self.mask.shape[1]

    @property
    def height(self):
        return self.mask.shape[0]


def rgb_to_gray(arr):
    """Collapse an (H, W, 3) float array to grayscale with Rec.601 luma."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidParameterError("expected an (H, W, 3) array")
    return arr @ np.array(LUMA_WEIGHTS)


def gaussian_kernel(sigma, radius):
    """Normalized 1-D Gaussian taps; 2-D smoothing is two separable passes."""
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive and finite, got {sigma}")
    if radius < 1:
        raise InvalidParameterError(f"radius must be >= 1, got {radius}")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def convolve(img, kernel, axis):
    """1-D convolution along 'horizontal' or 'vertical', clamp-to-edge borders."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or kernel.size % 2 == 0:
        raise InvalidParameterError("kernel must be 1-D with odd length")
    if axis not in ("horizontal", "vertical"):
        raise InvalidParameterError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    ax = 1 if axis == "horizontal" else 0
    out = ndimage.convolve1d(img.data, kernel, axis=ax, mode="nearest")
    return GrayImage(out)


def smooth(img, sigma, radius=None):
    """Separable Gaussian smoothing of a GrayImage."""
    if radius is None:
        radius = max(1, int(np.ceil(3.0 * sigma)))
    k = gaussian_kernel(sigma, radius)
    return convolve(convolve(img, k, "horizontal"), k, "vertical")


def spatial_gradient(img):
    """Central-difference gradients (one-sided at borders).

    Returns (gx, gy) as plain float arrays: gx ~ d/dx (columns), gy ~ d/dy (rows).
    """
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    if data.shape[0] < 3 or data.shape[1] < 3:
        raise InvalidParameterError("gradient needs at least a 3x3 image")
    gy, gx = np.gradient(data)
    return gx, gy


def otsu_threshold(values, bins=256):
    """Histogram threshold maximizing between-class variance.

    Returns the center of the best split bin; classes are bins [0..k] vs
    [k+1..]. Ties break toward the lowest qualifying threshold.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise InvalidParameterError("need at least 2 values")
    if bins < 2:
        raise InvalidParameterError("need at least 2 bins")
    lo, hi = values.min(), values.max()
    if hi - lo < 1e-12:
        raise DegenerateDistributionError("all values identical")

    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    hist = hist.astype(np.float64)
    total = hist.sum()

    w0 = np.cumsum(hist)
    w1 = total - w0
    mass0 = np.cumsum(hist * centers)
    mass1 = mass0[-1] - mass0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = mass0 / w0
        mu1 = mass1 / w1
        var_b = w0 * w1 * (mu0 - mu1) ** 2
    var_b = np.where((w0 > 0) & (w1 > 0), var_b, -np.inf)
    # last split (k = bins-1) leaves class 1 empty
    var_b[-1] = -np.inf
    if not np.isfinite(var_b).any():
        raise DegenerateDistributionError("histogram mass sits in a single bin")
    # splits through an empty histogram gap produce mathematically identical
    # variances that differ by rounding; snap to the lowest tied threshold
    v_max = var_b.max()
    best = int(np.argmax(var_b >= v_max - 1e-9 * abs(v_max)))
    return float(centers[best])


# ---------------------------------------------------------------------------
# PGM I/O
# ---------------------------------------------------------------------------


def _next_token(buf, pos):
    """Scan one whitespace-delimited token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PgmParseError("unexpected end of header", pos)
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def read_pgm(path):
    """Read a P5 (binary) or P2 (ASCII) PGM file, scaling to [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()

    magic, pos = _next_token(buf, 0)
    if magic not in (b"P5", b"P2"):
        raise PgmParseError(f"not a PGM stream (magic {magic!r})", 0)

    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise PgmParseError(f"non-numeric header field {tok!r}", pos) from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PgmParseError(f"bad dimensions {width}x{height}", pos)
    if not 0 < maxval <= 65535:
        raise PgmParseError(f"maxval {maxval} out of range (1..65535)", pos)

    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        if pos > len(buf):
            raise PgmParseError("missing payload", pos)
        if maxval > 255:
            need = 2 * count
            payload = buf[pos : pos + need]
            if len(payload) < need:
                raise PgmParseError("truncated payload", pos + len(payload))
            raw = np.frombuffer(payload, dtype=">u2").astype(np.float64)
        else:
            payload = buf[pos : pos + count]
            if len(payload) < count:
                raise PgmParseError("truncated payload", pos + len(payload))
            raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        vals = []
        for _ in range(count):
            try:
                tok, pos = _next_token(buf, pos)
            except PgmParseError:
                raise PgmParseError("truncated ASCII payload", pos) from None
            try:
                vals.append(int(tok))
            except ValueError:
                raise PgmParseError(f"non-numeric sample {tok!r}", pos) from None
        raw = np.array(vals, dtype=np.float64)

    if raw.max(initial=0.0) > maxval:
        raise PgmParseError("sample exceeds maxval", pos)
    return GrayImage((raw / maxval).reshape(height, width))


def write_pgm(img, path):
    """Write a GrayImage as binary P5 with maxval 255."""
    data = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
