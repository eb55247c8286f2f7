"""Image decode, resize, convolution, Gaussian and oriented pyramids."""

import io
import math
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import accel


class DecodeError(ValueError):
    pass


class MalformedHeader(DecodeError):
    pass


class TruncatedPayload(DecodeError):
    pass


class UnsupportedBitDepth(DecodeError):
    pass


class ColorImage(NamedTuple):
    """Three aligned float64 planes with values in [0, 1]."""

    red: np.ndarray
    green: np.ndarray
    blue: np.ndarray

    @property
    def height(self):
        return self.red.shape[0]

    @property
    def width(self):
        return self.red.shape[1]


_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def decode_image(data: bytes) -> ColorImage:
    """Decode 8-bit PNG (gray/RGB/RGBA, alpha dropped) or binary PPM bytes."""
    if data[:8] == _PNG_MAGIC:
        return _decode_png(data)
    if data[:2] == b"P6":
        return _decode_ppm(data)
    raise MalformedHeader("not a PNG or binary PPM stream")


def _decode_png(data: bytes) -> ColorImage:
    try:
        img = Image.open(io.BytesIO(data))
        mode = img.mode
        if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise UnsupportedBitDepth(f"PNG mode {mode} is not 8-bit")
        if mode == "P":
            img = img.convert("RGB")
        img.load()
    except UnsupportedBitDepth:
        raise
    except UnidentifiedImageError as e:
        raise MalformedHeader(str(e)) from e
    except (OSError, SyntaxError, ValueError) as e:
        raise TruncatedPayload(str(e)) from e
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return ColorImage(arr.copy(), arr.copy(), arr.copy())
    if arr.shape[2] >= 3:
        return ColorImage(
            np.ascontiguousarray(arr[:, :, 0]),
            np.ascontiguousarray(arr[:, :, 1]),
            np.ascontiguousarray(arr[:, :, 2]),
        )
    # LA pair: replicate luminance, drop alpha
    p = np.ascontiguousarray(arr[:, :, 0])
    return ColorImage(p, p.copy(), p.copy())


def _decode_ppm(data: bytes) -> ColorImage:
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise MalformedHeader("PPM header ended early")
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise MalformedHeader("unterminated PPM comment")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            end = pos
            while end < len(data) and data[end : end + 1].isdigit():
                end += 1
            fields.append(int(data[pos:end]))
            pos = end
        else:
            raise MalformedHeader(f"unexpected byte {c!r} in PPM header")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MalformedHeader("missing whitespace after PPM maxval")
    pos += 1
    w, h, maxval = fields
    if w < 1 or h < 1 or maxval < 1:
        raise MalformedHeader("non-positive PPM dimensions or maxval")
    if maxval > 255:
        raise UnsupportedBitDepth("two-byte PPM samples are not supported")
    need = 3 * w * h
    raw = data[pos : pos + need]
    if len(raw) < need:
        raise TruncatedPayload(f"PPM payload has {len(raw)} of {need} bytes")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    arr = arr.astype(np.float64) / float(maxval)
    return ColorImage(
        np.ascontiguousarray(arr[:, :, 0]),
        np.ascontiguousarray(arr[:, :, 1]),
        np.ascontiguousarray(arr[:, :, 2]),
    )


def encode_heatmap_png(p: np.ndarray) -> bytes:
    """Min-max normalize a plane to 0..255 and encode as grayscale PNG."""
    p = np.asarray(p, dtype=np.float64)
    lo = float(p.min())
    hi = float(p.max())
    if hi > lo:
        q = (p - lo) / (hi - lo)
    else:
        q = np.zeros_like(p)
    img = Image.fromarray(np.round(q * 255.0).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def resize_plane(p: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resample with pixel-center alignment."""
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be positive")
    p = np.asarray(p, dtype=np.float64)
    ih, iw = p.shape
    ys = np.clip((np.arange(h) + 0.5) * (ih / h) - 0.5, 0.0, ih - 1.0)
    xs = np.clip((np.arange(w) + 0.5) * (iw / w) - 0.5, 0.0, iw - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = (1.0 - fx) * p[np.ix_(y0, x0)] + fx * p[np.ix_(y0, x1)]
    bot = (1.0 - fx) * p[np.ix_(y1, x0)] + fx * p[np.ix_(y1, x1)]
    return (1.0 - fy) * top + fy * bot


def resize_bilinear(img: ColorImage, w: int, h: int) -> ColorImage:
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be positive")
    planes = [np.clip(resize_plane(c, w, h), 0.0, 1.0) for c in img]
    return ColorImage(*planes)


def _pad_rows(a: np.ndarray, r: int) -> np.ndarray:
    if a.shape[1] == 1:
        # nothing to mirror around a single column
        return np.pad(a, ((0, 0), (r, r)), mode="edge")
    if r < a.shape[1]:
        return np.pad(a, ((0, 0), (r, r)), mode="reflect")
    # reflect cannot extend past one full mirror; tile mirrors as needed
    out = a
    while out.shape[1] <= r:
        out = np.pad(out, ((0, 0), (out.shape[1] - 1, out.shape[1] - 1)), mode="reflect")
    extra = r - (out.shape[1] - a.shape[1]) // 2
    return np.pad(out, ((0, 0), (extra, extra)), mode="reflect")


def _conv_rows(a: np.ndarray, taps: np.ndarray) -> np.ndarray:
    flipped = np.ascontiguousarray(taps[::-1], dtype=np.float64)
    r = flipped.size // 2
    if r == 0:
        return a * flipped[0]
    return accel.corr_rows(_pad_rows(a, r), flipped)


def convolve_separable(p: np.ndarray, kx, ky) -> np.ndarray:
    """2-D convolution with the separable kernel ky (vertical) x kx (horizontal).

    Borders reflect; both tap vectors must have odd length.
    """
    kx = np.asarray(kx, dtype=np.float64)
    ky = np.asarray(ky, dtype=np.float64)
    if kx.ndim != 1 or ky.ndim != 1:
        raise ValueError("taps must be 1-D")
    if kx.size % 2 == 0 or ky.size % 2 == 0:
        raise ValueError("tap counts must be odd")
    a = np.asarray(p, dtype=np.float64)
    out = _conv_rows(a, kx)
    out = _conv_rows(np.ascontiguousarray(out.T), ky).T
    return np.ascontiguousarray(out)


def gaussian_taps(sigma: float, radius: int | None = None) -> np.ndarray:
    """Sampled Gaussian, normalized to unit sum."""
    if sigma <= 0:
        return np.array([1.0])
    if radius is None:
        radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    t = np.exp(-0.5 * (x / sigma) ** 2)
    return t / t.sum()


def gaussian_blur(p: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.asarray(p, dtype=np.float64).copy()
    t = gaussian_taps(sigma)
    return convolve_separable(p, t, t)


_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _decimate2(a: np.ndarray) -> np.ndarray:
    # block-centered 2x decimation; on-grid subsampling would shift the
    # mean of a ramp by half a sample step and break DC preservation
    h, w = a.shape
    if w % 2 == 1:
        a = np.concatenate([a, a[:, -1:]], axis=1)
    a = 0.5 * (a[:, 0::2] + a[:, 1::2])
    if h % 2 == 1:
        a = np.concatenate([a, a[-1:, :]], axis=0)
    return 0.5 * (a[0::2, :] + a[1::2, :])


def gaussian_pyramid(p: np.ndarray, levels: int) -> list[np.ndarray]:
    """Level 0 is the input; each next level is binomial blur + 2x decimation."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    cur = np.asarray(p, dtype=np.float64)
    out = [cur]
    for _ in range(levels - 1):
        h, w = cur.shape
        if (h + 1) // 2 == h or (w + 1) // 2 == w:
            raise ValueError(f"image too small for {levels} pyramid levels")
        blurred = convolve_separable(cur, _BINOMIAL5, _BINOMIAL5)
        cur = np.ascontiguousarray(_decimate2(blurred))
        out.append(cur)
    return out


def _g2_basis(sigma: float = 1.0, radius: int = 4):
    """1-D factors of the three second-derivative-of-Gaussian kernels.

    Returns (smooth, first, second) taps: smooth sums to 1, first and
    second integrate to 0.  The second-derivative taps are scaled so the
    peak frequency response of the x-axis profile hits sqrt(2/3), which
    makes the four-orientation energy sum track input variance.
    """
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    z = g.sum()
    # all three factors share the same envelope normalization, otherwise
    # the 45-degree steer mixes mismatched scales and overshoots
    smooth = g / z
    first = -x / sigma**2 * g / z
    second = (x**2 / sigma**4 - 1.0 / sigma**2) * g / z
    second = second - second.mean()
    w_star = math.sqrt(2.0) / sigma
    resp = abs(np.sum(second * np.cos(w_star * x)))
    k = math.sqrt(2.0 / 3.0) / resp
    second = second * k
    # first-derivative pair must square-match the scaled second derivative
    # for the steering identity c^2 Gxx + 2cs Gxy + s^2 Gyy to hold
    first = first * math.sqrt(k)
    return smooth, first, second


def oriented_bands(p: np.ndarray) -> list[np.ndarray]:
    """Band-pass responses steered to 0, 45, 90 and 135 degrees.

    An angle of 0 means variation along x, so it fires on vertical stripes.
    """
    a = np.asarray(p, dtype=np.float64)
    smooth, first, second = _g2_basis()
    gxx = convolve_separable(a, second, smooth)
    gyy = convolve_separable(a, smooth, second)
    gxy = convolve_separable(a, first, first)
    out = []
    for o in range(4):
        th = o * math.pi / 4.0
        c, si = math.cos(th), math.sin(th)
        out.append(c * c * gxx + 2.0 * c * si * gxy + si * si * gyy)
    return out


def _subbands_raw(a: np.ndarray, scales: int) -> list[np.ndarray]:
    h, w = a.shape
    pyr = gaussian_pyramid(a, scales + 1)
    out = []
    for s in range(scales):
        for band in oriented_bands(pyr[s]):
            if s > 0:
                band = resize_plane(band, w, h)
            out.append(band)
    out.append(resize_plane(pyr[scales], w, h))
    return out


_scale_gain_cache: dict[int, np.ndarray] = {}


def _scale_gains(scales: int) -> np.ndarray:
    """Per-scale gains making total oriented energy track grating variance.

    Decimation and bilinear upsampling attenuate coarse bands, and adjacent
    scales overlap, so unit per-filter gain is not enough.  Solve a small
    linear system on probe gratings at each scale's peak frequency so the
    bank's summed squared response equals input variance at those points.
    """
    if scales in _scale_gain_cache:
        return _scale_gain_cache[scales]
    n = 32 * 2 ** (scales - 1)
    x = np.arange(n, dtype=np.float64)
    w_star = math.sqrt(2.0)
    C = np.empty((scales, scales))
    for s in range(scales):
        probe = np.tile(np.sin(w_star * x / 2.0**s), (n, 1))
        bands = _subbands_raw(probe, scales)
        v = float(np.var(probe))
        for sp in range(scales):
            C[s, sp] = sum(float(np.mean(b * b)) for b in bands[4 * sp : 4 * sp + 4]) / v
    gamma = np.linalg.solve(C, np.ones(scales))
    gains = np.sqrt(np.maximum(gamma, 0.0))
    _scale_gain_cache[scales] = gains
    return gains


def steerable_subbands(p: np.ndarray, orientations: int = 4, scales: int = 3) -> list[np.ndarray]:
    """Oriented band-pass responses at each scale plus a low-pass residual.

    Output order is scale-major: [s0/0deg, s0/45, s0/90, s0/135, s1/0, ...]
    followed by the residual, 4*3+1 = 13 planes, all at input resolution.
    An angle of 0 means variation along x, so it fires on vertical stripes.
    """
    if orientations != 4 or scales < 1:
        raise ValueError("supported bank is 4 orientations, scales >= 1")
    a = np.asarray(p, dtype=np.float64)
    if min(a.shape) < 2**scales:
        raise ValueError("image too small for requested scale count")
    gains = _scale_gains(scales)
    out = _subbands_raw(a, scales)
    for s in range(scales):
        for o in range(4):
            out[4 * s + o] = out[4 * s + o] * gains[s]
    return out


def local_energy(band: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Squared response smoothed with a Gaussian."""
    return gaussian_blur(np.asarray(band, dtype=np.float64) ** 2, sigma)
