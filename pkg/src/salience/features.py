"""Per-pixel feature channels: oriented energy, center-surround conspicuity,
color statistics, scene structure stand-ins, and ingested external maps.

Every image is analyzed at a fixed 200x200 working resolution and each
channel is z-scored per image, so downstream kernels see comparable scales.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fmap import read_fmap
from .imgproc import (
    ColorImage,
    gaussian_blur,
    gaussian_pyramid,
    local_energy,
    oriented_bands,
    resize_bilinear,
    resize_plane,
    steerable_subbands,
)

WORK_SIZE = 200
GROUP_ORDER = (
    "subbands",
    "itti",
    "color",
    "horizon",
    "torralba",
    "gbvs",
    "covsal",
    "center",
    "external",
)

_CENTERS = (2, 3, 4)
_DELTAS = (3, 4)
_PYR_LEVELS = 9
_GBVS_GRID_W, _GBVS_GRID_H = 32, 24
_GBVS_TOL = 1e-9
_GBVS_MAX_ITER = 10_000
_BLOCK = 8
_BLOCK_NEIGHBORS = 24


def _intensity(img: ColorImage) -> np.ndarray:
    return (img.red + img.green + img.blue) / 3.0


def _zscore(p: np.ndarray) -> np.ndarray:
    s = p.std()
    if s < 1e-12:
        return np.zeros_like(p)
    return (p - p.mean()) / s


def _subband_energies(plane: np.ndarray) -> list[np.ndarray]:
    return [local_energy(b) for b in steerable_subbands(plane)]


# ---------------------------------------------------------------------------
# Center-surround conspicuity.

def _norm_peaks(m: np.ndarray) -> np.ndarray:
    """Rescale to [0,1] and weight by (1 - mean of non-global local maxima)^2.

    Maps with one dominant peak keep their mass; maps full of similar peaks
    are suppressed.  Flat maps go to zero.
    """
    lo, hi = m.min(), m.max()
    if hi - lo < 1e-12:
        return np.zeros_like(m)
    m = (m - lo) / (hi - lo)
    pad = np.pad(m, 1, constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(pad, (3, 3))
    peaks = m[(win.max(axis=(2, 3)) == m) & (m < 1.0 - 1e-12)]
    mbar = peaks.mean() if peaks.size else 0.0
    return m * (1.0 - mbar) ** 2


def _broadly_tuned(img: ColorImage):
    """Intensity plus red-green / blue-yellow opponent planes."""
    r, g, b = img.red, img.green, img.blue
    i = (r + g + b) / 3.0
    top = i.max()
    # hue is meaningless in near-black regions, so they are zeroed
    scale = np.where(i > 0.1 * top, np.maximum(i, 1e-12), np.inf)
    rn, gn, bn = r / scale, g / scale, b / scale
    rr = np.clip(rn - (gn + bn) / 2.0, 0.0, None)
    gg = np.clip(gn - (rn + bn) / 2.0, 0.0, None)
    bb = np.clip(bn - (rn + gn) / 2.0, 0.0, None)
    yy = np.clip((rn + gn) / 2.0 - np.abs(rn - gn) / 2.0 - bn, 0.0, None)
    return i, rr - gg, bb - yy


def _center_surround(levels: dict[int, np.ndarray], base_hw) -> list[np.ndarray]:
    bh, bw = base_hw
    out = []
    for c in _CENTERS:
        ch, cw = levels[c].shape
        for d in _DELTAS:
            sur = resize_plane(levels[c + d], cw, ch)
            out.append(resize_plane(np.abs(levels[c] - sur), bw, bh))
    return out


def itti_channels(img: ColorImage):
    """Intensity, color and orientation conspicuity maps at input size."""
    h, w = img.height, img.width
    if min(h, w) < 64:
        raise ValueError("image too small for center-surround pyramids")
    # analyze with the short side at 256 so nine pyramid levels exist
    if h <= w:
        ah, aw = 256, round(w * 256 / h)
    else:
        ah, aw = round(h * 256 / w), 256
    i, rg, by = _broadly_tuned(resize_bilinear(img, aw, ah))

    pyramids = {k: gaussian_pyramid(p, _PYR_LEVELS) for k, p in
                (("i", i), ("rg", rg), ("by", by))}
    need = range(_CENTERS[0], _CENTERS[-1] + _DELTAS[-1] + 1)
    mags: list[dict[int, np.ndarray]] = [{} for _ in range(4)]
    for lvl in need:
        for o, band in enumerate(oriented_bands(pyramids["i"][lvl])):
            mags[o][lvl] = np.abs(band)

    base_hw = pyramids["i"][4].shape
    as_dict = lambda pyr: {lvl: pyr[lvl] for lvl in need}
    c_int = sum(_norm_peaks(m) for m in _center_surround(as_dict(pyramids["i"]), base_hw))
    c_col = sum(_norm_peaks(m) for m in _center_surround(as_dict(pyramids["rg"]), base_hw))
    c_col = c_col + sum(_norm_peaks(m) for m in _center_surround(as_dict(pyramids["by"]), base_hw))
    c_ori = np.zeros(base_hw)
    for o in range(4):
        per = sum(_norm_peaks(m) for m in _center_surround(mags[o], base_hw))
        c_ori = c_ori + _norm_peaks(per)
    return tuple(resize_plane(c, w, h) for c in (c_int, c_col, c_ori))


# ---------------------------------------------------------------------------
# Color statistics.

def _joint_logp(r, g, b):
    idx = np.clip((r * 8).astype(np.intp), 0, 7) * 64
    idx += np.clip((g * 8).astype(np.intp), 0, 7) * 8
    idx += np.clip((b * 8).astype(np.intp), 0, 7)
    flat = idx.ravel()
    p = np.bincount(flat, minlength=512) / flat.size
    # a pixel's own bin is never empty, so only finite logs get indexed
    with np.errstate(divide="ignore"):
        return np.log(p)[flat].reshape(r.shape)


def _marginal_logp(c):
    flat = np.clip((c * 8).astype(np.intp), 0, 7).ravel()
    p = np.bincount(flat, minlength=8) / flat.size
    with np.errstate(divide="ignore"):
        return np.log(p)[flat].reshape(c.shape)


def color_features(img: ColorImage) -> list[np.ndarray]:
    """Raw channels, joint color rarity at five blurs, marginal rarity."""
    planes = [img.red, img.green, img.blue]
    for sigma in (0, 2, 4, 8, 16):
        if sigma == 0:
            r, g, b = img.red, img.green, img.blue
        else:
            r, g, b = (gaussian_blur(c, sigma) for c in img)
        planes.append(_joint_logp(r, g, b))
    planes.extend(_marginal_logp(c) for c in img)
    return planes


# ---------------------------------------------------------------------------
# Horizon stand-in.

def horizon_map(img: ColorImage, override: np.ndarray | None = None) -> np.ndarray:
    """Gaussian band on the row of strongest horizontal-edge energy."""
    h, w = img.height, img.width
    if override is not None:
        return _zscore(resize_plane(override, w, h))
    grad = np.gradient(_intensity(img), axis=0)
    energy = (grad * grad).sum(axis=1)
    best_rows = np.flatnonzero(energy == energy.max())
    row = best_rows[np.argmin(np.abs(best_rows - (h - 1) / 2.0))]
    sigma = 0.05 * h
    band = np.exp(-((np.arange(h) - row) ** 2) / (2.0 * sigma * sigma))
    return np.repeat(band[:, None], w, axis=1)


# ---------------------------------------------------------------------------
# Subband-energy rarity.

def _rarity_from_energies(energies: list[np.ndarray], shape) -> np.ndarray:
    v = np.stack([e.ravel() for e in energies], axis=1)
    mu = v.mean(axis=0)
    cov = np.cov(v.T, bias=True) + 1e-6 * np.eye(v.shape[1])
    chol = np.linalg.cholesky(cov)  # singular after regularization: raise
    dev = np.linalg.solve(chol, (v - mu).T)
    maha = (dev * dev).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    nll = 0.5 * maha + 0.5 * (logdet + v.shape[1] * math.log(2.0 * math.pi))
    return nll.reshape(shape)


def torralba_saliency(img: ColorImage) -> np.ndarray:
    """Negative log-likelihood of each pixel's oriented-energy vector
    under a full-covariance Gaussian fit to the image itself."""
    if min(img.height, img.width) < 64:
        raise ValueError("image too small for the subband bank")
    energies = _subband_energies(_intensity(img))
    return _rarity_from_energies(energies, (img.height, img.width))


# ---------------------------------------------------------------------------
# Graph saliency: stationary mass of a contrast-weighted random walk.

def _stationary(grid: np.ndarray) -> np.ndarray:
    gh, gw = grid.shape
    n = gh * gw
    f = grid.ravel()
    ys, xs = np.indices(grid.shape)
    ys, xs = ys.ravel().astype(np.float64), xs.ravel().astype(np.float64)
    d2 = (ys[:, None] - ys[None, :]) ** 2 + (xs[:, None] - xs[None, :]) ** 2
    sigma = gw / 8.0
    weights = np.abs(f[:, None] - f[None, :]) * np.exp(-d2 / (2.0 * sigma * sigma))
    rows = weights.sum(axis=1)
    trans = np.where(rows[:, None] > 0.0, weights / np.maximum(rows, 1e-300)[:, None], 1.0 / n)
    v = np.full(n, 1.0 / n)
    for _ in range(_GBVS_MAX_ITER):
        nv = trans.T @ v
        if np.abs(nv - v).sum() < _GBVS_TOL:
            return nv.reshape(gh, gw)
        v = nv
    raise RuntimeError("random-walk power iteration did not converge")


def _graph_from_channels(channels, out_w: int, out_h: int) -> np.ndarray:
    total = np.zeros((_GBVS_GRID_H, _GBVS_GRID_W))
    for m in channels:
        total += _stationary(resize_plane(m, _GBVS_GRID_W, _GBVS_GRID_H))
    return resize_plane(total, out_w, out_h)


def graph_saliency(img: ColorImage) -> np.ndarray:
    """Sum of per-channel stationary distributions, upsampled to input size."""
    return _graph_from_channels(itti_channels(img), img.width, img.height)


# ---------------------------------------------------------------------------
# Block-covariance contrast.

def covariance_saliency(img: ColorImage, override: np.ndarray | None = None) -> np.ndarray:
    """Mean eigen-metric distance of each 8x8 block's feature covariance
    to its 24 nearest blocks."""
    h, w = img.height, img.width
    if override is not None:
        return _zscore(resize_plane(override, w, h))
    if min(h, w) < 64:
        raise ValueError("image too small for block statistics")
    i = _intensity(img)
    feats = np.stack([
        i,
        np.abs(np.gradient(i, axis=1)),
        np.abs(np.gradient(i, axis=0)),
        img.red,
        img.green,
        img.blue,
    ])
    nby, nbx = h // _BLOCK, w // _BLOCK
    crop = feats[:, : nby * _BLOCK, : nbx * _BLOCK]
    blocks = crop.reshape(6, nby, _BLOCK, nbx, _BLOCK)
    blocks = blocks.transpose(1, 3, 0, 2, 4).reshape(nby * nbx, 6, _BLOCK * _BLOCK)
    mu = blocks.mean(axis=2, keepdims=True)
    dev = blocks - mu
    covs = dev @ dev.transpose(0, 2, 1) / (_BLOCK * _BLOCK)
    covs += 1e-6 * np.eye(6)
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as e:
        raise RuntimeError("block covariance not positive definite after regularization") from e

    nb = nby * nbx
    by, bx = np.indices((nby, nbx))
    by, bx = by.ravel().astype(np.float64), bx.ravel().astype(np.float64)
    d2 = (by[:, None] - by[None, :]) ** 2 + (bx[:, None] - bx[None, :]) ** 2
    np.fill_diagonal(d2, np.inf)
    k = min(_BLOCK_NEIGHBORS, nb - 1)
    near = np.argsort(d2, axis=1, kind="stable")[:, :k]

    lhs = chol[:, None]
    inner = np.linalg.solve(lhs, covs[near])
    white = np.linalg.solve(lhs, inner.transpose(0, 1, 3, 2))
    lam = np.clip(np.linalg.eigvalsh(white), 1e-30, None)
    dist = np.sqrt((np.log(lam) ** 2).sum(axis=2))
    return resize_plane(dist.mean(axis=1).reshape(nby, nbx), w, h)


# ---------------------------------------------------------------------------
# Center prior.

def center_map(w: int, h: int) -> np.ndarray:
    """Unit-peak isotropic Gaussian at the geometric image center."""
    if w < 1 or h < 1:
        raise ValueError("dimensions must be positive")
    sigma = 0.25 * min(w, h)
    ys = (np.arange(h) - (h - 1) / 2.0) ** 2
    xs = (np.arange(w) - (w - 1) / 2.0) ** 2
    return np.exp(-(ys[:, None] + xs[None, :]) / (2.0 * sigma * sigma))


# ---------------------------------------------------------------------------
# External response maps.

@dataclass(frozen=True)
class ExternalMapSet:
    """Directory of per-image float rasters with a fixed channel count."""

    root: Path
    channels: int

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        if self.channels < 1:
            raise ValueError("channel count must be >= 1")


def load_external_maps(ext: ExternalMapSet, image_id: str,
                       size: tuple[int, int] = (WORK_SIZE, WORK_SIZE)) -> list[np.ndarray]:
    """Read an image's raster stack and resize every channel to `size` (w, h)."""
    w, h = size
    single = ext.root / f"{image_id}.fmap"
    subdir = ext.root / str(image_id)
    if single.is_file():
        stack = read_fmap(single)
    elif subdir.is_dir():
        files = sorted(subdir.glob("*.fmap"))
        try:
            order = sorted(files, key=lambda p: int(p.stem))
        except ValueError:
            raise ValueError(f"channel files under {subdir} must be named <index>.fmap")
        if [int(p.stem) for p in order] != list(range(len(order))) or not order:
            raise ValueError(f"channel indices under {subdir} must be 0..{ext.channels - 1}")
        planes = []
        for p in order:
            raster = read_fmap(p)
            if raster.shape[0] != 1:
                raise ValueError(f"{p} holds {raster.shape[0]} channels, expected 1")
            planes.append(raster[0])
        stack = np.stack(planes)
    else:
        raise FileNotFoundError(f"no external maps for {image_id!r} under {ext.root}")
    if stack.shape[0] != ext.channels:
        raise ValueError(f"expected {ext.channels} external channels, found {stack.shape[0]}")
    return [resize_plane(p.astype(np.float64), w, h) for p in stack]


# ---------------------------------------------------------------------------
# Stack assembly.

@dataclass(frozen=True)
class FeatureConfig:
    subbands: bool = True
    itti: bool = True
    color: bool = True
    horizon: bool = True
    torralba: bool = True
    gbvs: bool = True
    covsal: bool = True
    center: bool = True

    def enabled(self) -> tuple[str, ...]:
        return tuple(n for n in GROUP_ORDER[:-1] if getattr(self, n))


@dataclass(frozen=True)
class FeatureStack:
    """Z-scored channel planes with named, contiguous group spans."""

    planes: np.ndarray
    groups: dict[str, tuple[int, int]]

    def __post_init__(self):
        if self.planes.ndim != 3:
            raise ValueError("planes must be (channels, height, width)")
        for name, (a, b) in self.groups.items():
            if not (0 <= a < b <= self.planes.shape[0]):
                raise ValueError(f"group {name!r} span ({a},{b}) out of range")

    @property
    def n_channels(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def rows(self, coords: np.ndarray) -> np.ndarray:
        """Feature vectors at (row, col) pixel coordinates, shape (n, channels)."""
        coords = np.asarray(coords)
        return self.planes[:, coords[:, 0], coords[:, 1]].T


def build_stack(img: ColorImage, config: FeatureConfig = FeatureConfig(),
                external: list[np.ndarray] | None = None) -> FeatureStack:
    """Extract every enabled group at working resolution and z-score it."""
    ext = list(external) if external else []
    if not config.enabled() and not ext:
        raise ValueError("no feature groups enabled")
    im = resize_bilinear(img, WORK_SIZE, WORK_SIZE)

    energies = None
    if config.subbands or config.torralba:
        energies = _subband_energies(_intensity(im))
    conspicuity = None
    if config.itti or config.gbvs:
        conspicuity = itti_channels(im)

    parts: list[tuple[str, list[np.ndarray]]] = []
    if config.subbands:
        parts.append(("subbands", energies))
    if config.itti:
        parts.append(("itti", list(conspicuity)))
    if config.color:
        parts.append(("color", color_features(im)))
    if config.horizon:
        parts.append(("horizon", [horizon_map(im)]))
    if config.torralba:
        parts.append(("torralba", [_rarity_from_energies(energies, (WORK_SIZE, WORK_SIZE))]))
    if config.gbvs:
        parts.append(("gbvs", [_graph_from_channels(conspicuity, WORK_SIZE, WORK_SIZE)]))
    if config.covsal:
        parts.append(("covsal", [covariance_saliency(im)]))
    if config.center:
        parts.append(("center", [center_map(WORK_SIZE, WORK_SIZE)]))
    if ext:
        resized = [p if p.shape == (WORK_SIZE, WORK_SIZE)
                   else resize_plane(p, WORK_SIZE, WORK_SIZE) for p in ext]
        parts.append(("external", resized))

    planes, groups, at = [], {}, 0
    for name, group_planes in parts:
        groups[name] = (at, at + len(group_planes))
        at += len(group_planes)
        planes.extend(_zscore(np.asarray(p, dtype=np.float64)) for p in group_planes)
    return FeatureStack(planes=np.stack(planes), groups=groups)
