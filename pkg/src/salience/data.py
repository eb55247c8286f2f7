"""Dataset ingestion, fixation density maps, pixel sampling, splits, and a
synthetic stimulus generator with known ground truth.

Dataset root layout: images/<id>.(png|ppm), fixations/<id>.csv with header
x,y,subject in original pixel coordinates, optional extmaps/<id>.fmap, and
(for generated sets) truth/<id>.fmap holding the sampling distribution.
"""

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .fmap import write_fmap
from .imgproc import ColorImage, DecodeError, decode_image, gaussian_blur

LAYOUTS = ("generic", "mit1003", "toronto")
WORK_SIZE = (200, 200)
GENERATORS = ("disk", "texture", "objects", "interaction", "uniform", "mixed")
FIX_PER_IMAGE = 20


@dataclass(frozen=True)
class FixationSet:
    """Gaze points for one image, in original pixel coordinates."""

    x: np.ndarray
    y: np.ndarray
    subject: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        s = np.asarray(self.subject, dtype=np.int64)
        if not (x.shape == y.shape == s.shape) or x.ndim != 1 or x.size < 1:
            raise ValueError("fixation arrays must be equal-length and non-empty")
        if np.any(x < 0) or np.any(x >= self.width) or np.any(y < 0) or np.any(y >= self.height):
            raise ValueError("fixation coordinates out of image bounds")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "subject", s)

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ValueError("train and test ids overlap")
        if not self.train or not self.test:
            raise ValueError("both sides of the split must be non-empty")


@dataclass(frozen=True)
class Dataset:
    root: Path
    layout: str
    ids: tuple[str, ...]
    sizes: dict[str, tuple[int, int]]
    skipped: int

    def __len__(self) -> int:
        return len(self.ids)

    def image_path(self, image_id: str) -> Path:
        for ext in ("png", "ppm"):
            p = self.root / "images" / f"{image_id}.{ext}"
            if p.is_file():
                return p
        raise FileNotFoundError(f"no image file for id {image_id!r}")

    def image(self, image_id: str) -> ColorImage:
        return decode_image(self.image_path(image_id).read_bytes())

    def fixations(self, image_id: str) -> FixationSet:
        path = self.root / "fixations" / f"{image_id}.csv"
        if not path.is_file():
            raise FileNotFoundError(f"no fixation file for id {image_id!r}")
        w, h = self.sizes[image_id]
        return _read_fixation_csv(path, w, h)

    @property
    def extmaps_root(self) -> Path | None:
        p = self.root / "extmaps"
        return p if p.is_dir() else None


def _read_fixation_csv(path: Path, width: int, height: int) -> FixationSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty fixation file")
        if [c.strip().lower() for c in header] != ["x", "y", "subject"]:
            raise ValueError(f"{path}: expected header x,y,subject")
        xs, ys, subs = [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: malformed row {row!r}")
            xs.append(float(row[0]))
            ys.append(float(row[1]))
            subs.append(int(float(row[2])))
    return FixationSet(x=np.array(xs), y=np.array(ys), subject=np.array(subs),
                       width=width, height=height)


def load_dataset(root, layout: str = "generic") -> Dataset:
    """Enumerate decodable images; count and skip the ones that fail."""
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    root = Path(root)
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise ValueError(f"{root} has no images/ directory")
    ids, sizes, skipped = [], {}, 0
    for p in sorted(img_dir.iterdir()):
        if p.suffix.lower() not in (".png", ".ppm"):
            continue
        try:
            img = decode_image(p.read_bytes())
        except DecodeError:
            skipped += 1
            continue
        ids.append(p.stem)
        sizes[p.stem] = (img.width, img.height)
    if not ids:
        raise ValueError(f"no decodable images under {img_dir}")
    return Dataset(root=root, layout=layout, ids=tuple(ids), sizes=sizes,
                   skipped=skipped)


# ---------------------------------------------------------------------------
# Density maps and the pixel sampling protocol.

def density_map(f: FixationSet, work_size: tuple[int, int] = WORK_SIZE,
                sigma: float | None = None) -> np.ndarray:
    """Fixation impulses at working resolution, blurred and max-normalized."""
    ww, wh = work_size
    if sigma is None:
        sigma = 0.03 * min(ww, wh)
    cols = np.clip(np.floor(f.x * (ww / f.width)).astype(np.intp), 0, ww - 1)
    rows = np.clip(np.floor(f.y * (wh / f.height)).astype(np.intp), 0, wh - 1)
    counts = np.bincount(rows * ww + cols, minlength=wh * ww).astype(np.float64)
    d = gaussian_blur(counts.reshape(wh, ww), sigma)
    top = d.max()
    if top <= 0.0:
        raise ValueError("density map came out empty")
    return d / top


def sample_points(d: np.ndarray, n_pos: int = 10, n_neg: int = 10,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw (row, col) pixels from the top-20% and bottom-70% value regions.

    Returns coords (n_pos+n_neg, 2) and labels (+1 positives first).
    """
    flat = np.asarray(d, dtype=np.float64).ravel()
    hi = np.percentile(flat, 80)
    lo = np.percentile(flat, 70)
    pos_pool = np.flatnonzero(flat >= hi)
    neg_pool = np.flatnonzero(flat <= lo)
    if pos_pool.size < n_pos:
        raise ValueError(f"top region has {pos_pool.size} pixels, need {n_pos}")
    if neg_pool.size < n_neg:
        raise ValueError(f"bottom region has {neg_pool.size} pixels, need {n_neg}")
    rng = np.random.default_rng(seed)
    pos = rng.choice(pos_pool, size=n_pos, replace=False)
    neg = rng.choice(neg_pool, size=n_neg, replace=False)
    idx = np.concatenate([pos, neg])
    coords = np.stack(np.unravel_index(idx, d.shape), axis=1)
    labels = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    return coords, labels


def make_split(ds, n_train: int, seed: int = 0) -> Split:
    ids = tuple(ds.ids) if isinstance(ds, Dataset) else tuple(ds)
    if not (1 <= n_train < len(ids)):
        raise ValueError(f"n_train must be in [1, {len(ids) - 1}], got {n_train}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    train = tuple(sorted(ids[i] for i in perm[:n_train]))
    test = tuple(sorted(ids[i] for i in perm[n_train:]))
    return Split(train=train, test=test, seed=seed)


# ---------------------------------------------------------------------------
# Synthetic stimuli with known ground truth.

_PALETTE = (
    (0.9, 0.2, 0.2), (0.2, 0.9, 0.2), (0.2, 0.2, 0.9), (0.9, 0.9, 0.2),
    (0.9, 0.2, 0.9), (0.2, 0.9, 0.9), (0.95, 0.6, 0.2), (0.6, 0.3, 0.9),
)
_TRUTH_FLOOR = 0.01


def _encode_png(r, g, b) -> bytes:
    arr = np.stack([r, g, b], axis=-1)
    arr = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def _gen_disk(rng, h, w):
    radius = math.sqrt(0.05 * h * w / math.pi)
    cy = rng.uniform(radius + 2, h - radius - 2)
    cx = rng.uniform(radius + 2, w - radius - 2)
    yy, xx = np.indices((h, w))
    disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    base = 0.5 + 0.02 * rng.standard_normal((h, w))
    color = _PALETTE[rng.integers(0, 3)]
    planes = [base.copy() for _ in range(3)]
    for p, cval in zip(planes, color):
        p[disk] = cval
    truth = gaussian_blur(disk.astype(np.float64), 4.0)
    return planes, truth / truth.max() + _TRUTH_FLOOR, None


def _gen_texture(rng, h, w):
    yy, xx = np.indices((h, w))
    base = 0.5 + 0.25 * np.sin(2 * np.pi * yy / 8.0)
    side = 40
    ty = rng.integers(10, h - side - 10)
    tx = rng.integers(10, w - side - 10)
    box = (yy >= ty) & (yy < ty + side) & (xx >= tx) & (xx < tx + side)
    patch = 0.5 + 0.25 * np.sin(2 * np.pi * (yy + xx) / 8.0)
    plane = np.where(box, patch, base)
    truth = gaussian_blur(box.astype(np.float64), 4.0)
    return [plane, plane.copy(), plane.copy()], truth / truth.max() + _TRUTH_FLOOR, None


def _gen_objects(rng, h, w, ext_channels):
    yy, xx = np.indices((h, w))
    base = 0.5 + 0.02 * rng.standard_normal((h, w))
    planes = [base.copy() for _ in range(3)]
    ext = np.zeros((ext_channels, h, w), dtype=np.float32)
    union = np.zeros((h, w), dtype=bool)
    n_boxes = min(int(rng.integers(1, 3)), ext_channels)
    for ch in rng.choice(ext_channels, size=n_boxes, replace=False):
        side = int(rng.integers(30, 50))
        ty = int(rng.integers(5, h - side - 5))
        tx = int(rng.integers(5, w - side - 5))
        box = (yy >= ty) & (yy < ty + side) & (xx >= tx) & (xx < tx + side)
        color = _PALETTE[ch % len(_PALETTE)]
        for p, cval in zip(planes, color):
            p[box] = cval
        ext[ch][box] = 1.0
        union |= box
    truth = gaussian_blur(union.astype(np.float64), 4.0)
    return planes, truth / truth.max() + _TRUTH_FLOOR, ext


def _gen_interaction(rng, h, w):
    # Salient blocks pair vertical stripes with a red tint (or horizontal with
    # green); every block carries one orientation and one tint, so neither cue
    # alone ranks the fixated blocks above the mismatched ones.
    by, bx = max(2, round(h / 40)), max(2, round(w / 40))
    while True:
        vert = rng.random((by, bx)) < 0.5
        red = vert ^ (rng.random((by, bx)) < 0.8)  # matched pairs kept rare
        hot = vert == red
        if hot.any() and not hot.all():
            break
    row = np.arange(h) * by // h
    col = np.arange(w) * bx // w
    vpix = vert[row][:, col]
    yy, xx = np.indices((h, w))
    tex = np.where(vpix, np.sin(2 * np.pi * xx / 6.0), np.sin(2 * np.pi * yy / 6.0))
    lum = 0.5 + 0.2 * tex + 0.02 * rng.standard_normal((h, w))
    shift = np.where(red[row][:, col], 0.15, -0.15)
    planes = [np.clip(lum + shift, 0, 1), np.clip(lum - shift, 0, 1), np.clip(lum, 0, 1)]
    return planes, hot[row][:, col].astype(np.float64) + _TRUTH_FLOOR, None


def _gen_uniform(rng, h, w):
    base = 0.5 + 0.05 * rng.standard_normal((h, w))
    return [np.clip(base, 0, 1) for _ in range(3)], np.ones((h, w)), None


def synth_dataset(root, n_images: int, generator: str = "mixed", seed: int = 0,
                  size: tuple[int, int] = WORK_SIZE, ext_channels: int = 4,
                  fix_per_image: int = FIX_PER_IMAGE) -> Dataset:
    """Write a complete dataset root and return its handle.

    Fixations are drawn from each image's ground-truth map treated as a
    probability distribution; the map itself is kept under truth/.
    """
    if generator not in GENERATORS:
        raise ValueError(f"generator must be one of {GENERATORS}, got {generator!r}")
    if n_images < 1:
        raise ValueError("need at least one image")
    if generator in ("objects", "mixed") and ext_channels < 1:
        raise ValueError("objects generator needs at least one external channel")
    root = Path(root)
    for sub in ("images", "fixations", "truth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    wants_ext = generator in ("objects", "mixed")
    if wants_ext:
        (root / "extmaps").mkdir(exist_ok=True)
    w, h = size
    pad = max(3, len(str(n_images - 1)))
    children = np.random.SeedSequence(seed).spawn(n_images)
    for i in range(n_images):
        rng = np.random.default_rng(children[i])
        kind = generator
        if generator == "mixed":
            kind = ("disk", "texture", "objects")[i % 3]
        if kind == "disk":
            planes, truth, ext = _gen_disk(rng, h, w)
        elif kind == "texture":
            planes, truth, ext = _gen_texture(rng, h, w)
        elif kind == "objects":
            planes, truth, ext = _gen_objects(rng, h, w, ext_channels)
        elif kind == "interaction":
            planes, truth, ext = _gen_interaction(rng, h, w)
        else:
            planes, truth, ext = _gen_uniform(rng, h, w)
        image_id = f"im{i:0{pad}d}"
        (root / "images" / f"{image_id}.png").write_bytes(_encode_png(*planes))
        p = truth.ravel() / truth.sum()
        picks = rng.choice(truth.size, size=fix_per_image, replace=True, p=p)
        rows, cols = np.unravel_index(picks, truth.shape)
        with open(root / "fixations" / f"{image_id}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "subject"])
            for k in range(fix_per_image):
                writer.writerow([int(cols[k]), int(rows[k]), k])
        write_fmap(root / "truth" / f"{image_id}.fmap", truth.astype(np.float32))
        if wants_ext:
            if ext is None:
                ext = np.zeros((ext_channels, h, w), dtype=np.float32)
            write_fmap(root / "extmaps" / f"{image_id}.fmap", ext)
    return load_dataset(root, layout="generic")
