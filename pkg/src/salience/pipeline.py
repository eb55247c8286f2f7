"""End-to-end glue: cached feature stacks, training-set assembly, one
train/predict entry point per method.

Cached stacks are stored as float32 rasters. When a cache directory is in
use, freshly built stacks are written and re-read before use, so scores do
not depend on whether the cache was warm.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boosting import BoostModel, boost_score_many, boost_train
from .data import Dataset, density_map, sample_points
from .features import (
    ExternalMapSet,
    FeatureConfig,
    FeatureStack,
    build_stack,
    load_external_maps,
)
from .fmap import read_fmap, write_fmap
from .imgproc import gaussian_blur, resize_plane
from .kernels import (
    KernelSpec,
    cross_gram,
    default_gamma,
    gram,
    normalize_cross,
    normalize_spherical,
    self_kernel_diag,
)
from .mkl import KernelBank, MklModel, lmkl_train, mkl_decision_many, nlmkl_train, rbmkl_train
from .samples import SampleSet
from .svm import LinearModel, linear_decision, linear_svm_train

METHODS = ("linear-svm", "adaboost", "rbmkl", "nlmkl", "lmkl")

_GROUP_SIZES = {
    "subbands": 13,
    "itti": 3,
    "color": 11,
    "horizon": 1,
    "torralba": 1,
    "gbvs": 1,
    "covsal": 1,
    "center": 1,
}

PARAM_DEFAULTS = {
    "c": 1.0,
    "rounds": 200,
    "tol": 1e-3,
    "degree": 2,
    "lam": 1.0,
    "gating": None,
    "gamma_scale": None,
}


def stack_layout(config: FeatureConfig, n_external: int = 0) -> dict:
    """Group spans of a stack built with this config, without building it."""
    groups, at = {}, 0
    for name in config.enabled():
        size = _GROUP_SIZES[name]
        groups[name] = (at, at + size)
        at += size
    if n_external > 0:
        groups["external"] = (at, at + n_external)
    if not groups:
        raise ValueError("no feature groups enabled")
    return groups


def config_tag(config: FeatureConfig, n_external: int = 0) -> str:
    key = repr((config.enabled(), int(n_external)))
    return hashlib.sha256(key.encode()).hexdigest()[:12]


def external_channels(ds: Dataset) -> int:
    """Channel count shared by the dataset's external maps, 0 when absent."""
    root = ds.extmaps_root
    if root is None:
        return 0
    files = sorted(root.glob("*.fmap"))
    if not files:
        return 0
    return read_fmap(files[0]).shape[0]


def load_stack(ds: Dataset, image_id: str, config: FeatureConfig,
               cache_dir=None, n_ext: int | None = None) -> FeatureStack:
    if n_ext is None:
        n_ext = external_channels(ds)
    groups = stack_layout(config, n_ext)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{image_id}.{config_tag(config, n_ext)}.fmap"
        if path.is_file():
            planes = read_fmap(path).astype(np.float64)
            if planes.shape[0] != max(b for _, b in groups.values()):
                raise ValueError(f"cached stack {path} does not match the config")
            return FeatureStack(planes=planes, groups=groups)
    external = None
    if n_ext > 0:
        ext = ExternalMapSet(root=ds.extmaps_root, channels=n_ext)
        external = load_external_maps(ext, image_id)
    stack = build_stack(ds.image(image_id), config, external)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_fmap(path, stack.planes.astype(np.float32))
        planes = read_fmap(path).astype(np.float64)
        return FeatureStack(planes=planes, groups=groups)
    return stack


def collect_samples(ds: Dataset, ids, config: FeatureConfig, seed: int = 0,
                    cache_dir=None, n_ext: int | None = None,
                    n_pos: int = 10, n_neg: int = 10) -> SampleSet:
    """Sampled feature rows with labels, pooled over the given images."""
    ids = list(ids)
    if not ids:
        raise ValueError("need at least one training image")
    if n_ext is None:
        n_ext = external_channels(ds)
    xs, ys = [], []
    groups = None
    for i, image_id in enumerate(ids):
        stack = load_stack(ds, image_id, config, cache_dir, n_ext)
        groups = stack.groups
        d = density_map(ds.fixations(image_id),
                        work_size=(stack.width, stack.height))
        pick_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        coords, labels = sample_points(d, n_pos=n_pos, n_neg=n_neg, seed=pick_seed)
        xs.append(stack.rows(coords))
        ys.append(labels)
    return SampleSet(x=np.concatenate(xs), y=np.concatenate(ys), groups=groups)


@dataclass(frozen=True)
class ModelBundle:
    """A trained predictor plus everything needed to score new feature rows."""

    method: str
    groups: dict
    linear: LinearModel | None = None
    boost: BoostModel | None = None
    mkl: MklModel | None = None
    specs: tuple = ()
    support_x: np.ndarray | None = None  # training rows at support indices
    support_scale: tuple = ()  # per-spec train-side normalization diag
    gating_group: str | None = None

    @property
    def n_features(self) -> int:
        return max(b for _, b in self.groups.values())


def _build_bank(s: SampleSet, gamma_scale: float = 1.0):
    specs, entries, scales = [], [], []
    for name in s.groups:
        spec = KernelSpec("gaussian", group=name,
                          gamma=gamma_scale * default_gamma(s, name))
        g = normalize_spherical(gram(spec, s))
        specs.append(spec)
        entries.append(g.entries)
        scales.append(g.scale)
    bank = KernelBank(entries=entries, names=[sp.group for sp in specs])
    return tuple(specs), bank, scales


def train_model(method: str, s: SampleSet, params: dict | None = None) -> ModelBundle:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    p = dict(PARAM_DEFAULTS)
    p.update(params or {})
    if method == "linear-svm":
        return ModelBundle(method=method, groups=s.groups,
                           linear=linear_svm_train(s, c=p["c"], tol=p["tol"]))
    if method == "adaboost":
        return ModelBundle(method=method, groups=s.groups,
                           boost=boost_train(s, t=int(p["rounds"])))
    gamma_scale = p["gamma_scale"]
    if gamma_scale is None:
        # the product rule adds one exponent per group; 1/P keeps the
        # combined kernel at unit bandwidth instead of collapsing it
        gamma_scale = 1.0 / len(s.groups) if method == "rbmkl" else 1.0
    specs, bank, scales = _build_bank(s, gamma_scale)
    if method == "rbmkl":
        m = rbmkl_train(bank, s.y, c=p["c"], tol=p["tol"])
    elif method == "nlmkl":
        m = nlmkl_train(bank, s.y, c=p["c"], tol=p["tol"],
                        degree=int(p["degree"]), lam=p["lam"])
    else:
        gating = p["gating"]
        if not gating or gating not in s.groups:
            raise ValueError("lmkl needs gating=<feature group present in the stack>")
        a, b = s.groups[gating]
        m = lmkl_train(bank, s.x[:, a:b], s.y, c=p["c"], tol=p["tol"])
    sv = m.svm.support
    return ModelBundle(
        method=method, groups=s.groups, mkl=m, specs=specs,
        support_x=s.x[sv],
        support_scale=tuple(sc[sv] for sc in scales),
        gating_group=p["gating"] if method == "lmkl" else None,
    )


def _score_rows(bundle: ModelBundle, q: np.ndarray) -> np.ndarray:
    if bundle.method == "linear-svm":
        return linear_decision(bundle.linear, q)
    if bundle.method == "adaboost":
        return boost_score_many(bundle.boost, q)
    rows = []
    for spec, scale in zip(bundle.specs, bundle.support_scale):
        a, b = bundle.groups[spec.group]
        block = cross_gram(spec, q[:, a:b], bundle.support_x[:, a:b])
        rows.append(normalize_cross(block, self_kernel_diag(spec, q[:, a:b]), scale))
    gating_rep = None
    if bundle.method == "lmkl":
        a, b = bundle.groups[bundle.gating_group]
        gating_rep = q[:, a:b]
    return mkl_decision_many(bundle.mkl, rows, gating_rep)


def predict_map(bundle: ModelBundle, stack: FeatureStack, stride: int = 1,
                smooth: float = 0.0) -> np.ndarray:
    """Score every pixel; stride > 1 scores a grid and upsamples.

    smooth > 0 blurs the full-size map with a gaussian of that sigma.
    """
    if stack.groups != bundle.groups:
        raise ValueError("stack layout does not match the one used at training")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if smooth < 0:
        raise ValueError("smooth must be >= 0")
    sub = stack.planes[:, ::stride, ::stride]
    gh, gw = sub.shape[1], sub.shape[2]
    q = sub.reshape(stack.n_channels, -1).T
    grid = _score_rows(bundle, q).reshape(gh, gw)
    out = grid if stride == 1 else resize_plane(grid, stack.width, stack.height)
    return gaussian_blur(out, smooth) if smooth > 0 else out
