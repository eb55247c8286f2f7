"""Command line front end: features, train, predict, eval, synth."""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import config_hash, load_config
from .data import GENERATORS, load_dataset, make_split, synth_dataset
from .evaluate import export_heatmap, run_experiment
from .features import ExternalMapSet, build_stack, load_external_maps
from .fmap import write_fmap
from .imgproc import decode_image
from .model_io import load_model, save_model
from .pipeline import (
    collect_samples,
    config_tag,
    external_channels,
    load_stack,
    predict_map,
    train_model,
)

LOCK_NAME = ".salience-lock"


@contextmanager
def _lock(directory: Path, force: bool):
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / LOCK_NAME
    if path.exists():
        if not force:
            raise RuntimeError(f"another run holds {path}; use --force to steal it")
        path.unlink()
    path.write_text(str(os.getpid()))
    try:
        yield
    finally:
        path.unlink(missing_ok=True)


def _announce(cfg):
    print(f"[salience] config {config_hash(cfg)}", file=sys.stderr)


def _build_worker(args):
    """Build one cached stack in a separate process."""
    img_path, ext_root, n_ext, flags, cache_path, image_id = args
    from .features import FeatureConfig

    img = decode_image(Path(img_path).read_bytes())
    external = None
    if n_ext > 0:
        ext = ExternalMapSet(root=Path(ext_root), channels=n_ext)
        external = load_external_maps(ext, image_id)
    stack = build_stack(img, FeatureConfig(**flags), external)
    write_fmap(cache_path, stack.planes.astype(np.float32))
    return image_id


def cmd_features(args) -> int:
    cfg = load_config(args.config)
    _announce(cfg)
    ds = load_dataset(cfg.root, cfg.layout)
    n_ext = external_channels(ds)
    tag = config_tag(cfg.features, n_ext)
    cache = cfg.cache_dir
    built = reused = 0
    with _lock(cache, args.force):
        todo = []
        for image_id in ds.ids:
            target = cache / f"{image_id}.{tag}.fmap"
            if target.is_file() and not args.force:
                reused += 1
                continue
            todo.append((str(ds.image_path(image_id)),
                         str(ds.extmaps_root or ""), n_ext,
                         {n: getattr(cfg.features, n)
                          for n in cfg.features.__dataclass_fields__},
                         target, image_id))
        if args.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                for _ in pool.map(_build_worker, todo):
                    built += 1
        else:
            for item in todo:
                _build_worker(item)
                built += 1
    print(f"features: {built} built, {reused} reused, {len(ds)} images")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    _announce(cfg)
    ds = load_dataset(cfg.root, cfg.layout)
    n_ext = external_channels(ds)
    split = make_split(ds, cfg.n_train, seed=args.seed)
    s = collect_samples(ds, split.train, cfg.features, seed=args.seed,
                        cache_dir=cfg.cache_dir, n_ext=n_ext,
                        n_pos=cfg.n_pos, n_neg=cfg.n_neg)
    bundle = train_model(cfg.method, s, cfg.params())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, bundle)
    print(f"trained {cfg.method} on {len(split.train)} images "
          f"({s.n} samples) -> {out}")
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    _announce(cfg)
    ds = load_dataset(cfg.root, cfg.layout)
    bundle = load_model(args.model)
    stack = load_stack(ds, args.image_id, cfg.features,
                       cache_dir=cfg.cache_dir, n_ext=external_channels(ds))
    sig = cfg.smooth
    if sig is None:
        sig = 0.03 * min(stack.height, stack.width)
    sal = predict_map(bundle, stack, stride=cfg.stride, smooth=sig)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_heatmap(out, sal, display=args.display)
    print(f"predicted {args.image_id} -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    _announce(cfg)
    out_dir = Path(args.out_dir)
    if (out_dir / "summary.csv").exists() and not args.force:
        raise RuntimeError(f"{out_dir / 'summary.csv'} exists; use --force to overwrite")
    ds = load_dataset(cfg.root, cfg.layout)
    with _lock(out_dir, args.force):
        results, table = run_experiment(
            ds, list(cfg.methods), {cfg.label: cfg.features}, list(cfg.seeds),
            n_train=cfg.n_train, out_dir=out_dir, cache_dir=cfg.cache_dir,
            params=cfg.params(), stride=cfg.stride,
            n_pos=cfg.n_pos, n_neg=cfg.n_neg, smooth=cfg.smooth)
    print(table)
    return 0


def cmd_synth(args) -> int:
    w, _, h = args.size.partition("x")
    ds = synth_dataset(Path(args.out), args.n, args.generator, seed=args.seed,
                       size=(int(w), int(h)), ext_channels=args.ext_channels,
                       fix_per_image=args.fixations)
    print(f"synthesized {len(ds)} {args.generator} images under {ds.root}")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="salience")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("features", help="build and cache feature stacks")
    f.add_argument("--config", required=True)
    f.add_argument("--force", action="store_true")
    f.add_argument("--jobs", type=int, default=1)
    f.set_defaults(run=cmd_features)

    t = sub.add_parser("train", help="train one model on a seeded split")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(run=cmd_train)

    pr = sub.add_parser("predict", help="score one image with a saved model")
    pr.add_argument("--config", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--image-id", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--display", action="store_true")
    pr.set_defaults(run=cmd_predict)

    e = sub.add_parser("eval", help="multi-seed comparison of methods")
    e.add_argument("--config", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--force", action="store_true")
    e.set_defaults(run=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--generator", choices=GENERATORS, default="mixed")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", default="200x200")
    s.add_argument("--ext-channels", type=int, default=4)
    s.add_argument("--fixations", type=int, default=20)
    s.set_defaults(run=cmd_synth)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.run(args)
    except Exception as exc:  # noqa: BLE001 - the shell needs a clean failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
