"""Command-line front end: inspect, train, evaluate, map, gradcheck."""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import SplitSpec, class_stats, extract_patches, load_cube, stratified_split
from .gradcheck import grad_errors
from .mapping import PaletteSpec, prediction_map, render_labels, write_ppm
from .model import ModelConfig, init_params, model_logits
from .pca import pca_fit, pca_transform
from .report import write_report
from .tensor import Tensor, cross_entropy_logits
from .train import TrainConfig, evaluate, train_loop

TINY_CONFIG = dict(num_classes=3, patch_size=7, pca_bands=4, conv3d_out=2,
                   conv2d_out=4, tokens=2, heads=2, te_depth=1, mlp_hidden=8)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hsgf",
        description="Hyperspectral image classification with a gate-shift-fuse "
                    "convolution stem and a token transformer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print dataset dimensions and class counts")
    p.add_argument("--data", required=True, help="dataset header JSON path")

    p = sub.add_parser("train", help="fit the model and write checkpoint + report")
    p.add_argument("--data", required=True, help="dataset header JSON path")
    p.add_argument("--out", required=True, help="output directory for checkpoint and report")
    p.add_argument("--pca-bands", type=int, default=30)
    p.add_argument("--patch-size", type=int, default=13)
    p.add_argument("--tokens", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--te-depth", type=int, default=1)
    p.add_argument("--no-gsf", action="store_true", help="disable the gate-shift-fuse block")
    p.add_argument("--no-conv2d", action="store_true", help="disable the 2-D convolution")
    p.add_argument("--no-conv3d", action="store_true", help="disable the 3-D convolution")
    p.add_argument("--no-te", action="store_true", help="disable the transformer encoder")
    p.add_argument("--gsf-position", choices=["post3d", "post2d-reshaped"], default="post3d")
    p.add_argument("--train-fraction", type=float, default=None,
                   help="per-class training fraction (default 0.1)")
    p.add_argument("--train-count", type=int, default=None,
                   help="per-class training sample count (overrides fraction)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")

    p = sub.add_parser("evaluate", help="re-evaluate a checkpoint on the test fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split-seed", type=int, default=None,
                   help="override the split seed stored in the checkpoint")

    p = sub.add_parser("map", help="render a color-coded classification map (PPM)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output PPM path")
    p.add_argument("--full", action="store_true", help="predict every pixel, not only labeled")
    p.add_argument("--truth", action="store_true", help="render the ground-truth labels instead")

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--config", choices=["tiny", "default"], default="tiny")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--sample", type=int, default=None,
                   help="probe at most this many coordinates per tensor "
                        "(default: all for tiny, 200 for default)")
    return parser


def cmd_inspect(args):
    cube, labels = load_cube(args.data)
    print(f"{cube.width}x{cube.height}x{cube.bands}, {labels.num_classes} classes")
    patchset_counts = np.zeros(labels.num_classes, dtype=np.int64)
    for c in range(1, labels.num_classes + 1):
        patchset_counts[c - 1] = int((labels.labels == c).sum())
    total = int(patchset_counts.sum())
    for c in range(labels.num_classes):
        name = labels.class_names[c] if c < len(labels.class_names) else f"C{c + 1}"
        print(f"  C{c + 1} {name}: {patchset_counts[c]}")
    print(f"  labeled: {total} / {cube.width * cube.height}")
    return 0


def _model_config_from_args(args, num_classes):
    return ModelConfig(
        num_classes=num_classes,
        patch_size=args.patch_size,
        pca_bands=args.pca_bands,
        tokens=args.tokens,
        heads=args.heads,
        te_depth=args.te_depth,
        gsf_enabled=not args.no_gsf,
        te_enabled=not args.no_te,
        conv2d_enabled=not args.no_conv2d,
        conv3d_enabled=not args.no_conv3d,
        gsf_position=args.gsf_position,
    )


def cmd_train(args):
    if args.train_fraction is not None and args.train_count is not None:
        raise SystemExit("--train-fraction and --train-count are mutually exclusive")
    if args.train_count is not None:
        split_spec = SplitSpec("count", args.train_count, args.seed)
    else:
        fraction = 0.1 if args.train_fraction is None else args.train_fraction
        split_spec = SplitSpec("fraction", fraction, args.seed)

    cube, labels = load_cube(args.data)
    model_config = _model_config_from_args(args, labels.num_classes)
    dtype = np.float32 if args.precision == "f32" else np.float64

    started = time.time()
    pca_model = pca_fit(cube, args.pca_bands)
    reduced = pca_transform(cube, pca_model)
    patchset = extract_patches(reduced, labels, args.patch_size)
    train_set, test_set = stratified_split(patchset, split_spec)
    print(f"train {len(train_set)} / test {len(test_set)} patches "
          f"({time.time() - started:.1f}s preprocessing)")

    params = init_params(model_config, seed=args.seed, dtype=dtype)
    train_config = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                               epochs=args.epochs, seed=args.seed)
    history = train_loop(params, model_config, train_set, train_config,
                         progress=lambda e, loss, acc: print(
                             f"epoch {e + 1}/{args.epochs}: loss {loss:.4f} acc {acc:.1f}%"))

    split_info = {"strategy": split_spec.strategy, "value": split_spec.value,
                  "seed": split_spec.seed}
    _, report = evaluate(params, model_config, test_set,
                         split_info=split_info, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"split": split_info,
             "train": {"lr": args.lr, "batch": args.batch, "epochs": args.epochs,
                       "seed": args.seed, "precision": args.precision}}
    save_checkpoint(out / "model.ckpt", params, pca_model, extra_config=extra)
    write_report(out, report, history=history, class_names=labels.class_names,
                 train_counts=class_stats(train_set), test_counts=class_stats(test_set))
    print(f"OA {report.oa:.2f}  AA {report.aa:.2f}  kappa_x100 {report.kappa_x100:.2f}")
    print(f"wrote {out / 'model.ckpt'} and {out / 'metrics.json'}")
    return 0


def _restore_split(config_dict, patchset, override_seed):
    split = config_dict.get("split", {})
    strategy = split.get("strategy", "fraction")
    value = split.get("value", 0.1)
    seed = override_seed if override_seed is not None else split.get("seed", 42)
    return stratified_split(patchset, SplitSpec(strategy, value, seed))


def cmd_evaluate(args):
    params, pca_model, config_dict = load_checkpoint(args.checkpoint)
    cube, labels = load_cube(args.data)
    if params.config.num_classes != labels.num_classes:
        raise SystemExit(
            f"checkpoint expects {params.config.num_classes} classes, "
            f"dataset declares {labels.num_classes}")
    if pca_model is None:
        raise SystemExit("checkpoint carries no band-reduction state")
    reduced = pca_transform(cube, pca_model)
    patchset = extract_patches(reduced, labels, params.config.patch_size)
    _, test_set = _restore_split(config_dict, patchset, args.split_seed)
    split = config_dict.get("split", {})
    seed = args.split_seed if args.split_seed is not None else split.get("seed", 42)
    _, report = evaluate(params, params.config, test_set,
                         split_info={**split, "seed": seed}, seed=seed)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    for c, acc in enumerate(report.per_class, start=1):
        name = labels.class_names[c - 1] if c - 1 < len(labels.class_names) else f"C{c}"
        print(f"  C{c} {name}: {acc:.2f}", file=sys.stderr)
    return 0


def cmd_map(args):
    params, pca_model, _ = load_checkpoint(args.checkpoint)
    cube, labels = load_cube(args.data)
    palette = PaletteSpec(labels.num_classes, labels.legend_rgb or None)
    if args.truth:
        grid = labels.labels.astype(np.int64)
    else:
        if pca_model is None:
            raise SystemExit("checkpoint carries no band-reduction state")
        reduced = pca_transform(cube, pca_model)
        grid = prediction_map(params, params.config, reduced, labels, full=args.full)
    write_ppm(args.out, render_labels(grid, palette))
    print(f"wrote {args.out} ({cube.width}x{cube.height})")
    return 0


def cmd_gradcheck(args):
    if args.config == "tiny":
        model_config = ModelConfig(**TINY_CONFIG)
        sample = args.sample if args.sample is not None else 0
    else:
        model_config = ModelConfig(num_classes=9)
        sample = args.sample if args.sample is not None else 200
    params = init_params(model_config, seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(args.seed)
    batch = 2 if args.config == "tiny" else 1
    shape = (batch, model_config.pca_bands, model_config.patch_size, model_config.patch_size)
    patch = Tensor(rng.normal(size=shape), dtype=np.float64, requires_grad=True)
    labels = rng.integers(1, model_config.num_classes + 1, size=batch)
    named = [("input", patch)] + params.named_tensors()
    tensors = [t for _, t in named]

    def loss_fn(*ts):
        return cross_entropy_logits(model_logits(ts[0], params, model_config), labels)

    started = time.time()
    errors = grad_errors(loss_fn, tensors, sample=sample, sample_seed=args.seed)
    ok = True
    for (name, _), err in zip(named, errors):
        status = "ok" if err < 1e-4 else "FAIL"
        ok = ok and err < 1e-4
        print(f"  {name}: {err:.3e} {status}")
    mode = "all coordinates" if not sample else f"<= {sample} coordinates per tensor"
    print(f"{'PASS' if ok else 'FAIL'}: {len(named)} tensors, {mode}, "
          f"{time.time() - started:.1f}s")
    return 0 if ok else 1


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {"inspect": cmd_inspect, "train": cmd_train, "evaluate": cmd_evaluate,
                "map": cmd_map, "gradcheck": cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
