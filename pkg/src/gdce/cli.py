"""Command-line pipeline driver.

One binary, subcommand per stage: generate data, shift it, train the
classifier, train the curve predictor, enhance images, evaluate, run the
ablation grid, and check gradients. Exit codes: 0 success, 1 usage or
configuration problem, 2 data problem, 3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    SEED_ENV_VAR,
    build_config,
    dump_config,
    prepare_out_dir,
    resolve_seed,
)
from .curve import CurveCoefficients, apply_curve
from .errors import ConfigError, DataError, NumericalError
from .gradsuite import gradient_battery
from .image import (
    NUM_FOLDS,
    UnitImage,
    load_image,
    load_manifest,
    normalize_full_range,
    save_image,
)
from .metrics import classification_report
from .models import DISCRIMINATOR_ROLE, GDCE_ROLE, build_extractor, gdce_predict
from .nn import load_checkpoint, save_checkpoint
from .synth import ShiftProfile, SynthSpec, make_domain_pair, shift_dataset
from .training import (
    ReferencePool,
    TrainConfig,
    ablation_grid,
    enhance_batch,
    load_dataset,
    predict_logits,
    render_ablation_grid,
    train_discriminator,
    train_gdce,
)

STATE_FILE = "train_state.bin"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t, m = cfg["train"], cfg["model"]
    return TrainConfig(lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"],
                       seed=seed, image_size=cfg["data"]["image_size"],
                       n_iterations=m["n_iterations"], num_blocks=m["num_blocks"],
                       conv_channels=m["conv_channels"], val_fold=t["val_fold"],
                       perceptual_reduction=t["perceptual_reduction"],
                       early_stop_target=t["early_stop_target"])


def _profile_from(cfg: dict, seed: int) -> ShiftProfile:
    s = cfg["shift"]
    return ShiftProfile(gamma=s["gamma"], sigmoid_gain=s["sigmoid_gain"],
                        sigmoid_center=s["sigmoid_center"],
                        window_shift=s["window_shift"],
                        out_bit_depth=s["out_bit_depth"], noise=s["noise"],
                        seed=seed)


def _test_fold(cfg: dict):
    tf = cfg["train"]["test_fold"]
    if tf is None:
        return None
    if not 0 <= tf < NUM_FOLDS:
        raise ConfigError(f"train.test_fold must be in [0, {NUM_FOLDS}) or null")
    if tf == cfg["train"]["val_fold"]:
        raise ConfigError("train.test_fold and train.val_fold must differ")
    return tf


def _drop_test_fold(ds, cfg):
    tf = _test_fold(cfg)
    if tf is None:
        return ds
    return ds.subset(ds.folds != tf)


def _load_frozen_discriminator(path):
    path = Path(path)
    if not path.exists():
        raise DataError(
            f"discriminator checkpoint not found: {path} (run train-clf first)")
    net, extra = load_checkpoint(path, expected_role=DISCRIMINATOR_ROLE)
    net.frozen = True
    return net, extra


def _reference_pool(manifest_path, cfg) -> ReferencePool:
    manifest = load_manifest(manifest_path)
    tf = _test_fold(cfg)
    if tf is not None:
        manifest = manifest.subset(lambda e: e.fold != tf)
    return ReferencePool.from_manifest(manifest)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args):
    cfg = build_config(args.spec, args.overrides)
    seed = resolve_seed(cfg, args.seed)
    cfg["seed"] = seed
    out = prepare_out_dir(args.out_dir, args.force)
    d = cfg["data"]
    spec = SynthSpec(num_classes=d["num_classes"],
                     images_per_class=d["images_per_class"],
                     image_size=d["image_size"], seed=seed)
    profile = _profile_from(cfg, seed)
    ref, shifted = make_domain_pair(spec, profile, out)
    dump_config(cfg, out)
    print(f"reference: {len(ref.entries)} images under {out / 'ref'}")
    print(f"shifted:   {len(shifted.entries)} images under {out / 'shifted'}")


def cmd_shift(args):
    manifest = load_manifest(args.manifest)
    profile = ShiftProfile.load(args.profile)
    out = prepare_out_dir(args.out_dir, args.force)
    shifted = shift_dataset(manifest, profile, out)
    print(f"shifted {len(shifted.entries)} images into {out}")


def cmd_train_clf(args):
    cfg = build_config(args.config, args.overrides)
    seed = resolve_seed(cfg, args.seed)
    cfg["seed"] = seed
    state = Path(args.out) / STATE_FILE
    out = prepare_out_dir(args.out, args.force or state.exists())
    dump_config(cfg, out)
    ds = _drop_test_fold(load_dataset(load_manifest(args.manifest)), cfg)
    tc = _train_config(cfg, seed)
    result = train_discriminator(ds, tc, state_path=state, log=print)
    save_checkpoint(result.net, out / "discriminator.ckpt",
                    extra={"best_epoch": result.best_epoch,
                           "best_metric": result.best_metric,
                           "class_names": ds.class_names,
                           "image_size": tc.image_size})
    (out / "history.json").write_text(json.dumps(result.history, indent=2) + "\n")
    print(f"best epoch {result.best_epoch}: "
          f"val worst-group {result.best_metric:.4f}")


def cmd_train_gdce(args):
    cfg = build_config(args.config, args.overrides)
    seed = resolve_seed(cfg, args.seed)
    cfg["seed"] = seed
    disc, _ = _load_frozen_discriminator(args.discriminator)
    state = Path(args.out) / STATE_FILE
    out = prepare_out_dir(args.out, args.force or state.exists())
    dump_config(cfg, out)
    e = cfg["extractor"]
    ext = build_extractor(tap=e["tap"], depth=e["depth"], channels=e["channels"],
                          seed=e["seed"])
    pool = _reference_pool(args.refs, cfg)
    ds = _drop_test_fold(load_dataset(load_manifest(args.manifest)), cfg)
    tc = _train_config(cfg, seed)
    result = train_gdce(ds, pool, disc, ext, tc, state_path=state, log=print)
    save_checkpoint(result.net, out / "gdce.ckpt",
                    extra={"best_epoch": result.best_epoch,
                           "best_metric": result.best_metric,
                           "n_iterations": tc.n_iterations,
                           "image_size": tc.image_size,
                           "normalize": "minmax",
                           "extractor_seed": e["seed"]})
    (out / "history.json").write_text(json.dumps(result.history, indent=2) + "\n")
    print(f"best epoch {result.best_epoch}: "
          f"val worst-group {result.best_metric:.4f}")


def _enhance_one(unit: UnitImage, alphas: np.ndarray) -> UnitImage:
    values = apply_curve(unit.values.astype(np.float64), CurveCoefficients(alphas))
    return UnitImage(values)


def _unique_names(paths) -> list[str]:
    names = [Path(p).name for p in paths]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise DataError(f"duplicate input names would overwrite each other: {sorted(dup)}")
    return names


def cmd_apply(args):
    out = prepare_out_dir(args.out, args.force)
    net, _ = load_checkpoint(args.checkpoint, expected_role=GDCE_ROLE)
    names = _unique_names(args.images)
    entries = []
    for src, name in zip(args.images, names):
        raw = load_image(src)
        unit = normalize_full_range(raw, mode="minmax")
        x = unit.values.astype(np.float32)[None, None]
        alphas = gdce_predict(net, x)[0].astype(np.float64)
        save_image(_enhance_one(unit, alphas), out / name, bit_depth=raw.bit_depth)
        entries.append({"source": str(src), "output": name,
                        "bit_depth": raw.bit_depth,
                        "alphas": [float(a) for a in alphas]})
        print(f"{src} -> {out / name}  alphas: "
              + " ".join(f"{a:+.4f}" for a in alphas))
    log = {"normalize": "minmax", "images": entries}
    (out / "alphas.json").write_text(json.dumps(log, indent=2) + "\n")


def cmd_curve(args):
    if (args.log is None) == (args.alphas is None):
        raise ConfigError("pass exactly one of --log or --alphas")
    out = prepare_out_dir(args.out, args.force)
    if args.log is not None:
        if args.images:
            raise ConfigError("--log replays its own image list; drop the positionals")
        log = json.loads(Path(args.log).read_text())
        jobs = [(e["source"], e["output"], np.asarray(e["alphas"], dtype=np.float64))
                for e in log["images"]]
    else:
        try:
            alphas = np.asarray([float(v) for v in args.alphas.split(",")])
        except ValueError:
            raise ConfigError(f"--alphas must be comma-separated floats, got {args.alphas!r}") from None
        names = _unique_names(args.images)
        jobs = [(src, name, alphas) for src, name in zip(args.images, names)]
    if not jobs:
        raise ConfigError("nothing to do: no images given")
    for src, name, alphas in jobs:
        raw = load_image(src)
        unit = normalize_full_range(raw, mode="minmax")
        save_image(_enhance_one(unit, alphas), out / name, bit_depth=raw.bit_depth)
        print(f"{src} -> {out / name}")


def cmd_eval(args):
    if args.gdce is not None and args.normalize != "minmax":
        raise ConfigError("--gdce expects minmax-normalized input")
    disc, extra = load_checkpoint(args.checkpoint, expected_role=DISCRIMINATOR_ROLE)
    ds = load_dataset(load_manifest(args.manifest), mode=args.normalize)
    x = ds.x
    if args.gdce is not None:
        gnet, _ = load_checkpoint(args.gdce, expected_role=GDCE_ROLE)
        x = enhance_batch(gnet, x)
    logits = predict_logits(disc, x)
    report = classification_report(ds.y, logits, ds.class_names)
    text = report.render()
    print(text, end="")
    if args.out is not None:
        out = prepare_out_dir(args.out, args.force)
        (out / "report.txt").write_text(text)
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n")


def _int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} must be comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag} must name at least one value")
    return values


def cmd_ablate(args):
    cfg = build_config(args.config, args.overrides)
    seed = resolve_seed(cfg, args.seed)
    cfg["seed"] = seed
    layers = _int_list(args.layers, "--layers")
    iterations = _int_list(args.iterations, "--iterations")
    disc, _ = _load_frozen_discriminator(args.discriminator)
    out = prepare_out_dir(args.out, args.force)
    dump_config(cfg, out)
    e = cfg["extractor"]
    ext = build_extractor(tap=e["tap"], depth=e["depth"], channels=e["channels"],
                          seed=e["seed"])
    pool = _reference_pool(args.refs, cfg)
    ds = _drop_test_fold(load_dataset(load_manifest(args.manifest)), cfg)
    test_ds = None
    if args.test is not None:
        test_ds = load_dataset(load_manifest(args.test))
    tc = _train_config(cfg, seed)
    grid = ablation_grid(ds, pool, disc, ext, layers, iterations, tc,
                         test=test_ds, log=print)
    text = render_ablation_grid(grid)
    if test_ds is not None:
        text += "\n" + render_ablation_grid(grid, metric="test_worst_group")
    print(text, end="")
    (out / "grid.txt").write_text(text)
    cells = {f"L{L}xN{N}": cell for (L, N), cell in grid["cells"].items()}
    (out / "grid.json").write_text(json.dumps(
        {"cells": cells, "layer_counts": grid["layer_counts"],
         "iteration_counts": grid["iteration_counts"]}, indent=2) + "\n")


def cmd_gradcheck(args):
    results = gradient_battery(seed=args.seed if args.seed is not None else 0)
    width = max(len(r.op) for r in results)
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.op:<{width}}  max rel err {r.error:.3e}  tol {r.tol:.0e}  {status}")
    bad = [r.op for r in results if not r.ok]
    if bad:
        raise NumericalError("gradient check failed for: " + ", ".join(bad))


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    seed_opts = argparse.ArgumentParser(add_help=False)
    seed_opts.add_argument("--seed", type=int, default=None,
                           help=f"run seed (default: ${SEED_ENV_VAR}, then config)")
    seed_opts.add_argument("--set", dest="overrides", action="append", default=[],
                           metavar="KEY=VALUE",
                           help="override one config entry, dotted path")
    cfg_opt = argparse.ArgumentParser(add_help=False)
    cfg_opt.add_argument("--config", type=Path, default=None,
                         help="JSON config file layered over the defaults")

    p = _Parser(prog="gdce",
                description="Global tone-curve harmonization pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", parents=[seed_opts],
                        help="generate the paired reference/shifted datasets")
    sp.add_argument("spec", type=Path, nargs="?", default=None,
                    help="JSON config file (data/shift sections)")
    sp.add_argument("out_dir", type=Path)
    sp.add_argument("--force", action="store_true",
                    help="write into a non-empty directory")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("shift", help="re-render a manifest through a shift profile")
    sp.add_argument("manifest", type=Path)
    sp.add_argument("profile", type=Path, help="JSON shift profile")
    sp.add_argument("out_dir", type=Path)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_shift)

    sp = sub.add_parser("train-clf", parents=[seed_opts, cfg_opt],
                        help="train the task classifier on reference images")
    sp.add_argument("manifest", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_train_clf)

    sp = sub.add_parser("train-gdce", parents=[seed_opts, cfg_opt],
                        help="train the curve predictor against the frozen classifier")
    sp.add_argument("manifest", type=Path, help="shifted-domain training manifest")
    sp.add_argument("--refs", type=Path, required=True,
                    help="reference-domain manifest for the perceptual term")
    sp.add_argument("--discriminator", type=Path, required=True,
                    help="checkpoint written by train-clf")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_train_gdce)

    sp = sub.add_parser("apply", help="enhance images and log their curve coefficients")
    sp.add_argument("checkpoint", type=Path)
    sp.add_argument("images", nargs="+", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_apply)

    sp = sub.add_parser("curve",
                        help="apply explicit or logged curve coefficients, no network")
    sp.add_argument("images", nargs="*", type=Path)
    sp.add_argument("--log", type=Path, default=None,
                    help="alphas.json written by apply; replays it bit-exactly")
    sp.add_argument("--alphas", type=str, default=None,
                    help="comma-separated coefficients for the given images")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("eval", help="score a manifest with a trained classifier")
    sp.add_argument("checkpoint", type=Path)
    sp.add_argument("manifest", type=Path)
    sp.add_argument("--gdce", type=Path, default=None,
                    help="enhance through this curve predictor first")
    sp.add_argument("--normalize", default="minmax",
                    choices=("minmax", "bitdepth", "window", "zscore"))
    sp.add_argument("--out", type=Path, default=None,
                    help="also write report.txt and report.json here")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", parents=[seed_opts, cfg_opt],
                        help="train one curve predictor per depth/iteration cell")
    sp.add_argument("manifest", type=Path, help="shifted-domain training manifest")
    sp.add_argument("--refs", type=Path, required=True)
    sp.add_argument("--discriminator", type=Path, required=True)
    sp.add_argument("--layers", type=str, required=True,
                    help="comma-separated depths, e.g. 2,4,12")
    sp.add_argument("--iterations", type=str, required=True,
                    help="comma-separated curve iteration counts, e.g. 4,8")
    sp.add_argument("--test", type=Path, default=None,
                    help="manifest to score each cell's winner on")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck",
                        help="finite-difference check of every differentiable op")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
