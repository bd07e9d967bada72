"""Command-line entry point.

Subcommands: ``datagen``, ``train``, ``train-iterative``, ``synthesize``,
``eval``, ``graph-dump``.  Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.  Training options may come from a
key=value config file (``--config``) with command-line flags taking
precedence; every piece of randomness derives from ``--seed``.  The
``SGS_THREADS`` environment variable caps the metric worker pool.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dc_fields

import numpy as np

from .cycletrain import (
    ConfigError,
    NumericalError,
    TrainConfig,
    load_generator,
    run_iterative,
    sample_views,
    synthesize_sample,
    train_direction,
)
from .datagen import corpus_stats, generate_corpus
from .graphs import graph_dump
from .layout import DataError, load_corpus, write_gray, write_photo, write_pnm
from .losses import FeatureExtractor, LossWeights
from .metrics import evaluate_pairs

_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}

# Training config surface: key -> (python type, help text).
_TRAIN_KEYS = {
    "epochs": (int, "training epochs per stage (>= 2)"),
    "lr": (float, "initial Adam learning rate"),
    "beta1": (float, "Adam beta1"),
    "beta2": (float, "Adam beta2"),
    "batch_size": (int, "samples per optimizer step"),
    "seed": (int, "master seed for all randomness"),
    "image_size": (int, "square image side in pixels"),
    "depth": (int, "encoder/decoder depth"),
    "base_channels": (int, "channel width of the first encoder conv"),
    "si_hidden": (int, "hidden width of the SI modulation convs"),
    "use_saliency": (bool, "concatenate the saliency channel"),
    "stages": (int, "iterative cycle stages after stage 0"),
    "gan_mode": (str, "adversarial loss form: bce or lsgan"),
    "stats": (str, "normalization statistics: instance or batch"),
    "variance_mode": (str, "variance node form: literal or masked"),
    "val_count": (int, "samples held out for validation"),
    "ict_taps": (tuple, "comma-separated tap names for the cycle term"),
    "weight_content": (float, "weight of the content L1 term"),
    "weight_perceptual": (float, "weight of the perceptual term"),
    "weight_parsing": (float, "weight of the parsing BCE term"),
    "weight_intra_graph": (float, "weight of the intra-class graph term"),
    "weight_inter_graph": (float, "weight of the inter-class graph term"),
    "weight_cycle": (float, "weight of the cycle distillation term"),
}

_WEIGHT_FIELDS = {f"weight_{f.name}": f.name for f in dc_fields(LossWeights)}


def _parse_bool(value, key):
    if isinstance(value, bool):
        return value
    word = str(value).strip().lower()
    if word not in _BOOL_WORDS:
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    return _BOOL_WORDS[word]


def _parse_taps(value, key):
    if isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value)
    return tuple(p.strip() for p in str(value).split(",") if p.strip())


def _coerce(key, value):
    if key not in _TRAIN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _TRAIN_KEYS[key][0]
    try:
        if typ is bool:
            return _parse_bool(value, key)
        if typ is tuple:
            return _parse_taps(value, key)
        return typ(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from err


def read_config_file(path):
    """Parse a key = value config file (comments with '#')."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        values[key] = _coerce(key, parsed)
    return values


def build_train_config(args):
    """Merge defaults <- config file <- command-line flags."""
    merged = {}
    if args.config:
        merged.update(read_config_file(args.config))
    for key in _TRAIN_KEYS:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            merged[key] = _coerce(key, cli_val)
    weight_kwargs = {}
    cfg_kwargs = {}
    for key, value in merged.items():
        if key in _WEIGHT_FIELDS:
            weight_kwargs[_WEIGHT_FIELDS[key]] = value
        else:
            cfg_kwargs[key] = value
    cfg = TrainConfig(weights=LossWeights(**weight_kwargs), **cfg_kwargs)
    return cfg.validate()


def _add_train_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    for key, (typ, help_text) in _TRAIN_KEYS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, choices=["true", "false"], help=help_text)
        else:
            parser.add_argument(flag, type=str, help=help_text)


def _split_corpus(manifest, val_count):
    samples = load_corpus(manifest)
    if val_count < 2:
        raise ConfigError(f"val_count must be >= 2, got {val_count}")
    if val_count >= len(samples):
        raise ConfigError(
            f"val_count {val_count} leaves no training data (corpus has {len(samples)})"
        )
    return samples[:-val_count], samples[-val_count:]


def _check_corpus_size(samples, image_size):
    actual = samples[0].photo.data.shape[1]
    if actual != image_size:
        raise ConfigError(
            f"image_size {image_size} does not match corpus images ({actual}px)"
        )


def _worker_map():
    """map() honoring the SGS_THREADS cap; order-preserving either way."""
    raw = os.environ.get("SGS_THREADS", "")
    try:
        n = int(raw) if raw else 1
    except ValueError as err:
        raise ConfigError(f"SGS_THREADS must be an integer, got {raw!r}") from err
    if n <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=n)
    return pool.map, pool


def _infer_direction(gen):
    return "k" if gen.in_channels == 3 else "o"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_datagen(args):
    manifest = generate_corpus(args.out, args.n, args.size, args.seed,
                               mode=args.mode, glasses_frac=args.glasses_frac)
    stats = corpus_stats(manifest)
    print(f"wrote {stats['n_samples']} samples to {manifest}")
    return 0


def cmd_train(args):
    cfg = build_train_config(args)
    train, val = _split_corpus(args.data, cfg.val_count)
    _check_corpus_size(train, cfg.image_size)
    out_dir = os.path.join(args.out, f"stage0_{args.direction}")
    result = train_direction(train, val, cfg, args.direction, 0, None, out_dir)
    _write_run_manifest(args.out, cfg, [result.checkpoint])
    print(f"stage0_{args.direction}: val {json.dumps(result.checkpoint.val, sort_keys=True)}")
    return 0


def cmd_train_iterative(args):
    cfg = build_train_config(args)
    train, val = _split_corpus(args.data, cfg.val_count)
    _check_corpus_size(train, cfg.image_size)
    out = run_iterative(train, val, cfg, args.out)
    for d, ckpts in out["checkpoints"].items():
        last = ckpts[-1]
        print(f"direction {d}: {len(ckpts)} checkpoints, "
              f"final val {json.dumps(last.val, sort_keys=True)}")
    return 0


def _write_run_manifest(out_root, cfg, checkpoints):
    from dataclasses import asdict

    os.makedirs(out_root, exist_ok=True)
    payload = {
        "config": asdict(cfg),
        "checkpoints": [asdict(c) for c in checkpoints],
    }
    with open(os.path.join(out_root, "manifest.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_model_and_data(args):
    gen = load_generator(args.model)
    direction = args.direction or _infer_direction(gen)
    samples = load_corpus(args.data)
    for s in samples:
        if s.photo.data.shape[1] != gen.image_size:
            raise DataError(
                f"sample {s.id!r} is {s.photo.data.shape[1]}px but the model "
                f"was trained at {gen.image_size}px"
            )
    return gen, direction, samples


def cmd_synthesize(args):
    gen, direction, samples = _load_model_and_data(args)
    if args.ids:
        wanted = set(args.ids.split(","))
        samples = [s for s in samples if s.id in wanted]
        missing = wanted - {s.id for s in samples}
        if missing:
            raise DataError(f"ids not in corpus: {sorted(missing)}")
    os.makedirs(args.out, exist_ok=True)
    tiles = []
    for s in samples:
        fake = synthesize_sample(gen, s, direction)
        if fake.shape[0] == 1:
            path = os.path.join(args.out, f"{s.id}_fake.pgm")
            write_gray(path, fake[0])
            tiles.append(np.repeat(fake, 3, axis=0))
        else:
            path = os.path.join(args.out, f"{s.id}_fake.ppm")
            write_photo(path, fake)
            tiles.append(fake)
    _write_contact_sheet(os.path.join(args.out, "contact_sheet.ppm"), tiles)
    print(f"synthesized {len(samples)} images into {args.out}")
    return 0


def _write_contact_sheet(path, tiles, columns=8):
    if not tiles:
        raise DataError("no images to compose into a contact sheet")
    h, w = tiles[0].shape[1:]
    cols = min(columns, len(tiles))
    rows = (len(tiles) + cols - 1) // cols
    sheet = np.ones((3, rows * h, cols * w))
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        sheet[:, r * h:(r + 1) * h, c * w:(c + 1) * w] = tile
    write_pnm(path, np.rint(np.clip(sheet, 0.0, 1.0) * 255.0).transpose(1, 2, 0), 255)


def cmd_eval(args):
    gen, direction, samples = _load_model_and_data(args)
    with open(os.path.join(args.model, "model.json"), "r", encoding="utf-8") as f:
        seed = json.load(f)["seed"]
    didx = 0 if direction == "k" else 1
    extractor = FeatureExtractor(gen.out_channels, seed=[seed, 91, didx])

    reals, fakes, ids = [], [], []
    for s in samples:
        _, _, _, tgt, _, _ = sample_views(s, direction)
        reals.append(tgt.data)
        fakes.append(synthesize_sample(gen, s, direction))
        ids.append(s.id)

    map_fn, pool = _worker_map()
    try:
        embed = extractor.embed if len(samples) >= 2 else None
        report = evaluate_pairs(reals, fakes, embed=embed, map_fn=map_fn)
    finally:
        if pool is not None:
            pool.shutdown()

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "val_metrics.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(report.summary(), sort_keys=True) + "\n")
    with open(os.path.join(args.out, "per_sample.csv"), "w", encoding="utf-8") as f:
        f.write("id,ssim,fsim\n")
        for sid, s_v, f_v in zip(ids, report.ssim_values, report.fsim_values):
            f.write(f"{sid},{s_v!r},{f_v!r}\n")
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def cmd_graph_dump(args):
    samples = load_corpus(args.data)
    match = [s for s in samples if s.id == args.id]
    if not match:
        raise DataError(f"sample id {args.id!r} not found in {args.data}")
    s = match[0]
    if args.side == "photo":
        dump = graph_dump(s.photo, s.layout_photo)
    else:
        dump = graph_dump(s.sketch, s.layout_sketch)
    text = json.dumps(dump, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sgs",
        description="Semantic-driven photo/sketch synthesis at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a procedural paired corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--size", type=int, default=64, help="square image side")
    p.add_argument("--seed", type=int, default=7, help="corpus seed")
    p.add_argument("--mode", choices=["aligned", "deformed"], default="aligned",
                   help="sketch-side geometry mode")
    p.add_argument("--glasses-frac", type=float, default=0.5,
                   help="fraction of samples wearing glasses")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train one direction, stage 0 only")
    p.add_argument("--data", required=True, help="corpus manifest")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--direction", choices=["k", "o"], default="k",
                   help="k: photo->sketch, o: sketch->photo")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-iterative", help="full iterative cycle training")
    p.add_argument("--data", required=True, help="corpus manifest")
    p.add_argument("--out", required=True, help="run directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_iterative)

    p = sub.add_parser("synthesize", help="run a checkpoint over a corpus")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="corpus manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--direction", choices=["k", "o"], default=None,
                   help="override the direction inferred from the model")
    p.add_argument("--ids", default=None, help="comma-separated sample ids")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("eval", help="score a checkpoint against targets")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="corpus manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--direction", choices=["k", "o"], default=None,
                   help="override the direction inferred from the model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("graph-dump", help="emit graph nodes/edges for a sample")
    p.add_argument("--data", required=True, help="corpus manifest")
    p.add_argument("--id", required=True, help="sample id")
    p.add_argument("--side", choices=["photo", "sketch"], default="sketch")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_graph_dump)
    return parser


def _fail(code, kind, err):
    msg = "; ".join(str(err).splitlines())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as err:
        return _fail(3, "data", err)
    except NumericalError as err:
        return _fail(4, "numerical", err)
    except (ConfigError, ValueError) as err:
        return _fail(2, "config", err)
    except OSError as err:
        return _fail(3, "data", err)


if __name__ == "__main__":
    sys.exit(main())
