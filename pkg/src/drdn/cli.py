"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
Progress goes to stderr, results to stdout.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from drdn import checkpoint
from drdn.conv_arith import PRESETS as RF_PRESETS
from drdn.conv_arith import LayerStackSpec, parse_stack, receptive_field
from drdn.data import Image, NoiseSpec, evaluate, load_image, load_images, make_dataset, save_image
from drdn.errors import DrdnError, ShapeMismatch
from drdn.network import PRESETS as NET_PRESETS
from drdn.network import NetworkConfig, build, denoise, dump_feature_map, param_count
from drdn.optimizer import TrainingConfig, format_loss_trace, train
from drdn.tensor_core import Rng

log = logging.getLogger("drdn")

EXIT_USAGE = 1
EXIT_RUNTIME = 2

PATCH_COUNTS = {"gray": 128 * 1600, "color": 128 * 3000}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _blind_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if not 0 <= lo < hi:
        raise argparse.ArgumentTypeError("blind range must satisfy 0 <= lo < hi")
    return lo, hi


def _add_noise_flags(p, seed_help="noise seed"):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sigma", type=float, help="fixed noise level on the 0-255 scale")
    group.add_argument("--blind", type=_blind_range, metavar="LO:HI",
                       help="draw sigma uniformly from LO:HI per patch/image (e.g. 0:55)")
    p.add_argument("--seed", type=int, default=0, help=seed_help)


def _noise_spec(args) -> NoiseSpec:
    if args.blind is not None:
        return NoiseSpec.blind(*args.blind)
    return NoiseSpec.fixed(args.sigma)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drdn", description="Dilated residual CNN denoiser.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rf-table", help="receptive field per layer", formatter_class=_Formatter)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(RF_PRESETS), default="gray10", help="named layer stack")
    src.add_argument("--stack", help="comma-separated k:p:s:d per layer, e.g. 3:1:1:1,3:2:1:2")
    p.add_argument("--input-size", type=int, default=None,
                   help="input size for output-size column (default: preset patch size, 40 for --stack)")

    p = sub.add_parser("param-count", help="learnable parameter count", formatter_class=_Formatter)
    p.add_argument("--preset", choices=sorted(NET_PRESETS), default=None,
                   help="reference configuration; gray if no explicit sizes are given")
    p.add_argument("--depth", type=int, default=None, help="conv layers (gray 10, color 12)")
    p.add_argument("--width", type=int, default=None, help="hidden channels (64)")
    p.add_argument("--channels", type=int, default=None, help="image channels (gray 1, color 3)")

    p = sub.add_parser("train", help="train a denoiser", formatter_class=_Formatter)
    p.add_argument("--config", type=Path, default=None, help="key = value file; flags override it")
    p.add_argument("--data", type=Path, help="dataset root with train/*.pgm|*.ppm")
    _add_noise_flags(p, "seed for patch sampling, noise, init and shuffling")
    p.add_argument("--preset", choices=sorted(NET_PRESETS), default="gray",
                   help="base configuration the size flags override")
    p.add_argument("--depth", type=int, default=None, help="conv layers (preset: gray 10, color 12)")
    p.add_argument("--width", type=int, default=None, help="hidden channels (preset: 64)")
    p.add_argument("--channels", type=int, default=None, help="image channels (preset: gray 1, color 3)")
    p.add_argument("--patch-size", type=int, default=None, help="patch size (preset: gray 40, color 50)")
    p.add_argument("--patches", type=int, default=None,
                   help="patch count (preset: gray 128x1600, color 128x3000)")
    p.add_argument("--epochs", type=int, default=40, help="training epochs")
    p.add_argument("--batch-size", type=int, default=128, help="patches per step")
    p.add_argument("--lr", type=float, default=1e-3, help="initial learning rate")
    p.add_argument("--lr-reduced", type=float, default=1e-4, help="learning rate after the drop")
    p.add_argument("--lr-drop-epoch", type=int, default=None,
                   help="epoch of the learning-rate drop (default: 3/4 of --epochs, i.e. 30 of 40)")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--weight-decay", type=float, default=1e-4, help="L2 penalty on conv filters")
    p.add_argument("--out", type=Path, help="checkpoint path")
    p.add_argument("--loss-trace", type=Path, default=None, help="loss trace path (default: OUT.loss.tsv)")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="also write the checkpoint every N epochs (0 = only at the end)")

    p = sub.add_parser("denoise", help="denoise one image", formatter_class=_Formatter)
    p.add_argument("--model", type=Path, help="checkpoint")
    p.add_argument("--in", dest="input", type=Path, help="noisy PGM/PPM")
    p.add_argument("--out", type=Path, help="output PGM/PPM")

    p = sub.add_parser("eval", help="PSNR report on a test set", formatter_class=_Formatter)
    p.add_argument("--model", type=Path, help="checkpoint")
    p.add_argument("--data", type=Path, help="dataset root with test/*.pgm|*.ppm")
    _add_noise_flags(p)
    p.add_argument("--out", type=Path, default=None, help="also write the report here")

    p = sub.add_parser("dump-features", help="strongest feature map of a layer", formatter_class=_Formatter)
    p.add_argument("--model", type=Path, help="checkpoint")
    p.add_argument("--in", dest="input", type=Path, help="input PGM/PPM")
    p.add_argument("--layer", type=int, default=10, help="1-based conv layer index")
    p.add_argument("--out", type=Path, help="output PGM")
    return parser


# ---------------------------------------------------------------- config file

def read_config_file(path: Path) -> dict:
    """``key = value`` lines, ``#`` comments; keys use flag names with - or _."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, argv, args):
    """Re-parse with config-file values as defaults so explicit flags win."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in read_config_file(args.config).items():
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if key in ("sigma", "blind") and (args.sigma is not None or args.blind is not None):
            continue  # the command line already picked a noise mode
        try:
            defaults[key] = action.type(value) if action.type else value
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key}: {exc}") from None
    if "sigma" in defaults and "blind" in defaults:
        raise UsageError("config file sets both sigma and blind")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _require(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"missing required flag(s): {', '.join(missing)}")


# ---------------------------------------------------------------- commands

def cmd_rf_table(args):
    if args.stack is not None:
        layers = parse_stack(args.stack)
        stack = LayerStackSpec(tuple(layers), args.input_size or 40)
    else:
        preset = RF_PRESETS[args.preset]
        stack = LayerStackSpec(preset.layers, args.input_size or preset.input_size)
    print(receptive_field(stack).format())


def _net_config(args, preset_name):
    base = NET_PRESETS[preset_name]
    return NetworkConfig(
        depth=args.depth if args.depth is not None else base.depth,
        feature_width=args.width if args.width is not None else base.feature_width,
        io_channels=args.channels if args.channels is not None else base.io_channels,
        patch_size=getattr(args, "patch_size", None) or base.patch_size,
    )


def cmd_param_count(args):
    print(param_count(_net_config(args, args.preset or "gray")))


def _dataset_dir(root: Path, split: str) -> Path:
    d = root / split
    return d if d.is_dir() else root


def cmd_train(args):
    _require(args, "data", "out")
    if args.sigma is None and args.blind is None:
        raise UsageError("one of --sigma or --blind is required")
    net = _net_config(args, args.preset)
    drop = args.lr_drop_epoch if args.lr_drop_epoch is not None else (3 * args.epochs) // 4
    try:
        tcfg = TrainingConfig(
            momentum=args.momentum, batch_size=args.batch_size, lr_initial=args.lr,
            lr_reduced=args.lr_reduced, lr_drop_epoch=drop, total_epochs=args.epochs,
            weight_decay=args.weight_decay, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    spec = _noise_spec(args)
    images = load_images(_dataset_dir(args.data, "train"))
    if images[0].channels != net.io_channels:
        raise ShapeMismatch(f"training images have {images[0].channels} channels, model expects {net.io_channels}")
    count = args.patches if args.patches is not None else PATCH_COUNTS[args.preset]
    log.info("extracting %d patches of %d px from %d images", count, net.patch_size, len(images))
    dataset = make_dataset(images, net.patch_size, count, spec, seed=args.seed)
    model = build(net, Rng(args.seed).spawn(3))

    def on_epoch(record, m):
        if args.checkpoint_every and (record.epoch + 1) % args.checkpoint_every == 0:
            checkpoint.save(m, args.out)

    model, trace = train(model, dataset, tcfg, on_epoch=on_epoch)
    checkpoint.save(model, args.out)
    trace_path = args.loss_trace or args.out.with_name(args.out.name + ".loss.tsv")
    text = format_loss_trace(trace)
    trace_path.write_text(text)
    sys.stdout.write(text)


def _image_batch(image: Image, model) -> np.ndarray:
    if image.channels != model.config.io_channels:
        raise ShapeMismatch(
            f"image has {image.channels} channels but the model expects {model.config.io_channels}"
        )
    return image.pixels[None]


def cmd_denoise(args):
    _require(args, "model", "input", "out")
    model = checkpoint.load(args.model)
    image = load_image(args.input)
    restored = denoise(model, _image_batch(image, model))[0]
    save_image(Image(restored, image.name), args.out)


def cmd_eval(args):
    _require(args, "model", "data")
    if args.sigma is None and args.blind is None:
        raise UsageError("one of --sigma or --blind is required")
    model = checkpoint.load(args.model)
    images = load_images(_dataset_dir(args.data, "test"))
    report = evaluate(model, images, _noise_spec(args), Rng(args.seed))
    text = report.format()
    if args.out is not None:
        args.out.write_text(text)
    sys.stdout.write(text)


def cmd_dump_features(args):
    _require(args, "model", "input", "out")
    model = checkpoint.load(args.model)
    image = load_image(args.input)
    fmap = dump_feature_map(model, _image_batch(image, model), args.layer)
    save_image(Image(fmap[None]), args.out)


COMMANDS = {
    "rf-table": cmd_rf_table,
    "param-count": cmd_param_count,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "dump-features": cmd_dump_features,
}


@contextlib.contextmanager
def _thread_limit():
    threads = int(os.environ.get("DRDN_THREADS", "0") or 0)
    if threads > 0:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            yield
    else:
        yield


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if getattr(args, "config", None) is not None:
            args = _apply_config(parser, argv, args)
        with _thread_limit():
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"drdn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DrdnError, OSError, ValueError) as exc:
        print(f"drdn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
