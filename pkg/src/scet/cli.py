"""``scet`` command line: train, eval, infer, audit, degrade.

Exit codes: 0 success, 2 configuration or usage error, 3 data or I/O error,
4 numerical failure. Settings resolve as flags over ``--config`` file values
over preset defaults, and the resolved settings are logged before any work.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import imaging
from .checkpoint import CheckpointError, load_checkpoint
from .complexity import cost_report
from .config import ConfigError, load_config, render_config
from .model import SCETConfig, SCETModel
from .tensor import Tensor, no_grad
from .training import PRESETS, DatasetError, NumericalError, corpus_dir, preset_train_config, train_loop

log = logging.getLogger("scet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

MODEL_KEYS = ("num_blocks", "channels", "scale", "mdta_heads", "gdfn_expansion", "use_transformer")
TRAIN_KEYS = ("total_iters", "lr0", "lr_min", "weight_decay", "batch_size", "gt_patch", "seed",
              "augment", "log_every", "ckpt_every")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _echo(title, values):
    log.info("%s:\n%s", title, render_config(values).rstrip("\n"))


def _threads():
    raw = os.environ.get("SCET_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SCET_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"SCET_THREADS must be a positive integer, got {raw!r}")
    return n


def _file_values(args):
    return load_config(args.config) if getattr(args, "config", None) else {}


def _flag_values(args):
    flags = {
        "seed": getattr(args, "seed", None),
        "scale": getattr(args, "scale", None),
        "num_blocks": getattr(args, "d", None),
        "channels": getattr(args, "w", None),
        "total_iters": getattr(args, "iters", None),
        "data": getattr(args, "data", None),
        "lr_dir": getattr(args, "lr_dir", None),
        "out": getattr(args, "out", None),
        "preset": getattr(args, "preset", None),
    }
    if getattr(args, "no_transformer", False):
        flags["use_transformer"] = False
    return {k: v for k, v in flags.items() if v is not None}


def _model_config(values):
    try:
        return SCETConfig(**{k: values[k] for k in MODEL_KEYS if k in values})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args):
    file_vals = _file_values(args)
    flag_vals = _flag_values(args)
    preset = flag_vals.get("preset", file_vals.get("preset", "desk-tiny"))
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
    values = dict(PRESETS[preset], preset=preset, seed=0, out="runs/train", mdta_heads=1,
                  gdfn_expansion=SCETConfig.gdfn_expansion, use_transformer=True)
    if preset == "desk-tiny":
        values["data"] = corpus_dir("mini")
    values.update(file_vals)
    values.update(flag_vals)
    if "data" not in values:
        raise UsageError(f"preset {preset!r} has no default dataset; pass --data")
    _echo("effective config", values)

    mcfg = _model_config(values)
    try:
        tcfg = preset_train_config(preset, **{k: values[k] for k in TRAIN_KEYS + ("scale", "lr_dir")
                                              if k in values})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if not os.path.isdir(values["data"]):
        raise DataError(f"dataset directory not found: {values['data']}")
    model = SCETModel(mcfg, seed=tcfg.seed, branch_gain=values["branch_gain"])
    out = values["out"]
    _, trace = train_loop(model, values["data"], tcfg, out_dir=out)
    log.info("trained %d iterations; final loss %.6f; wrote %s",
             len(trace), trace[-1].loss if trace else float("nan"), os.path.join(out, "final.scet"))
    return EXIT_OK


def _load_model(path, scale=None):
    try:
        model = load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    except CheckpointError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if scale is not None and scale != model.config.scale:
        raise UsageError(f"checkpoint {path} is x{model.config.scale}, but x{scale} was requested")
    return model


def super_resolve(model, lr_u8):
    """Run the network on one 8-bit LR image; returns the 8-bit SR image."""
    x = imaging.to_float(lr_u8).astype(model.dtype).transpose(2, 0, 1)[None]
    with no_grad():
        y = model(Tensor(np.ascontiguousarray(x), dtype=model.dtype))
    return imaging.to_uint8(y.data[0].transpose(1, 2, 0))


def _png_names(directory):
    if not os.path.isdir(directory):
        raise DataError(f"image directory not found: {directory}")
    names = sorted(f for f in os.listdir(directory) if f.lower().endswith(".png"))
    if not names:
        raise DataError(f"no PNG images in {directory}")
    return names


def _read_png(path):
    try:
        return imaging.load_png(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _crop_reported(img, s, name):
    cropped = imaging.crop_to_multiple(img, s)
    if cropped.shape != img.shape:
        log.info("%s: centre-cropped %dx%d -> %dx%d for scale %d",
                 name, img.shape[1], img.shape[0], cropped.shape[1], cropped.shape[0], s)
    return cropped


def cmd_eval(args):
    if args.bypass or args.bicubic:
        if args.scale is None:
            raise UsageError("--scale is required with --bypass/--bicubic")
        model, s = None, args.scale
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --bypass or --bicubic is given")
        model = _load_model(args.checkpoint, args.scale)
        s = model.config.scale
    method = "bypass" if args.bypass else "bicubic" if args.bicubic else "model"
    threads = _threads()
    _echo("effective config", {"checkpoint": args.checkpoint, "data": args.data, "scale": s,
                               "method": method, "out": args.out, "threads": threads})
    names = _png_names(args.data)
    hrs = [_crop_reported(_read_png(os.path.join(args.data, n)), s, n) for n in names]

    def score(hr):
        if hr.shape[0] < 11 + 2 * s or hr.shape[1] < 11 + 2 * s:
            raise DataError(f"image {hr.shape[1]}x{hr.shape[0]} too small to score at x{s}")
        if method == "bypass":
            sr = hr.copy()
        else:
            lr = imaging.degrade(hr, s)
            sr = imaging.upscale(lr, s) if method == "bicubic" else super_resolve(model, lr)
        return imaging.psnr_y(hr, sr, s), imaging.ssim_y(hr, sr, s)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(score, hrs))  # ordered by filename
    text = metrics_csv(names, results)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    mean_psnr = float(np.mean([p for p, _ in results]))
    log.info("mean PSNR %.4f dB over %d images", mean_psnr, len(names))
    return EXIT_OK


def metrics_csv(names, results):
    lines = ["image,psnr_db,ssim"]
    for name, (p, q) in zip(names, results):
        lines.append(f"{name},{p:.6f},{q:.6f}")
    lines.append(f"mean,{np.mean([p for p, _ in results]):.6f},{np.mean([q for _, q in results]):.6f}")
    return "\n".join(lines) + "\n"


def _write_text(path, text):
    parent = os.path.dirname(path)
    try:
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None


def cmd_infer(args):
    model = _load_model(args.checkpoint, args.scale)
    _echo("effective config", {"checkpoint": args.checkpoint, "input": args.input, "out": args.out,
                               "scale": model.config.scale})
    lr = _read_png(args.input)
    if lr.shape[0] < 8 or lr.shape[1] < 8:
        raise DataError(f"{args.input}: input {lr.shape[1]}x{lr.shape[0]} is smaller than 8x8")
    sr = super_resolve(model, lr)
    try:
        parent = os.path.dirname(args.out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        imaging.save_png(sr, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    log.info("wrote %dx%d image to %s", sr.shape[1], sr.shape[0], args.out)
    return EXIT_OK


def _parse_hr_size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--hr-size must look like 1280x720, got {text!r}") from None
    if w < 1 or h < 1:
        raise UsageError(f"--hr-size must be positive, got {text!r}")
    return w, h


def cmd_audit(args):
    if args.checkpoint:
        model = _load_model(args.checkpoint)
        values = model.config.as_dict()
    else:
        values = {"num_blocks": 16, "channels": 64, "scale": 4}
        values.update({k: v for k, v in _file_values(args).items() if k in MODEL_KEYS})
        values.update({k: v for k, v in _flag_values(args).items() if k in MODEL_KEYS})
        model = SCETModel(_model_config(values))
    hr_w, hr_h = _parse_hr_size(args.hr_size)
    _echo("effective config", dict(values, hr_size=f"{hr_w}x{hr_h}", format=args.format))
    try:
        rep = cost_report(model, hr_w, hr_h)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = rep.render(args.format)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_degrade(args):
    s = args.scale
    _echo("effective config", {"data": args.data, "scale": s, "out": args.out})
    names = _png_names(args.data)
    os.makedirs(args.out, exist_ok=True)
    for name in names:
        hr = _crop_reported(_read_png(os.path.join(args.data, name)), s, name)
        try:
            imaging.save_png(imaging.degrade(hr, s), os.path.join(args.out, name))
        except OSError as exc:
            raise DataError(f"cannot write {os.path.join(args.out, name)}: {exc}") from None
    log.info("wrote %d LR images to %s", len(names), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="scet", description="Lightweight super-resolution network: train, evaluate, audit.")
    common = _Parser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model on a directory of HR PNGs")
    t.add_argument("--config", help="key = value settings file")
    t.add_argument("--preset", help=f"base settings ({', '.join(sorted(PRESETS))}; default desk-tiny)")
    t.add_argument("--data", help="directory of HR PNGs (desk-tiny default: bundled 8-image corpus)")
    t.add_argument("--lr-dir", dest="lr_dir", help="optional directory of matching LR PNGs")
    t.add_argument("--out", help="output directory for checkpoints and loss.csv (default runs/train)")
    t.add_argument("--seed", type=int)
    t.add_argument("--scale", type=int, choices=(2, 3, 4))
    t.add_argument("--d", type=int, help="number of SCPA blocks")
    t.add_argument("--w", type=int, help="feature channels")
    t.add_argument("--no-transformer", action="store_true", help="drop the attention/feed-forward pair")
    t.add_argument("--iters", type=int, help="total iterations")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="Y-channel PSNR/SSIM over a directory of HR PNGs")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True, help="directory of HR PNGs")
    e.add_argument("--scale", type=int, choices=(2, 3, 4))
    e.add_argument("--out", help="CSV path (default: stdout)")
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--bypass", action="store_true", help="score HR against itself (protocol check)")
    mode.add_argument("--bicubic", action="store_true", help="score bicubic upscaling instead of a model")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", parents=[common], help="super-resolve one LR PNG")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True, help="LR PNG")
    i.add_argument("--out", required=True, help="SR PNG to write")
    i.add_argument("--scale", type=int, choices=(2, 3, 4), help="fail unless the checkpoint has this scale")
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("audit", parents=[common], help="parameter and Multi-Adds table")
    a.add_argument("--config", help="key = value file with model settings")
    a.add_argument("--checkpoint", help="audit the architecture stored in a checkpoint")
    a.add_argument("--d", type=int)
    a.add_argument("--w", type=int)
    a.add_argument("--scale", type=int, choices=(2, 3, 4))
    a.add_argument("--no-transformer", action="store_true")
    a.add_argument("--hr-size", default="1280x720", help="HR extent WxH (default 1280x720)")
    a.add_argument("--format", choices=("text", "csv"), default="text")
    a.add_argument("--out", help="write the table here instead of stdout")
    a.set_defaults(func=cmd_audit)

    g = sub.add_parser("degrade", parents=[common], help="bicubic-downscale a directory of HR PNGs")
    g.add_argument("--data", required=True, help="directory of HR PNGs")
    g.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    g.add_argument("--out", required=True, help="directory for LR PNGs")
    g.set_defaults(func=cmd_degrade)
    return p


def main(argv=None):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root.addHandler(handler)
    prev_level = root.level
    root.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        log.error("error: %s", exc)
        return EXIT_CONFIG
    except (DataError, DatasetError) as exc:
        log.error("error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    finally:
        root.removeHandler(handler)
        root.setLevel(prev_level)


if __name__ == "__main__":
    sys.exit(main())
