"""Command-line interface.

One binary, `hskp`, exposes the full workflow: hybrid-image demos, synthetic
data generation, training, evaluation, model comparison, checkpoint
inspection, and the gradient-check suite.  Every subcommand delegates to a
module function; output files are byte-identical to calling those functions
directly.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Dotted flags such
as `--train.epochs 5` mirror config-file keys and override them.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import filters as F
from . import gradsuite
from . import metrics as M
from . import train_eval as TE
from .checkpoint import load_model
from .data import SceneSpec, write_split
from .errors import ConfigError, UsageError
from .imageio import read_ppm, write_ppm
from .tensor import Tensor
from .unet import inspect_blending_factors, parameter_count

_SECTIONS = ("model", "train", "data", "eval")

# config-key sections each subcommand may override from the command line
_ALLOWED_OVERRIDES = {
    "hybrid-image": (),
    "gen-data": ("data",),
    "train": ("model", "train", "data"),
    "eval": ("data", "eval"),
    "compare": ("data", "eval"),
    "inspect": (),
    "gradcheck": (),
}


def _threads() -> int:
    raw = os.environ.get("HSKP_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _split_overrides(argv):
    """Pull `--section.key value` (or =value) flags out of argv."""
    rest, overrides = [], {}
    i = 0
    while i < len(argv):
        token = argv[i]
        key = None
        if token.startswith("--"):
            name = token[2:].split("=", 1)[0]
            if "." in name and name.split(".", 1)[0] in _SECTIONS:
                key = name
        if key is None:
            rest.append(token)
            i += 1
            continue
        if "=" in token[2:]:
            raw = token[2:].split("=", 1)[1]
            i += 1
        else:
            if i + 1 >= len(argv):
                raise ConfigError(f"flag --{key} needs a value")
            raw = argv[i + 1]
            i += 2
        overrides[key] = C.parse_option(key, raw)
    return rest, overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hskp",
        description="Frequency-blending skip connections: data, training, "
                    "evaluation, and comparison tools.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("hybrid-image",
                       help="blend the low frequencies of one image with the "
                            "high frequencies of another")
    p.add_argument("--a", required=True, help="low-frequency source (PPM)")
    p.add_argument("--b", required=True, help="high-frequency source (PPM)")
    p.add_argument("--k", required=True, type=int, help="kernel size (odd)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--alpha", type=float,
                      help="blending factor in [0,1] (default 0.5)")
    mode.add_argument("--sweep", type=int,
                      help="write N frames with alpha evenly spaced over [0,1]")
    p.add_argument("--highpass", choices=("log", "residual"), default="log")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    p.add_argument("--root", required=True, help="dataset directory")
    p.add_argument("--train", required=True, type=int, dest="train_count")
    p.add_argument("--test", required=True, type=int, dest="test_count")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--res", default=None, help="resolution WxH (default 64x64)")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")
    p.add_argument("--log", default=None,
                   help="TSV loss log path (default: <out>.log.tsv)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="report path (key = value)")

    p = sub.add_parser("compare",
                       help="evaluate several checkpoints on one split and "
                            "rank them on the metrics radar")
    p.add_argument("--runs", required=True, nargs="+", metavar="NAME=CKPT")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="CSV output path")

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("gradcheck", help="run the gradient-check suite")
    p.add_argument("--module", choices=gradsuite.MODULE_CHOICES, default="all")
    return parser


# --------------------------------------------------------------------------
# subcommand handlers; each returns a process exit code

def _cmd_hybrid_image(args, overrides):
    a = read_ppm(args.a)
    b = read_ppm(args.b)
    if args.sweep is not None:
        if args.sweep < 2:
            raise UsageError("--sweep needs at least 2 frames")
        alphas = np.linspace(0.0, 1.0, args.sweep)
    else:
        alphas = [0.5 if args.alpha is None else args.alpha]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for alpha in alphas:
        frame = F.make_hybrid_image(Tensor(a), Tensor(b), args.k,
                                    float(alpha), highpass=args.highpass)
        path = out_dir / f"hybrid_{float(alpha):.4f}.ppm"
        write_ppm(path, np.clip(frame.data, 0.0, 1.0))
        print(f"wrote {path}")
    return 0


def _cmd_gen_data(args, overrides):
    if args.res is not None:
        resolution = C.parse_option("data.resolution", args.res)
    else:
        resolution = overrides.get("data.resolution", (64, 64))
    template = SceneSpec(
        seed=0, resolution=resolution,
        object_count=overrides.get("data.objects", 4),
        texture_frequency=overrides.get("data.texture_frequency", 3.0))
    # +1000 keeps the per-sample seed ranges of the two splits disjoint
    write_split(args.root, "train", args.seed, args.train_count, template)
    write_split(args.root, "test", args.seed + 1000, args.test_count, template)
    print(f"wrote {args.train_count} train / {args.test_count} test samples "
          f"to {args.root}")
    return 0


def _cmd_train(args, overrides):
    options = C.parse_config_file(args.config) if args.config else {}
    options.update(overrides)
    train_cfg = TE.TrainConfig(**C.train_options(options))
    model_cfg = None if args.resume else C.model_config(options)
    if "data.root" not in options:
        raise ConfigError("data.root is required (config file or --data.root)")
    log_path = args.log if args.log else f"{args.out}.log.tsv"
    model, log = TE.train(
        train_cfg, model_cfg, options["data.root"],
        split=options.get("data.split", "train"),
        checkpoint_path=args.out, resume_from=args.resume, log_path=log_path)
    print(f"trained {model.cfg.skip} for {train_cfg.epochs} epochs "
          f"({len(log.steps)} steps this run) in {log.wall_time:.1f}s")
    if log.epoch_means:
        print(f"final epoch mean loss: {log.epoch_means[-1]:.6f}")
    print(f"checkpoint: {args.out}")
    print(f"log: {log_path}")
    return 0


def _cmd_eval(args, overrides):
    report = TE.evaluate(
        args.ckpt, args.data,
        split=overrides.get("eval.split", "test"),
        max_depth=overrides.get("eval.max_depth", M.MAX_DEPTH),
        workers=_threads())
    text = M.report_text(report)
    Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"report: {args.out}")
    return 0


def _parse_runs(tokens):
    runs = []
    for token in tokens:
        name, sep, path = token.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--runs entries look like NAME=CKPT, got {token!r}")
        runs.append((name, path))
    return runs


def _cmd_compare(args, overrides):
    runs = _parse_runs(args.runs)
    named_reports, rows = TE.compare(
        runs, args.data,
        split=overrides.get("eval.split", "test"),
        max_depth=overrides.get("eval.max_depth", M.MAX_DEPTH),
        workers=_threads())
    csv_text = M.report_csv(named_reports) + "\n" + M.radar_csv(rows)
    Path(args.out).write_text(csv_text, encoding="utf-8")
    best = max(rows, key=lambda r: r.area)
    for row in rows:
        print(f"{row.name}: area {row.area:.4f}")
    print(f"largest radar area: {best.name}")
    print(f"csv: {args.out}")
    return 0


def _cmd_inspect(args, overrides):
    model, extra = load_model(args.ckpt)
    cfg = model.cfg
    print(f"skip: {cfg.skip}")
    print(f"channel plan: {', '.join(str(f) for f in cfg.channel_plan)}")
    print(f"parameters: {parameter_count(model)}")
    print(f"activation: {cfg.activation}   output: {cfg.output_transform}")
    if cfg.skip in ("hybrid", "blend", "low", "high"):
        print(f"kernel size: {cfg.filter_size}   highpass: {cfg.highpass}")
    if "train.step" in extra:
        print(f"trained steps: {int(extra['train.step'][0])} "
              f"({int(extra['train.epochs_done'][0])} epochs)")
    if cfg.skip not in ("hybrid", "blend"):
        print("no blending factors (skip kind has none)")
        return 0
    print("blending factors (sigmoid of the raw parameters):")
    print("level      eps mean   std     min     max   delta mean   std     min     max")
    report = inspect_blending_factors(model)
    for row in report:
        eps, delta = row["eps"], row["delta"]
        print(f"{row['level']:>5}   {eps.mean():10.4f} {eps.std():6.4f}"
              f" {eps.min():7.4f} {eps.max():7.4f}   {delta.mean():10.4f}"
              f" {delta.std():6.4f} {delta.min():7.4f} {delta.max():7.4f}")
    shallow, deep = report[0], report[-1]
    eps_dir = "rises" if deep["eps_mean"] > shallow["eps_mean"] else "falls"
    delta_dir = "rises" if deep["delta_mean"] > shallow["delta_mean"] else "falls"
    print(f"trend: eps mean {eps_dir} from level 1 to 5 "
          f"({shallow['eps_mean']:.4f} -> {deep['eps_mean']:.4f}), "
          f"delta mean {delta_dir} "
          f"({shallow['delta_mean']:.4f} -> {deep['delta_mean']:.4f})")
    return 0


def _cmd_gradcheck(args, overrides):
    results = gradsuite.run_suite(args.module)
    worst = 0.0
    failed = 0
    for name, err in results:
        ok = err < gradsuite.TOLERANCE
        failed += 0 if ok else 1
        worst = max(worst, err)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {err:.3g}")
    print(f"{len(results)} checks, worst relative error {worst:.3g}")
    return 0 if failed == 0 else 1


_COMMANDS = {
    "hybrid-image": _cmd_hybrid_image,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "inspect": _cmd_inspect,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        rest, overrides = _split_overrides(argv)
    except ConfigError as exc:
        print(f"hskp: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(rest)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    stray = [key for key in overrides
             if key.split(".", 1)[0] not in _ALLOWED_OVERRIDES[args.command]]
    if stray:
        print(f"hskp: {args.command} does not take "
              f"{', '.join('--' + key for key in sorted(stray))}",
              file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args, overrides)
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"hskp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
