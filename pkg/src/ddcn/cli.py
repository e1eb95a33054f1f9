"""Command-line front end: analyze, gradcheck, synth, train, predict, eval.

Payload output goes to stdout; the resolved configuration and progress
notes go to stderr, so stdout is stable enough to compare byte-for-byte
against golden files.  Exit codes: 0 success, 1 usage/config error,
2 data or format error, 3 numeric failure.

Heavy imports happen inside main() so the DDCN_THREADS cap (and
--deterministic's single-thread mode) can be applied to the BLAS pools
before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _setup_threads(argv) -> None:
    cap = os.environ.get("DDCN_THREADS")
    if "--deterministic" in argv:
        cap = "1"
    if cap is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        if h < 1 or w < 1:
            raise ValueError
        return (h, w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a rational number, got {text!r}")


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "on", "yes"):
        return True
    if text.lower() in ("0", "false", "off", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="ddcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-layer geometry and parameter counts")
    p.add_argument("arch", choices=["ours", "vgg", "both"])
    p.add_argument("--input", type=_size, default=None, metavar="HxW")
    p.add_argument("--width-scale", type=_fraction, default=Fraction(1))
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--precision", choices=["f64", "f32"], default="f64")
    p.add_argument("--sabotage", default=None, metavar="OP",
                   help="test hook: corrupt the named op's analytic gradient")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic PPM/PGM dataset with manifest")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=_size, default=(80, 60), metavar="HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("train", help="two-phase training")
    p.add_argument("--arch", choices=["ours", "vgg"], default="ours")
    p.add_argument("--manifest", default=None)
    p.add_argument("--synthetic", type=int, default=None, metavar="N")
    p.add_argument("--phase", choices=["1", "2", "both"], default="both")
    p.add_argument("--epochs", type=int, default=20, help="epochs per phase")
    p.add_argument("--epochs2", type=int, default=None, help="override phase-2 epochs")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width-scale", type=_fraction, default=Fraction(1))
    p.add_argument("--freeze-coarse", type=_bool, default=True, metavar="BOOL")
    p.add_argument("--fine-pool", type=_bool, default=True, metavar="BOOL")
    p.add_argument("--stop-loss", type=float, default=None,
                   help="stop a phase early once train loss drops below")
    p.add_argument("--coarse-ckpt", default=None, help="checkpoint to start phase 2 from")
    p.add_argument("--resume", default=None, help="checkpoint to continue training from")
    p.add_argument("--out", default="out")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("predict", help="run a checkpoint on one RGB image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--out", required=True, help="16-bit PGM depth (millimeters)")
    p.add_argument("--preview", default=None, help="optional 8-bit normalized preview PGM")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("eval", help="metrics over a dataset split")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--mode", default="model",
                   help="model (default), truth (prediction:=truth), or scale:<c>")
    p.add_argument("--manifest", default=None)
    p.add_argument("--synthetic", type=int, default=None, metavar="N")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true")
    return parser


def _print_config(args) -> None:
    items = sorted(vars(args).items())
    text = " ".join(f"{k.replace('_', '-')}={v}" for k, v in items if k != "command")
    print(f"config: command={args.command} {text}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_analyze(args) -> int:
    from .arch import (STACK_FINE, STACK_OURS, STACK_VGG, count_parameters,
                       geometry_report, make_arch, render_table)
    arch = make_arch(args.arch, args.width_scale)
    sys.stdout.write(render_table(arch))
    for sname, lname, size, rf in geometry_report(arch, args.input):
        print(f"geometry {sname}/{lname} size {size} rf {rf}")
    report = count_parameters(arch)
    for name, count in report.per_layer:
        print(f"params {name} {count}")
    for sname, total in report.stack_totals.items():
        print(f"stack_total {sname} {total}")
    fine_total = report.stack_totals.get(STACK_FINE, 0)
    for label, stack in (("ours", STACK_OURS), ("vgg", STACK_VGG)):
        if stack in report.stack_totals:
            print(f"framework_total {label} {report.stack_totals[stack] + fine_total}")
    if report.ratio_vgg_over_ours is not None:
        vgg_fw = report.stack_totals[STACK_VGG] + fine_total
        ours_fw = report.stack_totals[STACK_OURS] + fine_total
        print(f"ratio_vgg_over_ours_framework={vgg_fw / ours_fw:.4f}")
        print(f"ratio_vgg_over_ours={float(report.ratio_vgg_over_ours):.4f}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .errors import ConfigError
    if args.precision != "f64":
        raise ConfigError("gradient checking requires 64-bit precision (--precision f64)")
    from .gradcheck import run_all
    reports = run_all(seed=args.seed, instances=args.instances, sabotage=args.sabotage)
    failed = []
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"op {r.name} instances {r.instances} max_rel_err {r.max_rel_err:.3e} "
              f"tol {r.tolerance:.0e} {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradcheck FAILED: {', '.join(failed)}")
        return EXIT_NUMERIC
    print("gradcheck PASS")
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .data import save_pair, synth_dataset, write_manifest
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = synth_dataset(args.n, args.size, args.seed)
    entries = []
    for sid in sorted(samples):
        rgb_name, depth_name = save_pair(out, sid, samples[sid])
        entries.append((sid, rgb_name, depth_name))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, entries)
    print(f"wrote {len(entries)} samples to {manifest}")
    return EXIT_OK


def _load_dataset(args, input_hw, seed):
    """Resolve --synthetic/--manifest into (samples dict, DatasetIndex)."""
    from .data import load_pair, read_manifest, shuffle_split, synth_dataset
    from .errors import ConfigError
    if (args.synthetic is None) == (args.manifest is None):
        raise ConfigError("exactly one of --synthetic or --manifest is required")
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise ConfigError("--synthetic needs n >= 1")
        samples = synth_dataset(args.synthetic, input_hw, seed)
        ids = sorted(samples)
        index = shuffle_split(ids, seed, (len(ids), 0, 0))
        return samples, index
    entries = read_manifest(args.manifest)
    samples = {sid: load_pair(rgb, depth, input_hw) for sid, rgb, depth in entries}
    ids = [sid for sid, _, _ in entries]
    n = len(ids)
    if n == 1449:
        sizes = (800, 200, 449)
    else:
        n_train = max(1, round(n * 800 / 1449))
        n_val = min(round(n * 200 / 1449), n - n_train)
        sizes = (n_train, n_val, n - n_train - n_val)
    index = shuffle_split(ids, seed, sizes)
    return samples, index


def _cmd_train(args) -> int:
    from .arch import make_arch
    from .errors import ConfigError
    from .model import build_model
    from .train import PreparedData, TrainConfig, Trainer, prepare_data

    arch = make_arch(args.arch, args.width_scale, fine_pool=args.fine_pool)
    net = build_model(arch, seed=args.seed)
    samples, index = _load_dataset(args, net.coarse_input_size, args.seed)
    config = TrainConfig(
        learning_rate=args.lr, momentum=args.momentum, batch_size=args.batch,
        epochs_phase1=args.epochs,
        epochs_phase2=args.epochs2 if args.epochs2 is not None else args.epochs,
        seed=args.seed, width_scale=args.width_scale,
        freeze_coarse_in_phase2=args.freeze_coarse, stop_loss=args.stop_loss)
    data = prepare_data(samples, index, net)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train.log"
    log_file = open(log_path, "w", encoding="utf-8")

    def log(line: str) -> None:
        print(line)
        log_file.write(line + "\n")
        log_file.flush()

    trainer = Trainer(net, data, config, out, log=log)
    start1 = start2 = 0
    if args.resume:
        meta = trainer.load(args.resume)
        phase = int(meta.get("phase", "1"))
        epoch = int(meta.get("epoch", "-1"))
        if phase == 1:
            start1 = epoch + 1
        else:
            start2 = epoch + 1
            if args.phase == "both":
                args.phase = "2"
    try:
        if args.phase in ("1", "both"):
            ckpt = trainer.train_phase1(epochs=config.epochs_phase1 - start1,
                                        start_epoch=start1)
            print(f"phase 1 checkpoint: {ckpt}", file=sys.stderr)
        if args.phase in ("2", "both"):
            coarse = args.coarse_ckpt if args.phase == "2" and not args.resume else None
            if args.phase == "2" and coarse is None and not args.resume:
                raise ConfigError("--phase 2 needs --coarse-ckpt (or --resume)")
            ckpt = trainer.train_phase2(coarse_ckpt=coarse,
                                        epochs=config.epochs_phase2 - start2,
                                        start_epoch=start2)
            print(f"phase 2 checkpoint: {ckpt}", file=sys.stderr)
    finally:
        log_file.close()
    return EXIT_OK


def _build_from_checkpoint(path):
    from .arch import make_arch
    from .checkpoint import load_checkpoint, require_fingerprint
    from .errors import CheckpointError
    from .model import build_model
    params, velocities, meta = load_checkpoint(path)
    try:
        arch = make_arch(meta["arch"], Fraction(meta["width_scale"]),
                         fine_pool=meta.get("fine_pool", "on") == "on",
                         vgg_head=meta.get("vgg_head", "reshape"))
    except KeyError as e:
        raise CheckpointError(f"{path}: metadata missing {e}")
    from .arch import fingerprint
    require_fingerprint(meta, fingerprint(arch), path)
    net = build_model(arch, seed=0)
    net.set_parameters(params)
    return net, meta


def _cmd_predict(args) -> int:
    import numpy as np
    from .data import bilinear_resize, read_ppm, write_pgm8, write_pgm16
    net, _ = _build_from_checkpoint(args.ckpt)
    rgb = read_ppm(args.rgb)
    coarse_in = bilinear_resize(rgb, net.coarse_input_size)[0][None]
    fine_in = bilinear_resize(rgb, net.fine_input_size)[0][None]
    pred_log = net.forward_full(coarse_in, fine_in)[0, 0]
    depth_m = np.exp(pred_log.astype(np.float64))
    mm = np.clip(np.round(depth_m * 1000.0), 1, 65535).astype(np.uint16)
    write_pgm16(args.out, mm)
    if args.preview:
        lo, hi = float(depth_m.min()), float(depth_m.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        write_pgm8(args.preview, np.round((depth_m - lo) * scale).astype(np.uint8))
    print(f"depth_min {depth_m.min():.6f} depth_max {depth_m.max():.6f} "
          f"depth_mean {depth_m.mean():.6f} size {mm.shape[0]}x{mm.shape[1]}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    import numpy as np
    from .errors import ConfigError
    from .loss import DEPTH_FLOOR
    from .train import metrics_over, prepare_data, TrainConfig, Trainer

    mode = args.mode
    scale = None
    if mode.startswith("scale:"):
        scale = float(mode.split(":", 1)[1])
        if scale <= 0:
            raise ConfigError("scale factor must be positive")
        mode = "scale"
    if mode not in ("model", "truth", "scale"):
        raise ConfigError(f"unknown eval mode {args.mode!r}")

    if mode == "model":
        if not args.ckpt:
            raise ConfigError("--mode model needs --ckpt")
        net, _ = _build_from_checkpoint(args.ckpt)
        samples, index = _load_dataset(args, net.coarse_input_size, args.seed)
        data = prepare_data(samples, index, net)
        split = args.split if index.ids(args.split) else "train"
        config = TrainConfig(batch_size=args.batch, seed=args.seed)
        trainer = Trainer(net, data, config, out_dir=Path("."), log=lambda s: None)
        m = trainer.evaluate(split)
    else:
        from .arch import make_arch
        from .model import build_model
        net = build_model(make_arch("ours", Fraction(1, 8)), seed=args.seed)
        samples, index = _load_dataset(args, net.coarse_input_size, args.seed)
        data = prepare_data(samples, index, net)
        split = args.split if index.ids(args.split) else "train"
        ids = index.ids(split)
        preds = {}
        offset = float(np.log(scale)) if mode == "scale" else 0.0
        for sid in ids:
            depth = data.depth[sid][None]
            log_t = np.log(np.maximum(depth, DEPTH_FLOOR), dtype=np.float64)
            preds[sid] = (log_t + offset).astype(np.float32)
        m = metrics_over(preds, data, ids)
    print(f"L={m['scale_invariant_L']:.6f} D={m['D_with_alpha']:.6f} "
          f"rmse_log={m['rmse_log']:.6f} n_images={m['n_images']}")
    return EXIT_OK


_COMMANDS = {
    "analyze": _cmd_analyze,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_threads(argv)
    args = build_parser().parse_args(argv)
    _print_config(args)
    from .errors import (CheckpointError, ConfigError, DataFormatError, DomainError,
                         EmptyMaskError, GeometryError, NumericError, ShapeError)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ShapeError, GeometryError, EmptyMaskError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
