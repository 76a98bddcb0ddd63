"""Command-line entry point: ``widefov <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainConfig, config_hash, load_config

log = logging.getLogger("widefov")

PLOT_WINDOW = 25


def _config(path) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def cmd_simulate(args) -> int:
    from .data import make_pair, save_pair
    from .imaging import read_image

    gt = read_image(args.input)
    source_id = args.id or Path(args.input).stem
    pair, spec = make_pair(gt, source_id, seed=args.seed, zoom=args.zoom, down_factor=args.down_factor)
    for p in save_pair(pair, args.out, spec, seed=args.seed, zoom=args.zoom):
        print(p)
    return 0


def _dataset(cfg: TrainConfig, manifest, split):
    from .data import load_manifest, make_pair
    from .imaging import read_image

    records = load_manifest(manifest)
    if split:
        records = [r for r in records if r.split == split]
    if not records:
        raise ValueError(f"no manifest rows for split {split!r}")
    pairs = []
    for i, rec in enumerate(records):
        pair, _ = make_pair(read_image(rec.path), rec.source_id, seed=cfg.seed + i,
                            zoom=cfg.zoom, down_factor=cfg.down_factor)
        pairs.append(pair)
    return pairs


def cmd_train(args) -> int:
    from .training import Trainer, pretrain, train_adversarial

    cfg = _config(args.config)
    dataset = _dataset(cfg, args.manifest, args.split)
    out = Path(args.out)
    if args.phase in ("pretrain", "all") and not args.resume:
        trainer = pretrain(cfg, dataset, out)
    else:
        if not args.resume:
            raise ValueError("--phase adversarial needs --resume CKPT")
        trainer = Trainer.load(args.resume, cfg, log_path=out / "losses.csv")
    if args.phase in ("adversarial", "all"):
        trainer = train_adversarial(cfg, dataset, trainer, out)
    print(out / f"ckpt_{trainer.iteration}.bin")
    return 0


def _enhancer(ckpt):
    from .inference import Enhancer

    return Enhancer.from_checkpoint(ckpt) if ckpt else Enhancer.untrained()


def cmd_enhance(args) -> int:
    from .imaging import read_image, write_png

    enhancer = _enhancer(args.ckpt)
    out = enhancer.enhance(read_image(args.narrow), read_image(args.wide), dump_path=args.dump_matches)
    print(write_png(args.out, out))
    return 0


def cmd_cascade(args) -> int:
    from .imaging import read_image, write_png
    from .inference import LensStack, cascade

    stack_file = Path(args.stack)
    spec = json.loads(stack_file.read_text())
    shots = []
    for entry in spec:
        p = Path(entry["path"])
        shots.append((float(entry["zoom"]), read_image(p if p.is_absolute() else stack_file.parent / p)))

    def report(k, ref_zoom, wide_zoom, img):
        log.info("stage %d: %gx -> %gx, output %dx%d", k, ref_zoom, wide_zoom, img.shape[0], img.shape[1])

    out = cascade(LensStack(tuple(shots)), _enhancer(args.ckpt), on_stage=report)
    print(write_png(args.out, out))
    return 0


def cmd_eval(args) -> int:
    from .backbone import load_backbone
    from .imaging import read_image
    from .metrics import MetricReport, evaluate

    if len(args.pred) != len(args.gt):
        raise ValueError(f"got {len(args.pred)} --pred images but {len(args.gt)} --gt images")
    backbone = load_backbone(args.backbone)
    report = MetricReport(metadata={"ssim_channel": "luminance", "backbone": backbone.label})
    for pred, gt in zip(args.pred, args.gt):
        report.add(evaluate(read_image(pred), read_image(gt), backbone, Path(pred).stem))
    if args.csv:
        sys.stdout.write(report.to_csv())
    elif args.text:
        print(report.to_text())
    elif len(report.rows) == 1:
        print(json.dumps(report.rows[0].__dict__))
    else:
        print(report.to_json())
    return 0


def moving_average(x, window: int = PLOT_WINDOW) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    window = max(1, min(window, len(x)))
    return np.convolve(x, np.ones(window) / window, mode="valid")


def cmd_plot_losses(args) -> int:
    import csv

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{args.csv} has no loss rows")
    it = np.array([int(r["iteration"]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("L_G", "L_D", "L_content", "L_visual"):
        vals = np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])
        ok = np.isfinite(vals)
        if ok.sum() == 0:
            continue
        smooth = moving_average(vals[ok], args.window)
        ax.plot(it[ok][len(it[ok]) - len(smooth):], smooth, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"loss (moving average, window {args.window})")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(_enhancer(args.ckpt)), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="widefov", description=__doc__)
    parser.add_argument("--version", action="store_true", help="print build and config hash")
    parser.add_argument("--config", help="flat key=value config file (used by --version and train)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="make a narrow/wide/gt triple from one image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zoom", type=float, default=5 / 3)
    p.add_argument("--down-factor", type=int, default=2)
    p.add_argument("--id")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train from a manifest of source images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", dest="config", default=argparse.SUPPRESS)
    p.add_argument("--split", default=None)
    p.add_argument("--phase", choices=("pretrain", "adversarial", "all"), default="all")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a wide image from its narrow counterpart")
    p.add_argument("--narrow", required=True)
    p.add_argument("--wide", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-matches")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("cascade", help="run a lens stack, narrowest shot first")
    p.add_argument("--stack", required=True, help='JSON list of {"zoom": z, "path": p}')
    p.add_argument("--ckpt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("eval", help="PSNR, SSIM and perceptual distance against ground truth")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--csv", action="store_true")
    fmt.add_argument("--text", action="store_true")
    p.add_argument("--backbone", default="auto")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot-losses", help="plot a training loss log")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=PLOT_WINDOW)
    p.set_defaults(func=cmd_plot_losses)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--ckpt")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.version:
        try:
            cfg = _config(args.config)
        except Exception as exc:  # noqa: BLE001
            print(f"widefov: error: {exc}", file=sys.stderr)
            return 1
        print(f"widefov {__version__} config {config_hash(cfg.model)}")
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"widefov: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
