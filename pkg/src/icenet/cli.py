"""Command-line entry points: train, enhance, eval, gradcheck, serve, personalize."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, imgops, metrics, model, personalization, pipeline, training


def _read_config_file(path: str) -> dict[str, str]:
    """key=value lines; blank lines and '#' comments ignored."""
    overrides = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line {raw!r}, expected key=value")
        key, value = line.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


_TRAIN_FIELDS = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "side": int,
    "seed": int,
    "entropy_weight": float,
    "smoothness_weight": float,
    "scribble_strength": float,
    "curve_gamma": float,
    "window": int,
    "hist_slope": float,
    "normalization": str,
    "checkpoint_interval": int,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icenet", description="interactive contrast enhancement toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the gamma estimator")
    p_train.add_argument("--data", required=True, help="directory of training images")
    p_train.add_argument("--out", required=True, help="output directory for checkpoints")
    p_train.add_argument("--config", help="optional key=value config file")
    for name, kind in _TRAIN_FIELDS.items():
        p_train.add_argument(f"--{name.replace('_', '-')}", type=kind, default=None)
    p_train.add_argument("--fixed-annotation", action="store_true",
                         help="draw one annotation per image and reuse it every epoch")

    p_enh = sub.add_parser("enhance", help="enhance one image with a checkpoint")
    p_enh.add_argument("--ckpt", required=True)
    p_enh.add_argument("--input", required=True)
    p_enh.add_argument("--out", required=True)
    p_enh.add_argument("--eta", type=float, default=None)
    p_enh.add_argument("--scribbles", help="JSON stroke list (the service schema)")
    p_enh.add_argument("--precision", choices=("single", "double"), default="single")

    p_eval = sub.add_parser("eval", help="PSNR/SSIM over a paired dataset")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--pairs", required=True,
                        help="directory with input/ and reference/ subdirectories")
    p_eval.add_argument("--policy", choices=("best", "init"), default="best")
    p_eval.add_argument("--store", help="observation store for the init policy")
    p_eval.add_argument("--report", help="write per-image CSV here")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--size", type=int, default=8)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--samples", type=int, default=3)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--ckpt", default=os.environ.get("ICENET_CHECKPOINT"))
    p_serve.add_argument("--store-dir", default=os.environ.get("ICENET_STORE_DIR", "profiles"))
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)

    p_pers = sub.add_parser("personalize", help="inspect or extend an observation store")
    p_pers.add_argument("--store", required=True)
    group = p_pers.add_mutually_exclusive_group(required=True)
    group.add_argument("--record", nargs=2, type=float, metavar=("Y", "ETA"))
    group.add_argument("--show", action="store_true")

    return parser


def _parse_strokes(blob) -> list[imgops.Stroke]:
    items = blob["strokes"] if isinstance(blob, dict) else blob
    return [
        imgops.Stroke(s["polarity"], tuple((x, y) for x, y in s["points"]),
                      int(s.get("radius", 10)))
        for s in items
    ]


def _cmd_train(args, parser) -> int:
    overrides: dict = {}
    if args.config:
        for key, value in _read_config_file(args.config).items():
            if key not in _TRAIN_FIELDS:
                parser.error(f"unknown config key {key!r}")
            overrides[key] = _TRAIN_FIELDS[key](value)
    for name in _TRAIN_FIELDS:
        flag = getattr(args, name)
        if flag is not None:
            overrides[name] = flag
    config = training.TrainConfig(
        data_dir=args.data,
        out_dir=args.out,
        resample_annotations=not args.fixed_annotation,
        **overrides,
    )
    result = training.train(config)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final epoch mean loss: {result.epoch_means[-1]:.6f}")
    return 0


def _cmd_enhance(args, parser) -> int:
    eta = args.eta
    strokes: list[imgops.Stroke] = []
    if args.scribbles:
        blob = json.loads(Path(args.scribbles).read_text(encoding="utf-8"))
        strokes = _parse_strokes(blob)
        if eta is None and isinstance(blob, dict) and "eta" in blob:
            eta = float(blob["eta"])
    if eta is None:
        parser.error("--eta is required (or an 'eta' key in the scribbles file)")
    if not 0.0 <= eta <= 1.0:
        parser.error(f"--eta must be in [0, 1], got {eta}")
    params = model.load_checkpoint(args.ckpt)
    rgb = imgops.load_image(args.input)
    dtype = np.float32 if args.precision == "single" else np.float64
    result = pipeline.enhance_rgb(params, rgb, eta, strokes, dtype=dtype)
    imgops.save_png(args.out, result.image)
    print(
        f"wrote {args.out}  gamma[min={result.gamma_min:.4f} mean={result.gamma_mean:.4f} "
        f"max={result.gamma_max:.4f}]  mean_luma={result.mean_luma:.2f}"
    )
    return 0


def _cmd_eval(args, parser) -> int:
    store = personalization.ObservationStore(args.store) if args.store else None
    if args.policy == "init" and store is None:
        parser.error("--store is required for the init policy")
    params = model.load_checkpoint(args.ckpt)
    report = metrics.eval_pairs(params, args.pairs, policy=args.policy, store=store)
    for pair in report.pairs:
        print(f"{pair.name}  eta={pair.eta_used:.2f}  psnr={pair.psnr_db:.2f} dB  "
              f"ssim={pair.ssim:.4f}")
    print(f"mean psnr={report.mean_psnr:.2f} dB  mean ssim={report.mean_ssim:.4f}")
    if args.report:
        report.write_csv(args.report)
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck.check_losses(
        seed=args.seed, size=args.size, h=args.step, samples_per_param=args.samples
    )
    ok = True
    for name, err in report.items():
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        ok &= err < gradcheck.TOLERANCE
        print(f"{name:<12} worst relative error {err:.3e}  {status}")
    return 0 if ok else 1


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint=args.ckpt, store_dir=args.store_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_personalize(args) -> int:
    store = personalization.ObservationStore(args.store)
    if args.record:
        y, eta = args.record
        count = store.append(y, eta)
        print(f"recorded ({y}, {eta}); M={count} active={count >= personalization.MIN_OBSERVATIONS}")
        return 0
    observations = store.load()
    print(f"M={len(observations)}")
    for y, eta in observations:
        print(f"{y}\t{eta}")
    if len(observations) >= personalization.MIN_OBSERVATIONS:
        fit = personalization.fit_quadratic(observations)
        print(f"fit: a={fit.a:.6g} b={fit.b:.6g} c={fit.c:.6g} degraded={fit.degraded}")
    else:
        print("personalization inactive (need more than 3 observations)")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args, parser)
        if args.command == "enhance":
            return _cmd_enhance(args, parser)
        if args.command == "eval":
            return _cmd_eval(args, parser)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "personalize":
            return _cmd_personalize(args)
        parser.error(f"unknown command {args.command!r}")
    except (OSError, ValueError, RuntimeError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
