"""Command line harness for the denoising experiments.

Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import crf, data, meanfield, mfn
from .crf import CrfParams
from .engine import checkerboard_schedule, raster_schedule
from .mfn import DiscProtocol, MfnParams
from .mrf import softmax_init, unnormalized_kl_arrays

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _schedule_for(name: str, shape):
    h, w = shape
    if name == "checkerboard":
        return checkerboard_schedule(h, w)
    if name == "raster":
        return raster_schedule(h * w)
    raise ValueError(f"unknown schedule {name!r}")


def _load_pairs(manifest_path):
    return [img.pair for img in data.load_split(manifest_path)]


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _write_jsonl(path, rows) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def _load_crf_params(path) -> CrfParams:
    return CrfParams.from_json_dict(json.loads(Path(path).read_text()))


def _load_model(path) -> MfnParams:
    d = json.loads(Path(path).read_text())
    if "tied" in d:
        return MfnParams.from_json_dict(d)
    return MfnParams.tied_from(CrfParams.from_json_dict(d))


def cmd_gen_data(args) -> int:
    train, test = data.generate_dataset(
        n=args.n, seed=args.seed, flip_p=args.flip_p, sigma=args.sigma
    )
    meta = {
        "seed": args.seed,
        "height": data.DEFAULT_H,
        "width": data.DEFAULT_W,
        "flip_probability": args.flip_p,
        "gaussian_sigma": args.sigma,
    }
    out = Path(args.out)
    for name, split in (("train", train), ("test", test)):
        path = data.save_split(split, out / name, dict(meta, split=name))
        print(path)
    return EXIT_OK


def cmd_train_crf(args) -> int:
    pairs = _load_pairs(args.data)
    schedule = _schedule_for(args.schedule, pairs[0][0].shape)
    log: list = []
    theta = crf.train_baseline(
        pairs,
        crf.theta0(),
        steps=args.steps,
        learning_rate=args.lr,
        mf_iters=args.mf_iters,
        schedule=schedule,
        log=log,
    )
    _write_json(args.out, theta.to_json_dict())
    if args.log:
        _write_jsonl(args.log, log)
    print(args.out)
    return EXIT_OK


def cmd_run_mf(args) -> int:
    theta = _load_crf_params(args.params)
    pairs = _load_pairs(args.data)
    schedule = _schedule_for(args.schedule, pairs[0][0].shape)
    kls = []
    accs = []
    for y, x_hat in pairs:
        model = crf.build_mrf(y, theta)
        q, _ = meanfield.run(model, softmax_init(model), args.iters, schedule)
        kls.append(
            unnormalized_kl_arrays(
                q.probs, model.unary, model.pairwise, model.topology.edges
            )
        )
        accs.append(float(np.mean(np.argmax(q.probs, axis=1) == x_hat.ravel())))
    result = {
        "iters": args.iters,
        "schedule": args.schedule,
        "mean_unnormalized_kl": float(np.mean(kls)),
        "mean_accuracy": float(np.mean(accs)),
        "per_image_kl": kls,
        "per_image_accuracy": accs,
    }
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_train_mfn_inference(args) -> int:
    theta = _load_crf_params(args.params)
    pairs = _load_pairs(args.data)
    schedule = _schedule_for(args.schedule, pairs[0][0].shape)
    log: list = []
    params = mfn.train_inference(
        pairs,
        theta,
        n_layers=args.iters,
        schedule=schedule,
        learning_rate=args.lr,
        momentum=args.momentum,
        steps=args.steps,
        log=log,
    )
    _write_json(args.out, params.to_json_dict())
    if args.log:
        _write_jsonl(args.log, log)
    print(args.out)
    return EXIT_OK


def cmd_train_mfn_disc(args) -> int:
    theta = _load_crf_params(args.params)
    pairs = _load_pairs(args.data)
    schedule = _schedule_for(args.schedule, pairs[0][0].shape)
    protocol = DiscProtocol(
        phase1_steps=args.phase1_steps,
        phase1_lr=args.phase1_lr,
        phase1_momentum=args.phase1_momentum,
        phase2_steps=args.phase2_steps,
        phase2_lr=args.phase2_lr,
        phase2_momentum=args.phase2_momentum,
        c=args.c,
    )
    result = mfn.train_discriminative(
        pairs, theta, n_layers=args.layers, schedule=schedule, protocol=protocol
    )
    params = result.phase1_params if args.phase2_steps == 0 else result.params
    _write_json(args.out, params.to_json_dict())
    if args.log:
        _write_jsonl(args.log, result.log)
    print(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    params = _load_model(args.model)
    pairs = _load_pairs(args.data)
    schedule = _schedule_for(args.schedule, pairs[0][0].shape)
    n_layers = args.iters
    accs = []
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for i, (y, x_hat) in enumerate(pairs):
        trace = mfn.forward(y, params, n_layers, schedule)
        pred = mfn.predict(trace).reshape(y.shape)
        accs.append(data.pixel_accuracy(pred, x_hat))
        if out_dir:
            data.write_pgm(out_dir / f"pred_{i:03d}.pgm", pred * 255, 255)
    result = {"mean_accuracy": float(np.mean(accs)), "per_image_accuracy": accs}
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import run_grad_check

    report = run_grad_check(
        size=args.size,
        max_layers=args.max_layers,
        seed=args.seed,
        h=1e-5,
        losses=("kl", "hinge"),
    )
    print(json.dumps(report, indent=2))
    if report["max_rel_err"] >= args.tol:
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic letter dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--flip-p", type=float, default=data.DEFAULT_FLIP_P)
    p.add_argument("--sigma", type=float, default=data.DEFAULT_SIGMA)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-crf", help="likelihood-train the baseline CRF")
    p.add_argument("--data", required=True, help="train split manifest")
    p.add_argument("--out", required=True, help="output parameter JSON")
    p.add_argument("--log", default=None, help="JSON-lines metrics log")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--mf-iters", type=int, default=30)
    p.add_argument("--schedule", choices=["checkerboard", "raster"], default="checkerboard")
    p.set_defaults(func=cmd_train_crf)

    p = sub.add_parser("run-mf", help="evaluate mean field for fixed parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--schedule", choices=["checkerboard", "raster"], default="checkerboard")
    p.set_defaults(func=cmd_run_mf)

    p = sub.add_parser("train-mfn-inference", help="train untied layers to a KL target")
    p.add_argument("--params", required=True, help="target model parameters")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--iters", type=int, default=3, help="number of layers")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--schedule", choices=["checkerboard", "raster"], default="checkerboard")
    p.set_defaults(func=cmd_train_mfn_inference)

    p = sub.add_parser("train-mfn-disc", help="two-phase hinge training")
    p.add_argument("--params", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--phase1-steps", type=int, default=50)
    p.add_argument("--phase1-lr", type=float, default=0.0005)
    p.add_argument("--phase1-momentum", type=float, default=0.5)
    p.add_argument("--phase2-steps", type=int, default=200)
    p.add_argument("--phase2-lr", type=float, default=0.002)
    p.add_argument("--phase2-momentum", type=float, default=0.9)
    p.add_argument("--schedule", choices=["checkerboard", "raster"], default="checkerboard")
    p.set_defaults(func=cmd_train_mfn_disc)

    p = sub.add_parser("eval", help="accuracy of a saved model on a split")
    p.add_argument("--model", required=True, help="CRF or MFN parameter JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--out-dir", default=None, help="write per-image predictions as PGM")
    p.add_argument("--schedule", choices=["checkerboard", "raster"], default="checkerboard")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of the reverse pass")
    p.add_argument("--size", type=int, default=6)
    p.add_argument("--max-layers", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
