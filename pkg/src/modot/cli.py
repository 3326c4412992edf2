"""Command-line entry point: ``modot {gen-data,train,eval,infer,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .checkpoint import Checkpoint
from .config import load_config
from .data import generate_dataset, load_manifest
from .errors import ModotError
from .evaluation import evaluate, infer, write_report
from .plotting import render_report
from .training import train_stage1, train_stage2

log = logging.getLogger("modot")


def _gen_data(args):
    cfg = load_config(args.config)
    manifest = generate_dataset(cfg, args.out)
    print(json.dumps({"root": str(manifest.root), "train": len(manifest.split("train")),
                      "test": len(manifest.split("test")), "errors": len(manifest.errors)}))


def _train(args):
    cfg = load_config(args.config)
    data = args.data or cfg.train.data_root
    out = args.out or cfg.train.out_dir
    manifest = load_manifest(data)
    if args.stage == 1:
        result = train_stage1(cfg, manifest, out, resume=args.resume)
    else:
        stage1 = args.stage1_ckpt or cfg.train.stage1_ckpt or str(Path(out) / "stage1.pt")
        result = train_stage2(cfg, stage1, manifest, out, resume=args.resume)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"checkpoint": str(result.path), "step": result.checkpoint.step,
                      "final_loss": last.get("total")}))


def _eval(args):
    ck = Checkpoint.load(args.ckpt)
    stage = args.stage or (2 if ck.stage == 2 else 1)
    report = evaluate(ck, load_manifest(args.data), stage=stage, split=args.split, oracle=args.oracle)
    write_report(report, args.out)
    summary = {"report": args.out, **{k: report["depth"][k] for k in ("rmse", "abs_rel", "delta1")}}
    if "ob" in report:
        summary.update(ob_recall=report["ob"]["recall"], ob_fscore=report["ob"]["fscore"])
    print(json.dumps(summary))


def _infer(args):
    print(json.dumps(infer(args.ckpt, args.image, args.out, args.stage)))


def _report(args):
    print(json.dumps(render_report(args.input, args.out)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modot", description="Joint monocular depth and occlusion-boundary estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_gen_data)

    t = sub.add_parser("train", help="train stage one or the refinement stage")
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--data", help="dataset root (default: train.data_root)")
    t.add_argument("--out", help="output directory (default: train.out_dir)")
    t.add_argument("--stage1-ckpt", help="stage-one checkpoint for --stage 2")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write a JSON report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--stage", type=int, choices=(1, 2))
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--oracle", action="store_true", help="score ground truth as the prediction")
    e.set_defaults(func=_eval)

    i = sub.add_parser("infer", help="predict depth and OB maps for one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--stage", type=int, choices=(1, 2))
    i.set_defaults(func=_infer)

    r = sub.add_parser("report", help="render tables and figures from a JSON report")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        args.func(args)
    except ModotError as exc:
        print(f"modot: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
