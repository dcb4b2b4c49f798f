"""Command-line entry point: ``python -m cfftgan <command> ...``.

Exit status: 0 on success, 1 on runtime failure, 2 on usage errors.
Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import numcore as nc
from .data import load_image, make_dataset, read_manifest, save_image, synth_pair, write_manifest

MANIFEST = "manifest.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cfftgan", description="Exemplar-based image translation with cross-domain fusion transformers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a synthetic scene dataset (manifest + PPMs)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train from a key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("translate", help="translate one content image with one exemplar")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--content", required=True)
    p.add_argument("--exemplar", required=True)
    p.add_argument("--extra", nargs="*", default=[], help="extra-domain images for cascaded models")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="print swd / semantic_consistency / style_similarity")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory written by gen-data; exemplars are re-rendered from its manifest")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive, layer and loss")
    p.add_argument("--dtype", choices=["float32", "float64", "both"], default="both")
    p.add_argument("--only", nargs="*", help="restrict to these case names")
    return ap


def _gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.size < 16 or args.size % 4:
        raise UsageError("--size must be a multiple of 4 and >= 16")
    os.makedirs(args.out, exist_ok=True)
    specs = make_dataset(args.seed, args.count, args.size)
    write_manifest(specs, os.path.join(args.out, MANIFEST))
    for i, spec in enumerate(specs):
        x_A, x_B = synth_pair(spec, args.size)
        save_image(x_A, os.path.join(args.out, f"{i:05d}_a.ppm"))
        save_image(x_B, os.path.join(args.out, f"{i:05d}_b.ppm"))
    print(f"wrote {len(specs)} pairs to {args.out}")
    return 0


def _train(args) -> int:
    from .trainkit import TrainConfig, load_checkpoint, train

    cfg = TrainConfig.load(args.config)
    changes = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.steps:
        changes["steps"] = args.steps
    cfg = cfg.replace(**changes)
    state = None
    if args.resume:
        state = load_checkpoint(args.resume)
        state.cfg = cfg
    state = train(cfg, state=state)
    last = state.history[-1] if state.history else {}
    print(f"trained to step {state.step}; g_total={last.get('g_total', float('nan')):.4f}")
    return 0


def _load_model(path):
    from .trainkit import load_checkpoint

    return load_checkpoint(path)


def _translate(args) -> int:
    from .translation import translate

    state = _load_model(args.ckpt)
    imgs = [load_image(p) for p in (args.content, args.exemplar, *args.extra)]
    with nc.no_tape():
        out = translate(state.model, imgs[0], imgs[1], imgs[2:])
    save_image(out.data, args.out)
    return 0


def _eval(args) -> int:
    from .trainkit.evaluate import EvalSet, evaluate, exemplars_for

    state = _load_model(args.ckpt)
    S = state.cfg.image_size
    manifest = os.path.join(args.data, MANIFEST)
    specs = read_manifest(manifest)
    if not specs:
        raise ValueError(f"empty manifest {manifest}")
    pairs = [synth_pair(s, S) for s in specs]
    x_A = np.stack([p[0] for p in pairs])
    x_B = np.stack([p[1] for p in pairs])
    es = EvalSet(x_A, exemplars_for(specs, S, seed=0), x_B)
    for k, v in evaluate(state.model, es, state.extractor).summary().items():
        print(f"{k}={v:.6f}")
    return 0


def _gradcheck(args) -> int:
    from .gradsuite import run_suite

    dtypes = ("float32", "float64") if args.dtype == "both" else (args.dtype,)
    results = run_suite(dtypes, names=set(args.only) if args.only else None)
    if not results:
        raise UsageError("no gradient-check case matched --only")
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        worst = max(r.report.max_rel_error) if r.report.max_rel_error else 0.0
        print(f"{status} {r.dtype} {r.name} max_rel_error={worst:.2e}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 1 if failed else 0


COMMANDS = {
    "gen-data": _gen_data,
    "train": _train,
    "translate": _translate,
    "eval": _eval,
    "gradcheck": _gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cfftgan {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"cfftgan {args.command}: error: {exc}", file=sys.stderr)
        return 1
