"""``psltd`` command line.

Exit codes: 0 ok, 1 unexpected error, 2 config error, 3 data error,
4 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import PsltdError
from .synthgen import STYLES

log = logging.getLogger("psltd")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None
    return h, w


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--jobs", type=int, help="worker processes (override run.jobs)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="psltd", description="Printer attribution from letter texture.",
                                 parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="manifest -> pooled feature file")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True, help="feature file (.bin); sidecars go next to it")
    p.add_argument("--dump-descriptors", metavar="PATH", help="also write unpooled descriptors")

    p = sub.add_parser("train", parents=[common], help="feature file -> model")
    p.add_argument("features")
    p.add_argument("-o", "--out", required=True, help="model file (.json) ; support rows go to <out>.sv")

    p = sub.add_parser("predict", parents=[common], help="model + manifest -> predictions")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True,
                   help="output prefix: writes PREFIX.jsonl, PREFIX.pages.csv, PREFIX.confusion.csv")

    p = sub.add_parser("eval", parents=[common], help="train/test over page-disjoint splits")
    p.add_argument("manifest")
    p.add_argument("--split", default="kfold",
                   help="kfold[:K[:R]] (default 2x5), same-font:TAG[:K[:R]], cross-font:TRAIN:TEST")
    p.add_argument("-o", "--out", help="directory for report.json and confusion.csv")

    p = sub.add_parser("synth", parents=[common], help="generate synthetic printer pages")
    p.add_argument("out_dir")
    p.add_argument("--printers", type=int, default=4)
    p.add_argument("--pages", type=int, default=5, help="pages per printer and style")
    p.add_argument("--glyphs", type=int, default=40, help="glyphs per page")
    p.add_argument("--styles", default="blocky", help=f"comma-separated subset of {','.join(STYLES)}")
    p.add_argument("--size", type=_size, default=(600, 500), help="page ROWSxCOLS (default 600x500)")
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    p.add_argument("--identical", action="store_true", help="all printers share one profile (null model)")
    p.add_argument("--page-offset", type=int, default=0, help="first page number")

    p = sub.add_parser("diag", parents=[common], help="linear-structure counts per printer")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", help="CSV output (default: stdout summary only)")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.jobs)
        if args.command == "extract":
            m = pipeline.run_extract(args.manifest, args.out, cfg, args.dump_descriptors)
            print(f"{len(m)} rows, dim {m.dim}, config {cfg.hash()}")
        elif args.command == "train":
            model = pipeline.run_train(args.features, args.out, cfg)
            print(f"cv accuracy {model.meta['cv_accuracy']:.4f} at log2C={model.meta['log2_c']} "
                  f"log2gamma={model.meta['log2_gamma']}")
        elif args.command == "predict":
            preds = pipeline.run_predict(args.model, args.manifest, args.out, cfg)
            labeled = [p for p in preds if p.label]
            if labeled and len(labeled) == len(preds):
                acc = sum(p.correct for p in preds) / len(preds)
                print(f"{len(preds)} pages, page accuracy {acc:.4f}")
            else:
                print(f"{len(preds)} pages predicted")
        elif args.command == "eval":
            report = pipeline.run_eval(args.manifest, cfg, args.split, args.out)
            lo, hi = report["wilson_95"]
            print(f"mean accuracy {report['mean_accuracy']:.4f} (std {report['std_accuracy']:.4f}, "
                  f"pooled {report['pooled_accuracy']:.4f}, 95% CI [{lo:.4f}, {hi:.4f}], "
                  f"chance {report['chance']:.4f})")
            if args.out is None:
                print(json.dumps(report["per_class_accuracy"], indent=2))
        elif args.command == "synth":
            styles = tuple(s.strip() for s in args.styles.split(",") if s.strip())
            manifest = pipeline.run_synth(args.out_dir, args.printers, args.pages, args.glyphs, styles,
                                          cfg.seed, args.size, args.bit_depth, args.identical,
                                          args.page_offset)
            print(manifest)
        elif args.command == "diag":
            stats = pipeline.run_diag(args.manifest, cfg, args.out)
            for pid in sorted(stats):
                d = stats[pid]
                counts = " ".join(f"{n}={int(v)}" for n, v in zip(pipeline.ORIENTATION_NAMES, d.structures))
                print(f"{pid}: pages={d.pages} components={d.components} {counts}")
    except PsltdError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
