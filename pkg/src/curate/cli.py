"""Command line interface.

`curate run` executes the full pipeline; `scan`, `filter`, `score`, `select`,
and `degrade` execute stage prefixes against the same manifest (repeat the
same config flags; a changed config is rejected as drift). `curate report`
summarizes completed manifests. CURATE_LOG sets log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .degrade import DegradationConfig
from .filters import FilterThresholds
from .iqa import ScorerBackend
from .manifest import ManifestError
from .pipeline import (
    MANIFEST_NAME,
    STOP_FULL,
    STOP_GATES,
    STOP_IQA,
    STOP_SCAN,
    STOP_SELECT,
    PipelineConfig,
    PipelineError,
    run,
)
from .report import ReportError, collect, summarize, write_report

log = logging.getLogger("curate.cli")

_STAGE_STOPS = {
    "run": STOP_FULL,
    "scan": STOP_SCAN,
    "filter": STOP_GATES,
    "score": STOP_IQA,
    "select": STOP_SELECT,
    "degrade": STOP_FULL,
}


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", action="append", default=[], metavar="DIR",
                   help="input image root (repeatable)")
    p.add_argument("--output", required=True, metavar="DIR",
                   help="output root (manifest, hq/, lq/)")
    p.add_argument("--preapproved", action="append", default=[], metavar="DIR",
                   help="pre-curated root whose images bypass the gates and "
                        "selection quota (repeatable)")
    p.add_argument("--blur-lo", type=float, default=150.0)
    p.add_argument("--blur-hi", type=float, default=8000.0)
    p.add_argument("--patch-size", type=int, default=240)
    p.add_argument("--flat-threshold", type=float, default=800.0)
    p.add_argument("--flat-ratio-limit", type=float, default=0.5)
    p.add_argument("--iqa-fraction", type=float, default=0.2)
    p.add_argument("--scorer-cmd", default="",
                   help="external scorer command; omit to use the builtin proxy")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--seed", type=int, default=0, help="global degradation seed")
    p.add_argument("--lq-format", choices=("png", "jpg"), default="png")
    p.add_argument("--workers", type=int, default=1, metavar="N")
    p.add_argument("--resume", action="store_true",
                   help="continue an interrupted run from its manifest")


def _config_from_args(args: argparse.Namespace, resume: bool) -> PipelineConfig:
    backend = (ScorerBackend(kind="external-process", command=args.scorer_cmd)
               if args.scorer_cmd.strip() else ScorerBackend())
    return PipelineConfig(
        input_roots=tuple(args.input),
        output_root=args.output,
        thresholds=FilterThresholds(
            blur_lo=args.blur_lo,
            blur_hi=args.blur_hi,
            patch_size=args.patch_size,
            flat_threshold=args.flat_threshold,
            flat_ratio_limit=args.flat_ratio_limit,
        ),
        backend=backend,
        degradation=DegradationConfig(epochs=args.epochs, global_seed=args.seed,
                                      lq_format=args.lq_format),
        iqa_fraction=args.iqa_fraction,
        worker_count=args.workers,
        resume=resume,
        preapproved_roots=tuple(args.preapproved),
    )


def _cmd_pipeline(args: argparse.Namespace) -> int:
    command = args.command
    manifest = os.path.join(args.output, MANIFEST_NAME)
    if command == "run":
        resume = args.resume
    elif command == "scan":
        resume = os.path.exists(manifest)
    else:
        if not os.path.exists(manifest):
            print(f"error: no manifest at {manifest}; run `curate scan` or "
                  "`curate run` first", file=sys.stderr)
            return 2
        resume = True

    cfg = _config_from_args(args, resume=resume)
    stats = run(cfg, stop_after=_STAGE_STOPS[command])
    for name, sc in stats.stages.items():
        print(f"stage {name:8s} in {sc.input_count:7d}  pass {sc.pass_count:7d}  "
              f"reject {sc.reject_count:7d}  error {sc.error_count:7d}")
    print(f"pairs written: {stats.pairs_written}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    labels = args.label or [f"corpus{i + 1}" for i in range(len(args.manifest))]
    if len(labels) != len(args.manifest):
        print("error: --label count must match --manifest count", file=sys.stderr)
        return 2
    corpora = []
    for label, manifest in zip(labels, args.manifest):
        samples = collect(manifest, sample_size=args.sample, seed=args.sample_seed)
        if not samples:
            print(f"error: manifest {manifest} has no scored images", file=sys.stderr)
            return 2
        corpora.append((label, samples))
    reports = summarize(corpora, bins=args.bins)
    csv_path, json_path = write_report(reports, args.out)
    print(f"wrote {csv_path} and {json_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curate",
        description="Filter an image corpus (blur, flatness, perceptual quality) "
                    "and synthesize degraded training pairs.",
    )
    parser.add_argument("--version", action="version", version=f"curate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "full pipeline: scan, gates, scoring, selection, pair synthesis"),
        ("scan", "enumerate inputs into the manifest"),
        ("filter", "run the blur and flat gates"),
        ("score", "score gate survivors"),
        ("select", "retain the top fraction by score"),
        ("degrade", "synthesize HQ/LQ pairs and finish the run"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_pipeline_flags(p)
        p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("report", help="dataset attribute distributions (CSV + JSON)")
    p.add_argument("--manifest", action="append", required=True, metavar="FILE")
    p.add_argument("--label", action="append", default=None, metavar="NAME")
    p.add_argument("--sample", type=int, default=None,
                   help="sample size per corpus (default: all)")
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("CURATE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, ManifestError, ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
