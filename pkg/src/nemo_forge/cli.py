"""Command-line entry point.

Subcommands: ``augment`` (full run), ``mine`` (inspect pools only),
``analyze`` (difficulty profiles), ``validate-embeddings`` (file checks),
``preview`` (composed PNGs with mask overlay). Log level comes from the
NEMO_FORGE_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import analysis
from .config import ConfigError, load_config_file, resolve_pipeline_config
from .dataset import load_dataset
from .embeddings import (
    EmbeddingFormatError,
    EmbeddingValidationError,
    load_embeddings,
)
from .mining import MiningConfig, PoolTooSmallError, build_pool
from .pipeline import PipelineError, run

logger = logging.getLogger(__name__)


def _add_common_io(parser: argparse.ArgumentParser, need_embeddings: bool = True) -> None:
    parser.add_argument("--dataset", required=True, help="annotation JSON path")
    if need_embeddings:
        parser.add_argument("--embeddings", required=True, help="embedding file path")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML or JSON config file; flags override it")
    parser.add_argument("--profile", choices=["gref", "refcoco", "refcoco+"],
                        help="dataset family defaults for tau and k")
    parser.add_argument("--tau", help="upper-bound threshold in [-1, 1], or 'none'")
    parser.add_argument("--tau-t2i", dest="tau_t2i",
                        help="text-to-image threshold (dual mode)")
    parser.add_argument("--tau-i2i", dest="tau_i2i",
                        help="image-to-image threshold (dual mode)")
    parser.add_argument("--k", type=int, help="candidate pool size (top-K)")
    parser.add_argument("--gamma", type=float, help="per-sample augmentation probability")
    parser.add_argument("--mode", choices=["t2i", "i2i-upper", "dual", "uniform"],
                        help="relevance mode for the two bounds")
    parser.add_argument("--grid", choices=["2x2", "3x3"], help="mosaic grid")
    parser.add_argument("--cross-point", dest="cross_point",
                        choices=["fixed", "anywhere", "central-quarter"],
                        help="cross-point placement policy")
    parser.add_argument("--constraints", choices=["on", "off"],
                        help="positional-keyword placement constraints")
    parser.add_argument("--seed", type=int, help="master seed (u64)")
    parser.add_argument("--workers", type=int, help="parallel worker count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nemo-forge",
        description="Mine moderately-hard negatives and compose mosaic-augmented "
                    "referring-segmentation datasets.",
    )
    parser.add_argument("--verbose", action="store_true", help="echo the resolved config")
    sub = parser.add_subparsers(dest="command", required=True)

    p_augment = sub.add_parser("augment", help="run the full augmentation pipeline")
    _add_common_io(p_augment)
    p_augment.add_argument("--out", required=True, help="output dataset directory")
    _add_config_flags(p_augment)
    p_augment.add_argument("--report", help="write the run report JSON here instead of stdout")
    p_augment.add_argument("--dump-previews", dest="dump_previews", type=int, default=0,
                           metavar="N", help="write N composed previews with mask overlay")

    p_mine = sub.add_parser("mine", help="build candidate pools only, for inspection")
    _add_common_io(p_mine)
    p_mine.add_argument("--out", required=True, help="pools JSON output path")
    _add_config_flags(p_mine)
    p_mine.add_argument("--limit", type=int, default=0, help="stop after this many samples")

    p_analyze = sub.add_parser("analyze", help="difficulty profiles and corpus stats")
    _add_common_io(p_analyze, need_embeddings=False)
    p_analyze.add_argument("--detections", help="COCO results JSON with detector output")
    p_analyze.add_argument("--iou-floor", dest="iou_floor", type=float, default=0.5,
                           help="IoU above which a detection counts as the target")
    p_analyze.add_argument("--out", required=True, help="output directory for CSV and summary")
    p_analyze.add_argument("--markdown", action="store_true",
                           help="also write the length-bin table as markdown")

    p_validate = sub.add_parser("validate-embeddings", help="check an embedding file")
    p_validate.add_argument("--embeddings", required=True)
    p_validate.add_argument("--dataset", help="also check coverage of this dataset")

    p_preview = sub.add_parser("preview", help="compose and save example mosaics")
    _add_common_io(p_preview)
    p_preview.add_argument("--out", required=True, help="preview output directory")
    _add_config_flags(p_preview)
    p_preview.add_argument("--count", type=int, default=4, help="number of previews")
    return parser


_CONFIG_KEYS = ("tau", "tau_t2i", "tau_i2i", "k", "gamma", "mode", "grid",
                "cross_point", "constraints", "seed", "workers")


def resolve_from_args(args: argparse.Namespace):
    flags = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
    file_config = load_config_file(args.config) if getattr(args, "config", None) else None
    return resolve_pipeline_config(flags, file_config, getattr(args, "profile", None))


def _echo(config) -> str:
    return json.dumps(config.echo(), indent=1, sort_keys=True)


def _cmd_augment(args: argparse.Namespace) -> int:
    config = resolve_from_args(args)
    if args.verbose:
        print(_echo(config))
    images, samples = load_dataset(args.dataset)
    store = load_embeddings(args.embeddings)
    try:
        report = run(images, samples, store, config, args.out,
                     dump_previews=args.dump_previews)
    except PipelineError as e:
        print(e.report.to_json(), file=sys.stderr)
        return 1
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    else:
        print(report.to_json())
    return 0


def _cmd_mine(args: argparse.Namespace) -> int:
    config = resolve_from_args(args)
    if args.verbose:
        print(_echo(config))
    _, samples = load_dataset(args.dataset)
    store = load_embeddings(args.embeddings)
    if args.limit:
        samples = samples[: args.limit]
    pools: Dict[str, Dict] = {}
    for sample in samples:
        try:
            pool = build_pool(store, sample, config.mining)
            pools[str(sample.sample_id)] = {
                "pool": pool.pool,
                "excluded_upper": pool.excluded_upper,
            }
        except PoolTooSmallError as e:
            pools[str(sample.sample_id)] = {"error": str(e)}
    Path(args.out).write_text(json.dumps(pools, indent=1) + "\n", encoding="utf-8")
    print(f"wrote pools for {len(pools)} samples to {args.out}")
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    images, samples = load_dataset(args.dataset)
    detections = analysis.load_detections(args.detections) if args.detections else None
    profiles = analysis.build_profiles(samples, detections, args.iou_floor)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_profiles_csv(profiles, out_dir / "profiles.csv")
    summary = analysis.summarize(images, samples, profiles)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    if args.markdown:
        (out_dir / "length_bins.md").write_text(
            analysis.markdown_length_table(summary["length_bins"]) + "\n", encoding="utf-8"
        )
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def _cmd_validate_embeddings(args: argparse.Namespace) -> int:
    try:
        store = load_embeddings(args.embeddings)
    except (EmbeddingFormatError, EmbeddingValidationError) as e:
        print(f"INVALID: {e}", file=sys.stderr)
        return 1
    print(f"ok: dim={store.dim} images={len(store.image_ids)} texts={len(store.sample_ids)}")
    if args.dataset:
        images, samples = load_dataset(args.dataset)
        missing_i = [r.image_id for r in images if not store.has_image(r.image_id)]
        missing_t = [s.sample_id for s in samples if not store.has_text(s.sample_id)]
        if missing_i or missing_t:
            print(
                f"COVERAGE GAP: {len(missing_i)} image ids, {len(missing_t)} sample ids missing",
                file=sys.stderr,
            )
            return 1
        print(f"coverage ok: {len(images)} images, {len(samples)} samples")
    return 0


def _cmd_preview(args: argparse.Namespace) -> int:
    # Previews force the gate open: compose the first N samples whose pool
    # is large enough, whatever gamma would have decided.
    from PIL import Image as PILImage

    from .mosaic import compose, plan_mosaic, render_preview
    from .pipeline import ImageCache
    from .mining import select_negatives
    from .rng import derive_sample_rng

    config = resolve_from_args(args)
    if args.verbose:
        print(_echo(config))
    images, samples = load_dataset(args.dataset)
    store = load_embeddings(args.embeddings)
    cache = ImageCache({rec.image_id: rec for rec in images})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for sample in samples:
        if written >= args.count:
            break
        rng = derive_sample_rng(config.master_seed, sample.sample_id)
        rng.random()  # keep draw alignment with the pipeline's gate
        try:
            pool = build_pool(store, sample, config.mining)
            selection = select_negatives(pool, rng)
            plan = plan_mosaic(sample, selection.negatives, config.compositor, rng)
            aug = compose(sample, cache.get(sample.image_id),
                          [cache.get(i) for i in selection.negatives], plan)
        except PoolTooSmallError:
            continue
        PILImage.fromarray(render_preview(aug)).save(
            out_dir / f"preview_{sample.sample_id}.png"
        )
        written += 1
    print(f"wrote {written} previews to {out_dir}")
    return 0


_COMMANDS = {
    "augment": _cmd_augment,
    "mine": _cmd_mine,
    "analyze": _cmd_analyze,
    "validate-embeddings": _cmd_validate_embeddings,
    "preview": _cmd_preview,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("NEMO_FORGE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        parser.error(str(e))
    except (EmbeddingFormatError, EmbeddingValidationError) as e:
        print(f"embedding error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
