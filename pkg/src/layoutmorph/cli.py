"""Command-line front end for corpus generation, runs, and reporting."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .backends.base import FaultPolicy
from .corpus import write_synthetic_corpus
from .errors import LayoutMorphError
from .harness import RunConfig, ablation_run, replay_case, run_pipeline, summarize

logger = logging.getLogger(__name__)


def _parse_kv_list(text: str, flag: str) -> list[tuple[str, str]]:
    """Split 'a=x,b=y' into pairs; '=' inside values (URLs) survives."""
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise SystemExit(f"{flag}: expected key=value, got {chunk!r}")
        key, value = chunk.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--corpus", help="corpus directory or corpus.json path")
    sub.add_argument("--palette", help="palette.json overriding the corpus palette")
    sub.add_argument("--config", help="JSON file with a full run configuration")
    sub.add_argument(
        "--backends",
        help="segment=...,inpaint=...,translate=... ('synthetic' or an http URL)",
    )
    sub.add_argument(
        "--systems",
        help="comma-separated id=endpoint pairs for the captioning systems under test",
    )
    sub.add_argument("--seed", type=int, help="master seed (default 0)")
    sub.add_argument("--out", help="report output directory")
    sub.add_argument("--cache", help="caption cache directory")
    sub.add_argument("--jobs", type=int, help="seed-level worker count (default 1)")
    sub.add_argument(
        "--reconstructions", type=int, help="edited layouts per seed (default 10)"
    )
    sub.add_argument(
        "--samples", type=int, help="images rendered per edited layout (default 5)"
    )


def _config_from_args(args) -> RunConfig:
    if args.config:
        config = RunConfig.from_json_obj(
            json.loads(Path(args.config).read_text(encoding="utf-8"))
        )
    else:
        missing = [
            flag
            for flag, value in (
                ("--corpus", args.corpus),
                ("--out", args.out),
                ("--cache", args.cache),
                ("--systems", args.systems),
            )
            if not value
        ]
        if missing:
            raise SystemExit(f"missing required flags (or use --config): {', '.join(missing)}")
        config = RunConfig(
            corpus_path=args.corpus,
            output_dir=args.out,
            cache_dir=args.cache,
            ic_systems=tuple(_parse_kv_list(args.systems, "--systems")),
        )

    overrides = {}
    if args.corpus:
        overrides["corpus_path"] = args.corpus
    if args.out:
        overrides["output_dir"] = args.out
    if args.cache:
        overrides["cache_dir"] = args.cache
    if args.systems:
        overrides["ic_systems"] = tuple(_parse_kv_list(args.systems, "--systems"))
    if args.palette:
        overrides["palette_path"] = args.palette
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.jobs is not None:
        overrides["max_concurrency"] = args.jobs
    if args.reconstructions is not None:
        overrides["reconstructions_per_seed"] = args.reconstructions
    if args.samples is not None:
        overrides["translation"] = dataclasses.replace(
            config.translation, samples_per_map=args.samples
        )
    if args.backends:
        known = {"segment", "inpaint", "translate"}
        for key, value in _parse_kv_list(args.backends, "--backends"):
            if key not in known:
                raise SystemExit(f"--backends: unknown interface {key!r} (expected {sorted(known)})")
            overrides[f"{key}_backend"] = value
    return dataclasses.replace(config, **overrides) if overrides else config


def _print_report(report) -> None:
    print(
        json.dumps(
            {
                "variant": report.variant,
                "report": report.jsonl_path,
                "master_seed": report.master_seed,
                "seeds": report.seeds,
                "cases": report.cases,
                "skipped_seeds": report.skipped,
            },
            indent=2,
        )
    )


def _cmd_run(args) -> int:
    _print_report(run_pipeline(_config_from_args(args)))
    return 0


def _cmd_ablate(args) -> int:
    _print_report(ablation_run(_config_from_args(args), args.mr))
    return 0


def _cmd_summarize(args) -> int:
    stats = summarize(args.reports)
    text = json.dumps(stats, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def _cmd_replay(args) -> int:
    result = replay_case(_config_from_args(args), args.case, variant=args.variant)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0 if result["digest_match"] and result["census_preserved"] else 1


def _cmd_gen_synthetic(args) -> int:
    policy = None
    if args.faults:
        policy = FaultPolicy.from_json_obj(
            json.loads(Path(args.faults).read_text(encoding="utf-8"))
        )
    categories = None
    if args.categories:
        categories = tuple(c.strip() for c in args.categories.split(",") if c.strip())
    path = write_synthetic_corpus(
        args.out,
        n_scenes=args.scenes,
        master_seed=args.seed,
        size=args.size,
        n_objects=args.objects,
        overlap_fraction=args.overlap,
        categories=categories,
        fault_policy=policy,
    )
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layoutmorph",
        description="Metamorphic testing of image captioning systems over semantic layouts.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the full pipeline over a corpus")
    _add_run_flags(run)
    run.set_defaults(fn=_cmd_run)

    ablate = commands.add_parser("ablate", help="single-relation run (one edit step)")
    ablate.add_argument("--mr", required=True, choices=["MR1", "MR2", "MR3", "MR4"])
    _add_run_flags(ablate)
    ablate.set_defaults(fn=_cmd_ablate)

    summ = commands.add_parser("summarize", help="aggregate JSONL reports")
    summ.add_argument(
        "--in", dest="reports", nargs="+", required=True, help="report JSONL paths"
    )
    summ.add_argument("--out", help="write the summary JSON here instead of stdout")
    summ.set_defaults(fn=_cmd_summarize)

    replay = commands.add_parser("replay", help="re-derive one case from its trace")
    replay.add_argument("--case", required=True, help="case id, e.g. 42:m2:n3")
    replay.add_argument("--variant", default="full", help="report variant (default full)")
    _add_run_flags(replay)
    replay.set_defaults(fn=_cmd_replay)

    gen = commands.add_parser("gen-synthetic", help="emit a synthetic corpus")
    gen.add_argument("--out", required=True, help="corpus output directory")
    gen.add_argument("--scenes", type=int, required=True, help="number of scenes")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", type=int, default=64, help="canvas edge in pixels")
    gen.add_argument("--objects", type=int, default=3, help="objects per scene")
    gen.add_argument(
        "--overlap",
        type=float,
        default=0.0,
        help="fraction of scenes allowed to contain overlapping objects",
    )
    gen.add_argument(
        "--faults", help="fault policy JSON copied into the corpus for faulty captioners"
    )
    gen.add_argument("--categories", help="comma-separated palette subset")
    gen.set_defaults(fn=_cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (LayoutMorphError, ValueError, OSError, KeyError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
