"""End-to-end orchestration: segment, extract, edit, translate, caption, detect.

One run walks every corpus seed through the pipeline, producing
``reconstructions_per_seed`` edited layouts per seed and
``samples_per_map`` images per layout, each captioned by every
configured IC system and checked for caption violations. Results stream
to a JSONL report (one test case per line, canonical order) so runs are
resumable and reports are byte-reproducible for a fixed master seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Mapping, Optional, Sequence

import numpy as np

from .backends.base import FaultPolicy, TranslationParams
from .backends.http import HttpCaptionService, HttpClient, HttpInpainter, HttpMaskToImage, HttpSegmenter
from .backends.synthetic import (
    BackgroundFillInpainter,
    ExactSegmenter,
    FaultInjectingCaptioner,
    FaultRecord,
    FlatRenderer,
)
from .core import CategoryPalette, ObjectInstance, SceneRecord, component_census
from .corpus import ingest_corpus, load_corpus_fault_policy, load_corpus_palette
from .detector import Detector, evaluate_case, load_confusables
from .editor import EditConfig, EditTrace, apply_trace, edit
from .errors import CorpusError, LayoutMorphError
from .extractor import ExtractionConfig, map_split
from .parser import CaptionParser, SynonymMapper
from .scenegen import default_palette

logger = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
SYNTHETIC_FAULTY = "synthetic:faulty"
FULL_VARIANT = "full"

# injected fault kind -> expected violation kind, for precision/recall
FAULT_TO_VIOLATION = {
    "omit": "Omission",
    "misclassify": "Misclassification",
    "miscount": "NumericalInaccuracy",
}


def _is_http(endpoint: str) -> bool:
    return endpoint.startswith("http://") or endpoint.startswith("https://")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs; JSON-serializable."""

    corpus_path: str
    output_dir: str
    cache_dir: str
    ic_systems: tuple[tuple[str, str], ...]  # (system_id, endpoint)
    palette_path: Optional[str] = None
    segment_backend: str = SYNTHETIC
    inpaint_backend: str = SYNTHETIC
    translate_backend: str = SYNTHETIC
    reconstructions_per_seed: int = 10
    translation: TranslationParams = field(default_factory=TranslationParams)
    edit: EditConfig = field(default_factory=EditConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    master_seed: int = 0
    max_concurrency: int = 1

    def __post_init__(self):
        object.__setattr__(
            self, "ic_systems", tuple((str(s), str(e)) for s, e in self.ic_systems)
        )
        if self.reconstructions_per_seed < 1:
            raise ValueError("reconstructions_per_seed must be >= 1")
        if not self.ic_systems:
            raise ValueError("at least one IC system is required")
        if len({s for s, _ in self.ic_systems}) != len(self.ic_systems):
            raise ValueError("IC system ids must be unique")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        for name in ("segment_backend", "inpaint_backend", "translate_backend"):
            endpoint = getattr(self, name)
            if endpoint != SYNTHETIC and not _is_http(endpoint):
                raise ValueError(f"{name} must be 'synthetic' or an http(s) URL, got {endpoint!r}")
        for system_id, endpoint in self.ic_systems:
            if endpoint not in (SYNTHETIC, SYNTHETIC_FAULTY) and not _is_http(endpoint):
                raise ValueError(
                    f"system {system_id!r} endpoint must be 'synthetic', "
                    f"'synthetic:faulty', or an http(s) URL, got {endpoint!r}"
                )

    def to_json_obj(self) -> dict:
        return {
            "corpus": self.corpus_path,
            "out": self.output_dir,
            "cache": self.cache_dir,
            "systems": [[s, e] for s, e in self.ic_systems],
            "palette": self.palette_path,
            "backends": {
                "segment": self.segment_backend,
                "inpaint": self.inpaint_backend,
                "translate": self.translate_backend,
            },
            "reconstructions_per_seed": self.reconstructions_per_seed,
            "translation": self.translation.to_json_obj(),
            "edit": self.edit.to_json_obj(),
            "extraction": self.extraction.to_json_obj(),
            "master_seed": self.master_seed,
            "jobs": self.max_concurrency,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "RunConfig":
        backends = obj.get("backends", {})
        return cls(
            corpus_path=obj["corpus"],
            output_dir=obj["out"],
            cache_dir=obj["cache"],
            ic_systems=tuple((s, e) for s, e in obj["systems"]),
            palette_path=obj.get("palette"),
            segment_backend=backends.get("segment", SYNTHETIC),
            inpaint_backend=backends.get("inpaint", SYNTHETIC),
            translate_backend=backends.get("translate", SYNTHETIC),
            reconstructions_per_seed=int(obj.get("reconstructions_per_seed", 10)),
            translation=TranslationParams.from_json_obj(obj.get("translation", {})),
            edit=EditConfig.from_json_obj(obj.get("edit", {})),
            extraction=ExtractionConfig.from_json_obj(obj.get("extraction", {})),
            master_seed=int(obj.get("master_seed", 0)),
            max_concurrency=int(obj.get("jobs", 1)),
        )


@dataclass(frozen=True)
class RunReport:
    variant: str
    jsonl_path: str
    master_seed: int
    seeds: int
    cases: int
    skipped: int


def stream_rng(*parts) -> random.Random:
    """Deterministic per-case RNG stream, independent of scheduling."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def image_digest(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    header = f"{arr.shape[0]}x{arr.shape[1]}:".encode("ascii")
    return hashlib.sha256(header + arr.tobytes()).hexdigest()


def dump_row(row: dict) -> str:
    return json.dumps(row, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# caption cache


class CaptionCache:
    """Content-addressed caption store keyed by (system_id, image digest)."""

    def __init__(self, cache_dir):
        self.root = Path(cache_dir)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, system_id: str, digest: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in system_id)
        return self.root / safe / f"{digest}.json"

    def get_or_compute(self, system_id: str, image: np.ndarray, compute) -> tuple[str, list[FaultRecord]]:
        """Cached (caption, injected-fault log); compute(image) on a miss.

        Corrupt cache entries are recomputed and overwritten with a
        warning rather than failing the run.
        """
        digest = image_digest(image)
        path = self._path(system_id, digest)
        if path.exists():
            try:
                obj = json.loads(path.read_text(encoding="utf-8"))
                caption = obj["caption"]
                injected = [FaultRecord.from_json_obj(r) for r in obj.get("injected", [])]
                if not isinstance(caption, str) or not caption:
                    raise ValueError("cached caption is empty")
                return caption, injected
            except Exception as exc:
                logger.warning("corrupt cache entry %s (%s); recomputing", path, exc)
        caption, injected = compute(image)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "system_id": system_id,
            "caption": caption,
            "injected": [r.to_json_obj() for r in injected],
        }
        path.write_text(dump_row(payload) + "\n", encoding="utf-8")
        return caption, injected


def cache_caption(cache: CaptionCache, system_id: str, image: np.ndarray, service) -> str:
    """Caption an image through the cache; see CaptionCache for key scheme."""
    caption, _ = cache.get_or_compute(system_id, image, _captioner_fn(service))
    return caption


def _captioner_fn(service):
    def compute(image):
        if hasattr(service, "caption_with_faults"):
            return service.caption_with_faults(image)
        return service.caption(image), []

    return compute


# ---------------------------------------------------------------------------
# backend wiring


def resolve_palette(config: RunConfig) -> CategoryPalette:
    if config.palette_path:
        obj = json.loads(Path(config.palette_path).read_text(encoding="utf-8"))
        return CategoryPalette.from_json_obj(obj)
    from_corpus = load_corpus_palette(config.corpus_path)
    return from_corpus if from_corpus is not None else default_palette()


class _ClientPool:
    """One HTTP client per base URL so connection limits are shared."""

    def __init__(self):
        self._clients: dict[str, HttpClient] = {}

    def get(self, base_url: str) -> HttpClient:
        if base_url not in self._clients:
            self._clients[base_url] = HttpClient(base_url)
        return self._clients[base_url]


def build_backends(config: RunConfig, palette: CategoryPalette, pool: Optional[_ClientPool] = None):
    pool = pool or _ClientPool()
    if config.segment_backend == SYNTHETIC:
        segmenter = ExactSegmenter(palette)
    else:
        segmenter = HttpSegmenter(pool.get(config.segment_backend))
    if config.inpaint_backend == SYNTHETIC:
        inpainter = BackgroundFillInpainter(palette)
    else:
        inpainter = HttpInpainter(pool.get(config.inpaint_backend))
    if config.translate_backend == SYNTHETIC:
        translator = FlatRenderer()
    else:
        translator = HttpMaskToImage(pool.get(config.translate_backend))
    return segmenter, inpainter, translator


def build_captioners(config: RunConfig, palette: CategoryPalette, pool: Optional[_ClientPool] = None):
    pool = pool or _ClientPool()
    captioners = {}
    for system_id, endpoint in config.ic_systems:
        if endpoint == SYNTHETIC:
            captioners[system_id] = FaultInjectingCaptioner(palette, FaultPolicy(), system_id=system_id)
        elif endpoint == SYNTHETIC_FAULTY:
            policy = load_corpus_fault_policy(config.corpus_path)
            if policy is None:
                raise CorpusError(
                    f"system {system_id!r} wants the corpus fault policy, "
                    f"but the corpus ships none"
                )
            captioners[system_id] = FaultInjectingCaptioner(palette, policy, system_id=system_id)
        else:
            captioners[system_id] = HttpCaptionService(pool.get(endpoint), system_id)
    return captioners


# ---------------------------------------------------------------------------
# pipeline


def _rebuild_instances(extraction, segmented: Sequence[ObjectInstance]) -> list[ObjectInstance]:
    """Extracted complete masks as instances, original categories/z kept."""
    by_id = {inst.instance_id: inst for inst in segmented}
    singles = []
    for instance_id in sorted(extraction.singles):
        src = by_id[instance_id]
        singles.append(
            ObjectInstance.from_mask(
                instance_id, src.category, extraction.singles[instance_id], src.z_order
            )
        )
    return singles


def _process_seed(scene, context, variant: str):
    """All report rows for one seed; errors collapse to a skip entry."""
    config = context.config
    try:
        seg = context.segmenter.segment(scene.image)
        gt_targets = context.parser.parse_gt(scene.gt_captions, seg.candidates)
        if not gt_targets:
            raise LayoutMorphError("no overlap between caption objects and segmentation")
        target_categories = {o.name for o in gt_targets}
        target_ids = [i.instance_id for i in seg.instances if i.category in target_categories]
        seg_scene = SceneRecord(
            seed_id=scene.seed_id,
            image=scene.image,
            semantic_map=seg.map,
            instances=seg.instances,
            candidates=seg.candidates,
            gt_captions=scene.gt_captions,
        )
        extraction = map_split(
            seg_scene, target_ids, context.inpainter, context.segmenter, config.extraction
        )
        singles = _rebuild_instances(extraction, seg.instances)
        rows = []
        for m in range(1, config.reconstructions_per_seed + 1):
            rng = stream_rng(config.master_seed, scene.seed_id, m)
            edited, trace = edit(extraction.background_map, singles, config.edit, rng)
            images = context.translator.translate(edited, config.translation)
            mrs = sorted({step.mr for step in trace.steps})
            for n, image in enumerate(images, start=1):
                case_id = f"{scene.seed_id}:m{m}:n{n}"
                systems = {}
                for system_id in sorted(context.captioners):
                    systems[system_id] = _run_system(
                        context, system_id, case_id, scene, seg, image
                    )
                rows.append(
                    {
                        "type": "case",
                        "case_id": case_id,
                        "seed_id": scene.seed_id,
                        "m": m,
                        "n": n,
                        "variant": variant,
                        "master_seed": config.master_seed,
                        "mrs": mrs,
                        "descendant_ref": image_digest(image),
                        "edit_trace": trace.to_json_obj(),
                        "gt_targets": [o.to_json_obj() for o in gt_targets],
                        "systems": systems,
                    }
                )
        return rows
    except Exception as exc:
        logger.warning("seed %s skipped: %s", scene.seed_id, exc)
        return [
            {
                "type": "seed_skipped",
                "seed_id": scene.seed_id,
                "variant": variant,
                "master_seed": config.master_seed,
                "reason": f"{type(exc).__name__}: {exc}",
            }
        ]


def _run_system(context, system_id: str, case_id: str, scene, seg, image) -> dict:
    """Caption + verdict for one system; backend failures stay local."""
    try:
        caption, injected = context.cache.get_or_compute(
            system_id, image, _captioner_fn(context.captioners[system_id])
        )
        case = SimpleNamespace(
            case_id=case_id,
            gt_captions=scene.gt_captions,
            candidates=seg.candidates,
            generated_caption=caption,
        )
        verdict = evaluate_case(case, context.parser, context.detector)
        return {
            "caption": caption,
            "injected": [r.to_json_obj() for r in injected],
            "verdict": verdict.to_json_obj(),
        }
    except LayoutMorphError as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _expected_rows(config: RunConfig) -> int:
    return config.reconstructions_per_seed * config.translation.samples_per_map


def _resume_prefix(path: Path, seed_order: Sequence[str], config: RunConfig, variant: str):
    """Longest complete-seed prefix of an existing report.

    Returns (done seed ids, verbatim lines to keep). Trailing rows of a
    partially written seed are dropped; completed work is never redone.
    """
    if not path.exists():
        return set(), []
    lines = path.read_text(encoding="utf-8").splitlines()
    rows = []
    for line in lines:
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError:
            break  # torn tail write; everything after is unusable
    for row in rows:
        if row.get("master_seed") != config.master_seed or row.get("variant") != variant:
            raise ValueError(
                f"existing report {path} was produced with different settings; "
                f"move it aside or change the output directory"
            )
    expected = _expected_rows(config)
    done: set[str] = set()
    keep = 0
    i = 0
    for seed_id in seed_order:
        if i >= len(rows):
            break
        if rows[i].get("type") == "seed_skipped" and rows[i].get("seed_id") == seed_id:
            i += 1
            done.add(seed_id)
            keep = i
            continue
        block = rows[i : i + expected]
        if len(block) == expected and all(
            r.get("type") == "case" and r.get("seed_id") == seed_id for r in block
        ):
            i += expected
            done.add(seed_id)
            keep = i
        else:
            break
    return done, lines[:keep]


def run_pipeline(config: RunConfig, variant: str = FULL_VARIANT) -> RunReport:
    """Run the full pipeline over a corpus; resumable and deterministic."""
    corpus = ingest_corpus(config.corpus_path)
    palette = resolve_palette(config)
    pool = _ClientPool()
    segmenter, inpainter, translator = build_backends(config, palette, pool)
    captioners = build_captioners(config, palette, pool)
    context = SimpleNamespace(
        config=config,
        segmenter=segmenter,
        inpainter=inpainter,
        translator=translator,
        captioners=captioners,
        parser=CaptionParser(mapper=SynonymMapper(palette)),
        detector=Detector(load_confusables()),
        cache=CaptionCache(config.cache_dir),
    )

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"report_{variant}.jsonl"
    seed_order = [scene.seed_id for scene in corpus]
    if len(set(seed_order)) != len(seed_order):
        raise CorpusError("duplicate seed ids in corpus")
    done, kept_lines = _resume_prefix(report_path, seed_order, config, variant)
    report_path.write_text(
        "".join(line + "\n" for line in kept_lines), encoding="utf-8"
    )

    pending = [scene for scene in corpus if scene.seed_id not in done]
    cases = skipped = 0
    for line in kept_lines:
        row = json.loads(line)
        if row["type"] == "case":
            cases += 1
        else:
            skipped += 1

    with report_path.open("a", encoding="utf-8") as sink:
        if config.max_concurrency == 1 or len(pending) <= 1:
            results = (_process_seed(scene, context, variant) for scene in pending)
            for rows in results:
                cases, skipped = _write_rows(sink, rows, cases, skipped)
        else:
            with ThreadPoolExecutor(max_workers=config.max_concurrency) as executor:
                futures = [
                    executor.submit(_process_seed, scene, context, variant)
                    for scene in pending
                ]
                for future in futures:  # completion drained in seed order
                    cases, skipped = _write_rows(sink, future.result(), cases, skipped)

    return RunReport(
        variant=variant,
        jsonl_path=str(report_path),
        master_seed=config.master_seed,
        seeds=len(seed_order),
        cases=cases,
        skipped=skipped,
    )


def _write_rows(sink, rows, cases: int, skipped: int):
    for row in rows:
        sink.write(dump_row(row) + "\n")
        if row["type"] == "case":
            cases += 1
        else:
            skipped += 1
    sink.flush()
    return cases, skipped


def ablation_run(config: RunConfig, mr: str) -> RunReport:
    """Single-MR variant: one edit step drawn from one relation only."""
    from .editor import MR_TAGS

    if mr not in MR_TAGS:
        raise ValueError(f"mr must be one of {MR_TAGS}, got {mr!r}")
    narrowed = dataclasses.replace(config.edit, enabled_mrs=(mr,), step_budget=1)
    return run_pipeline(dataclasses.replace(config, edit=narrowed), variant=mr)


# ---------------------------------------------------------------------------
# reporting


def read_report(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _new_bucket() -> dict:
    return {
        "cases": 0,
        "failed": 0,
        "abnormal": 0,
        "violations": {kind: 0 for kind in FAULT_TO_VIOLATION.values()},
        "injected": 0,
        "flagged": 0,
        "flagged_and_injected": 0,
    }


def _accumulate(bucket: dict, result: dict) -> None:
    bucket["cases"] += 1
    if "error" in result:
        bucket["failed"] += 1
        return
    verdict = result["verdict"]
    violations = verdict["violations"]
    injected = result.get("injected", [])
    if violations:
        bucket["abnormal"] += 1
        bucket["flagged"] += 1
        if injected:
            bucket["flagged_and_injected"] += 1
    if injected:
        bucket["injected"] += 1
    for violation in violations:
        bucket["violations"][violation["kind"]] = (
            bucket["violations"].get(violation["kind"], 0) + 1
        )


def _finish_bucket(bucket: dict) -> dict:
    total = sum(bucket["violations"].values())
    bucket["proportions"] = (
        {kind: count / total for kind, count in bucket["violations"].items()}
        if total
        else None
    )
    bucket["precision"] = (
        bucket["flagged_and_injected"] / bucket["flagged"] if bucket["flagged"] else None
    )
    bucket["recall"] = (
        bucket["flagged_and_injected"] / bucket["injected"] if bucket["injected"] else None
    )
    return bucket


def summarize(report_paths: Sequence) -> dict:
    """Aggregate one or more JSONL reports into a single summary document.

    Stats are grouped per variant, per IC system, and per metamorphic
    relation; synthetic fault logs yield detector precision and recall.
    """
    if not report_paths:
        raise ValueError("summarize needs at least one report")
    variants: dict[str, dict] = {}
    master_seeds: set[int] = set()
    for path in report_paths:
        for row in read_report(path):
            variant = variants.setdefault(
                row["variant"],
                {
                    "systems": {},
                    "by_mr": {},
                    "seeds_skipped": 0,
                    "cases": 0,
                    "abnormal_any_system": 0,
                },
            )
            master_seeds.add(row["master_seed"])
            if row["type"] == "seed_skipped":
                variant["seeds_skipped"] += 1
                continue
            variant["cases"] += 1
            # image granularity: flagged by at least one system
            if any(
                r.get("verdict", {}).get("violations")
                for r in row["systems"].values()
            ):
                variant["abnormal_any_system"] += 1
            for system_id, result in row["systems"].items():
                bucket = variant["systems"].setdefault(system_id, _new_bucket())
                _accumulate(bucket, result)
                for mr in row["mrs"]:
                    mr_bucket = variant["by_mr"].setdefault(mr, {}).setdefault(
                        system_id, _new_bucket()
                    )
                    _accumulate(mr_bucket, result)
    for variant in variants.values():
        for system_id, bucket in variant["systems"].items():
            _finish_bucket(bucket)
        for mr, systems in variant["by_mr"].items():
            for bucket in systems.values():
                _finish_bucket(bucket)
    return {"master_seeds": sorted(master_seeds), "variants": variants}


# ---------------------------------------------------------------------------
# replay


def replay_case(config: RunConfig, case_id: str, variant: str = FULL_VARIANT) -> dict:
    """Re-derive a case's descendant map from its trace and verify it.

    Confirms that replaying the stored edit trace on a fresh extraction
    reproduces the recorded descendant image digest and that the edited
    map preserves the segmentation census.
    """
    report_path = Path(config.output_dir) / f"report_{variant}.jsonl"
    row = next((r for r in read_report(report_path) if r.get("case_id") == case_id), None)
    if row is None:
        raise ValueError(f"case {case_id!r} not found in {report_path}")
    corpus = ingest_corpus(config.corpus_path)
    scene = next((s for s in corpus if s.seed_id == row["seed_id"]), None)
    if scene is None:
        raise CorpusError(f"seed {row['seed_id']!r} not in corpus")
    palette = resolve_palette(config)
    pool = _ClientPool()
    segmenter, inpainter, translator = build_backends(config, palette, pool)
    parser = CaptionParser(mapper=SynonymMapper(palette))

    seg = segmenter.segment(scene.image)
    gt_targets = parser.parse_gt(scene.gt_captions, seg.candidates)
    target_categories = {o.name for o in gt_targets}
    target_ids = [i.instance_id for i in seg.instances if i.category in target_categories]
    seg_scene = SceneRecord(
        seed_id=scene.seed_id,
        image=scene.image,
        semantic_map=seg.map,
        instances=seg.instances,
        candidates=seg.candidates,
        gt_captions=scene.gt_captions,
    )
    extraction = map_split(seg_scene, target_ids, inpainter, segmenter, config.extraction)
    singles = _rebuild_instances(extraction, seg.instances)
    trace = EditTrace.from_json_obj(row["edit_trace"])
    edited = apply_trace(extraction.background_map, singles, trace)

    images = translator.translate(edited, config.translation)
    image = images[row["n"] - 1]
    return {
        "case_id": case_id,
        "seed_id": row["seed_id"],
        "census": component_census(edited),
        "census_preserved": component_census(edited) == dict(seg.candidates.items()),
        "digest": image_digest(image),
        "digest_match": image_digest(image) == row["descendant_ref"],
    }
