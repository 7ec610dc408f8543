"""Pipeline orchestration: determinism, resume, caching, and reporting."""

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np
import pytest

from layoutmorph.backends.base import FaultPolicy, TranslationParams
from layoutmorph.backends.synthetic import FaultInjectingCaptioner
from layoutmorph.corpus import write_synthetic_corpus
from layoutmorph.errors import BackendError, CorpusError
from layoutmorph.harness import (
    CaptionCache,
    RunConfig,
    ablation_run,
    image_digest,
    replay_case,
    run_pipeline,
    stream_rng,
    summarize,
)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return write_synthetic_corpus(root / "c", n_scenes=4, master_seed=3)


def make_config(corpus_dir, tmp_path, name, **kwargs):
    kwargs.setdefault("ic_systems", (("exact", "synthetic"),))
    kwargs.setdefault("reconstructions_per_seed", 2)
    kwargs.setdefault("translation", TranslationParams(samples_per_map=2))
    kwargs.setdefault("master_seed", 11)
    return RunConfig(
        corpus_path=str(corpus_dir),
        output_dir=str(tmp_path / name),
        cache_dir=str(tmp_path / f"{name}_cache"),
        **kwargs,
    )


def read_lines(report):
    return Path(report.jsonl_path).read_text(encoding="utf-8").splitlines()


# --- config ------------------------------------------------------------------


def test_config_validation():
    base = dict(corpus_path="c", output_dir="o", cache_dir="k")
    with pytest.raises(ValueError):
        RunConfig(ic_systems=(), **base)
    with pytest.raises(ValueError):
        RunConfig(ic_systems=(("a", "synthetic"), ("a", "synthetic")), **base)
    with pytest.raises(ValueError):
        RunConfig(ic_systems=(("a", "synthetic"),), reconstructions_per_seed=0, **base)
    with pytest.raises(ValueError):
        RunConfig(ic_systems=(("a", "synthetic"),), max_concurrency=0, **base)
    with pytest.raises(ValueError):
        RunConfig(ic_systems=(("a", "ftp://x"),), **base)
    with pytest.raises(ValueError):
        RunConfig(ic_systems=(("a", "synthetic"),), segment_backend="nope", **base)
    # the faulty flavor is only valid for captioners
    RunConfig(ic_systems=(("a", "synthetic:faulty"),), **base)
    with pytest.raises(ValueError):
        RunConfig(ic_systems=(("a", "synthetic"),), inpaint_backend="synthetic:faulty", **base)


def test_config_json_round_trip():
    config = RunConfig(
        corpus_path="c",
        output_dir="o",
        cache_dir="k",
        ic_systems=(("a", "synthetic"), ("b", "http://host:9/v1")),
        segment_backend="http://host:9/v1",
        reconstructions_per_seed=3,
        translation=TranslationParams(samples_per_map=4),
        master_seed=99,
        max_concurrency=2,
    )
    assert RunConfig.from_json_obj(config.to_json_obj()) == config


def test_stream_rng_is_stable():
    a = [stream_rng(1, "s", m).random() for m in range(5)]
    b = [stream_rng(1, "s", m).random() for m in range(5)]
    assert a == b
    assert len(set(a)) == 5
    assert stream_rng(1, "s", 0).random() != stream_rng(2, "s", 0).random()


def test_image_digest_includes_shape():
    flat = np.zeros((2, 8, 3), dtype=np.uint8)
    tall = np.zeros((8, 2, 3), dtype=np.uint8)
    assert image_digest(flat) != image_digest(tall)
    assert image_digest(flat) == image_digest(flat.copy())


# --- caption cache -------------------------------------------------------------


class CountingService:
    def __init__(self, caption="a dog"):
        self.calls = 0
        self._caption = caption

    def caption(self, image):
        self.calls += 1
        return self._caption


def test_cache_hit_skips_backend(tmp_path):
    cache = CaptionCache(tmp_path / "cache")
    service = CountingService()
    image = np.full((4, 4, 3), 7, dtype=np.uint8)
    compute = lambda img: (service.caption(img), [])
    first = cache.get_or_compute("sys", image, compute)
    second = cache.get_or_compute("sys", image, compute)
    assert first == second == ("a dog", [])
    assert service.calls == 1


def test_cache_key_includes_system(tmp_path):
    cache = CaptionCache(tmp_path / "cache")
    service = CountingService()
    image = np.full((4, 4, 3), 7, dtype=np.uint8)
    compute = lambda img: (service.caption(img), [])
    cache.get_or_compute("sys-a", image, compute)
    cache.get_or_compute("sys-b", image, compute)
    assert service.calls == 2


def test_cache_corruption_recovers(tmp_path, caplog):
    cache = CaptionCache(tmp_path / "cache")
    service = CountingService()
    image = np.full((4, 4, 3), 7, dtype=np.uint8)
    compute = lambda img: (service.caption(img), [])
    cache.get_or_compute("sys", image, compute)
    entry = next((tmp_path / "cache").rglob("*.json"))
    entry.write_text("{ not json")
    with caplog.at_level(logging.WARNING):
        caption, injected = cache.get_or_compute("sys", image, compute)
    assert caption == "a dog"
    assert service.calls == 2
    assert any("corrupt" in rec.message for rec in caplog.records)
    # overwritten entry serves the next hit
    cache.get_or_compute("sys", image, compute)
    assert service.calls == 2


# --- pipeline runs -------------------------------------------------------------


def test_case_count_arithmetic(corpus_dir, tmp_path):
    config = make_config(corpus_dir, tmp_path, "arith")
    report = run_pipeline(config)
    rows = [json.loads(line) for line in read_lines(report)]
    cases = [r for r in rows if r["type"] == "case"]
    assert report.cases == len(cases) == 4 * 2 * 2
    assert report.seeds == 4
    assert report.skipped == 0
    ids = [r["case_id"] for r in cases]
    assert ids[0] == "0:m1:n1"
    assert ids[:4] == ["0:m1:n1", "0:m1:n2", "0:m2:n1", "0:m2:n2"]
    for row in cases:
        assert row["master_seed"] == 11
        assert row["variant"] == "full"
        assert row["m"] in (1, 2) and row["n"] in (1, 2)
        assert set(row["systems"]) == {"exact"}
        assert row["systems"]["exact"]["verdict"]["violations"] == []


def test_reports_are_byte_deterministic(corpus_dir, tmp_path):
    r1 = run_pipeline(make_config(corpus_dir, tmp_path, "det1"))
    r2 = run_pipeline(make_config(corpus_dir, tmp_path, "det2"))
    assert Path(r1.jsonl_path).read_bytes() == Path(r2.jsonl_path).read_bytes()


def test_concurrency_does_not_change_bytes(corpus_dir, tmp_path):
    serial = run_pipeline(make_config(corpus_dir, tmp_path, "ser"))
    threaded = run_pipeline(make_config(corpus_dir, tmp_path, "thr", max_concurrency=4))
    assert Path(serial.jsonl_path).read_bytes() == Path(threaded.jsonl_path).read_bytes()


@pytest.mark.parametrize("cut", [1, 3, 7])
def test_resume_reproduces_uninterrupted_run(corpus_dir, tmp_path, cut):
    config = make_config(corpus_dir, tmp_path, f"resume{cut}")
    full = Path(run_pipeline(config).jsonl_path).read_bytes()
    lines = full.decode("utf-8").splitlines()
    report_path = Path(config.output_dir) / "report_full.jsonl"
    report_path.write_text("\n".join(lines[:cut]) + "\n", encoding="utf-8")
    resumed = run_pipeline(config)
    assert Path(resumed.jsonl_path).read_bytes() == full


def test_resume_recovers_from_torn_line(corpus_dir, tmp_path):
    config = make_config(corpus_dir, tmp_path, "torn")
    full = Path(run_pipeline(config).jsonl_path).read_bytes()
    report_path = Path(config.output_dir) / "report_full.jsonl"
    report_path.write_bytes(full[: len(full) // 2])  # mid-line kill
    resumed = run_pipeline(config)
    assert Path(resumed.jsonl_path).read_bytes() == full


def test_completed_run_is_idempotent(corpus_dir, tmp_path):
    config = make_config(corpus_dir, tmp_path, "idem")
    first = run_pipeline(config)
    before = Path(first.jsonl_path).read_bytes()
    again = run_pipeline(config)
    assert Path(again.jsonl_path).read_bytes() == before
    assert again.cases == first.cases


def test_resume_rejects_mismatched_settings(corpus_dir, tmp_path):
    config = make_config(corpus_dir, tmp_path, "mismatch")
    run_pipeline(config)
    changed = dataclasses.replace(config, master_seed=12)
    with pytest.raises(ValueError, match="different settings"):
        run_pipeline(changed)


def test_cache_reuse_across_runs(corpus_dir, tmp_path, monkeypatch):
    calls = {"n": 0}
    orig = FaultInjectingCaptioner.caption_with_faults

    def counted(self, image):
        calls["n"] += 1
        return orig(self, image)

    monkeypatch.setattr(FaultInjectingCaptioner, "caption_with_faults", counted)
    config1 = make_config(corpus_dir, tmp_path, "cache1")
    run_pipeline(config1)
    assert calls["n"] >= 1
    # same cache, fresh output dir: all captions served from disk
    config2 = dataclasses.replace(
        config1, output_dir=str(tmp_path / "cache2_out"), cache_dir=config1.cache_dir
    )
    calls["n"] = 0
    run_pipeline(config2)
    assert calls["n"] == 0


def test_bad_seed_is_isolated(tmp_path):
    corpus = write_synthetic_corpus(tmp_path / "c", n_scenes=3, master_seed=5)
    doc = json.loads((corpus / "corpus.json").read_text())
    for cap in doc["captions"]:
        if cap["image_id"] == 1:
            cap["caption"] = "xyzzq blorp"  # nothing mappable
    (corpus / "corpus.json").write_text(json.dumps(doc))
    config = make_config(corpus, tmp_path, "isolate")
    report = run_pipeline(config)
    rows = [json.loads(line) for line in read_lines(report)]
    skipped = [r for r in rows if r["type"] == "seed_skipped"]
    assert [r["seed_id"] for r in skipped] == ["1"]
    assert report.skipped == 1
    assert report.cases == 2 * 2 * 2
    assert {r["seed_id"] for r in rows if r["type"] == "case"} == {"0", "2"}


def test_down_system_is_isolated(corpus_dir, tmp_path, monkeypatch):
    from layoutmorph import harness as harness_mod

    class DownService:
        def caption(self, image):
            raise BackendError("connection refused")

    orig = harness_mod.build_captioners

    def patched(config, palette, pool=None):
        captioners = orig(config, palette, pool)
        captioners["down"] = DownService()
        return captioners

    monkeypatch.setattr(harness_mod, "build_captioners", patched)
    config = make_config(
        corpus_dir,
        tmp_path,
        "down",
        ic_systems=(("exact", "synthetic"), ("down", "synthetic")),
    )
    report = run_pipeline(config)
    rows = [json.loads(line) for line in read_lines(report) if '"case"' in line]
    assert rows and report.skipped == 0
    for row in rows:
        assert "error" in row["systems"]["down"]
        assert row["systems"]["exact"]["verdict"]["violations"] == []
    stats = summarize([report.jsonl_path])
    bucket = stats["variants"]["full"]["systems"]["down"]
    assert bucket["failed"] == bucket["cases"] == report.cases


# --- summarize -----------------------------------------------------------------


def test_summarize_clean_run(corpus_dir, tmp_path):
    report = run_pipeline(make_config(corpus_dir, tmp_path, "sumclean"))
    stats = summarize([report.jsonl_path])
    assert stats["master_seeds"] == [11]
    variant = stats["variants"]["full"]
    bucket = variant["systems"]["exact"]
    assert bucket["cases"] == report.cases
    assert bucket["abnormal"] == 0
    assert bucket["precision"] is None  # nothing flagged
    assert bucket["recall"] is None  # nothing injected
    assert variant["abnormal_any_system"] == 0


def test_summarize_faulty_run(tmp_path):
    policy = FaultPolicy(p_omit=1.0, rng_seed=3)
    corpus = write_synthetic_corpus(
        tmp_path / "c", n_scenes=3, master_seed=5, fault_policy=policy, n_objects=3
    )
    config = make_config(corpus, tmp_path, "sumfaulty",
                         ic_systems=(("faulty", "synthetic:faulty"),))
    report = run_pipeline(config)
    stats = summarize([report.jsonl_path])
    bucket = stats["variants"]["full"]["systems"]["faulty"]
    assert bucket["cases"] == report.cases
    assert bucket["injected"] == bucket["cases"]
    assert bucket["abnormal"] == bucket["cases"]
    assert bucket["violations"]["Omission"] > 0
    assert bucket["precision"] == 1.0
    assert bucket["recall"] == 1.0
    assert sum(bucket["proportions"].values()) == pytest.approx(1.0)


def test_faulty_endpoint_requires_policy(corpus_dir, tmp_path):
    config = make_config(
        corpus_dir, tmp_path, "nopolicy", ic_systems=(("faulty", "synthetic:faulty"),)
    )
    with pytest.raises(CorpusError, match="fault policy"):
        run_pipeline(config)


def test_summarize_needs_input():
    with pytest.raises(ValueError):
        summarize([])


# --- ablation ------------------------------------------------------------------


@pytest.mark.parametrize("mr", ["MR1", "MR2", "MR3", "MR4"])
def test_ablation_traces_stick_to_one_relation(corpus_dir, tmp_path, mr):
    config = make_config(corpus_dir, tmp_path, f"abl{mr}", reconstructions_per_seed=1)
    report = ablation_run(config, mr)
    assert report.variant == mr
    assert report.jsonl_path.endswith(f"report_{mr}.jsonl")
    rows = [json.loads(line) for line in read_lines(report)]
    cases = [r for r in rows if r["type"] == "case"]
    assert cases
    for row in cases:
        steps = row["edit_trace"]["steps"]
        assert len(steps) == 1
        assert {s["mr"] for s in steps} == {mr}
        assert row["mrs"] == [mr]
        assert row["variant"] == mr


def test_ablation_rejects_unknown_mr(corpus_dir, tmp_path):
    with pytest.raises(ValueError):
        ablation_run(make_config(corpus_dir, tmp_path, "ablbad"), "MR9")


def test_summary_partitions_by_mr(corpus_dir, tmp_path):
    paths = []
    for mr in ("MR1", "MR4"):
        config = make_config(corpus_dir, tmp_path, f"part{mr}", reconstructions_per_seed=1)
        paths.append(ablation_run(config, mr).jsonl_path)
    stats = summarize(paths)
    assert set(stats["variants"]) == {"MR1", "MR4"}
    for mr in ("MR1", "MR4"):
        assert set(stats["variants"][mr]["by_mr"]) == {mr}


# --- replay --------------------------------------------------------------------


def test_replay_round_trips_every_case_of_one_seed(corpus_dir, tmp_path):
    config = make_config(corpus_dir, tmp_path, "replay")
    report = run_pipeline(config)
    rows = [json.loads(line) for line in read_lines(report)]
    for row in rows:
        if row["type"] != "case" or row["seed_id"] != "2":
            continue
        result = replay_case(config, row["case_id"])
        assert result["digest_match"], row["case_id"]
        assert result["census_preserved"], row["case_id"]
        assert result["digest"] == row["descendant_ref"]


def test_replay_unknown_case(corpus_dir, tmp_path):
    config = make_config(corpus_dir, tmp_path, "replaymiss")
    run_pipeline(config)
    with pytest.raises(ValueError, match="not found"):
        replay_case(config, "0:m99:n1")
