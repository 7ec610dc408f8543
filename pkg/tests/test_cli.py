"""Command-line surface: flag parsing and subcommand wiring."""

import json
from pathlib import Path

import pytest

from layoutmorph.cli import main


def _gen(tmp_path, capsys=None, scenes=2):
    corpus = tmp_path / "corpus"
    assert main(["gen-synthetic", "--out", str(corpus), "--scenes", str(scenes),
                 "--seed", "4"]) == 0
    if capsys is not None:
        capsys.readouterr()  # drop the printed corpus path
    return corpus


def _run_flags(tmp_path, corpus):
    return [
        "--corpus", str(corpus),
        "--out", str(tmp_path / "out"),
        "--cache", str(tmp_path / "cache"),
        "--systems", "exact=synthetic",
        "--reconstructions", "1",
        "--samples", "1",
        "--seed", "2",
    ]


def test_full_cli_loop(tmp_path, capsys):
    corpus = _gen(tmp_path, capsys)
    assert main(["run", *_run_flags(tmp_path, corpus)]) == 0
    run_out = json.loads(capsys.readouterr().out)
    assert run_out["cases"] == 2
    report = run_out["report"]

    assert main(["summarize", "--in", report]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["variants"]["full"]["systems"]["exact"]["cases"] == 2

    case_id = json.loads(Path(report).read_text().splitlines()[0])["case_id"]
    assert main(["replay", "--case", case_id, *_run_flags(tmp_path, corpus)]) == 0
    replay_out = json.loads(capsys.readouterr().out)
    assert replay_out["digest_match"] and replay_out["census_preserved"]


def test_ablate_cli(tmp_path, capsys):
    corpus = _gen(tmp_path, capsys)
    assert main(["ablate", "--mr", "MR4", *_run_flags(tmp_path, corpus)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["variant"] == "MR4"
    assert Path(out["report"]).name == "report_MR4.jsonl"


def test_config_file_with_flag_override(tmp_path, capsys):
    corpus = _gen(tmp_path, capsys)
    config = {
        "corpus": str(corpus),
        "out": str(tmp_path / "out_a"),
        "cache": str(tmp_path / "cache"),
        "systems": [["exact", "synthetic"]],
        "reconstructions_per_seed": 1,
        "translation": {"samples_per_map": 1},
        "master_seed": 7,
    }
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(config))
    assert main(["run", "--config", str(config_path),
                 "--out", str(tmp_path / "out_b")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["master_seed"] == 7
    assert out["report"].startswith(str(tmp_path / "out_b"))


def test_summarize_to_file(tmp_path, capsys):
    corpus = _gen(tmp_path, capsys)
    assert main(["run", *_run_flags(tmp_path, corpus)]) == 0
    report = json.loads(capsys.readouterr().out)["report"]
    target = tmp_path / "summary.json"
    assert main(["summarize", "--in", report, "--out", str(target)]) == 0
    assert "full" in json.loads(target.read_text())["variants"]


def test_missing_required_flags(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--corpus", str(tmp_path)])


def test_bad_backend_key(tmp_path):
    corpus = _gen(tmp_path)
    with pytest.raises(SystemExit):
        main(["run", *_run_flags(tmp_path, corpus), "--backends", "render=synthetic"])


def test_run_error_returns_nonzero(tmp_path):
    assert main([
        "run",
        "--corpus", str(tmp_path / "missing"),
        "--out", str(tmp_path / "out"),
        "--cache", str(tmp_path / "cache"),
        "--systems", "exact=synthetic",
    ]) == 1


def test_gen_synthetic_with_faults_and_categories(tmp_path):
    policy_path = tmp_path / "policy.json"
    policy_path.write_text(json.dumps({"p_omit": 1.0, "rng_seed": 1}))
    corpus = tmp_path / "corpus"
    assert main([
        "gen-synthetic", "--out", str(corpus), "--scenes", "1",
        "--faults", str(policy_path), "--categories", "dog,cat",
    ]) == 0
    assert (corpus / "fault_policy.json").exists()
