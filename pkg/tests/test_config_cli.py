"""Configuration validation and CLI stage tests on the bundled demo fixture."""

import json
from importlib import resources
from pathlib import Path

import pytest

from notekg.cli import EXIT_BACKEND_EXHAUSTION, EXIT_OK, EXIT_VALIDATION, run
from notekg.prompting import EntityCategory
from notekg.config import ConfigError, PipelineConfig, build_backend

DEMO = Path(str(resources.files("notekg.assets").joinpath("demo")))


def test_defaults_match_documented_hyperparameters():
    config = PipelineConfig()
    assert config.threshold_preprocessing == 0.8
    assert config.threshold_notes_identification == 0.8
    assert config.relation_occurrence_number == 10
    assert config.relation_probability == 0.1
    assert config.postprocess_min_score == 0.08
    assert config.grouping_similarity == 0.8


def test_out_of_range_score_names_field():
    with pytest.raises(ConfigError, match="relation_probability"):
        PipelineConfig.from_dict({"relation_probability": 1.5})


def test_negative_int_names_field():
    with pytest.raises(ConfigError, match="relation_occurrence_number"):
        PipelineConfig.from_dict({"relation_occurrence_number": -1})


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="mystery"):
        PipelineConfig.from_dict({"mystery": 1})


def test_bad_style_rejected():
    with pytest.raises(ConfigError, match="prompt_style"):
        PipelineConfig.from_dict({"prompt_style": "chain-of-thought"})


def test_undefined_backend_rejected():
    with pytest.raises(ConfigError, match="backend"):
        PipelineConfig.from_dict({"backend": "ghost"})


def test_config_digest_stable():
    assert PipelineConfig().digest() == PipelineConfig().digest()
    assert PipelineConfig().digest() != PipelineConfig(top_k=9).digest()


def test_build_backend_requires_selection():
    with pytest.raises(ConfigError):
        build_backend(PipelineConfig())


def test_cli_validation_error_exit_code(tmp_path):
    bad = tmp_path / "config.json"
    bad.write_text(json.dumps({"relation_probability": 1.5}))
    src = tmp_path / "notes.jsonl"
    src.write_text('{"id": "n1", "text": "a b c d e f"}\n')
    code = run(
        ["preprocess", "--config", str(bad), "--in", str(src), "--out", str(tmp_path / "o")]
    )
    assert code == EXIT_VALIDATION


def test_cli_stage_failure_exit_code(tmp_path):
    src = tmp_path / "notes.jsonl"
    src.write_text("not json\n")
    code = run(["ingest", "--in", str(src), "--out", str(tmp_path / "out.jsonl")])
    assert code == 3


def test_cli_stages_compose_like_pipeline(tmp_path):
    """Running stages individually must equal the chained pipeline output."""
    config = str(DEMO / "config.json")
    notes = str(DEMO / "notes.jsonl")

    chained = tmp_path / "chained"
    assert (
        run(
            [
                "pipeline",
                "--config", config,
                "--in", notes,
                "--out", str(chained),
                "--disease", "amd",
            ]
        )
        == EXIT_OK
    )

    staged = tmp_path / "staged"
    staged.mkdir()
    steps = [
        ["ingest", "--in", notes, "--out", str(staged / "notes.jsonl")],
        ["preprocess", "--config", config, "--in", str(staged / "notes.jsonl"),
         "--out", str(staged / "preprocessed.jsonl")],
        ["identify", "--config", config, "--in", str(staged / "preprocessed.jsonl"),
         "--out", str(staged / "identified.jsonl"), "--disease", "amd"],
        ["extract", "--config", config, "--in", str(staged / "identified.jsonl"),
         "--out", str(staged / "records.jsonl"), "--disease", "amd"],
        ["postprocess", "--config", config, "--in", str(staged / "records.jsonl"),
         "--out", str(staged / "relations.json")],
        ["build-kg", "--in", str(staged / "relations.json"),
         "--out", str(staged / "kg.json")],
    ]
    for step in steps:
        assert run(step) == EXIT_OK, step

    for artifact in ("preprocessed.jsonl", "identified.jsonl", "relations.json", "kg.json"):
        assert (staged / artifact).read_bytes() == (chained / artifact).read_bytes()


def test_cli_eval_self_comparison(tmp_path):
    out = tmp_path / "run"
    run(
        [
            "pipeline",
            "--config", str(DEMO / "config.json"),
            "--in", str(DEMO / "notes.jsonl"),
            "--out", str(out),
            "--disease", "amd",
        ]
    )
    report_path = tmp_path / "eval.json"
    code = run(
        [
            "eval",
            "--config", str(DEMO / "config.json"),
            "--in", str(out / "kg.json"),
            "--out", str(report_path),
            "--gold", str(DEMO / "gold.json"),
            "--records", str(out / "records.jsonl"),
        ]
    )
    assert code == EXIT_OK
    report = json.loads(report_path.read_text())
    assert len(report["rows"]) == 3
    assert all(r["precision"] == 1.0 and r["recall"] == 1.0 for r in report["rows"])
    assert report_path.with_suffix(".md").exists()
    assert report_path.with_name("eval.safety.json").exists()


def test_cli_rerun_is_byte_deterministic(tmp_path):
    args = lambda out: [  # noqa: E731
        "pipeline",
        "--config", str(DEMO / "config.json"),
        "--in", str(DEMO / "notes.jsonl"),
        "--out", str(out),
        "--disease", "amd",
    ]
    run(args(tmp_path / "a"))
    run(args(tmp_path / "b"))
    assert (tmp_path / "a" / "kg.json").read_bytes() == (tmp_path / "b" / "kg.json").read_bytes()
    assert (
        (tmp_path / "a" / "relations.json").read_bytes()
        == (tmp_path / "b" / "relations.json").read_bytes()
    )


def test_cli_resume_skips_completed_queries(tmp_path):
    config = str(DEMO / "config.json")
    out = tmp_path / "records.jsonl"

    # identify first so extract has its input artifact
    pre = tmp_path / "pre.jsonl"
    ident = tmp_path / "ident.jsonl"
    run(["preprocess", "--config", config, "--in", str(DEMO / "notes.jsonl"), "--out", str(pre)])
    run(["identify", "--config", config, "--in", str(pre), "--out", str(ident), "--disease", "amd"])

    assert run(["extract", "--config", config, "--in", str(ident), "--out", str(out),
                "--disease", "amd"]) == EXIT_OK
    first = out.read_text()
    assert len(first.splitlines()) == 60

    # truncate to simulate an interrupted run, then resume
    out.write_text("".join(first.splitlines(keepends=True)[:25]))
    assert run(["extract", "--config", config, "--in", str(ident), "--out", str(out),
                "--disease", "amd", "--resume"]) == EXIT_OK
    resumed = out.read_text().splitlines()
    assert len(resumed) == 60
    keys = {
        (json.loads(line)["question_id"], json.loads(line)["note_id"]) for line in resumed
    }
    assert len(keys) == 60


def test_cli_backend_exhaustion_exit_code(tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"by_key": {}, "default": {"error": "down"}}))
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps(
            {
                "retry_budget": 1,
                "backend": "dead",
                "backends": {"dead": {"kind": "scripted", "script": "script.json"}},
                "alias_provider": {"kind": "file", "path": str(DEMO / "aliases.json")},
            }
        )
    )
    notes = tmp_path / "notes.jsonl"
    notes.write_text('{"id": "n1", "text": "ARMD note with enough words here"}\n')
    code = run(
        ["extract", "--config", str(config_path), "--in", str(notes),
         "--out", str(tmp_path / "records.jsonl"), "--disease", "amd"]
    )
    assert code == EXIT_BACKEND_EXHAUSTION
    failures = json.loads((tmp_path / "records.jsonl.failures.json").read_text())
    assert len(failures) == 15


def test_exemplars_config_validated():
    with pytest.raises(ConfigError, match="exemplars"):
        PipelineConfig.from_dict({"exemplars": [{"input": "only input"}]})
    config = PipelineConfig.from_dict(
        {"exemplars": [{"input": "Q: x\nC: y", "output": "z"}], "prompt_style": "few"}
    )
    assert config.exemplars


def test_fewshot_style_runs_with_config_exemplars(tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"default": {"text": "an answer"}}))
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps(
            {
                "prompt_style": "few",
                "exemplars": [{"input": "Question: q\nContext: c", "output": "a"}],
                "backend": "fix",
                "backends": {"fix": {"kind": "scripted", "script": "script.json"}},
            }
        )
    )
    notes = tmp_path / "notes.jsonl"
    notes.write_text('{"id": "n1", "text": "ARMD note with plenty of words"}\n')
    out = tmp_path / "records.jsonl"
    code = run(["extract", "--config", str(config_path), "--in", str(notes),
                "--out", str(out), "--disease", "amd"])
    assert code == EXIT_OK
    assert len(out.read_text().splitlines()) == 15


def test_stopword_override_path(tmp_path):
    """A config-supplied stop-word list changes normalization keys."""
    from conftest import answers, make_record
    from notekg.extraction import save_records
    from notekg.pipeline import stage_postprocess

    records = [
        make_record(answers(("family history", 0.5)), note_id=f"n{i}",
                    category=EntityCategory.FACTOR)
        for i in range(4)
    ]
    records_path = tmp_path / "records.jsonl"
    save_records(records, records_path)

    stopwords = tmp_path / "stop.txt"
    stopwords.write_text("family\n")
    config = PipelineConfig.from_dict(
        {"relation_occurrence_number": 3, "stopwords_path": str(stopwords)}
    )
    out = tmp_path / "relations.json"
    stage_postprocess(records_path, out, config)
    relations = json.loads(out.read_text())["relations"]
    assert [r["entity_key"] for r in relations] == ["history"]
