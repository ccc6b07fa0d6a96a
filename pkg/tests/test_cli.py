import json

import pytest

from plateline.cli import main

from .conftest import FIXTURES


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def completed_run(make_run_config, capsys):
    """A full `run` through the CLI; returns (run_dir, parsed json payload)."""
    config_path = make_run_config()
    code, out, err = run_cli(capsys, "run", "--config", str(config_path), "--json")
    assert code == 0, err
    payload = json.loads(out)
    return payload["run_dir"], payload


class TestRun:
    def test_json_payload_shape(self, completed_run):
        run_dir, payload = completed_run
        assert payload["summary"]["counts"]["records"] == 10
        assert payload["summary"]["counts"]["misclassified"] == 4
        assert "markdown" in payload["report"]["files"]
        assert payload["report"]["figures"]

    def test_artifacts_on_disk(self, completed_run):
        from pathlib import Path

        run_dir = Path(completed_run[0])
        for name in ("records.jsonl", "summary.json", "report.md", "report.json",
                     "confusion.csv", "config.snapshot", "errors.jsonl"):
            assert (run_dir / name).is_file(), name
        assert (run_dir / "figures" / "confusion.png").is_file()
        assert (run_dir / "tables" / "per_class.csv").is_file()

    def test_json_mode_emits_single_document(self, make_run_config, capsys):
        config_path = make_run_config(run_id="single-doc")
        code, out, _ = run_cli(capsys, "run", "--config", str(config_path), "--json")
        assert code == 0
        json.loads(out)  # exactly one parseable document

    def test_human_mode_mentions_run_dir(self, make_run_config, capsys):
        config_path = make_run_config(run_id="human")
        code, out, _ = run_cli(capsys, "run", "--config", str(config_path))
        assert code == 0
        assert "10 records" in out
        assert "4 misclassified" in out

    def test_missing_config_exits_one(self, tmp_path, capsys):
        code, out, err = run_cli(
            capsys, "run", "--config", str(tmp_path / "absent.json")
        )
        assert code == 1
        assert "error:" in err

    def test_with_references_scores_text_metrics(self, make_run_config, capsys):
        config_path = make_run_config(run_id="with-refs")
        code, out, _ = run_cli(
            capsys,
            "run",
            "--config",
            str(config_path),
            "--references",
            str(FIXTURES / "references.jsonl"),
            "--json",
        )
        assert code == 0
        payload = json.loads(out)
        from pathlib import Path

        report = json.loads(
            (Path(payload["run_dir"]) / "report.json").read_text(encoding="utf-8")
        )
        assert report["generation"]["bleu_4"] == pytest.approx(1.0)
        assert report["generation"]["rouge_l_f"] == pytest.approx(1.0)


class TestEvalCls:
    def _predictions_file(self, tmp_path):
        from plateline.vision import load_confusion_spec, load_manifest, save_predictions, stub_classify

        manifest = load_manifest(FIXTURES / "manifest.jsonl")
        spec = load_confusion_spec(FIXTURES / "confusion.json")
        path = tmp_path / "preds.jsonl"
        save_predictions(stub_classify(manifest, spec), path)
        return path

    def test_scores_prediction_file(self, tmp_path, capsys):
        path = self._predictions_file(tmp_path)
        code, out, _ = run_cli(
            capsys,
            "eval", "cls",
            "--predictions", str(path),
            "--classes", str(FIXTURES / "classes.txt"),
            "--json",
        )
        assert code == 0
        table = json.loads(out)
        assert table["record_count"] == 10
        assert table["top_k_accuracy"]["1"] == pytest.approx(0.6)

    def test_classes_inferred_when_not_given(self, tmp_path, capsys):
        path = self._predictions_file(tmp_path)
        code, out, _ = run_cli(capsys, "eval", "cls", "--predictions", str(path), "--json")
        assert code == 0
        table = json.loads(out)
        assert table["record_count"] == 10

    def test_missing_predictions_file_exits_one(self, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "eval", "cls", "--predictions", str(tmp_path / "no.jsonl")
        )
        assert code == 1  # OSError from open: config-level failure
        assert "error:" in err

    def test_bad_k_exits_one(self, tmp_path, capsys):
        path = self._predictions_file(tmp_path)
        code, _, err = run_cli(
            capsys, "eval", "cls", "--predictions", str(path), "--k", "one"
        )
        assert code == 1
        assert "error:" in err


class TestEvalGen:
    def test_scores_run_directory(self, completed_run, capsys):
        run_dir, _ = completed_run
        code, out, _ = run_cli(
            capsys,
            "eval", "gen",
            "--records", run_dir,
            "--references", str(FIXTURES / "references.jsonl"),
            "--json",
        )
        assert code == 0
        table = json.loads(out)
        assert table["parse_reliability"] == 1.0
        assert table["bleu_4"] == pytest.approx(1.0)
        assert table["rouge_l_f"] == pytest.approx(1.0)
        assert table["provider_id"] == "canned"

    def test_full_field_differs_from_steps(self, completed_run, capsys):
        run_dir, _ = completed_run
        code, out, _ = run_cli(
            capsys,
            "eval", "gen",
            "--records", run_dir,
            "--references", str(FIXTURES / "references.jsonl"),
            "--field", "full",
            "--json",
        )
        assert code == 0
        table = json.loads(out)
        # references carry only the steps text, so the full document scores lower
        assert table["bleu_4"] < 1.0


class TestEvalSep:
    def test_aggregates_run_errors(self, completed_run, capsys):
        run_dir, _ = completed_run
        code, out, _ = run_cli(capsys, "eval", "sep", "--records", run_dir, "--json")
        assert code == 0
        table = json.loads(out)
        assert table["pair_count"] == 4
        assert table["threshold"] == 0.5
        ids = [p["image_id"] for p in table["per_pair"]]
        assert ids == sorted(ids)
        # crayfish/shrimp texts nearly coincide; mapo/kung-pao do not
        by_id = {p["image_id"]: p for p in table["per_pair"]}
        assert by_id["img_001"]["case"] == "mismatch"
        assert by_id["img_004"]["case"] == "similarity"

    def test_threshold_override_flips_cases(self, completed_run, capsys):
        run_dir, _ = completed_run
        code, out, _ = run_cli(
            capsys,
            "eval", "sep", "--records", run_dir, "--threshold", "1.99", "--json",
        )
        assert code == 0
        table = json.loads(out)
        assert all(p["case"] == "similarity" for p in table["per_pair"])

    def test_non_run_directory_exits_one(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "eval", "sep", "--records", str(tmp_path))
        assert code == 1
        assert "error:" in err


class TestStubClassify:
    def test_writes_predictions(self, tmp_path, capsys):
        out_path = tmp_path / "preds.jsonl"
        code, out, _ = run_cli(
            capsys,
            "stub-classify",
            "--manifest", str(FIXTURES / "manifest.jsonl"),
            "--confusion", str(FIXTURES / "confusion.json"),
            "--out", str(out_path),
            "--json",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["records"] == 10
        assert payload["injected_errors"] == 4
        assert payload["seed"] == 7
        from plateline.vision import load_predictions

        assert len(load_predictions(out_path)) == 10

    def test_seed_override(self, tmp_path, capsys):
        out_path = tmp_path / "preds.jsonl"
        code, out, _ = run_cli(
            capsys,
            "stub-classify",
            "--manifest", str(FIXTURES / "manifest.jsonl"),
            "--confusion", str(FIXTURES / "confusion.json"),
            "--seed", "99",
            "--out", str(out_path),
            "--json",
        )
        assert code == 0
        assert json.loads(out)["seed"] == 99


class TestReport:
    def test_rerender_is_byte_identical(self, completed_run, capsys):
        from pathlib import Path

        run_dir = Path(completed_run[0])
        before_md = (run_dir / "report.md").read_bytes()
        before_json = (run_dir / "report.json").read_bytes()
        code, _, _ = run_cli(capsys, "report", "--run", str(run_dir), "--json")
        assert code == 0
        assert (run_dir / "report.md").read_bytes() == before_md
        assert (run_dir / "report.json").read_bytes() == before_json

    def test_ratings_joined_into_report(self, completed_run, tmp_path, capsys):
        from pathlib import Path

        run_dir = Path(completed_run[0])
        ratings = tmp_path / "ratings.csv"
        ratings.write_text(
            "provider,dimension,score\ncanned,relevance,8\ncanned,relevance,9\n",
            encoding="utf-8",
        )
        code, _, _ = run_cli(
            capsys, "report", "--run", str(run_dir), "--ratings", str(ratings)
        )
        assert code == 0
        md = (run_dir / "report.md").read_text(encoding="utf-8")
        assert "Qualitative ratings" in md
        assert "8.50" in md

    def test_missing_run_dir_exits_one(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "report", "--run", str(tmp_path / "none"))
        assert code == 1
        assert "error:" in err


class TestCache:
    def test_ls_lists_providers_then_entries(self, completed_run, make_run_config, capsys):
        import json as json_mod
        from pathlib import Path

        snapshot = json_mod.loads(
            (Path(completed_run[0]) / "config.snapshot").read_text(encoding="utf-8")
        )
        cache_dir = snapshot["cache_dir"]
        code, out, _ = run_cli(capsys, "cache", "ls", "--cache-dir", cache_dir, "--json")
        assert code == 0
        assert json.loads(out) == {"providers": ["canned"]}
        code, out, _ = run_cli(
            capsys, "cache", "ls", "--cache-dir", cache_dir, "--provider", "canned", "--json"
        )
        assert code == 0
        entries = json.loads(out)["entries"]
        assert len(entries) == 6
        assert {e["class_id"] for e in entries} == {
            "mapo_tofu", "kung_pao_chicken", "spicy_crayfish",
            "spicy_sauteed_shrimp", "yangzhou_fried_rice", "egg_tarts",
        }

    def test_clear_empties_provider(self, completed_run, capsys):
        import json as json_mod
        from pathlib import Path

        snapshot = json_mod.loads(
            (Path(completed_run[0]) / "config.snapshot").read_text(encoding="utf-8")
        )
        cache_dir = snapshot["cache_dir"]
        code, out, _ = run_cli(
            capsys, "cache", "clear", "--cache-dir", cache_dir, "--provider", "canned", "--json"
        )
        assert code == 0
        assert json.loads(out)["removed"] == 6
        code, out, _ = run_cli(
            capsys, "cache", "ls", "--cache-dir", cache_dir, "--provider", "canned", "--json"
        )
        assert json.loads(out)["entries"] == []

    def test_ls_empty_cache(self, tmp_path, capsys):
        code, out, _ = run_cli(
            capsys, "cache", "ls", "--cache-dir", str(tmp_path / "empty"), "--json"
        )
        assert code == 0
        assert json.loads(out) == {"providers": []}
