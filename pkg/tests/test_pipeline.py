import json

import pytest

from plateline.core import FoodClass, GeneratedKnowledge, ParseError, ParseErrorKind
from plateline.errors import BackendError, ConfigError, DataError
from plateline.gateway import ProviderConfig, ResponseCache, TransientStatus
from plateline.pipeline import (
    RECORDS_FILE,
    SNAPSHOT_FILE,
    RunConfig,
    build_embedder,
    collect_error_set,
    load_class_list,
    load_records,
    load_run_config,
    run_pipeline,
    snapshot_config,
)
from plateline.sep import FileEmbeddingProvider, StubEmbedder
from plateline.vision import save_predictions, stub_classify

from .conftest import FIXTURES, TOY_CLASSES


class TestLoadRunConfig:
    def test_valid_config_resolves_paths(self, make_run_config):
        cfg = load_run_config(make_run_config())
        assert cfg.run_id == "toy"
        assert cfg.class_list_path.is_file()
        assert cfg.manifest_path.is_file()
        assert cfg.backend_kind == "stub"
        assert cfg.provider_kind == "canned"

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.json")

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_unsafe_run_id_rejected(self, make_run_config):
        with pytest.raises(ConfigError, match="run_id"):
            load_run_config(make_run_config(run_id="../escape"))

    def test_missing_manifest_rejected(self, make_run_config, tmp_path):
        path = make_run_config(manifest=str(tmp_path / "nope.jsonl"))
        with pytest.raises(ConfigError, match="manifest"):
            load_run_config(path)

    def test_unknown_backend_kind_rejected(self, make_run_config):
        with pytest.raises(ConfigError, match="backend"):
            load_run_config(make_run_config(backend={"kind": "neural"}))

    def test_stub_backend_requires_confusion_file(self, make_run_config):
        with pytest.raises(ConfigError, match="confusion"):
            load_run_config(make_run_config(backend={"kind": "stub"}))

    def test_unknown_provider_kind_rejected(self, make_run_config):
        with pytest.raises(ConfigError, match="provider"):
            load_run_config(make_run_config(provider={"kind": "telepathy"}))

    def test_unknown_template_version_rejected(self, make_run_config):
        with pytest.raises(ConfigError, match="template"):
            load_run_config(make_run_config(template_version="v99"))

    def test_zero_parallelism_rejected(self, make_run_config):
        with pytest.raises(ConfigError, match="max_parallel"):
            load_run_config(make_run_config(max_parallel_generations=0))

    def test_relative_paths_resolved_against_config_dir(self, tmp_path):
        import shutil

        (tmp_path / "fx").mkdir()
        for name in ("classes.txt", "manifest.jsonl", "confusion.json"):
            shutil.copy(FIXTURES / name, tmp_path / "fx" / name)
        shutil.copytree(FIXTURES / "responses", tmp_path / "fx" / "responses")
        config = {
            "run_id": "rel",
            "class_list": "fx/classes.txt",
            "manifest": "fx/manifest.jsonl",
            "backend": {"kind": "stub", "confusion": "fx/confusion.json"},
            "provider": {"kind": "canned", "fixtures_dir": "fx/responses"},
            "output_dir": "runs",
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        cfg = load_run_config(path)
        assert cfg.class_list_path == tmp_path / "fx" / "classes.txt"
        assert cfg.output_dir == tmp_path / "runs"

    def test_http_provider_settings_parsed(self, make_run_config):
        path = make_run_config(
            provider={
                "kind": "http",
                "provider_id": "svc",
                "endpoint": "https://api.example/chat",
                "model": "m1",
                "api_key_env": "KEY",
                "max_retries": 5,
            }
        )
        cfg = load_run_config(path)
        assert isinstance(cfg.http_provider, ProviderConfig)
        assert cfg.http_provider.max_retries == 5

    def test_defaults(self, make_run_config):
        cfg = load_run_config(make_run_config())
        assert cfg.template_version == "cuisine-assistant-v1"
        assert cfg.embedder_ref == "stub"
        assert cfg.max_parallel_generations == 2
        assert cfg.sep_threshold == 0.5


class TestLoadClassList:
    def test_fixture_class_list(self):
        classes = load_class_list(FIXTURES / "classes.txt")
        assert [c.id for c in classes] == TOY_CLASSES

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "classes.txt"
        path.write_text("mapo_tofu\nmapo_tofu\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_class_list(path)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "classes.txt"
        path.write_text("\n\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_class_list(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "classes.txt"
        path.write_text("mapo_tofu\n\negg_tarts\n", encoding="utf-8")
        assert [c.id for c in load_class_list(path)] == ["mapo_tofu", "egg_tarts"]


class TestBuildEmbedder:
    def test_stub(self):
        assert isinstance(build_embedder("stub"), StubEmbedder)

    def test_file_ref(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text(
            json.dumps(
                {"text_sha256": "0" * 64, "provider_id": "p", "dim": 1, "values": [1.0]}
            )
            + "\n",
            encoding="utf-8",
        )
        embedder = build_embedder(f"file:{path}")
        assert isinstance(embedder, FileEmbeddingProvider)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            build_embedder(f"file:{tmp_path / 'nope.jsonl'}")

    def test_remote_ref_directs_to_library_api(self):
        with pytest.raises(ConfigError, match="library API"):
            build_embedder("remote:prod")

    def test_unknown_ref_rejected(self):
        with pytest.raises(ConfigError):
            build_embedder("psychic")


class TestRunPipeline:
    def test_produces_one_record_per_manifest_entry(self, toy_run):
        cfg, result = toy_run
        assert len(result.records) == 10
        assert (result.run_dir / RECORDS_FILE).is_file()
        assert (result.run_dir / "summary.json").is_file()
        assert (result.run_dir / SNAPSHOT_FILE).is_file()

    def test_records_sorted_by_image_id(self, toy_run):
        _, result = toy_run
        ids = [r.image_id for r in result.records]
        assert ids == sorted(ids)

    def test_all_canned_responses_parse(self, toy_run):
        _, result = toy_run
        assert all(r.knowledge is not None for r in result.records)

    def test_rate_one_rules_misclassify_exactly_their_images(self, toy_run):
        _, result = toy_run
        wrong = {r.image_id for r in result.records if not r.prediction.correct}
        # both fixture rules have rate 1.0: every mapo_tofu and spicy_crayfish image
        assert wrong == {"img_001", "img_002", "img_004", "img_005"}

    def test_summary_counts_consistent(self, toy_run):
        _, result = toy_run
        counts = result.summary["counts"]
        assert counts["manifest_entries"] == counts["records"] == 10
        assert counts["correct"] + counts["misclassified"] == 10
        assert counts["misclassified"] == 4
        assert counts["parse_valid"] == 10
        assert counts["error_pairs"] == 4
        assert counts["error_pair_exclusions"] == 0

    def test_generation_covers_predicted_and_true_of_misclassified(self, toy_run):
        _, result = toy_run
        # predicted: kung_pao, shrimp, yangzhou, egg_tarts; true of wrong: mapo, crayfish
        assert set(result.generations) == set(TOY_CLASSES)
        assert result.summary["generation"]["unique_classes"] == 6

    def test_stage_latency_zero_for_deterministic_classifier(self, toy_run):
        _, result = toy_run
        assert all(r.latency_ms.classify == 0.0 for r in result.records)

    def test_load_records_round_trip(self, toy_run):
        _, result = toy_run
        assert tuple(load_records(result.run_dir)) == result.records

    def test_snapshot_reloads_to_equivalent_config(self, toy_run):
        cfg, result = toy_run
        reloaded = snapshot_config(result.run_dir)
        assert reloaded.run_id == cfg.run_id
        assert reloaded.class_list_path == cfg.class_list_path.resolve()
        assert reloaded.backend_kind == cfg.backend_kind
        assert reloaded.canonical_snapshot() == cfg.canonical_snapshot()

    def test_warm_rerun_is_byte_identical(self, toy_run):
        cfg, result = toy_run
        records_before = (result.run_dir / RECORDS_FILE).read_bytes()
        rerun = run_pipeline(cfg)
        assert (rerun.run_dir / RECORDS_FILE).read_bytes() == records_before
        assert rerun.summary["generation"]["cache_hits"] == 6
        assert rerun.summary["generation"]["cache_hit_rate"] == 1.0

    def test_cold_run_counts_all_misses(self, toy_run):
        _, result = toy_run
        assert result.summary["generation"]["cache_misses"] == 6
        assert result.summary["generation"]["cache_hits"] == 0

    def test_resume_from_torn_prefix_reproduces_file(self, toy_run):
        cfg, result = toy_run
        records_path = result.run_dir / RECORDS_FILE
        full = records_path.read_bytes()
        # keep three whole lines plus a torn fourth
        lines = full.split(b"\n")
        torn = b"\n".join(lines[:3]) + b"\n" + lines[3][: len(lines[3]) // 2]
        records_path.write_bytes(torn)
        resumed = run_pipeline(cfg)
        assert records_path.read_bytes() == full
        assert resumed.summary["resumed_records"] == 3

    def test_resume_with_foreign_prefix_rejected(self, toy_run):
        cfg, result = toy_run
        records_path = result.run_dir / RECORDS_FILE
        lines = records_path.read_text(encoding="utf-8").splitlines()
        first = json.loads(lines[0])
        first["image_id"] = "img_999"
        first["prediction"]["image_id"] = "img_999"
        records_path.write_text(json.dumps(first) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="not a resumable prefix"):
            run_pipeline(cfg)

    def test_corruption_before_tail_is_fatal(self, toy_run):
        cfg, result = toy_run
        records_path = result.run_dir / RECORDS_FILE
        lines = records_path.read_text(encoding="utf-8").splitlines()
        lines[1] = "{broken"
        records_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="line 2"):
            run_pipeline(cfg)

    def test_changed_config_same_run_dir_rejected(self, toy_run, make_run_config):
        cfg, _ = toy_run
        other_path = make_run_config(sep_threshold=0.9)
        other = load_run_config(other_path)
        assert other.run_dir == cfg.run_dir
        with pytest.raises(ConfigError, match="refusing to mix runs"):
            run_pipeline(other)

    def test_transport_failure_aborts_with_backend_error(self, make_run_config):
        class DownProvider:
            config = ProviderConfig(provider_id="down", max_retries=0, backoff_base_ms=0)

            def complete(self, prompt):
                raise TransientStatus("503")

        cfg = load_run_config(make_run_config(run_id="down"))
        with pytest.raises(BackendError):
            run_pipeline(cfg, provider=DownProvider())

    def test_predictions_backend_round_trip(self, make_run_config, tmp_path):
        from plateline.vision import load_confusion_spec, load_manifest

        classes_path = FIXTURES / "classes.txt"
        manifest = load_manifest(FIXTURES / "manifest.jsonl")
        spec = load_confusion_spec(FIXTURES / "confusion.json")
        predictions = stub_classify(manifest, spec)
        preds_path = tmp_path / "preds.jsonl"
        save_predictions(predictions, preds_path)

        stub_cfg = load_run_config(make_run_config(run_id="via-stub"))
        file_cfg = load_run_config(
            make_run_config(
                run_id="via-file", backend={"kind": "predictions", "path": str(preds_path)}
            )
        )
        stub_result = run_pipeline(stub_cfg)
        file_result = run_pipeline(file_cfg)
        assert [r.prediction for r in stub_result.records] == [
            r.prediction for r in file_result.records
        ]

    def test_predictions_backend_missing_entry_rejected(self, make_run_config, tmp_path):
        from plateline.vision import ConfusionSpec, load_manifest

        manifest = load_manifest(FIXTURES / "manifest.jsonl")
        predictions = stub_classify(manifest, ConfusionSpec(rules=(), seed=0))[:-1]
        preds_path = tmp_path / "short.jsonl"
        save_predictions(predictions, preds_path)
        cfg = load_run_config(
            make_run_config(
                run_id="short", backend={"kind": "predictions", "path": str(preds_path)}
            )
        )
        with pytest.raises(ConfigError, match="lacks 1 manifest entries"):
            run_pipeline(cfg)

    def test_errors_file_lists_exclusions(self, make_run_config, tmp_path):
        # a provider whose mapo_tofu response is unparseable knowledge
        bad_dir = tmp_path / "bad_responses"
        bad_dir.mkdir()
        for name in TOY_CLASSES:
            src = (FIXTURES / "responses" / f"{name}.txt").read_text(encoding="utf-8")
            (bad_dir / f"{name}.txt").write_text(src, encoding="utf-8")
        (bad_dir / "mapo_tofu.txt").write_text("total nonsense", encoding="utf-8")
        cfg = load_run_config(
            make_run_config(
                run_id="bad-mapo",
                provider={"kind": "canned", "fixtures_dir": str(bad_dir)},
            )
        )
        result = run_pipeline(cfg)
        errors_path = result.run_dir / "errors.jsonl"
        exclusions = [
            json.loads(line)
            for line in errors_path.read_text(encoding="utf-8").splitlines()
        ]
        # mapo_tofu images are predicted as kung_pao, so the TRUE side fails
        assert {e["image_id"] for e in exclusions} == {"img_001", "img_002"}
        assert all(e["reasons"] == ["true_class_parse_failed"] for e in exclusions)
        assert result.summary["counts"]["error_pairs"] == 2
        assert result.summary["counts"]["error_pair_exclusions"] == 2


class TestCollectErrorSet:
    def _knowledge(self, name):
        return GeneratedKnowledge(
            food_name=name,
            recipe_ingredients=("x",),
            recipe_steps=("y",),
            calories="1 kcal",
            nutrition="z",
            youtube_tutorial_link="https://example.com/v",
        )

    def _record(self, image_id, true_id, pred_id, outcome):
        from plateline.core import PipelineRecord, PredictionRecord

        prediction = PredictionRecord(
            image_id, FoodClass(true_id), FoodClass(pred_id), 0.6
        )
        return PipelineRecord(
            image_id=image_id,
            prediction=prediction,
            prompt_hash="h",
            raw_response="r",
            parse_outcome=outcome,
        )

    def test_correct_records_skipped(self):
        records = [self._record("i1", "aa", "aa", self._knowledge("aa"))]
        pairs, exclusions = collect_error_set(records, lambda c: self._knowledge(c.id))
        assert pairs == [] and exclusions == []

    def test_misclassified_with_both_sides_valid_pairs_up(self):
        records = [self._record("i1", "aa", "bb", self._knowledge("bb"))]
        pairs, exclusions = collect_error_set(records, lambda c: self._knowledge(c.id))
        assert len(pairs) == 1 and exclusions == []
        pair = pairs[0]
        assert pair.predicted_class.id == "bb"
        assert pair.true_class.id == "aa"
        assert pair.knowledge_pred.food_name == "bb"
        assert pair.knowledge_true.food_name == "aa"

    def test_predicted_side_parse_failure_excluded(self):
        error = ParseError(ParseErrorKind.NO_JSON, "No JSON object found", "")
        records = [self._record("i1", "aa", "bb", error)]
        pairs, exclusions = collect_error_set(records, lambda c: self._knowledge(c.id))
        assert pairs == []
        assert exclusions == [{"image_id": "i1", "reasons": ["predicted_class_parse_failed"]}]

    def test_both_sides_failing_lists_both_reasons(self):
        error = ParseError(ParseErrorKind.NO_JSON, "No JSON object found", "")
        records = [self._record("i1", "aa", "bb", error)]
        pairs, exclusions = collect_error_set(records, lambda c: error)
        assert exclusions[0]["reasons"] == [
            "predicted_class_parse_failed",
            "true_class_parse_failed",
        ]
