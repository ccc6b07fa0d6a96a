import json
from pathlib import Path

import pytest

from plateline.gateway import parse_knowledge

FIXTURES = Path(__file__).parent / "fixtures"

TOY_CLASSES = [
    "mapo_tofu",
    "kung_pao_chicken",
    "spicy_crayfish",
    "spicy_sauteed_shrimp",
    "yangzhou_fried_rice",
    "egg_tarts",
]


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def canned_knowledge():
    """Parsed knowledge for every canned response, keyed by class id."""
    out = {}
    for path in sorted((FIXTURES / "responses").glob("*.txt")):
        outcome = parse_knowledge(path.read_text(encoding="utf-8"))
        assert not hasattr(outcome, "kind"), f"fixture {path.name} must parse"
        out[path.stem] = outcome
    return out


@pytest.fixture
def make_run_config(tmp_path):
    """Write a run config into tmp_path pointing at the shared fixtures."""

    def _make(**overrides) -> Path:
        config = {
            "run_id": "toy",
            "class_list": str(FIXTURES / "classes.txt"),
            "manifest": str(FIXTURES / "manifest.jsonl"),
            "backend": {"kind": "stub", "confusion": str(FIXTURES / "confusion.json")},
            "provider": {"kind": "canned", "fixtures_dir": str(FIXTURES / "responses")},
            "output_dir": str(tmp_path / "runs"),
            "cache_dir": str(tmp_path / "cache"),
        }
        config.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config, indent=2), encoding="utf-8")
        return path

    return _make


@pytest.fixture
def toy_run(make_run_config):
    """A completed toy run in a temp directory."""
    from plateline.pipeline import load_run_config, run_pipeline

    config_path = make_run_config()
    cfg = load_run_config(config_path)
    result = run_pipeline(cfg)
    return cfg, result
