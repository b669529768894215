"""Shared fixtures: the 3-document corpus, scripted mocks, offline embedder."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from textkg.extract import chunk_text
from textkg.gateway import MockBackend, ModelConfig, ModelGateway
from textkg.index import HashedBagEmbedder

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS_DIR = FIXTURES / "corpus"
GOLDEN_DIR = FIXTURES / "golden"
PROMPT_GOLDEN_DIR = FIXTURES / "prompts"

DOC_IDS = ("doc1", "doc2", "doc3")


def load_extractions() -> dict:
    return json.loads((CORPUS_DIR / "extractions.json").read_text(encoding="utf-8"))


def corpus_chunks():
    """One chunk per fixture document, exactly as the CLI would produce them."""
    chunks = []
    for doc_id in DOC_IDS:
        text = (CORPUS_DIR / f"{doc_id}.txt").read_text(encoding="utf-8")
        chunks.extend(chunk_text(text, max_chars=8000, doc_id=doc_id))
    return chunks


def corpus_script_entries(prompt_version: int = 2) -> list[dict]:
    """Scripted extraction responses for the fixture corpus, one pair per chunk."""
    extractions = load_extractions()
    entries = []
    for chunk in corpus_chunks():
        data = extractions[chunk.doc_id]
        entries.append(
            {
                "prompt_id": f"extract_entities_v{prompt_version}",
                "payload": {"text": chunk.text},
                "response": json.dumps({"entities": data["entities"]}),
            }
        )
        entries.append(
            {
                "prompt_id": f"extract_relations_v{prompt_version}",
                "payload": {"text": chunk.text, "entities": data["entities"]},
                "response": json.dumps({"triples": data["triples"]}),
            }
        )
    return entries


def corpus_mock_backend(duplicate_rule: str = "token_subset") -> MockBackend:
    backend = MockBackend(duplicate_rule=duplicate_rule)
    for entry in corpus_script_entries():
        backend.add_script(entry["prompt_id"], entry["payload"], entry["response"])
    return backend


def write_corpus_script(path: Path, duplicate_rule: str = "token_subset") -> Path:
    path.write_text(
        json.dumps(
            {"duplicate_rule": duplicate_rule, "responses": corpus_script_entries()},
            indent=2,
        ),
        encoding="utf-8",
    )
    return path


def mock_gateway(backend=None, **config_kwargs) -> ModelGateway:
    config = ModelConfig(backend="mock", **config_kwargs)
    return ModelGateway(config, backend=backend)


@pytest.fixture
def gateway() -> ModelGateway:
    return mock_gateway()


@pytest.fixture
def embedder() -> HashedBagEmbedder:
    return HashedBagEmbedder(dim=64)


def criterion(label: str):
    """Tag an acceptance test so the report hook prints its pass/fail line."""

    def decorate(func):
        func._criterion = label
        return func

    return decorate


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    label = getattr(item.function, "_criterion", None)
    if label:
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        print(f"\n[acceptance] {label}: {status}")
