"""Registry of the fixed prompt templates, loaded from versioned text fixtures.

Every template the pipeline sends to a model lives under ``templates/`` as a
plain-text file, one file per prompt id. Templates are loaded byte-for-byte
(minus the trailing newline the files end with) so golden tests can pin their
exact content, and ``prompt_digest`` lets run manifests record which prompt
text produced a given artifact.
"""

from __future__ import annotations

import hashlib
from importlib import resources

PROMPT_IDS = (
    "extract_entities_v1",
    "extract_relations_v1",
    "extract_entities_v2",
    "extract_relations_v2",
    "cluster_entities",
    "validate_entity_cluster",
    "cluster_predicates",
    "validate_predicate_cluster",
    "label_entity_cluster",
    "label_predicate_cluster",
    "find_duplicates",
    "extract_facts",
    "judge_fact",
    "rag_answer",
    "judge_answer",
)

# Prompt ids whose template text contains {slot} placeholders, with the slots
# they require. All other templates render as-is.
TEMPLATE_SLOTS: dict[str, tuple[str, ...]] = {
    "find_duplicates": ("item_type",),
    "rag_answer": ("triples_text", "text_block", "query"),
    "judge_answer": ("question", "expected", "response"),
}


def _load(name: str) -> str:
    text = (resources.files("textkg") / "templates" / f"{name}.txt").read_text(
        encoding="utf-8"
    )
    return text.removesuffix("\n")


TEMPLATES: dict[str, str] = {prompt_id: _load(prompt_id) for prompt_id in PROMPT_IDS}


def template_for(prompt_id: str) -> str:
    try:
        return TEMPLATES[prompt_id]
    except KeyError:
        raise KeyError(f"unknown prompt id: {prompt_id!r}") from None


def render(prompt_id: str, **slots: str) -> str:
    """Fill a template's slots; slot sets must match the template exactly."""
    expected = TEMPLATE_SLOTS.get(prompt_id, ())
    if set(slots) != set(expected):
        raise ValueError(
            f"prompt {prompt_id!r} takes slots {sorted(expected)}, got {sorted(slots)}"
        )
    template = template_for(prompt_id)
    if not expected:
        return template
    return template.format(**slots)


def prompt_digest() -> str:
    """SHA-256 over every template, keyed by id; identifies the prompt fixture set."""
    h = hashlib.sha256()
    for prompt_id in PROMPT_IDS:
        h.update(prompt_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(TEMPLATES[prompt_id].encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()
