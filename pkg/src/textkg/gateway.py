"""Uniform chat-model interface with schema-checked JSON outputs and retries.

Every model interaction in the pipeline goes through ModelGateway, which owns
the fixed prompt set, enforces response schemas (retrying on malformed
output), and applies anti-hallucination filters: list-valued results are
always clipped to the candidate universe that was offered to the model.

Two backends ship with the package: a remote chat-completion HTTP client and
a deterministic mock. The mock answers from a scripted table keyed by
(prompt id, payload hash) and falls back to rule-based behaviors (containment
judging, lexical duplicate matching) so the whole pipeline runs offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import prompts
from .errors import ConfigurationError, ModelResponseError, ValidationError
from .graph import Triple
from .index import tokenize

logger = logging.getLogger(__name__)

ENTITY_DOMAIN = "entities"
PREDICATE_DOMAIN = "predicates"


@dataclass
class ModelConfig:
    """Backend selection and request policy for one gateway instance."""

    backend: str = "mock"
    model_name: str = "mock-model"
    endpoint: str = ""
    api_key_env: str = ""
    max_retries: int = 3
    temperature: float = 0.0
    max_in_flight: int = 4
    prompt_version: int = 2
    mock_script: str | None = None
    mock_duplicate_rule: str = "exact"

    def __post_init__(self):
        if self.backend not in ("remote", "mock"):
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")
        if self.prompt_version not in (1, 2):
            raise ConfigurationError("prompt_version must be 1 or 2")
        if self.backend == "remote" and (not self.endpoint or not self.api_key_env):
            raise ConfigurationError(
                "remote backend requires an endpoint URL and an api_key_env name"
            )


def canonical_payload(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def script_key(prompt_id: str, payload: dict) -> str:
    digest = hashlib.sha256()
    digest.update(prompt_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(canonical_payload(payload).encode("utf-8"))
    return digest.hexdigest()


@dataclass(frozen=True)
class StructuredRequest:
    """One rendered prompt plus the structured inputs it was filled from."""

    prompt_id: str
    filled_template: str
    expected_schema: str
    payload: dict
    user_content: str | None = None

    def messages(self) -> list[dict[str, str]]:
        messages = [{"role": "system", "content": self.filled_template}]
        if self.user_content is not None:
            messages.append({"role": "user", "content": self.user_content})
        return messages


@dataclass(frozen=True)
class JudgeVerdict:
    """Binary judge outcome; 1 means the fact is supported by the context."""

    value: int

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValidationError(f"judge verdict must be 0 or 1, got {self.value!r}")


class RemoteBackend:
    """Generic chat-completion HTTP JSON client (messages in, text out)."""

    def __init__(self, config: ModelConfig, timeout: float = 120.0):
        self.config = config
        self.timeout = timeout

    def complete(self, request: StructuredRequest) -> str:
        import requests

        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise ConfigurationError(
                f"API key variable {self.config.api_key_env} is not set"
            )
        response = requests.post(
            self.config.endpoint,
            json={
                "model": self.config.model_name,
                "messages": request.messages(),
                "temperature": self.config.temperature,
            },
            headers={
                "Authorization": f"Bearer {key}",
                "Content-Type": "application/json",
            },
            timeout=self.timeout,
        )
        response.raise_for_status()
        body = response.json()
        return body["choices"][0]["message"]["content"]


def _plural_insensitive_tokens(label: str) -> frozenset[str]:
    return frozenset(
        token[:-1] if token.endswith("s") and len(token) > 3 else token
        for token in tokenize(label)
    )


class MockBackend:
    """Deterministic offline backend: scripted responses plus rule fallbacks.

    Scripts are keyed by (prompt_id, hash of the structured payload); an
    unscripted request falls through to a fixed rule for its prompt id, so
    byte-identical requests always produce byte-identical responses.

    Rule fallbacks: extraction prompts return empty results, cluster proposals
    return no cluster, cluster validations confirm the offered items, labeling
    picks the shortest item, duplicate finding uses a lexical rule (``exact``
    lowercase equality or ``token_subset`` plural-insensitive token containment),
    fact judging checks substring containment, answering concatenates the
    provided evidence, and answer judging checks containment of the expected
    answer.
    """

    def __init__(self, duplicate_rule: str = "exact"):
        if duplicate_rule not in ("exact", "token_subset"):
            raise ConfigurationError(f"unknown duplicate rule {duplicate_rule!r}")
        self.duplicate_rule = duplicate_rule
        self._scripts: dict[str, str] = {}

    def add_script(self, prompt_id: str, payload: dict, response: str) -> None:
        self._scripts[script_key(prompt_id, payload)] = response

    @classmethod
    def from_file(cls, path: str | Path, default_duplicate_rule: str = "exact") -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        backend = cls(duplicate_rule=data.get("duplicate_rule", default_duplicate_rule))
        for entry in data.get("responses", []):
            backend.add_script(entry["prompt_id"], entry["payload"], entry["response"])
        return backend

    def complete(self, request: StructuredRequest) -> str:
        scripted = self._scripts.get(script_key(request.prompt_id, request.payload))
        if scripted is not None:
            return scripted
        return self._rule_response(request)

    def _rule_response(self, request: StructuredRequest) -> str:
        prompt_id = request.prompt_id
        payload = request.payload
        if prompt_id.startswith("extract_entities"):
            return json.dumps({"entities": []})
        if prompt_id.startswith("extract_relations"):
            return json.dumps({"triples": []})
        if prompt_id in ("cluster_entities", "cluster_predicates"):
            return json.dumps({"items": []})
        if prompt_id in ("validate_entity_cluster", "validate_predicate_cluster"):
            return json.dumps({"items": payload["items"]})
        if prompt_id in ("label_entity_cluster", "label_predicate_cluster"):
            label = min(payload["items"], key=lambda item: (len(item), item))
            return json.dumps({"label": label})
        if prompt_id == "find_duplicates":
            return self._find_duplicates_response(payload)
        if prompt_id == "extract_facts":
            return json.dumps([])
        if prompt_id == "judge_fact":
            contained = payload["correct_answer"].lower() in payload["context"].lower()
            return "1" if contained else "0"
        if prompt_id == "rag_answer":
            return f"{payload['triples_text']}\n{payload['text_block']}"
        if prompt_id == "judge_answer":
            contained = payload["expected"].lower() in payload["response"].lower()
            return "Yes" if contained else "No"
        raise ConfigurationError(f"mock has no rule for prompt {prompt_id!r}")

    def _find_duplicates_response(self, payload: dict) -> str:
        item = payload["item"]
        candidates = payload["candidates"]
        if self.duplicate_rule == "exact":
            duplicates = [
                c for c in candidates if c.strip().lower() == item.strip().lower()
            ]
        else:
            key = _plural_insensitive_tokens(item)
            duplicates = []
            if key:
                for candidate in candidates:
                    other = _plural_insensitive_tokens(candidate)
                    if other and (other <= key or key <= other):
                        duplicates.append(candidate)
        members = [item, *duplicates]
        alias = min(members, key=lambda m: (len(m), m)) if duplicates else item
        return json.dumps({"duplicates": duplicates, "alias": alias})


class FaultInjectingBackend:
    """Test double: serves N malformed responses per prompt id, then delegates."""

    def __init__(self, inner, faults_per_prompt: int = 1, garbage: str = "%% not json"):
        self.inner = inner
        self.faults_per_prompt = faults_per_prompt
        self.garbage = garbage
        self.fault_counts: Counter[str] = Counter()

    def complete(self, request: StructuredRequest) -> str:
        if self.fault_counts[request.prompt_id] < self.faults_per_prompt:
            self.fault_counts[request.prompt_id] += 1
            return self.garbage
        return self.inner.complete(request)


class _SchemaViolation(Exception):
    """Model output did not match the expected schema; retryable."""


_FENCE_RE = re.compile(r"^```[a-zA-Z0-9]*\n(.*)\n```$", re.DOTALL)


def _parse_json(raw: str):
    text = raw.strip()
    fenced = _FENCE_RE.match(text)
    if fenced:
        text = fenced.group(1).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise _SchemaViolation(f"not valid JSON: {exc.msg}") from exc


def _parse_string_list(raw: str, key: str) -> list[str]:
    data = _parse_json(raw)
    if isinstance(data, dict):
        data = data.get(key)
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise _SchemaViolation(f"expected a list of strings under {key!r}")
    return data


def _dedupe(items: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(items))


class ModelGateway:
    """All model-backed operations, with per-call retry and in-flight limits."""

    def __init__(self, config: ModelConfig | None = None, backend=None):
        self.config = config or ModelConfig()
        if backend is not None:
            self.backend = backend
        elif self.config.backend == "mock":
            if self.config.mock_script:
                self.backend = MockBackend.from_file(
                    self.config.mock_script,
                    default_duplicate_rule=self.config.mock_duplicate_rule,
                )
            else:
                self.backend = MockBackend(
                    duplicate_rule=self.config.mock_duplicate_rule
                )
        else:
            self.backend = RemoteBackend(self.config)
        self.retry_counts: Counter[str] = Counter()
        self._semaphore = threading.Semaphore(self.config.max_in_flight)
        self._lock = threading.Lock()

    # ------------------------------------------------------------------ core

    def _call(
        self,
        prompt_id: str,
        payload: dict,
        schema: str,
        parser: Callable[[str], object],
        slots: dict[str, str] | None = None,
        user_content: str | None = None,
    ):
        request = StructuredRequest(
            prompt_id=prompt_id,
            filled_template=prompts.render(prompt_id, **(slots or {})),
            expected_schema=schema,
            payload=payload,
            user_content=user_content,
        )
        attempts = self.config.max_retries + 1
        for attempt in range(1, attempts + 1):
            with self._semaphore:
                raw = self.backend.complete(request)
            try:
                return parser(raw)
            except _SchemaViolation as exc:
                if attempt < attempts:
                    with self._lock:
                        self.retry_counts[prompt_id] += 1
                    logger.warning(
                        "retrying %s (attempt %d/%d): %s", prompt_id, attempt, attempts, exc
                    )
                else:
                    raise ModelResponseError(
                        f"{prompt_id} produced unusable output after "
                        f"{self.config.max_retries} retries: {exc}",
                        raw_output=raw,
                    ) from exc

    # ------------------------------------------------------- extraction step

    def extract_entities(self, text: str) -> list[str]:
        """Entity labels for one text, deduplicated in model order."""
        if not text.strip():
            raise ValueError("extract_entities requires non-empty text")
        prompt_id = f"extract_entities_v{self.config.prompt_version}"

        def parse(raw: str) -> list[str]:
            labels = [x.strip() for x in _parse_string_list(raw, "entities")]
            return _dedupe([x for x in labels if x])

        return self._call(
            prompt_id, {"text": text}, "entity_list", parse, user_content=text
        )

    def extract_relations(self, text: str, entities: Sequence[str]) -> list[Triple]:
        """Subject-predicate-object triples grounded in the given entity list.

        Endpoints outside the offered entity list are kept (the caller extends
        its entity set) but logged as repairs.
        """
        if not entities:
            raise ValueError("extract_relations requires a non-empty entity list")
        prompt_id = f"extract_relations_v{self.config.prompt_version}"
        payload = {"text": text, "entities": list(entities)}

        def parse(raw: str) -> list[Triple]:
            data = _parse_json(raw)
            if isinstance(data, dict):
                data = data.get("triples")
            if not isinstance(data, list):
                raise _SchemaViolation("expected a list under 'triples'")
            triples = []
            for row in data:
                if not (isinstance(row, list) and len(row) == 3):
                    raise _SchemaViolation(f"triple row is not [s, p, o]: {row!r}")
                try:
                    triples.append(Triple(*row))
                except (ValidationError, TypeError) as exc:
                    raise _SchemaViolation(f"malformed triple {row!r}: {exc}") from exc
            return triples

        triples = self._call(
            prompt_id,
            payload,
            "triple_list",
            parse,
            user_content=canonical_payload(payload),
        )
        known = set(entities)
        for t in triples:
            for endpoint in (t.subject, t.object):
                if endpoint not in known:
                    logger.warning(
                        "repair: %s endpoint %r was not in the offered entity list",
                        prompt_id,
                        endpoint,
                    )
        return triples

    # ------------------------------------------------------ iterative dedup

    def _cluster_list_call(
        self,
        prompt_id: str,
        items: Sequence[str],
        extra_payload: dict | None = None,
    ) -> list[str]:
        payload = {"items": list(items), **(extra_payload or {})}

        def parse(raw: str) -> list[str]:
            return _parse_string_list(raw, "items")

        result = self._call(
            prompt_id, payload, "label_list", parse, user_content=canonical_payload(payload)
        )
        offered = set(items)
        kept = _dedupe([x for x in result if x in offered])
        dropped = [x for x in result if x not in offered]
        if dropped:
            logger.warning("%s returned labels outside the offered list: %r", prompt_id, dropped)
        return kept

    def propose_cluster(
        self,
        items: Sequence[str],
        instruction: str | None = None,
        domain: str = ENTITY_DOMAIN,
    ) -> list[str]:
        """One proposed alias cluster drawn from ``items``; empty means none found."""
        if not items:
            raise ValueError("propose_cluster requires a non-empty item list")
        if len(items) < 2:
            return []
        prompt_id = "cluster_entities" if domain == ENTITY_DOMAIN else "cluster_predicates"
        return self._cluster_list_call(
            prompt_id, items, {"instruction": instruction or ""}
        )

    def validate_cluster(self, items: Sequence[str], domain: str = ENTITY_DOMAIN) -> list[str]:
        """The subset of ``items`` confirmed to belong together; empty = rejection."""
        if not items:
            raise ValueError("validate_cluster requires a non-empty item list")
        prompt_id = (
            "validate_entity_cluster" if domain == ENTITY_DOMAIN else "validate_predicate_cluster"
        )
        return self._cluster_list_call(prompt_id, items)

    def label_cluster(self, items: Sequence[str], domain: str = ENTITY_DOMAIN) -> str:
        """A canonical label for the cluster; falls back to the shortest member."""
        if not items:
            raise ValueError("label_cluster requires at least one item")
        if len(items) == 1:
            return items[0]
        prompt_id = (
            "label_entity_cluster" if domain == ENTITY_DOMAIN else "label_predicate_cluster"
        )
        payload = {"items": list(items)}

        def parse(raw: str) -> str:
            data = _parse_json(raw)
            if isinstance(data, dict):
                data = data.get("label")
            if not isinstance(data, str) or not data.strip():
                raise _SchemaViolation("expected a non-empty string under 'label'")
            return data.strip()

        try:
            return self._call(
                prompt_id, payload, "label", parse, user_content=canonical_payload(payload)
            )
        except ModelResponseError:
            fallback = min(items, key=lambda item: (len(item), item))
            logger.warning(
                "labeling failed for %d items; falling back to %r", len(items), fallback
            )
            return fallback

    def find_duplicates(
        self, item: str, candidates: Sequence[str], item_type: str = ENTITY_DOMAIN
    ) -> tuple[list[str], str]:
        """Duplicates of ``item`` among ``candidates`` plus a representative alias."""
        if item_type not in (ENTITY_DOMAIN, PREDICATE_DOMAIN):
            raise ValueError(f"item_type must be entities or predicates, got {item_type!r}")
        if not candidates:
            return [], item
        payload = {"item": item, "candidates": list(candidates), "item_type": item_type}

        def parse(raw: str) -> tuple[list[str], str]:
            data = _parse_json(raw)
            if not isinstance(data, dict):
                raise _SchemaViolation("expected an object with 'duplicates' and 'alias'")
            duplicates = data.get("duplicates")
            alias = data.get("alias", item)
            if not isinstance(duplicates, list) or not all(
                isinstance(x, str) for x in duplicates
            ):
                raise _SchemaViolation("'duplicates' must be a list of strings")
            if not isinstance(alias, str) or not alias.strip():
                raise _SchemaViolation("'alias' must be a non-empty string")
            return duplicates, alias.strip()

        duplicates, alias = self._call(
            "find_duplicates",
            payload,
            "duplicates",
            parse,
            slots={"item_type": item_type},
            user_content=canonical_payload(payload),
        )
        offered = set(candidates)
        kept = _dedupe([x for x in duplicates if x in offered and x != item])
        dropped = [x for x in duplicates if x not in offered]
        if dropped:
            logger.warning(
                "find_duplicates returned candidates not offered: %r", dropped
            )
        if not kept:
            return [], item
        return kept, alias

    # ------------------------------------------------------------ evaluation

    def judge_fact(self, fact: str, context: str) -> JudgeVerdict:
        """Binary verdict: can the fact be deduced from the context alone?"""
        if not fact.strip() or not context.strip():
            raise ValueError("judge_fact requires non-empty fact and context")
        payload = {"context": context, "correct_answer": fact}

        def parse(raw: str) -> JudgeVerdict:
            token = raw.strip()
            if token not in ("0", "1"):
                raise _SchemaViolation(f"expected '0' or '1', got {raw!r}")
            return JudgeVerdict(int(token))

        return self._call(
            "judge_fact", payload, "verdict_binary", parse,
            user_content=canonical_payload(payload),
        )

    def answer_question(self, question: str, triples_text: str, text_block: str) -> str:
        """Free-text answer synthesized from retrieved triples and chunk evidence."""
        if not triples_text.strip():
            raise ValueError("answer_question requires non-empty triples_text")
        payload = {
            "question": question,
            "triples_text": triples_text,
            "text_block": text_block,
        }
        return self._call(
            "rag_answer",
            payload,
            "text",
            lambda raw: raw,
            slots={"triples_text": triples_text, "text_block": text_block, "query": question},
        )

    def judge_answer(self, question: str, expected: str, response: str) -> str:
        """One-word containment verdict: 'yes' or 'no' (case-insensitive parse)."""
        payload = {"question": question, "expected": expected, "response": response}

        def parse(raw: str) -> str:
            word = raw.strip().lower().strip(".,!?:;\"'")
            if word not in ("yes", "no"):
                raise _SchemaViolation(f"expected yes/no, got {raw!r}")
            return word

        return self._call(
            "judge_answer",
            payload,
            "verdict_yesno",
            parse,
            slots={"question": question, "expected": expected, "response": response},
        )

    def extract_facts(self, text: str) -> list[str]:
        """Exactly 15 short fact statements drawn from the text."""
        if not text.strip():
            raise ValueError("extract_facts requires non-empty text")

        def parse(raw: str) -> list[str]:
            facts = _parse_string_list(raw, "facts")
            cleaned = [f.strip() for f in facts]
            if len(cleaned) != 15 or any(not f for f in cleaned):
                raise _SchemaViolation(
                    f"expected exactly 15 non-empty facts, got {len(cleaned)}"
                )
            return cleaned

        facts = self._call(
            "extract_facts", {"text": text}, "fact_list", parse, user_content=text
        )
        if len(set(facts)) < len(facts):
            logger.warning("extract_facts returned duplicate facts; keeping all 15")
        return facts
