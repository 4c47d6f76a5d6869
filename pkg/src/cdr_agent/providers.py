"""Pluggable embedding and language-model providers.

Two flavors of each: a deterministic offline mock (used by the test suite and
the default CLI mode) and a remote HTTP client configured via environment
variables. Both sides of each pair honor the same contract, so everything
downstream is provider-agnostic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import EmbeddingError, ProviderTransportError

logger = logging.getLogger(__name__)

ENV_EMBED_URL = "CDR_AGENT_EMBED_URL"
ENV_EMBED_MODEL = "CDR_AGENT_EMBED_MODEL"
ENV_LLM_URL = "CDR_AGENT_LLM_URL"
ENV_LLM_MODEL = "CDR_AGENT_LLM_MODEL"
ENV_API_KEY = "CDR_AGENT_API_KEY"

MOCK_EMBED_DIM = 256


class EmbeddingProvider(Protocol):
    provider_id: str

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:  # pragma: no cover - interface
        ...


class LlmProvider(Protocol):
    provider_id: str

    def complete(self, system: str, user: str, *, temperature: float = 0.0) -> str:  # pragma: no cover
        ...


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


_TOKEN_CLEAN_RE = re.compile(r"[^\w\s]", re.UNICODE)


def _tokenize(text: str) -> list[str]:
    return _TOKEN_CLEAN_RE.sub(" ", text.lower()).split()


class MockEmbeddingProvider:
    """Deterministic offline embeddings from hashed-token bucket counts.

    Each token is hashed into one of 256 buckets; the bucket counts are
    L2-normalized. Lexical overlap between texts therefore translates into
    cosine similarity, which is the property the selection tests lean on.
    """

    provider_id = "mock-hash256-v1"
    dim = MOCK_EMBED_DIM

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> np.ndarray:
        tokens = _tokenize(text)
        if not tokens:
            raise EmbeddingError(f"text has no tokens to embed: {text!r}")
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            bucket = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")
            vec[bucket % self.dim] += 1.0
        return vec / np.linalg.norm(vec)


@dataclass
class RetryPolicy:
    retries: int = 2
    backoff_s: float = 0.1

    def sleep(self, attempt: int) -> None:
        time.sleep(self.backoff_s * (2**attempt))


class RemoteEmbeddingProvider:
    """Client for an HTTP embedding endpoint.

    Request: {"input": [texts], "model": name}; response: {"data": [{"index": i,
    "embedding": [...]}]}. Vectors come back in input order regardless of the
    order the server lists them.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 30.0,
        retry: RetryPolicy | None = None,
    ):
        self.base_url = base_url
        self.model = model
        self.provider_id = f"remote-embed:{model}"
        self.retry = retry or RetryPolicy()
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout_s, headers=headers)

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteEmbeddingProvider":
        url = os.environ.get(ENV_EMBED_URL)
        model = os.environ.get(ENV_EMBED_MODEL)
        if not url or not model:
            raise ProviderTransportError(
                f"remote embedding provider needs {ENV_EMBED_URL} and {ENV_EMBED_MODEL} set"
            )
        return cls(url, model, api_key=os.environ.get(ENV_API_KEY), **kwargs)

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        payload = {"input": list(texts), "model": self.model}
        body = _post_with_retries(self._client, self.base_url, payload, self.retry)
        try:
            rows = sorted(body["data"], key=lambda r: r["index"])
            vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError) as exc:
            raise ProviderTransportError(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise ProviderTransportError(
                f"embedding response had {len(vectors)} vectors for {len(texts)} inputs"
            )
        return vectors


def _post_with_retries(client: httpx.Client, url: str, payload: dict, retry: RetryPolicy) -> dict:
    last_error: Exception | None = None
    for attempt in range(retry.retries + 1):
        try:
            response = client.post(url, json=payload)
            if response.status_code >= 500:
                raise ProviderTransportError(f"server error {response.status_code}")
            if response.status_code >= 400:
                # Client errors are not retryable; the request itself is wrong.
                raise ProviderTransportError(f"request rejected: {response.status_code} {response.text[:200]}")
            return response.json()
        except ProviderTransportError as exc:
            if "request rejected" in str(exc):
                raise
            last_error = exc
        except (httpx.TransportError, json.JSONDecodeError) as exc:
            last_error = exc
        if attempt < retry.retries:
            logger.debug("retrying %s after %s (attempt %d)", url, last_error, attempt + 1)
            retry.sleep(attempt)
    raise ProviderTransportError(f"provider call failed after {retry.retries + 1} attempts: {last_error}")


# Markers the mock LLM uses to recover (note, rule) identity from a prompt.
NOTE_OPEN = "<<<NOTE"
NOTE_CLOSE = "NOTE>>>"
_RULE_ID_RE = re.compile(r"\(id: ([a-z][a-z0-9_]*)\)")
_VAR_LINE_RE = re.compile(r"^- ([a-z][a-z0-9_]*) \((boolean|integer|float|string|enum)\):", re.MULTILINE)
BASELINE_TASK_MARKER = "Task: combined rule selection and execution."
BASELINE_FIXTURE_KEY = "__baseline__"


def extract_note_from_prompt(prompt: str) -> str | None:
    start = prompt.find(NOTE_OPEN)
    end = prompt.rfind(NOTE_CLOSE)
    if start == -1 or end == -1 or end <= start:
        return None
    return prompt[start + len(NOTE_OPEN) : end].strip("\n")


class MockLlmProvider:
    """Offline language model replaced by a fixture lookup table.

    Fixture keys are "<sha256 of note>:<rule id>" (or ":__baseline__" for the
    combined baseline prompt). When no fixture matches an extraction prompt,
    a keyword matcher answers boolean variables from literal phrase mentions,
    treating "no/denies/without <phrase>" as negation; everything it cannot
    ground stays unreported.
    """

    provider_id = "mock-llm-v1"

    def __init__(self, fixtures: Mapping[str, str] | None = None, fallback_matching: bool = True):
        self.fixtures = dict(fixtures or {})
        self.fallback_matching = fallback_matching
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "MockLlmProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(fixtures=data, **kwargs)

    def complete(self, system: str, user: str, *, temperature: float = 0.0) -> str:
        self.calls.append(user)
        note = extract_note_from_prompt(user)
        if note is not None:
            digest = text_digest(note)
            if BASELINE_TASK_MARKER in user:
                return self.fixtures.get(f"{digest}:{BASELINE_FIXTURE_KEY}", "selected: none")
            match = _RULE_ID_RE.search(user)
            if match:
                key = f"{digest}:{match.group(1)}"
                if key in self.fixtures:
                    return self.fixtures[key]
        if self.fallback_matching and note is not None:
            return self._keyword_answer(user, note)
        return ""

    def _keyword_answer(self, prompt: str, note: str) -> str:
        # Negation scope is one sentence, so "denies X. Y present." cannot negate Y.
        sentences = [" ".join(_tokenize(s)) for s in re.split(r"[.!?;]", note)]
        lines = []
        for name, vtype in _VAR_LINE_RE.findall(prompt):
            if vtype != "boolean":
                continue
            phrase = name.replace("_", " ")
            negation = re.compile(rf"\b(no|not|without|denies|denied)\s+(\w+\s+){{0,2}}{re.escape(phrase)}")
            negated = any(negation.search(s) for s in sentences)
            if negated:
                lines.append(f"{name}: false")
            elif any(phrase in s for s in sentences):
                lines.append(f"{name}: true")
        return "\n".join(lines)


class RemoteLlmProvider:
    """Client for a chat-completions-style HTTP endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        retry: RetryPolicy | None = None,
    ):
        self.base_url = base_url
        self.model = model
        self.provider_id = f"remote-llm:{model}"
        self.retry = retry or RetryPolicy()
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout_s, headers=headers)

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteLlmProvider":
        url = os.environ.get(ENV_LLM_URL)
        model = os.environ.get(ENV_LLM_MODEL)
        if not url or not model:
            raise ProviderTransportError(f"remote LLM provider needs {ENV_LLM_URL} and {ENV_LLM_MODEL} set")
        return cls(url, model, api_key=os.environ.get(ENV_API_KEY), **kwargs)

    def complete(self, system: str, user: str, *, temperature: float = 0.0) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
        }
        body = _post_with_retries(self._client, self.base_url, payload, self.retry)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderTransportError(f"malformed completion response: {exc}") from exc


class EmbeddingCache:
    """Thread-safe cache keyed by (provider id, content hash).

    Rule description embeddings are computed once per registry load; repeated
    inserts of the same key are harmless by construction (values are
    deterministic for a given provider).
    """

    def __init__(self):
        self._store: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._store)

    def get_or_embed(self, provider: EmbeddingProvider, texts: Sequence[str]) -> list[np.ndarray]:
        keys = [(provider.provider_id, text_digest(t)) for t in texts]
        with self._lock:
            missing = [i for i, k in enumerate(keys) if k not in self._store]
            todo: dict[str, list[int]] = {}
            for i in missing:
                todo.setdefault(texts[i], []).append(i)
        if todo:
            unique_texts = list(todo.keys())
            vectors = provider.embed_many(unique_texts)
            if len(vectors) != len(unique_texts):
                raise EmbeddingError("provider returned a different number of vectors than requested")
            with self._lock:
                for text, vec in zip(unique_texts, vectors):
                    arr = np.asarray(vec, dtype=np.float64)
                    if not np.all(np.isfinite(arr)):
                        raise EmbeddingError("provider returned a vector with NaN or Inf")
                    for i in todo[text]:
                        self._store[keys[i]] = arr
        with self._lock:
            out = [self._store[k] for k in keys]
        dims = {v.shape for v in out}
        if len(dims) > 1:
            raise EmbeddingError(f"provider returned mixed vector dimensions: {sorted(dims)}")
        return out
