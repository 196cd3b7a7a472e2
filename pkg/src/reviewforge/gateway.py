"""Provider-agnostic chat-completion access with retries.

The HTTP client speaks the common chat/completions shape: a POST of
``{model, messages, temperature, top_p, max_tokens}`` to
``{base_url}/chat/completions``, reading back the first choice's message
content. Transient failures (rate limits, timeouts, 5xx) are retried with a
configured backoff schedule; auth failures and context overflows are not.

Deterministic mock providers live here too, so every downstream module can
exercise the pipeline without network access: :class:`ScriptedLlm` replays a
script, :class:`GroundedMockLlm` fabricates plausible transcripts straight
from the knowledge in the prompt.
"""

from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass

import httpx


class GatewayError(Exception):
    """Base class for gateway failures."""


class GatewayUnavailable(GatewayError):
    """Transient failures persisted beyond the retry budget."""


class ContextOverflow(GatewayError):
    """The provider rejected the prompt as too long; not retryable."""


class GatewayAuthError(GatewayError):
    """Authentication/authorization failure; not retryable."""


@dataclass(frozen=True)
class ProviderConfig:
    """Access parameters for one chat-completion provider.

    Sampling defaults follow the data-generation setup this toolkit targets
    (temperature 0.95, top-p 0.95); the API key is read from the environment
    variable named by ``api_key_env``, never from config values.
    """

    base_url: str
    model_name: str
    api_key_env: str = "FORGE_API_KEY"
    temperature: float = 0.95
    top_p: float = 0.95
    max_tokens: int = 1024
    retry_budget: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    max_concurrency: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


_CONTEXT_MARKERS = ("context_length", "maximum context", "context window", "too many tokens")


class HttpLlmClient:
    """Thread-safe client for one provider; concurrency is bounded by the
    config's ``max_concurrency``."""

    def __init__(self, cfg: ProviderConfig, client: httpx.Client | None = None):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=120.0)
        self._semaphore = threading.Semaphore(cfg.max_concurrency)

    def complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        cfg = self.cfg
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_tokens,
        }
        headers = {}
        api_key = os.environ.get(cfg.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        attempt = 0
        while True:
            failure: str | None = None
            with self._semaphore:
                try:
                    response = self._client.post(url, json=payload, headers=headers)
                except (httpx.TimeoutException, httpx.TransportError) as exc:
                    failure = f"transport error: {exc}"
                else:
                    if response.status_code == 200:
                        return self._extract_text(response)
                    if response.status_code in (401, 403):
                        raise GatewayAuthError(f"provider rejected credentials ({response.status_code})")
                    if response.status_code == 400 and self._is_context_overflow(response):
                        raise ContextOverflow("provider signalled context overflow")
                    if response.status_code == 429 or response.status_code >= 500:
                        failure = f"HTTP {response.status_code}"
                    else:
                        raise GatewayError(f"provider error HTTP {response.status_code}: {response.text[:200]}")

            attempt += 1
            if attempt > cfg.retry_budget:
                raise GatewayUnavailable(f"gave up after {attempt} attempts ({failure})")
            delay = cfg.backoff[min(attempt - 1, len(cfg.backoff) - 1)] if cfg.backoff else 0.0
            if delay:
                time.sleep(delay)

    @staticmethod
    def _extract_text(response: httpx.Response) -> str:
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc

    @staticmethod
    def _is_context_overflow(response: httpx.Response) -> bool:
        body = response.text.lower()
        return any(marker in body for marker in _CONTEXT_MARKERS)


def complete(cfg: ProviderConfig, prompt: str, client: httpx.Client | None = None) -> str:
    """One-shot completion; see :class:`HttpLlmClient` for the contract."""
    return HttpLlmClient(cfg, client).complete(prompt)


class ScriptedLlm:
    """Deterministic mock provider.

    Either replays ``outputs`` in order (entries may be exceptions, which are
    raised) or computes each completion with ``fn(prompt)``. Prompts are
    recorded on ``calls`` for assertions.
    """

    def __init__(self, outputs=None, fn=None):
        if (outputs is None) == (fn is None):
            raise ValueError("provide exactly one of outputs or fn")
        self._outputs = list(outputs) if outputs is not None else None
        self._fn = fn
        self.calls: list[str] = []

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        if self._fn is not None:
            return self._fn(prompt)
        if not self._outputs:
            raise RuntimeError("scripted provider exhausted")
        item = self._outputs.pop(0)
        if isinstance(item, BaseException):
            raise item
        return item


_TITLE_RE = re.compile(r"^Title:\s*(.+)$", re.MULTILINE)
_KNOWLEDGE_BLOCK_RE = re.compile(
    r"Knowledge Source:\s*(.*?)(?:\n\s*\n|\Z)", re.DOTALL
)
_DOC_RE = re.compile(r"^[A-Za-z][A-Za-z ]*\d*:\s*(.+)$", re.MULTILINE)


class GroundedMockLlm:
    """Offline provider that answers every pipeline prompt deterministically.

    Initial generations produce a four-turn transcript whose agent turns mix
    knowledge content with filler (so knowledge precision starts below 1);
    refinements rewrite every agent turn as a verbatim knowledge document
    (driving knowledge precision to exactly 1); feedback prompts get a fixed
    feedback sentence. Output depends only on the prompt text, so interrupted
    and resumed batch runs reproduce identical bytes.

    ``fail_titles`` lists paper titles for which generation persistently
    returns unparseable text; ``interrupt_after_calls`` raises
    KeyboardInterrupt once the call budget is exceeded (both are test hooks).
    """

    def __init__(self, fail_titles=(), interrupt_after_calls=None):
        self.fail_titles = set(fail_titles)
        self.interrupt_after_calls = interrupt_after_calls
        self.calls: list[str] = []

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        if self.interrupt_after_calls is not None and len(self.calls) > self.interrupt_after_calls:
            raise KeyboardInterrupt
        title = self._title(prompt)
        docs = self._documents(prompt)
        doc1 = docs[0] if docs else "the reviews"
        doc2 = docs[1] if len(docs) > 1 else doc1

        if "improve the response based on the feedback" in prompt:
            return f"Dialogue Agent: {doc1}"
        if "Generate a response corresponding" in prompt:
            return f"Dialogue Agent: {doc1}"
        if "improve the dialogue based on the feedback" in prompt:
            if title in self.fail_titles:
                return "still nothing resembling a transcript here"
            return (
                f'Meta-Reviewer: Hello, can you walk me through the reviews for "{title}"?\n'
                f"Dialogue Agent: {doc1}\n"
                f"Meta-Reviewer: What are the main concerns raised by the reviewers?\n"
                f"Dialogue Agent: {doc2}"
            )
        if "provide actionable feedback" in prompt or "provide feedback" in prompt:
            return (
                "Feedback: Ground every dialogue agent utterance verbatim in the reviews "
                "and include concrete technical details in every turn."
            )
        # Initial multi-turn generation (extensive/paraphrased/tldr variants).
        if title in self.fail_titles:
            return "no speaker labels anywhere in this output"
        return (
            f'Meta-Reviewer: Hello, can you walk me through the reviews for "{title}"?\n'
            f"Dialogue Agent: Certainly! {doc1}\n"
            f"Meta-Reviewer: What are the main concerns raised by the reviewers?\n"
            f"Dialogue Agent: Broadly speaking, {doc2}"
        )

    @staticmethod
    def _title(prompt: str) -> str:
        m = _TITLE_RE.search(prompt)
        return m.group(1).strip() if m else "the paper"

    @staticmethod
    def _documents(prompt: str) -> list[str]:
        m = _KNOWLEDGE_BLOCK_RE.search(prompt)
        if m is None:
            return []
        return [doc.strip() for doc in _DOC_RE.findall(m.group(1))]


def build_llm(config: dict):
    """Construct a provider client from a plain config mapping.

    ``{"kind": "http", ...ProviderConfig fields}`` yields the real client;
    ``{"kind": "mock_grounded", "fail_titles": [...]}`` and
    ``{"kind": "mock_echo"}`` yield offline mocks.
    """
    options = dict(config)
    kind = options.pop("kind", "http")
    if kind == "http":
        options["backoff"] = tuple(options.get("backoff", (1.0, 2.0, 4.0)))
        return HttpLlmClient(ProviderConfig(**options))
    if kind == "mock_grounded":
        return GroundedMockLlm(
            fail_titles=options.get("fail_titles", ()),
            interrupt_after_calls=options.get("interrupt_after_calls"),
        )
    if kind == "mock_echo":
        return ScriptedLlm(fn=lambda prompt: prompt)
    raise GatewayError(f"unknown provider kind {kind!r}")
