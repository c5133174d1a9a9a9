"""Agent execution: HTTP chat endpoints, deterministic mocks, disk cache.

The wire protocol is the OpenAI-compatible chat-completions POST. Every
completion (mock or network) is recorded in a content-addressed cache keyed
by digest(prompt text, model name, temperature), so re-running a batch with
the same cache does no network work and is fully auditable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import AgentError
from . import promptkit, ruleoracle
from .promptkit import ZERO_SHOT, AgentVerdict, PromptBundle, PromptConfig
from .scenario import ANOMALY, Dataset, FeatureStats
from .grid import FeatureLayout

logger = logging.getLogger(__name__)

ENV_BASE_URL = "GRIDSIGMA_BASE_URL"
ENV_API_KEY = "GRIDSIGMA_API_KEY"
ENV_MODEL = "GRIDSIGMA_MODEL"

HTTP_ENDPOINT = "http_endpoint"
REFERENCE_RULE = "reference_rule"
ALWAYS_NORMAL = "always_normal"
COIN_FLIP = "coin_flip"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key: str = ""
    temperature: float = 0.0
    max_tokens: int = 256
    timeout: float = 60.0
    max_in_flight: int = 8
    retries: int = 2
    backoff: float = 0.5

    def __post_init__(self):
        if self.temperature < 0:
            raise AgentError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise AgentError("max_in_flight must be >= 1")

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        base_url = os.environ.get(ENV_BASE_URL)
        model = os.environ.get(ENV_MODEL)
        if not base_url or not model:
            raise AgentError(
                f"http agent needs {ENV_BASE_URL} and {ENV_MODEL} set"
            )
        return cls(
            base_url=base_url,
            model_name=model,
            api_key=os.environ.get(ENV_API_KEY, ""),
            **overrides,
        )


@dataclass(frozen=True)
class AgentKind:
    """One of http_endpoint, reference_rule, always_normal, coin_flip(seed)."""

    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (HTTP_ENDPOINT, REFERENCE_RULE, ALWAYS_NORMAL, COIN_FLIP):
            raise AgentError(f"unknown agent kind {self.kind!r}")

    def model_label(self, endpoint: EndpointConfig | None) -> str:
        if self.kind == HTTP_ENDPOINT:
            if endpoint is None:
                raise AgentError("http_endpoint agent requires an endpoint config")
            return endpoint.model_name
        if self.kind == COIN_FLIP:
            return f"mock:coin_flip:{self.seed}"
        return f"mock:{self.kind}"


def cache_key(prompt_text: str, model_name: str, temperature: float) -> str:
    payload = f"{model_name}\x00{temperature!r}\x00".encode("utf-8")
    return hashlib.sha256(payload + prompt_text.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed completion store: <dir>/<first-2-hex>/<digest>.txt.

    Concurrent readers are lock-free; writes are serialized and atomic.
    With no directory the cache lives in memory for the process lifetime.
    """

    def __init__(self, directory: "str | Path | None" = None):
        self.directory = Path(directory) if directory is not None else None
        self._memory: dict[str, str] = {}
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / key[:2] / f"{key}.txt"

    def get(self, key: str) -> str | None:
        if self.directory is None:
            return self._memory.get(key)
        path = self._path(key)
        if not path.exists():
            return None
        return path.read_text(encoding="utf-8")

    def put(self, key: str, text: str) -> None:
        with self._write_lock:
            if self.directory is None:
                self._memory[key] = text
                return
            path = self._path(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, path)


def _http_complete(prompt: PromptBundle, endpoint: EndpointConfig) -> str:
    url = endpoint.base_url.rstrip("/") + "/v1/chat/completions"
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"
    body = {
        "model": endpoint.model_name,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }
    last_error: Exception | None = None
    for attempt in range(endpoint.retries + 1):
        try:
            resp = requests.post(
                url, headers=headers, json=body, timeout=endpoint.timeout
            )
            if resp.status_code >= 500 or resp.status_code == 429:
                raise AgentError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code != 200:
                # Client errors do not improve on retry.
                raise _NoRetry(f"HTTP {resp.status_code}: {resp.text[:200]}")
            content = resp.json()["choices"][0]["message"]["content"]
            if not isinstance(content, str) or not content.strip():
                raise _NoRetry("empty completion")
            return content
        except _NoRetry as exc:
            raise AgentError(str(exc)) from None
        except (requests.RequestException, AgentError, KeyError, ValueError) as exc:
            last_error = exc
            if attempt < endpoint.retries:
                time.sleep(endpoint.backoff * (2**attempt))
    raise AgentError(f"transport failure after {endpoint.retries + 1} attempts: "
                     f"{last_error}")


class _NoRetry(Exception):
    pass


def _mock_complete(prompt: PromptBundle, agent: AgentKind) -> str:
    if agent.kind == REFERENCE_RULE:
        return ruleoracle.reference_agent(prompt).raw
    if agent.kind == ALWAYS_NORMAL:
        return "normal\nNo measurement exceeds the rule."
    if agent.kind == COIN_FLIP:
        digest = hashlib.sha256(
            f"{agent.seed}\x00".encode("utf-8") + prompt.text.encode("utf-8")
        ).digest()
        label = ANOMALY if digest[0] % 2 else "normal"
        return f"{label}\nCoin-flip verdict."
    raise AgentError(f"not a mock agent: {agent.kind}")


def complete(
    prompt: PromptBundle,
    agent: AgentKind,
    endpoint: EndpointConfig | None = None,
    cache: ResponseCache | None = None,
) -> str:
    """Produce one completion, consulting and recording the cache."""
    model = agent.model_label(endpoint)
    temperature = endpoint.temperature if endpoint is not None else 0.0
    key = cache_key(prompt.text, model, temperature)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    if agent.kind == HTTP_ENDPOINT:
        assert endpoint is not None  # model_label already checked
        text = _http_complete(prompt, endpoint)
    else:
        text = _mock_complete(prompt, agent)
    if cache is not None:
        cache.put(key, text)
    return text


def run_batch(
    prompts: list[PromptBundle],
    agent: AgentKind,
    endpoint: EndpointConfig | None = None,
    cache: ResponseCache | None = None,
) -> list[AgentVerdict]:
    """Execute prompts with bounded concurrency; verdicts in prompt order.

    Per-prompt failures become invalid verdicts and a run-log entry, never
    an exception.
    """
    if not prompts:
        raise AgentError("empty prompt batch")
    if cache is None:
        cache = ResponseCache()

    def one(prompt: PromptBundle) -> AgentVerdict:
        try:
            raw = complete(prompt, agent, endpoint, cache)
        except AgentError as exc:
            logger.warning("prompt %s failed: %s", prompt.content_hash[:12], exc)
            return AgentVerdict(
                label=promptkit.INVALID,
                rationale=str(exc),
                raw="",
                parse_mode=promptkit.FAILED,
            )
        return promptkit.parse_verdict(raw)

    if agent.kind == HTTP_ENDPOINT:
        if endpoint is None:
            raise AgentError("http_endpoint agent requires an endpoint config")
        workers = min(endpoint.max_in_flight, len(prompts))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, prompts))
    return [one(p) for p in prompts]


def export_finetune_dataset(
    train: list,
    stats: FeatureStats,
    layout: FeatureLayout,
    config: PromptConfig | None = None,
) -> str:
    """JSONL chat records supervising both the gold label and a rationale.

    The user message is the zero-shot rendering of each train sample; the
    assistant message carries the ground-truth injection label with the rule
    verdict's explanation.
    """
    if not train:
        raise AgentError("train split is empty")
    if config is None:
        config = PromptConfig(paradigm=ZERO_SHOT)
    lines = []
    for sample in train:
        bundle = promptkit.render_prompt(sample, stats, config, [], layout)
        agent_view = ruleoracle.reference_agent(bundle)
        if agent_view.parse_mode == promptkit.FAILED:
            raise AgentError(
                f"could not render a gold answer for sample {sample.id}: "
                f"{agent_view.rationale}"
            )
        answer = f"{sample.label}\n{agent_view.rationale}"
        record = {
            "messages": [
                {"role": "user", "content": bundle.text},
                {"role": "assistant", "content": answer},
            ]
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def export_finetune_from_dataset(ds: Dataset, config: PromptConfig | None = None) -> str:
    return export_finetune_dataset(
        ds.split_samples("train"), ds.stats, ds.layout, config
    )
