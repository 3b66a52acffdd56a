"""Client for an external chat-completion endpoint.

Covers question generation, extractive keyword queries and a relevance
scorer that turns next-token log-probabilities over the answers "1".."5"
into an expected rating. Responses are cached on disk, keyed by the full
request, so reruns are free and deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import tempfile
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

import httpx

from .errors import GenerationError, ParameterError, ScoringError, TransportError, ValidationError

log = logging.getLogger(__name__)

API_KEY_ENV = "INQUIRE_LLM_API_KEY"
SCORES = (1, 2, 3, 4, 5)


def load_prompt(name: str) -> str:
    return resources.files("inquire").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


QUESTION_PROMPT = load_prompt("questions")
KEYWORD_PROMPT = load_prompt("keywords")
RELEVANCE_PROMPT = load_prompt("relevance")


# -- transport -------------------------------------------------------------


class Transport(Protocol):
    def __call__(self, payload: dict) -> dict: ...


class HttpTransport:
    """POSTs chat-completion payloads to ``url``.

    The bearer token comes from ``INQUIRE_LLM_API_KEY`` unless given.
    Network errors, 429 and 5xx responses raise ``TransportError`` so the
    client can retry them; other HTTP errors raise ``GenerationError``.
    """

    def __init__(self, url: str, api_key: str | None = None, timeout: float = 60.0, client: httpx.Client | None = None):
        self.url = url
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    def __call__(self, payload: dict) -> dict:
        try:
            resp = self._client.post(self.url, json=payload, headers=self._headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self.url} failed: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{self.url} answered HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GenerationError(f"{self.url} answered HTTP {resp.status_code}", raw=resp.text)
        try:
            return resp.json()
        except ValueError:
            raise GenerationError("endpoint returned non-JSON body", raw=resp.text) from None


class ResponseCache:
    """One JSON file per request hash.

    Files are written to a temporary name and renamed into place, so
    concurrent readers never see a partial entry. Writes are serialised.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(payload: Mapping) -> str:
        return hashlib.sha256(json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        try:
            return json.loads(self._path(key).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, key: str, response: dict) -> None:
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(response, fh, sort_keys=True)
            os.replace(tmp, self._path(key))


@dataclass
class ChatClient:
    """Chat-completion caller with caching, bounded retries and a cap on in-flight requests."""

    transport: Transport
    model: str = "gpt-4o-mini"
    temperature: float = 1.0
    cache: ResponseCache | None = None
    max_retries: int = 3
    backoff: float = 1.0
    max_in_flight: int = 4
    sleep: Callable[[float], None] = time.sleep
    _gate: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._gate = threading.BoundedSemaphore(max(1, self.max_in_flight))

    def complete(self, prompt: str, **extra: Any) -> dict:
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
            **extra,
        }
        key = ResponseCache.key(payload)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        response = self._send(payload)
        if self.cache is not None:
            self.cache.put(key, response)
        return response

    def _send(self, payload: dict) -> dict:
        for attempt in range(self.max_retries + 1):
            try:
                with self._gate:
                    return self.transport(payload)
            except TransportError as exc:
                if attempt == self.max_retries:
                    raise TransportError(f"giving up after {attempt + 1} attempts: {exc}") from exc
                delay = self.backoff * 2**attempt
                log.warning("transport failure (%s); retrying in %.1fs", exc, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")


def response_text(response: Mapping) -> str:
    try:
        content = response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise GenerationError("response has no choices[0].message.content", raw=json.dumps(response)) from None
    if not isinstance(content, str):
        raise GenerationError("message content is not text", raw=json.dumps(response))
    return content


def response_logprobs(response: Mapping) -> dict[str, float]:
    """Top log-probabilities for the first generated token, as ``{token: logprob}``."""
    try:
        first = response["choices"][0]["logprobs"]["content"][0]
    except (KeyError, IndexError, TypeError):
        raise GenerationError("response carries no token log-probabilities", raw=json.dumps(response)) from None
    out = {entry["token"]: float(entry["logprob"]) for entry in first.get("top_logprobs", [])}
    out.setdefault(first["token"], float(first["logprob"]))
    return out


# -- generation ------------------------------------------------------------


@dataclass(frozen=True)
class GenerationRequest:
    paragraph_id: str
    context: str
    n_questions: int = 20
    mask_token: str = "[CITATION]"

    def __post_init__(self) -> None:
        if not self.context.strip():
            raise ParameterError(f"paragraph {self.paragraph_id!r}: empty context")
        if self.n_questions < 1:
            raise ParameterError("n_questions must be >= 1")


_ENUM = re.compile(r"^\s*(?:[-*•]|\(?\d+[.):])\s*")


def _lines(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = _ENUM.sub("", line).strip().strip('"').strip()
        if line:
            out.append(line)
    return out


def parse_questions(text: str, n: int) -> list[str]:
    """Split a numbered or bulleted list into ``n`` questions, checking count and form."""
    questions = _lines(text)
    if len(questions) != n:
        raise GenerationError(f"expected {n} questions, got {len(questions)}", raw=text)
    for q in questions:
        if not q.endswith("?"):
            raise ValidationError(f"not a question: {q!r}", raw=text)
    return questions


def generate_questions(request: GenerationRequest, client: ChatClient, template: str = QUESTION_PROMPT) -> list[str]:
    """Exactly ``request.n_questions`` questions, in generation order."""
    prompt = template.format(n=request.n_questions, context=request.context, mask_token=request.mask_token)
    return parse_questions(response_text(client.complete(prompt)), request.n_questions)


def parse_keywords(text: str, context: str, n: int = 5) -> list[str]:
    """Parse ``n`` keyword phrases and check each occurs in ``context`` (case-insensitive)."""
    stripped = text.strip()
    phrases: list[str]
    try:
        loaded = json.loads(stripped)
        phrases = [str(p).strip() for p in loaded] if isinstance(loaded, list) else []
    except json.JSONDecodeError:
        phrases = []
    if not phrases:
        lines = _lines(stripped)
        if len(lines) == 1:
            lines = [p.strip().strip('"').strip() for p in lines[0].split(",")]
        phrases = [p for p in lines if p]
    if len(phrases) != n:
        raise GenerationError(f"expected {n} keyword phrases, got {len(phrases)}", raw=text)
    haystack = context.casefold()
    for p in phrases:
        if p.casefold() not in haystack:
            raise ValidationError(f"keyword {p!r} does not occur in the context", raw=text)
    return phrases


def extract_keywords(context: str, client: ChatClient, template: str = KEYWORD_PROMPT) -> list[str]:
    prompt = template.format(context=context)
    return parse_keywords(response_text(client.complete(prompt)), context)


def generate_many(
    requests: Sequence[GenerationRequest], client: ChatClient, workers: int | None = None
) -> list[list[str]]:
    """``generate_questions`` over many requests, results in input order."""
    workers = workers or client.max_in_flight
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda r: generate_questions(r, client), requests))


# -- relevance scoring -----------------------------------------------------


@dataclass(frozen=True)
class ScoreDistribution:
    """Probabilities for the ratings 1..5."""

    probabilities: Mapping[int, float]

    def __post_init__(self) -> None:
        probs = {i: float(self.probabilities.get(i, 0.0)) for i in SCORES}
        if any(p < 0 for p in probs.values()):
            raise ScoringError("negative probability")
        if abs(math.fsum(probs.values()) - 1.0) > 1e-9:
            raise ScoringError("probabilities do not sum to 1")
        object.__setattr__(self, "probabilities", probs)

    def as_dict(self) -> dict[str, float]:
        return {str(i): p for i, p in self.probabilities.items()}


def score_distribution(token_logprobs: Mapping[str, float]) -> ScoreDistribution:
    """Softmax over the logits (or log-probabilities) of the tokens "1".."5".

    Other tokens are ignored. Tokens differing only by surrounding
    whitespace (``"5"`` and ``" 5"``) are pooled. Ratings never observed get
    probability 0.

    Raises:
        ScoringError: no rating token is present.
    """
    pooled: dict[int, list[float]] = {}
    for token, value in token_logprobs.items():
        key = token.strip()
        if len(key) == 1 and key in "12345" and math.isfinite(value):
            pooled.setdefault(int(key), []).append(float(value))
    if not pooled:
        raise ScoringError("no score tokens '1'..'5' in the log-probabilities")
    top = max(max(v) for v in pooled.values())
    weights = {i: math.fsum(math.exp(v - top) for v in vals) for i, vals in pooled.items()}
    total = math.fsum(weights.values())
    return ScoreDistribution({i: weights.get(i, 0.0) / total for i in SCORES})


def expected_score(dist: ScoreDistribution) -> float:
    """Probability-weighted mean rating, in [1, 5]."""
    return math.fsum(p * i for i, p in dist.probabilities.items())


def score_question_relevance(
    question: str, keywords: Sequence[str], client: ChatClient, top_logprobs: int = 20
) -> tuple[ScoreDistribution, float]:
    """Rate a question against a keyword list with the 1-5 relevance prompt."""
    prompt = RELEVANCE_PROMPT.format(question=question, keywords=", ".join(keywords))
    response = client.complete(prompt, max_tokens=1, logprobs=True, top_logprobs=top_logprobs)
    dist = score_distribution(response_logprobs(response))
    return dist, expected_score(dist)


def generate_and_store(datapoints: Sequence, settings: Mapping, n_questions: int, base_dir: Path = Path(".")) -> Path:
    """Generate questions and keyword queries for every datapoint into a JSON Lines file.

    ``settings`` keys: ``endpoint`` (required), ``out`` (required), ``model``,
    ``temperature``, ``cache_dir``, ``max_in_flight``, ``max_retries``.
    Output records: ``{"paragraph_id", "keywords", "questions"}`` with
    questions in generation order.
    """
    try:
        endpoint, out = settings["endpoint"], base_dir / settings["out"]
    except KeyError as exc:
        raise ParameterError(f"generation settings need {exc.args[0]!r}") from None
    cache_dir = settings.get("cache_dir")
    client = ChatClient(
        HttpTransport(endpoint),
        model=settings.get("model", "gpt-4o-mini"),
        temperature=float(settings.get("temperature", 1.0)),
        cache=ResponseCache(base_dir / cache_dir) if cache_dir else None,
        max_retries=int(settings.get("max_retries", 3)),
        max_in_flight=int(settings.get("max_in_flight", 4)),
    )
    requests = [GenerationRequest(dp.paragraph_id, dp.context_window or dp.masked_text, n_questions) for dp in datapoints]
    questions = generate_many(requests, client)
    with open(out, "w", encoding="utf-8") as fh:
        for req, qs in zip(requests, questions):
            keywords = extract_keywords(req.context, client)
            fh.write(json.dumps({"paragraph_id": req.paragraph_id, "keywords": keywords, "questions": qs}) + "\n")
    return out
