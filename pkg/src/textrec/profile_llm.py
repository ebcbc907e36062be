"""Prompt rendering, chat-completion clients and iterative profile diversification."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
import requests

from .data import ProfileSet

log = logging.getLogger(__name__)

MARKER = "REVISED PROFILE:"


class LlmError(RuntimeError):
    pass


class TransientLlmError(LlmError):
    """Timeouts, connection failures, HTTP 429 and 5xx."""


class ParseError(LlmError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


# ---------------------------------------------------------------- prompts

# Instruction texts are our own wording; the generation prompts follow the
# (title, description) / (title, category, reviews) and per-item history inputs.
_ITEM_GEN = (
    "Summarize what kind of product this is and what kind of buyer it suits, using the title and any "
    "description or customer reviews given. Write two or three plain sentences, no lists."
)
_USER_GEN = (
    "From the items this customer interacted with (title, item summary and the customer's own review), "
    "describe the customer's tastes and the kinds of items they are likely to want next. Write two or three "
    "plain sentences, no lists."
)
_DIVERSIFY = (
    "Rewrite the {kind} profile given below so that it says the same thing in different words and with a "
    "different sentence structure, reusing as little of the original wording as possible. Reply with the "
    "rewritten profile only, starting with \"" + MARKER + " \"."
)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    instruction: str
    required: tuple[str, ...]
    optional: tuple[str, ...] = ()

    def render_input(self, slots: Mapping[str, object]) -> str:
        if self.template_id == "item-gen":
            lines = [f"TITLE: {slots['title']}"]
            if slots.get("category"):
                lines.append(f"CATEGORY: {slots['category']}")
            if slots.get("description"):
                lines.append(f"DESCRIPTION: {slots['description']}")
            reviews = slots.get("reviews") or []
            if reviews:
                lines.append("REVIEWS:")
                lines.extend(f"- {r}" for r in reviews)
            return "\n".join(lines)
        if self.template_id == "user-gen":
            return "PURCHASED ITEMS:\n" + str(slots["items"])
        label = "USER" if self.template_id == "user-diversify" else "ITEM"
        return f"{label} PROFILE: {slots['profile']}"


TEMPLATES: dict[str, PromptTemplate] = {
    "item-gen": PromptTemplate("item-gen", _ITEM_GEN, ("title",), ("category", "description", "reviews")),
    "user-gen": PromptTemplate("user-gen", _USER_GEN, ("items",)),
    "item-diversify": PromptTemplate("item-diversify", _DIVERSIFY.format(kind="item"), ("profile",)),
    "user-diversify": PromptTemplate("user-diversify", _DIVERSIFY.format(kind="user"), ("profile",)),
}


def _is_empty(v) -> bool:
    if v is None:
        return True
    if isinstance(v, str):
        return not v.strip()
    if isinstance(v, (list, tuple)):
        return not v
    return False


def render_prompt(template: PromptTemplate | str, slots: Mapping[str, object]) -> list[dict[str, str]]:
    """System message carrying the instruction, user message carrying the formatted input."""
    if isinstance(template, str):
        template = TEMPLATES[template]
    unknown = set(slots) - set(template.required) - set(template.optional)
    if unknown:
        raise ValueError(f"unknown slots for {template.template_id}: {sorted(unknown)}")
    for name in template.required:
        if name not in slots or _is_empty(slots[name]):
            raise ValueError(f"{template.template_id}: slot {name!r} is missing or empty")
    if template.template_id == "item-gen" and _is_empty(slots.get("description")) and _is_empty(slots.get("reviews")):
        raise ValueError("item-gen needs a description or reviews")
    return [{"role": "system", "content": template.instruction},
            {"role": "user", "content": template.render_input(slots)}]


def render_user_gen_input(user_history: Sequence[str], item_titles: Mapping[str, str],
                          item_profiles: Mapping[str, str], reviews: Mapping[str, str],
                          max_items: int = 5, seed: int = 0) -> dict[str, str]:
    """Slots for the user-gen template from up to ``max_items`` uniformly sampled history items."""
    if not user_history:
        raise ValueError("user history is empty")
    rng = np.random.default_rng(seed)
    n = min(max_items, len(user_history))
    picked = [user_history[j] for j in sorted(rng.choice(len(user_history), size=n, replace=False))]
    blocks = []
    for i in picked:
        block = [f"TITLE: {item_titles.get(i, i)}", f"PROFILE: {item_profiles.get(i, '')}"]
        if reviews.get(i):
            block.append(f"REVIEW: {reviews[i]}")
        blocks.append("\n".join(block))
    return {"items": "\n\n".join(blocks)}


def parse_revision(response_text: str) -> str:
    pos = response_text.find(MARKER)
    if pos < 0:
        raise ParseError(f"response lacks {MARKER!r}", response_text)
    body = response_text[pos + len(MARKER):].strip()
    if not body:
        raise ParseError("empty revised profile", response_text)
    return body


# ---------------------------------------------------------------- clients

class ChatClient(Protocol):
    def complete(self, messages: list[dict[str, str]]) -> str: ...


@dataclass
class LlmClientConfig:
    endpoint: str | None = None
    model: str = "gpt-3.5-turbo"
    token_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 1.0
    mock_transcript: str | None = None
    mock_fallback: str = "error"

    def __post_init__(self) -> None:
        if (self.endpoint is None) == (self.mock_transcript is None):
            raise ValueError("configure exactly one of endpoint or mock_transcript")


def request_payload(model: str, messages: list[dict[str, str]], temperature: float) -> dict:
    return {"model": model, "messages": messages, "temperature": temperature}


def request_hash(payload: Mapping) -> str:
    canon = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class HttpChatClient:
    """POSTs chat-completion requests with bearer auth and exponential backoff."""

    def __init__(self, config: LlmClientConfig, session: requests.Session | None = None, sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self.sleep = sleep

    def complete(self, messages: list[dict[str, str]]) -> str:
        cfg = self.config
        token = os.environ.get(cfg.token_env)
        if not token:
            raise LlmError(f"environment variable {cfg.token_env} is not set")
        payload = request_payload(cfg.model, messages, cfg.temperature)
        headers = {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}
        last: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self.sleep(min(2.0 ** (attempt - 1), 30.0))
            try:
                resp = self.session.post(cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransientLlmError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise LlmError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise LlmError(f"unexpected response body: {resp.text[:200]}") from None
        raise TransientLlmError(f"gave up after {cfg.max_retries + 1} attempts: {last}")


class MockChatClient:
    """Offline client answering from a JSON-lines transcript of {request_hash, response_text}.

    With ``fallback="echo"`` unknown requests are answered by echoing the
    input profile behind the revision marker. Performs no network I/O.
    """

    network_calls = 0

    def __init__(self, transcript: str | Path | Mapping[str, str] | None = None, model: str = "gpt-3.5-turbo",
                 temperature: float = 1.0, fallback: str = "error"):
        if fallback not in ("error", "echo"):
            raise ValueError("fallback must be 'error' or 'echo'")
        self.model = model
        self.temperature = temperature
        self.fallback = fallback
        self.responses: dict[str, str] = {}
        if isinstance(transcript, Mapping):
            self.responses.update(transcript)
        elif transcript is not None:
            with open(transcript, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self.responses[rec["request_hash"]] = rec["response_text"]
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def complete(self, messages: list[dict[str, str]]) -> str:
        h = request_hash(request_payload(self.model, messages, self.temperature))
        with self._lock:
            self.calls.append(h)
        if h in self.responses:
            return self.responses[h]
        if self.fallback == "echo":
            text = messages[-1]["content"]
            _, _, body = text.partition("PROFILE: ")
            return f"{MARKER} {body or text}"
        raise LlmError(f"no transcript entry for request {h}")


def make_client(config: LlmClientConfig) -> ChatClient:
    if config.mock_transcript is not None:
        return MockChatClient(config.mock_transcript, config.model, config.temperature, config.mock_fallback)
    return HttpChatClient(config)


# ---------------------------------------------------------------- diversification

def read_progress(path: str | Path) -> dict[str, dict[int, str]]:
    done: dict[str, dict[int, str]] = {}
    p = Path(path)
    if not p.exists():
        return done
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                done.setdefault(rec["entity_id"], {})[int(rec["iteration"])] = rec["profile"]
    return done


@dataclass
class DiversifyResult:
    profiles: dict[str, ProfileSet]
    flagged: dict[str, str] = field(default_factory=dict)
    calls: int = 0


def diversify(profile_sets: Mapping[str, ProfileSet], t: int, client: ChatClient, kind: str = "user",
              progress_path: str | Path | None = None, workers: int = 1) -> DiversifyResult:
    """Extend each profile set to ``t`` rephrasings, each rewriting the previous one.

    Finished iterations are appended to ``progress_path`` as they complete, so
    an interrupted run resumes where it stopped. Entities whose calls fail are
    reported in ``flagged`` and keep the iterations obtained so far.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    template = TEMPLATES[f"{kind}-diversify"]
    done = read_progress(progress_path) if progress_path else {}
    write_lock = threading.Lock()
    progress_fh = open(progress_path, "a", encoding="utf-8") if progress_path else None
    counter = {"calls": 0}
    partial: dict[str, list[str]] = {}

    def run_entity(eid: str, ps: ProfileSet):
        chain = list(ps.profiles[: t + 1])
        partial[eid] = chain
        prior = done.get(eid, {})
        while len(chain) <= t and len(chain) in prior:
            chain.append(prior[len(chain)])
        while len(chain) <= t:
            j = len(chain)
            messages = render_prompt(template, {"profile": chain[-1]})
            with write_lock:
                counter["calls"] += 1
            raw = client.complete(messages)
            try:
                text = parse_revision(raw)
            except ParseError as exc:
                log.warning("%s %s iteration %d: %s; raw response: %r", kind, eid, j, exc, exc.raw)
                raise
            chain.append(text)
            if progress_fh:
                with write_lock:
                    progress_fh.write(json.dumps({"entity_id": eid, "iteration": j, "profile": text},
                                                 ensure_ascii=False) + "\n")
                    progress_fh.flush()
        return chain

    out: dict[str, ProfileSet] = {}
    result = DiversifyResult(out)
    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            futures = {pool.submit(run_entity, eid, ps): eid for eid, ps in profile_sets.items()}
            for fut in as_completed(futures):
                eid = futures[fut]
                try:
                    chain = fut.result()
                    out[eid] = ProfileSet(eid, chain)
                except LlmError as exc:
                    log.error("%s %s flagged: %s", kind, eid, exc)
                    result.flagged[eid] = str(exc)
    finally:
        if progress_fh:
            progress_fh.close()
    for eid in result.flagged:
        out[eid] = ProfileSet(eid, partial[eid])
    result.profiles = {eid: out[eid] for eid in profile_sets}
    result.calls = counter["calls"]
    return result
