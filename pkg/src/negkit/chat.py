"""Chat-model clients for the generation pipelines.

Two model roles: a text-only LLM (object proposal, caption rewriting) and
an image-conditioned MLLM (absence verification). Both go through the same
client interface so tests can substitute deterministic stubs.

Responses are cached on disk under a content digest of the request, so an
interrupted run replays for free and identical requests never hit the
network twice.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import string
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

ROLES = ("system", "user", "assistant")


class TemplateError(ValueError):
    pass


class TransportError(RuntimeError):
    """Request could not be completed after exhausting retries."""


class ProtocolError(RuntimeError):
    """Service responded, but not with usable text."""


@dataclass(frozen=True)
class ChatTurn:
    role: str
    text: str
    image_ref: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"bad role: {self.role!r}")
        if self.image_ref is not None and self.role != "user":
            raise ValueError("image_ref is only allowed on user turns")


def validate_turns(turns: Sequence[ChatTurn]) -> None:
    for i, turn in enumerate(turns):
        if turn.role == "system" and i != 0:
            raise ValueError("system turn must be first and unique")


@dataclass(frozen=True)
class PromptTemplate:
    """A (system, user) prompt pair with named placeholders."""

    name: str
    system: str
    user_pattern: str
    expected_form: str  # single_object | yes_no | caption
    needs_image: bool = False

    def placeholders(self) -> list[str]:
        return [f for _, f, _, _ in string.Formatter().parse(self.user_pattern) if f]


# Verbatim pipeline prompts; placeholder substitution is the only change
# render() is allowed to make.
TEMPLATES = {
    t.name: t
    for t in (
        PromptTemplate(
            name="pipeline1.step1",
            system="You are a helpful chatbot that answers with only one word.",
            user_pattern=(
                "Name an object that is not mentioned in the caption, but is likely "
                "to be in the image corresponding to the caption '{caption}'."
            ),
            expected_form="single_object",
        ),
        PromptTemplate(
            name="pipeline1.step2",
            system=(
                "A chat between a curious human and an artificial intelligence "
                "assistant. The assistant gives helpful, detailed, and polite "
                "answers to the human's questions."
            ),
            user_pattern="Is there {object} in this image? Answer either yes or no.",
            expected_form="yes_no",
            needs_image=True,
        ),
        PromptTemplate(
            name="pipeline1.step3",
            system="You are a helpful chatbot that generates concise caption.",
            user_pattern="Add the absence of the {object} to the caption '{caption}'.",
            expected_form="caption",
        ),
        PromptTemplate(
            name="pipeline2.step2",
            system="You are a helpful chatbot that generates concise caption.",
            user_pattern=(
                "When the answer to the question {question} is 'no', "
                "reconstruct the caption '{caption}'."
            ),
            expected_form="caption",
        ),
    )
}


def render(template: PromptTemplate, bindings: dict[str, str],
           image_ref: Optional[str] = None) -> list[ChatTurn]:
    """Substitute bindings into the template; pure and idempotent.

    Unbound placeholders are a hard error naming the placeholder. Extra
    bindings are ignored.
    """
    missing = [p for p in template.placeholders() if p not in bindings]
    if missing:
        raise TemplateError(f"unbound placeholder(s) in {template.name}: {', '.join(missing)}")
    if template.needs_image and image_ref is None:
        raise TemplateError(f"{template.name} requires an image")
    user_text = template.user_pattern.format(**{p: bindings[p] for p in template.placeholders()})
    return [
        ChatTurn("system", template.system),
        ChatTurn("user", user_text, image_ref=image_ref if template.needs_image else None),
    ]


@dataclass
class ClientConfig:
    endpoint: str = ""
    model: str = "stub"
    temperature: float = 0.0
    max_retries: int = 2
    cache_dir: Optional[str] = None
    timeout: float = 30.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def _image_digest(image_ref: Optional[str]) -> str:
    if image_ref is None:
        return ""
    with open(image_ref, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def request_digest(model: str, turns: Sequence[ChatTurn], attempt: int = 0) -> str:
    """Content digest keying the cache; timestamps never enter it."""
    payload = {
        "model": model,
        "attempt": attempt,
        "turns": [
            {"role": t.role, "text": t.text, "image": _image_digest(t.image_ref)}
            for t in turns
        ],
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class ResponseCache:
    """Content-addressed JSON file cache with atomic per-key writes."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.dir / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def put(self, key: str, response: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump({"response": response}, fh, ensure_ascii=False)
            os.replace(tmp, self._path(key))
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


class ChatClient:
    """Shared completion flow: cache lookup, retries with backoff, cache fill."""

    def __init__(self, config: ClientConfig):
        self.config = config
        self.cache = ResponseCache(config.cache_dir) if config.cache_dir else None
        self.network_calls = 0

    def complete(self, turns: Sequence[ChatTurn], attempt: int = 0) -> str:
        """Return the assistant's text for ``turns``.

        ``attempt`` distinguishes deliberate re-queries of an otherwise
        identical request (they get their own cache slot).
        """
        validate_turns(turns)
        key = request_digest(self.config.model, turns, attempt)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        delay = self.config.backoff_base
        last_exc = None
        response = None
        for tries_left in range(self.config.max_retries, -1, -1):
            try:
                response = self._send(turns)
                break
            except TransportError as exc:
                last_exc = exc
                if tries_left:
                    time.sleep(delay)
                    delay *= 2
        else:
            raise TransportError(f"exhausted retries: {last_exc}")
        if not isinstance(response, str):
            raise ProtocolError(f"non-text response: {type(response).__name__}")
        if self.cache is not None:
            self.cache.put(key, response)
        return response

    def _send(self, turns: Sequence[ChatTurn]) -> str:
        raise NotImplementedError


class StubChatClient(ChatClient):
    """Deterministic canned-response client for tests and dry runs.

    Rules are matched against the last user turn, first match wins. A rule
    with a list of responses hands them out in call order (the last one
    repeats), which models a re-query that gets a different answer.

    JSON shape::

        {"rules": [{"contains": "horse", "responses": ["horse", "saddle"]}],
         "default": "yes"}

    ``equals`` matches the full user text; ``contains`` a substring.
    """

    def __init__(self, rules: list[dict], default: Optional[str] = None,
                 config: Optional[ClientConfig] = None):
        super().__init__(config or ClientConfig(model="stub"))
        self.rules = [dict(r) for r in rules]
        self.default = default
        self._consumed: dict[int, int] = {}

    @classmethod
    def from_json(cls, path: str | Path, config: Optional[ClientConfig] = None) -> "StubChatClient":
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(spec.get("rules", []), spec.get("default"), config)

    def _send(self, turns: Sequence[ChatTurn]) -> str:
        user_text = next((t.text for t in reversed(turns) if t.role == "user"), "")
        for i, rule in enumerate(self.rules):
            if "equals" in rule and rule["equals"] != user_text:
                continue
            if "contains" in rule and rule["contains"] not in user_text:
                continue
            if "equals" not in rule and "contains" not in rule:
                continue
            if "responses" in rule:
                idx = self._consumed.get(i, 0)
                self._consumed[i] = idx + 1
                return rule["responses"][min(idx, len(rule["responses"]) - 1)]
            return rule["response"]
        if self.default is not None:
            return self.default
        raise TransportError(f"no stub rule matches: {user_text!r}")

    def complete(self, turns: Sequence[ChatTurn], attempt: int = 0) -> str:
        # stubs are pure; bypass cache so sequenced responses stay in order
        validate_turns(turns)
        self.network_calls += 1
        return self._send(turns)


class HttpChatClient(ChatClient):
    """Generic chat-completion client over HTTP.

    Speaks the common ``messages`` JSON shape; images ride along as base64
    data URLs inside the user turn content. Endpoint adapters that need a
    different wire shape can override ``build_payload``/``extract_text``.
    """

    def build_payload(self, turns: Sequence[ChatTurn]) -> dict:
        messages = []
        for turn in turns:
            if turn.image_ref is None:
                messages.append({"role": turn.role, "content": turn.text})
            else:
                import base64

                with open(turn.image_ref, "rb") as fh:
                    b64 = base64.b64encode(fh.read()).decode("ascii")
                messages.append({
                    "role": turn.role,
                    "content": [
                        {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}},
                        {"type": "text", "text": turn.text},
                    ],
                })
        return {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        }

    def extract_text(self, body: dict) -> str:
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProtocolError(f"unexpected response shape: {json.dumps(body)[:200]}")
        if not isinstance(content, str):
            raise ProtocolError("non-text content in response")
        return content

    def _send(self, turns: Sequence[ChatTurn]) -> str:
        import requests

        self.network_calls += 1
        try:
            resp = requests.post(
                self.config.endpoint,
                json=self.build_payload(turns),
                timeout=self.config.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from None
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return self.extract_text(resp.json())


_ARTICLES = {"a", "an", "the"}
_ALPHA = re.compile(r"[^\W\d_]+", re.UNICODE)


def parse_object(raw: str) -> Optional[str]:
    """Normalize a single-object answer; None means the sample is dropped.

    Lowercase, strip punctuation at the edges, drop a leading article, and
    accept at most three remaining tokens. Idempotent: feeding the output
    back in returns it unchanged.
    """
    from .negation import tokenize

    tokens = tokenize(raw)
    if tokens and tokens[0] in _ARTICLES:
        tokens = tokens[1:]
    if not tokens or len(tokens) > 3:
        return None
    return " ".join(tokens)


def parse_yes_no(raw: str) -> str:
    """Map a free-form answer to "yes"/"no" via its first alphabetic token.

    Anything else is "ambiguous", which callers treat as retry-once-then-drop.
    """
    match = _ALPHA.search(raw)
    if match:
        first = match.group(0).lower()
        if first in ("yes", "no"):
            return first
    return "ambiguous"
