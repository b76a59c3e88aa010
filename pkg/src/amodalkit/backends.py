"""Model backend interfaces plus HTTP, scripted, caching and counting implementations.

The pipeline never talks to a model directly; it goes through one of the
protocols below, bound by role in a :class:`BackendRegistry`.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import re
import tempfile
import threading
import time
from collections import Counter
from collections.abc import MutableMapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Protocol, Sequence, runtime_checkable

import httpx
import numpy as np
from PIL import Image

from .errors import (
    BackendUnavailableError,
    InvalidInputError,
    MalformedResponseError,
    ScriptExhaustedError,
)
from .maskcore import as_image

log = logging.getLogger(__name__)

# entries of the pairwise relation matrix returned by an order predictor
OCCLUDES = 1
OCCLUDED_BY = -1
NO_RELATION = 0

ROLES = ("chat_small", "chat_large", "segmenter", "order_predictor", "inpainter", "classifier")
PIPELINE_ROLES = ROLES[:5]


@dataclass(frozen=True)
class DecodeParams:
    max_tokens: int = 256
    temperature: float = 0.0


@dataclass(frozen=True, eq=False)
class ChatVisionRequest:
    system_prompt: str
    user_prompt: str
    image: np.ndarray
    decode: DecodeParams = DecodeParams()

    def __post_init__(self):
        if not self.system_prompt or not self.system_prompt.strip():
            raise InvalidInputError("system_prompt must be non-empty")
        if not self.user_prompt or not self.user_prompt.strip():
            raise InvalidInputError("user_prompt must be non-empty")
        if self.decode.temperature < 0:
            raise InvalidInputError("temperature must be >= 0")
        object.__setattr__(self, "image", as_image(self.image))

    def image_png(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.image, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()


@runtime_checkable
class ChatVisionModel(Protocol):
    model_id: str

    def chat(self, request: ChatVisionRequest) -> str: ...


@runtime_checkable
class Segmenter(Protocol):
    def segment_all(self, image: np.ndarray) -> list[np.ndarray]: ...

    def segment_region(self, image: np.ndarray, points: Sequence[tuple[int, int]] | None = None,
                       box=None) -> np.ndarray: ...


@runtime_checkable
class OcclusionOrderPredictor(Protocol):
    def predict(self, image: np.ndarray, masks: Sequence[np.ndarray]) -> np.ndarray:
        """Return an ``(n, n)`` int matrix; ``[i, j] == OCCLUDES`` means mask i is in front of mask j."""
        ...


@runtime_checkable
class Inpainter(Protocol):
    def inpaint(self, image: np.ndarray, region: np.ndarray, prompt: str) -> np.ndarray: ...


@runtime_checkable
class ImageClassifier(Protocol):
    def classify(self, image: np.ndarray, labels: Sequence[str]) -> list[str]: ...


@dataclass
class BackendRegistry:
    chat_small: ChatVisionModel | None = None
    chat_large: ChatVisionModel | None = None
    segmenter: Segmenter | None = None
    order_predictor: OcclusionOrderPredictor | None = None
    inpainter: Inpainter | None = None
    classifier: ImageClassifier | None = None

    def require(self, *roles: str) -> None:
        missing = [r for r in roles if getattr(self, r) is None]
        if missing:
            raise InvalidInputError(f"unbound backend roles: {', '.join(missing)}")

    def replace(self, **bindings) -> "BackendRegistry":
        values = {r: getattr(self, r) for r in ROLES}
        values.update(bindings)
        return BackendRegistry(**values)


# ---------------------------------------------------------------- HTTP


def _extract_text(payload: Any) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"no message content in response: {exc!r}") from exc
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise MalformedResponseError(f"message content is {type(content).__name__}, not text")
    return content


class HttpChatBackend:
    """Chat-completions style client: system + user messages with one inline PNG.

    Transient failures (connection errors, 429, 5xx) are retried with
    exponential backoff; other HTTP errors fail immediately.
    """

    def __init__(self, endpoint: str, model_id: str, api_key: str | None = None,
                 api_key_env: str | None = None, attempts: int = 3, backoff: float = 1.0,
                 timeout: float = 120.0, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.model_id = model_id
        self._api_key = api_key
        self._api_key_env = api_key_env
        self.attempts = attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self._lock = threading.Lock()
        self.request_count = 0

    def _headers(self) -> dict[str, str]:
        key = self._api_key
        if key is None and self._api_key_env:
            key = os.environ.get(self._api_key_env)
            if key is None:
                raise BackendUnavailableError(f"environment variable {self._api_key_env} is not set")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def payload(self, request: ChatVisionRequest) -> dict:
        image_b64 = base64.b64encode(request.image_png()).decode("ascii")
        return {
            "model": self.model_id,
            "max_tokens": request.decode.max_tokens,
            "temperature": request.decode.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": [
                    {"type": "text", "text": request.user_prompt},
                    {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{image_b64}"}},
                ]},
            ],
        }

    def chat(self, request: ChatVisionRequest) -> str:
        body = self.payload(request)
        headers = self._headers()
        status = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.request_count += 1
            try:
                resp = self._client.post(self.endpoint, json=body, headers=headers)
            except httpx.HTTPError as exc:
                log.warning("chat request to %s failed (attempt %d): %s", self.endpoint, attempt + 1, exc)
                status = None
                continue
            status = resp.status_code
            if status == 429 or status >= 500:
                log.warning("chat request to %s returned %d (attempt %d)", self.endpoint, status, attempt + 1)
                continue
            if status >= 400:
                raise BackendUnavailableError(f"{self.endpoint} returned HTTP {status}", status=status)
            try:
                payload = resp.json()
            except ValueError as exc:
                raise MalformedResponseError(f"response is not JSON: {exc}") from exc
            return _extract_text(payload)
        raise BackendUnavailableError(
            f"{self.endpoint} unavailable after {self.attempts} attempts", status=status)

    def close(self) -> None:
        self._client.close()


def http_chat_backend(endpoint: str, model_id: str, api_key_env: str | None = None,
                      **kwargs) -> HttpChatBackend:
    return HttpChatBackend(endpoint, model_id, api_key_env=api_key_env, **kwargs)


# ---------------------------------------------------------------- scripted

Matcher = str | re.Pattern | Callable[[ChatVisionRequest], bool]


@dataclass
class ScriptEntry:
    matcher: Matcher
    response: str | BaseException
    repeat: bool = False

    def hits(self, request: ChatVisionRequest) -> bool:
        m = self.matcher
        if isinstance(m, str):
            return m in request.user_prompt
        if isinstance(m, re.Pattern):
            return m.search(request.user_prompt) is not None
        return bool(m(request))


class ScriptedChatBackend:
    """Deterministic chat double.

    Each request is answered by the first entry whose matcher hits the user
    prompt. Entries are consumed once unless ``repeat`` is set. A response
    that is an exception instance is raised instead of returned.
    """

    def __init__(self, script: Sequence[ScriptEntry | tuple], model_id: str = "scripted"):
        if not script:
            raise InvalidInputError("script must be non-empty")
        self.model_id = model_id
        self._entries = [e if isinstance(e, ScriptEntry) else ScriptEntry(*e) for e in script]
        self._lock = threading.Lock()
        self.requests: list[ChatVisionRequest] = []

    @property
    def call_count(self) -> int:
        return len(self.requests)

    def chat(self, request: ChatVisionRequest) -> str:
        with self._lock:
            self.requests.append(request)
            for i, entry in enumerate(self._entries):
                if entry.hits(request):
                    if not entry.repeat:
                        del self._entries[i]
                    break
            else:
                raise ScriptExhaustedError(f"no script entry matches prompt {request.user_prompt[:60]!r}")
        if isinstance(entry.response, BaseException):
            raise entry.response
        return entry.response


def scripted_chat_backend(script, model_id: str = "scripted") -> ScriptedChatBackend:
    return ScriptedChatBackend(script, model_id=model_id)


# ---------------------------------------------------------------- caching


class DirectoryStore(MutableMapping):
    """Persistent string store, one file per key."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def _file(self, key: str) -> Path:
        if not re.fullmatch(r"[0-9a-zA-Z_-]+", key):
            raise KeyError(key)
        return self.path / f"{key}.json"

    def __getitem__(self, key: str) -> str:
        f = self._file(key)
        if not f.is_file():
            raise KeyError(key)
        return json.loads(f.read_text(encoding="utf-8"))["text"]

    def __setitem__(self, key: str, value: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.path, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"text": value}, fh)
        os.replace(tmp, self._file(key))

    def __delitem__(self, key: str) -> None:
        try:
            self._file(key).unlink()
        except FileNotFoundError:
            raise KeyError(key) from None

    def __iter__(self) -> Iterator[str]:
        return (p.stem for p in sorted(self.path.glob("*.json")))

    def __len__(self) -> int:
        return sum(1 for _ in self.path.glob("*.json"))


def request_key(model_id: str, request: ChatVisionRequest) -> str:
    h = hashlib.sha256()
    for part in (model_id, request.system_prompt, request.user_prompt):
        data = part.encode("utf-8")
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    h.update(repr(request.image.shape).encode())
    h.update(np.ascontiguousarray(request.image).tobytes())
    h.update(f"{request.decode.max_tokens}:{request.decode.temperature!r}".encode())
    return h.hexdigest()


class ResponseCache:
    """Wrap a chat model so identical requests are answered from ``store``.

    Store errors are logged and the call falls through to the inner model.
    """

    def __init__(self, inner: ChatVisionModel, store: MutableMapping[str, str]):
        self.inner = inner
        self.store = store
        self.model_id = inner.model_id
        self.hits = 0
        self.misses = 0

    def chat(self, request: ChatVisionRequest) -> str:
        key = request_key(self.model_id, request)
        try:
            cached = self.store.get(key)
        except Exception as exc:  # noqa: BLE001 - cache must never fail the call
            log.warning("response cache read failed: %s", exc)
            cached = None
        if cached is not None:
            self.hits += 1
            return cached
        self.misses += 1
        text = self.inner.chat(request)
        try:
            self.store[key] = text
        except Exception as exc:  # noqa: BLE001
            log.warning("response cache write failed: %s", exc)
        return text


def response_cache(inner: ChatVisionModel, store: MutableMapping[str, str]) -> ResponseCache:
    return ResponseCache(inner, store)


# ---------------------------------------------------------------- counting


class CallCounts:
    def __init__(self):
        self._lock = threading.Lock()
        self._counts: Counter[str] = Counter()

    def bump(self, role: str) -> None:
        with self._lock:
            self._counts[role] += 1

    def __getitem__(self, role: str) -> int:
        return self._counts[role]

    def as_dict(self) -> dict[str, int]:
        with self._lock:
            return {r: self._counts[r] for r in ROLES if r in self._counts}


class _Counted:
    def __init__(self, inner: Any, role: str, counts: CallCounts):
        self._inner = inner
        self._role = role
        self._counts = counts

    def __getattr__(self, name: str) -> Any:
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr

        def call(*args, **kwargs):
            self._counts.bump(self._role)
            return attr(*args, **kwargs)

        return call


def counted(registry: BackendRegistry) -> tuple[BackendRegistry, CallCounts]:
    """Wrap every bound role so calls are tallied into a fresh :class:`CallCounts`."""
    counts = CallCounts()
    wrapped = {r: (_Counted(getattr(registry, r), r, counts) if getattr(registry, r) is not None else None)
               for r in ROLES}
    return BackendRegistry(**wrapped), counts


@dataclass
class RecordingInpainter:
    """Inpainter wrapper that keeps every region it was asked to fill."""

    inner: Inpainter
    regions: list[np.ndarray] = field(default_factory=list)

    def inpaint(self, image, region, prompt):
        self.regions.append(np.asarray(region, dtype=bool).copy())
        return self.inner.inpaint(image, region, prompt)
