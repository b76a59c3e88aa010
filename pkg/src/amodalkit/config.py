"""Pipeline configuration: TOML file, ``key=value`` overrides, and backend binding."""

from __future__ import annotations

import copy
import importlib
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

from .backends import ROLES, BackendRegistry, DecodeParams, DirectoryStore, ResponseCache, http_chat_backend
from .errors import InvalidInputError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_DECODE = {
    "decision": DecodeParams(max_tokens=128, temperature=0.0),
    "geometric": DecodeParams(max_tokens=256, temperature=0.0),
    "semantic": DecodeParams(max_tokens=160, temperature=0.7),
}


@dataclass
class PipelineConfig:
    margin_fraction: float = 0.10
    crop_margin_px: int = 100
    boundary_band_px: int = 2
    gray_value: int = 128
    scale_limit: int = 3
    adjacency_radius_px: int = 5
    inside_modal_threshold: float = 0.8
    description_budget: int = 300
    geometric_retries: int = 1
    parallelism: int = 4
    record_timings: bool = False
    prompt_dir: str | None = None
    decode: dict[str, DecodeParams] = field(default_factory=lambda: dict(DEFAULT_DECODE))
    backends: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("margin_fraction", "crop_margin_px", "boundary_band_px", "adjacency_radius_px",
                     "inside_modal_threshold", "description_budget", "parallelism"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 <= self.gray_value <= 255:
            raise InvalidInputError(f"gray_value must lie in 0..255, got {self.gray_value}")
        if not 1 <= self.scale_limit <= 3:
            raise InvalidInputError(f"scale_limit must be 1..3, got {self.scale_limit}")
        if self.geometric_retries < 0:
            raise InvalidInputError("geometric_retries must be >= 0")
        decode = dict(DEFAULT_DECODE)
        for role, params in self.decode.items():
            if role not in DEFAULT_DECODE:
                raise InvalidInputError(f"unknown decode role {role!r}")
            decode[role] = params if isinstance(params, DecodeParams) else DecodeParams(**params)
            if decode[role].temperature < 0 or decode[role].max_tokens < 1:
                raise InvalidInputError(f"invalid decode params for {role}")
        self.decode = decode

    def to_dict(self) -> dict:
        out = {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}
        out["decode"] = {r: {"max_tokens": p.max_tokens, "temperature": p.temperature}
                         for r, p in self.decode.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(config: PipelineConfig, overrides: Iterable[str]) -> PipelineConfig:
    """Apply ``dotted.key=value`` strings; values are read as JSON when possible."""
    data = config.to_dict()
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InvalidInputError(f"override must look like key=value, got {item!r}")
        node = data
        *parents, leaf = key.strip().split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InvalidInputError(f"override {key!r} descends into a scalar")
        node[leaf] = _parse_value(value.strip())
    return PipelineConfig.from_dict(data)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    pipeline = data.pop("pipeline", {})
    pipeline.update({k: v for k, v in data.items() if k in ("decode", "backends")})
    extra = set(data) - {"decode", "backends"}
    if extra:
        raise InvalidInputError(f"unknown config sections: {', '.join(sorted(extra))}")
    return apply_overrides(PipelineConfig.from_dict(pipeline), overrides)


# ---------------------------------------------------------------- binding


def _import_factory(spec: str):
    module, _, attr = spec.partition(":")
    if not module or not attr:
        raise InvalidInputError(f"factory must look like 'package.module:callable', got {spec!r}")
    try:
        return getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError) as exc:
        raise InvalidInputError(f"cannot import factory {spec!r}: {exc}") from exc


def _bind(role: str, spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "http":
        if role not in ("chat_small", "chat_large"):
            raise InvalidInputError(f"http binding only exists for chat roles, not {role}")
        try:
            endpoint, model = spec.pop("endpoint"), spec.pop("model")
        except KeyError as exc:
            raise InvalidInputError(f"backends.{role}: missing {exc.args[0]}") from exc
        return http_chat_backend(endpoint, model, **spec)
    if kind == "python":
        factory = _import_factory(spec.pop("factory", ""))
        return factory(**spec.pop("options", {}), **spec)
    raise InvalidInputError(f"backends.{role}: unknown kind {kind!r}")


def build_backends(config: PipelineConfig, sample_dir: str | Path | None = None) -> BackendRegistry:
    """Bind roles from ``config.backends``.

    Each role table names a ``kind`` (``http`` or ``python``). ``mode =
    "oracle"`` builds ground-truth backends for a synthetic sample directory,
    with any role tables taking precedence over the oracle ones. A ``cache_dir`` wraps both chat roles in a persistent cache.
    """
    spec = config.backends
    bound = {role: _bind(role, table) for role, table in spec.items()
             if isinstance(table, dict) and role in ROLES}
    if spec.get("mode") == "oracle":
        if sample_dir is None:
            raise InvalidInputError("oracle backends need a synthetic sample directory")
        from .synth import load_sample, oracle_backends, scripted_chat_for
        sample = load_sample(sample_dir)
        chat = scripted_chat_for(sample, **spec.get("oracle", {}))
        # explicitly bound roles (e.g. a real chat endpoint) replace their oracle stand-ins
        registry = oracle_backends(sample).replace(chat_small=chat, chat_large=chat).replace(**bound)
    else:
        registry = BackendRegistry(**bound)
    cache_dir = spec.get("cache_dir")
    if cache_dir:
        store = DirectoryStore(cache_dir)
        registry = registry.replace(**{r: ResponseCache(getattr(registry, r), store)
                                       for r in ("chat_small", "chat_large")
                                       if getattr(registry, r) is not None})
    return registry
