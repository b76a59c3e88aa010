"""End-to-end orchestration: occluders, decision, guidance, multi-scale inpainting."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backends import PIPELINE_ROLES, BackendRegistry, counted
from .config import PipelineConfig
from .decision import GuidanceDecision, decide, fallback_decision
from .errors import AmodalError, BackendError, InvalidInputError, MalformedGuidanceError
from .geometric import MultiScaleBoxes, fallback_bbox, predict_boxes
from .inpaint import CompletionResult, multiscale_complete
from .maskcore import as_image, as_mask, check_same_shape, mask_to_bbox
from .occluders import detect_occluders
from .semantic import PromptSelection, generate_description, select_prompt

log = logging.getLogger(__name__)

RECORD_SCHEMA = "amodalkit.run_record/1"


@dataclass
class TargetSpec:
    image: np.ndarray
    modal: np.ndarray
    category_hint: str | None = None
    sample_id: str = "sample"

    def __post_init__(self):
        self.image = as_image(self.image)
        self.modal = as_mask(self.modal, "modal")
        check_same_shape(self.image, self.modal)
        if not self.modal.any():
            raise InvalidInputError(f"{self.sample_id}: modal mask is empty")


@dataclass
class RunRecord:
    sample_id: str
    status: str = "ok"  # ok | incomplete | error
    stages: list[str] = field(default_factory=list)
    occluder_count: int | None = None
    inpaint_area: int | None = None
    decision: GuidanceDecision | None = None
    boxes: MultiScaleBoxes | None = None
    geometric_responses: list[str] = field(default_factory=list)
    prompt: PromptSelection | None = None
    result: CompletionResult | None = None
    notes: list[str] = field(default_factory=list)
    error: str | None = None
    call_counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(PIPELINE_ROLES, 0))
    timings: dict[str, float] = field(default_factory=dict)
    inpaint_mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status != "error"

    def to_dict(self, include_timings: bool = False) -> dict:
        out = {
            "schema": RECORD_SCHEMA,
            "sample_id": self.sample_id,
            "status": self.status,
            "stages": list(self.stages),
            "occluders": None if self.occluder_count is None else
            {"count": self.occluder_count, "inpaint_area": self.inpaint_area},
            "decision": self.decision.to_dict() if self.decision else None,
            "boxes": self.boxes.to_dict() if self.boxes else None,
            "geometric_responses": list(self.geometric_responses),
            "prompt": self.prompt.to_dict() if self.prompt else None,
            "result": self.result.summary() if self.result else None,
            "notes": list(self.notes),
            "error": self.error,
            "call_counts": dict(self.call_counts),
        }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out


def _timed(record: RunRecord):
    @contextmanager
    def stage(name: str):
        record.stages.append(name)
        start = time.perf_counter()
        try:
            yield
        finally:
            record.timings[name] = round(time.perf_counter() - start, 6)
    return stage


def run(config: PipelineConfig, backends: BackendRegistry, spec: TargetSpec) -> RunRecord:
    """Complete one target. Never raises for stage failures; they land in the record."""
    record = RunRecord(spec.sample_id)
    registry, counts = counted(backends)
    stage = _timed(record)
    try:
        registry.require(*PIPELINE_ROLES)
        _run_stages(config, registry, spec, record, stage)
    except AmodalError as exc:
        record.status, record.error = "error", f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # noqa: BLE001 - a record is always produced
        log.exception("unexpected failure in %s", spec.sample_id)
        record.status, record.error = "error", f"{type(exc).__name__}: {exc}"
    called = counts.as_dict()
    record.call_counts = {role: called.get(role, 0) for role in PIPELINE_ROLES}
    return record


def _run_stages(config: PipelineConfig, registry: BackendRegistry, spec: TargetSpec,
                record: RunRecord, stage) -> None:
    image, modal = spec.image, spec.modal
    decode = config.decode

    with stage("occluders"):
        occ = detect_occluders(image, modal, registry.segmenter, registry.order_predictor,
                               config.adjacency_radius_px, config.inside_modal_threshold)
        record.occluder_count = len(occ.masks)
        record.inpaint_area = int(np.count_nonzero(occ.inpaint_mask))
        record.inpaint_mask = occ.inpaint_mask

    with stage("decision"):
        try:
            decision = decide(registry.chat_small, image, modal, config.crop_margin_px,
                              decode["decision"], config.prompt_dir)
        except BackendError as exc:
            record.notes.append(f"decision backend failed ({type(exc).__name__}); guidance requested")
            decision = fallback_decision()
        record.decision = decision

    category = (spec.category_hint or "").strip() or decision.category
    modal_bbox = mask_to_bbox(modal)

    if decision.requires_extensive_completion:
        with stage("geometric"):
            try:
                boxes, responses = predict_boxes(
                    registry.chat_large, image, modal, category, config.geometric_retries,
                    config.margin_fraction, decode["geometric"], config.prompt_dir)
                record.geometric_responses = responses
                if boxes.source == "fallback":
                    record.notes.append("geometric guidance unparseable; margin fallback used")
            except BackendError as exc:
                record.notes.append(f"geometric backend failed ({type(exc).__name__}); margin fallback used")
                boxes = fallback_bbox(modal_bbox, image.shape, config.margin_fraction)
            record.boxes = boxes
        with stage("semantic"):
            try:
                description = generate_description(
                    registry.chat_large, image, modal, occ.inpaint_mask, category,
                    config.crop_margin_px, config.description_budget, decode["semantic"], config.prompt_dir)
                if description.prefix_missing:
                    record.notes.append("semantic response lacked 'Prompt:' prefix")
            except (BackendError, MalformedGuidanceError) as exc:
                record.notes.append(f"semantic guidance failed ({type(exc).__name__}); category prompt used")
                description = None
            record.prompt = select_prompt(decision, description, category)
    else:
        with stage("geometric"):
            record.boxes = fallback_bbox(modal_bbox, image.shape, config.margin_fraction)
        record.prompt = select_prompt(decision, None, category)

    with stage("inpaint"):
        record.result = multiscale_complete(
            registry.inpainter, registry.segmenter, image, modal, occ.inpaint_mask, record.boxes,
            record.prompt, config.boundary_band_px, config.scale_limit, config.gray_value)
    record.status = "incomplete" if record.result.incomplete else "ok"


BackendSource = BackendRegistry | Callable[[TargetSpec], BackendRegistry]


def run_batch(config: PipelineConfig, backends: BackendSource, specs: Sequence[TargetSpec],
              parallelism: int | None = None) -> list[RunRecord]:
    """Run many targets on a bounded thread pool; output order follows ``specs``.

    ``backends`` is either one shared registry or a callable building a
    registry per target (oracle backends are per-sample).
    """
    if not specs:
        raise InvalidInputError("run_batch needs at least one spec")

    def one(spec: TargetSpec) -> RunRecord:
        try:
            registry = backends(spec) if callable(backends) else backends
        except Exception as exc:  # noqa: BLE001
            return RunRecord(spec.sample_id, status="error", error=f"{type(exc).__name__}: {exc}")
        return run(config, registry, spec)

    workers = parallelism or config.parallelism
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, specs))
