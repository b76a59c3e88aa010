"""Guidance decision: ask a small chat model whether the target needs heavy completion."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass

import numpy as np

from .backends import ChatVisionModel, ChatVisionRequest, DecodeParams
from .errors import InvalidInputError
from .maskcore import WHITE, as_image, as_mask, compose_on_background, crop_with_margin, draw_box, mask_to_bbox
from .prompts import load_template

log = logging.getLogger(__name__)

FALLBACK_CATEGORY = "object"
_FENCE = re.compile(r"```(?:json|JSON)?")


@dataclass(frozen=True)
class GuidanceDecision:
    requires_extensive_completion: bool
    category: str
    raw_response: str
    parse_fallback_used: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GuidanceDecision":
        return cls(**data)


def fallback_decision(raw: str = "") -> GuidanceDecision:
    return GuidanceDecision(True, FALLBACK_CATEGORY, raw, True)


def build_decision_visual_prompt(image, modal, crop_margin: int = 100, stroke: int = 3) -> np.ndarray:
    image = as_image(image)
    modal = as_mask(modal, "modal")
    if not modal.any():
        raise InvalidInputError("modal mask is empty")
    box = mask_to_bbox(modal)
    isolated = compose_on_background(image, modal, WHITE)
    # box is drawn before cropping so the stroke survives at the crop edge
    crop, _ = crop_with_margin(draw_box(isolated, box, stroke=stroke), box, crop_margin)
    return crop


def _first_json_object(text: str) -> dict | None:
    text = _FENCE.sub("", text)
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _yes_no(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("yes", "true"):
            return True
        if v in ("no", "false"):
            return False
    return None


def parse_decision_json(text) -> GuidanceDecision:
    """Parse the decision payload. Never raises; failures lean toward requesting guidance."""
    raw = text if isinstance(text, str) else repr(text)
    try:
        obj = _first_json_object(raw)
    except Exception:  # noqa: BLE001 - total by contract
        obj = None
    if obj is None:
        return fallback_decision(raw)

    fallback = False
    requires = _yes_no(obj.get("requires_extensive_completion"))
    if requires is None:
        requires, fallback = True, True
    category = obj.get("category")
    if isinstance(category, str) and category.strip():
        category = category.strip()
    else:
        category, fallback = FALLBACK_CATEGORY, True
    return GuidanceDecision(requires, category, raw, fallback)


def decide(chat: ChatVisionModel, image, modal, crop_margin: int = 100,
           decode: DecodeParams = DecodeParams(max_tokens=128, temperature=0.0),
           prompt_dir=None) -> GuidanceDecision:
    system = load_template("decision_system", prompt_dir)
    user = load_template("decision_user", prompt_dir)
    visual = build_decision_visual_prompt(image, modal, crop_margin)
    log.debug("decision call: templates %s, %s", system.template_id, user.template_id)
    text = chat.chat(ChatVisionRequest(system.text, user.text, visual, decode))
    return parse_decision_json(text)
