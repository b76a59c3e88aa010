"""Text guidance for the hidden part, and the rule choosing the final inpainting prompt."""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .backends import ChatVisionModel, ChatVisionRequest, DecodeParams
from .decision import GuidanceDecision
from .errors import InvalidInputError, MalformedGuidanceError
from .maskcore import GRAY, as_image, as_mask, check_same_shape, crop_with_margin, draw_box, mask_to_bbox
from .prompts import load_template

log = logging.getLogger(__name__)

DESCRIPTION_BUDGET = 300
_PREFIX = re.compile(r"^\s*[\"'‘“]?\s*prompt\s*:\s*", re.IGNORECASE)


@dataclass(frozen=True)
class PromptSelection:
    text: str
    kind: str  # "long" or "category"
    raw_response: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PromptSelection":
        return cls(**data)


class Description(NamedTuple):
    text: str
    raw_response: str
    prefix_missing: bool


def build_semantic_visual_prompt(image, modal, inpaint, crop_margin: int = 100,
                                 mask_color=GRAY, stroke: int = 3) -> np.ndarray:
    """Occluders painted flat, red box around the visible part, cropped around it."""
    image = as_image(image)
    modal = as_mask(modal, "modal")
    inpaint = as_mask(inpaint, "inpaint")
    check_same_shape(image, modal, inpaint)
    if not modal.any():
        raise InvalidInputError("modal mask is empty")
    box = mask_to_bbox(modal)
    masked = image.copy()
    masked[inpaint] = np.asarray(mask_color, dtype=np.uint8)
    crop, _ = crop_with_margin(draw_box(masked, box, stroke=stroke), box, crop_margin)
    return crop


def truncate_words(text: str, budget: int = DESCRIPTION_BUDGET) -> str:
    if len(text) <= budget:
        return text
    cut = text[:budget + 1]
    space = cut.rfind(" ")
    return (cut[:space] if space > 0 else text[:budget]).rstrip(" ,;")


def parse_description(text: str, budget: int = DESCRIPTION_BUDGET) -> str:
    return _parse(text, budget)[0]


def _parse(text: str, budget: int) -> tuple[str, bool]:
    if not isinstance(text, str):
        raise MalformedGuidanceError(f"expected text, got {type(text).__name__}")
    m = _PREFIX.match(text)
    body = text[m.end():] if m else text
    body = " ".join(body.split()).strip("\"'’” ")
    if not body:
        raise MalformedGuidanceError("description is empty")
    return truncate_words(body, budget), m is None


def generate_description(chat: ChatVisionModel, image, modal, inpaint, category: str,
                         crop_margin: int = 100, budget: int = DESCRIPTION_BUDGET,
                         decode: DecodeParams = DecodeParams(max_tokens=160, temperature=0.7),
                         prompt_dir=None) -> Description:
    system = load_template("semantic_system", prompt_dir)
    user = load_template("semantic_user", prompt_dir).format(category=category)
    visual = build_semantic_visual_prompt(image, modal, inpaint, crop_margin)
    raw = chat.chat(ChatVisionRequest(system.text, user, visual, decode))
    text, missing = _parse(raw, budget)
    if missing:
        log.warning("semantic guidance response lacks the 'Prompt:' prefix; using it as-is")
    return Description(text, raw, missing)


def select_prompt(decision: GuidanceDecision, long_desc: Description | str | None,
                  category: str | None = None) -> PromptSelection:
    """Long description when guidance ran and produced one, else the category."""
    category = (category or decision.category or "").strip() or "object"
    if decision.requires_extensive_completion and long_desc:
        if isinstance(long_desc, Description):
            return PromptSelection(long_desc.text, "long", long_desc.raw_response)
        return PromptSelection(long_desc, "long")
    return PromptSelection(category, "category")
