"""Full-object extent guidance: multi-scale boxes and the mask resize they drive."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends import ChatVisionModel, ChatVisionRequest, DecodeParams
from .errors import InvalidInputError, MalformedGuidanceError
from .maskcore import (
    WHITE,
    BBox,
    as_image,
    as_mask,
    compose_on_background,
    draw_box,
    expand_bbox,
    intersect_bbox_mask,
    mask_to_bbox,
)
from .prompts import load_template

log = logging.getLogger(__name__)

SCALES = ("tight", "moderate", "coarse")

_NUM = r"\s*(-?\d+(?:\.\d+)?)\s*"
_BOX = re.compile(r"\[" + ",".join([_NUM] * 4) + r"\]")


@dataclass(frozen=True)
class MultiScaleBoxes:
    tight: BBox
    moderate: BBox
    coarse: BBox
    source: str = "mllm"
    repaired: bool = False

    def at(self, scale: str) -> BBox:
        return getattr(self, scale)

    def to_dict(self) -> dict:
        return {"tight": self.tight.to_list(), "moderate": self.moderate.to_list(),
                "coarse": self.coarse.to_list(), "source": self.source, "repaired": self.repaired}

    @classmethod
    def from_dict(cls, data: dict) -> "MultiScaleBoxes":
        return cls(*(BBox.from_list(data[s]) for s in SCALES),
                   source=data.get("source", "mllm"), repaired=data.get("repaired", False))


def format_bbox(box: Sequence[int]) -> str:
    return "[" + ", ".join(str(int(v)) for v in box) + "]"


def format_boxes(boxes: Sequence[Sequence[int]]) -> str:
    """Wire form of a three-box answer, one box per line."""
    return "\n".join(format_bbox(b) for b in boxes)


def parse_boxes(text: str) -> list[BBox]:
    """First three ``[x_min, y_min, x_max, y_max]`` groups in ``text``, in order."""
    if not isinstance(text, str):
        raise MalformedGuidanceError(f"expected text, got {type(text).__name__}")
    boxes = []
    for m in _BOX.finditer(text):
        try:
            boxes.append(BBox(*(int(round(float(g))) for g in m.groups())))
        except (ValueError, OverflowError):
            continue
        if len(boxes) == 3:
            return boxes
    raise MalformedGuidanceError(f"found {len(boxes)} bounding boxes, need 3")


def fallback_bbox(modal_bbox: BBox, shape: Sequence[int], fraction: float = 0.10) -> MultiScaleBoxes:
    box = expand_bbox(modal_bbox, fraction, shape)
    return MultiScaleBoxes(box, box, box, source="fallback")


def normalize_boxes(raw: Sequence[BBox], modal_bbox: BBox, shape: Sequence[int],
                    fraction: float = 0.10) -> MultiScaleBoxes:
    """Clamp, keep the visible part inside every box, order by area and force nesting."""
    if len(raw) != 3:
        raise InvalidInputError(f"need exactly 3 boxes, got {len(raw)}")
    modal_bbox = BBox(*modal_bbox)
    repaired = False
    boxes = []
    for box in raw:
        clamped = BBox(*box).clamp(shape)
        if not clamped.is_valid():
            clamped = expand_bbox(modal_bbox, fraction, shape)
            repaired = True
        boxes.append(clamped.union(modal_bbox))
    boxes.sort(key=lambda b: b.area)
    nested = [boxes[0]]
    for box in boxes[1:]:
        nested.append(box.union(nested[-1]))
    return MultiScaleBoxes(*nested, source="mllm", repaired=repaired)


def build_geometric_visual_prompt(image, modal, stroke: int = 3) -> np.ndarray:
    image = as_image(image)
    modal = as_mask(modal, "modal")
    if not modal.any():
        raise InvalidInputError("modal mask is empty")
    # full frame, no crop: the model needs the original image scale
    return draw_box(compose_on_background(image, modal, WHITE), mask_to_bbox(modal), stroke=stroke)


def build_geometric_prompt(image, modal, category: str,
                           decode: DecodeParams = DecodeParams(max_tokens=256, temperature=0.0),
                           prompt_dir=None) -> ChatVisionRequest:
    if not category or not category.strip():
        raise InvalidInputError("category must be non-empty")
    visual = build_geometric_visual_prompt(image, modal)
    h, w = visual.shape[:2]
    system = load_template("geometric_system", prompt_dir)
    user = load_template("geometric_user", prompt_dir).format(
        category=category.strip(), bbox=format_bbox(mask_to_bbox(modal)), size=f"[{h}, {w}]")
    return ChatVisionRequest(system.text, user, visual, decode)


def predict_boxes(chat: ChatVisionModel, image, modal, category: str, retries: int = 1,
                  fraction: float = 0.10, decode: DecodeParams = DecodeParams(max_tokens=256, temperature=0.0),
                  prompt_dir=None) -> tuple[MultiScaleBoxes, list[str]]:
    """Ask for three boxes; unparseable answers are retried, then replaced by the margin fallback.

    Returns the boxes and every raw response received.
    """
    request = build_geometric_prompt(image, modal, category, decode, prompt_dir)
    modal_bbox = mask_to_bbox(as_mask(modal))
    responses = []
    for _ in range(retries + 1):
        text = chat.chat(request)
        responses.append(text)
        try:
            raw = parse_boxes(text)
        except MalformedGuidanceError as exc:
            log.warning("geometric guidance unparseable: %s", exc)
            continue
        return normalize_boxes(raw, modal_bbox, request.image.shape, fraction), responses
    return fallback_bbox(modal_bbox, request.image.shape, fraction), responses


def resize_inpaint_mask(box: BBox, inpaint) -> np.ndarray:
    """Restrict the inpainting region to the predicted full-object box."""
    return intersect_bbox_mask(box, inpaint)
