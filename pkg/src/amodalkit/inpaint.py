"""Gray-canvas inpainting, amodal mask extraction and the multi-scale expansion loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .backends import Inpainter, Segmenter
from .errors import BackendError, CompletionFailedError, InvalidInputError
from .geometric import SCALES, MultiScaleBoxes, resize_inpaint_mask
from .maskcore import GRAY, as_image, as_mask, check_same_shape, compose_on_background, corner_points, touches_boundary
from .semantic import PromptSelection

log = logging.getLogger(__name__)


@dataclass
class ScaleRecord:
    scale: str
    box: list[int]
    inpaint_area: int
    touched_boundary: bool | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CompletionResult:
    amodal_image: np.ndarray
    amodal_mask: np.ndarray
    prompt: PromptSelection
    chosen_scale: str
    incomplete: bool = False
    trace: list[ScaleRecord] = field(default_factory=list)

    def summary(self) -> dict:
        return {"chosen_scale": self.chosen_scale, "incomplete": self.incomplete,
                "amodal_area": int(np.count_nonzero(self.amodal_mask)),
                "trace": [r.to_dict() for r in self.trace]}


def complete_once(inpainter: Inpainter, segmenter: Segmenter, image, modal, inpaint_mask,
                  prompt: str, gray_value: int = GRAY[0]) -> tuple[np.ndarray, np.ndarray]:
    """Inpaint the target on a gray canvas, then take the complement of the background."""
    image = as_image(image)
    modal = as_mask(modal, "modal")
    inpaint_mask = as_mask(inpaint_mask, "inpaint_mask")
    check_same_shape(image, modal, inpaint_mask)
    if (inpaint_mask & modal).any():
        raise InvalidInputError("inpaint mask overlaps the visible target")

    canvas = compose_on_background(image, modal, (gray_value,) * 3)
    if inpaint_mask.any():
        canvas = as_image(inpainter.inpaint(canvas, inpaint_mask, prompt))
    background = as_mask(segmenter.segment_region(canvas, points=corner_points(canvas.shape)))
    check_same_shape(canvas, background)
    return canvas, ~background | modal


def multiscale_complete(inpainter: Inpainter, segmenter: Segmenter, image, modal, inpaint_mask,
                        boxes: MultiScaleBoxes, prompt: PromptSelection, band: int = 2,
                        scale_limit: int = 3, gray_value: int = GRAY[0]) -> CompletionResult:
    """Try boxes smallest first; keep the first completion that stays clear of its box edge.

    Fallback boxes are a single scale. If every scale touches its box the
    largest result is returned with ``incomplete`` set.
    """
    inpaint_mask = as_mask(inpaint_mask, "inpaint_mask")
    if boxes.source == "fallback":
        scales = [("fallback", boxes.coarse)]
    else:
        scales = [(s, boxes.at(s)) for s in SCALES[:max(1, scale_limit)]]

    trace: list[ScaleRecord] = []
    last = None
    for scale, box in scales:
        region = resize_inpaint_mask(box, inpaint_mask)
        record = ScaleRecord(scale, box.to_list(), int(np.count_nonzero(region)))
        trace.append(record)
        try:
            out_image, out_mask = complete_once(inpainter, segmenter, image, modal, region,
                                                prompt.text, gray_value)
        except BackendError as exc:
            log.warning("scale %s failed: %s", scale, exc)
            record.error = f"{type(exc).__name__}: {exc}"
            continue
        record.touched_boundary = touches_boundary(out_mask, box, band)
        last = (scale, out_image, out_mask)
        if not record.touched_boundary:
            return CompletionResult(out_image, out_mask, prompt, scale, False, trace)

    if last is None:
        exc = CompletionFailedError(f"all {len(scales)} scales failed")
        exc.trace = trace
        raise exc
    scale, out_image, out_mask = last
    return CompletionResult(out_image, out_mask, prompt, scale, True, trace)
