"""Find the segments in front of the target and turn them into the inpainting region."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends import OCCLUDES, OcclusionOrderPredictor, Segmenter
from .errors import InvalidInputError
from .maskcore import as_image, as_mask, check_same_shape, dilate

ADJACENCY_RADIUS = 5
INSIDE_MODAL_THRESHOLD = 0.8


@dataclass
class OccluderSet:
    masks: list[np.ndarray]
    inpaint_mask: np.ndarray

    @property
    def empty(self) -> bool:
        return not self.masks


def build_inpaint_mask(occluders: Sequence[np.ndarray], modal) -> np.ndarray:
    """Union of the occluder masks, minus the visible target pixels."""
    modal = as_mask(modal, "modal")
    out = np.zeros_like(modal)
    for occ in occluders:
        occ = as_mask(occ, "occluder")
        check_same_shape(occ, modal)
        out |= occ
    out &= ~modal
    return out


def candidate_segments(segments: Sequence[np.ndarray], modal: np.ndarray,
                       radius: int = ADJACENCY_RADIUS,
                       inside_threshold: float = INSIDE_MODAL_THRESHOLD) -> list[np.ndarray]:
    ring = dilate(modal, radius)
    out = []
    for seg in segments:
        seg = as_mask(seg, "segment")
        check_same_shape(seg, modal)
        area = np.count_nonzero(seg)
        if area == 0 or not (seg & ring).any():
            continue
        # segments sitting mostly on the target are parts of it, not occluders
        if np.count_nonzero(seg & modal) / area > inside_threshold:
            continue
        out.append(seg)
    return out


def detect_occluders(image, modal, segmenter: Segmenter, order_predictor: OcclusionOrderPredictor,
                     radius: int = ADJACENCY_RADIUS,
                     inside_threshold: float = INSIDE_MODAL_THRESHOLD) -> OccluderSet:
    image = as_image(image)
    modal = as_mask(modal, "modal")
    check_same_shape(image, modal)
    if not modal.any():
        raise InvalidInputError("modal mask is empty")

    candidates = candidate_segments(segmenter.segment_all(image), modal, radius, inside_threshold)
    if not candidates:
        return OccluderSet([], np.zeros_like(modal))

    # index 0 is the target itself
    relations = np.asarray(order_predictor.predict(image, [modal, *candidates]))
    n = len(candidates) + 1
    if relations.shape != (n, n):
        raise InvalidInputError(f"order predictor returned shape {relations.shape}, expected {(n, n)}")
    kept = [c for j, c in enumerate(candidates, start=1) if relations[j, 0] == OCCLUDES]
    return OccluderSet(kept, build_inpaint_mask(kept, modal))
