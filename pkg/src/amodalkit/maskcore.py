"""Image and mask geometry shared by every stage.

Masks are 2D ``bool`` numpy arrays, images are ``uint8`` arrays of shape
``(H, W, 3)``. Boxes are half-open pixel rectangles: ``x_max``/``y_max``
are exclusive.
"""

from __future__ import annotations

import enum
import math
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InvalidInputError

GRAY = (128, 128, 128)
WHITE = (255, 255, 255)
RED = (255, 0, 0)


class BBox(NamedTuple):
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return max(self.width, 0) * max(self.height, 0)

    def is_valid(self) -> bool:
        return 0 <= self.x_min < self.x_max and 0 <= self.y_min < self.y_max

    def contains(self, other: "BBox") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and self.x_max >= other.x_max and self.y_max >= other.y_max)

    def union(self, other: "BBox") -> "BBox":
        return BBox(min(self.x_min, other.x_min), min(self.y_min, other.y_min),
                    max(self.x_max, other.x_max), max(self.y_max, other.y_max))

    def clamp(self, shape: Sequence[int]) -> "BBox":
        """Clip to an image of ``shape = (height, width)``; may become degenerate."""
        h, w = shape[0], shape[1]
        return BBox(min(max(self.x_min, 0), w), min(max(self.y_min, 0), h),
                    min(max(self.x_max, 0), w), min(max(self.y_max, 0), h))

    def fits(self, shape: Sequence[int]) -> bool:
        return self.is_valid() and self.x_max <= shape[1] and self.y_max <= shape[0]

    def to_list(self) -> list[int]:
        return [int(v) for v in self]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise InvalidInputError(f"bbox needs 4 values, got {len(values)}")
        return cls(*(int(round(v)) for v in values))


class Stratum(enum.IntEnum):
    """Occlusion difficulty; ordered so that ``HARD > MODERATE > EASY``."""

    EASY = 0
    MODERATE = 1
    HARD = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


# ---------------------------------------------------------------- validation

def as_mask(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2D array, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def as_image(image, name: str = "image") -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
            raise InvalidInputError(f"{name} values must lie in 0..255")
        arr = arr.astype(np.uint8)
    return arr


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) > 1:
        raise InvalidInputError(f"dimension mismatch: {sorted(shapes)}")


def _check_box_in(box: BBox, shape: Sequence[int]) -> BBox:
    box = BBox(*box)
    if not box.fits(shape):
        raise InvalidInputError(f"box {tuple(box)} does not fit image of size {tuple(shape[:2])}")
    return box


# ---------------------------------------------------------------- algebra

def union(*masks) -> np.ndarray:
    if not masks:
        raise InvalidInputError("union of zero masks has no shape")
    arrs = [as_mask(m) for m in masks]
    check_same_shape(*arrs)
    out = arrs[0].copy()
    for m in arrs[1:]:
        out |= m
    return out


def intersect(a, b) -> np.ndarray:
    a, b = as_mask(a), as_mask(b)
    check_same_shape(a, b)
    return a & b


def invert(mask) -> np.ndarray:
    return ~as_mask(mask)


def box_region(box: BBox, shape: Sequence[int]) -> np.ndarray:
    """Boolean mask of the (clamped) box over an image of ``shape``."""
    region = np.zeros(tuple(shape[:2]), dtype=bool)
    b = BBox(*box).clamp(shape)
    if b.is_valid():
        region[b.y_min:b.y_max, b.x_min:b.x_max] = True
    return region


def dilate(mask, radius: int) -> np.ndarray:
    """Dilate with a disk of ``radius`` pixels (Euclidean)."""
    mask = as_mask(mask)
    if radius <= 0:
        return mask.copy()
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    disk = xx * xx + yy * yy <= radius * radius
    return ndimage.binary_dilation(mask, structure=disk)


# ---------------------------------------------------------------- boxes

def intersect_bbox_mask(box: BBox, mask) -> np.ndarray:
    mask = as_mask(mask)
    box = _check_box_in(box, mask.shape)
    out = np.zeros_like(mask)
    out[box.y_min:box.y_max, box.x_min:box.x_max] = mask[box.y_min:box.y_max, box.x_min:box.x_max]
    return out


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def expand_bbox(box: BBox, fraction: float, shape: Sequence[int]) -> BBox:
    """Push each side outward by ``fraction`` of the matching box dimension, then clamp."""
    if fraction < 0:
        raise InvalidInputError(f"fraction must be >= 0, got {fraction}")
    box = BBox(*box)
    dx = _round_half_up(fraction * box.width)
    dy = _round_half_up(fraction * box.height)
    return BBox(box.x_min - dx, box.y_min - dy, box.x_max + dx, box.y_max + dy).clamp(shape)


def grow_bbox(box: BBox, pixels: int, shape: Sequence[int]) -> BBox:
    box = BBox(*box)
    return BBox(box.x_min - pixels, box.y_min - pixels,
                box.x_max + pixels, box.y_max + pixels).clamp(shape)


def mask_to_bbox(mask) -> BBox:
    mask = as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise InvalidInputError("mask_to_bbox: mask is empty")
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def touches_boundary(mask, box: BBox, band: int = 2) -> bool:
    """True if any mask pixel inside ``box`` lies within ``band`` pixels of one of its edges."""
    if band < 1:
        raise InvalidInputError(f"band must be >= 1, got {band}")
    mask = as_mask(mask)
    b = BBox(*box).clamp(mask.shape)
    if not b.is_valid():
        return False
    inner = mask[b.y_min:b.y_max, b.x_min:b.x_max]
    return bool(inner[:band].any() or inner[-band:].any()
                or inner[:, :band].any() or inner[:, -band:].any())


# ---------------------------------------------------------------- occlusion

def occlusion_ratio(modal, amodal) -> float:
    """Hidden fraction of the full object, ``1 - |modal| / |amodal ∪ modal|``."""
    modal, amodal = as_mask(modal, "modal"), as_mask(amodal, "amodal")
    check_same_shape(modal, amodal)
    full = int(np.count_nonzero(amodal | modal))
    if full == 0:
        raise InvalidInputError("occlusion_ratio: amodal mask is empty")
    return 1.0 - np.count_nonzero(modal) / full


def stratify(ratio: float) -> Stratum:
    if not (0.0 <= ratio <= 1.0) or math.isnan(ratio):
        raise InvalidInputError(f"occlusion ratio must lie in [0, 1], got {ratio}")
    if ratio > 0.5:
        return Stratum.HARD
    if ratio < 0.2:
        return Stratum.EASY
    return Stratum.MODERATE


def iou(a, b) -> float:
    a, b = as_mask(a), as_mask(b)
    check_same_shape(a, b)
    uni = np.count_nonzero(a | b)
    if uni == 0:
        return 1.0
    return np.count_nonzero(a & b) / uni


# ---------------------------------------------------------------- image ops

def margin_box(box: BBox, margin: int, shape: Sequence[int]) -> BBox:
    return grow_bbox(box, margin, shape)


def crop_with_margin(image, box: BBox, margin: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Crop ``box`` grown by ``margin`` on each side; returns ``(crop, (x_off, y_off))``."""
    image = np.asarray(image)
    box = _check_box_in(box, image.shape)
    region = margin_box(box, margin, image.shape)
    crop = image[region.y_min:region.y_max, region.x_min:region.x_max].copy()
    return crop, (region.x_min, region.y_min)


def compose_on_background(image, mask, color: Sequence[int] = GRAY) -> np.ndarray:
    image = as_image(image)
    mask = as_mask(mask)
    check_same_shape(image, mask)
    out = np.empty_like(image)
    out[...] = np.asarray(color, dtype=np.uint8)
    out[mask] = image[mask]
    return out


def box_outline(box: BBox, shape: Sequence[int], stroke: int = 3) -> np.ndarray:
    """Ring of width ``stroke`` just outside ``box``, clamped to the image."""
    box = BBox(*box)
    outer = box_region(grow_bbox(box, stroke, shape), shape)
    return outer & ~box_region(box, shape)


def draw_box(image, box: BBox, color: Sequence[int] = RED, stroke: int = 3) -> np.ndarray:
    image = as_image(image)
    out = image.copy()
    out[box_outline(box, image.shape, stroke)] = np.asarray(color, dtype=np.uint8)
    return out


def corner_points(shape: Sequence[int]) -> list[tuple[int, int]]:
    """The four image corners as ``(x, y)`` points."""
    h, w = shape[0], shape[1]
    return [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)]


# ---------------------------------------------------------------- I/O

def mask_to_rle(mask) -> dict:
    """Row-major run-length form ``{height, width, runs: [start, len, ...]}`` of true runs."""
    mask = as_mask(mask)
    flat = np.concatenate([[False], mask.ravel(), [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(flat))
    starts, ends = edges[0::2], edges[1::2]
    runs = np.empty(2 * len(starts), dtype=np.int64)
    runs[0::2] = starts
    runs[1::2] = ends - starts
    return {"height": int(mask.shape[0]), "width": int(mask.shape[1]), "runs": runs.tolist()}


def mask_from_rle(data: dict) -> np.ndarray:
    try:
        h, w, runs = int(data["height"]), int(data["width"]), list(data["runs"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad RLE mask: {exc}") from exc
    if h < 1 or w < 1 or len(runs) % 2:
        raise InvalidInputError("bad RLE mask: invalid dimensions or odd run list")
    flat = np.zeros(h * w, dtype=bool)
    for start, length in zip(runs[0::2], runs[1::2]):
        if start < 0 or length < 0 or start + length > h * w:
            raise InvalidInputError("bad RLE mask: run out of range")
        flat[start:start + length] = True
    return flat.reshape(h, w)


def save_mask(mask, path) -> None:
    Image.fromarray(as_mask(mask).astype(np.uint8) * 255, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def save_image(image, path) -> None:
    Image.fromarray(as_image(image), mode="RGB").save(path)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).copy()
