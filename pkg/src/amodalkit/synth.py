"""Synthetic occluded scenes with exact ground truth, and oracle backends over them.

Randomness comes from numpy's PCG64 bit generator seeded with the scene
seed, so a ``(spec, seed)`` pair reproduces the same scene on any platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .backends import OCCLUDES, OCCLUDED_BY, BackendRegistry, ScriptedChatBackend, ScriptEntry
from .errors import GenerationFailedError, InvalidInputError
from .geometric import format_boxes
from .maskcore import (
    BBox,
    as_image,
    as_mask,
    dilate,
    expand_bbox,
    grow_bbox,
    iou,
    load_image,
    load_mask,
    mask_to_bbox,
    occlusion_ratio,
    save_image,
    save_mask,
)

SHAPES = ("rect", "ellipse", "sprite")

# body colour and stripe colour per category; none of them is the gray canvas value
PALETTE: dict[str, tuple[tuple[int, int, int], tuple[int, int, int]]] = {
    "red": ((205, 40, 45), (150, 20, 30)),
    "green": ((45, 165, 70), (20, 110, 40)),
    "blue": ((45, 75, 205), (25, 40, 140)),
    "yellow": ((230, 205, 45), (180, 150, 20)),
    "purple": ((135, 55, 170), (90, 30, 120)),
    "orange": ((235, 125, 35), (180, 85, 15)),
}
OCCLUDER_COLORS = ((70, 70, 70), (230, 230, 210), (95, 140, 150), (160, 110, 90), (60, 90, 40))

BORDER_MARGIN = 16
ADJACENCY_RADIUS = 5
MAX_ATTEMPTS = 4000


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "rect"
    n_occluders: int = 1
    occlusion_range: tuple[float, float] = (0.0, 0.9)
    height: int = 160
    width: int = 192

    def __post_init__(self):
        lo, hi = self.occlusion_range
        if self.shape not in SHAPES:
            raise InvalidInputError(f"unknown shape {self.shape!r}")
        if not (0.0 <= lo <= hi < 1.0):
            raise InvalidInputError(f"occlusion range must lie within [0, 1), got {self.occlusion_range}")
        if self.n_occluders < 0:
            raise InvalidInputError("n_occluders must be >= 0")
        if min(self.height, self.width) < 4 * BORDER_MARGIN:
            raise InvalidInputError("scene too small")


@dataclass
class SyntheticSample:
    image: np.ndarray
    gt_amodal_image: np.ndarray
    gt_amodal_mask: np.ndarray
    modal: np.ndarray
    occluder_masks: list[np.ndarray]  # back to front, full extent
    occlusion_ratio: float
    seed: int
    category: str
    shape: str = "rect"
    sample_id: str = ""

    @property
    def visible_occluders(self) -> list[np.ndarray]:
        out = []
        for i, occ in enumerate(self.occluder_masks):
            vis = occ.copy()
            for front in self.occluder_masks[i + 1:]:
                vis &= ~front
            out.append(vis)
        return out

    @property
    def background(self) -> np.ndarray:
        covered = self.gt_amodal_mask.copy()
        for occ in self.occluder_masks:
            covered |= occ
        return ~covered

    @property
    def gt_bbox(self) -> BBox:
        return mask_to_bbox(self.gt_amodal_mask)

    def meta(self) -> dict:
        return {"sample_id": self.sample_id, "seed": self.seed, "shape": self.shape,
                "category": self.category, "occlusion_ratio": self.occlusion_ratio,
                "n_occluders": len(self.occluder_masks),
                "height": int(self.image.shape[0]), "width": int(self.image.shape[1])}


def suite_spec(seed: int, occlusion_range=(0.3, 0.8), max_occluders: int = 3) -> SceneSpec:
    """Spec used for numbered suites: shapes and occluder counts cycle with the seed."""
    return SceneSpec(shape=SHAPES[seed % len(SHAPES)], n_occluders=1 + seed % max_occluders,
                     occlusion_range=tuple(occlusion_range))


# ---------------------------------------------------------------- rendering


def _ellipse(shape, box: BBox) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy = (box.x_min + box.x_max - 1) / 2, (box.y_min + box.y_max - 1) / 2
    rx, ry = box.width / 2, box.height / 2
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _rect(shape, box: BBox) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    b = box.clamp(shape)
    out[b.y_min:b.y_max, b.x_min:b.x_max] = True
    return out


def _object_mask(kind: str, shape, box: BBox) -> np.ndarray:
    if kind == "rect":
        return _rect(shape, box)
    if kind == "ellipse":
        return _ellipse(shape, box)
    # sprite: ellipse body in the lower part plus a block "head" on top
    body = BBox(box.x_min, box.y_min + box.height * 3 // 10, box.x_max, box.y_max)
    head_w = max(box.width * 2 // 5, 4)
    hx = box.x_min + (box.width - head_w) // 2
    head = BBox(hx, box.y_min, hx + head_w, box.y_min + box.height // 2)
    return _ellipse(shape, body) | _rect(shape, head)


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    top = rng.integers(150, 230, size=3)
    bottom = rng.integers(60, 150, size=3)
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    img = top * (1 - t) + bottom * t + rng.integers(-6, 7, size=(h, w, 3))
    return np.broadcast_to(img, (h, w, 3)).clip(0, 255).astype(np.uint8)


def _paint_object(canvas: np.ndarray, mask: np.ndarray, category: str, stripe: int) -> np.ndarray:
    body, band = PALETTE[category]
    out = canvas.copy()
    rows = (np.arange(mask.shape[0]) // stripe) % 2 == 1
    out[mask] = body
    out[mask & rows[:, None]] = band
    return out


def _random_occluder(rng: np.random.Generator, shape, obj: BBox) -> np.ndarray:
    ow = int(obj.width * rng.uniform(0.3, 1.1))
    oh = int(obj.height * rng.uniform(0.3, 1.1))
    cx = int(rng.uniform(obj.x_min - 0.15 * obj.width, obj.x_max + 0.15 * obj.width))
    cy = int(rng.uniform(obj.y_min - 0.15 * obj.height, obj.y_max + 0.15 * obj.height))
    box = BBox(cx - ow // 2, cy - oh // 2, cx - ow // 2 + max(ow, 3), cy - oh // 2 + max(oh, 3))
    if rng.random() < 0.5:
        return _rect(shape, box)
    return _ellipse(shape, box)


def _well_posed(amodal: np.ndarray, modal: np.ndarray, occluders: list[np.ndarray]) -> bool:
    """Every occluder overlaps the target, and every visible occluder piece hiding
    target pixels is adjacent to the visible target (so detection can find it)."""
    if not modal.any():
        return False
    ring = dilate(modal, ADJACENCY_RADIUS)
    hidden = amodal & ~modal
    for i, occ in enumerate(occluders):
        if not (occ & amodal).any():
            return False
        vis = occ.copy()
        for front in occluders[i + 1:]:
            vis &= ~front
        if (vis & hidden).any() and not (vis & ring).any():
            return False
    return True


def gen_scene(spec: SceneSpec, seed: int, sample_id: str | None = None) -> SyntheticSample:
    rng = np.random.Generator(np.random.PCG64(seed))
    h, w = spec.height, spec.width
    shape = (h, w)
    lo, hi = spec.occlusion_range

    category = list(PALETTE)[int(rng.integers(len(PALETTE)))]
    ow = int(w * rng.uniform(0.3, 0.5))
    oh = int(h * rng.uniform(0.3, 0.5))
    x0 = int(rng.integers(BORDER_MARGIN, w - BORDER_MARGIN - ow + 1))
    y0 = int(rng.integers(BORDER_MARGIN, h - BORDER_MARGIN - oh + 1))
    obj_box = BBox(x0, y0, x0 + ow, y0 + oh)
    amodal = _object_mask(spec.shape, shape, obj_box)
    stripe = int(rng.integers(4, 9))

    background = _background(rng, h, w)
    gt_image = _paint_object(background, amodal, category, stripe)

    for _ in range(MAX_ATTEMPTS):
        occluders = [_random_occluder(rng, shape, obj_box) for _ in range(spec.n_occluders)]
        covered = np.zeros(shape, dtype=bool)
        for occ in occluders:
            covered |= occ
        modal = amodal & ~covered
        if not modal.any():
            continue
        ratio = occlusion_ratio(modal, amodal)
        if lo <= ratio <= hi and _well_posed(amodal, modal, occluders):
            break
    else:
        raise GenerationFailedError(
            f"no scene with occlusion in [{lo}, {hi}] after {MAX_ATTEMPTS} attempts (seed {seed})")

    image = gt_image.copy()
    for occ in occluders:
        image[occ] = OCCLUDER_COLORS[int(rng.integers(len(OCCLUDER_COLORS)))]

    return SyntheticSample(image=image, gt_amodal_image=gt_image, gt_amodal_mask=amodal, modal=modal,
                           occluder_masks=occluders, occlusion_ratio=ratio, seed=seed, category=category,
                           shape=spec.shape, sample_id=sample_id or f"synth_{seed:05d}")


# ---------------------------------------------------------------- oracles


class OracleSegmenter:
    """``segment_all`` returns the true visible segments; ``segment_region``
    flood-fills the exact seed colour (4-connected) from each seed point."""

    def __init__(self, sample: SyntheticSample):
        self.sample = sample

    def segment_all(self, image) -> list[np.ndarray]:
        s = self.sample
        segments = [s.modal.copy()]
        segments += [v for v in s.visible_occluders if v.any()]
        if s.background.any():
            segments.append(s.background)
        return segments

    def segment_region(self, image, points=None, box=None) -> np.ndarray:
        image = as_image(image)
        if points is None and box is not None:
            b = BBox(*box)
            points = [(b.x_min, b.y_min), (b.x_max - 1, b.y_min), (b.x_min, b.y_max - 1), (b.x_max - 1, b.y_max - 1)]
        out = np.zeros(image.shape[:2], dtype=bool)
        for x, y in points or []:
            same = (image == image[y, x]).all(axis=-1)
            labels, _ = ndimage.label(same)
            out |= labels == labels[y, x]
        return out


class OracleOrderPredictor:
    """Matches each mask to a ground-truth layer and reports true depth order."""

    def __init__(self, sample: SyntheticSample):
        s = sample
        # (depth, visible mask, full mask); target is the back-most layer
        self.layers = [(0, s.modal, s.gt_amodal_mask)]
        self.layers += [(i + 1, vis, full) for i, (vis, full)
                        in enumerate(zip(s.visible_occluders, s.occluder_masks))]

    def _match(self, mask: np.ndarray) -> int | None:
        scores = [iou(mask, vis) for _, vis, _ in self.layers]
        best = int(np.argmax(scores))
        return best if scores[best] >= 0.5 else None

    def predict(self, image, masks) -> np.ndarray:
        ids = [self._match(as_mask(m)) for m in masks]
        n = len(masks)
        rel = np.zeros((n, n), dtype=np.int8)
        for a in range(n):
            for b in range(n):
                la, lb = ids[a], ids[b]
                if la is None or lb is None or la == lb:
                    continue
                da, _, fa = self.layers[la]
                db, _, fb = self.layers[lb]
                if (fa & fb).any():
                    rel[a, b] = OCCLUDES if da > db else OCCLUDED_BY
        return rel


class OracleInpainter:
    """Paints the true object wherever the region covers it; leaves everything else."""

    def __init__(self, sample: SyntheticSample):
        self.sample = sample

    def inpaint(self, image, region, prompt) -> np.ndarray:
        out = as_image(image).copy()
        paint = as_mask(region) & self.sample.gt_amodal_mask
        out[paint] = self.sample.gt_amodal_image[paint]
        return out


class PaletteClassifier:
    """Ranks colour labels by how many pixels carry that palette colour."""

    def classify(self, image, labels: Sequence[str]) -> list[str]:
        image = as_image(image)
        scores = []
        for label in labels:
            count = 0
            for color in PALETTE.get(label, ()):
                count += int((image == np.asarray(color, dtype=np.uint8)).all(axis=-1).sum())
            scores.append(count)
        order = sorted(range(len(labels)), key=lambda i: (-scores[i], i))
        return [labels[i] for i in order]


def oracle_backends(sample: SyntheticSample) -> BackendRegistry:
    """Segmenter, order predictor and inpainter with ground-truth access; chat roles unbound."""
    return BackendRegistry(segmenter=OracleSegmenter(sample), order_predictor=OracleOrderPredictor(sample),
                           inpainter=OracleInpainter(sample), classifier=PaletteClassifier())


def oracle_boxes(sample: SyntheticSample, mode: str = "correct", pad: int = 4) -> list[BBox]:
    """Three boxes around the true object.

    ``correct``: every box clears the object by at least ``pad`` pixels.
    ``clip-tight``: the tight box is the true box shrunk by ``pad`` pixels,
    the others clear it.
    """
    shape = sample.image.shape
    gt = sample.gt_bbox
    clear = grow_bbox(gt, pad, shape)
    moderate = expand_bbox(gt, 0.15, shape).union(clear)
    coarse = expand_bbox(gt, 0.35, shape).union(moderate)
    if mode == "correct":
        return [clear, moderate, coarse]
    if mode == "clip-tight":
        shrunk = BBox(gt.x_min + pad, gt.y_min + pad, gt.x_max - pad, gt.y_max - pad)
        return [shrunk if shrunk.is_valid() else gt, clear, coarse]
    raise InvalidInputError(f"unknown oracle box mode {mode!r}")


def scripted_chat_for(sample: SyntheticSample, requires: bool | None = None, boxes: str = "correct",
                      description: str | None = None, decision_threshold: float = 0.1) -> ScriptedChatBackend:
    """Chat double answering the decision, geometric and semantic prompts for ``sample``.

    By default guidance is requested when the true occlusion ratio exceeds
    ``decision_threshold``.
    """
    if requires is None:
        requires = sample.occlusion_ratio > decision_threshold
    decision = json.dumps({"requires_extensive_completion": "yes" if requires else "no",
                           "category": sample.category})
    desc = description or f"Prompt: the rest of a striped {sample.category} {sample.shape}, same stripes and colour"
    return ScriptedChatBackend([
        ScriptEntry(lambda r: "requires_extensive_completion" in r.system_prompt, decision, repeat=True),
        ScriptEntry(lambda r: "three bounding boxes" in r.system_prompt,
                    format_boxes(oracle_boxes(sample, boxes)), repeat=True),
        ScriptEntry(lambda r: "Prompt:" in r.system_prompt, desc, repeat=True),
    ], model_id=f"oracle-chat/{sample.sample_id}")


# ---------------------------------------------------------------- directory layout


def save_sample(sample: SyntheticSample, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_image(sample.image, d / "image.png")
    save_mask(sample.modal, d / "modal.png")
    save_mask(sample.gt_amodal_mask, d / "amodal.png")
    save_image(sample.gt_amodal_image, d / "amodal_image.png")
    for i, occ in enumerate(sample.occluder_masks):
        save_mask(occ, d / f"occluder_{i}.png")
    (d / "meta.json").write_text(json.dumps(sample.meta(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def load_sample(directory: str | Path) -> SyntheticSample:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        occluders = [load_mask(d / f"occluder_{i}.png") for i in range(int(meta["n_occluders"]))]
        return SyntheticSample(
            image=load_image(d / "image.png"), gt_amodal_image=load_image(d / "amodal_image.png"),
            gt_amodal_mask=load_mask(d / "amodal.png"), modal=load_mask(d / "modal.png"),
            occluder_masks=occluders, occlusion_ratio=float(meta["occlusion_ratio"]), seed=int(meta["seed"]),
            category=meta["category"], shape=meta.get("shape", "rect"), sample_id=meta["sample_id"])
    except (OSError, KeyError, ValueError) as exc:
        raise InvalidInputError(f"not a synthetic sample directory: {d} ({exc})") from exc


def write_suite(out_dir: str | Path, n: int, seed: int = 0, occlusion_range=(0.3, 0.8),
                max_occluders: int = 3) -> list[Path]:
    """Generate ``n`` scenes with seeds ``seed .. seed+n-1`` into ``out_dir/<sample_id>/``."""
    out = Path(out_dir)
    paths = []
    for s in range(seed, seed + n):
        sample = gen_scene(suite_spec(s, occlusion_range, max_occluders), s)
        paths.append(save_sample(sample, out / sample.sample_id))
    return paths
