"""Evaluation: stratified amodal mIoU, occluded object recognition, decision call/skip
rates and inpainting-mask accuracy, plus annotation loading."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backends import ImageClassifier
from .decision import GuidanceDecision
from .errors import AmodalError, InvalidInputError
from .geometric import resize_inpaint_mask
from .maskcore import (
    WHITE,
    BBox,
    Stratum,
    as_mask,
    check_same_shape,
    compose_on_background,
    iou,
    load_image,
    load_mask,
    mask_from_rle,
    mask_to_bbox,
    occlusion_ratio,
    stratify,
)
from .pipeline import TargetSpec

log = logging.getLogger(__name__)

ANNOTATION_FORMAT = "amodalkit.annotations/1"
STRATA = (Stratum.HARD, Stratum.MODERATE, Stratum.EASY)


@dataclass
class AnnotatedSample:
    sample_id: str
    image: np.ndarray
    modal: np.ndarray
    gt_amodal: np.ndarray | None
    category: str | None = None
    occlusion_ratio: float | None = None
    repaired: bool = False

    @property
    def spec(self) -> TargetSpec:
        return TargetSpec(self.image, self.modal, self.category, self.sample_id)

    def ratio(self) -> float:
        """Dataset ratio when provided, otherwise derived from the masks."""
        if self.occlusion_ratio is not None:
            return float(self.occlusion_ratio)
        if self.gt_amodal is None:
            raise InvalidInputError(f"{self.sample_id}: no occlusion ratio and no GT mask")
        return occlusion_ratio(self.modal, self.gt_amodal)


def _pct(x: float) -> float:
    return 100.0 * x


def _rate(hits: int, total: int) -> float | None:
    """Percentage of ``hits`` out of ``total``, absent when nothing was counted."""
    return 100.0 * hits / total if total else None


# ---------------------------------------------------------------- segmentation


@dataclass
class SegReport:
    strata: dict[str, dict] = field(default_factory=dict)  # label -> {"miou": pct | None, "count": n}
    overall: float | None = None
    count: int = 0
    skipped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SegReport":
        return cls(**data)

    def to_table(self) -> str:
        cols = [s.label for s in STRATA] + ["Overall"]
        vals = [self.strata[s.label]["miou"] for s in STRATA] + [self.overall]
        counts = [self.strata[s.label]["count"] for s in STRATA] + [self.count]
        return _table(["", *cols], [["mIoU", *(_fmt(v) for v in vals)], ["n", *map(str, counts)]])


def eval_amodal_seg(results: Iterable[tuple[AnnotatedSample, np.ndarray | None]]) -> SegReport:
    per: dict[Stratum, list[float]] = {s: [] for s in STRATA}
    skipped = 0
    for sample, pred in results:
        if sample.gt_amodal is None or pred is None:
            log.warning("%s: missing ground truth or prediction, skipped", sample.sample_id)
            skipped += 1
            continue
        per[stratify(sample.ratio())].append(iou(pred, sample.gt_amodal))
    strata = {s.label: {"miou": _pct(float(np.mean(v))) if v else None, "count": len(v)}
              for s, v in per.items()}
    every = [x for v in per.values() for x in v]
    overall = _pct(float(np.mean(every))) if every else None
    return SegReport(strata, overall, len(every), skipped)


# ---------------------------------------------------------------- recognition


@dataclass
class OorReport:
    top1: float | None = None
    top3: float | None = None
    count: int = 0
    failures: int = 0
    per_category: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OorReport":
        return cls(**data)

    def to_table(self) -> str:
        rows = [["All", _fmt(self.top1), _fmt(self.top3), str(self.count)]]
        for cat in sorted(self.per_category):
            c = self.per_category[cat]
            rows.append([cat, _fmt(c["top1"]), _fmt(c["top3"]), str(c["count"])])
        return _table(["Category", "Top 1", "Top 3", "n"], rows)


def eval_oor(results: Iterable[tuple[AnnotatedSample, np.ndarray, np.ndarray]],
             classifier: ImageClassifier, labels: Sequence[str]) -> OorReport:
    """Classify each completed object cut out onto white by its predicted amodal mask."""
    labels = list(labels)
    if not labels:
        raise InvalidInputError("label list is empty")
    hits: dict[str, list[tuple[bool, bool]]] = {}
    failures = 0
    for sample, image, mask in results:
        gt = sample.category
        if gt not in labels:
            raise InvalidInputError(f"{sample.sample_id}: category {gt!r} not in label list")
        try:
            ranked = list(classifier.classify(compose_on_background(image, mask, WHITE), labels))
        except Exception as exc:  # noqa: BLE001 - a failed call is a miss, not an abort
            log.warning("%s: classifier failed (%s), counted as miss", sample.sample_id, exc)
            failures += 1
            ranked = []
        hits.setdefault(gt, []).append((gt in ranked[:1], gt in ranked[:3]))
    every = [h for v in hits.values() for h in v]
    if not every:
        return OorReport(failures=failures)

    def rate(rows, k):
        return _rate(sum(r[k] for r in rows), len(rows))

    per = {cat: {"top1": rate(v, 0), "top3": rate(v, 1), "count": len(v)} for cat, v in hits.items()}
    return OorReport(rate(every, 0), rate(every, 1), len(every), failures, per)


# ---------------------------------------------------------------- decision module


@dataclass
class GdmReport:
    gcr: float | None = None
    gsr: float | None = None
    n_high: int = 0
    n_low: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GdmReport":
        return cls(**data)

    def to_table(self) -> str:
        return _table(["", "GCR", "GSR"], [["%", _fmt(self.gcr), _fmt(self.gsr)],
                                           ["n", str(self.n_high), str(self.n_low)]])


def eval_gdm(decisions: Iterable[tuple[AnnotatedSample | float, GuidanceDecision]],
             high: float = 0.5, low: float = 0.1) -> GdmReport:
    """Call rate over samples occluded more than ``high``; skip rate over those below ``low``."""
    called, skipped, n_high, n_low = 0, 0, 0, 0
    for sample, decision in decisions:
        ratio = sample.ratio() if isinstance(sample, AnnotatedSample) else float(sample)
        if ratio > high:
            n_high += 1
            called += decision.requires_extensive_completion
        elif ratio < low:
            n_low += 1
            skipped += not decision.requires_extensive_completion
    return GdmReport(_rate(called, n_high), _rate(skipped, n_low), n_high, n_low)


# ---------------------------------------------------------------- mask accuracy


def mask_accuracy_pair(box: BBox, inpaint_mask, gt_amodal) -> tuple[np.ndarray, np.ndarray]:
    """The resized inpainting mask from ``box`` and the one from the true object box."""
    return resize_inpaint_mask(box, inpaint_mask), resize_inpaint_mask(mask_to_bbox(gt_amodal), inpaint_mask)


def eval_mask_accuracy(pairs: Iterable[tuple[np.ndarray | None, np.ndarray | None]]) -> float | None:
    scores = []
    for ours, reference in pairs:
        if ours is None or reference is None:
            log.warning("mask accuracy: missing mask, skipped")
            continue
        scores.append(iou(ours, reference))
    return _pct(float(np.mean(scores))) if scores else None


# ---------------------------------------------------------------- loading


@dataclass
class AnnotationSet:
    samples: list[AnnotatedSample] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    repairs: int = 0


def _read_mask(value, base: Path) -> np.ndarray:
    if isinstance(value, dict):
        return mask_from_rle(value)
    if isinstance(value, str):
        return load_mask(base / value)
    raise InvalidInputError(f"mask must be a path or RLE object, got {type(value).__name__}")


def _finish(sample: AnnotatedSample, out: AnnotationSet) -> None:
    check_same_shape(sample.image, sample.modal)
    if not sample.modal.any():
        raise InvalidInputError("modal mask is empty")
    if sample.gt_amodal is not None:
        check_same_shape(sample.modal, sample.gt_amodal)
        if (sample.modal & ~sample.gt_amodal).any():
            # noisy GT: the visible part must belong to the full object
            sample.gt_amodal = sample.gt_amodal | sample.modal
            sample.repaired = True
            out.repairs += 1
    out.samples.append(sample)


def _load_generic(path: Path, out: AnnotationSet) -> None:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        records = doc["samples"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"cannot read annotation file {path}: {exc}") from exc
    base = path.parent
    for i, rec in enumerate(records):
        try:
            sid = str(rec.get("sample_id") or f"sample_{i:05d}")
            amodal = rec.get("amodal")
            ratio = rec.get("occlusion_ratio")
            sample = AnnotatedSample(
                sample_id=sid, image=load_image(base / rec["image"]), modal=_read_mask(rec["modal"], base),
                gt_amodal=None if amodal is None else _read_mask(amodal, base),
                category=rec.get("category"), occlusion_ratio=None if ratio is None else float(ratio))
            _finish(sample, out)
        except (AmodalError, OSError, KeyError, TypeError, ValueError, AttributeError) as exc:
            out.errors.append(f"record {i}: {type(exc).__name__}: {exc}")


def _sample_dirs(path: Path) -> list[Path]:
    if (path / "meta.json").is_file():
        return [path]
    return sorted(p for p in path.iterdir() if (p / "meta.json").is_file())


def _load_synth(path: Path, out: AnnotationSet) -> None:
    from .synth import load_sample

    for d in _sample_dirs(path):
        try:
            s = load_sample(d)
            _finish(AnnotatedSample(s.sample_id, s.image, s.modal, s.gt_amodal_mask, s.category,
                                    s.occlusion_ratio), out)
        except AmodalError as exc:
            out.errors.append(f"{d.name}: {exc}")


def load_annotations(path: str | Path, format: str = "generic-json") -> AnnotationSet:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"annotation path does not exist: {path}")
    out = AnnotationSet()
    if format == "generic-json":
        _load_generic(path, out)
    elif format == "synth-dir":
        _load_synth(path, out)
    else:
        raise InvalidInputError(f"unknown annotation format {format!r}")
    return out


def write_generic_annotations(samples: Sequence[AnnotatedSample], path: str | Path) -> None:
    """Write masks inline as RLE so the file is self-contained apart from images."""
    from .maskcore import mask_to_rle, save_image

    path = Path(path)
    img_dir = path.parent / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        save_image(s.image, img_dir / f"{s.sample_id}.png")
        rec = {"sample_id": s.sample_id, "image": f"images/{s.sample_id}.png",
               "modal": mask_to_rle(s.modal),
               "amodal": None if s.gt_amodal is None else mask_to_rle(s.gt_amodal)}
        if s.category is not None:
            rec["category"] = s.category
        if s.occlusion_ratio is not None:
            rec["occlusion_ratio"] = s.occlusion_ratio
        records.append(rec)
    path.write_text(json.dumps({"format": ANNOTATION_FORMAT, "samples": records}) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- text tables


def _fmt(v: float | None) -> str:
    return "-" if v is None else f"{v:.2f}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *map(line, rows)]) + "\n"
