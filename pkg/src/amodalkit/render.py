"""Side-by-side result panels: input | occluders masked | completion."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .maskcore import GRAY, draw_box, load_image, load_mask, mask_to_bbox

log = logging.getLogger(__name__)

LABEL_HEIGHT = 20
COLUMNS = ("input", "occluders masked", "completion")
PLACEHOLDER = (200, 200, 200)


def _placeholder(h: int, w: int) -> np.ndarray:
    cell = Image.new("RGB", (w, h), PLACEHOLDER)
    draw = ImageDraw.Draw(cell)
    draw.line([(0, 0), (w - 1, h - 1)], fill=(120, 120, 120), width=2)
    draw.line([(0, h - 1), (w - 1, 0)], fill=(120, 120, 120), width=2)
    return np.asarray(cell)


def _masked_view(run_dir: Path) -> np.ndarray:
    image = load_image(run_dir / "input.png")
    modal = load_mask(run_dir / "modal.png")
    inpaint = load_mask(run_dir / "inpaint_mask.png")
    out = image.copy()
    out[inpaint] = GRAY
    return draw_box(out, mask_to_bbox(modal))


def render_panel(record_path: str | Path) -> Image.Image:
    """Build the panel for one ``run_record.json``; unreadable cells become placeholders."""
    record_path = Path(record_path)
    run_dir = record_path.parent
    record = json.loads(record_path.read_text(encoding="utf-8"))
    files = record.get("files", {})

    loaders = [
        lambda: load_image(run_dir / files.get("input", "input.png")),
        lambda: _masked_view(run_dir),
        lambda: load_image(run_dir / files.get("amodal_image", "amodal.png")),
    ]
    cells: list[np.ndarray | None] = []
    for name, load in zip(COLUMNS, loaders):
        try:
            cells.append(load())
        except (OSError, ValueError) as exc:
            log.warning("%s: %s cell unavailable (%s)", record.get("sample_id"), name, exc)
            cells.append(None)

    shapes = [c.shape[:2] for c in cells if c is not None]
    h, w = shapes[0] if shapes else (128, 128)
    panel = Image.new("RGB", (w * len(COLUMNS), h + LABEL_HEIGHT), (255, 255, 255))
    draw = ImageDraw.Draw(panel)
    for i, (name, cell) in enumerate(zip(COLUMNS, cells)):
        if cell is None or cell.shape[:2] != (h, w):
            cell, name = _placeholder(h, w), f"{name} (missing)"
        panel.paste(Image.fromarray(cell), (i * w, LABEL_HEIGHT))
        draw.text((i * w + 4, 4), name, fill=(0, 0, 0))
    return panel
