"""Prompt templates shipped as editable text files.

A directory passed as ``override_dir`` takes precedence over the bundled
copies, so prompts can be edited without touching the package.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


@dataclass(frozen=True)
class Template:
    name: str
    text: str

    @property
    def sha(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:12]

    @property
    def template_id(self) -> str:
        return f"{self.name}@{self.sha}"

    def format(self, **fields) -> str:
        return self.text.format(**fields)


def load_template(name: str, override_dir: str | Path | None = None) -> Template:
    if override_dir is not None:
        candidate = Path(override_dir) / f"{name}.txt"
        if candidate.is_file():
            return Template(name, candidate.read_text(encoding="utf-8").strip())
    text = resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return Template(name, text.strip())
