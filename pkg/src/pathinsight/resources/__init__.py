"""Bundled sample data: a three-case toy dataset wired to offline mock endpoints."""

from __future__ import annotations

import shutil
from importlib import resources
from pathlib import Path

TOY_FILES = ("manifest.json", "config.json", "search.json", "case-001.png", "case-002.png", "case-003.png")


def export_toy(dest: str | Path) -> Path:
    """Copy the toy dataset, search fixture and mock config into ``dest``."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    src = resources.files(__name__).joinpath("toy")
    for name in TOY_FILES:
        with resources.as_file(src.joinpath(name)) as path:
            shutil.copyfile(path, dest / name)
    return dest
