"""Prompt templates: UTF-8 text files with ``{{name}}`` placeholders.

The defaults ship in this directory. A user directory may override any subset
of them by file name.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Mapping

_PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")

TEMPLATE_NAMES = (
    "image_summary",
    "root_questions",
    "image_analysis",
    "answer_insight",
    "followup_questions",
    "followup_select",
    "direct_insights",
    "geval_similarity",
    "novelty_judge",
    "quality_assess",
)


class TemplateError(KeyError):
    pass


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def render(template: str, values: Mapping[str, object]) -> str:
    """Fill every placeholder; a placeholder without a value is an error."""
    missing = placeholders(template) - set(values)
    if missing:
        raise TemplateError(f"no value for placeholder(s): {', '.join(sorted(missing))}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)


class PromptSet:
    def __init__(self, templates: Mapping[str, str]):
        self.templates = dict(templates)

    @classmethod
    def load(cls, override_dir: str | Path | None = None) -> "PromptSet":
        base = resources.files(__name__)
        templates = {name: base.joinpath(f"{name}.txt").read_text(encoding="utf-8") for name in TEMPLATE_NAMES}
        if override_dir is not None:
            for path in sorted(Path(override_dir).glob("*.txt")):
                templates[path.stem] = path.read_text(encoding="utf-8")
        return cls(templates)

    def render(self, name: str, **values: object) -> str:
        try:
            template = self.templates[name]
        except KeyError:
            raise TemplateError(f"unknown template {name!r}") from None
        return render(template, values)
