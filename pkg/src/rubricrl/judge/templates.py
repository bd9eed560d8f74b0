"""Prompt template store: plain-text files with {slot} placeholders.

File names are the template id. Rendering substitutes every placeholder
and fails loudly on a missing slot or a leftover placeholder, so a typo in
a template never reaches the judge.
"""

from __future__ import annotations

import re
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

from ..errors import MissingSlot, UnknownTemplate

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class TemplateId(str, Enum):
    RUBRIC_CONSTRUCTION = "rubric_construction"
    RUBRIC_SCORING = "rubric_scoring"
    HOLISTIC_SCORING = "holistic_scoring"
    FAITHFULNESS_CHECK = "faithfulness_check"


# Templates whose output feeds a reward; rendered deterministically.
SCORING_TEMPLATES = frozenset(
    {TemplateId.RUBRIC_SCORING, TemplateId.HOLISTIC_SCORING, TemplateId.FAITHFULNESS_CHECK}
)


class TemplateStore:
    """Loads templates from a directory, one .txt file per template id."""

    def __init__(self, templates: Mapping[str, str]):
        self._templates = dict(templates)

    @classmethod
    def from_directory(cls, path: str | Path) -> "TemplateStore":
        templates = {}
        for file in sorted(Path(path).glob("*.txt")):
            templates[file.stem] = file.read_text(encoding="utf-8")
        return cls(templates)

    @classmethod
    def default(cls) -> "TemplateStore":
        root = resources.files("rubricrl.judge") / "templates"
        templates = {}
        for file in sorted(root.iterdir()):  # type: ignore[union-attr]
            if file.name.endswith(".txt"):
                templates[file.name[: -len(".txt")]] = file.read_text(encoding="utf-8")
        return cls(templates)

    def required_slots(self, template_id: TemplateId | str) -> frozenset[str]:
        key = template_id.value if isinstance(template_id, TemplateId) else template_id
        if key not in self._templates:
            raise UnknownTemplate(f"no template named {key!r}")
        return frozenset(_PLACEHOLDER.findall(self._templates[key]))

    def render(self, template_id: TemplateId | str, slots: Mapping[str, str]) -> str:
        key = template_id.value if isinstance(template_id, TemplateId) else template_id
        if key not in self._templates:
            raise UnknownTemplate(f"no template named {key!r}")
        text = self._templates[key]

        def substitute(match: re.Match[str]) -> str:
            name = match.group(1)
            if name not in slots:
                raise MissingSlot(f"template {key!r} requires slot {name!r}")
            return str(slots[name])

        # Single-pass substitution: every placeholder in the template either
        # resolves or raises, and braces inside slot VALUES stay literal.
        return _PLACEHOLDER.sub(substitute, text)
