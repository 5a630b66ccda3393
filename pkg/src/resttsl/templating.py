"""Double-brace placeholder templates shared by prompts and code scaffolding."""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from .errors import TemplateError

PLACEHOLDER_RE = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")


def placeholders(template: str) -> set[str]:
    return set(PLACEHOLDER_RE.findall(template))


def check_placeholders(template: str, allowed, where: str = "template") -> None:
    unknown = placeholders(template) - set(allowed)
    if unknown:
        raise TemplateError(f"{where}: unknown placeholder(s) {', '.join(sorted(unknown))}")


def render(template: str, **values) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise TemplateError(f"no value for placeholder {{{{{name}}}}}")
        return str(values[name])

    return PLACEHOLDER_RE.sub(sub, template)


def default_template_root() -> Path:
    return Path(str(resources.files("resttsl") / "templates"))
