"""Prompt templates for process breakdown and inventory generation.

Templates are external text assets (UTF-8, YAML-style front matter naming
the template id and its required placeholders) so prompt revisions are data
changes; one asset serves every provider. Placeholder syntax is
single-brace ``{name}``; literal braces are written ``{{`` and ``}}``.

The inventory template asks for quantities in the same call, so the direct
generation path needs no separate quantity prompt. Each inventory prompt is
self-contained: the full process list is inlined rather than relying on
prior conversation turns.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import TemplateError, UnknownProcess
from .model import ProductSpec


class TemplateId(enum.Enum):
    PROCESS_BREAKDOWN = "ProcessBreakdown"
    INVENTORY_GENERATION = "InventoryGeneration"


_ASSET_FILES = {
    TemplateId.PROCESS_BREAKDOWN: "process_breakdown.txt",
    TemplateId.INVENTORY_GENERATION: "inventory_generation.txt",
}

# The canonical six-key JSON skeleton embedded into the inventory prompt.
OUTPUT_FORMAT_SKELETON = (
    '{"Product": [{"name": "A", "quantity": 1, "unit": "kg"}], '
    '"Raw material": [{"name": "B", "quantity": 1, "unit": "kg", "source": "process"}], '
    '"Energy": [{"name": "C", "quantity": 1, "unit": "kWh"}], '
    '"Wastewater": [{"name": "D", "quantity": 1, "unit": "kg"}], '
    '"Solid waste": [{"name": "E", "quantity": 1, "unit": "kg"}], '
    '"Waste gas": [{"name": "F", "quantity": 1, "unit": "kg"}]}'
)

_TOKEN = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}")
_UNRESOLVED = re.compile(r"\{[A-Za-z_][A-Za-z0-9_]*\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: TemplateId
    body: str
    required_placeholders: frozenset[str]
    checksum: str

    def __post_init__(self):
        present = {m.group(1) for m in _TOKEN.finditer(self.body) if m.group(1)}
        missing = self.required_placeholders - present
        if missing:
            raise TemplateError(
                f"{self.template_id.value}: body never uses placeholder(s) "
                f"{sorted(missing)}")

    def render(self, bindings: Mapping[str, str]) -> "RenderedPrompt":
        unbound = self.required_placeholders - set(bindings)
        if unbound:
            raise TemplateError(
                f"{self.template_id.value}: unbound placeholder(s) {sorted(unbound)}")

        def sub(match: re.Match) -> str:
            tok = match.group(0)
            if tok == "{{":
                return "{"
            if tok == "}}":
                return "}"
            name = match.group(1)
            if name not in bindings:
                raise TemplateError(
                    f"{self.template_id.value}: no binding for {{{name}}}")
            return str(bindings[name])

        text = _TOKEN.sub(sub, self.body)
        if _UNRESOLVED.search(text):
            # Reachable only if a binding value itself injects a marker.
            raise TemplateError(
                f"{self.template_id.value}: rendered text still contains a "
                f"placeholder marker")
        return RenderedPrompt(template_id=self.template_id, text=text,
                              bindings=dict(bindings))


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: TemplateId
    text: str
    bindings: Mapping[str, str]

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def body_checksum(body: str) -> str:
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def parse_template_asset(text: str, origin: str = "<asset>") -> PromptTemplate:
    """Parse a template asset: front matter between '---' lines, then body."""
    lines = text.splitlines(keepends=True)
    if not lines or lines[0].strip() != "---":
        raise TemplateError(f"{origin}: missing front matter opening '---'")
    meta: dict[str, str] = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.strip() == "---":
            body_start = i + 1
            break
        if ":" not in line:
            raise TemplateError(f"{origin}: bad front matter line {line!r}")
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    if body_start is None:
        raise TemplateError(f"{origin}: missing front matter closing '---'")
    body = "".join(lines[body_start:])
    if body.startswith("\n"):
        body = body[1:]

    try:
        template_id = TemplateId(meta["template_id"])
    except (KeyError, ValueError) as exc:
        raise TemplateError(f"{origin}: bad or missing template_id") from exc
    raw_required = meta.get("required_placeholders", "")
    required = frozenset(
        name.strip() for name in raw_required.strip("[]").split(",") if name.strip())
    if not required:
        raise TemplateError(f"{origin}: required_placeholders missing or empty")

    checksum = body_checksum(body)
    pinned = meta.get("checksum", "")
    if pinned:
        pinned = pinned.removeprefix("sha256:")
        if pinned != checksum:
            raise TemplateError(
                f"{origin}: checksum mismatch (asset body was modified; "
                f"expected {pinned}, computed {checksum})")
    return PromptTemplate(template_id=template_id, body=body,
                          required_placeholders=required, checksum=checksum)


def load_template_file(path: str | Path) -> PromptTemplate:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TemplateError(f"cannot read template {path}: {exc}") from exc
    return parse_template_asset(text, origin=str(path))


@lru_cache(maxsize=None)
def get_template(template_id: TemplateId) -> PromptTemplate:
    """The packaged default asset for ``template_id``."""
    name = _ASSET_FILES[template_id]
    text = resources.files("pcfkit.data.templates").joinpath(name).read_text("utf-8")
    template = parse_template_asset(text, origin=f"<packaged {name}>")
    if template.template_id is not template_id:
        raise TemplateError(f"packaged asset {name} declares wrong template_id")
    return template


def render_process_prompt(product: ProductSpec,
                          template: PromptTemplate | None = None) -> RenderedPrompt:
    """The process-breakdown prompt for ``product``."""
    template = template or get_template(TemplateId.PROCESS_BREAKDOWN)
    return template.render({"product_name": product.name})


def render_inventory_prompt(product: ProductSpec,
                            process_list: Sequence[str],
                            current_process: str,
                            output_format: str = OUTPUT_FORMAT_SKELETON,
                            template: PromptTemplate | None = None) -> RenderedPrompt:
    """The inventory prompt for one process of ``product``.

    ``process_list`` is inlined as a JSON list; ``current_process`` must be
    one of its members.
    """
    if not process_list:
        raise UnknownProcess("process_list is empty")
    if current_process not in process_list:
        raise UnknownProcess(
            f"{current_process!r} is not in the process list {list(process_list)!r}")
    template = template or get_template(TemplateId.INVENTORY_GENERATION)
    return template.render({
        "product_name": product.name,
        "process_list": json.dumps(list(process_list), ensure_ascii=False),
        "current_process": current_process,
        "unit": product.functional_unit.value,
        "output_format": output_format,
    })


# Prefix used for the single corrective retry after an unparseable response.
CORRECTIVE_PREFIX = (
    "Your previous answer could not be parsed. Respond again to the request "
    "below, and output only the requested JSON with no surrounding text.\n\n")


def corrective_prompt(original: RenderedPrompt) -> RenderedPrompt:
    """A retry prompt that repeats the original request verbatim."""
    return RenderedPrompt(template_id=original.template_id,
                          text=CORRECTIVE_PREFIX + original.text,
                          bindings=dict(original.bindings))
