"""Tolerant extraction of structured data from model response text.

Real model output wraps JSON in code fences, chatty prose, and the odd
trailing comma. The repair ladder here is ordered and bounded: strip
fences, strip surrounding prose, fix trailing commas. Each applied rung is
tagged in the ParseOutcome so a trial's record shows exactly how dirty the
response was. Anything the ladder cannot fix is a typed error; the one
corrective re-ask lives in the pipeline, not here.

Stripping repairs never rewrite the JSON value itself: unless the
trailing-comma rung fired, the extracted segment is a verbatim substring
of the input.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, Optional

from .diagnostics import Diagnostic
from .errors import IncompatibleUnits, SchemaViolation, UnparseableResponse
from .model import EntityType, FlowEntry, ProcessInventory, normalize_name
from .units import KWH_TO_MJ, Unit, parse_unit

REPAIR_FENCE = "fence-strip"
REPAIR_PROSE = "prose-strip"
REPAIR_COMMA = "trailing-comma"
REPAIR_TAGS = (REPAIR_FENCE, REPAIR_PROSE, REPAIR_COMMA)


class NoneSignal:
    """The model's documented escape hatch: it answered the literal "None"."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NONE_SIGNAL"


NONE_SIGNAL = NoneSignal()


@dataclass(frozen=True)
class ParseOutcome:
    """What a parse attempt produced and what it took to get there."""

    payload: object = None
    repairs_applied: tuple[str, ...] = ()
    rejected: bool = False
    reason: str = ""
    diagnostics: tuple[Diagnostic, ...] = ()

    def __post_init__(self):
        if self.rejected and self.payload is not None:
            raise ValueError("rejected outcome cannot carry a payload")
        unknown = set(self.repairs_applied) - set(REPAIR_TAGS)
        if unknown:
            raise ValueError(f"unknown repair tags: {sorted(unknown)}")


_FENCE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", re.DOTALL)
_TRAILING_COMMA = re.compile(r",(\s*[\]\}])")
_DECODER = json.JSONDecoder()


def _try_load(text: str):
    try:
        return json.loads(text)
    except (ValueError, RecursionError):
        return None


def _scan_first(text: str, accept: Callable[[object], bool]):
    """First JSON value in text satisfying accept; returns (value, start, end)."""
    for idx, ch in enumerate(text):
        if ch not in "[{":
            continue
        try:
            value, end = _DECODER.raw_decode(text, idx)
        except (ValueError, RecursionError):
            continue
        if accept(value):
            return value, idx, end
    return None


def extract_json(raw: str, accept: Callable[[object], bool]):
    """Run the repair ladder; return (value, repair tags, extracted segment).

    Returns None when no acceptable JSON value can be recovered. The
    segment is the exact text the value was decoded from; it is a verbatim
    substring of raw unless the trailing-comma rung fired.
    """
    value = _try_load(raw)
    if value is not None and accept(value):
        return value, (), raw.strip()

    candidates: list[tuple[str, tuple[str, ...]]] = []
    m = _FENCE.search(raw)
    if m:
        outside = raw[:m.start()] + raw[m.end():]
        tags = (REPAIR_FENCE, REPAIR_PROSE) if outside.strip() else (REPAIR_FENCE,)
        candidates.append((m.group(1), tags))
    candidates.append((raw, ()))

    for text, base in candidates:
        value = _try_load(text)
        if value is not None and accept(value):
            return value, base, text.strip()
        found = _scan_first(text, accept)
        if found:
            value, start, end = found
            tags = base if REPAIR_PROSE in base else base + (REPAIR_PROSE,)
            return value, tags, text[start:end]
        fixed = _TRAILING_COMMA.sub(r"\1", text)
        if fixed == text:
            continue
        value = _try_load(fixed)
        if value is not None and accept(value):
            return value, base + (REPAIR_COMMA,), fixed.strip()
        found = _scan_first(fixed, accept)
        if found:
            value, start, end = found
            tags = base + (REPAIR_PROSE, REPAIR_COMMA)
            return value, tags, fixed[start:end]
    return None


def _is_string_array(value) -> bool:
    return isinstance(value, list) and all(isinstance(v, str) for v in value)


def _is_none_text(text: str) -> bool:
    body = text.strip().strip("`").strip()
    if body.startswith(('"', "'")) and body.endswith(('"', "'")) and len(body) >= 2:
        body = body[1:-1]
    return body.rstrip(".").strip().casefold() == "none"


def try_parse_process_list(raw: str) -> ParseOutcome:
    if not isinstance(raw, str):
        return ParseOutcome(rejected=True, reason="response is not text")
    if _is_none_text(raw):
        return ParseOutcome(payload=NONE_SIGNAL)
    m = _FENCE.search(raw)
    if m and _is_none_text(m.group(1)):
        return ParseOutcome(payload=NONE_SIGNAL, repairs_applied=(REPAIR_FENCE,))

    found = extract_json(raw, _is_string_array)
    if found is None:
        return ParseOutcome(rejected=True,
                            reason="no JSON array of strings found")
    value, tags, _segment = found
    names: list[str] = []
    seen: set[str] = set()
    for name in value:
        trimmed = name.strip()
        if not trimmed:
            continue
        key = normalize_name(trimmed)
        if key in seen:
            continue
        seen.add(key)
        names.append(trimmed)
    return ParseOutcome(payload=names, repairs_applied=tags)


def parse_process_list(raw: str):
    """First JSON array of strings in raw, or NONE_SIGNAL for a "None" reply.

    Names are trimmed and deduplicated case-insensitively, first occurrence
    wins. Raises UnparseableResponse when nothing usable survives repairs.
    """
    outcome = try_parse_process_list(raw)
    if outcome.rejected:
        raise UnparseableResponse(outcome.reason)
    return outcome.payload


# Wire keys in their canonical order. EntityType values are the wire spellings.
WIRE_KEY_ORDER = (
    EntityType.PRODUCT,
    EntityType.RAW_MATERIAL,
    EntityType.ENERGY,
    EntityType.WASTE_GAS,
    EntityType.WASTEWATER,
    EntityType.SOLID_WASTE,
)

_ENTITY_BY_KEY = {normalize_name(et.value): et for et in EntityType}
_ENTITY_BY_KEY["waste water"] = EntityType.WASTEWATER


def canonical_entity_key(key: str) -> Optional[EntityType]:
    """Map a wire key to its EntityType, tolerating case, plural, underscores."""
    if not isinstance(key, str):
        return None
    k = re.sub(r"[\s_]+", " ", key.strip()).casefold()
    if k in _ENTITY_BY_KEY:
        return _ENTITY_BY_KEY[k]
    for suffix in ("s", "es"):
        if k.endswith(suffix) and k[:-len(suffix)] in _ENTITY_BY_KEY:
            return _ENTITY_BY_KEY[k[:-len(suffix)]]
    return None


def _item_flow(item, entity: EntityType, location: str,
               diags: list[Diagnostic]) -> Optional[FlowEntry]:
    """Validate one wire item; emit diagnostics and return the flow or None."""
    if not isinstance(item, dict):
        diags.append(Diagnostic("item-not-object", location, "error",
                                f"expected an object, got {type(item).__name__}"))
        return None

    name = item.get("name")
    if not isinstance(name, str) or not name.strip():
        diags.append(Diagnostic("missing-name", location, "error",
                                "item has no usable name"))
        return None
    name = name.strip()

    quantity = item.get("quantity")
    if isinstance(quantity, bool) or not isinstance(quantity, (int, float)):
        diags.append(Diagnostic("non-numeric-quantity", location, "error",
                                f"quantity {quantity!r} is not a number"))
        return None
    quantity = float(quantity)
    if quantity != quantity or quantity in (float("inf"), float("-inf")):
        diags.append(Diagnostic("non-finite-quantity", location, "error",
                                f"quantity {quantity!r} is not finite"))
        return None
    if quantity < 0:
        diags.append(Diagnostic("negative-quantity", location, "error",
                                f"quantity {quantity} is negative"))
        return None

    unit_text = item.get("unit")
    if not isinstance(unit_text, str):
        diags.append(Diagnostic("unit-not-allowed", location, "error",
                                f"unit {unit_text!r} is not text"))
        return None
    try:
        unit = parse_unit(unit_text)
    except IncompatibleUnits:
        diags.append(Diagnostic("unit-not-allowed", location, "error",
                                f"unit {unit_text!r} is outside the allowed set"))
        return None
    # Energy canonicalization happens at the door: MJ never enters the model.
    if unit is Unit.MJ:
        quantity = quantity / KWH_TO_MJ
        unit = Unit.KWH

    source = None
    if "source" in item:
        if entity is not EntityType.RAW_MATERIAL:
            diags.append(Diagnostic("source-on-non-raw-material", location,
                                    "warning", "source ignored on "
                                    f"{entity.value!r} item"))
        else:
            wire_source = item["source"]
            if wire_source is None:
                source = None
            elif not isinstance(wire_source, str):
                diags.append(Diagnostic("source-not-text", location, "error",
                                        f"source {wire_source!r} is not text"))
                return None
            elif wire_source.strip() and wire_source.strip().casefold() != "none":
                source = wire_source.strip()
    return FlowEntry(entity_type=entity, name=name, quantity=quantity,
                     unit=unit, source=source)


def _merge_duplicates(flows: list[FlowEntry], process_name: str,
                      diags: list[Diagnostic]) -> list[FlowEntry]:
    """Sum quantities of same-name flows within an entity type.

    The merge key includes unit and source so flows that only share a name
    but differ in dimension or provenance stay separate.
    """
    merged: dict[tuple, int] = {}
    out: list[FlowEntry] = []
    for flow in flows:
        key = (flow.entity_type, normalize_name(flow.name), flow.unit,
               normalize_name(flow.source) if flow.source else None)
        if key in merged:
            idx = merged[key]
            out[idx] = out[idx].with_quantity(out[idx].quantity + flow.quantity)
            diags.append(Diagnostic(
                "duplicate-flow-merged", f"{process_name}/{flow.name}", "info",
                f"summed repeated {flow.entity_type.value!r} entry"))
        else:
            merged[key] = len(out)
            out.append(flow)
    return out


def _looks_like_inventory(value) -> bool:
    return (isinstance(value, dict)
            and any(canonical_entity_key(k) is not None for k in value))


def try_parse_inventory(raw: str, process_name: str, *,
                        ordinal: int = 0) -> ParseOutcome:
    if not isinstance(raw, str):
        return ParseOutcome(rejected=True, reason="response is not text")
    # Scan for an entity-keyed mapping first so the prose rung cannot latch
    # onto an inner flow item when the outer object needs the comma rung.
    # The any-dict fallback only recovers diagnostics for shape-wrong output.
    found = extract_json(raw, _looks_like_inventory)
    if found is None:
        found = extract_json(raw, lambda v: isinstance(v, dict))
    if found is None:
        return ParseOutcome(rejected=True, reason="no JSON object found")
    wire, tags, _segment = found

    diags: list[Diagnostic] = []
    flows: list[FlowEntry] = []
    for key, items in wire.items():
        entity = canonical_entity_key(key)
        if entity is None:
            diags.append(Diagnostic("unknown-entity-key", f"{process_name}/{key}",
                                    "error", f"wire key {key!r} is not one of "
                                    "the six entity kinds"))
            continue
        if items is None:
            continue
        if not isinstance(items, list):
            diags.append(Diagnostic("entity-value-not-list",
                                    f"{process_name}/{key}", "error",
                                    f"expected a list, got {type(items).__name__}"))
            continue
        for i, item in enumerate(items):
            flow = _item_flow(item, entity, f"{process_name}/{key}[{i}]", diags)
            if flow is not None:
                flows.append(flow)

    if not any(f.entity_type is EntityType.PRODUCT for f in flows):
        diags.append(Diagnostic("missing-product-flow", process_name, "error",
                                "inventory names no product output"))

    flows = _merge_duplicates(flows, process_name, diags)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        return ParseOutcome(rejected=True,
                            reason=f"{len(errors)} schema violation(s) in "
                                   f"{process_name!r}",
                            diagnostics=tuple(diags))
    grouped = [f for et in WIRE_KEY_ORDER for f in flows if f.entity_type is et]
    inventory = ProcessInventory(process_name=process_name, ordinal=ordinal,
                                 flows=tuple(grouped))
    return ParseOutcome(payload=inventory, repairs_applied=tags,
                        diagnostics=tuple(diags))


def parse_inventory_json(raw: str, process_name: str, *,
                         ordinal: int = 0) -> ProcessInventory:
    """Extract the first JSON object in raw as a ProcessInventory.

    Entity keys tolerate case/plural/underscore variants; quantities must be
    non-negative numbers; units must come from the closed set, with MJ
    converted to kWh on the way in; a raw-material "source" of "None" means
    no upstream link. Same-name flows within an entity kind are merged by
    summing. Raises UnparseableResponse when no object can be extracted and
    SchemaViolation (with per-item diagnostics) when the object fails the
    schema.
    """
    outcome = try_parse_inventory(raw, process_name, ordinal=ordinal)
    if outcome.rejected:
        if outcome.diagnostics:
            raise SchemaViolation(outcome.reason, diagnostics=outcome.diagnostics)
        raise UnparseableResponse(outcome.reason)
    return outcome.payload


def serialize_inventory(inventory: ProcessInventory) -> str:
    """Wire-format JSON for an inventory; inverse of parse_inventory_json.

    Flows are grouped by entity kind in canonical key order, which is also
    the order the parser emits, so parse(serialize(x)) == x for any
    parser-produced inventory. Absent raw-material sources serialize as the
    string "None" to match the wire convention.
    """
    wire: dict[str, list] = {et.value: [] for et in WIRE_KEY_ORDER}
    for flow in inventory.flows:
        item: dict = {"name": flow.name, "quantity": flow.quantity,
                      "unit": flow.unit.value}
        if flow.entity_type is EntityType.RAW_MATERIAL:
            item["source"] = flow.source if flow.source else "None"
        wire[flow.entity_type.value].append(item)
    return json.dumps(wire, ensure_ascii=False, indent=2)
