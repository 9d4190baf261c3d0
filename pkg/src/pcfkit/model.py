"""Domain types for the cradle-to-gate life-cycle model.

All types are immutable value objects after construction and safe to share
between concurrent tasks. :class:`ProductSpec` enforces its invariants at
construction (bad product specs are caller errors); the model types are
deliberately constructible in invalid states so that :func:`validate_model`
can report rule violations as data rather than exceptions.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .units import Unit


class EntityType(enum.Enum):
    """The six inventory entity types of the wire format."""

    PRODUCT = "Product"
    RAW_MATERIAL = "Raw material"
    ENERGY = "Energy"
    WASTE_GAS = "Waste gas"
    WASTEWATER = "Wastewater"
    SOLID_WASTE = "Solid waste"

    def __str__(self) -> str:
        return self.value


WASTE_TYPES = (EntityType.WASTE_GAS, EntityType.WASTEWATER, EntityType.SOLID_WASTE)


class FlowProvenance(enum.Enum):
    """How a flow's quantity was obtained."""

    DIRECT = "direct"        # taken from the generated inventory as-is
    INDIRECT = "indirect"    # re-estimated from industry macro-statistics
    RETAINED = "retained"    # indirect estimation attempted, original kept

    def __str__(self) -> str:
        return self.value


_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Case-fold, trim, and collapse internal whitespace.

    The comparison key used wherever free-text names are matched against
    each other (source links, alias tables, instance matching).
    """
    return _WS.sub(" ", name.strip()).casefold()


@dataclass(frozen=True)
class ProductSpec:
    """The product under assessment and its functional unit."""

    name: str
    functional_unit_qty: float = 1.0
    functional_unit: Unit = Unit.KG

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name.strip():
            raise ValueError("product name must be non-empty text")
        qty = float(self.functional_unit_qty)
        if not math.isfinite(qty) or qty <= 0:
            raise ValueError("functional_unit_qty must be a positive finite real")
        object.__setattr__(self, "functional_unit_qty", qty)


@dataclass(frozen=True)
class FlowEntry:
    """One inventory line: an input, output, or waste of a process.

    ``source`` names the earlier process a raw material comes from (absent
    for everything bought from outside the gate). The wire literal "None"
    maps to absent at parse time and never appears here.
    """

    entity_type: EntityType
    name: str
    quantity: float
    unit: Unit
    source: Optional[str] = None
    provenance: FlowProvenance = FlowProvenance.DIRECT

    def __post_init__(self):
        if not isinstance(self.entity_type, EntityType):
            raise TypeError("entity_type must be an EntityType")
        if not isinstance(self.unit, Unit):
            raise TypeError("unit must be a Unit")
        object.__setattr__(self, "quantity", float(self.quantity))

    def with_quantity(self, quantity: float, unit: Unit | None = None,
                      provenance: FlowProvenance | None = None) -> "FlowEntry":
        return replace(self, quantity=float(quantity),
                       unit=self.unit if unit is None else unit,
                       provenance=self.provenance if provenance is None else provenance)


@dataclass(frozen=True)
class ProcessInventory:
    """One production stage and its flows, in generation order."""

    process_name: str
    ordinal: int
    flows: tuple[FlowEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))

    def flows_of(self, entity_type: EntityType) -> tuple[FlowEntry, ...]:
        return tuple(f for f in self.flows if f.entity_type is entity_type)


@dataclass(frozen=True)
class TrialProvenance:
    """Which provider, seed, and pipeline mode produced a model.

    Wall-clock timestamps are deliberately absent: they live in the run's
    side metadata so content-hashed artifacts stay byte-stable.
    """

    provider_id: str = ""
    seed: Optional[int] = None
    trial_index: Optional[int] = None
    mode: str = "DGA"


@dataclass(frozen=True)
class LifeCycleModel:
    """Ordered cradle-to-gate processes for one product."""

    product: ProductSpec
    processes: tuple[ProcessInventory, ...]
    provenance: TrialProvenance = field(default_factory=TrialProvenance)

    def __post_init__(self):
        object.__setattr__(self, "processes", tuple(self.processes))

    def process_names(self) -> tuple[str, ...]:
        return tuple(p.process_name for p in self.processes)


# --- validation --------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    """One invariant breach found by validate_model."""

    rule: str
    process: str
    flow_index: Optional[int] = None
    detail: str = ""


def _flow_violations(flow: FlowEntry, proc_name: str, idx: int,
                     earlier: set, later_or_self: set) -> list[Violation]:
    found = []
    if not flow.name.strip():
        found.append(Violation("empty-flow-name", proc_name, idx))
    if not math.isfinite(flow.quantity):
        found.append(Violation("non-finite-quantity", proc_name, idx,
                               detail=repr(flow.quantity)))
    elif flow.quantity < 0:
        found.append(Violation("negative-quantity", proc_name, idx,
                               detail=repr(flow.quantity)))
    if flow.source is not None:
        if flow.entity_type is not EntityType.RAW_MATERIAL:
            found.append(Violation("source-on-non-raw-material", proc_name, idx,
                                   detail=f"source={flow.source!r} on {flow.entity_type.value}"))
        key = normalize_name(flow.source)
        if key in later_or_self:
            found.append(Violation("forward-source-link", proc_name, idx,
                                   detail=f"source={flow.source!r}"))
        elif key not in earlier:
            found.append(Violation("unresolved-source", proc_name, idx,
                                   detail=f"source={flow.source!r}"))
    return found


def validate_model(model: LifeCycleModel) -> list[Violation]:
    """Check every type invariant; empty report iff the model is well-formed.

    Pure: never mutates its input, and the same model always yields the
    same report. Violations are data, not failures.
    """
    report: list[Violation] = []
    if not model.processes:
        report.append(Violation("no-processes", process=""))
        return report

    keys = [normalize_name(p.process_name) for p in model.processes]
    seen: set = set()
    for i, proc in enumerate(model.processes):
        name = proc.process_name
        key = keys[i]
        if not name.strip():
            report.append(Violation("empty-process-name", name))
        if key in seen:
            report.append(Violation("duplicate-process-name", name))
        seen.add(key)
        if proc.ordinal != i:
            report.append(Violation("ordinal-mismatch", name,
                                    detail=f"ordinal={proc.ordinal} position={i}"))
        if not proc.flows_of(EntityType.PRODUCT):
            report.append(Violation("no-product-flow", name))
        earlier = set(keys[:i])
        later_or_self = set(keys[i:])
        for idx, flow in enumerate(proc.flows):
            report.extend(_flow_violations(flow, name, idx, earlier, later_or_self))
    return report
