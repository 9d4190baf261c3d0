"""Assembly of parsed per-process inventories into one life-cycle model.

Source references are resolved here, against processes that came earlier
in generation order only, so the finished model cannot contain a forward
or self link. A source that names no earlier process is cleared rather
than failing the trial: the flow then counts as an external input, which
is the conservative reading.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Optional

from .diagnostics import Diagnostic, DiagnosticSink
from .errors import EmptyModel, SchemaViolation
from .model import (
    LifeCycleModel,
    ProcessInventory,
    ProductSpec,
    TrialProvenance,
    normalize_name,
    validate_model,
)


def build_life_cycle_model(product: ProductSpec,
                           inventories: Iterable[ProcessInventory], *,
                           provenance: Optional[TrialProvenance] = None,
                           sink: Optional[DiagnosticSink] = None) -> LifeCycleModel:
    """Link per-process inventories into a validated LifeCycleModel.

    Inventories must arrive in generation order; ordinals are rewritten to
    match that order. Raw-material sources are matched against earlier
    process names under whitespace/case normalization and rewritten to the
    canonical spelling; unresolved ones are cleared with a warning.
    """
    sink = sink if sink is not None else DiagnosticSink()
    ordered = [replace(inv, ordinal=i) for i, inv in enumerate(inventories)]
    if not ordered:
        raise EmptyModel("no process inventories to assemble")

    deduped: list[ProcessInventory] = []
    seen: set[str] = set()
    for inv in ordered:
        key = normalize_name(inv.process_name)
        if key in seen:
            sink.emit("duplicate-process-dropped", inv.process_name,
                      detail="a later inventory repeated this process name")
            continue
        seen.add(key)
        deduped.append(inv)
    ordered = [replace(inv, ordinal=i) for i, inv in enumerate(deduped)]

    resolved: list[ProcessInventory] = []
    earlier: dict[str, str] = {}
    for inv in ordered:
        flows = []
        for idx, flow in enumerate(inv.flows):
            if flow.source is None:
                flows.append(flow)
                continue
            target = earlier.get(normalize_name(flow.source))
            if target is None:
                sink.emit("unresolved-source-cleared",
                          f"{inv.process_name}/flows[{idx}]",
                          detail=f"source {flow.source!r} names no earlier "
                                 "process; treating as external input")
                flows.append(replace(flow, source=None))
            else:
                flows.append(replace(flow, source=target))
        resolved.append(replace(inv, flows=tuple(flows)))
        earlier[normalize_name(inv.process_name)] = inv.process_name

    model = LifeCycleModel(
        product=product,
        processes=tuple(resolved),
        provenance=provenance or TrialProvenance(provider_id="unknown", seed=0,
                                                 trial_index=0))
    violations = validate_model(model)
    if violations:
        raise SchemaViolation(
            f"assembled model fails validation with {len(violations)} "
            "violation(s)",
            diagnostics=tuple(
                Diagnostic(v.rule,
                           v.process if v.flow_index is None
                           else f"{v.process}/flows[{v.flow_index}]",
                           "error", v.detail)
                for v in violations))
    return model
