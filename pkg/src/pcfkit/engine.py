"""Footprint arithmetic: activity data times emission factor, summed up.

Each non-product flow becomes one contribution line: quantity converted to
the factor's reference unit, multiplied into per-gas emissions, aggregated
to kg CO2-eq via the GWP table. Exclusions are data, not errors, and each
carries its reason:

  intermediate    the flow is sourced from an earlier process inside the
                  gate, whose own inputs already carry the burden
  unmatched       no factor cleared the similarity threshold
  unit-mismatch   no conversion exists between flow and factor units

One special case: a waste-gas output literally named as a greenhouse gas
("CO2", "methane") needs no factor; its mass converts through the GWP
table directly. Summation order is fixed (process ordinal, then flow
index), so totals are bit-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .diagnostics import Diagnostic
from .errors import EmptyModel
from .factors import EmissionFactor, MatchResult
from .gwp import GwpTable
from .iea import TransportDraw
from .model import (
    EntityType,
    FlowEntry,
    LifeCycleModel,
    TrialProvenance,
    normalize_name,
)
from .units import Unit, convert_quantity, convertible

EXCLUDED_INTERMEDIATE = "intermediate"
EXCLUDED_UNMATCHED = "unmatched"
EXCLUDED_UNIT_MISMATCH = "unit-mismatch"

# Below this coverage a result is flagged rather than trusted quietly.
LOW_CONFIDENCE_COVERAGE = 0.5

TRANSPORT_FACTOR_ID = "transport-default"


@dataclass(frozen=True)
class FlowContribution:
    """One flow's share of the footprint, or why it has none."""

    process_name: str
    flow_name: str
    quantity: float
    unit: Unit
    factor_id: Optional[str] = None
    per_gas_kg: tuple[tuple[str, float], ...] = ()
    co2e_kg: float = 0.0
    excluded_reason: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.per_gas_kg, Mapping):
            object.__setattr__(self, "per_gas_kg",
                               tuple(sorted(self.per_gas_kg.items())))
        else:
            object.__setattr__(self, "per_gas_kg", tuple(self.per_gas_kg))
        if self.co2e_kg < 0:
            raise ValueError("co2e_kg must be non-negative")
        if self.excluded_reason is not None:
            if self.excluded_reason not in (EXCLUDED_INTERMEDIATE,
                                            EXCLUDED_UNMATCHED,
                                            EXCLUDED_UNIT_MISMATCH):
                raise ValueError(
                    f"unknown exclusion reason {self.excluded_reason!r}")
            if self.co2e_kg != 0.0:
                raise ValueError("an excluded flow cannot carry emissions")

    @property
    def included(self) -> bool:
        return self.excluded_reason is None

    def to_record(self) -> dict:
        rec = {
            "process": self.process_name,
            "flow": self.flow_name,
            "quantity": self.quantity,
            "unit": self.unit.value,
            "factor_id": self.factor_id,
            "per_gas_kg": {gas: kg for gas, kg in self.per_gas_kg},
            "co2e_kg": self.co2e_kg,
        }
        if self.excluded_reason is not None:
            rec["excluded_reason"] = self.excluded_reason
        return rec


@dataclass(frozen=True)
class PcfResult:
    product_name: str
    functional_unit: str
    total_co2e_kg: float
    per_process: tuple[tuple[str, float], ...]
    contributions: tuple[FlowContribution, ...]
    coverage: float
    provenance: TrialProvenance
    low_confidence: bool = False
    diagnostics: tuple[Diagnostic, ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.coverage <= 1.0):
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")
        included = math.fsum(c.co2e_kg for c in self.contributions
                             if c.included)
        subtotal = math.fsum(v for _, v in self.per_process)
        scale = max(abs(self.total_co2e_kg), 1.0)
        if abs(self.total_co2e_kg - included) > 1e-9 * scale or \
                abs(self.total_co2e_kg - subtotal) > 1e-9 * scale:
            raise ValueError("total, process subtotals, and contribution sum "
                             "disagree")

    def to_record(self) -> dict:
        return {
            "product": self.product_name,
            "functional_unit": self.functional_unit,
            "total_co2e_kg": self.total_co2e_kg,
            "per_process": {name: value for name, value in self.per_process},
            "coverage": self.coverage,
            "low_confidence": self.low_confidence,
            "contributions": [c.to_record() for c in self.contributions],
            "provenance": {
                "provider_id": self.provenance.provider_id,
                "seed": self.provenance.seed,
                "trial_index": self.provenance.trial_index,
                "mode": self.provenance.mode,
            },
            "diagnostics": [d.to_record() for d in self.diagnostics],
        }


def _excluded(flow: FlowEntry, process_name: str, reason: str,
              factor_id: Optional[str] = None) -> FlowContribution:
    return FlowContribution(process_name=process_name, flow_name=flow.name,
                            quantity=flow.quantity, unit=flow.unit,
                            factor_id=factor_id, excluded_reason=reason)


def flow_emissions(flow: FlowEntry, match: Optional[MatchResult],
                   factor: Optional[EmissionFactor], gwp: GwpTable, *,
                   process_name: str = "") -> FlowContribution:
    """Quantity times factor, expanded per gas and aggregated to CO2-eq.

    An unmatched flow or a flow whose unit cannot reach the factor's
    reference unit yields an excluded contribution, never an error.
    """
    if match is None or not match.matched or factor is None:
        return _excluded(flow, process_name, EXCLUDED_UNMATCHED)
    if not convertible(flow.unit, factor.reference_unit):
        return _excluded(flow, process_name, EXCLUDED_UNIT_MISMATCH,
                         factor_id=factor.factor_id)
    amount = convert_quantity(flow.quantity, flow.unit, factor.reference_unit)
    per_gas = {gas: amount * intensity
               for gas, intensity in factor.gas_intensities}
    if factor.aggregate:
        co2e = math.fsum(per_gas.values())
    else:
        co2e = math.fsum(kg * gwp[gas] for gas, kg in sorted(per_gas.items()))
    return FlowContribution(process_name=process_name, flow_name=flow.name,
                            quantity=flow.quantity, unit=flow.unit,
                            factor_id=factor.factor_id, per_gas_kg=per_gas,
                            co2e_kg=co2e)


def direct_gas_contribution(flow: FlowEntry, gwp: GwpTable, *,
                            process_name: str = "") -> Optional[FlowContribution]:
    """Waste gas named as a greenhouse gas: convert by GWP, no factor needed.

    Returns None when the flow name is not a recognized gas. A recognized
    gas reported in a non-mass unit is excluded as unit-mismatched.
    """
    gas = gwp.resolve_gas(flow.name)
    if gas is None:
        return None
    if flow.unit is not Unit.KG:
        return _excluded(flow, process_name, EXCLUDED_UNIT_MISMATCH)
    co2e = flow.quantity * gwp[gas]
    return FlowContribution(process_name=process_name, flow_name=flow.name,
                            quantity=flow.quantity, unit=flow.unit,
                            factor_id=None, per_gas_kg={gas: flow.quantity},
                            co2e_kg=co2e)


def total_pcf(model: LifeCycleModel, gwp: GwpTable, *,
              matches: Mapping[str, MatchResult],
              factors_by_id: Mapping[str, EmissionFactor],
              transport: Iterable[TransportDraw] = ()) -> PcfResult:
    """Sum per-process emissions over the whole model.

    ``matches`` is keyed by normalized flow name. Product output flows are
    not activities and produce no contribution line; raw materials sourced
    from an earlier process are excluded as intermediates so nothing inside
    the gate is counted twice. Transport draws that carry emissions are
    appended as synthetic contribution lines on their owning process.

    Inventories are generated per functional unit, so no rescaling happens
    here; a final output quantity that disagrees with the declared
    functional unit is reported as a diagnostic, not corrected.
    """
    if not model.processes:
        raise EmptyModel("model has no processes")

    diagnostics: list[Diagnostic] = []
    contributions: list[FlowContribution] = []
    for proc in sorted(model.processes, key=lambda p: p.ordinal):
        for flow in proc.flows:
            if flow.entity_type is EntityType.PRODUCT:
                continue
            if flow.entity_type is EntityType.RAW_MATERIAL and \
                    flow.source is not None:
                contributions.append(_excluded(flow, proc.process_name,
                                               EXCLUDED_INTERMEDIATE))
                continue
            if flow.entity_type is EntityType.WASTE_GAS:
                direct = direct_gas_contribution(flow, gwp,
                                                 process_name=proc.process_name)
                if direct is not None:
                    contributions.append(direct)
                    continue
            match = matches.get(normalize_name(flow.name))
            factor = None
            if match is not None and match.factor_id is not None:
                factor = factors_by_id.get(match.factor_id)
            contributions.append(flow_emissions(flow, match, factor, gwp,
                                                process_name=proc.process_name))

    for draw in transport:
        if draw.co2e_kg is None:
            continue
        contributions.append(FlowContribution(
            process_name=draw.process_name,
            flow_name=f"{draw.flow_name} (transport)",
            quantity=draw.mass_kg if draw.mass_kg is not None else 0.0,
            unit=Unit.KG, factor_id=TRANSPORT_FACTOR_ID,
            per_gas_kg={"CO2e": draw.co2e_kg}, co2e_kg=draw.co2e_kg))

    per_process: list[tuple[str, float]] = []
    for proc in sorted(model.processes, key=lambda p: p.ordinal):
        subtotal = math.fsum(c.co2e_kg for c in contributions
                             if c.process_name == proc.process_name and
                             c.included)
        per_process.append((proc.process_name, subtotal))
    total = math.fsum(v for _, v in per_process)

    countable = [c for c in contributions
                 if c.factor_id != TRANSPORT_FACTOR_ID]
    coverage = (sum(1 for c in countable if c.included) / len(countable)
                if countable else 0.0)

    final = sorted(model.processes, key=lambda p: p.ordinal)[-1]
    outputs = [f for f in final.flows if f.entity_type is EntityType.PRODUCT]
    declared = model.product.functional_unit_qty
    if outputs and (outputs[0].unit is not model.product.functional_unit or
                    abs(outputs[0].quantity - declared) > 1e-9 * max(declared, 1.0)):
        diagnostics.append(Diagnostic(
            "output-not-normalized", final.process_name, "warning",
            f"final output is {outputs[0].quantity} {outputs[0].unit.value}, "
            f"declared functional unit is {declared} "
            f"{model.product.functional_unit.value}"))

    return PcfResult(
        product_name=model.product.name,
        functional_unit=(f"{model.product.functional_unit_qty} "
                         f"{model.product.functional_unit.value}"),
        total_co2e_kg=total,
        per_process=tuple(per_process),
        contributions=tuple(contributions),
        coverage=coverage,
        provenance=model.provenance,
        low_confidence=coverage < LOW_CONFIDENCE_COVERAGE,
        diagnostics=tuple(diagnostics))
