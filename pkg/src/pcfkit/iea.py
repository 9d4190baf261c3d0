"""Indirect activity-data estimation from industry input-output statistics.

Instead of trusting generated quantities, this path rebuilds them from
macro data: material amounts from inter-industry purchase coefficients,
energy and waste from industry totals, transport distances drawn from the
regional production distribution. Per-unit formulas share one shape,
amount · v_i / denominator, where v_i converts one physical unit of the
producing industry's output into currency.

Estimation never fails a trial: a flow that cannot be matched or computed
keeps its generated quantity and is flagged as retained, with a diagnostic
saying why.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .diagnostics import Diagnostic, DiagnosticSink
from .embeddings import EmbeddingService, cosine_similarity
from .errors import (
    ConfigInvalid,
    DivisionByZeroProduction,
    DivisionByZeroUnitValue,
    EmbeddingUnavailable,
    FileUnreadable,
    MissingDistance,
    NoIndustryMatch,
)
from .model import (
    EntityType,
    FlowProvenance,
    LifeCycleModel,
    WASTE_TYPES,
    normalize_name,
)
from .units import Unit, convert_quantity, convertible, parse_unit

DEFAULT_INDUSTRY_THRESHOLD = 0.5

# Relative slack for the per-industry regional sum against the total value.
REGIONAL_SUM_RTOL = 1e-6


@dataclass(frozen=True)
class IotTable:
    """Immutable industry statistics bundle.

    value_coeff[(i, j)] is currency of j-inputs per currency of i-output;
    unit_value[i] is currency per physical unit; total_value[i] is total
    industry output in currency. Energy and waste totals carry their own
    units; regional_values[(i, region)] splits total_value geographically;
    distances[(from, to)] is km.
    """

    industries: tuple[str, ...]
    value_coeff: Mapping[tuple[str, str], float] = field(default_factory=dict)
    unit_value: Mapping[str, float] = field(default_factory=dict)
    total_value: Mapping[str, float] = field(default_factory=dict)
    energy_totals: Mapping[tuple[str, str], tuple[float, Unit]] = field(default_factory=dict)
    waste_totals: Mapping[tuple[str, str], tuple[float, Unit]] = field(default_factory=dict)
    regional_values: Mapping[tuple[str, str], float] = field(default_factory=dict)
    distances: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "industries", tuple(self.industries))
        known = set(self.industries)
        for (i, j), v in self.value_coeff.items():
            if i not in known or j not in known:
                raise ConfigInvalid(f"coefficient ({i!r}, {j!r}) references an "
                                    "unknown industry")
            _require_non_negative(v, f"v_ij[{i},{j}]")
        for name, mapping in (("v_i", self.unit_value), ("V_i", self.total_value)):
            for i, v in mapping.items():
                if i not in known:
                    raise ConfigInvalid(f"{name}[{i!r}]: unknown industry")
                _require_non_negative(v, f"{name}[{i}]")
        for (i, _t), (amount, _u) in {**self.energy_totals,
                                      **self.waste_totals}.items():
            if i not in known:
                raise ConfigInvalid(f"totals row references unknown industry {i!r}")
            _require_non_negative(amount, f"totals[{i}]")
        sums: dict[str, list[float]] = {}
        for (i, region), v in self.regional_values.items():
            if i not in known:
                raise ConfigInvalid(f"regional row references unknown industry {i!r}")
            _require_non_negative(v, f"V_in[{i},{region}]")
            sums.setdefault(i, []).append(v)
        for i, values in sums.items():
            total = self.total_value.get(i)
            if total is None:
                raise ConfigInvalid(f"regional rows for {i!r} but no V_i")
            s = math.fsum(values)
            if total == 0:
                if s != 0:
                    raise ConfigInvalid(f"regional sum for {i!r} is {s}, V_i is 0")
            elif abs(s - total) / total > REGIONAL_SUM_RTOL:
                raise ConfigInvalid(
                    f"regional values for {i!r} sum to {s}, expected {total}")
        for (_a, _b), km in self.distances.items():
            _require_non_negative(km, "distance")

    def regions_of(self, industry: str) -> list[tuple[str, float]]:
        """Regions producing in this industry, sorted by region id."""
        return sorted((region, v) for (i, region), v in
                      self.regional_values.items() if i == industry)


def _require_non_negative(value: float, what: str) -> None:
    if not math.isfinite(value) or value < 0:
        raise ConfigInvalid(f"{what} must be a non-negative finite real, "
                            f"got {value!r}")


def raw_material_amount(v_ij: float, v_i: float, v_j: float) -> float:
    """Physical units of material j consumed per physical unit of i's output."""
    if v_j <= 0:
        raise DivisionByZeroUnitValue(
            f"unit value of the supplying industry must be positive, got {v_j}")
    return v_ij * v_i / v_j


def check_material_balance(m_row: Iterable[float]) -> float:
    """Distance of a full material row from the 100%-efficiency ideal of 1."""
    return abs(math.fsum(m_row) - 1.0)


def energy_per_unit(energy_total: float, v_i: float, total_value: float) -> float:
    """Energy of one type consumed per physical unit of the industry's output."""
    if total_value <= 0:
        raise DivisionByZeroProduction(
            f"industry total value must be positive, got {total_value}")
    return energy_total * v_i / total_value


def waste_per_unit(waste_total: float, v_i: float, total_value: float) -> float:
    """Waste of one type generated per physical unit of the industry's output."""
    if total_value <= 0:
        raise DivisionByZeroProduction(
            f"industry total value must be positive, got {total_value}")
    return waste_total * v_i / total_value


@dataclass(frozen=True)
class IndustryMatch:
    activity_name: str
    industry_id: str
    similarity: float
    via: str  # "alias-table" or "semantic"

    def __post_init__(self):
        if self.via not in ("alias-table", "semantic"):
            raise ConfigInvalid(f"unknown match route {self.via!r}")


def _read_csv(path: str | Path, columns: Sequence[str], what: str):
    import csv
    path = Path(path)
    if not path.is_file():
        raise FileUnreadable(f"{what} {path} does not exist")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or set(columns) - set(reader.fieldnames):
            raise FileUnreadable(f"{what} {path}: expected columns "
                                 f"{','.join(columns)}")
        rows = list(reader)
    return rows


def _as_float(raw, what: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise FileUnreadable(f"{what}: not a number: {raw!r}") from None


def load_iot(coefficients: str | Path, facts: str | Path, *,
             regional: Optional[str | Path] = None,
             energy: Optional[str | Path] = None,
             waste: Optional[str | Path] = None,
             distances: Optional[str | Path] = None) -> IotTable:
    """Assemble an IotTable from delimited files.

    facts carries ``industry,unit_value,total_value`` and defines the
    industry classification; every other file may only reference those
    industries. coefficients carries ``industry_i,industry_j,value_coeff``.
    energy and waste share the shape ``industry,type,amount,unit``;
    regional is ``industry,region,value``; distances is
    ``from_region,to_region,km``.
    """
    unit_value: dict[str, float] = {}
    total_value: dict[str, float] = {}
    industries: list[str] = []
    for row in _read_csv(facts, ("industry", "unit_value", "total_value"),
                         "industry facts"):
        industry = (row.get("industry") or "").strip()
        if not industry:
            continue
        if industry in unit_value:
            raise FileUnreadable(f"industry facts: duplicate row "
                                 f"for {industry!r}")
        industries.append(industry)
        unit_value[industry] = _as_float(row["unit_value"],
                                         f"unit_value[{industry}]")
        total_value[industry] = _as_float(row["total_value"],
                                          f"total_value[{industry}]")

    value_coeff: dict[tuple[str, str], float] = {}
    for row in _read_csv(coefficients,
                         ("industry_i", "industry_j", "value_coeff"),
                         "coefficient table"):
        i = (row.get("industry_i") or "").strip()
        j = (row.get("industry_j") or "").strip()
        if not i or not j:
            continue
        value_coeff[(i, j)] = _as_float(row["value_coeff"],
                                        f"value_coeff[{i},{j}]")

    def totals(path, what):
        out: dict[tuple[str, str], tuple[float, Unit]] = {}
        for row in _read_csv(path, ("industry", "type", "amount", "unit"),
                             what):
            i = (row.get("industry") or "").strip()
            kind = (row.get("type") or "").strip()
            if not i or not kind:
                continue
            amount = _as_float(row["amount"], f"{what}[{i},{kind}]")
            unit = parse_unit((row.get("unit") or "").strip())
            out[(i, normalize_name(kind))] = (amount, unit)
        return out

    energy_totals = totals(energy, "energy totals") if energy else {}
    waste_totals = totals(waste, "waste totals") if waste else {}

    regional_values: dict[tuple[str, str], float] = {}
    if regional:
        for row in _read_csv(regional, ("industry", "region", "value"),
                             "regional values"):
            i = (row.get("industry") or "").strip()
            region = (row.get("region") or "").strip()
            if not i or not region:
                continue
            regional_values[(i, region)] = _as_float(
                row["value"], f"regional[{i},{region}]")

    distance_map: dict[tuple[str, str], float] = {}
    if distances:
        for row in _read_csv(distances, ("from_region", "to_region", "km"),
                             "distance table"):
            src = (row.get("from_region") or "").strip()
            dst = (row.get("to_region") or "").strip()
            if not src or not dst:
                continue
            distance_map[(src, dst)] = _as_float(row["km"],
                                                 f"distance[{src},{dst}]")

    return IotTable(industries=tuple(industries), value_coeff=value_coeff,
                    unit_value=unit_value, total_value=total_value,
                    energy_totals=energy_totals, waste_totals=waste_totals,
                    regional_values=regional_values, distances=distance_map)


def load_alias_table(path: str | Path) -> dict[str, str]:
    """CSV ``activity_name,industry_id`` to a normalized-name lookup."""
    import csv
    path = Path(path)
    if not path.is_file():
        raise FileUnreadable(f"alias table {path} does not exist")
    table: dict[str, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or \
                {"activity_name", "industry_id"} - set(reader.fieldnames):
            raise FileUnreadable(f"alias table {path}: expected columns "
                                 "activity_name,industry_id")
        for row in reader:
            name = (row.get("activity_name") or "").strip()
            industry = (row.get("industry_id") or "").strip()
            if name and industry:
                table[normalize_name(name)] = industry
    return table


def match_industry(activity_name: str, classification: Sequence[str],
                   alias_table: Optional[Mapping[str, str]] = None, *,
                   embeddings: Optional[EmbeddingService] = None,
                   threshold: float = DEFAULT_INDUSTRY_THRESHOLD) -> IndustryMatch:
    """Resolve an activity name to an industry id.

    An exact alias-table hit wins outright; otherwise the nearest industry
    label by embedding cosine is taken when it clears the threshold.
    """
    if not classification:
        raise ConfigInvalid("industry classification is empty")
    if alias_table:
        hit = alias_table.get(normalize_name(activity_name))
        if hit is not None:
            if hit not in classification:
                raise ConfigInvalid(
                    f"alias table maps {activity_name!r} to {hit!r}, which is "
                    "not in the classification")
            return IndustryMatch(activity_name=activity_name, industry_id=hit,
                                 similarity=1.0, via="alias-table")
    if embeddings is None:
        raise NoIndustryMatch(
            f"{activity_name!r}: no alias entry and no embedding provider")
    try:
        query = embeddings.embed(activity_name)
        scored = [(cosine_similarity(query, embeddings.embed(label)), label)
                  for label in classification]
    except EmbeddingUnavailable as exc:
        raise NoIndustryMatch(f"{activity_name!r}: {exc}") from exc
    best_sim = max(s for s, _ in scored)
    best_label = min(label for s, label in scored if s == best_sim)
    if best_sim < threshold:
        raise NoIndustryMatch(
            f"{activity_name!r}: best industry similarity {best_sim:.3f} "
            f"is below {threshold}")
    return IndustryMatch(activity_name=activity_name, industry_id=best_label,
                         similarity=float(best_sim), via="semantic")


def sample_transport_distance(industry: str, destination: str, iot: IotTable,
                              rng: random.Random) -> float:
    """Draw a shipping distance: source region by production share, then km."""
    region = _sample_source_region(industry, destination, iot, rng)
    return iot.distances[(region, destination)]


def _sample_source_region(industry: str, destination: str, iot: IotTable,
                          rng: random.Random) -> str:
    regions = iot.regions_of(industry)
    total = math.fsum(v for _, v in regions)
    if total <= 0:
        raise DivisionByZeroProduction(
            f"industry {industry!r} has no regional production mass")
    for region, v in regions:
        if v > 0 and (region, destination) not in iot.distances:
            raise MissingDistance(
                f"no distance from {region!r} to {destination!r} although the "
                "source is reachable with positive probability")
    u = rng.random() * total
    cumulative = 0.0
    for region, v in regions:
        cumulative += v
        if u < cumulative and v > 0:
            return region
    # Floating-point edge: u landed on the top boundary.
    return next(region for region, v in reversed(regions) if v > 0)


@dataclass(frozen=True)
class TransportDraw:
    """One sampled shipment of an estimated raw-material flow."""

    process_name: str
    flow_name: str
    industry_id: str
    source_region: str
    distance_km: float
    mass_kg: Optional[float] = None
    co2e_kg: Optional[float] = None


@dataclass(frozen=True)
class EstimateResult:
    """Re-quantified model plus everything worth reporting about how."""

    model: LifeCycleModel
    balance_residuals: tuple[tuple[str, float], ...] = ()
    transport: tuple[TransportDraw, ...] = ()
    diagnostics: tuple[Diagnostic, ...] = ()


def _match_or_none(name, classification, alias_table, embeddings, threshold):
    try:
        return match_industry(name, classification, alias_table,
                              embeddings=embeddings, threshold=threshold)
    except NoIndustryMatch:
        return None


def estimate_activity_data(model: LifeCycleModel, iot: IotTable, *,
                           alias_table: Optional[Mapping[str, str]] = None,
                           embeddings: Optional[EmbeddingService] = None,
                           industry_threshold: float = DEFAULT_INDUSTRY_THRESHOLD,
                           rng: Optional[random.Random] = None,
                           destination_region: Optional[str] = None,
                           transport_factor_kg_km: Optional[float] = None,
                           balance_tolerance: float = 0.05) -> EstimateResult:
    """Replace generated quantities with statistics-derived ones.

    Per-unit coefficients are scaled by each process's product quantity, so
    results stay normalized to the functional unit. Flow names, entity
    kinds, and process structure are untouched; every flow ends up flagged
    direct (product outputs), indirect (estimated), or retained (kept as
    generated, with a diagnostic).

    Transport distances are drawn for estimated raw materials when a
    destination region is configured; they turn into emissions only when a
    kgCO2e per kg-km factor is also configured, and are otherwise reported
    but excluded.
    """
    sink = DiagnosticSink()
    rng = rng if rng is not None else random.Random(0)
    residuals: dict[str, float] = {}
    draws: list[TransportDraw] = []

    def retain(flow, location, why):
        sink.emit("quantity-retained", location, detail=why)
        return replace(flow, provenance=FlowProvenance.RETAINED)

    new_processes = []
    for proc in model.processes:
        product_flows = [f for f in proc.flows
                         if f.entity_type is EntityType.PRODUCT]
        output_qty = product_flows[0].quantity if product_flows else 0.0
        industry = None
        if product_flows:
            m = _match_or_none(product_flows[0].name, iot.industries,
                               alias_table, embeddings, industry_threshold)
            if m is None:
                sink.emit("process-industry-unmatched", proc.process_name,
                          detail=f"output {product_flows[0].name!r} matched "
                                 "no industry; process kept as generated")
            else:
                industry = m.industry_id
        v_i = iot.unit_value.get(industry) if industry else None
        total_i = iot.total_value.get(industry) if industry else None
        if industry and (v_i is None or total_i is None):
            sink.emit("industry-facts-missing", proc.process_name,
                      detail=f"no v_i/V_i for {industry!r}")
            industry = None

        if industry and industry not in residuals:
            residuals[industry] = _industry_balance_residual(industry, iot)
            if residuals[industry] > balance_tolerance:
                sink.emit("material-balance-residual", industry,
                          detail=f"|sum(m_ij) - 1| = {residuals[industry]:.4f} "
                                 f"exceeds {balance_tolerance}")

        raw_groups: dict[str, list[int]] = {}
        raw_industry: dict[int, str] = {}
        if industry:
            for idx, flow in enumerate(proc.flows):
                if flow.entity_type is not EntityType.RAW_MATERIAL or \
                        flow.source is not None:
                    continue
                m = _match_or_none(flow.name, iot.industries, alias_table,
                                   embeddings, industry_threshold)
                if m is not None:
                    raw_groups.setdefault(m.industry_id, []).append(idx)
                    raw_industry[idx] = m.industry_id

        new_flows = list(proc.flows)
        for idx, flow in enumerate(proc.flows):
            location = f"{proc.process_name}/flows[{idx}]"
            if flow.entity_type is EntityType.PRODUCT:
                new_flows[idx] = replace(flow, provenance=FlowProvenance.DIRECT)
                continue
            if flow.entity_type is EntityType.RAW_MATERIAL and \
                    flow.source is not None:
                # In-gate intermediate: an internal transfer, not a purchase.
                # Estimating it (or shipping it) would smuggle emissions past
                # the double-count guard downstream.
                continue
            if industry is None:
                new_flows[idx] = retain(flow, location,
                                        "process industry unresolved")
                continue

            if flow.entity_type is EntityType.RAW_MATERIAL:
                j = raw_industry.get(idx)
                if j is None:
                    new_flows[idx] = retain(flow, location,
                                            f"{flow.name!r} matched no industry")
                    continue
                v_j = iot.unit_value.get(j)
                if v_j is None:
                    new_flows[idx] = retain(flow, location,
                                            f"no unit value for {j!r}")
                    continue
                try:
                    m_ij = raw_material_amount(
                        iot.value_coeff.get((industry, j), 0.0), v_i, v_j)
                except DivisionByZeroUnitValue as exc:
                    new_flows[idx] = retain(flow, location, str(exc))
                    continue
                share = _dga_share(idx, raw_groups[j], proc.flows)
                qty = m_ij * share * output_qty
                new_flows[idx] = replace(flow, quantity=qty,
                                         provenance=FlowProvenance.INDIRECT)
                _maybe_draw_transport(draws, sink, proc.process_name, flow, qty,
                                      j, iot, rng, destination_region,
                                      transport_factor_kg_km)
                continue

            if flow.entity_type is EntityType.ENERGY:
                table, per_unit = iot.energy_totals, energy_per_unit
            else:
                table, per_unit = iot.waste_totals, waste_per_unit
            entry = table.get((industry, normalize_name(flow.name)))
            if entry is None:
                new_flows[idx] = retain(flow, location,
                                        f"no industry total for {flow.name!r}")
                continue
            amount, table_unit = entry
            if not convertible(table_unit, flow.unit):
                new_flows[idx] = retain(
                    flow, location,
                    f"total in {table_unit.value} cannot express "
                    f"{flow.unit.value}")
                continue
            try:
                per_out = per_unit(amount, v_i, total_i)
            except DivisionByZeroProduction as exc:
                new_flows[idx] = retain(flow, location, str(exc))
                continue
            qty = convert_quantity(per_out * output_qty, table_unit, flow.unit)
            new_flows[idx] = replace(flow, quantity=qty,
                                     provenance=FlowProvenance.INDIRECT)

        new_processes.append(replace(proc, flows=tuple(new_flows)))

    new_model = replace(model, processes=tuple(new_processes))
    return EstimateResult(model=new_model,
                          balance_residuals=tuple(sorted(residuals.items())),
                          transport=tuple(draws),
                          diagnostics=tuple(sink))


def _industry_balance_residual(industry: str, iot: IotTable) -> float:
    row = []
    v_i = iot.unit_value.get(industry, 0.0)
    for j in iot.industries:
        v_ij = iot.value_coeff.get((industry, j))
        if v_ij is None:
            continue
        v_j = iot.unit_value.get(j)
        if v_j is None or v_j <= 0:
            continue
        row.append(raw_material_amount(v_ij, v_i, v_j))
    return check_material_balance(row)


def _dga_share(idx: int, group: list[int], flows) -> float:
    """Split one industry-pair amount across the flows that matched it."""
    if len(group) == 1:
        return 1.0
    total = math.fsum(flows[k].quantity for k in group)
    if total <= 0:
        return 1.0 / len(group)
    return flows[idx].quantity / total


def _maybe_draw_transport(draws, sink, process_name, flow, qty, industry, iot,
                          rng, destination, factor) -> None:
    if destination is None or not iot.distances:
        return
    try:
        region = _sample_source_region(industry, destination, iot, rng)
    except (DivisionByZeroProduction, MissingDistance) as exc:
        sink.emit("transport-skipped", f"{process_name}/{flow.name}",
                  detail=str(exc))
        return
    km = iot.distances[(region, destination)]
    mass = qty if flow.unit is Unit.KG else None
    if mass is None:
        sink.emit("transport-mass-unknown", f"{process_name}/{flow.name}",
                  detail=f"flow unit {flow.unit.value} is not a mass; "
                         "distance reported without emissions")
    co2e = None
    if factor is not None and mass is not None:
        co2e = factor * mass * km
    draws.append(TransportDraw(process_name=process_name, flow_name=flow.name,
                               industry_id=industry, source_region=region,
                               distance_km=km, mass_kg=mass, co2e_kg=co2e))
