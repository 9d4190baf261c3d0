"""One end-to-end trial: breakdown, inventories, estimation, matching, total.

A trial owns a transcript recorder and a derived seed, and every failure
is re-raised as a StageError naming the stage that broke. Parse failures
get exactly one corrective re-ask through the gateway before they fail
the trial; the inventory-builder's repair ladder has already done its
work by then.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .assembly import build_life_cycle_model
from .diagnostics import Diagnostic, DiagnosticSink
from .errors import (
    EmbeddingUnavailable,
    ModelDeclined,
    PcfKitError,
    SchemaViolation,
    StageError,
    UnparseableResponse,
)
from .factors import FactorIndex, MatchResult, match_factor
from .gateway import CompletionParams, CompletionRequest, Gateway, Provider
from .gwp import GwpTable
from .iea import EstimateResult, IotTable, estimate_activity_data
from .metrics import Prf
from .model import (
    EntityType,
    LifeCycleModel,
    ProductSpec,
    TrialProvenance,
    normalize_name,
)
from .parsing import (
    NONE_SIGNAL,
    ParseOutcome,
    try_parse_inventory,
    try_parse_process_list,
)
from .engine import PcfResult, total_pcf
from .prompts import (
    RenderedPrompt,
    corrective_prompt,
    render_inventory_prompt,
    render_process_prompt,
)
from .transcripts import Transcript, TranscriptRecorder

MODE_DGA = "DGA"
MODE_IEA = "IEA"


@dataclass(frozen=True)
class IeaInputs:
    """Everything the indirect-estimation stage needs beyond the model."""

    iot: IotTable
    alias_table: Optional[Mapping[str, str]] = None
    industry_threshold: float = 0.5
    destination_region: Optional[str] = None
    transport_factor_kg_km: Optional[float] = None
    balance_tolerance: float = 0.05


@dataclass(frozen=True)
class TrialOutput:
    trial_id: str
    provenance: TrialProvenance
    model: LifeCycleModel
    result: PcfResult
    transcript: Transcript
    matches: tuple[MatchResult, ...]
    estimate: Optional[EstimateResult] = None
    diagnostics: tuple[Diagnostic, ...] = ()


def _complete(gateway: Gateway, provider: Provider, prompt: RenderedPrompt,
              params: CompletionParams, recorder: TranscriptRecorder) -> str:
    request = CompletionRequest(prompt=prompt, provider_id=provider.provider_id,
                                params=params)
    return gateway.complete(request, provider=provider,
                            recorder=recorder).raw_text


def _parse_with_retry(gateway, provider, prompt, params, recorder, parse,
                      sink: DiagnosticSink, location: str) -> ParseOutcome:
    """Parse a completion; on failure re-ask once with a corrective prompt."""
    raw = _complete(gateway, provider, prompt, params, recorder)
    outcome = parse(raw)
    if not outcome.rejected:
        _note_repairs(sink, location, outcome)
        return outcome
    sink.emit("parse-rejected", location, detail=outcome.reason)
    retry_raw = _complete(gateway, provider, corrective_prompt(prompt), params,
                          recorder)
    outcome = parse(retry_raw)
    if not outcome.rejected:
        sink.emit("corrective-retry-succeeded", location, severity="info")
        _note_repairs(sink, location, outcome)
        return outcome
    sink.extend(outcome.diagnostics)
    if outcome.diagnostics:
        raise SchemaViolation(outcome.reason, diagnostics=outcome.diagnostics)
    raise UnparseableResponse(outcome.reason)


def _note_repairs(sink: DiagnosticSink, location: str,
                  outcome: ParseOutcome) -> None:
    if outcome.repairs_applied:
        sink.emit("repairs-applied", location, severity="info",
                  detail=",".join(outcome.repairs_applied))
    sink.extend(outcome.diagnostics)


def run_single_trial(product: ProductSpec, gateway: Gateway,
                     provider: Provider, *,
                     index: FactorIndex,
                     gwp: GwpTable,
                     embeddings,
                     params: CompletionParams = CompletionParams(),
                     mode: str = MODE_DGA,
                     iea: Optional[IeaInputs] = None,
                     similarity_threshold: float = 0.5,
                     seed: int = 0,
                     trial_index: int = 0,
                     trial_id: Optional[str] = None,
                     rng: Optional[random.Random] = None) -> TrialOutput:
    """Execute one complete trial and return everything it produced."""
    if mode not in (MODE_DGA, MODE_IEA):
        raise StageError("config", f"unknown activity-data mode {mode!r}")
    if mode == MODE_IEA and iea is None:
        raise StageError("config", "IEA mode needs IOT inputs")
    trial_id = trial_id or f"trial-{trial_index:03d}"
    recorder = TranscriptRecorder(trial_id)
    sink = DiagnosticSink()
    provenance = TrialProvenance(provider_id=provider.provider_id, seed=seed,
                                 trial_index=trial_index, mode=mode)

    # Stage: process breakdown.
    try:
        prompt = render_process_prompt(product)
        outcome = _parse_with_retry(gateway, provider, prompt, params,
                                    recorder, try_parse_process_list, sink,
                                    "process-breakdown")
        if outcome.payload is NONE_SIGNAL:
            raise ModelDeclined(
                f'model answered "None": it cannot break down '
                f'{product.name!r}')
        process_names = list(outcome.payload)
    except PcfKitError as exc:
        raise StageError("process-breakdown", str(exc), cause=exc) from exc

    # Stage: per-process inventories.
    try:
        inventories = []
        for i, name in enumerate(process_names):
            prompt = render_inventory_prompt(product, process_names, name)
            outcome = _parse_with_retry(
                gateway, provider, prompt, params, recorder,
                lambda raw, _name=name, _i=i: try_parse_inventory(
                    raw, _name, ordinal=_i),
                sink, f"inventory/{name}")
            inventories.append(outcome.payload)
        model = build_life_cycle_model(product, inventories,
                                       provenance=provenance, sink=sink)
    except PcfKitError as exc:
        raise StageError("inventory", str(exc), cause=exc) from exc

    # Stage: indirect estimation (optional).
    estimate = None
    if mode == MODE_IEA:
        try:
            estimate = estimate_activity_data(
                model, iea.iot,
                alias_table=iea.alias_table,
                embeddings=embeddings,
                industry_threshold=iea.industry_threshold,
                rng=rng if rng is not None else random.Random(seed),
                destination_region=iea.destination_region,
                transport_factor_kg_km=iea.transport_factor_kg_km,
                balance_tolerance=iea.balance_tolerance)
            model = estimate.model
            sink.extend(estimate.diagnostics)
        except PcfKitError as exc:
            raise StageError("activity-estimation", str(exc), cause=exc) from exc

    # Stage: factor matching. Flows that can never contribute (product rows,
    # in-gate intermediates, direct greenhouse gases) are not matched.
    try:
        matches: dict[str, MatchResult] = {}
        for proc in model.processes:
            for flow in proc.flows:
                if flow.entity_type is EntityType.PRODUCT:
                    continue
                if flow.source is not None:
                    continue
                if flow.entity_type is EntityType.WASTE_GAS and \
                        gwp.resolve_gas(flow.name) is not None:
                    continue
                key = normalize_name(flow.name)
                if key in matches:
                    continue
                try:
                    matches[key] = match_factor(flow.name, index,
                                                similarity_threshold,
                                                embeddings=embeddings)
                except EmbeddingUnavailable as exc:
                    sink.emit("embedding-missing",
                              f"{proc.process_name}/{flow.name}",
                              detail=str(exc))
                    matches[key] = MatchResult(activity_name=flow.name,
                                               factor_id=None, similarity=0.0,
                                               matched=False)
    except PcfKitError as exc:
        raise StageError("factor-matching", str(exc), cause=exc) from exc

    # Stage: emission calculation.
    try:
        factors_by_id = {f.factor_id: f for f in index.factors}
        result = total_pcf(model, gwp, matches=matches,
                           factors_by_id=factors_by_id,
                           transport=estimate.transport if estimate else ())
    except PcfKitError as exc:
        raise StageError("emission-calculation", str(exc), cause=exc) from exc

    return TrialOutput(trial_id=trial_id, provenance=provenance, model=model,
                       result=result, transcript=recorder.finish(),
                       matches=tuple(matches.values()), estimate=estimate,
                       diagnostics=tuple(sink))
