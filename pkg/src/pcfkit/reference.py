"""Expert reference inventories and the comparison against generated models.

A reference file is the ground truth for one product: the expert's process
names, the expected inventory items per process, alias groups declaring
which spellings mean the same thing, and the expert footprint median with
its quartile range and citation. References are inputs sourced from
literature, never derived here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ReferenceUnreadable
from .metrics import (
    EvalReport,
    Prf,
    RULE_ALIAS_EXACT,
    TrialDistribution,
    adjusted_cv,
    match_instances,
    mean_prf,
    pcf_error,
    precision_recall_f1,
)
from .model import EntityType, LifeCycleModel, normalize_name


@dataclass(frozen=True)
class ReferenceInventory:
    product: str
    process_names: tuple[str, ...]
    items_by_process: tuple[tuple[str, tuple[str, ...]], ...]
    alias_groups: tuple[tuple[str, ...], ...]
    pcf_median: float
    pcf_q1: Optional[float] = None
    pcf_q3: Optional[float] = None
    citation: str = ""

    def __post_init__(self):
        if self.pcf_median <= 0 or not math.isfinite(self.pcf_median):
            raise ReferenceUnreadable(
                f"expert median must be positive, got {self.pcf_median!r}")
        if self.pcf_q1 is not None and self.pcf_q3 is not None:
            if not (self.pcf_q1 <= self.pcf_median <= self.pcf_q3):
                raise ReferenceUnreadable(
                    "expert quartiles must be ordered Q1 <= median <= Q3")
        seen: set[str] = set()
        for group in self.alias_groups:
            for name in group:
                key = normalize_name(name)
                if key in seen:
                    raise ReferenceUnreadable(
                        f"alias groups overlap on {name!r}")
                seen.add(key)

    def all_items(self) -> tuple[str, ...]:
        out: list[str] = []
        seen: set[str] = set()
        for _proc, items in self.items_by_process:
            for item in items:
                key = normalize_name(item)
                if key not in seen:
                    seen.add(key)
                    out.append(item)
        return tuple(out)


def load_reference(path: str | Path) -> ReferenceInventory:
    """Read one product's reference document (JSON)."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReferenceUnreadable(f"cannot read reference {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReferenceUnreadable(f"reference {path} is not valid JSON: "
                                  f"{exc}") from exc
    try:
        product = payload["product"]
        processes = payload["processes"]
        expert = payload["expert_pcf"]
        median = float(expert["median"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ReferenceUnreadable(
            f"reference {path} is missing required structure: {exc}") from exc
    if not isinstance(processes, dict) or not processes:
        raise ReferenceUnreadable(f"reference {path}: processes must be a "
                                  "non-empty object")
    items_by_process = tuple(
        (proc, tuple(items)) for proc, items in processes.items())
    q1 = expert.get("q1")
    q3 = expert.get("q3")
    return ReferenceInventory(
        product=product,
        process_names=tuple(processes.keys()),
        items_by_process=items_by_process,
        alias_groups=tuple(tuple(g) for g in payload.get("alias_groups", [])),
        pcf_median=median,
        pcf_q1=float(q1) if q1 is not None else None,
        pcf_q3=float(q3) if q3 is not None else None,
        citation=str(expert.get("citation", "")))


def _model_items(model: LifeCycleModel) -> list[str]:
    """Non-product flow names of a model, pooled and deduplicated."""
    out: list[str] = []
    seen: set[str] = set()
    for proc in model.processes:
        for flow in proc.flows:
            if flow.entity_type is EntityType.PRODUCT:
                continue
            key = normalize_name(flow.name)
            if key not in seen:
                seen.add(key)
                out.append(flow.name)
    return out


def score_model(model: LifeCycleModel, reference: ReferenceInventory,
                rule: str = RULE_ALIAS_EXACT, *, embeddings=None,
                threshold: float = 0.85) -> tuple[Prf, Prf]:
    """(process-level, inventory-level) retrieval scores for one model."""
    gen_procs = model.process_names()
    corr = match_instances(gen_procs, reference.process_names,
                           reference.alias_groups, rule,
                           embeddings=embeddings, threshold=threshold)
    process_scores = precision_recall_f1(corr, len(gen_procs),
                                         len(reference.process_names))
    gen_items = _model_items(model)
    ref_items = reference.all_items()
    corr = match_instances(gen_items, ref_items, reference.alias_groups, rule,
                           embeddings=embeddings, threshold=threshold)
    inventory_scores = precision_recall_f1(corr, len(gen_items),
                                           len(ref_items))
    return process_scores, inventory_scores


def evaluate_product(models: Sequence[LifeCycleModel],
                     totals: Sequence[float],
                     reference: ReferenceInventory, *,
                     rule: str = RULE_ALIAS_EXACT,
                     embeddings=None,
                     threshold: float = 0.85,
                     matcher_accuracy: Optional[float] = None) -> EvalReport:
    """Score every trial against the reference and summarize.

    Retrieval scores are computed per trial and reported as the cross-trial
    mean (per-trial values kept). The footprint error compares the median
    of the trial totals against the expert median, mirroring how the
    headline deviation is quoted.
    """
    per_process: list[Prf] = []
    per_inventory: list[Prf] = []
    for model in models:
        p, i = score_model(model, reference, rule, embeddings=embeddings,
                           threshold=threshold)
        per_process.append(p)
        per_inventory.append(i)

    distribution: Optional[TrialDistribution] = None
    error = None
    auto_median = None
    if len(totals) >= 2:
        distribution = adjusted_cv(totals)
        auto_median = distribution.median
    elif len(totals) == 1:
        auto_median = float(totals[0])
    if auto_median is not None:
        error = pcf_error(auto_median, reference.pcf_median)

    return EvalReport(
        product=reference.product,
        process_scores=mean_prf(per_process),
        inventory_scores=mean_prf(per_inventory),
        per_trial_process_scores=tuple(per_process),
        per_trial_inventory_scores=tuple(per_inventory),
        pcf_error=error,
        expert_median=reference.pcf_median if error is not None else None,
        auto_median=auto_median,
        distribution=distribution,
        matcher_accuracy=matcher_accuracy,
        matching_rule=rule)
