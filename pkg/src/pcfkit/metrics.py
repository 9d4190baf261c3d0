"""Evaluation arithmetic: retrieval scores, footprint error, trial spread.

The spread statistic is a coefficient of variation made robust before it
is computed: quartiles (linear interpolation between order statistics) fence
the sample at 1.5 IQR, and the sample standard deviation (n-1) over mean is
taken on what survives. Retrieval scoring is deliberately boring set
overlap; the interesting part is the name correspondence, which either
uses curated alias groups or an opt-in embedding threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .embeddings import EmbeddingService, cosine_similarity
from .errors import (
    ConfigInvalid,
    DegenerateMean,
    InsufficientSamples,
    ZeroExpertReference,
)
from .model import normalize_name

IQR_FENCE = 1.5
SEMANTIC_MATCH_THRESHOLD = 0.85

RULE_ALIAS_EXACT = "alias-exact"
RULE_SEMANTIC = "semantic-threshold"


class Prf(NamedTuple):
    precision: float
    recall: float
    f1: float


def precision_recall_f1(correspondence: Mapping[str, str], n_generated: int,
                        n_reference: int) -> Prf:
    """Set-retrieval scores from an injective generated-to-reference map."""
    if n_reference < 1:
        raise ConfigInvalid(f"n_reference must be >= 1, got {n_reference}")
    if n_generated < 0:
        raise ConfigInvalid(f"n_generated must be >= 0, got {n_generated}")
    correct = len(correspondence)
    precision = correct / n_generated if n_generated else 0.0
    recall = correct / n_reference
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return Prf(precision, recall, f1)


def _alias_ids(alias_groups: Iterable[Iterable[str]]) -> dict[str, int]:
    ids: dict[str, int] = {}
    for gid, group in enumerate(alias_groups):
        for name in group:
            key = normalize_name(name)
            if key in ids and ids[key] != gid:
                raise ConfigInvalid(f"alias groups overlap on {name!r}")
            ids[key] = gid
    return ids


def match_instances(generated: Iterable[str], reference: Iterable[str],
                    alias_groups: Iterable[Iterable[str]] = (),
                    rule: str = RULE_ALIAS_EXACT, *,
                    embeddings: Optional[EmbeddingService] = None,
                    threshold: float = SEMANTIC_MATCH_THRESHOLD) -> dict[str, str]:
    """Injective correspondence from generated names to reference names.

    alias-exact: names correspond when equal after normalization or when
    they share an alias group. semantic-threshold: greedy one-to-one
    matching by descending embedding cosine, cut at the threshold.
    """
    generated = list(dict.fromkeys(generated))
    reference = list(dict.fromkeys(reference))
    if rule == RULE_ALIAS_EXACT:
        ids = _alias_ids(alias_groups)

        def key(name: str):
            norm = normalize_name(name)
            return ("g", ids[norm]) if norm in ids else ("n", norm)

        available = {}
        for ref in sorted(reference, key=normalize_name):
            available.setdefault(key(ref), ref)
        out: dict[str, str] = {}
        taken: set = set()
        for gen in sorted(generated, key=normalize_name):
            k = key(gen)
            if k in available and k not in taken:
                out[gen] = available[k]
                taken.add(k)
        return out

    if rule == RULE_SEMANTIC:
        if embeddings is None:
            raise ConfigInvalid("semantic matching needs an embedding service")
        pairs = []
        for gen in generated:
            for ref in reference:
                sim = cosine_similarity(embeddings.embed(gen),
                                        embeddings.embed(ref))
                if sim >= threshold:
                    pairs.append((-sim, gen, ref))
        out = {}
        used_ref: set[str] = set()
        for _neg, gen, ref in sorted(pairs):
            if gen in out or ref in used_ref:
                continue
            out[gen] = ref
            used_ref.add(ref)
        return out

    raise ConfigInvalid(f"unknown instance-matching rule {rule!r}")


def pcf_error(auto: float, expert: float) -> float:
    """Relative deviation of the automated total from the expert one."""
    if expert <= 0:
        raise ZeroExpertReference(
            f"expert reference must be positive, got {expert}")
    return abs(1.0 - auto / expert)


def _quantile_linear(sorted_x: Sequence[float], q: float) -> float:
    """Order-statistics quantile with linear interpolation between ranks."""
    n = len(sorted_x)
    if n == 1:
        return float(sorted_x[0])
    h = (n - 1) * q
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return float(sorted_x[lo])
    return sorted_x[lo] + (h - lo) * (sorted_x[hi] - sorted_x[lo])


@dataclass(frozen=True)
class TrialDistribution:
    """Per-trial totals with their robust spread statistic."""

    samples: tuple[float, ...]
    n: int
    median: float
    q1: float
    q3: float
    iqr: float
    kept: tuple[float, ...]
    adjusted_cv: float

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "samples": list(self.samples),
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "iqr": self.iqr,
            "kept_after_filter": list(self.kept),
            "filtered_out": self.n - len(self.kept),
            "adjusted_cv": self.adjusted_cv,
            "quartile_method": "linear interpolation",
        }


def adjusted_cv(samples: Sequence[float]) -> TrialDistribution:
    """Coefficient of variation after fencing outliers at 1.5 IQR.

    Quartiles come from the full sample; the fence is
    [Q1 - 1.5 IQR, Q3 + 1.5 IQR]; mean and sample std (n-1) are computed
    on the surviving subset only.
    """
    samples = tuple(float(x) for x in samples)
    if len(samples) < 2:
        raise InsufficientSamples(
            f"need at least 2 samples, got {len(samples)}")
    ordered = sorted(samples)
    q1 = _quantile_linear(ordered, 0.25)
    median = _quantile_linear(ordered, 0.50)
    q3 = _quantile_linear(ordered, 0.75)
    iqr = q3 - q1
    lo = q1 - IQR_FENCE * iqr
    hi = q3 + IQR_FENCE * iqr
    kept = tuple(x for x in samples if lo <= x <= hi)
    if len(kept) < 2:
        raise InsufficientSamples(
            f"only {len(kept)} sample(s) inside the IQR fence")
    mean = math.fsum(kept) / len(kept)
    if mean == 0.0:
        raise DegenerateMean("mean of the filtered sample is zero")
    variance = math.fsum((x - mean) ** 2 for x in kept) / (len(kept) - 1)
    cv = math.sqrt(variance) / mean
    return TrialDistribution(samples=samples, n=len(samples), median=median,
                             q1=q1, q3=q3, iqr=iqr, kept=kept, adjusted_cv=cv)


@dataclass(frozen=True)
class EvalReport:
    """Everything the harness measures for one product."""

    product: str
    process_scores: Prf
    inventory_scores: Prf
    per_trial_process_scores: tuple[Prf, ...] = ()
    per_trial_inventory_scores: tuple[Prf, ...] = ()
    pcf_error: Optional[float] = None
    expert_median: Optional[float] = None
    auto_median: Optional[float] = None
    distribution: Optional[TrialDistribution] = None
    matcher_accuracy: Optional[float] = None
    matching_rule: str = RULE_ALIAS_EXACT

    def to_record(self) -> dict:
        def prf_rec(p: Prf) -> dict:
            return {"precision": p.precision, "recall": p.recall, "f1": p.f1}

        rec = {
            "product": self.product,
            "matching_rule": self.matching_rule,
            "process_scores": prf_rec(self.process_scores),
            "inventory_scores": prf_rec(self.inventory_scores),
            "per_trial_process_scores": [prf_rec(p) for p in
                                         self.per_trial_process_scores],
            "per_trial_inventory_scores": [prf_rec(p) for p in
                                           self.per_trial_inventory_scores],
        }
        if self.pcf_error is not None:
            rec["pcf_error"] = self.pcf_error
            rec["expert_median"] = self.expert_median
            rec["auto_median"] = self.auto_median
        if self.distribution is not None:
            rec["distribution"] = self.distribution.to_record()
        if self.matcher_accuracy is not None:
            rec["matcher_accuracy"] = self.matcher_accuracy
        return rec


def mean_prf(scores: Sequence[Prf]) -> Prf:
    if not scores:
        return Prf(0.0, 0.0, 0.0)
    return Prf(math.fsum(s.precision for s in scores) / len(scores),
               math.fsum(s.recall for s in scores) / len(scores),
               math.fsum(s.f1 for s in scores) / len(scores))
