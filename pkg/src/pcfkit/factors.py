"""Emission factor database and nearest-factor assignment.

Factors load from CSV (one row per gas; pre-aggregated rows use the gas
pseudo-name CO2e) into an immutable flat index. Matching is an exhaustive
cosine scan over every factor vector: exact, oracle-testable, and fast
enough for the database sizes in scope. Nothing approximate here on
purpose; a wrong nearest neighbor would silently fabricate a footprint.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .diagnostics import Diagnostic
from .embeddings import EmbeddingService, EmbeddingVector
from .errors import ConfigInvalid, FileUnreadable, ZeroNormVector
from .gwp import GwpTable
from .units import Unit, parse_unit

DEFAULT_SIMILARITY_THRESHOLD = 0.5

AGGREGATE_GAS = "CO2e"

_DB_COLUMNS = ("factor_id", "name", "reference_unit", "gas", "intensity",
               "source_tag", "geography")


@dataclass(frozen=True)
class EmissionFactor:
    """One database entry: gas released per reference unit of the named thing.

    ``gas_intensities`` maps gas name to kg emitted per reference_unit.
    A pre-aggregated entry instead carries the single pseudo-gas CO2e in
    kg CO2-eq per unit and sets ``aggregate``; the two forms are exclusive.
    """

    factor_id: str
    name: str
    reference_unit: Unit
    gas_intensities: tuple[tuple[str, float], ...]
    source_tag: str = ""
    geography: Optional[str] = None
    aggregate: bool = False

    def __post_init__(self):
        if not self.factor_id.strip():
            raise ConfigInvalid("factor_id must be non-empty")
        if isinstance(self.gas_intensities, Mapping):
            pairs = tuple(sorted(self.gas_intensities.items()))
        else:
            pairs = tuple(self.gas_intensities)
        if not pairs:
            raise ConfigInvalid(f"factor {self.factor_id}: no gas intensities")
        for gas, value in pairs:
            if not math.isfinite(value) or value < 0:
                raise ConfigInvalid(
                    f"factor {self.factor_id}: intensity for {gas} "
                    f"must be a non-negative finite real, got {value!r}")
        gases = [g for g, _ in pairs]
        has_aggregate = any(g.casefold() == AGGREGATE_GAS.casefold()
                            for g in gases)
        if has_aggregate and len(pairs) > 1:
            raise ConfigInvalid(
                f"factor {self.factor_id}: aggregate and per-gas rows "
                "are mutually exclusive")
        object.__setattr__(self, "gas_intensities", pairs)
        object.__setattr__(self, "aggregate", has_aggregate)

    def co2e_per_unit(self, gwp: GwpTable) -> float:
        """kg CO2-eq emitted per reference_unit, aggregating over gases."""
        if self.aggregate:
            return self.gas_intensities[0][1]
        total = 0.0
        for gas, value in self.gas_intensities:
            total += value * gwp[gas]
        return total


@dataclass(frozen=True)
class MatchResult:
    """Outcome of nearest-factor assignment for one activity name."""

    activity_name: str
    factor_id: Optional[str]
    similarity: float
    matched: bool
    runner_up: Optional[tuple[str, float]] = None

    def __post_init__(self):
        if self.matched != (self.factor_id is not None):
            raise ConfigInvalid("matched must mirror factor_id presence")
        if self.runner_up is not None and \
                self.runner_up[1] > self.similarity + 1e-12:
            raise ConfigInvalid("runner-up cannot beat the chosen similarity")


class FactorIndex:
    """Immutable flat array of (factor, vector); scanned in full per query."""

    def __init__(self, pairs: Iterable[tuple[EmissionFactor, EmbeddingVector]],
                 diagnostics: Iterable[Diagnostic] = ()):
        pairs = list(pairs)
        self.factors: tuple[EmissionFactor, ...] = tuple(f for f, _ in pairs)
        self.diagnostics: tuple[Diagnostic, ...] = tuple(diagnostics)
        if pairs:
            self._matrix = np.vstack([v.values for _, v in pairs])
            self._norms = np.linalg.norm(self._matrix, axis=1)
        else:
            self._matrix = np.empty((0, 0))
            self._norms = np.empty((0,))

    def __len__(self) -> int:
        return len(self.factors)

    def by_id(self, factor_id: str) -> EmissionFactor:
        for f in self.factors:
            if f.factor_id == factor_id:
                return f
        raise KeyError(factor_id)

    def similarities(self, values: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            raise ZeroNormVector("activity vector has zero norm")
        return (self._matrix @ values) / (self._norms * norm)


def _coerce_index(index) -> FactorIndex:
    if isinstance(index, FactorIndex):
        return index
    return FactorIndex(index)


def match_factor_vector(activity_name: str, values: np.ndarray,
                        index: Union[FactorIndex, Iterable],
                        threshold: float = DEFAULT_SIMILARITY_THRESHOLD) -> MatchResult:
    """Nearest factor by cosine similarity for an already-embedded activity.

    The winner maximizes similarity; exact ties fall to the lexicographically
    smallest factor_id. Below the threshold the result reports the best
    similarity found but no factor.
    """
    index = _coerce_index(index)
    if len(index) == 0:
        raise ConfigInvalid("factor index is empty")
    sims = index.similarities(np.asarray(values, dtype=np.float64))

    best_sim = float(sims.max())
    tied = [i for i in np.flatnonzero(sims == sims.max())]
    winner = min(tied, key=lambda i: index.factors[i].factor_id)

    runner_up = None
    if len(index) > 1:
        rest = [i for i in range(len(index)) if i != winner]
        rest_best = max(float(sims[i]) for i in rest)
        rest_tied = [i for i in rest if float(sims[i]) == rest_best]
        second = min(rest_tied, key=lambda i: index.factors[i].factor_id)
        runner_up = (index.factors[second].factor_id, rest_best)

    if best_sim >= threshold:
        return MatchResult(activity_name=activity_name,
                           factor_id=index.factors[winner].factor_id,
                           similarity=best_sim, matched=True,
                           runner_up=runner_up)
    return MatchResult(activity_name=activity_name, factor_id=None,
                       similarity=best_sim, matched=False, runner_up=runner_up)


def match_factor(activity_name: str, index: Union[FactorIndex, Iterable],
                 threshold: float = DEFAULT_SIMILARITY_THRESHOLD, *,
                 embeddings: EmbeddingService) -> MatchResult:
    """Embed the activity name and scan the index for its nearest factor."""
    vector = embeddings.embed(activity_name)
    return match_factor_vector(activity_name, vector.values, index, threshold)


def _parse_rows(path: Path) -> tuple[list[dict], list[Diagnostic]]:
    diags: list[Diagnostic] = []
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in _DB_COLUMNS if c not in header]
            if missing:
                raise FileUnreadable(
                    f"factor DB {path}: missing columns {missing}")
            rows = list(reader)
    except OSError as exc:
        raise FileUnreadable(f"cannot read factor DB {path}: {exc}") from exc
    return rows, diags


def load_factor_db(path: str | Path, *,
                   embeddings: Optional[EmbeddingService] = None) -> FactorIndex:
    """Load and validate the factor CSV; embed names when a service is given.

    Rows that violate the invariants are rejected with row-level
    diagnostics (kept on the returned index) while clean rows still load.
    A factor whose name cannot be embedded is dropped the same way.
    """
    path = Path(path)
    if not path.is_file():
        raise FileUnreadable(f"factor DB {path} does not exist")
    rows, diags = _parse_rows(path)

    grouped: dict[str, list[tuple[int, dict]]] = {}
    order: list[str] = []
    for lineno, row in enumerate(rows, start=2):
        fid = (row.get("factor_id") or "").strip()
        if not fid:
            diags.append(Diagnostic("missing-factor-id", f"{path.name}:{lineno}",
                                    "error", "row has no factor_id"))
            continue
        if fid not in grouped:
            grouped[fid] = []
            order.append(fid)
        grouped[fid].append((lineno, row))

    pairs: list[tuple[EmissionFactor, EmbeddingVector]] = []
    for fid in order:
        factor = _build_factor(fid, grouped[fid], path.name, diags)
        if factor is None:
            continue
        if embeddings is None:
            vector = None
        else:
            try:
                vector = embeddings.embed(factor.name)
            except Exception as exc:
                diags.append(Diagnostic("embedding-missing",
                                        f"{path.name}:{fid}", "error",
                                        str(exc)))
                continue
        if vector is None:
            diags.append(Diagnostic("embedding-missing", f"{path.name}:{fid}",
                                    "error", "no embedding service supplied"))
            continue
        pairs.append((factor, vector))
    return FactorIndex(pairs, diagnostics=diags)


def _build_factor(fid: str, numbered_rows: list[tuple[int, dict]],
                  origin: str, diags: list[Diagnostic]) -> Optional[EmissionFactor]:
    first = numbered_rows[0][1]
    name = (first.get("name") or "").strip()
    unit_text = (first.get("reference_unit") or "").strip()
    source_tag = (first.get("source_tag") or "").strip()
    geography = (first.get("geography") or "").strip() or None

    if not name:
        diags.append(Diagnostic("missing-name", f"{origin}:{fid}", "error",
                                "factor has no name"))
        return None
    try:
        unit = parse_unit(unit_text)
    except Exception:
        diags.append(Diagnostic("unit-not-allowed", f"{origin}:{fid}", "error",
                                f"reference_unit {unit_text!r} is outside the "
                                "allowed set"))
        return None

    intensities: dict[str, float] = {}
    for lineno, row in numbered_rows:
        where = f"{origin}:{lineno}"
        for col, expected in (("name", name), ("reference_unit", unit_text),
                              ("source_tag", source_tag)):
            got = (row.get(col) or "").strip()
            if got != expected:
                diags.append(Diagnostic("inconsistent-factor-rows", where,
                                        "error",
                                        f"{col} {got!r} != {expected!r} within "
                                        f"factor {fid}"))
                return None
        gas = (row.get("gas") or "").strip()
        if not gas:
            diags.append(Diagnostic("missing-gas", where, "error",
                                    "row has no gas"))
            continue
        if gas in intensities:
            diags.append(Diagnostic("duplicate-gas-row", where, "error",
                                    f"gas {gas} repeated within factor {fid}"))
            return None
        try:
            value = float(row.get("intensity") or "")
        except ValueError:
            diags.append(Diagnostic("non-numeric-intensity", where, "error",
                                    f"intensity {row.get('intensity')!r}"))
            continue
        if not math.isfinite(value) or value < 0:
            diags.append(Diagnostic("negative-intensity", where, "error",
                                    f"intensity {value!r} rejected"))
            continue
        intensities[gas] = value

    if not intensities:
        diags.append(Diagnostic("empty-factor", f"{origin}:{fid}", "error",
                                "no usable gas rows survived validation"))
        return None
    try:
        return EmissionFactor(factor_id=fid, name=name, reference_unit=unit,
                              gas_intensities=intensities,
                              source_tag=source_tag, geography=geography)
    except ConfigInvalid as exc:
        diags.append(Diagnostic("invalid-factor", f"{origin}:{fid}", "error",
                                str(exc)))
        return None
