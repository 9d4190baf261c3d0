"""Structured diagnostics emitted by parsers, validators, and estimators.

Violations are data, not failures: operations that check invariants return
or emit these records, and the orchestrator persists them into the trial's
run-store entry as line-delimited JSON.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Iterator


SEVERITIES = ("info", "warning", "error")


@dataclass(frozen=True)
class Diagnostic:
    """One structured finding: a rule id, where it fired, and how bad it is."""

    rule: str
    location: str
    severity: str = "warning"
    detail: str = ""

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class DiagnosticSink:
    """Ordered collector threaded through pipeline stages."""

    records: list[Diagnostic] = field(default_factory=list)

    def emit(self, rule: str, location: str, severity: str = "warning",
             detail: str = "") -> Diagnostic:
        diag = Diagnostic(rule=rule, location=location, severity=severity,
                          detail=detail)
        self.records.append(diag)
        return diag

    def extend(self, diagnostics) -> None:
        for diag in diagnostics:
            self.records.append(diag)

    def __iter__(self) -> Iterator[Diagnostic]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def to_records(self) -> list[dict]:
        return [d.to_record() for d in self.records]
