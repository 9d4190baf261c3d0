"""Recorded request/response transcripts: one file per trial.

A transcript is the replay unit that makes everything downstream of the
provider boundary deterministic: line-delimited JSON exchange records plus
a content-hash footer. The hash covers the response texts, so a tampered
file fails closed at load. Latencies live under a separate ``timing`` key
that the hash and replay both ignore.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import HashMismatch, TranscriptNotFound


@dataclass(frozen=True)
class ExchangeRecord:
    """One completed request/response pair."""

    prompt_sha256: str
    prompt_text: str
    template_id: str
    provider_id: str
    params: dict
    raw_text: str
    attempt_count: int = 1
    cache_hit: bool = False
    latency_ms: float = 0.0

    def to_line(self) -> str:
        payload = {
            "prompt_sha256": self.prompt_sha256,
            "prompt_text": self.prompt_text,
            "template_id": self.template_id,
            "provider_id": self.provider_id,
            "params": self.params,
            "raw_text": self.raw_text,
            "attempt_count": self.attempt_count,
            "cache_hit": self.cache_hit,
            "timing": {"latency_ms": self.latency_ms},
        }
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_record(cls, rec: dict) -> "ExchangeRecord":
        return cls(
            prompt_sha256=rec["prompt_sha256"],
            prompt_text=rec.get("prompt_text", ""),
            template_id=rec.get("template_id", ""),
            provider_id=rec.get("provider_id", ""),
            params=rec.get("params", {}),
            raw_text=rec["raw_text"],
            attempt_count=rec.get("attempt_count", 1),
            cache_hit=rec.get("cache_hit", False),
            latency_ms=rec.get("timing", {}).get("latency_ms", 0.0),
        )


def content_hash(raw_texts: Iterable[str]) -> str:
    """Integrity hash over all response texts, in order."""
    blob = json.dumps(list(raw_texts), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Transcript:
    trial_id: str
    exchanges: tuple[ExchangeRecord, ...]
    content_sha256: str = ""

    def __post_init__(self):
        object.__setattr__(self, "exchanges", tuple(self.exchanges))
        expected = content_hash(ex.raw_text for ex in self.exchanges)
        if self.content_sha256:
            if self.content_sha256 != expected:
                raise HashMismatch(
                    f"transcript {self.trial_id}: stored hash "
                    f"{self.content_sha256} != computed {expected}")
        else:
            object.__setattr__(self, "content_sha256", expected)

    def to_text(self) -> str:
        lines = [ex.to_line() for ex in self.exchanges]
        lines.append(json.dumps({
            "footer": True,
            "trial_id": self.trial_id,
            "content_sha256": self.content_sha256,
        }))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, origin: str = "<text>") -> "Transcript":
        exchanges: list[ExchangeRecord] = []
        footer: Optional[dict] = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise HashMismatch(
                    f"{origin}:{lineno}: corrupt transcript line") from exc
            if rec.get("footer"):
                footer = rec
            else:
                exchanges.append(ExchangeRecord.from_record(rec))
        if footer is None:
            raise HashMismatch(f"{origin}: missing content-hash footer")
        return cls(trial_id=footer.get("trial_id", ""),
                   exchanges=tuple(exchanges),
                   content_sha256=footer.get("content_sha256", ""))


@dataclass
class TranscriptRecorder:
    """Accumulates the exchanges of one trial; finish() seals the hash."""

    trial_id: str
    exchanges: list[ExchangeRecord] = field(default_factory=list)

    def add(self, record: ExchangeRecord) -> None:
        self.exchanges.append(record)

    def finish(self) -> Transcript:
        return Transcript(trial_id=self.trial_id, exchanges=tuple(self.exchanges))


class TranscriptStore:
    """Filesystem store: ``<root>/<trial_id>.jsonl``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, trial_id: str) -> Path:
        return self.root / f"{trial_id}.jsonl"

    def save(self, transcript: Transcript) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(transcript.trial_id)
        path.write_text(transcript.to_text(), encoding="utf-8")
        return path

    def load(self, trial_id: str) -> Transcript:
        path = self.path_for(trial_id)
        if not path.exists():
            raise TranscriptNotFound(f"no transcript stored for {trial_id!r} "
                                     f"under {self.root}")
        return load_transcript(path)

    def trial_ids(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.stem for p in self.root.glob("*.jsonl"))


def load_transcript(path: str | Path) -> Transcript:
    path = Path(path)
    if not path.exists():
        raise TranscriptNotFound(f"transcript file {path} does not exist")
    return Transcript.from_text(path.read_text(encoding="utf-8"), origin=str(path))
