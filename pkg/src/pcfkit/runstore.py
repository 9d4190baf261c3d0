"""Append-only persistence of runs under the output directory.

Layout, one directory per run id:

    <out>/<run_id>/
        config.yaml            frozen effective config snapshot
        meta.json              timestamps and durations (never hashed)
        transcripts/*.jsonl    one per trial
        models/*.json          assembled life-cycle models
        results/*.json         canonical PcfResult records
        report.json            the byte-stable run report
        summary.txt            human-readable digest
        fig3_distribution.csv / fig4_scatter.csv (+ .png)
        eval.json              evaluation output, when requested

The run id is derived from product, seed, and config hash, so re-running
the same configuration lands in the same directory with identical bytes.
Nothing here ever rewrites an existing trial artifact of a different run.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional

import yaml

from .errors import RunNotFound
from .model import (
    EntityType,
    FlowEntry,
    FlowProvenance,
    LifeCycleModel,
    ProcessInventory,
    ProductSpec,
    TrialProvenance,
)
from .transcripts import Transcript, TranscriptStore
from .units import parse_unit


def canonical_dumps(record) -> str:
    """Stable JSON text: fixed key order as built, repr floats, 2-space indent."""
    return json.dumps(record, ensure_ascii=False, indent=2) + "\n"


def slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", name.casefold()).strip("-")
    return slug or "product"


def make_run_id(product_name: str, seed: int, config_hash: str) -> str:
    return f"{slugify(product_name)}-s{seed}-{config_hash[:8]}"


def model_to_record(model: LifeCycleModel) -> dict:
    return {
        "product": {
            "name": model.product.name,
            "quantity": model.product.functional_unit_qty,
            "unit": model.product.functional_unit.value,
        },
        "provenance": {
            "provider_id": model.provenance.provider_id,
            "seed": model.provenance.seed,
            "trial_index": model.provenance.trial_index,
            "mode": model.provenance.mode,
        },
        "processes": [
            {
                "name": proc.process_name,
                "ordinal": proc.ordinal,
                "flows": [
                    {
                        "entity_type": f.entity_type.value,
                        "name": f.name,
                        "quantity": f.quantity,
                        "unit": f.unit.value,
                        "source": f.source,
                        "provenance": f.provenance.value,
                    }
                    for f in proc.flows
                ],
            }
            for proc in model.processes
        ],
    }


def model_from_record(rec: dict) -> LifeCycleModel:
    """Inverse of model_to_record, used when re-reading a stored run."""
    product = ProductSpec(name=rec["product"]["name"],
                          functional_unit_qty=float(rec["product"]["quantity"]),
                          functional_unit=parse_unit(rec["product"]["unit"]))
    prov = rec["provenance"]
    provenance = TrialProvenance(provider_id=prov["provider_id"],
                                 seed=int(prov["seed"]),
                                 trial_index=int(prov["trial_index"]),
                                 mode=prov["mode"])
    processes = []
    for proc in rec["processes"]:
        flows = tuple(
            FlowEntry(entity_type=EntityType(f["entity_type"]),
                      name=f["name"],
                      quantity=float(f["quantity"]),
                      unit=parse_unit(f["unit"]),
                      source=f.get("source"),
                      provenance=FlowProvenance(f.get("provenance", "direct")))
            for f in proc["flows"])
        processes.append(ProcessInventory(process_name=proc["name"],
                                          ordinal=int(proc["ordinal"]),
                                          flows=flows))
    return LifeCycleModel(product=product, processes=tuple(processes),
                          provenance=provenance)


class RunDir:
    """Paths and read/write helpers for one run directory."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.transcripts = TranscriptStore(self.path / "transcripts")

    @property
    def run_id(self) -> str:
        return self.path.name

    def ensure(self) -> "RunDir":
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "models").mkdir(exist_ok=True)
        (self.path / "results").mkdir(exist_ok=True)
        return self

    def write_config_snapshot(self, snapshot: dict) -> None:
        text = yaml.safe_dump(snapshot, sort_keys=True, allow_unicode=True)
        (self.path / "config.yaml").write_text(text, encoding="utf-8")

    def read_config_snapshot(self) -> dict:
        path = self.path / "config.yaml"
        if not path.exists():
            raise RunNotFound(f"{self.path} has no config snapshot")
        return yaml.safe_load(path.read_text(encoding="utf-8"))

    def write_meta(self, meta: dict) -> None:
        (self.path / "meta.json").write_text(canonical_dumps(meta),
                                             encoding="utf-8")

    def write_model(self, trial_id: str, model: LifeCycleModel) -> None:
        path = self.path / "models" / f"{trial_id}.json"
        path.write_text(canonical_dumps(model_to_record(model)),
                        encoding="utf-8")

    def write_result(self, trial_id: str, record: dict) -> None:
        path = self.path / "results" / f"{trial_id}.json"
        path.write_text(canonical_dumps(record), encoding="utf-8")

    def read_model_record(self, trial_id: str) -> dict:
        path = self.path / "models" / f"{trial_id}.json"
        if not path.is_file():
            raise RunNotFound(f"no stored model for {trial_id} in {self.path}")
        return json.loads(path.read_text(encoding="utf-8"))

    def read_result_text(self, trial_id: str) -> str:
        path = self.path / "results" / f"{trial_id}.json"
        if not path.exists():
            raise RunNotFound(f"no stored result for {trial_id} in {self.path}")
        return path.read_text(encoding="utf-8")

    def result_ids(self) -> list[str]:
        results = self.path / "results"
        if not results.is_dir():
            return []
        return sorted(p.stem for p in results.glob("*.json"))

    def save_transcript(self, transcript: Transcript) -> None:
        self.transcripts.save(transcript)

    def write_report(self, record: dict) -> None:
        (self.path / "report.json").write_text(canonical_dumps(record),
                                               encoding="utf-8")

    def read_report_text(self) -> str:
        path = self.path / "report.json"
        if not path.exists():
            raise RunNotFound(f"{self.path} has no report.json")
        return path.read_text(encoding="utf-8")

    def write_text(self, name: str, text: str) -> None:
        (self.path / name).write_text(text, encoding="utf-8")


class RunStore:
    """All runs under one root directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def run_dir(self, run_id: str) -> RunDir:
        return RunDir(self.root / run_id)

    def open_existing(self, run_ref: str) -> RunDir:
        """Resolve a run id under the root, or a direct path to a run dir."""
        candidate = self.root / run_ref
        if candidate.is_dir():
            return RunDir(candidate)
        direct = Path(run_ref)
        if direct.is_dir() and (direct / "config.yaml").exists():
            return RunDir(direct)
        raise RunNotFound(f"no run named {run_ref!r} under {self.root}")

    def list_runs(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir()
                      if p.is_dir() and (p / "config.yaml").exists())
