#!/usr/bin/env python3
"""Generate the sample fixture tree: a complete offline steel example.

Produces under fixtures/: a recorded completion transcript whose prompt
hashes match what the pipeline renders for "hot rolled round steel", a
small emission-factor database, a name-embedding table built from concept
groups (members of a group are near-parallel, everything else is near
orthogonal), industry input-output statistics, a reference inventory, and
ready-to-run config files for both activity-data modes.

Everything is deterministic; re-running the script reproduces the same
bytes except for embedding noise, which is seeded too.
"""

from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from pcfkit.gateway import CompletionParams
from pcfkit.model import ProductSpec
from pcfkit.prompts import render_inventory_prompt, render_process_prompt
from pcfkit.transcripts import ExchangeRecord, Transcript
from pcfkit.units import Unit

PRODUCT = ProductSpec(name="hot rolled round steel",
                      functional_unit_qty=1.0, functional_unit=Unit.KG)
PROCESSES = ["sintering", "ironmaking", "steelmaking", "hot rolling"]
PROVIDER_ID = "fixture-llm"
PARAMS = CompletionParams(temperature=0.2, max_tokens=1024)

PROCESS_RESPONSE = (
    "Certainly. The cradle-to-gate production of hot rolled round steel "
    "breaks down into these core stages:\n"
    "```json\n"
    '["sintering", "ironmaking", "steelmaking", "hot rolling"]\n'
    "```\n"
    "Each stage feeds its output to the next one."
)

SINTERING_RESPONSE = """\
{
  "Product": [{"name": "sinter", "quantity": 1.35, "unit": "kg"}],
  "Raw material": [
    {"name": "iron ore", "quantity": 1.28, "unit": "kg", "source": "None"},
    {"name": "limestone", "quantity": 0.14, "unit": "kg", "source": "None"}
  ],
  "Energy": [
    {"name": "coal", "quantity": 0.09, "unit": "kg"},
    {"name": "electricity", "quantity": 0.04, "unit": "kWh"}
  ],
  "Waste gas": [{"name": "SO2", "quantity": 0.003, "unit": "kg"}],
  "Wastewater": [],
  "Solid waste": []
}"""

IRONMAKING_RESPONSE = """\
```json
{
  "Product": [{"name": "pig iron", "quantity": 0.98, "unit": "kg"}],
  "Raw material": [
    {"name": "sinter", "quantity": 1.35, "unit": "kg", "source": "sintering"},
    {"name": "coke", "quantity": 0.42, "unit": "kg", "source": "None"}
  ],
  "Energy": [{"name": "electricity", "quantity": 0.216, "unit": "MJ"}],
  "Waste gas": [{"name": "CO2", "quantity": 0.24, "unit": "kg"}],
  "Wastewater": [],
  "Solid waste": []
}
```"""

STEELMAKING_RESPONSE = """\
{
  "Product": [{"name": "crude steel", "quantity": 1.05, "unit": "kg"}],
  "Raw materials": [
    {"name": "pig iron", "quantity": 0.98, "unit": "kg", "source": "ironmaking"},
    {"name": "scrap steel", "quantity": 0.15, "unit": "kg", "source": "None"},
    {"name": "oxygen", "quantity": 0.08, "unit": "kg", "source": "None"}
  ],
  "Energy": [
    {"name": "electricity", "quantity": 0.09, "unit": "kWh"},
    {"name": "natural gas", "quantity": 0.01, "unit": "m3"}
  ],
  "Waste gas": [{"name": "CO2", "quantity": 0.12, "unit": "kg"}],
  "Wastewater": [{"name": "wastewater", "quantity": 0.004, "unit": "m3"}],
  "Solid waste": [{"name": "steel slag", "quantity": 0.12, "unit": "kg"},]
}"""

HOT_ROLLING_RESPONSE = (
    "Here is the inventory for the hot rolling stage of hot rolled round "
    "steel:\n"
    "```json\n"
    "{\n"
    '  "Product": [{"name": "hot rolled round steel", "quantity": 1.0, '
    '"unit": "kg"}],\n'
    '  "Raw material": [{"name": "crude steel", "quantity": 1.05, '
    '"unit": "kg", "source": "steelmaking"}],\n'
    '  "Energy": [\n'
    '    {"name": "electricity", "quantity": 0.07, "unit": "kWh"},\n'
    '    {"name": "electricity", "quantity": 0.05, "unit": "kWh"}\n'
    "  ],\n"
    '  "Waste gas": [{"name": "CO2", "quantity": 0.02, "unit": "kg"}],\n'
    '  "Wastewater": [],\n'
    '  "Solid waste": [{"name": "mill scale", "quantity": 0.02, '
    '"unit": "kg"}]\n'
    "}\n"
    "```\n"
    "Note: electricity is split between the reheating furnace and the mill "
    "drives."
)

INVENTORY_RESPONSES = {
    "sintering": SINTERING_RESPONSE,
    "ironmaking": IRONMAKING_RESPONSE,
    "steelmaking": STEELMAKING_RESPONSE,
    "hot rolling": HOT_ROLLING_RESPONSE,
}

# factor_id, name, reference unit, [(gas, intensity per unit), ...]
FACTORS = [
    ("ef-coke", "metallurgical coke", "kg", [("CO2e", 3.20)]),
    ("ef-coal", "hard coal", "kg", [("CO2e", 2.42)]),
    ("ef-elec", "electricity, medium voltage, at grid", "kWh",
     [("CO2e", 0.58)]),
    ("ef-ironore", "iron ore concentrate", "kg", [("CO2e", 0.045)]),
    ("ef-limestone", "limestone, crushed", "kg", [("CO2e", 0.06)]),
    ("ef-oxygen", "oxygen, liquid", "kg", [("CO2e", 0.20)]),
    ("ef-scrap", "steel scrap, sorted", "kg", [("CO2e", 0.02)]),
    ("ef-ng", "natural gas, high pressure", "m3",
     [("CO2", 1.9), ("CH4", 0.00037), ("N2O", 0.0000035)]),
    ("ef-slag", "slag disposal, residual landfill", "kg", [("CO2e", 0.01)]),
    ("ef-millscale", "mill scale disposal", "kg", [("CO2e", 0.012)]),
    ("ef-wwt", "wastewater treatment, industrial", "m3", [("CO2e", 0.30)]),
    ("ef-diesel", "diesel, burned in machinery", "kg", [("CO2e", 3.10)]),
    ("ef-steam", "steam, industrial", "kg", [("CO2e", 0.25)]),
]

# Concept groups for the embedding table. Names inside a group embed
# near-parallel (cosine ~0.96); across groups near-orthogonal (~0.0).
# Industry labels live in their own groups except "coking", which shares
# the coke group so the unaliased flow "coke" resolves semantically.
EMBEDDING_GROUPS = [
    ["coke", "metallurgical coke", "coking"],
    ["coal", "hard coal"],
    ["electricity", "electricity, medium voltage, at grid"],
    ["iron ore", "iron ore concentrate"],
    ["limestone", "limestone, crushed"],
    ["oxygen", "oxygen, liquid"],
    ["scrap steel", "steel scrap, sorted"],
    ["natural gas", "natural gas, high pressure"],
    ["steel slag", "slag disposal, residual landfill"],
    ["mill scale", "mill scale disposal"],
    ["wastewater", "wastewater treatment, industrial"],
    ["SO2", "sulfur dioxide"],
    ["diesel, burned in machinery"],
    ["steam, industrial"],
    ["steel"],
    ["mining"],
    ["power"],
    ["lime"],
    ["waste"],
    # Names the semantic evaluation rule embeds: process names from both
    # sides plus reference-only inventory items. Synonyms share a group so
    # their cosine clears the 0.85 evaluation threshold.
    ["CO2", "carbon dioxide"],
    ["sintering"],
    ["ironmaking"],
    ["steelmaking"],
    ["hot rolling", "rolling"],
    ["continuous casting", "continuous casting slab"],
    ["lubricating oil"],
    ["sinter"],
    ["pig iron"],
    ["crude steel"],
    ["hot rolled round steel"],
]

INDUSTRY_FACTS = [
    # industry, unit value (currency per kg), total value (currency)
    ("steel", 4.0, 400.0),
    ("mining", 0.8, 200.0),
    ("coking", 2.0, 100.0),
    ("power", 0.7, 300.0),
    ("lime", 0.5, 50.0),
    ("waste", 0.3, 80.0),
]

# Chosen so the implied per-kg material amounts sum to 1.02 for steel
# (residual 0.02, inside the default 0.05 balance tolerance).
COEFFICIENTS = [
    ("steel", "mining", 0.07),
    ("steel", "coking", 0.06),
    ("steel", "power", 0.06125),
    ("steel", "lime", 0.005),
    ("steel", "steel", 0.10),
    ("steel", "waste", 0.0045),
]

ENERGY_TOTALS = [
    ("steel", "electricity", 50.0, "kWh"),
    ("steel", "coal", 11.0, "kg"),
    ("steel", "natural gas", 1.5, "m3"),
]

WASTE_TOTALS = [
    ("steel", "CO2", 24.0, "kg"),
    ("steel", "wastewater", 0.5, "m3"),
    ("steel", "steel slag", 12.0, "kg"),
]

REGIONAL_VALUES = [
    ("steel", "north", 150.0),
    ("steel", "east", 100.0),
    ("steel", "south", 80.0),
    ("steel", "west", 50.0),
    ("steel", "central", 20.0),
    ("mining", "north", 120.0),
    ("mining", "east", 80.0),
    ("coking", "c-north", 60.0),
    ("coking", "c-south", 40.0),
    ("lime", "l-central", 50.0),
    ("power", "p-grid", 300.0),
    ("waste", "w-site", 80.0),
]

DESTINATION = "plant-east"
DISTANCES = [
    ("north", DESTINATION, 420.0),
    ("east", DESTINATION, 150.0),
    ("south", DESTINATION, 610.0),
    ("west", DESTINATION, 890.0),
    ("central", DESTINATION, 305.0),
    ("c-north", DESTINATION, 260.0),
    ("c-south", DESTINATION, 180.0),
    ("l-central", DESTINATION, 75.0),
    ("p-grid", DESTINATION, 40.0),
    ("w-site", DESTINATION, 25.0),
]

ALIASES = [
    ("sinter", "steel"),
    ("pig iron", "steel"),
    ("crude steel", "steel"),
    ("hot rolled round steel", "steel"),
    ("scrap steel", "steel"),
    ("iron ore", "mining"),
    ("limestone", "lime"),
]

REFERENCE = {
    "product": "hot rolled round steel",
    "processes": {
        "sintering": ["iron ore", "limestone", "coal", "electricity",
                      "sulfur dioxide"],
        "ironmaking": ["sinter", "coke", "electricity", "carbon dioxide"],
        "steelmaking": ["pig iron", "scrap steel", "oxygen", "electricity",
                        "natural gas", "wastewater", "carbon dioxide",
                        "steel slag"],
        "rolling": ["crude steel", "electricity", "carbon dioxide",
                    "mill scale", "lubricating oil"],
        "continuous casting": ["continuous casting slab"],
    },
    "alias_groups": [
        ["rolling", "hot rolling"],
        ["SO2", "sulfur dioxide"],
        ["CO2", "carbon dioxide"],
    ],
    "expert_pcf": {
        "median": 2.3,
        "q1": 2.0,
        "q3": 2.6,
        "citation": "sector LCA benchmark, hot rolled long steel products",
    },
}

CONFIG_DGA = """\
# Offline example: direct generation mode against the recorded transcript.
product:
  name: hot rolled round steel
  quantity: 1.0
  unit: kg
mode: DGA
provider:
  id: fixture-llm
  kind: fixture
  transcript: transcripts/source.jsonl
  temperature: 0.2
  max_tokens: 1024
factor_db: sample_factors.csv
embeddings: sample_embeddings.csv
thresholds:
  similarity: 0.5
trials: 5
seed: 7
workers: 1
reference: references/hot_rolled_round_steel.json
"""

CONFIG_IEA = """\
# Offline example: indirect estimation from industry input-output data.
product:
  name: hot rolled round steel
  quantity: 1.0
  unit: kg
mode: IEA
provider:
  id: fixture-llm
  kind: fixture
  transcript: transcripts/source.jsonl
  temperature: 0.2
  max_tokens: 1024
factor_db: sample_factors.csv
embeddings: sample_embeddings.csv
thresholds:
  similarity: 0.5
trials: 5
seed: 7
workers: 1
reference: references/hot_rolled_round_steel.json
iea:
  coefficients: iot/coefficients.csv
  facts: iot/facts.csv
  regional: iot/regional.csv
  energy: iot/energy.csv
  waste: iot/waste.csv
  distances: iot/distances.csv
  aliases: iot/aliases.csv
  destination_region: plant-east
  transport_factor_kg_km: 0.0001
  industry_threshold: 0.5
  balance_tolerance: 0.05
"""

PRODUCTS_CSV = """\
product,transcript,reference
hot rolled round steel,transcripts/source.jsonl,references/hot_rolled_round_steel.json
"""


def build_transcript() -> Transcript:
    exchanges = []

    def record(prompt, raw_text):
        exchanges.append(ExchangeRecord(
            prompt_sha256=prompt.sha256(), prompt_text=prompt.text,
            template_id=prompt.template_id.value, provider_id=PROVIDER_ID,
            params=PARAMS.to_record(), raw_text=raw_text,
            attempt_count=1, cache_hit=False, latency_ms=0.0))

    record(render_process_prompt(PRODUCT), PROCESS_RESPONSE)
    for process in PROCESSES:
        prompt = render_inventory_prompt(PRODUCT, PROCESSES, process)
        record(prompt, INVENTORY_RESPONSES[process])
    return Transcript(trial_id="source", exchanges=tuple(exchanges))


def write_embeddings(path: Path, dim: int = 768) -> None:
    rng = np.random.default_rng(20240817)

    def unit(v: np.ndarray) -> np.ndarray:
        return v / np.linalg.norm(v)

    lines = []
    for group in EMBEDDING_GROUPS:
        base = unit(rng.standard_normal(dim))
        for name in group:
            vector = unit(base + 0.01 * rng.standard_normal(dim))
            lines.append(name + "," + ",".join(f"{x:.6f}" for x in vector))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_factor_db(path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("factor_id", "name", "reference_unit", "gas",
                         "intensity", "source_tag", "geography"))
        for factor_id, name, ref_unit, gases in FACTORS:
            for gas, intensity in gases:
                writer.writerow((factor_id, name, ref_unit, gas,
                                 repr(intensity), "sample-db", "GLO"))


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default=None,
                        help="fixture directory (default: <repo>/fixtures)")
    args = parser.parse_args(argv)
    root = Path(args.root) if args.root else \
        Path(__file__).resolve().parent.parent / "fixtures"

    (root / "transcripts").mkdir(parents=True, exist_ok=True)
    (root / "references").mkdir(exist_ok=True)
    (root / "iot").mkdir(exist_ok=True)

    transcript = build_transcript()
    (root / "transcripts" / "source.jsonl").write_text(transcript.to_text(),
                                                       encoding="utf-8")
    write_embeddings(root / "sample_embeddings.csv")
    write_factor_db(root / "sample_factors.csv")
    (root / "references" / "hot_rolled_round_steel.json").write_text(
        json.dumps(REFERENCE, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8")

    write_csv(root / "iot" / "facts.csv",
              ("industry", "unit_value", "total_value"),
              [(i, repr(v), repr(t)) for i, v, t in INDUSTRY_FACTS])
    write_csv(root / "iot" / "coefficients.csv",
              ("industry_i", "industry_j", "value_coeff"),
              [(i, j, repr(v)) for i, j, v in COEFFICIENTS])
    write_csv(root / "iot" / "energy.csv",
              ("industry", "type", "amount", "unit"),
              [(i, t, repr(a), u) for i, t, a, u in ENERGY_TOTALS])
    write_csv(root / "iot" / "waste.csv",
              ("industry", "type", "amount", "unit"),
              [(i, t, repr(a), u) for i, t, a, u in WASTE_TOTALS])
    write_csv(root / "iot" / "regional.csv",
              ("industry", "region", "value"),
              [(i, r, repr(v)) for i, r, v in REGIONAL_VALUES])
    write_csv(root / "iot" / "distances.csv",
              ("from_region", "to_region", "km"),
              [(a, b, repr(km)) for a, b, km in DISTANCES])
    write_csv(root / "iot" / "aliases.csv",
              ("activity_name", "industry_id"), ALIASES)

    (root / "config.yaml").write_text(CONFIG_DGA, encoding="utf-8")
    (root / "config_iea.yaml").write_text(CONFIG_IEA, encoding="utf-8")
    (root / "products.csv").write_text(PRODUCTS_CSV, encoding="utf-8")

    written = sorted(str(p.relative_to(root)) for p in root.rglob("*")
                     if p.is_file())
    print(f"wrote {len(written)} files under {root}:")
    for name in written:
        print(f"  {name}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
