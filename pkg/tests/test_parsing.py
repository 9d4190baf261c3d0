"""The repair ladder, the wire schema, and round-trip stability.

The ladder's contract: clean JSON parses untouched; a fence, surrounding
prose, or a trailing comma each cost one tagged repair and must yield the
exact same payload as the clean text. Everything the ladder cannot fix is a
typed error, never a crash, which the fuzz loop checks at volume.
"""

from __future__ import annotations

import json
import random
import string

import pytest

from pcfkit.errors import ParseError, SchemaViolation, UnparseableResponse
from pcfkit.model import EntityType, FlowEntry, ProcessInventory
from pcfkit.parsing import (
    NONE_SIGNAL,
    REPAIR_COMMA,
    REPAIR_FENCE,
    REPAIR_PROSE,
    ParseOutcome,
    canonical_entity_key,
    parse_inventory_json,
    parse_process_list,
    serialize_inventory,
    try_parse_inventory,
    try_parse_process_list,
)
from pcfkit.units import Unit

CLEAN_INVENTORY = json.dumps({
    "Product": [{"name": "crude steel", "quantity": 1.05, "unit": "kg"}],
    "Raw material": [
        {"name": "pig iron", "quantity": 0.98, "unit": "kg",
         "source": "ironmaking"},
        {"name": "scrap steel", "quantity": 0.15, "unit": "kg",
         "source": "None"},
    ],
    "Energy": [{"name": "electricity", "quantity": 0.09, "unit": "kWh"}],
    "Waste gas": [{"name": "CO2", "quantity": 0.12, "unit": "kg"}],
    "Wastewater": [],
    "Solid waste": [{"name": "slag", "quantity": 0.12, "unit": "kg"}],
}, indent=2)


# --- process list -------------------------------------------------------------

def test_process_list_clean_array():
    out = try_parse_process_list('["mining", "smelting"]')
    assert out.payload == ["mining", "smelting"]
    assert out.repairs_applied == ()


def test_process_list_fenced():
    out = try_parse_process_list('```json\n["a", "b"]\n```')
    assert out.payload == ["a", "b"]
    assert out.repairs_applied == (REPAIR_FENCE,)


def test_process_list_fence_with_prose():
    out = try_parse_process_list(
        'Sure, here are the steps:\n```json\n["a", "b"]\n```\nHope it helps!')
    assert out.payload == ["a", "b"]
    assert out.repairs_applied == (REPAIR_FENCE, REPAIR_PROSE)


def test_process_list_embedded_in_prose():
    out = try_parse_process_list('The steps are ["cast", "roll"] as asked.')
    assert out.payload == ["cast", "roll"]
    assert REPAIR_PROSE in out.repairs_applied


def test_process_list_dedups_case_insensitively_first_wins():
    out = try_parse_process_list('["Rolling", "rolling", " rolling ", "cast"]')
    assert out.payload == ["Rolling", "cast"]


def test_process_list_drops_blank_entries():
    out = try_parse_process_list('["", "  ", "melt"]')
    assert out.payload == ["melt"]


def test_process_list_none_signal_variants():
    for text in ("None", "none", '"None"', "None.", "  none  ",
                 "```\nNone\n```"):
        out = try_parse_process_list(text)
        assert out.payload is NONE_SIGNAL, text


def test_process_list_rejects_non_arrays():
    out = try_parse_process_list('{"steps": 3}')
    assert out.rejected
    out = try_parse_process_list("[1, 2, 3]")
    assert out.rejected
    out = try_parse_process_list("no json here at all")
    assert out.rejected
    with pytest.raises(UnparseableResponse):
        parse_process_list("no json here at all")


def test_process_list_skips_numeric_array_for_later_string_array():
    out = try_parse_process_list('scores [1, 2] then steps ["a", "b"]')
    assert out.payload == ["a", "b"]


# --- inventory: shapes and repairs --------------------------------------------

def test_inventory_clean_parse_no_repairs():
    out = try_parse_inventory(CLEAN_INVENTORY, "steelmaking")
    assert not out.rejected
    assert out.repairs_applied == ()
    inv = out.payload
    assert isinstance(inv, ProcessInventory)
    assert inv.process_name == "steelmaking"
    assert len(inv.flows) == 6


def test_inventory_repair_variants_equal_clean_payload():
    clean = try_parse_inventory(CLEAN_INVENTORY, "steelmaking").payload
    fenced = "```json\n" + CLEAN_INVENTORY + "\n```"
    prosed = ("Here is the inventory you asked for:\n" + fenced
              + "\nLet me know if anything is unclear.")
    # A trailing comma inside the last list, no fence, no prose.
    comma = CLEAN_INVENTORY.replace("}\n  ]\n}", "},\n  ]\n}")
    assert comma != CLEAN_INVENTORY

    for text, expected_tags in ((fenced, {REPAIR_FENCE}),
                                (prosed, {REPAIR_FENCE, REPAIR_PROSE}),
                                (comma, {REPAIR_COMMA})):
        out = try_parse_inventory(text, "steelmaking")
        assert not out.rejected, text[:60]
        assert set(out.repairs_applied) == expected_tags
        assert out.payload == clean


def test_inventory_entity_key_tolerance():
    assert canonical_entity_key("Raw materials") is EntityType.RAW_MATERIAL
    assert canonical_entity_key("raw_material") is EntityType.RAW_MATERIAL
    assert canonical_entity_key("SOLID WASTES") is EntityType.SOLID_WASTE
    assert canonical_entity_key("Waste water") is EntityType.WASTEWATER
    assert canonical_entity_key("waste gasses") is None
    assert canonical_entity_key("inputs") is None
    assert canonical_entity_key(7) is None


def test_inventory_plural_and_underscore_keys_parse():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Raw materials": [{"name": "ore", "quantity": 2, "unit": "kg",
                           "source": "None"}],
        "solid_wastes": [{"name": "slag", "quantity": 0.1, "unit": "kg"}],
    })
    inv = parse_inventory_json(text, "p")
    kinds = {f.entity_type for f in inv.flows}
    assert kinds == {EntityType.PRODUCT, EntityType.RAW_MATERIAL,
                     EntityType.SOLID_WASTE}


def test_inventory_null_entity_value_is_tolerated():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Wastewater": None,
    })
    inv = parse_inventory_json(text, "p")
    assert len(inv.flows) == 1


def test_inventory_mj_energy_converts_to_kwh_at_the_door():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Energy": [{"name": "electricity", "quantity": 7.2, "unit": "MJ"}],
    })
    inv = parse_inventory_json(text, "p")
    energy = inv.flows_of(EntityType.ENERGY)[0]
    assert energy.unit is Unit.KWH
    assert energy.quantity == pytest.approx(2.0, rel=1e-15)


def test_inventory_source_none_variants_mean_absent():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Raw material": [
            {"name": "a", "quantity": 1, "unit": "kg", "source": "None"},
            {"name": "b", "quantity": 1, "unit": "kg", "source": "none"},
            {"name": "c", "quantity": 1, "unit": "kg", "source": ""},
            {"name": "d", "quantity": 1, "unit": "kg", "source": None},
            {"name": "e", "quantity": 1, "unit": "kg", "source": "melt"},
        ],
    })
    inv = parse_inventory_json(text, "p")
    sources = {f.name: f.source for f in inv.flows_of(EntityType.RAW_MATERIAL)}
    assert sources == {"a": None, "b": None, "c": None, "d": None, "e": "melt"}


def test_inventory_duplicate_flows_merge_by_summing():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Energy": [
            {"name": "electricity", "quantity": 0.07, "unit": "kWh"},
            {"name": "Electricity", "quantity": 0.05, "unit": "kWh"},
        ],
    })
    out = try_parse_inventory(text, "p")
    energy = out.payload.flows_of(EntityType.ENERGY)
    assert len(energy) == 1
    assert energy[0].quantity == pytest.approx(0.12)
    assert any(d.rule == "duplicate-flow-merged" for d in out.diagnostics)


def test_inventory_same_name_different_unit_not_merged():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Solid waste": [
            {"name": "residue", "quantity": 1.0, "unit": "kg"},
            {"name": "residue", "quantity": 2.0, "unit": "m3"},
        ],
    })
    inv = parse_inventory_json(text, "p")
    assert len(inv.flows_of(EntityType.SOLID_WASTE)) == 2


# --- inventory: schema violations ---------------------------------------------

def _inventory_with(items, key="Raw material"):
    wire = {"Product": [{"name": "x", "quantity": 1, "unit": "kg"}], key: items}
    return json.dumps(wire)


@pytest.mark.parametrize("item,rule", [
    ({"quantity": 1, "unit": "kg"}, "missing-name"),
    ({"name": "", "quantity": 1, "unit": "kg"}, "missing-name"),
    ({"name": "a", "quantity": "2.5", "unit": "kg"}, "non-numeric-quantity"),
    ({"name": "a", "quantity": True, "unit": "kg"}, "non-numeric-quantity"),
    ({"name": "a", "quantity": None, "unit": "kg"}, "non-numeric-quantity"),
    ({"name": "a", "quantity": -1, "unit": "kg"}, "negative-quantity"),
    ({"name": "a", "quantity": 1, "unit": "tonne"}, "unit-not-allowed"),
    ({"name": "a", "quantity": 1, "unit": 5}, "unit-not-allowed"),
    ({"name": "a", "quantity": 1, "unit": "kg", "source": 3}, "source-not-text"),
    ("just a string", "item-not-object"),
])
def test_inventory_item_violations(item, rule):
    out = try_parse_inventory(_inventory_with([item]), "p")
    assert out.rejected
    assert rule in {d.rule for d in out.diagnostics}
    with pytest.raises(SchemaViolation):
        parse_inventory_json(_inventory_with([item]), "p")


def test_inventory_requires_a_product_flow():
    text = json.dumps({"Energy": [{"name": "e", "quantity": 1, "unit": "kWh"}]})
    out = try_parse_inventory(text, "p")
    assert out.rejected
    assert "missing-product-flow" in {d.rule for d in out.diagnostics}


def test_inventory_unknown_keys_are_errors():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Byproducts": [{"name": "y", "quantity": 1, "unit": "kg"}],
    })
    out = try_parse_inventory(text, "p")
    assert out.rejected
    assert "unknown-entity-key" in {d.rule for d in out.diagnostics}


def test_inventory_source_on_non_raw_material_is_only_a_warning():
    text = json.dumps({
        "Product": [{"name": "x", "quantity": 1, "unit": "kg"}],
        "Energy": [{"name": "e", "quantity": 1, "unit": "kWh",
                    "source": "melt"}],
    })
    out = try_parse_inventory(text, "p")
    assert not out.rejected
    warning = [d for d in out.diagnostics
               if d.rule == "source-on-non-raw-material"]
    assert warning and warning[0].severity == "warning"
    energy = out.payload.flows_of(EntityType.ENERGY)[0]
    assert energy.source is None


def test_inventory_no_json_at_all():
    out = try_parse_inventory("I cannot provide that information.", "p")
    assert out.rejected
    with pytest.raises(UnparseableResponse):
        parse_inventory_json("I cannot provide that information.", "p")


def test_parse_outcome_invariants():
    with pytest.raises(ValueError):
        ParseOutcome(payload=[], rejected=True)
    with pytest.raises(ValueError):
        ParseOutcome(repairs_applied=("weld",))


# --- round trip ---------------------------------------------------------------

ENTITY_UNITS = {
    EntityType.PRODUCT: (Unit.KG, Unit.M, Unit.M3),
    EntityType.RAW_MATERIAL: (Unit.KG, Unit.M3),
    EntityType.ENERGY: (Unit.KWH,),
    EntityType.WASTE_GAS: (Unit.KG,),
    EntityType.WASTEWATER: (Unit.M3, Unit.KG),
    EntityType.SOLID_WASTE: (Unit.KG,),
}


def _random_inventory(rng: random.Random, ordinal: int = 0) -> ProcessInventory:
    flows = [FlowEntry(entity_type=EntityType.PRODUCT,
                       name=f"out {rng.randint(0, 999)}",
                       quantity=rng.uniform(0.1, 10.0),
                       unit=rng.choice(ENTITY_UNITS[EntityType.PRODUCT]))]
    used = set()
    for entity in (EntityType.RAW_MATERIAL, EntityType.ENERGY,
                   EntityType.WASTE_GAS, EntityType.WASTEWATER,
                   EntityType.SOLID_WASTE):
        for _ in range(rng.randint(0, 3)):
            name = f"{entity.value.lower()} {rng.randint(0, 999)}"
            if (entity, name) in used:
                continue
            used.add((entity, name))
            source = None
            if entity is EntityType.RAW_MATERIAL and rng.random() < 0.3:
                source = f"stage {rng.randint(0, 9)}"
            flows.append(FlowEntry(entity_type=entity, name=name,
                                   quantity=rng.uniform(0.0, 100.0),
                                   unit=rng.choice(ENTITY_UNITS[entity]),
                                   source=source))
    return ProcessInventory(process_name=f"proc-{ordinal}", ordinal=ordinal,
                            flows=tuple(flows))


def test_serialize_parse_round_trip_on_random_inventories():
    rng = random.Random(20240805)
    for i in range(200):
        inventory = _random_inventory(rng, ordinal=i % 7)
        text = serialize_inventory(inventory)
        back = parse_inventory_json(text, inventory.process_name,
                                    ordinal=inventory.ordinal)
        assert back == inventory


def test_round_trip_survives_the_three_repairs():
    rng = random.Random(20240806)
    for i in range(60):
        inventory = _random_inventory(rng, ordinal=0)
        clean = serialize_inventory(inventory)
        dirty = [
            "```json\n" + clean + "\n```",
            "Output below.\n```json\n" + clean + "\n```\nDone.",
            clean.replace("}\n  ]", "},\n  ]", 1),
        ]
        for text in dirty:
            back = parse_inventory_json(text, inventory.process_name)
            assert back == inventory


# --- fuzz ---------------------------------------------------------------------

_FRAGMENTS = [
    "{", "}", "[", "]", '"name"', '"quantity"', '"unit"', ":", ",",
    '"Product"', '"Raw material"', '"Energy"', "null", "true", "3.5", "-1",
    "NaN", '"kg"', '"kWh"', "```json", "```", "\n", "None", "prose text ",
    '{"name": "x", "quantity": 1, "unit": "kg"}', '"\\u00e9"', "1e308",
    '{"Product": []}', "[]", '["a"]',
]


def _random_blob(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.4:
        return "".join(rng.choice(_FRAGMENTS)
                       for _ in range(rng.randint(0, 25)))
    if kind < 0.7:
        alphabet = string.printable
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 200)))
    # Mutate valid JSON by random splices.
    text = list(CLEAN_INVENTORY)
    for _ in range(rng.randint(1, 12)):
        pos = rng.randrange(len(text))
        if rng.random() < 0.5:
            text[pos] = rng.choice(string.printable)
        else:
            del text[pos]
    return "".join(text)


def test_fuzz_inventory_parser_raises_only_typed_errors():
    rng = random.Random(424242)
    rejected = 0
    for _ in range(10000):
        blob = _random_blob(rng)
        outcome = try_parse_inventory(blob, "fuzz")
        if outcome.rejected:
            rejected += 1
            with pytest.raises(ParseError):
                parse_inventory_json(blob, "fuzz")
        else:
            assert isinstance(outcome.payload, ProcessInventory)
    # The corpus is hostile: most blobs must be rejected, not crash.
    assert rejected > 5000


def test_fuzz_process_list_parser_raises_only_typed_errors():
    rng = random.Random(515151)
    for _ in range(3000):
        blob = _random_blob(rng)
        outcome = try_parse_process_list(blob)
        if outcome.rejected:
            with pytest.raises(UnparseableResponse):
                parse_process_list(blob)
        else:
            assert outcome.payload is NONE_SIGNAL or isinstance(
                outcome.payload, list)
