"""Linking parsed inventories into a validated life-cycle model."""

from __future__ import annotations

import pytest

from conftest import flow, model_of, process, product_flow
from pcfkit.assembly import build_life_cycle_model
from pcfkit.diagnostics import DiagnosticSink
from pcfkit.errors import EmptyModel, SchemaViolation
from pcfkit.model import (
    EntityType,
    ProductSpec,
    TrialProvenance,
    validate_model,
)

E = EntityType
SPEC = ProductSpec(name="rebar")


def _inventories():
    return [
        process("Sintering", 99, [product_flow("sinter", 1.4),
                                  flow(E.RAW_MATERIAL, "iron ore", 2.0)]),
        process("Casting", 0, [product_flow("rebar", 1.0),
                               flow(E.RAW_MATERIAL, "sinter", 1.5,
                                    source="sintering")]),
    ]


def test_assembles_in_generation_order():
    model = build_life_cycle_model(SPEC, _inventories())
    assert [p.process_name for p in model.processes] == ["Sintering", "Casting"]
    assert [p.ordinal for p in model.processes] == [0, 1]
    assert validate_model(model) == []


def test_source_rewritten_to_canonical_spelling():
    model = build_life_cycle_model(SPEC, _inventories())
    sourced = model.processes[1].flows[1]
    assert sourced.source == "Sintering"


def test_duplicate_process_names_keep_the_first():
    inventories = _inventories() + [
        process("  sintering ", 0, [product_flow("sinter", 9.9)]),
    ]
    sink = DiagnosticSink()
    model = build_life_cycle_model(SPEC, inventories, sink=sink)
    assert len(model.processes) == 2
    assert model.processes[0].flows[0].quantity == 1.4
    assert [d.rule for d in sink] == ["duplicate-process-dropped"]


@pytest.mark.parametrize("bad_source", ["casting", "finishing", "Casting"])
def test_non_earlier_sources_are_cleared(bad_source):
    # Self links, forward links, and unknown names all demote the flow to
    # an external input instead of failing the trial.
    inventories = [
        process("Casting", 0, [product_flow("rebar", 1.0),
                               flow(E.RAW_MATERIAL, "slab", 1.1,
                                    source=bad_source)]),
        process("Finishing", 1, [product_flow("rebar coil", 1.0)]),
    ]
    sink = DiagnosticSink()
    model = build_life_cycle_model(SPEC, inventories, sink=sink)
    assert model.processes[0].flows[1].source is None
    assert "unresolved-source-cleared" in [d.rule for d in sink]


def test_empty_input_is_an_empty_model_error():
    with pytest.raises(EmptyModel):
        build_life_cycle_model(SPEC, [])


def test_invalid_assembled_model_raises_schema_violation():
    inventories = [process("Casting", 0,
                           [flow(E.RAW_MATERIAL, "iron ore", 2.0)])]
    with pytest.raises(SchemaViolation) as err:
        build_life_cycle_model(SPEC, inventories)
    assert err.value.diagnostics
    assert any(d.severity == "error" for d in err.value.diagnostics)


def test_provenance_defaults_and_passthrough():
    model = build_life_cycle_model(SPEC, _inventories())
    assert model.provenance.provider_id == "unknown"
    tagged = build_life_cycle_model(
        SPEC, _inventories(),
        provenance=TrialProvenance(provider_id="fx", seed=11, trial_index=3))
    assert tagged.provenance.provider_id == "fx"
    assert tagged.provenance.seed == 11


def test_unsourced_flows_pass_through_untouched():
    inventories = _inventories()
    model = build_life_cycle_model(SPEC, inventories)
    assert model.processes[0].flows == model_of(*inventories).processes[0].flows
