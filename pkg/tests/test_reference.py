"""Reference inventories and the trial-versus-expert evaluation."""

from __future__ import annotations

import json

import pytest

from conftest import flow, model_of, process, product_flow
from pcfkit.embeddings import EmbeddingService, FixtureEmbeddings
from pcfkit.errors import ReferenceUnreadable
from pcfkit.factors import load_factor_db
from pcfkit.gateway import FixtureProvider, Gateway
from pcfkit.gwp import default_gwp_table
from pcfkit.metrics import RULE_ALIAS_EXACT, RULE_SEMANTIC
from pcfkit.model import EntityType, ProductSpec
from pcfkit.reference import (
    ReferenceInventory,
    evaluate_product,
    load_reference,
    score_model,
)
from pcfkit.transcripts import load_transcript
from pcfkit.trials import run_trials

E = EntityType


def _reference(**overrides) -> ReferenceInventory:
    base = dict(
        product="rebar",
        process_names=("sintering", "casting"),
        items_by_process=(("sintering", ("iron ore", "coke")),
                          ("casting", ("slab",))),
        alias_groups=(("coke", "metallurgical coke"),),
        pcf_median=2.3,
        pcf_q1=2.0,
        pcf_q3=2.6,
    )
    base.update(overrides)
    return ReferenceInventory(**base)


def _model():
    return model_of(
        process("Sintering", 0, [
            product_flow("sinter", 1.0),
            flow(E.RAW_MATERIAL, "iron ore", 2.0),
            flow(E.RAW_MATERIAL, "metallurgical coke", 0.5),
        ]),
        process("rolling", 1, [
            product_flow("bar", 1.0),
            flow(E.RAW_MATERIAL, "Iron Ore", 0.1),
            flow(E.ENERGY, "electricity", 1.0),
        ]),
    )


# ---------------------------------------------------------------------------
# reference document


def test_reference_accepts_consistent_data():
    ref = _reference()
    assert ref.process_names == ("sintering", "casting")
    assert ref.all_items() == ("iron ore", "coke", "slab")


def test_all_items_deduplicates_across_processes():
    ref = _reference(items_by_process=(("a", ("iron ore", "Coke")),
                                       ("b", ("IRON ORE", "slag"))))
    assert ref.all_items() == ("iron ore", "Coke", "slag")


@pytest.mark.parametrize("median", [0.0, -2.3, float("nan"), float("inf")])
def test_reference_rejects_unusable_medians(median):
    with pytest.raises(ReferenceUnreadable):
        _reference(pcf_median=median)


def test_reference_rejects_disordered_quartiles():
    with pytest.raises(ReferenceUnreadable):
        _reference(pcf_q1=2.4)
    with pytest.raises(ReferenceUnreadable):
        _reference(pcf_q3=2.2)
    _reference(pcf_q1=None, pcf_q3=None)


def test_reference_rejects_overlapping_alias_groups():
    with pytest.raises(ReferenceUnreadable):
        _reference(alias_groups=(("coke", "met coke"), ("Coke", "char")))


def test_load_reference_roundtrip(tmp_path):
    payload = {
        "product": "rebar",
        "processes": {"sintering": ["iron ore"], "casting": ["slab"]},
        "alias_groups": [["coke", "met coke"]],
        "expert_pcf": {"median": 2.3, "q1": 2.0, "q3": 2.6,
                       "citation": "sector benchmark"},
    }
    path = tmp_path / "ref.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    ref = load_reference(path)
    assert ref.product == "rebar"
    assert ref.process_names == ("sintering", "casting")
    assert ref.items_by_process == (("sintering", ("iron ore",)),
                                    ("casting", ("slab",)))
    assert ref.alias_groups == (("coke", "met coke"),)
    assert ref.pcf_median == 2.3
    assert ref.pcf_q1 == 2.0
    assert ref.pcf_q3 == 2.6
    assert ref.citation == "sector benchmark"


@pytest.mark.parametrize("payload", [
    "not json at all",
    json.dumps({"product": "x"}),
    json.dumps({"product": "x", "processes": {},
                "expert_pcf": {"median": 2.0}}),
    json.dumps({"product": "x", "processes": ["a"],
                "expert_pcf": {"median": 2.0}}),
    json.dumps({"product": "x", "processes": {"a": []},
                "expert_pcf": {}}),
])
def test_load_reference_rejects_malformed_documents(tmp_path, payload):
    path = tmp_path / "ref.json"
    path.write_text(payload, encoding="utf-8")
    with pytest.raises(ReferenceUnreadable):
        load_reference(path)


def test_load_reference_missing_file(tmp_path):
    with pytest.raises(ReferenceUnreadable):
        load_reference(tmp_path / "absent.json")


def test_shipped_reference_loads(fixtures_dir):
    ref = load_reference(fixtures_dir / "references" /
                         "hot_rolled_round_steel.json")
    assert ref.product == "hot rolled round steel"
    assert len(ref.process_names) == 5
    assert ref.pcf_median == 2.3
    assert ref.pcf_q1 == 2.0 and ref.pcf_q3 == 2.6
    assert len(ref.alias_groups) == 3
    assert len(ref.all_items()) == 18


# ---------------------------------------------------------------------------
# scoring one model


def test_score_model_hand_counts():
    processes, inventory = score_model(_model(), _reference())
    # Processes: sintering matches (case-insensitively), rolling does not.
    assert processes.precision == pytest.approx(0.5)
    assert processes.recall == pytest.approx(0.5)
    assert processes.f1 == pytest.approx(0.5)
    # Items pool to {iron ore, metallurgical coke, electricity}; the first
    # two match (one via the alias group), electricity is spurious, and
    # the slab row is missed.
    assert inventory.precision == pytest.approx(2 / 3)
    assert inventory.recall == pytest.approx(2 / 3)


def test_score_model_pools_sourced_and_duplicate_items_once():
    model = model_of(process("Sintering", 0, [
        product_flow("sinter", 1.0),
        flow(E.RAW_MATERIAL, "iron ore", 2.0),
        flow(E.RAW_MATERIAL, "iron ore", 0.5, source=None),
    ]))
    ref = _reference(items_by_process=(("sintering", ("iron ore",)),))
    _, inventory = score_model(model, ref)
    assert inventory.precision == pytest.approx(1.0)
    assert inventory.recall == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# product-level evaluation


def test_evaluate_product_medians_and_error():
    models = [_model(), _model()]
    report = evaluate_product(models, [2.0, 2.4], _reference())
    assert report.product == "rebar"
    assert report.auto_median == pytest.approx(2.2)
    assert report.expert_median == 2.3
    assert report.pcf_error == pytest.approx(abs(1 - 2.2 / 2.3), rel=1e-12)
    assert report.distribution is not None
    assert len(report.per_trial_process_scores) == 2
    assert len(report.per_trial_inventory_scores) == 2
    assert report.matching_rule == RULE_ALIAS_EXACT
    # Identical models: the mean equals each trial's score.
    assert report.process_scores == report.per_trial_process_scores[0]


def test_evaluate_product_single_total():
    report = evaluate_product([_model()], [2.0], _reference())
    assert report.distribution is None
    assert report.auto_median == 2.0
    assert report.pcf_error == pytest.approx(abs(1 - 2.0 / 2.3), rel=1e-12)


def test_evaluate_product_without_totals_reports_no_error():
    report = evaluate_product([_model()], [], _reference())
    assert report.pcf_error is None
    assert report.auto_median is None
    assert report.expert_median is None
    assert report.distribution is None


# ---------------------------------------------------------------------------
# frozen corpus scores


@pytest.fixture()
def corpus_outcome(fixtures_dir):
    embeddings = EmbeddingService(
        FixtureEmbeddings.from_file(fixtures_dir / "sample_embeddings.csv"))
    index = load_factor_db(fixtures_dir / "sample_factors.csv",
                           embeddings=embeddings)
    transcript = load_transcript(fixtures_dir / "transcripts" / "source.jsonl")
    outcome = run_trials(
        ProductSpec(name="hot rolled round steel"), Gateway([]),
        lambda i: FixtureProvider.from_transcript(transcript),
        n=2, master_seed=7, index=index, gwp=default_gwp_table(),
        embeddings=embeddings)
    reference = load_reference(fixtures_dir / "references" /
                               "hot_rolled_round_steel.json")
    return outcome, reference, embeddings


def test_corpus_scores_reproduce_the_frozen_values(corpus_outcome):
    outcome, reference, _ = corpus_outcome
    report = evaluate_product([t.model for t in outcome.trials],
                              outcome.totals, reference)
    assert report.process_scores.precision == pytest.approx(1.0)
    assert report.process_scores.recall == pytest.approx(4 / 5)
    assert report.process_scores.f1 == pytest.approx(8 / 9)
    assert report.inventory_scores.precision == pytest.approx(1.0)
    assert report.inventory_scores.recall == pytest.approx(16 / 18)
    assert report.inventory_scores.f1 == pytest.approx(32 / 34)
    assert report.pcf_error == pytest.approx(0.031150923913043305, rel=1e-12)


def test_corpus_semantic_rule_agrees_with_alias_exact(corpus_outcome):
    outcome, reference, embeddings = corpus_outcome
    exact = evaluate_product([t.model for t in outcome.trials],
                             outcome.totals, reference)
    semantic = evaluate_product([t.model for t in outcome.trials],
                                outcome.totals, reference,
                                rule=RULE_SEMANTIC, embeddings=embeddings)
    assert semantic.matching_rule == RULE_SEMANTIC
    assert semantic.process_scores == exact.process_scores
    assert semantic.inventory_scores == exact.inventory_scores
