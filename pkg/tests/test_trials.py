"""Seed derivation and the repeated-trial runner over the shipped corpus."""

from __future__ import annotations

import json

import pytest

from pcfkit.embeddings import EmbeddingService, FixtureEmbeddings
from pcfkit.errors import StageError
from pcfkit.factors import load_factor_db
from pcfkit.gateway import FixtureProvider, Gateway
from pcfkit.gwp import default_gwp_table
from pcfkit.model import ProductSpec
from pcfkit.pipeline import run_single_trial
from pcfkit.prompts import (
    corrective_prompt,
    render_inventory_prompt,
    render_process_prompt,
)
from pcfkit.seeds import derive_seed, make_rng
from pcfkit.transcripts import load_transcript
from pcfkit.trials import TrialFailure, run_trials

PRODUCT = ProductSpec(name="hot rolled round steel")

# Frozen pipeline total for the shipped corpus, one functional unit.
CORPUS_TOTAL = 2.228352875


@pytest.fixture()
def corpus(fixtures_dir):
    embeddings = EmbeddingService(
        FixtureEmbeddings.from_file(fixtures_dir / "sample_embeddings.csv"))
    index = load_factor_db(fixtures_dir / "sample_factors.csv",
                           embeddings=embeddings)
    transcript = load_transcript(fixtures_dir / "transcripts" / "source.jsonl")
    return dict(embeddings=embeddings, index=index, transcript=transcript,
                gwp=default_gwp_table())


def _factory(transcript):
    return lambda i: FixtureProvider.from_transcript(transcript)


# ---------------------------------------------------------------------------
# seed derivation


def test_derive_seed_is_stable_and_labels_matter():
    assert derive_seed(7, "trial", 0) == derive_seed(7, "trial", 0)
    assert derive_seed(7, "trial", 0) != derive_seed(7, "trial", 1)
    assert derive_seed(7, "trial", 0) != derive_seed(8, "trial", 0)
    assert derive_seed(7, "trial") != derive_seed(7, "transport")
    for seed in [derive_seed(s, "x") for s in range(20)]:
        assert 0 <= seed < 2 ** 64


def test_make_rng_reproduces_streams():
    first = make_rng(7, "trial", 3)
    second = make_rng(7, "trial", 3)
    a = [first.random() for _ in range(5)]
    b = [second.random() for _ in range(5)]
    assert a == b
    assert len(set(a)) == 5


# ---------------------------------------------------------------------------
# single trial over the corpus


def test_single_trial_reproduces_the_frozen_total(corpus):
    out = run_single_trial(PRODUCT, Gateway([]),
                           FixtureProvider.from_transcript(corpus["transcript"]),
                           index=corpus["index"], gwp=corpus["gwp"],
                           embeddings=corpus["embeddings"], seed=123,
                           trial_index=4)
    assert out.result.total_co2e_kg == pytest.approx(CORPUS_TOTAL, rel=1e-9)
    assert out.trial_id == "trial-004"
    assert out.provenance.seed == 123
    assert len(out.model.processes) == 4
    assert out.estimate is None
    # The corpus exercises the repair ladder (fencing, prose, a trailing
    # comma) and a duplicated energy entry, all on the first attempt.
    rules = [d.rule for d in out.diagnostics]
    assert "repairs-applied" in rules
    assert "duplicate-flow-merged" in rules
    assert "parse-rejected" not in rules
    # Replay fidelity: the re-recorded responses hash like the source file.
    assert out.transcript.content_sha256 == corpus["transcript"].content_sha256


def test_single_trial_corrective_retry_recovers_a_bad_answer(corpus):
    spec = ProductSpec(name="test widget")
    breakdown = render_process_prompt(spec)
    inventory = render_inventory_prompt(spec, ["assembly"], "assembly")
    retry = corrective_prompt(inventory)
    good = json.dumps({
        "Product": [{"name": "test widget", "quantity": 1, "unit": "kg"}],
        "Waste gas": [{"name": "CO2", "quantity": 0.5, "unit": "kg"}],
    })
    provider = FixtureProvider("fx", [
        (breakdown.sha256(), '["assembly"]'),
        (inventory.sha256(), "utterly not an inventory"),
        (retry.sha256(), good),
    ])
    out = run_single_trial(spec, Gateway([]), provider, index=corpus["index"],
                           gwp=corpus["gwp"],
                           embeddings=corpus["embeddings"])
    rules = [d.rule for d in out.diagnostics]
    assert "parse-rejected" in rules
    assert "corrective-retry-succeeded" in rules
    assert len(out.transcript.exchanges) == 3
    # The only emission is the directly declared greenhouse gas.
    assert out.result.total_co2e_kg == pytest.approx(0.5)


def test_single_trial_fails_when_the_retry_is_also_bad(corpus):
    spec = ProductSpec(name="test widget")
    breakdown = render_process_prompt(spec)
    inventory = render_inventory_prompt(spec, ["assembly"], "assembly")
    retry = corrective_prompt(inventory)
    provider = FixtureProvider("fx", [
        (breakdown.sha256(), '["assembly"]'),
        (inventory.sha256(), "still not an inventory"),
        (retry.sha256(), "and neither is this"),
    ])
    with pytest.raises(StageError) as err:
        run_single_trial(spec, Gateway([]), provider, index=corpus["index"],
                         gwp=corpus["gwp"], embeddings=corpus["embeddings"])
    assert err.value.stage == "inventory"


def test_single_trial_validates_mode(corpus):
    kwargs = dict(index=corpus["index"], gwp=corpus["gwp"],
                  embeddings=corpus["embeddings"])
    with pytest.raises(StageError) as err:
        run_single_trial(PRODUCT, Gateway([]),
                         FixtureProvider.from_transcript(corpus["transcript"]),
                         mode="XXX", **kwargs)
    assert err.value.stage == "config"
    with pytest.raises(StageError) as err:
        run_single_trial(PRODUCT, Gateway([]),
                         FixtureProvider.from_transcript(corpus["transcript"]),
                         mode="IEA", iea=None, **kwargs)
    assert err.value.stage == "config"


def test_single_trial_names_the_broken_stage(corpus):
    empty = FixtureProvider("fx")
    with pytest.raises(StageError) as err:
        run_single_trial(PRODUCT, Gateway([]), empty, index=corpus["index"],
                         gwp=corpus["gwp"], embeddings=corpus["embeddings"])
    assert err.value.stage == "process-breakdown"
    assert err.value.cause is not None


# ---------------------------------------------------------------------------
# repeated trials


def test_run_trials_repeats_identically_on_recorded_responses(corpus):
    outcome = run_trials(PRODUCT, Gateway([]), _factory(corpus["transcript"]),
                         n=3, master_seed=7, index=corpus["index"],
                         gwp=corpus["gwp"], embeddings=corpus["embeddings"])
    assert outcome.failures == ()
    assert outcome.n_requested == 3
    assert [t.trial_id for t in outcome.trials] == \
        ["trial-000", "trial-001", "trial-002"]
    for total in outcome.totals:
        assert total == pytest.approx(CORPUS_TOTAL, rel=1e-9)
    # Identical totals: zero spread, but still a reportable distribution.
    assert outcome.distribution is not None
    assert outcome.distribution.adjusted_cv == pytest.approx(0.0, abs=1e-15)


def test_run_trials_derives_one_seed_per_trial(corpus):
    outcome = run_trials(PRODUCT, Gateway([]), _factory(corpus["transcript"]),
                         n=3, master_seed=7, index=corpus["index"],
                         gwp=corpus["gwp"], embeddings=corpus["embeddings"])
    seeds = [t.provenance.seed for t in outcome.trials]
    assert seeds == [derive_seed(7, "trial", i) for i in range(3)]
    assert len(set(seeds)) == 3


def test_run_trials_collects_failures_without_aborting(corpus):
    def factory(i):
        if i == 1:
            return FixtureProvider("fx")  # nothing recorded: trial 1 dies
        return FixtureProvider.from_transcript(corpus["transcript"])

    outcome = run_trials(PRODUCT, Gateway([]), factory, n=3, master_seed=7,
                         index=corpus["index"], gwp=corpus["gwp"],
                         embeddings=corpus["embeddings"])
    assert len(outcome.trials) == 2
    assert len(outcome.failures) == 1
    failure = outcome.failures[0]
    assert failure.trial_id == "trial-001"
    assert failure.stage == "process-breakdown"
    assert failure.cause is not None
    assert outcome.n_requested == 3
    assert len(outcome.totals) == 2


def test_failure_record_never_carries_the_exception():
    failure = TrialFailure(trial_id="trial-000", stage="inventory",
                           message="boom", cause=ValueError("boom"))
    assert failure.to_record() == {"trial_id": "trial-000",
                                   "stage": "inventory", "message": "boom"}


def test_run_trials_single_success_has_no_distribution(corpus):
    outcome = run_trials(PRODUCT, Gateway([]), _factory(corpus["transcript"]),
                         n=1, master_seed=7, index=corpus["index"],
                         gwp=corpus["gwp"], embeddings=corpus["embeddings"])
    assert outcome.distribution is None
    assert len(outcome.totals) == 1


def test_run_trials_worker_pool_matches_serial(corpus):
    kwargs = dict(master_seed=7, index=corpus["index"], gwp=corpus["gwp"],
                  embeddings=corpus["embeddings"])
    serial = run_trials(PRODUCT, Gateway([]), _factory(corpus["transcript"]),
                        n=4, workers=1, **kwargs)
    pooled = run_trials(PRODUCT, Gateway([]), _factory(corpus["transcript"]),
                        n=4, workers=3, **kwargs)
    assert pooled.totals == serial.totals
    assert [t.trial_id for t in pooled.trials] == \
        [t.trial_id for t in serial.trials]
    assert [t.provenance.seed for t in pooled.trials] == \
        [t.provenance.seed for t in serial.trials]


def test_trial_transport_rng_streams_are_disjoint():
    streams = [make_rng(7, "trial", i, "transport") for i in range(3)]
    draws = [[rng.random() for _ in range(4)] for rng in streams]
    assert draws[0] != draws[1]
    assert draws[1] != draws[2]
    again = [make_rng(7, "trial", i, "transport") for i in range(3)]
    assert [[rng.random() for _ in range(4)] for rng in again] == draws
