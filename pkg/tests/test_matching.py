"""Factor database loading and nearest-factor assignment.

The matcher is an exhaustive cosine scan, so the oracle here is the same
idea written the slow way: normalize both vectors explicitly, compute every
dot product in a Python loop, sort. Winner, similarity, tie-break, and
runner-up must all agree.
"""

from __future__ import annotations

import numpy as np
import pytest

from conftest import EMBED_DIM, clustered_vectors, embedding_service, pad_vector
from pcfkit.embeddings import EmbeddingVector, cosine_similarity
from pcfkit.errors import ConfigInvalid, FileUnreadable, ZeroNormVector
from pcfkit.factors import (
    DEFAULT_SIMILARITY_THRESHOLD,
    EmissionFactor,
    FactorIndex,
    MatchResult,
    load_factor_db,
    match_factor,
    match_factor_vector,
)
from pcfkit.gwp import default_gwp_table
from pcfkit.units import Unit

GWP = default_gwp_table()


def _factor(fid, name=None, unit=Unit.KG, gases=(("CO2e", 1.0),)):
    return EmissionFactor(factor_id=fid, name=name or fid,
                          reference_unit=unit, gas_intensities=tuple(gases))


def _vec(values) -> EmbeddingVector:
    return EmbeddingVector(label="v", values=pad_vector(values))


# --- EmissionFactor invariants --------------------------------------------------

def test_factor_aggregate_detection():
    agg = _factor("a", gases=(("CO2e", 2.5),))
    assert agg.aggregate
    per_gas = _factor("b", gases=(("CO2", 1.9), ("CH4", 0.1)))
    assert not per_gas.aggregate


def test_factor_aggregate_and_per_gas_rows_are_exclusive():
    with pytest.raises(ConfigInvalid):
        _factor("bad", gases=(("CO2e", 1.0), ("CH4", 0.1)))


def test_factor_rejects_bad_intensities():
    with pytest.raises(ConfigInvalid):
        _factor("bad", gases=(("CO2", -1.0),))
    with pytest.raises(ConfigInvalid):
        _factor("bad", gases=())
    with pytest.raises(ConfigInvalid):
        EmissionFactor(factor_id="  ", name="x", reference_unit=Unit.KG,
                       gas_intensities=(("CO2", 1.0),))


def test_co2e_per_unit_weights_gases():
    agg = _factor("a", gases=(("CO2e", 2.5),))
    assert agg.co2e_per_unit(GWP) == 2.5
    per_gas = _factor("b", gases=(("CO2", 1.9), ("CH4", 0.00037),
                                  ("N2O", 3.5e-6)))
    expected = 1.9 + 0.00037 * 28 + 3.5e-6 * 265
    assert per_gas.co2e_per_unit(GWP) == pytest.approx(expected, rel=1e-15)


def test_match_result_invariants():
    with pytest.raises(ConfigInvalid):
        MatchResult(activity_name="x", factor_id="f", similarity=0.9,
                    matched=False)
    with pytest.raises(ConfigInvalid):
        MatchResult(activity_name="x", factor_id=None, similarity=0.9,
                    matched=True)
    with pytest.raises(ConfigInvalid):
        MatchResult(activity_name="x", factor_id="f", similarity=0.5,
                    matched=True, runner_up=("g", 0.7))


# --- nearest-factor scan --------------------------------------------------------

def _random_index(rng: np.random.Generator, n: int):
    factors, vectors = [], []
    for i in range(n):
        factors.append(_factor(f"ef-{i:04d}"))
        vectors.append(rng.standard_normal(EMBED_DIM))
    pairs = [(f, EmbeddingVector(label=f.factor_id, values=v))
             for f, v in zip(factors, vectors)]
    return FactorIndex(pairs), vectors


def _oracle_scan(query, vectors, factors):
    """Slow-path nearest neighbor: explicit cosine per factor, then sort."""
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    sims = []
    for f, v in zip(factors, vectors):
        sims.append((float(np.dot(q, v) / (qn * np.linalg.norm(v))),
                     f.factor_id))
    best_sim = max(s for s, _ in sims)
    winner = min(fid for s, fid in sims if s == best_sim)
    rest = [(s, fid) for s, fid in sims if fid != winner]
    second_sim = max(s for s, _ in rest)
    second = min(fid for s, fid in rest if s == second_sim)
    return best_sim, winner, second_sim, second


def test_matcher_agrees_with_linear_scan_oracle():
    rng = np.random.default_rng(321)
    index, vectors = _random_index(rng, 200)
    for _ in range(100):
        query = rng.standard_normal(EMBED_DIM)
        got = match_factor_vector("q", query, index, threshold=-1.0)
        best_sim, winner, second_sim, second = _oracle_scan(
            query, vectors, index.factors)
        assert got.factor_id == winner
        assert got.similarity == pytest.approx(best_sim, abs=1e-12)
        assert got.runner_up[0] == second
        assert got.runner_up[1] == pytest.approx(second_sim, abs=1e-12)


def test_exact_tie_breaks_to_smallest_factor_id():
    shared = np.ones(EMBED_DIM)
    pairs = [
        (_factor("ef-zz"), EmbeddingVector(label="zz", values=shared)),
        (_factor("ef-aa"), EmbeddingVector(label="aa", values=shared)),
        (_factor("ef-mm"), EmbeddingVector(label="mm", values=shared)),
    ]
    got = match_factor_vector("q", shared, FactorIndex(pairs), threshold=0.5)
    assert got.factor_id == "ef-aa"
    assert got.similarity == pytest.approx(1.0, abs=1e-12)
    assert got.runner_up[0] == "ef-mm"


def test_threshold_is_inclusive_and_gates_the_match():
    a = np.zeros(EMBED_DIM)
    a[0] = 1.0
    b = np.zeros(EMBED_DIM)
    b[0] = 0.6
    b[1] = 0.8  # cos(a, b) = 0.6 exactly
    index = FactorIndex([(_factor("ef-b"),
                          EmbeddingVector(label="b", values=b))])
    hit = match_factor_vector("q", a, index, threshold=0.6)
    assert hit.matched and hit.factor_id == "ef-b"
    assert hit.similarity == pytest.approx(0.6, abs=1e-12)
    miss = match_factor_vector("q", a, index, threshold=0.6000001)
    assert not miss.matched
    assert miss.factor_id is None
    assert miss.similarity == pytest.approx(0.6, abs=1e-12)
    assert DEFAULT_SIMILARITY_THRESHOLD == 0.5


def test_single_factor_index_has_no_runner_up():
    index = FactorIndex([(_factor("only"), _vec([1.0, 0.0]))])
    got = match_factor_vector("q", pad_vector([1.0, 0.1]), index)
    assert got.runner_up is None


def test_empty_index_and_zero_vector_are_typed_errors():
    with pytest.raises(ConfigInvalid):
        match_factor_vector("q", np.ones(EMBED_DIM), FactorIndex([]))
    index = FactorIndex([(_factor("f"), _vec([1.0]))])
    with pytest.raises(ZeroNormVector):
        match_factor_vector("q", np.zeros(EMBED_DIM), index)


def test_match_factor_embeds_then_scans():
    table = clustered_vectors([["coke", "metallurgical coke"],
                               ["electricity", "grid power"]], seed=9)
    service = embedding_service(table)
    index = load_factor_db_from_rows([
        ("ef-coke", "metallurgical coke", "kg", "CO2e", "3.2"),
        ("ef-elec", "grid power", "kWh", "CO2e", "0.58"),
    ], service)
    got = match_factor("coke", index, embeddings=service)
    assert got.matched and got.factor_id == "ef-coke"
    assert got.similarity > 0.9
    assert got.runner_up[0] == "ef-elec"
    assert got.runner_up[1] < 0.3


# --- CSV loading ----------------------------------------------------------------

HEADER = "factor_id,name,reference_unit,gas,intensity,source_tag,geography\n"


def _write_db(tmp_path, rows):
    path = tmp_path / "factors.csv"
    body = "".join(",".join(row) + ",db,GLO\n" if len(row) == 5 else
                   ",".join(row) + "\n" for row in rows)
    path.write_text(HEADER + body, encoding="utf-8")
    return path


def load_factor_db_from_rows(rows, service):
    """Build an index straight from row tuples, bypassing the filesystem."""
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as tmp:
        return load_factor_db(_write_db(Path(tmp), rows), embeddings=service)


def _service_for(names, seed=3):
    return embedding_service(clustered_vectors([[n] for n in names],
                                               seed=seed))


def test_load_factor_db_groups_gas_rows_per_factor(tmp_path):
    service = _service_for(["natural gas", "coal"])
    path = _write_db(tmp_path, [
        ("ef-ng", "natural gas", "m3", "CO2", "1.9"),
        ("ef-ng", "natural gas", "m3", "CH4", "0.00037"),
        ("ef-ng", "natural gas", "m3", "N2O", "0.0000035"),
        ("ef-coal", "coal", "kg", "CO2e", "2.42"),
    ])
    index = load_factor_db(path, embeddings=service)
    assert len(index) == 2
    ng = index.by_id("ef-ng")
    assert not ng.aggregate
    assert dict(ng.gas_intensities) == {"CO2": 1.9, "CH4": 0.00037,
                                        "N2O": 0.0000035}
    assert index.by_id("ef-coal").aggregate
    assert not [d for d in index.diagnostics if d.severity == "error"]


def test_load_factor_db_rejects_structural_problems(tmp_path):
    service = _service_for(["a", "b", "c", "d"])
    path = _write_db(tmp_path, [
        ("ef-1", "a", "kg", "CO2e", "1.0"),
        ("ef-2", "b", "tonne", "CO2e", "1.0"),     # bad unit
        ("ef-3", "c", "kg", "CO2", "1.0"),
        ("ef-3", "c", "kg", "CO2", "2.0"),         # duplicate gas row
        ("ef-4", "d", "kg", "CO2e", "-5"),         # negative intensity
        ("", "e", "kg", "CO2e", "1.0"),            # missing id
    ])
    index = load_factor_db(path, embeddings=service)
    assert [f.factor_id for f in index.factors] == ["ef-1"]
    rules = {d.rule for d in index.diagnostics}
    assert {"unit-not-allowed", "duplicate-gas-row", "missing-factor-id"} \
        <= rules


def test_load_factor_db_inconsistent_rows_rejected(tmp_path):
    service = _service_for(["a"])
    path = _write_db(tmp_path, [
        ("ef-1", "a", "kg", "CO2", "1.0"),
        ("ef-1", "renamed", "kg", "CH4", "1.0"),
    ])
    index = load_factor_db(path, embeddings=service)
    assert len(index) == 0
    assert "inconsistent-factor-rows" in {d.rule for d in index.diagnostics}


def test_load_factor_db_missing_columns(tmp_path):
    path = tmp_path / "factors.csv"
    path.write_text("factor_id,name\nef-1,a\n", encoding="utf-8")
    with pytest.raises(FileUnreadable):
        load_factor_db(path)
    with pytest.raises(FileUnreadable):
        load_factor_db(tmp_path / "absent.csv")


def test_load_factor_db_drops_unembeddable_names(tmp_path):
    service = _service_for(["known"])
    path = _write_db(tmp_path, [
        ("ef-known", "known", "kg", "CO2e", "1.0"),
        ("ef-ghost", "never embedded", "kg", "CO2e", "1.0"),
    ])
    index = load_factor_db(path, embeddings=service)
    assert [f.factor_id for f in index.factors] == ["ef-known"]
    assert "embedding-missing" in {d.rule for d in index.diagnostics}


def test_cosine_similarity_accepts_vectors_and_arrays():
    a = _vec([1.0, 0.0])
    b = _vec([0.0, 1.0])
    assert cosine_similarity(a, b) == pytest.approx(0.0, abs=1e-15)
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity(pad_vector([1.0, 1.0]),
                             pad_vector([1.0, 1.0])) == pytest.approx(1.0)
