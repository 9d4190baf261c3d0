"""Shared builders for the test suite.

Most tests construct tiny in-memory objects; the helpers here keep those
one-liners readable. The fixtures/ tree at the repo root is the shared
end-to-end corpus (transcripts, factor db, embeddings, macro tables) and
is addressed through the FIXTURES path.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from pcfkit.embeddings import EmbeddingService, FixtureEmbeddings
from pcfkit.model import (
    EntityType,
    FlowEntry,
    LifeCycleModel,
    ProcessInventory,
    ProductSpec,
)
from pcfkit.units import Unit

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"


def flow(entity: EntityType, name: str, qty: float, unit: Unit = Unit.KG,
         source: str | None = None) -> FlowEntry:
    return FlowEntry(entity_type=entity, name=name, quantity=qty, unit=unit,
                     source=source)


def product_flow(name: str, qty: float, unit: Unit = Unit.KG) -> FlowEntry:
    return flow(EntityType.PRODUCT, name, qty, unit)


def process(name: str, ordinal: int, flows) -> ProcessInventory:
    return ProcessInventory(process_name=name, ordinal=ordinal,
                            flows=tuple(flows))


def model_of(*processes, product: ProductSpec | None = None) -> LifeCycleModel:
    spec = product or ProductSpec(name="widget")
    return LifeCycleModel(product=spec, processes=tuple(processes))


EMBED_DIM = 768  # the wire dimension the embedding layer insists on


def pad_vector(vec) -> np.ndarray:
    """Zero-pad a short hand-written vector out to the wire dimension."""
    arr = np.zeros(EMBED_DIM)
    values = np.asarray(vec, dtype=float)
    arr[:values.size] = values
    return arr


def embedding_service(table: dict[str, np.ndarray],
                      provider_id: str = "test") -> EmbeddingService:
    """Embedding service over an explicit name -> vector table."""
    arrays = {name: pad_vector(vec) for name, vec in table.items()}
    return EmbeddingService(FixtureEmbeddings(arrays, provider_id=provider_id))


def clustered_vectors(groups, seed: int = 0,
                      spread: float = 0.01) -> dict[str, np.ndarray]:
    """One tight unit-vector cluster per group, well separated across groups."""
    rng = np.random.default_rng(seed)
    table: dict[str, np.ndarray] = {}
    for group in groups:
        base = rng.standard_normal(EMBED_DIM)
        base = base / np.linalg.norm(base)
        for name in group:
            vec = base + spread * rng.standard_normal(EMBED_DIM)
            table[name] = vec / np.linalg.norm(vec)
    return table


@pytest.fixture()
def fixtures_dir() -> Path:
    return FIXTURES
