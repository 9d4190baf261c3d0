"""Name embeddings: fixed 768-dim vectors behind a caching service.

Vectors arrive from a provider (a file-backed fixture table offline, an
HTTP endpoint live) and are never re-normalized: cosine similarity divides
by the norms itself, so stored magnitudes are preserved exactly as the
encoder produced them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import requests

from .errors import EmbeddingUnavailable, FileUnreadable, ZeroNormVector

EMBEDDING_DIM = 768


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    label: str
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (EMBEDDING_DIM,):
            raise EmbeddingUnavailable(
                f"embedding for {self.label!r} has shape {arr.shape}, "
                f"expected ({EMBEDDING_DIM},)")
        if not np.all(np.isfinite(arr)):
            raise EmbeddingUnavailable(
                f"embedding for {self.label!r} contains non-finite components")
        if not np.any(arr):
            raise ZeroNormVector(f"embedding for {self.label!r} is the zero vector")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def cosine_similarity(a, f) -> float:
    """Angle cosine between two vectors; accepts EmbeddingVector or array."""
    va = a.values if isinstance(a, EmbeddingVector) else np.asarray(a, dtype=np.float64)
    vf = f.values if isinstance(f, EmbeddingVector) else np.asarray(f, dtype=np.float64)
    na = np.linalg.norm(va)
    nf = np.linalg.norm(vf)
    if na == 0.0 or nf == 0.0:
        raise ZeroNormVector("cosine similarity is undefined for a zero vector")
    return float(np.dot(va, vf) / (na * nf))


class EmbeddingProvider:
    """Interface: turn an exact name string into 768 floats."""

    provider_id: str = ""

    def embed_text(self, name: str) -> np.ndarray:
        raise NotImplementedError


class FixtureEmbeddings(EmbeddingProvider):
    """Closed lookup table loaded from a delimited text file.

    File format: one record per line, ``label,v1,...,v768``. Labels may
    themselves contain commas, so the line is split from the right.
    """

    def __init__(self, table: dict[str, np.ndarray], provider_id: str = "fixture"):
        self.provider_id = provider_id
        self._table = table

    @classmethod
    def from_file(cls, path: str | Path,
                  provider_id: str = "fixture") -> "FixtureEmbeddings":
        path = Path(path)
        if not path.is_file():
            raise FileUnreadable(f"embedding fixture {path} does not exist")
        table: dict[str, np.ndarray] = {}
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.rsplit(",", EMBEDDING_DIM)
                if len(parts) != EMBEDDING_DIM + 1:
                    raise FileUnreadable(
                        f"{path}:{lineno}: expected label plus "
                        f"{EMBEDDING_DIM} components, got {len(parts) - 1}")
                try:
                    values = np.array([float(x) for x in parts[1:]],
                                      dtype=np.float64)
                except ValueError as exc:
                    raise FileUnreadable(
                        f"{path}:{lineno}: non-numeric component") from exc
                table[parts[0]] = values
        return cls(table, provider_id=provider_id)

    def embed_text(self, name: str) -> np.ndarray:
        try:
            return self._table[name]
        except KeyError:
            raise EmbeddingUnavailable(
                f"no fixture embedding for {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._table

    def __len__(self) -> int:
        return len(self._table)


class HttpEmbeddings(EmbeddingProvider):
    """Minimal endpoint contract: POST the name, receive a 768-float array."""

    def __init__(self, endpoint: str, *, provider_id: str = "http",
                 auth_env: Optional[str] = None,
                 auth_header: str = "Authorization",
                 auth_scheme: str = "Bearer",
                 timeout_s: float = 60.0,
                 secret_lookup: Callable[[str], Optional[str]] = None):
        import os
        self.provider_id = provider_id
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.auth_header = auth_header
        self.auth_scheme = auth_scheme
        self.timeout_s = timeout_s
        self._secret_lookup = secret_lookup or os.environ.get

    def embed_text(self, name: str) -> np.ndarray:
        headers = {"Content-Type": "text/plain; charset=utf-8"}
        if self.auth_env:
            secret = self._secret_lookup(self.auth_env)
            if not secret:
                raise EmbeddingUnavailable(
                    f"environment variable {self.auth_env} is not set")
            headers[self.auth_header] = (f"{self.auth_scheme} {secret}"
                                         if self.auth_scheme else secret)
        try:
            resp = requests.post(self.endpoint, data=name.encode("utf-8"),
                                 headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            payload = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise EmbeddingUnavailable(
                f"embedding endpoint failed for {name!r}: {exc}") from exc
        if not isinstance(payload, list):
            raise EmbeddingUnavailable(
                f"embedding endpoint returned {type(payload).__name__}, "
                "expected an array")
        return np.asarray(payload, dtype=np.float64)


@dataclass
class EmbeddingService:
    """Caches one vector per exact name string; thread-safe.

    ``provider_calls`` counts trips past the cache, so tests can assert
    the same name is only ever encoded once.
    """

    provider: EmbeddingProvider
    provider_calls: int = 0
    _cache: dict[str, EmbeddingVector] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def embed(self, name: str) -> EmbeddingVector:
        with self._lock:
            hit = self._cache.get(name)
        if hit is not None:
            return hit
        values = self.provider.embed_text(name)
        vector = EmbeddingVector(label=name, values=values)
        with self._lock:
            if name not in self._cache:
                self.provider_calls += 1
                self._cache[name] = vector
            return self._cache[name]
