"""Run configuration: one structured file, flag overrides, frozen snapshot.

Precedence is flags over file over defaults. The effective config is
snapshotted into the run directory and hashed (output directory excluded,
since moving a run must not change its identity); the hash becomes part of
the run id, so two runs with the same config and seed land in the same
place and byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .errors import ConfigInvalid, FileUnreadable
from .model import ProductSpec
from .units import Unit, parse_unit

MODE_DGA = "DGA"
MODE_IEA = "IEA"

_IEA_REQUIRED = ("coefficients", "facts")
_IEA_OPTIONAL = ("regional", "energy", "waste", "distances", "aliases")


@dataclass(frozen=True)
class ProviderSettings:
    provider_id: str = "fixture"
    kind: str = "fixture"  # "fixture" or "http"
    transcript: Optional[str] = None  # fixture source exchanges
    temperature: float = 0.7
    max_tokens: int = 1024
    # http settings, forwarded to the gateway's provider config
    endpoint: Optional[str] = None
    model: str = ""
    request_template: Mapping = field(default_factory=dict)
    response_path: str = "choices.0.message.content"
    auth_env: Optional[str] = None
    context_limit: int = 4096
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.kind not in ("fixture", "http"):
            raise ConfigInvalid(f"provider kind must be fixture or http, "
                                f"got {self.kind!r}")


@dataclass(frozen=True)
class IeaSettings:
    coefficients: Optional[str] = None
    facts: Optional[str] = None
    regional: Optional[str] = None
    energy: Optional[str] = None
    waste: Optional[str] = None
    distances: Optional[str] = None
    aliases: Optional[str] = None
    destination_region: Optional[str] = None
    transport_factor_kg_km: Optional[float] = None
    industry_threshold: float = 0.5
    balance_tolerance: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    product_name: str = ""
    product_quantity: float = 1.0
    product_unit: Unit = Unit.KG
    mode: str = MODE_DGA
    provider: ProviderSettings = ProviderSettings()
    factor_db: Optional[str] = None
    embeddings: Optional[str] = None
    gwp_table: Optional[str] = None
    similarity_threshold: float = 0.5
    trials: int = 20
    seed: int = 0
    workers: int = 1
    cache_enabled: bool = False
    rate_limit_per_minute: Optional[int] = None
    iea: IeaSettings = IeaSettings()
    reference: Optional[str] = None
    out_dir: Optional[str] = None
    base_dir: Optional[str] = None  # directory relative paths resolve against

    def product(self) -> ProductSpec:
        return ProductSpec(name=self.product_name,
                           functional_unit_qty=self.product_quantity,
                           functional_unit=self.product_unit)

    def resolve(self, maybe_path: Optional[str]) -> Optional[Path]:
        if maybe_path is None:
            return None
        p = Path(maybe_path)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p

    def validate(self) -> None:
        """Check coherence and that every referenced file exists."""
        if not self.product_name.strip():
            raise ConfigInvalid("product name is required")
        if self.trials < 1:
            raise ConfigInvalid(f"trials must be >= 1, got {self.trials}")
        if self.workers < 1:
            raise ConfigInvalid(f"workers must be >= 1, got {self.workers}")
        if not (0.0 <= self.similarity_threshold <= 1.0):
            raise ConfigInvalid("similarity threshold must lie in [0, 1]")
        if self.mode not in (MODE_DGA, MODE_IEA):
            raise ConfigInvalid(f"mode must be DGA or IEA, got {self.mode!r}")
        if self.factor_db is None:
            raise ConfigInvalid("factor_db path is required")
        if self.embeddings is None:
            raise ConfigInvalid("embeddings path is required")
        if self.provider.kind == "fixture" and self.provider.transcript is None:
            raise ConfigInvalid("fixture provider needs a transcript path")
        if self.provider.kind == "http" and not self.provider.endpoint:
            raise ConfigInvalid("http provider needs an endpoint")
        if self.mode == MODE_IEA:
            missing = [k for k in _IEA_REQUIRED
                       if getattr(self.iea, k) is None]
            if missing:
                raise ConfigInvalid(
                    f"IEA mode requires IOT paths: missing {missing}")
        for label, value in self._file_fields():
            path = self.resolve(value)
            if path is not None and not path.is_file():
                raise ConfigInvalid(f"{label}: file {path} does not exist")

    def _file_fields(self):
        yield "factor_db", self.factor_db
        yield "embeddings", self.embeddings
        yield "gwp_table", self.gwp_table
        yield "reference", self.reference
        if self.provider.kind == "fixture":
            yield "provider.transcript", self.provider.transcript
        if self.mode == MODE_IEA:
            for name in (*_IEA_REQUIRED, *_IEA_OPTIONAL):
                yield f"iea.{name}", getattr(self.iea, name)

    def _resolved(self, maybe_path: Optional[str]) -> Optional[str]:
        path = self.resolve(maybe_path)
        return None if path is None else str(path)

    def snapshot(self) -> dict:
        """Effective config as a plain mapping; excludes the output directory.

        Paths are stored resolved, so the snapshot written into a run
        directory can rebuild the exact same config from anywhere
        (config_from_snapshot is the inverse).
        """
        return {
            "product": {
                "name": self.product_name,
                "quantity": self.product_quantity,
                "unit": self.product_unit.value,
            },
            "mode": self.mode,
            "provider": {
                "id": self.provider.provider_id,
                "kind": self.provider.kind,
                "transcript": self._resolved(self.provider.transcript),
                "temperature": self.provider.temperature,
                "max_tokens": self.provider.max_tokens,
                "endpoint": self.provider.endpoint,
                "model": self.provider.model,
                "request_template": _plain(self.provider.request_template),
                "response_path": self.provider.response_path,
                "auth_env": self.provider.auth_env,
                "context_limit": self.provider.context_limit,
                "timeout_s": self.provider.timeout_s,
            },
            "factor_db": self._resolved(self.factor_db),
            "embeddings": self._resolved(self.embeddings),
            "gwp_table": self._resolved(self.gwp_table),
            "similarity_threshold": self.similarity_threshold,
            "trials": self.trials,
            "seed": self.seed,
            "workers": self.workers,
            "cache_enabled": self.cache_enabled,
            "rate_limit_per_minute": self.rate_limit_per_minute,
            "iea": {
                "coefficients": self._resolved(self.iea.coefficients),
                "facts": self._resolved(self.iea.facts),
                "regional": self._resolved(self.iea.regional),
                "energy": self._resolved(self.iea.energy),
                "waste": self._resolved(self.iea.waste),
                "distances": self._resolved(self.iea.distances),
                "aliases": self._resolved(self.iea.aliases),
                "destination_region": self.iea.destination_region,
                "transport_factor_kg_km": self.iea.transport_factor_kg_km,
                "industry_threshold": self.iea.industry_threshold,
                "balance_tolerance": self.iea.balance_tolerance,
            },
            "reference": self._resolved(self.reference),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.snapshot(), ensure_ascii=False, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _plain(value):
    """Deep-copy nested mappings/sequences into plain dicts and lists."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_from_snapshot(snapshot: Mapping) -> RunConfig:
    """Rebuild a RunConfig from a run directory's stored snapshot.

    The inverse of RunConfig.snapshot(): paths in the snapshot are already
    resolved, so no base directory applies.
    """
    product = _section(snapshot, "product")
    provider = _section(snapshot, "provider")
    iea = _section(snapshot, "iea")
    try:
        provider_settings = ProviderSettings(
            provider_id=str(provider.get("id", "fixture")),
            kind=str(provider.get("kind", "fixture")),
            transcript=provider.get("transcript"),
            temperature=float(provider.get("temperature", 0.7)),
            max_tokens=int(provider.get("max_tokens", 1024)),
            endpoint=provider.get("endpoint"),
            model=str(provider.get("model", "")),
            request_template=provider.get("request_template") or {},
            response_path=str(provider.get("response_path",
                                           "choices.0.message.content")),
            auth_env=provider.get("auth_env"),
            context_limit=int(provider.get("context_limit", 4096)),
            timeout_s=float(provider.get("timeout_s", 60.0)))
        iea_settings = IeaSettings(
            coefficients=iea.get("coefficients"),
            facts=iea.get("facts"),
            regional=iea.get("regional"),
            energy=iea.get("energy"),
            waste=iea.get("waste"),
            distances=iea.get("distances"),
            aliases=iea.get("aliases"),
            destination_region=iea.get("destination_region"),
            transport_factor_kg_km=(
                float(iea["transport_factor_kg_km"])
                if iea.get("transport_factor_kg_km") is not None else None),
            industry_threshold=float(iea.get("industry_threshold", 0.5)),
            balance_tolerance=float(iea.get("balance_tolerance", 0.05)))
        return RunConfig(
            product_name=str(product.get("name", "")),
            product_quantity=float(product.get("quantity", 1.0)),
            product_unit=parse_unit(str(product.get("unit", "kg"))),
            mode=str(snapshot.get("mode", MODE_DGA)),
            provider=provider_settings,
            factor_db=snapshot.get("factor_db"),
            embeddings=snapshot.get("embeddings"),
            gwp_table=snapshot.get("gwp_table"),
            similarity_threshold=float(snapshot.get("similarity_threshold",
                                                    0.5)),
            trials=int(snapshot.get("trials", 20)),
            seed=int(snapshot.get("seed", 0)),
            workers=int(snapshot.get("workers", 1)),
            cache_enabled=bool(snapshot.get("cache_enabled", False)),
            rate_limit_per_minute=(
                int(snapshot["rate_limit_per_minute"])
                if snapshot.get("rate_limit_per_minute") is not None
                else None),
            iea=iea_settings,
            reference=snapshot.get("reference"),
            base_dir=None)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(
            f"stored config snapshot is malformed: {exc}") from exc


def _section(raw: Mapping, key: str) -> Mapping:
    value = raw.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigInvalid(f"config section {key!r} must be a mapping")
    return value


def load_config(path: str | Path, overrides: Optional[Mapping] = None) -> RunConfig:
    """Read YAML (or JSON; it is a YAML subset) and apply flag overrides."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileUnreadable(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config {path} is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigInvalid(f"config {path} must be a mapping at top level")
    config = config_from_mapping(raw, base_dir=str(path.parent))
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def config_from_mapping(raw: Mapping, *, base_dir: Optional[str] = None) -> RunConfig:
    product = _section(raw, "product")
    provider = _section(raw, "provider")
    iea = _section(raw, "iea")
    thresholds = _section(raw, "thresholds")
    cache = _section(raw, "cache")
    try:
        unit = parse_unit(str(product.get("unit", "kg")))
        provider_settings = ProviderSettings(
            provider_id=str(provider.get("id", "fixture")),
            kind=str(provider.get("kind", "fixture")),
            transcript=provider.get("transcript"),
            temperature=float(provider.get("temperature", 0.7)),
            max_tokens=int(provider.get("max_tokens", 1024)),
            endpoint=provider.get("endpoint"),
            model=str(provider.get("model", "")),
            request_template=provider.get("request_template", {}),
            response_path=str(provider.get("response_path",
                                           "choices.0.message.content")),
            auth_env=provider.get("auth_env"),
            context_limit=int(provider.get("context_limit", 4096)),
            timeout_s=float(provider.get("timeout_s", 60.0)))
        iea_settings = IeaSettings(
            coefficients=iea.get("coefficients"),
            facts=iea.get("facts"),
            regional=iea.get("regional"),
            energy=iea.get("energy"),
            waste=iea.get("waste"),
            distances=iea.get("distances"),
            aliases=iea.get("aliases"),
            destination_region=iea.get("destination_region"),
            transport_factor_kg_km=(
                float(iea["transport_factor_kg_km"])
                if iea.get("transport_factor_kg_km") is not None else None),
            industry_threshold=float(iea.get("industry_threshold", 0.5)),
            balance_tolerance=float(iea.get("balance_tolerance", 0.05)))
        return RunConfig(
            product_name=str(product.get("name", "")),
            product_quantity=float(product.get("quantity", 1.0)),
            product_unit=unit,
            mode=str(raw.get("mode", MODE_DGA)),
            provider=provider_settings,
            factor_db=raw.get("factor_db"),
            embeddings=raw.get("embeddings"),
            gwp_table=raw.get("gwp_table"),
            similarity_threshold=float(thresholds.get("similarity", 0.5)),
            trials=int(raw.get("trials", 20)),
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
            cache_enabled=bool(cache.get("enabled", False)),
            rate_limit_per_minute=(int(raw["rate_limit_per_minute"])
                                   if raw.get("rate_limit_per_minute")
                                   is not None else None),
            iea=iea_settings,
            reference=raw.get("reference"),
            base_dir=base_dir)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"config value has the wrong type: {exc}") from exc


# Flag overrides accepted by apply_overrides; value None means "not given".
_OVERRIDE_FIELDS = ("product_name", "mode", "trials", "seed", "workers",
                    "similarity_threshold", "reference", "out_dir")


def apply_overrides(config: RunConfig, overrides: Mapping) -> RunConfig:
    updates = {}
    for name in _OVERRIDE_FIELDS:
        value = overrides.get(name)
        if value is not None:
            updates[name] = value
    provider_id = overrides.get("provider_id")
    if provider_id is not None:
        updates["provider"] = replace(config.provider, provider_id=provider_id)
    if not updates:
        return config
    return replace(config, **updates)
