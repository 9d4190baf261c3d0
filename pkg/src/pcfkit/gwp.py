"""Global-warming-potential table: configuration data, not code.

The shipped default is the IPCC AR5 100-year set (CH4=28, N2O=265, and so
on) covering the seven Kyoto gas families; swap in a different vintage by
pointing the run config at another CSV. Gas ids are matched
case-insensitively, with a small alias map so a waste-gas flow literally
named "carbon dioxide" resolves to CO2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from .errors import FileUnreadable

# Long-form names a generated inventory plausibly uses for a Kyoto gas.
GAS_ALIASES = {
    "carbon dioxide": "CO2",
    "methane": "CH4",
    "nitrous oxide": "N2O",
    "sulfur hexafluoride": "SF6",
    "sulphur hexafluoride": "SF6",
    "nitrogen trifluoride": "NF3",
}


@dataclass(frozen=True)
class GwpTable:
    """Map gas id -> GWP100 factor (kgCO2e per kg of gas)."""

    factors: Mapping[str, float]

    def __post_init__(self):
        factors = dict(self.factors)
        folded = {gas.casefold(): gas for gas in factors}
        if "co2" not in folded:
            raise ValueError("GWP table must contain a CO2 entry")
        if factors[folded["co2"]] != 1.0:
            raise ValueError("GWP of CO2 must be exactly 1")
        for gas, value in factors.items():
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"GWP for {gas} must be a positive finite real")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "_folded", folded)

    def resolve_gas(self, name: str) -> Optional[str]:
        """Canonical gas id for ``name``, or None if it is not a listed gas."""
        key = name.strip().casefold()
        key = GAS_ALIASES.get(key, key)
        return self._folded.get(key.casefold())

    def __contains__(self, gas: str) -> bool:
        return self.resolve_gas(gas) is not None

    def __getitem__(self, gas: str) -> float:
        canonical = self.resolve_gas(gas)
        if canonical is None:
            raise KeyError(gas)
        return self.factors[canonical]

    def get(self, gas: str, default: Optional[float] = None) -> Optional[float]:
        canonical = self.resolve_gas(gas)
        return default if canonical is None else self.factors[canonical]


def load_gwp_table(path: str | Path) -> GwpTable:
    """Load a ``gas,gwp100`` CSV (UTF-8, header row required)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read GWP table {path}: {exc}") from exc
    return _parse_gwp_csv(text, str(path))


def default_gwp_table() -> GwpTable:
    """The packaged IPCC AR5 100-year table."""
    text = resources.files("pcfkit.data").joinpath("gwp_ar5.csv").read_text("utf-8")
    return _parse_gwp_csv(text, "<packaged gwp_ar5.csv>")


def _parse_gwp_csv(text: str, origin: str) -> GwpTable:
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["gas", "gwp100"]:
        raise FileUnreadable(
            f"{origin}: expected header 'gas,gwp100', got {reader.fieldnames}")
    factors: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        gas = (row.get("gas") or "").strip()
        raw = (row.get("gwp100") or "").strip()
        if not gas:
            raise FileUnreadable(f"{origin}:{lineno}: empty gas id")
        try:
            value = float(raw)
        except ValueError as exc:
            raise FileUnreadable(f"{origin}:{lineno}: bad gwp100 {raw!r}") from exc
        factors[gas] = value
    try:
        return GwpTable(factors)
    except ValueError as exc:
        raise FileUnreadable(f"{origin}: {exc}") from exc
