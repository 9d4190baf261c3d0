"""The closed unit set and the one conversion the wire format allows.

Inventories are restricted to five international-standard units. Energy may
arrive as MJ or kWh; everything else has exactly one legal unit, so the only
defined conversion is the MJ/kWh pair (1 kWh = 3.6 MJ exactly). Any other
cross-unit request is an error, never a silent coercion.
"""

from __future__ import annotations

import enum

from .errors import IncompatibleUnits

KWH_TO_MJ = 3.6


class Unit(enum.Enum):
    KG = "kg"
    KWH = "kWh"
    M = "m"
    M3 = "m3"
    MJ = "MJ"

    def __str__(self) -> str:
        return self.value


_BY_FOLDED = {member.value.casefold(): member for member in Unit}


def parse_unit(text: str) -> Unit:
    """Map a wire-format unit string onto the closed set.

    Matching is case-insensitive but otherwise exact: "KWH" parses, "tonne"
    does not.
    """
    if not isinstance(text, str):
        raise IncompatibleUnits(f"unit must be text, got {type(text).__name__}")
    member = _BY_FOLDED.get(text.strip().casefold())
    if member is None:
        raise IncompatibleUnits(f"unit {text!r} is not one of kg, kWh, m, m3, MJ")
    return member


def convert_quantity(qty: float, from_unit: Unit, to_unit: Unit) -> float:
    """Convert ``qty`` between units.

    Identity for equal units; exact 3.6 factor for the MJ/kWh pair; raises
    :class:`IncompatibleUnits` for every other pair.
    """
    if from_unit is to_unit:
        return qty
    if from_unit is Unit.MJ and to_unit is Unit.KWH:
        return qty / KWH_TO_MJ
    if from_unit is Unit.KWH and to_unit is Unit.MJ:
        return qty * KWH_TO_MJ
    raise IncompatibleUnits(
        f"no conversion defined from {from_unit.value} to {to_unit.value}")


def convertible(from_unit: Unit, to_unit: Unit) -> bool:
    """True when convert_quantity would succeed for this pair."""
    return from_unit is to_unit or {from_unit, to_unit} == {Unit.MJ, Unit.KWH}
