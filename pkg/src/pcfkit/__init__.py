"""Automated cradle-to-gate product carbon footprint estimation.

The package turns a product name into a process breakdown, an activity
inventory, matched emission factors, and a footprint in kg CO2-eq per
functional unit, with every model exchange recorded for exact replay.
"""

from .errors import PcfKitError
from .model import (
    EntityType,
    FlowEntry,
    LifeCycleModel,
    ProcessInventory,
    ProductSpec,
    TrialProvenance,
    validate_model,
)
from .units import Unit, convert_quantity, parse_unit

__version__ = "0.1.0"

__all__ = [
    "EntityType",
    "FlowEntry",
    "LifeCycleModel",
    "PcfKitError",
    "ProcessInventory",
    "ProductSpec",
    "TrialProvenance",
    "Unit",
    "convert_quantity",
    "parse_unit",
    "validate_model",
    "__version__",
]
