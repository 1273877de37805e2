"""
Carbonforge Core

Domain types, ingestion, the kNN estimator, EF generation, impact
assessment, vision and the evaluation harness.
"""

from .config import CarbonforgeConfig, load_config
from .errors import (
    BackendError,
    CarbonforgeError,
    ConfigError,
    DataValidationError,
    EstimationError,
    UnmatchedEntriesError,
)
from .estimator import TrainedIndex, build_index, estimate
from .lcia import EmissionFactorDB, assess
from .models import (
    CFBreakdown,
    DataAbstraction,
    EmissionFactor,
    EstimateDistribution,
    FeatureVector,
    InventoryEntry,
    LifeCycleInventory,
    validate_inventory,
)
from .synthetic import make_product_world

__all__ = [
    "CarbonforgeConfig",
    "load_config",
    "BackendError",
    "CarbonforgeError",
    "ConfigError",
    "DataValidationError",
    "EstimationError",
    "UnmatchedEntriesError",
    "TrainedIndex",
    "build_index",
    "estimate",
    "EmissionFactorDB",
    "assess",
    "CFBreakdown",
    "DataAbstraction",
    "EmissionFactor",
    "EstimateDistribution",
    "FeatureVector",
    "InventoryEntry",
    "LifeCycleInventory",
    "validate_inventory",
    "make_product_world",
]
