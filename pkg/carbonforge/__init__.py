"""
Carbonforge - automated product carbon footprints

Estimates cradle-to-gate CO2e from similar products, generates missing
emission factors from analogous materials and grids, assesses life cycle
inventories, reads teardown imagery and builds inventories through
budgeted two-role self-play.

Basic Usage:
    >>> from carbonforge import build_index, estimate, make_product_world
    >>> world = make_product_world(200, seed=0)
    >>> index = build_index(world[:-1], category="laptop")
    >>> dist = estimate(index, world[-1].features, k=5)
    >>> dist.ci95[0] <= dist.mean <= dist.ci95[1]
    True
"""

__version__ = "0.1.0"
__author__ = "Carbonforge Team"

from .core import (
    CFBreakdown,
    CarbonforgeError,
    DataAbstraction,
    EmissionFactor,
    EstimateDistribution,
    FeatureVector,
    InventoryEntry,
    LifeCycleInventory,
    assess,
    build_index,
    estimate,
    load_config,
    make_product_world,
)

__all__ = [
    "CFBreakdown",
    "CarbonforgeError",
    "DataAbstraction",
    "EmissionFactor",
    "EstimateDistribution",
    "FeatureVector",
    "InventoryEntry",
    "LifeCycleInventory",
    "assess",
    "build_index",
    "estimate",
    "load_config",
    "make_product_world",
]
