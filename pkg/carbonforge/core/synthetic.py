"""
Seeded synthetic worlds.

Real PCF disclosures, grid-mix datasets and LCA databases are licensed, so
experiments and tests run on generators whose ground truth is known:

- product worlds for the kNN estimator (smooth targets, optional clusters)
- a linear-mix grid world: CI = shares . per-source intensities, plus noise
- a 90-entry material world where a latent drives both properties and EF
- rendered board photos and checkerboards for the vision pipeline
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image

from .estimator import IndexRecord
from .ingestion import PRODUCT_SCHEMA
from .models import (
    GRID_SOURCES,
    MATERIAL_SCHEMA,
    EmissionFactor,
    FeatureVector,
    GridRecord,
    ProductRecord,
    grid_schema,
)

# ---------------------------------------------------------------------------
# Products
# ---------------------------------------------------------------------------

_CPU_NODES = (5.0, 7.0, 10.0, 14.0)


def _product_values(rng: np.random.Generator) -> Tuple[Dict[str, object], float]:
    size = rng.uniform(0.0, 1.0)
    memory = 8.0 * 2 ** int(rng.integers(0, 3))
    storage = 256.0 * 2 ** int(rng.integers(0, 3))
    cpu = float(rng.choice(_CPU_NODES))
    gpu = "discrete" if rng.uniform() < 0.4 else "integrated"
    panel = "oled" if rng.uniform() < 0.3 else "lcd"
    values = {
        'cpu_node_nm': cpu,
        'memory_gb': memory,
        'storage_gb': storage,
        'display_in': round(11.0 + 6.0 * size + rng.normal(0.0, 0.3), 2),
        'battery_wh': round(40.0 + 60.0 * size + rng.normal(0.0, 3.0), 1),
        'weight_kg': round(1.0 + 2.0 * size + rng.normal(0.0, 0.1), 3),
        'gpu': gpu,
        'panel': panel,
    }
    target = (
        120.0 + 180.0 * size
        + 40.0 * math.log2(memory / 8.0)
        + 25.0 * math.log2(storage / 256.0)
        + 60.0 * (gpu == "discrete")
        + 20.0 * (panel == "oled")
        + 3.0 * (14.0 - cpu)
    )
    return values, target


def make_product_world(n: int, seed: int = 0, noise: float = 0.05,
                       company: str = "synth", missing: float = 0.0) -> List[IndexRecord]:
    """``n`` laptop-like records with a smooth target and lognormal noise"""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        values, target = _product_values(rng)
        records.append(IndexRecord(
            id=f"{company}/P{i:05d}",
            features=FeatureVector(schema=PRODUCT_SCHEMA, values=values),
            target=target * math.exp(rng.normal(0.0, noise)),
        ))
    if missing > 0:
        records = mask_records(records, missing, seed=seed + 1)
    return records


def make_product_records(n: int, seed: int = 0, company: str = "Synth",
                         category: str = "laptop", noise: float = 0.05) -> List[ProductRecord]:
    """Same world as ``make_product_world`` but as PCF-style ProductRecords"""
    return [
        ProductRecord(
            company=company,
            category=category,  # type: ignore[arg-type]
            name=r.id.split("/", 1)[1],
            features=r.features,
            reported_cf_kgco2e=r.target,
        )
        for r in make_product_world(n, seed=seed, noise=noise, company=company)
    ]


def make_cluster_world(n_clusters: int, cluster_size: int, seed: int = 0,
                       rel_sd: float = 0.1) -> List[IndexRecord]:
    """Clusters of identical feature vectors with Gaussian targets

    Within a cluster the targets are N(mu, (rel_sd * mu)^2), so a kNN
    Gaussian fitted to same-cluster neighbors covers held-out targets at
    close to the nominal 95% rate.
    """
    rng = np.random.default_rng(seed)
    records = []
    for c in range(n_clusters):
        values, _ = _product_values(rng)
        mu = rng.uniform(100.0, 500.0)
        features = FeatureVector(schema=PRODUCT_SCHEMA, values=values)
        for j in range(cluster_size):
            records.append(IndexRecord(
                id=f"cluster{c:03d}/m{j:04d}",
                features=features,
                target=max(1.0, rng.normal(mu, rel_sd * mu)),
            ))
    return records


def mask_records(records: Sequence[IndexRecord], fraction: float, seed: int = 0) -> List[IndexRecord]:
    """Hide ``fraction`` of all feature entries uniformly at random

    Below fraction 1 no record is left with every feature hidden.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if not records or fraction == 0.0:
        return list(records)
    names = records[0].features.names
    n, d = len(records), len(names)
    rng = np.random.default_rng(seed)
    hidden = np.zeros(n * d, dtype=bool)
    hidden[rng.choice(n * d, size=int(round(fraction * n * d)), replace=False)] = True
    hidden = hidden.reshape(n, d)
    if fraction < 1.0:
        for i in np.flatnonzero(hidden.all(axis=1)):
            hidden[i, rng.integers(0, d)] = False

    out = []
    for i, r in enumerate(records):
        masked_names = [names[j] for j in np.flatnonzero(hidden[i])]
        out.append(r.model_copy(update={'features': r.features.masked(masked_names)}))
    return out


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

GRID_INTENSITIES: Dict[str, float] = {
    'nuclear': 12.0,
    'wind': 11.0,
    'hydro': 24.0,
    'solar': 45.0,
    'coal': 820.0,
    'gas': 490.0,
    'oil': 650.0,
    'biomass': 230.0,
    'geothermal': 38.0,
    'battery_discharge': 300.0,
    'unknown': 700.0,
}

# archetype -> sources it is dominated by
_ARCHETYPE_DOMINANT: Tuple[Tuple[str, ...], ...] = (
    ("nuclear",),
    ("coal",),
    ("hydro",),
    ("gas",),
    ("wind", "solar"),
    ("oil",),
    ("geothermal", "biomass"),
    ("unknown", "battery_discharge"),
)
_MINOR_LADDER = (0.0, 0.015, 0.03, 0.045, 0.06, 0.075, 0.09)


def grid_archetypes() -> np.ndarray:
    """8 x 11 archetype share matrix (rows sum to 1)

    Every source column takes 8 distinct values across the archetypes: one
    dominant share and the seven minor ladder values, so any single present
    share tells the archetypes apart.
    """
    n_arch, n_src = len(_ARCHETYPE_DOMINANT), len(GRID_SOURCES)
    shares = np.zeros((n_arch, n_src))
    dominant = np.zeros((n_arch, n_src), dtype=bool)
    for a, sources in enumerate(_ARCHETYPE_DOMINANT):
        for s in sources:
            dominant[a, GRID_SOURCES.index(s)] = True

    for j in range(n_src):
        minors = [a for a in range(n_arch) if not dominant[a, j]]
        for rank, a in enumerate(minors):
            shares[a, j] = _MINOR_LADDER[(rank + 2 * j) % len(_MINOR_LADDER)]

    for a in range(n_arch):
        rest = 1.0 - shares[a, ~dominant[a]].sum()
        shares[a, dominant[a]] = rest / dominant[a].sum()
    return shares


def grid_intensity(shares: Sequence[float]) -> float:
    return float(np.dot(np.asarray(shares, dtype=float),
                        [GRID_INTENSITIES[s] for s in GRID_SOURCES]))


def make_grid_world(n_regions: int = 348, seed: int = 0, noise: float = 0.05,
                    share_sd: float = 0.002, days: int = 1,
                    start: dt.date = dt.date(2024, 1, 1)) -> List[GridRecord]:
    """Linear-mix grid world: one archetype per region, perturbed shares

    CI = shares . GRID_INTENSITIES x (1 + N(0, noise)). With ``days > 1``
    every region gets that many daily records around its own mix.
    """
    rng = np.random.default_rng(seed)
    archetypes = grid_archetypes()
    records: List[GridRecord] = []
    for i in range(n_regions):
        base = archetypes[i % len(archetypes)]
        region_shares = np.clip(base + rng.normal(0.0, share_sd, size=base.size), 0.0, None)
        region_shares /= region_shares.sum()
        for day in range(days):
            shares = region_shares
            if days > 1:
                shares = np.clip(region_shares + rng.normal(0.0, share_sd / 2, size=base.size), 0.0, None)
                shares /= shares.sum()
            ci = max(1.0, grid_intensity(shares) * (1.0 + rng.normal(0.0, noise)))
            records.append(GridRecord(
                region=f"R{i:03d}",
                date=start + dt.timedelta(days=day),
                carbon_intensity_g_per_kwh=ci,
                source_shares=FeatureVector(
                    schema=grid_schema(),
                    values={s: float(v) for s, v in zip(GRID_SOURCES, shares)},
                ),
            ))
    return records


# ---------------------------------------------------------------------------
# Materials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _MaterialClass:
    isic: str
    descriptions: Tuple[str, str]
    phase: str
    element: str
    melting_k: float
    density: float
    ef_per_kg: float


_MATERIAL_CLASSES: Tuple[_MaterialClass, ...] = (
    _MaterialClass("2013", ("polyethylene plastic granulate, primary form",
                            "polypropylene plastic resin pellets, primary form"),
                   "solid", "polymer", 400.0, 950.0, 2.0),
    _MaterialClass("2410", ("steel sheet, low-alloyed, hot rolled iron and steel",
                            "cast iron ingot, unalloyed iron and steel"),
                   "solid", "transition metal", 1800.0, 7850.0, 2.2),
    _MaterialClass("2420", ("aluminium ingot, primary non-ferrous metal",
                            "copper cathode, refined non-ferrous metal"),
                   "solid", "post-transition metal", 1200.0, 5500.0, 9.0),
    _MaterialClass("1610", ("sawn timber, softwood wood, kiln dried",
                            "wood planks, hardwood wood, air dried"),
                   "solid", "organic", 570.0, 600.0, 0.3),
    _MaterialClass("2310", ("flat glass, float glass sheet",
                            "glass fibre from container glass cullet"),
                   "solid", "metalloid oxide", 1700.0, 2500.0, 1.1),
    _MaterialClass("2011", ("sulfuric acid, liquid basic chemical",
                            "ammonia solution, liquid basic chemical"),
                   "liquid", "nonmetal", 280.0, 1400.0, 0.6),
)


def make_material_db(per_class: int = 15, seed: int = 0, log_noise: float = 0.05) -> List[EmissionFactor]:
    """6 ISIC classes x ``per_class`` raw materials (90 by default), EFs per gram

    A latent u in [0, 1] drives melting point, density and the log EF, so
    domain features carry information the descriptions do not.
    """
    rng = np.random.default_rng(seed)
    factors = []
    for cls in _MATERIAL_CLASSES:
        for i in range(per_class):
            u = rng.uniform(0.0, 1.0)
            log_ef = math.log(cls.ef_per_kg) + 2.4 * (u - 0.5) + rng.normal(0.0, log_noise)
            features = FeatureVector(schema=MATERIAL_SCHEMA, values={
                'melting_point_K': round(cls.melting_k * (0.8 + 0.4 * u), 2),
                'phase_at_stp': cls.phase,
                'elemental_category': cls.element,
                'density_kg_m3': round(cls.density * (0.8 + 0.4 * u), 2),
            })
            factors.append(EmissionFactor(
                id=f"mat-{cls.isic}-{i:02d}",
                description=cls.descriptions[i % 2],
                isic_class=cls.isic,
                unit="gram",
                kgco2e_per_unit=math.exp(log_ef) / 1000.0,
                features=features,
            ))
    return factors


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

Chip = Tuple[int, int, int, int, int]  # x, y, w, h, gray


def render_view(size: Tuple[int, int] = (512, 512), chips: Sequence[Chip] = (),
                background: int = 90, noise: float = 0.0, seed: int = 0) -> Image.Image:
    """Grayscale board photo: flat background with rectangular parts"""
    w, h = size
    canvas = np.full((h, w), float(background))
    for x, y, cw, ch, gray in chips:
        canvas[y:y + ch, x:x + cw] = gray
    if noise > 0:
        canvas += np.random.default_rng(seed).normal(0.0, noise, size=canvas.shape)
    return Image.fromarray(np.clip(np.rint(canvas), 0, 255).astype(np.uint8), mode="L")


# 4 ICs, 4 passives, 4 connectors
FULL_BOARD_CHIPS: Tuple[Chip, ...] = (
    (40, 60, 40, 40, 20), (160, 60, 40, 40, 20), (280, 60, 40, 40, 20), (400, 60, 40, 40, 20),
    (40, 220, 16, 10, 220), (160, 220, 16, 10, 220), (280, 220, 16, 10, 220), (400, 220, 16, 10, 220),
    (40, 380, 60, 16, 200), (160, 380, 60, 16, 200), (280, 380, 60, 16, 200), (400, 380, 60, 16, 200),
)
CORNER_CHIPS: Tuple[Chip, ...] = (
    (60, 60, 120, 120, 20),
    (300, 80, 48, 30, 220),
    (100, 300, 180, 48, 200),
)


def board_views(seed: int = 0) -> Dict[str, Image.Image]:
    """Candidate teardown views: the full board, a zoomed corner and a battery"""
    return {
        'full_board': render_view(chips=FULL_BOARD_CHIPS),
        'zoomed_corner': render_view(chips=CORNER_CHIPS),
        'battery': render_view(chips=(), background=150, noise=1.5, seed=seed),
    }


@dataclass(frozen=True)
class RenderedBoard:
    image: Image.Image
    board_bbox_px: Tuple[int, int, int, int]
    reference_bbox_px: Tuple[int, int, int, int]
    reference_mm: Tuple[float, float]
    mm_per_px: float

    @property
    def board_mm(self) -> Tuple[float, float]:
        return (self.board_bbox_px[2] * self.mm_per_px, self.board_bbox_px[3] * self.mm_per_px)


def render_calibration_board(canvas: Tuple[int, int] = (800, 600),
                             board: Tuple[int, int, int, int] = (100, 120, 600, 260),
                             reference: Tuple[int, int, int, int] = (200, 200, 100, 100),
                             mm_per_px: float = 0.1,
                             extra_chips: Sequence[Chip] = ((450, 180, 16, 10, 220), (500, 300, 60, 16, 200)),
                             ) -> RenderedBoard:
    """Board on a dark backdrop with one reference chip of known size"""
    w, h = canvas
    pixels = np.full((h, w), 40.0)
    bx, by, bw, bh = board
    pixels[by:by + bh, bx:bx + bw] = 110.0
    rx, ry, rw, rh = reference
    pixels[ry:ry + rh, rx:rx + rw] = 20.0
    for x, y, cw, ch, gray in extra_chips:
        pixels[y:y + ch, x:x + cw] = gray
    image = Image.fromarray(pixels.astype(np.uint8), mode="L")
    return RenderedBoard(
        image=image,
        board_bbox_px=board,
        reference_bbox_px=reference,
        reference_mm=(rw * mm_per_px, rh * mm_per_px),
        mm_per_px=mm_per_px,
    )


def checkerboard(size: int = 512, block: int = 1, low: int = 0, high: int = 200) -> Image.Image:
    idx = np.arange(size) // block
    grid = (idx[:, None] + idx[None, :]) % 2
    return Image.fromarray(np.where(grid == 1, high, low).astype(np.uint8), mode="L")


def flat_image(size: int = 512, value: int = 128) -> Image.Image:
    return Image.fromarray(np.full((size, size), value, dtype=np.uint8), mode="L")


def textured_panel(size: int = 512, seed: int = 0, amplitude: float = 40.0,
                   base: float = 110.0) -> Image.Image:
    """Dense fine-grained texture (white noise around a mid gray)"""
    rng = np.random.default_rng(seed)
    pixels = np.clip(base + rng.normal(0.0, amplitude, size=(size, size)), 0, 255)
    return Image.fromarray(np.rint(pixels).astype(np.uint8), mode="L")


__all__ = [
    "make_product_world",
    "make_product_records",
    "make_cluster_world",
    "mask_records",
    "GRID_INTENSITIES",
    "grid_archetypes",
    "grid_intensity",
    "make_grid_world",
    "make_material_db",
    "render_view",
    "FULL_BOARD_CHIPS",
    "CORNER_CHIPS",
    "board_views",
    "RenderedBoard",
    "render_calibration_board",
    "checkerboard",
    "flat_image",
    "textured_panel",
]
