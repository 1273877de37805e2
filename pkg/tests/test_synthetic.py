"""
Synthetic world tests
"""
import numpy as np
import pytest

from carbonforge.core.models import GRID_SOURCES, completeness
from carbonforge.core.synthetic import (
    GRID_INTENSITIES,
    grid_archetypes,
    grid_intensity,
    make_cluster_world,
    make_grid_world,
    make_material_db,
    make_product_records,
    make_product_world,
    mask_records,
)


class TestProductWorld:
    """Test product generators"""

    def test_seeded(self):
        assert make_product_world(20, seed=3) == make_product_world(20, seed=3)
        assert make_product_world(20, seed=3) != make_product_world(20, seed=4)

    def test_records_view(self):
        records = make_product_records(5, company="Acme")
        assert [r.id for r in records] == [f"Acme/P{i:05d}" for i in range(5)]
        assert records[0].reported_cf_kgco2e == make_product_world(5, company="Acme")[0].target

    def test_clusters_share_features(self):
        world = make_cluster_world(3, 4)
        assert len(world) == 12
        assert world[0].features == world[3].features
        assert world[0].features != world[4].features


class TestMasking:
    """Test feature masking"""

    def test_fraction_hidden(self):
        records = make_product_world(50)
        masked = mask_records(records, 0.25, seed=1)
        present = sum(r.features.present_count for r in masked)
        assert present == 50 * 8 - 100

    def test_never_empties_below_one(self):
        masked = mask_records(make_product_world(40), 0.9, seed=2)
        assert all(completeness(r.features) > 0 for r in masked)

    def test_full_mask(self):
        masked = mask_records(make_product_world(5), 1.0)
        assert all(r.features.present_count == 0 for r in masked)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            mask_records(make_product_world(2), 1.5)


class TestGridWorld:
    """Test the linear-mix grid generator"""

    def test_archetypes_are_mixes(self):
        shares = grid_archetypes()
        assert shares.shape == (8, len(GRID_SOURCES))
        assert np.allclose(shares.sum(axis=1), 1.0)
        assert all(len(set(np.round(shares[:, j], 9))) == 8 for j in range(len(GRID_SOURCES)))

    def test_intensity_is_linear(self):
        world = make_grid_world(16, noise=0.0, share_sd=0.0)
        for record in world:
            shares = [record.source_shares.values[s] for s in GRID_SOURCES]
            assert record.carbon_intensity_g_per_kwh == pytest.approx(grid_intensity(shares))

    def test_pure_source(self):
        assert grid_intensity([1.0] + [0.0] * 10) == GRID_INTENSITIES["nuclear"]

    def test_daily_records(self):
        world = make_grid_world(3, days=4)
        assert len(world) == 12
        assert len({r.region for r in world}) == 3


class TestMaterialDb:
    """Test the material EF generator"""

    def test_default_size(self):
        factors = make_material_db()
        assert len(factors) == 90
        assert len({f.isic_class for f in factors}) == 6
        assert all(f.unit == "gram" and f.features is not None for f in factors)
