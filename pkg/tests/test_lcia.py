"""
Impact assessment tests
"""
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from carbonforge.agents.abstraction import data_abstraction_for
from carbonforge.core.errors import DataValidationError, UnmatchedEntriesError
from carbonforge.core.generalizer import build_grid_index
from carbonforge.core.lcia import (
    EFGenerator,
    EmissionFactorDB,
    assess,
    compare_to_reported,
    match_entry,
    rank_deviations,
)
from carbonforge.core.models import (
    GENERATED,
    CFBreakdown,
    EntryContribution,
    FeatureVector,
    InventoryEntry,
    LifeCycleInventory,
    ProductRecord,
)
from carbonforge.core.ingestion import PRODUCT_SCHEMA
from carbonforge.core.synthetic import make_grid_world


@pytest.fixture
def db(fixtures_dir, provider):
    return EmissionFactorDB.from_path(fixtures_dir / "efdb.jsonl", provider)


def phone(*entries: InventoryEntry) -> LifeCycleInventory:
    lci = LifeCycleInventory(product="Demo Phone", da=data_abstraction_for("phone"))
    for entry in entries:
        lci = lci.with_entry(entry, "test")
    return lci


PCB = InventoryEntry(component_class="PCB", description="PCB, printed circuit board, 8-layer",
                     quantity=10000, unit="mm2", attributes={"layers": 8})
LOGIC = InventoryEntry(component_class="IC", description="IC, integrated circuit, logic",
                       quantity=3, unit="count")
MYSTERY = InventoryEntry(component_class="mechanical", description="zq unobtainium widget", quantity=50,
                         unit="gram")


class TestMatching:
    """Test EF matching by description similarity"""

    def test_exact_description_matches(self, db):
        result = match_entry(PCB, db)
        assert result.decision == "match"
        assert result.ef_id == "ef-pcb-8l"
        assert result.similarity == pytest.approx(1.0)

    def test_unit_restricts_candidates(self, db):
        entry = LOGIC.model_copy(update={"unit": "gram"})
        result = match_entry(entry, db, threshold=0.0)
        assert db.get(result.ef_id).unit == "gram"

    def test_below_threshold_generates(self, db):
        result = match_entry(MYSTERY, db, threshold=0.99)
        assert result.decision == "generate"
        assert result.best_id is not None
        assert result.similarity < 0.99

    def test_no_unit_candidates(self, provider, db):
        grams_only = EmissionFactorDB([ef for ef in db.factors if ef.unit == "gram"], provider)
        with pytest.raises(UnmatchedEntriesError):
            match_entry(LOGIC, grams_only)
        assert match_entry(LOGIC, grams_only, fallback=True).decision == "generate"

    def test_threshold_range(self, db):
        with pytest.raises(DataValidationError):
            match_entry(PCB, db, threshold=1.5)

    def test_duplicate_ids_rejected(self, db, provider):
        with pytest.raises(DataValidationError):
            EmissionFactorDB(list(db.factors) + [db.factors[0]], provider)


class TestAssess:
    """Test footprint assessment"""

    def test_matched_total(self, db):
        breakdown = assess(phone(PCB, LOGIC), db)
        assert breakdown.total_kgco2e == pytest.approx(10000 * 0.00045 + 3 * 0.9)
        assert breakdown.per_class == pytest.approx({"IC": 2.7, "PCB": 4.5})
        assert breakdown.total_std_kgco2e == 0.0
        assert [c.ef_id for c in breakdown.per_entry] == ["ef-pcb-8l", "ef-ic-logic"]

    def test_empty_inventory(self, db):
        breakdown = assess(phone(), db)
        assert breakdown.total_kgco2e == 0.0
        assert breakdown.per_entry == ()

    def test_unmatched_lists_every_entry(self, db):
        with pytest.raises(UnmatchedEntriesError) as info:
            assess(phone(PCB, MYSTERY, MYSTERY.model_copy(update={"description": "zq other widget"})),
                   db, threshold=0.99)
        assert info.value.entries == [1, 2]
        assert info.value.exit_code == 2

    def test_fallback_generates_with_uncertainty(self, db):
        breakdown = assess(phone(PCB, MYSTERY), db, threshold=0.99, fallback=True)
        generated = breakdown.per_entry[1]
        assert generated.ef_id == GENERATED
        assert generated.estimate is not None
        assert generated.contribution_kgco2e == pytest.approx(50 * generated.estimate.mean)
        assert breakdown.total_std_kgco2e == pytest.approx(50 * generated.estimate.std)

    def test_invalid_inventory_rejected(self, db):
        bad = phone(PCB).with_entry(
            InventoryEntry(component_class="GPU", description="gpu", quantity=1, unit="count"), "test")
        with pytest.raises(DataValidationError, match="violation"):
            assess(bad, db)

    def test_grid_fallback_uses_shares(self, db):
        world = make_grid_world(40, seed=0, noise=0.0, share_sd=0.0)
        generator = EFGenerator(db, k=3, grid_index=build_grid_index(world))
        shares = dict(world[1].source_shares.values)
        use_phase = InventoryEntry(component_class="battery", description="zq charging energy", quantity=10,
                                   unit="kWh", attributes=shares)
        breakdown = assess(phone(use_phase), db, threshold=0.99, fallback=True, generator=generator)
        expected = world[1].carbon_intensity_g_per_kwh / 1000.0 * 10
        assert breakdown.total_kgco2e == pytest.approx(expected, rel=1e-6)

    def test_numeric_string_attributes_coerced(self, db):
        as_text = MYSTERY.model_copy(update={"attributes": {"melting_point_K": "1811"}})
        as_number = MYSTERY.model_copy(update={"attributes": {"melting_point_K": 1811.0}})
        text_total = assess(phone(as_text), db, threshold=0.99, fallback=True).total_kgco2e
        number_total = assess(phone(as_number), db, threshold=0.99, fallback=True).total_kgco2e
        assert text_total == pytest.approx(number_total)

    def test_unparseable_attribute_treated_as_missing(self, db):
        garbled = MYSTERY.model_copy(update={"attributes": {"melting_point_K": "very hot", "density_kg_m3": "nan"}})
        breakdown = assess(phone(garbled), db, threshold=0.99, fallback=True)
        baseline = assess(phone(MYSTERY), db, threshold=0.99, fallback=True)
        assert breakdown.total_kgco2e == pytest.approx(baseline.total_kgco2e)

    def test_total_equals_sum_of_parts(self, db):
        entries = [PCB, LOGIC, InventoryEntry(component_class="passive",
                                              description="capacitor, resistor, passive component",
                                              quantity=400, unit="count")]
        breakdown = assess(phone(*entries), db)
        assert breakdown.total_kgco2e == pytest.approx(math.fsum(breakdown.per_class.values()))

    @settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.floats(0.01, 1e4), st.floats(0.01, 1e4))
    def test_linear_in_quantities(self, db, a, b):
        breakdown = assess(phone(PCB.scaled(a), LOGIC.scaled(b)), db)
        assert breakdown.total_kgco2e == pytest.approx(a * 4.5 + b * 2.7, rel=1e-9)
        assert breakdown.per_class["PCB"] == pytest.approx(a * 4.5, rel=1e-9)


# (component class, id of the factor whose description the entry reuses)
CATALOG = (
    ("PCB", "ef-pcb-8l"), ("IC", "ef-ic-logic"), ("IC", "ef-ic-memory"), ("passive", "ef-passive"),
    ("battery", "ef-battery"), ("display", "ef-display-lcd"), ("display", "ef-glass"),
    ("mechanical", "ef-alu"), ("mechanical", "ef-steel"), ("mechanical", "ef-copper"), ("mechanical", "ef-pe"),
)


def catalog_entry(db, i: int, quantity: float) -> InventoryEntry:
    component_class, ef_id = CATALOG[i]
    ef = db.get(ef_id)
    return InventoryEntry(component_class=component_class, description=ef.description,
                          quantity=quantity, unit=ef.unit)


class TestAssessOracle:
    """Test assessment totals against a direct multiply-sum"""

    def test_random_inventories(self, db):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            picks = rng.choice(len(CATALOG), size=int(rng.integers(1, len(CATALOG) + 1)), replace=False)
            quantities = rng.uniform(0.01, 1e4, size=picks.size)
            entries = [catalog_entry(db, int(i), float(q)) for i, q in zip(picks, quantities)]
            expected = math.fsum(q * db.get(CATALOG[int(i)][1]).kgco2e_per_unit for i, q in zip(picks, quantities))
            assert assess(phone(*entries), db).total_kgco2e == pytest.approx(expected, rel=1e-9)

    @settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(
        st.lists(st.integers(0, len(CATALOG) - 1), min_size=1, max_size=len(CATALOG), unique=True),
        st.floats(0.0, 1e4),
    )
    def test_adding_an_entry_never_lowers_total(self, db, picks, quantity):
        base, extra = picks[:-1], picks[-1]
        entries = [catalog_entry(db, i, 10.0 * (i + 1)) for i in base]
        before = assess(phone(*entries), db).total_kgco2e
        after = assess(phone(*entries, catalog_entry(db, extra, quantity)), db).total_kgco2e
        assert after >= before


class TestDeviation:
    """Test comparison against reported footprints"""

    @staticmethod
    def reported(name: str, cf: float) -> ProductRecord:
        return ProductRecord(company="Demo", category="phone", name=name,
                             features=FeatureVector(schema=PRODUCT_SCHEMA, values={}), reported_cf_kgco2e=cf)

    @staticmethod
    def breakdown(total: float) -> CFBreakdown:
        return CFBreakdown(
            total_kgco2e=total,
            per_entry=(EntryContribution(entry_index=0, ef_id="ef", contribution_kgco2e=total),),
            per_class={"IC": total},
        )

    def test_signed_error_and_ape(self):
        report = compare_to_reported(self.breakdown(120.0), self.reported("p", 100.0))
        assert report.signed_error_kgco2e == pytest.approx(20.0)
        assert report.ape == pytest.approx(20.0)
        assert report.classes[0].share == pytest.approx(1.0)

    def test_fleet_ranked_by_ape(self):
        pairs = [(110.0, 100.0, "a"), (50.0, 100.0, "b"), (100.0, 100.0, "c"), (130.0, 100.0, "d"),
                 (90.0, 100.0, "e"), (99.0, 100.0, "f"), (200.0, 100.0, "g"), (70.0, 100.0, "h"),
                 (105.0, 100.0, "i"), (80.0, 100.0, "j")]
        reports = [compare_to_reported(self.breakdown(est), self.reported(name, rep)) for est, rep, name in pairs]
        fleet = rank_deviations(reports)
        expected = sorted(pairs, key=lambda p: (-abs(p[0] - p[1]) / p[1], p[2]))
        assert [r.product for r in fleet.reports] == [f"Demo/{p[2]}" for p in expected]
        assert [r.product for r in fleet.top(3)] == ["Demo/g", "Demo/b", "Demo/d"]
        assert fleet.bottom(1)[0].product == "Demo/c"
        assert len(fleet.rows()) == 10
