"""
Command-line interface tests
"""
import orjson
import pytest
from click.testing import CliRunner

from carbonforge.agents.abstraction import data_abstraction_for
from carbonforge.cli.main import cli
from carbonforge.core.estimator import CalibrationTransform, apply_calibration, estimate, load_index
from carbonforge.core.models import FeatureVector, InventoryEntry, LifeCycleInventory
from carbonforge.core.serialization import dumps_canonical, read_json, write_json
from carbonforge.core.synthetic import board_views


@pytest.fixture
def runner():
    return CliRunner(env={"CARBONFORGE_BACKEND_URL": None, "CARBONFORGE_LOG_LEVEL": None})


def run(runner, *args, **kwargs):
    return runner.invoke(cli, list(args), **kwargs)


def payload(result):
    return orjson.loads(result.stdout)


@pytest.fixture
def phone_lci(tmp_path):
    lci = LifeCycleInventory(product="Demo Phone", da=data_abstraction_for("phone"))
    lci = lci.with_entry(InventoryEntry(component_class="PCB", description="PCB, printed circuit board, 8-layer",
                                        quantity=10000, unit="mm2", attributes={"layers": 8}), "test")
    lci = lci.with_entry(InventoryEntry(component_class="IC", description="IC, integrated circuit, logic",
                                        quantity=3, unit="count"), "test")
    return write_json(tmp_path / "lci.json", lci)


class TestEstimate:
    """Test the estimate command"""

    def test_matches_library(self, runner, demo_dir):
        index_path, query_path = demo_dir / "index.json", demo_dir / "query.json"
        result = run(runner, "estimate", "--index", str(index_path), "--query", str(query_path))
        assert result.exit_code == 0, result.stderr
        idx = load_index(index_path)
        query = FeatureVector(schema=idx.specs, values=read_json(query_path)["values"])
        assert result.stdout == dumps_canonical(estimate(idx, query, k=5)).decode()

    def test_calibration(self, runner, demo_dir):
        index_path, query_path = demo_dir / "index.json", demo_dir / "query.json"
        result = run(runner, "estimate", "--index", str(index_path), "--query", str(query_path),
                     "--calibrate", '{"scale": 2}')
        assert result.exit_code == 0, result.stderr
        idx = load_index(index_path)
        base = estimate(idx, FeatureVector(schema=idx.specs, values=read_json(query_path)["values"]), k=5)
        expected = apply_calibration(CalibrationTransform(scale=2.0), base)
        assert payload(result)["mean"] == pytest.approx(expected.mean)
        assert payload(result)["mean"] == pytest.approx(2 * base.mean)

    def test_bad_query_value(self, runner, demo_dir):
        result = run(runner, "estimate", "--index", str(demo_dir / "index.json"),
                     "--query", '{"cpu_node_nm": "fast"}')
        assert result.exit_code == 2
        assert result.stdout == ""
        assert "invalid query" in result.stderr

    def test_missing_option(self, runner, demo_dir):
        result = run(runner, "estimate", "--index", str(demo_dir / "index.json"))
        assert result.exit_code == 1

    def test_unknown_command(self, runner):
        assert run(runner, "teleport").exit_code == 1


class TestIngestAndIndex:
    """Test ingestion and index snapshots"""

    def test_ingest_pcf(self, runner, fixtures_dir):
        result = run(runner, "ingest", "pcf", str(fixtures_dir / "pcf_sample.csv"))
        assert result.exit_code == 0, result.stderr
        body = payload(result)
        assert len(body["records"]) == 11
        assert len(body["rejected"]) == 1
        assert "rejected" in result.stderr

    def test_ingest_grid(self, runner, fixtures_dir):
        body = payload(run(runner, "ingest", "grid", str(fixtures_dir / "grid_daily.csv")))
        assert len(body["records"]) == 5
        assert len(body["rejected"]) == 1

    def test_ingest_grid_aggregate(self, runner, fixtures_dir):
        body = payload(run(runner, "ingest", "grid", str(fixtures_dir / "grid_daily.csv"), "--aggregate"))
        assert [r["region"] for r in body["records"]] == ["NORD", "SUD"]
        assert body["records"][0]["carbon_intensity_g_per_kwh"] == pytest.approx(110.0)

    def test_ingest_efdb(self, runner, fixtures_dir):
        body = payload(run(runner, "ingest", "efdb", str(fixtures_dir / "efdb.jsonl")))
        assert len(body["records"]) == 12
        assert body["rejected"] == []

    def test_build_then_estimate(self, runner, fixtures_dir, demo_dir, tmp_path):
        out = tmp_path / "laptop.json"
        result = run(runner, "index", "build", "--pcf", str(fixtures_dir / "pcf_sample.csv"),
                     "--category", "laptop", "--out", str(out))
        assert result.exit_code == 0, result.stderr
        assert payload(result)["size"] == 9
        assert out.exists()

        result = run(runner, "estimate", "--index", str(out), "--query", str(demo_dir / "query.json"), "--k", "3")
        assert result.exit_code == 0, result.stderr
        assert len(payload(result)["neighbors"]) == 3

    def test_unknown_category(self, runner, fixtures_dir, tmp_path):
        result = run(runner, "index", "build", "--pcf", str(fixtures_dir / "pcf_sample.csv"),
                     "--category", "tablet", "--out", str(tmp_path / "x.json"))
        assert result.exit_code == 2


class TestEmissionFactors:
    """Test the ef commands"""

    def test_grid(self, runner, fixtures_dir):
        query = orjson.dumps({
            "nuclear": 0, "wind": 0, "hydro": 0, "solar": 0.2, "coal": 0.5, "gas": 0.3, "oil": None,
            "biomass": None, "geothermal": None, "battery_discharge": 0, "unknown": 0,
        }).decode()
        result = run(runner, "ef", "grid", "--grid", str(fixtures_dir / "grid_daily.csv"), "--query", query,
                     "--k", "1")
        assert result.exit_code == 0, result.stderr
        assert payload(result)["mean"] == pytest.approx(410.0)

    def test_material_by_id(self, runner, fixtures_dir):
        result = run(runner, "ef", "material", "--efdb", str(fixtures_dir / "efdb.jsonl"), "--id", "ef-alu")
        assert result.exit_code == 0, result.stderr
        body = payload(result)
        assert body["method_tag"] == "knn-gaussian-log"
        assert "ef-alu" not in [n["record_id"] for n in body["neighbors"]]

    def test_material_needs_one_selector(self, runner, fixtures_dir):
        result = run(runner, "ef", "material", "--efdb", str(fixtures_dir / "efdb.jsonl"))
        assert result.exit_code == 1

    def test_unknown_material(self, runner, fixtures_dir):
        result = run(runner, "ef", "material", "--efdb", str(fixtures_dir / "efdb.jsonl"), "--id", "ef-nope")
        assert result.exit_code == 2


class TestAssess:
    """Test the lcia assess command"""

    def test_total(self, runner, fixtures_dir, phone_lci):
        result = run(runner, "lcia", "assess", "--lci", str(phone_lci), "--efdb", str(fixtures_dir / "efdb.jsonl"),
                     "--table")
        assert result.exit_code == 0, result.stderr
        assert payload(result)["total_kgco2e"] == pytest.approx(7.2)
        assert "Demo Phone" in result.stderr

    def test_unmatched_exits_2(self, runner, fixtures_dir, tmp_path):
        lci = LifeCycleInventory(product="Demo Phone", da=data_abstraction_for("phone")).with_entry(
            InventoryEntry(component_class="mechanical", description="zq unobtainium widget", quantity=50,
                           unit="gram"), "test")
        path = write_json(tmp_path / "lci.json", lci)
        result = run(runner, "lcia", "assess", "--lci", str(path), "--efdb", str(fixtures_dir / "efdb.jsonl"))
        assert result.exit_code == 2
        assert result.stdout == ""


class TestVision:
    """Test the vision commands"""

    @pytest.fixture
    def view_paths(self, tmp_path):
        paths = []
        for name, image in board_views().items():
            path = tmp_path / f"{name}.png"
            image.save(path)
            paths.append(path)
        return paths

    def test_dims(self, runner):
        result = run(runner, "vision", "dims", "--ref-mm", "10", "10", "--ref-bbox", "40", "40", "100", "100",
                     "--board-bbox", "0", "0", "1530", "670")
        assert result.exit_code == 0, result.stderr
        board = payload(result)["board"]
        assert board["w_mm"] == pytest.approx(153.0)
        assert board["h_mm"] == pytest.approx(67.0)

    def test_rank(self, runner, view_paths):
        result = run(runner, "vision", "rank", *map(str, view_paths))
        assert result.exit_code == 0, result.stderr
        body = payload(result)
        assert body["scores"][0]["doc_id"].endswith("full_board.png")
        assert body["skipped"] == []

    def test_score(self, runner, view_paths):
        body = payload(run(runner, "vision", "score", *map(str, view_paths)))
        assert len(body) == 3
        assert all(item["hf_energy"] >= 0 for item in body)


class TestAgent:
    """Test the agent commands"""

    def test_run(self, runner, corpus_dir, tmp_path):
        transcript_path = tmp_path / "out" / "transcript.json"
        result = run(runner, "agent", "run", "--query", "Fairphone Demo", "--corpus", str(corpus_dir),
                     "--transcript", str(transcript_path))
        assert result.exit_code == 0, result.stderr
        body = payload(result)
        assert body["transcript"]["status"] == "converged"
        assert len(body["lci"]["entries"]) == 10
        assert read_json(transcript_path) == body["transcript"]

    def test_unreachable_backend_exits_3(self, runner, corpus_dir):
        result = run(runner, "agent", "run", "--query", "Fairphone Demo", "--corpus", str(corpus_dir),
                     env={"CARBONFORGE_BACKEND_URL": "http://127.0.0.1:9"})
        assert result.exit_code == 3
        assert payload(result)["transcript"]["status"] == "backend_error"

    def test_scaling(self, runner):
        result = run(runner, "agent", "scaling", "--suite-size", "2", "--values", "1,8", "--workers", "1")
        assert result.exit_code == 0, result.stderr
        body = payload(result)
        assert body["dimension"] == "rounds"
        assert [p["max_rounds"] for p in body["points"]] == [1, 8]


class TestEval:
    """Test the experiment commands"""

    def test_cv_synthetic(self, runner, tmp_path):
        csv_path = tmp_path / "cv.csv"
        result = run(runner, "eval", "cv", "--synthetic", "30", "--k-folds", "3", "--csv", str(csv_path))
        assert result.exit_code == 0, result.stderr
        assert len(payload(result)["folds"]) == 3
        assert csv_path.read_text().splitlines()[0] == "fold,n_train,n_test,mape,mae"

    def test_kfold_alias(self, runner):
        result = run(runner, "eval", "kfold", "--synthetic", "30", "--k-folds", "3")
        assert result.exit_code == 0, result.stderr

    def test_records_source_required(self, runner):
        assert run(runner, "eval", "cv").exit_code == 1

    def test_benchmark(self, runner):
        result = run(runner, "eval", "benchmark", "--n-masked", "10")
        assert result.exit_code == 0, result.stderr
        body = payload(result)
        assert body["n_masked"] == 10
        assert len(body["entries"]) == 10


class TestGlobalOptions:
    """Test options on the root group"""

    def test_missing_config_file(self, runner, tmp_path):
        result = run(runner, "--config", str(tmp_path / "missing.yaml"), "vision", "dims", "--ref-mm", "1", "1",
                     "--ref-bbox", "0", "0", "1", "1", "--board-bbox", "0", "0", "1", "1")
        assert result.exit_code == 2
        assert "not found" in result.stderr

    def test_json_logs(self, runner, demo_dir):
        result = run(runner, "--log-format", "json", "--log-level", "debug", "estimate",
                     "--index", str(demo_dir / "index.json"), "--query", str(demo_dir / "query.json"))
        assert result.exit_code == 0, result.stderr
        assert orjson.loads(result.stdout)["method_tag"]
