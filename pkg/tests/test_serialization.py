"""
Canonical JSON tests
"""
from pathlib import Path

import numpy as np

from carbonforge.core.models import EstimateDistribution, FeatureVector, make_schema
from carbonforge.core.serialization import dumps_canonical, dumps_line, loads, read_json, write_json


class TestCanonicalJson:
    """Test deterministic JSON output"""

    def test_sorted_indented_with_newline(self):
        text = dumps_canonical({"b": 1, "a": [1, 2]}).decode()
        assert text == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'

    def test_models_and_missing(self):
        v = FeatureVector(schema=make_schema([("x", "numeric"), ("y", "categorical")]), values={"x": 1})
        data = loads(dumps_canonical(v))
        assert data["values"] == {"x": 1.0, "y": None}
        assert data["schema"][0] == {"name": "x", "kind": "numeric"}

    def test_numpy_and_paths(self):
        data = loads(dumps_line({"n": np.float64(2.5), "arr": np.arange(2), "p": Path("a/b"), "s": {2, 1}}))
        assert data == {"n": 2.5, "arr": [0, 1], "p": "a/b", "s": [1, 2]}

    def test_line_is_single_line(self):
        assert b"\n" not in dumps_line(EstimateDistribution.from_moments(1.0, 0.5))

    def test_file_round_trip(self, tmp_path):
        e = EstimateDistribution.from_moments(3.0, 1.0)
        path = write_json(tmp_path / "nested" / "e.json", e)
        assert EstimateDistribution.model_validate(read_json(path)) == e
