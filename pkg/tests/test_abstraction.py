"""
Data abstraction tests
"""
from types import SimpleNamespace

import pytest

from carbonforge.agents.abstraction import (
    BASE_CLASSES,
    LLMDataAbstractionBuilder,
    build_data_abstraction,
    classify_product,
    data_abstraction_for,
)
from carbonforge.core.errors import BackendError, DataValidationError


class FakeChat:
    def __init__(self, reply):
        self.reply = reply
        self.calls = []
        self.chat = SimpleNamespace(completions=self)

    def create(self, **kwargs):
        self.calls.append(kwargs)
        if isinstance(self.reply, Exception):
            raise self.reply
        message = SimpleNamespace(content=self.reply)
        return SimpleNamespace(choices=[SimpleNamespace(message=message)])


class TestRules:
    """Test keyword classification"""

    @pytest.mark.parametrize("query, expected", [
        ("NVIDIA GeForce RTX 4090", "gpu"),
        ("ASUS ROG Z790 Hero", "motherboard"),
        ("Fairphone 4 smartphone", "phone"),
        ("Lenovo ThinkPad X1", "laptop"),
        ("Apple iPad Air", "tablet"),
        ("Samsung Galaxy Tab S9", "tablet"),
        ("Samsung Galaxy S24", "phone"),
        ("iPhone 12 Pro", "phone"),
        ("ROG STRIX Z790-A", "motherboard"),
        ("Dell 27 inch monitor", "display"),
        ("Kitchen toaster", None),
    ])
    def test_classify(self, query, expected):
        assert classify_product(query) == expected

    def test_keywords_match_inside_names(self):
        assert classify_product("Fairphone Demo") == "phone"

    def test_phone_abstraction(self):
        da = build_data_abstraction("Fairphone Demo phone")
        assert da.product_class == "phone"
        assert da.component_classes == BASE_CLASSES + ("battery", "display")
        assert da.required_for("battery") == ("capacity_wh",)
        assert da.required_for("sensor") == ()

    def test_gpu_has_no_subsystems(self):
        da = data_abstraction_for("gpu")
        assert da.component_classes == BASE_CLASSES
        assert "battery" not in da.required_attributes

    def test_unknown_product_falls_back(self, caplog):
        da = build_data_abstraction("mystery gadget")
        assert da.product_class == "electronics"
        assert "no product rule" in caplog.text

    def test_empty_query(self):
        with pytest.raises(DataValidationError):
            build_data_abstraction("   ")

    def test_unknown_class(self):
        with pytest.raises(DataValidationError):
            data_abstraction_for("spaceship")


class TestLLMBuilder:
    """Test the chat-model classifier with a stubbed client"""

    def test_known_answer(self):
        fake = FakeChat("Laptop.")
        da = LLMDataAbstractionBuilder(client=fake)("Framework 13")
        assert da.product_class == "laptop"
        assert fake.calls[0]["temperature"] == 0

    def test_out_of_vocabulary_uses_rules(self):
        da = LLMDataAbstractionBuilder(client=FakeChat("a toaster"))("Pixel 8")
        assert da.product_class == "phone"

    def test_client_failure(self):
        with pytest.raises(BackendError):
            LLMDataAbstractionBuilder(client=FakeChat(RuntimeError("quota")))("Pixel 8")
