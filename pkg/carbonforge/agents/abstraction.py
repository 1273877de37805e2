"""
Data abstraction construction.

The rule table maps a product class to the component classes an LCI may
contain and the attributes each class must carry. Product classes are
recognised from keywords in the query; the first matching rule wins.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from ..core.errors import BackendError, DataValidationError
from ..core.models import DataAbstraction

logger = logging.getLogger(__name__)

BASE_CLASSES: Tuple[str, ...] = ("PCB", "IC", "sensor", "passive", "mechanical")
REQUIRED_ATTRIBUTES: Dict[str, Tuple[str, ...]] = {
    "PCB": ("layers",),
    "IC": ("technology_node",),
    "battery": ("capacity_wh",),
    "display": ("display_type",),
}
DEFAULT_PRODUCT_CLASS = "electronics"


@dataclass(frozen=True)
class ProductRule:
    product_class: str
    keywords: Tuple[str, ...]
    subsystems: Tuple[str, ...] = ()


# First match wins; narrower product names come before broader ones
PRODUCT_RULES: Tuple[ProductRule, ...] = (
    ProductRule("gpu", ("gpu", "geforce", "rtx", "radeon", "graphics card")),
    ProductRule("motherboard", ("z790", "b650", "x670", "motherboard", "mainboard")),
    ProductRule("tablet", ("tablet", "ipad", "galaxy tab"), ("battery", "display")),
    ProductRule("phone", ("phone", "galaxy", "pixel", "smartphone"), ("battery", "display")),
    ProductRule("laptop", ("laptop", "notebook", "macbook", "thinkpad"), ("battery", "display")),
    ProductRule("display", ("display", "monitor"), ("display",)),
)
PRODUCT_CLASSES: Tuple[str, ...] = tuple(r.product_class for r in PRODUCT_RULES) + (DEFAULT_PRODUCT_CLASS,)


def _words(query: str) -> str:
    return " " + re.sub(r"[^a-z0-9]+", " ", query.lower()).strip() + " "


def classify_product(query: str) -> Optional[str]:
    """Product class from the rule table keywords, or None"""
    text = _words(query)
    for rule in PRODUCT_RULES:
        if any(kw in text for kw in rule.keywords):
            return rule.product_class
    return None


def data_abstraction_for(product_class: str) -> DataAbstraction:
    subsystems: Tuple[str, ...] = ()
    for rule in PRODUCT_RULES:
        if rule.product_class == product_class:
            subsystems = rule.subsystems
            break
    else:
        if product_class != DEFAULT_PRODUCT_CLASS:
            raise DataValidationError(
                f"unknown product class {product_class!r}; expected one of {list(PRODUCT_CLASSES)}"
            )
    classes = BASE_CLASSES + subsystems
    return DataAbstraction(
        product_class=product_class,
        component_classes=classes,
        required_attributes={c: a for c, a in REQUIRED_ATTRIBUTES.items() if c in classes},
    )


def build_data_abstraction(query: str) -> DataAbstraction:
    """DA for a product name or image reference

    Unrecognised products get the base electronics classes and a warning.
    """
    if not query or not query.strip():
        raise DataValidationError("data abstraction needs a non-empty product query")
    product_class = classify_product(query)
    if product_class is None:
        logger.warning("no product rule matches %r; using the default electronics abstraction", query)
        product_class = DEFAULT_PRODUCT_CLASS
    return data_abstraction_for(product_class)


class LLMDataAbstractionBuilder:
    """Classify the product with a hosted chat model, then apply the rule table

    The model may only answer with a known product class; anything else falls
    back to the keyword rules. Requires the ``llm`` extra.
    """

    SYSTEM_PROMPT = (
        "You classify electronic products for a carbon footprint inventory. "
        "Answer with exactly one word from this list: {classes}."
    )

    def __init__(self, model: str = "gpt-4o-mini", api_key: Optional[str] = None,
                 base_url: Optional[str] = None, client: object = None):
        if client is None:
            try:
                from openai import OpenAI
            except ImportError as exc:
                raise BackendError(
                    "the LLM data abstraction needs the openai package (pip install carbonforge[llm])"
                ) from exc
            client = OpenAI(api_key=api_key, base_url=base_url)
        self.client = client
        self.model = model

    def classify(self, query: str) -> Optional[str]:
        try:
            resp = self.client.chat.completions.create(  # type: ignore[attr-defined]
                model=self.model,
                temperature=0,
                messages=[
                    {"role": "system",
                     "content": self.SYSTEM_PROMPT.format(classes=", ".join(PRODUCT_CLASSES))},
                    {"role": "user", "content": query},
                ],
            )
            content = resp.choices[0].message.content or ""
        except Exception as exc:
            raise BackendError(f"LLM classification failed: {exc}") from exc
        answer = content.strip().strip(".").lower()
        return answer if answer in PRODUCT_CLASSES else None

    def __call__(self, query: str) -> DataAbstraction:
        if not query or not query.strip():
            raise DataValidationError("data abstraction needs a non-empty product query")
        product_class = self.classify(query)
        if product_class is None:
            logger.info("LLM answer outside the product vocabulary for %r; using keyword rules", query)
            return build_data_abstraction(query)
        return data_abstraction_for(product_class)


__all__ = [
    "BASE_CLASSES",
    "REQUIRED_ATTRIBUTES",
    "DEFAULT_PRODUCT_CLASS",
    "ProductRule",
    "PRODUCT_RULES",
    "PRODUCT_CLASSES",
    "classify_product",
    "data_abstraction_for",
    "build_data_abstraction",
    "LLMDataAbstractionBuilder",
]
