"""fume/net/variants.py

The seven architecture variants and what each one assembles.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

from fume.errors import VariantError


class Variant(str, Enum):
    FUME = "fume"
    FULL_CROSS = "full-cross-modal-attn"
    SELF_ATTN_ONLY = "self-attn-only"
    CO2_ONLY = "co2-only"
    CH4_ONLY = "ch4-only"
    CLASSIFICATION_ONLY = "classification-only"
    SEGMENTATION_ONLY = "segmentation-only"


# Row order of the ablation table
ABLATION_ORDER = (
    Variant.FULL_CROSS,
    Variant.SELF_ATTN_ONLY,
    Variant.CO2_ONLY,
    Variant.CH4_ONLY,
    Variant.CLASSIFICATION_ONLY,
    Variant.SEGMENTATION_ONLY,
    Variant.FUME,
)

STREAMS = ("co2", "ch4")


@dataclass(frozen=True)
class ModelVariantConfig:
    """Routing switches derived from a variant name."""
    variant: Variant

    @classmethod
    def parse(cls, value: Union[str, Variant, "ModelVariantConfig"]) -> "ModelVariantConfig":
        if isinstance(value, ModelVariantConfig):
            return value
        try:
            return cls(Variant(value))
        except ValueError:
            known = ", ".join(v.value for v in Variant)
            raise VariantError(f"Unknown variant {value!r}; expected one of: {known}")

    @property
    def name(self) -> str:
        return self.variant.value

    @property
    def streams(self) -> Tuple[str, ...]:
        if self.variant is Variant.CO2_ONLY:
            return ("co2",)
        if self.variant is Variant.CH4_ONLY:
            return ("ch4",)
        return STREAMS

    @property
    def has_decoders(self) -> bool:
        return self.variant is not Variant.CLASSIFICATION_ONLY

    @property
    def has_head(self) -> bool:
        return self.variant is not Variant.SEGMENTATION_ONLY

    @property
    def has_fusion(self) -> bool:
        return self.has_head

    @property
    def channel_attention(self) -> bool:
        return self.variant is not Variant.SELF_ATTN_ONLY

    @property
    def cross_attention(self) -> bool:
        return self.variant is Variant.FULL_CROSS
