from transformers.utils import ExplicitEnum
from typing import Optional

from dataclasses import dataclass, field, fields


class ModelPreset(ExplicitEnum):
    DESK = "desk"
    PAPER = "paper"


@dataclass
class ModelArguments:
    """
    Arguments pertaining to the encoder-decoder and the prompt banks.

    Every architecture field left at None is taken from the chosen preset.
    """
    model_preset: ModelPreset = field(
        default=ModelPreset.DESK,
        metadata={"help": "Size preset: 'desk' (d=64, N_P=8, 2 layers) or 'paper' (d=512, N_P=16, 6 layers)."},
    )
    d_model: Optional[int] = field(
        default=None, metadata={"help": "Model width d. Overrides the preset if set."},
    )
    num_attention_heads: Optional[int] = field(
        default=None, metadata={"help": "Number of attention heads; must divide d_model."},
    )
    num_encoder_layers: Optional[int] = field(
        default=None, metadata={"help": "Self-attention blocks in each encoder."},
    )
    num_decoder_layers: Optional[int] = field(
        default=None, metadata={"help": "Blocks in the prefix-conditioned decoder."},
    )
    ffn_dim: Optional[int] = field(
        default=None, metadata={"help": "Width of the feed-forward sublayers."},
    )
    num_prompts: Optional[int] = field(
        default=None, metadata={"help": "Number of soft prompts N_P per prompt bank."},
    )
    dropout: float = field(
        default=0.1, metadata={"help": "Dropout rate in training mode (always 0 in eval mode)."},
    )
    max_title_len: int = field(
        default=24, metadata={"help": "Maximum title length in tokens, including bos and eos."},
    )
    max_attribute_len: int = field(
        default=8, metadata={"help": "Maximum number of attribute tokens per product."},
    )
    alignment_scale: float = field(
        default=1.0,
        metadata={"help": "Factor applied to the prompt dot products inside cycle alignment. "
                          "1.0 uses the raw dot products."},
    )

    def __post_init__(self):
        self.model_preset = ModelPreset(self.model_preset)

    def architecture_overrides(self) -> dict:
        """the fields that were explicitly set"""
        skip = {"model_preset"}
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name not in skip and getattr(self, f.name) is not None}
