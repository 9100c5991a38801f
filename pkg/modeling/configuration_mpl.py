from transformers import PretrainedConfig
from transformers.utils import logging

from utils.exceptions import ContractError

logger = logging.get_logger(__name__)

MPL_PRESETS = {
    "desk": dict(d_model=64, num_attention_heads=4, num_encoder_layers=2, num_decoder_layers=2, ffn_dim=128,
                 num_prompts=8),
    "paper": dict(d_model=512, num_attention_heads=8, num_encoder_layers=6, num_decoder_layers=6, ffn_dim=2048,
                  num_prompts=16),
}


class MplConfig(PretrainedConfig):
    r"""
    Configuration of the prompt-conditioned encoder-decoder title generator.

    Args:
        d_model (:obj:`int`, `optional`, defaults to 64):
            Width of all representations, prompts and memory rows.
        num_attention_heads (:obj:`int`, `optional`, defaults to 4):
            Heads of every attention sublayer; must divide ``d_model``.
        num_encoder_layers (:obj:`int`, `optional`, defaults to 2):
            Self-attention blocks of the image encoder and of the shared text encoder.
        num_decoder_layers (:obj:`int`, `optional`, defaults to 2):
            Blocks of the decoder (causal self-attention, cross-attention over the memory, feed-forward).
        ffn_dim (:obj:`int`, `optional`, defaults to 128):
            Width of the feed-forward sublayers.
        vocab_size (:obj:`int`, `optional`, defaults to 32):
            Size of the shared vocabulary including the four reserved tokens.
        max_title_len (:obj:`int`, `optional`, defaults to 24):
            Longest title in tokens, bos and eos included.
        max_attribute_len (:obj:`int`, `optional`, defaults to 8):
            Longest attribute sequence.
        image_feature_dim (:obj:`int`, `optional`, defaults to 32):
            Width of the precomputed image feature rows.
        image_seq_len (:obj:`int`, `optional`, defaults to 5):
            Number of image feature rows per product.
        num_prompts (:obj:`int`, `optional`, defaults to 8):
            Soft prompts per prompt bank (N_P).
        dropout (:obj:`float`, `optional`, defaults to 0.1):
            Dropout rate in training mode.
        alignment_scale (:obj:`float`, `optional`, defaults to 1.0):
            Factor applied to the prompt dot products of the cycle alignment.
    """

    model_type = "mpl"

    def __init__(
            self,
            d_model: int = 64,
            num_attention_heads: int = 4,
            num_encoder_layers: int = 2,
            num_decoder_layers: int = 2,
            ffn_dim: int = 128,
            vocab_size: int = 32,
            max_title_len: int = 24,
            max_attribute_len: int = 8,
            image_feature_dim: int = 32,
            image_seq_len: int = 5,
            num_prompts: int = 8,
            dropout: float = 0.1,
            alignment_scale: float = 1.0,
            layer_norm_eps: float = 1e-5,
            num_beams: int = 3,
            pad_token_id: int = 0,
            bos_token_id: int = 1,
            eos_token_id: int = 2,
            unk_token_id: int = 3,
            **kwargs
    ):
        super().__init__(pad_token_id=pad_token_id, bos_token_id=bos_token_id, eos_token_id=eos_token_id, **kwargs)

        self.d_model = d_model
        self.num_attention_heads = num_attention_heads
        self.num_encoder_layers = num_encoder_layers
        self.num_decoder_layers = num_decoder_layers
        self.ffn_dim = ffn_dim
        self.vocab_size = vocab_size
        self.max_title_len = max_title_len
        self.max_attribute_len = max_attribute_len
        self.image_feature_dim = image_feature_dim
        self.image_seq_len = image_seq_len
        self.num_prompts = num_prompts
        self.dropout = dropout
        self.alignment_scale = alignment_scale
        self.layer_norm_eps = layer_norm_eps
        self.num_beams = num_beams
        self.unk_token_id = unk_token_id

        if d_model % num_attention_heads != 0:
            raise ContractError(f"d_model={d_model} is not divisible by num_attention_heads={num_attention_heads}")
        if num_prompts < 1:
            raise ContractError(f"num_prompts must be at least 1, got {num_prompts}")
        if vocab_size <= max(pad_token_id, bos_token_id, eos_token_id, unk_token_id):
            raise ContractError(f"vocab_size={vocab_size} does not cover the reserved token ids")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_attention_heads

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "MplConfig":
        if preset not in MPL_PRESETS:
            raise ContractError(f"unknown model preset '{preset}', choose one of {sorted(MPL_PRESETS)}")
        return cls(**{**MPL_PRESETS[preset], **overrides})
