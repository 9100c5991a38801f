"""
Encoders and the prefix-conditioned decoder.

All functions take the parameters and the config explicitly and accept either a single sequence
(``[L, ...]``) or a padded batch (``[B, L, ...]``); single sequences are handled as a batch of one.
Blocks are pre-layer-norm transformer blocks with a GELU feed-forward sublayer.
"""
import functools
import logging
from collections import OrderedDict
from typing import List, Optional, Tuple, Union

import numpy as np

from modeling.configuration_mpl import MplConfig
from numeric import functional as F
from numeric.tensor import Tensor, get_default_dtype
from utils.exceptions import ContractError, DimensionError, TokenIndexError

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


class ModelParams(OrderedDict):
    """Named trainable tensors of the encoders, the decoder, the embeddings and the output projection."""

    def copy(self) -> "ModelParams":
        return ModelParams((name, tensor.copy()) for name, tensor in self.items())

    def requires_grad_(self, requires_grad: bool = True) -> "ModelParams":
        for tensor in self.values():
            tensor.requires_grad = requires_grad
        return self

    def zero_grad(self) -> None:
        for tensor in self.values():
            tensor.grad = None

    def num_parameters(self) -> int:
        return int(sum(tensor.size for tensor in self.values()))


def sinusoidal_init(num_positions: int, embedding_dim: int) -> np.ndarray:
    position_enc = np.array([
        [pos / np.power(10000, 2 * (i // 2) / embedding_dim) for i in range(embedding_dim)]
        for pos in range(num_positions)])
    position_enc[:, 0::2] = np.sin(position_enc[:, 0::2])  # dim 2i
    position_enc[:, 1::2] = np.cos(position_enc[:, 1::2])  # dim 2i+1
    return position_enc


@functools.lru_cache(maxsize=16)
def _positions(num_positions: int, embedding_dim: int) -> np.ndarray:
    table = sinusoidal_init(num_positions, embedding_dim)
    table.setflags(write=False)
    return table


def _attention_param_shapes(config: MplConfig, prefix: str) -> List[Tuple[str, Tuple[int, ...]]]:
    d = config.d_model
    shapes = []
    for projection in ("q_proj", "k_proj", "v_proj", "o_proj"):
        shapes += [(f"{prefix}.{projection}.weight", (d, d)), (f"{prefix}.{projection}.bias", (d,))]
    return shapes


def _layer_norm_shapes(prefix: str, d: int) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(f"{prefix}.weight", (d,)), (f"{prefix}.bias", (d,))]


def _feed_forward_shapes(config: MplConfig, prefix: str) -> List[Tuple[str, Tuple[int, ...]]]:
    d, ffn = config.d_model, config.ffn_dim
    return [(f"{prefix}.fc1.weight", (d, ffn)), (f"{prefix}.fc1.bias", (ffn,)),
            (f"{prefix}.fc2.weight", (ffn, d)), (f"{prefix}.fc2.bias", (d,))]


def param_shapes(config: MplConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Names and shapes of all model parameters, in a stable order."""
    d, vocab = config.d_model, config.vocab_size
    shapes = [("image_encoder.projection.weight", (config.image_feature_dim, d)),
              ("image_encoder.projection.bias", (d,)),
              ("text_encoder.embed_tokens.weight", (vocab, d)),
              ("decoder.embed_tokens.weight", (vocab, d))]
    for encoder in ("image_encoder", "text_encoder"):
        for i in range(config.num_encoder_layers):
            layer = f"{encoder}.layers.{i}"
            shapes += _layer_norm_shapes(f"{layer}.self_attn_layer_norm", d)
            shapes += _attention_param_shapes(config, f"{layer}.self_attn")
            shapes += _layer_norm_shapes(f"{layer}.final_layer_norm", d)
            shapes += _feed_forward_shapes(config, layer)
        shapes += _layer_norm_shapes(f"{encoder}.layer_norm", d)
    for i in range(config.num_decoder_layers):
        layer = f"decoder.layers.{i}"
        shapes += _layer_norm_shapes(f"{layer}.self_attn_layer_norm", d)
        shapes += _attention_param_shapes(config, f"{layer}.self_attn")
        shapes += _layer_norm_shapes(f"{layer}.encoder_attn_layer_norm", d)
        shapes += _attention_param_shapes(config, f"{layer}.encoder_attn")
        shapes += _layer_norm_shapes(f"{layer}.final_layer_norm", d)
        shapes += _feed_forward_shapes(config, layer)
    shapes += _layer_norm_shapes("decoder.layer_norm", d)
    shapes += _layer_norm_shapes("prompt_layer_norm", d)
    shapes += [("lm_head.weight", (d, vocab)), ("lm_head.bias", (vocab,))]
    return OrderedDict(shapes)


def init_params(config: MplConfig, seed: int) -> ModelParams:
    """
    Weight matrices and embedding tables are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) (the width d for
    embeddings); biases start at zero and layer norms at the identity.
    """
    rng = np.random.default_rng(seed)
    dtype = get_default_dtype()
    params = ModelParams()
    for name, shape in param_shapes(config).items():
        if name.endswith("layer_norm.weight"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            fan_in = config.d_model if "embed_tokens" in name else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def check_params(params: ModelParams, config: MplConfig) -> None:
    expected = param_shapes(config)
    missing = [name for name in expected if name not in params]
    if missing:
        raise ContractError(f"parameters missing for this config: {missing[:5]}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise DimensionError(f"parameter '{name}' has shape {params[name].shape}, config expects {shape}")


def _linear(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return F.matmul(x, params[f"{prefix}.weight"]) + params[f"{prefix}.bias"]


def _layer_norm(x: Tensor, params: ModelParams, prefix: str, config: MplConfig) -> Tensor:
    return F.layer_norm(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], eps=config.layer_norm_eps)


def prompt_rows(prompts: Tensor, params: ModelParams, config: MplConfig) -> Tensor:
    """Soft-prompt rows brought to the scale of the layer-normed representations they join in the memory."""
    return _layer_norm(prompts, params, "prompt_layer_norm", config)


def key_padding_mask(keep: np.ndarray) -> np.ndarray:
    """
    Additive mask [B, 1, 1, L] from a boolean keep-mask [B, L], or from additive key biases [B, L] such as the
    prefix prior of ``prefix_memory_mask``.
    """
    keep = np.asarray(keep)
    bias = np.where(keep, 0.0, MASK_VALUE) if keep.dtype == bool else np.maximum(keep.astype(np.float64), MASK_VALUE)
    return bias[:, None, None, :]


def prefix_log_prior(num_rows: int, num_prompts: int) -> float:
    """Key bias that gives a prefix of ``num_rows`` rows the summed attention prior of one bank of ``num_prompts``."""
    if num_rows < 1 or num_prompts < 1:
        raise ContractError(f"a prompt prefix needs rows, got {num_rows} rows for banks of {num_prompts}")
    return float(-np.log(num_rows / num_prompts))


def prefix_memory_mask(prefix_rows: int, num_prompts: int, keep: np.ndarray) -> np.ndarray:
    """Additive key biases [B, P + L] for [prefix; representations]: the prefix prior, 0 or MASK_VALUE after it."""
    keep = np.asarray(keep, dtype=bool)
    bias = np.where(keep, 0.0, MASK_VALUE)
    if prefix_rows == 0:
        return bias
    prior = np.full((keep.shape[0], prefix_rows), prefix_log_prior(prefix_rows, num_prompts))
    return np.concatenate([prior, bias], axis=1)


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_VALUE), k=1)[None, None, :, :]


def multi_head_attention(query: Tensor, key_value: Tensor, params: ModelParams, prefix: str, config: MplConfig,
                         mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over ``num_attention_heads`` heads; returns the output and the weights."""
    batch, query_len, d = query.shape
    key_len = key_value.shape[1]
    heads, head_dim = config.num_attention_heads, config.head_dim
    q = _linear(query, params, f"{prefix}.q_proj").reshape(batch, query_len, heads, head_dim).transpose(0, 2, 1, 3)
    k = _linear(key_value, params, f"{prefix}.k_proj").reshape(batch, key_len, heads, head_dim).transpose(0, 2, 3, 1)
    v = _linear(key_value, params, f"{prefix}.v_proj").reshape(batch, key_len, heads, head_dim).transpose(0, 2, 1, 3)
    scores = F.matmul(q, k) * (1.0 / np.sqrt(head_dim))
    if mask is not None:
        scores = scores + mask
    weights = F.softmax(scores, axis=-1)
    context = F.matmul(weights, v).transpose(0, 2, 1, 3).reshape(batch, query_len, d)
    return _linear(context, params, f"{prefix}.o_proj"), weights.data


def _feed_forward(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return _linear(F.gelu(_linear(x, params, f"{prefix}.fc1")), params, f"{prefix}.fc2")


def encoder_stack(x: Tensor, mask: Optional[np.ndarray], params: ModelParams, prefix: str, config: MplConfig,
                  training: bool = False, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, List[np.ndarray]]:
    attentions = []
    for i in range(config.num_encoder_layers):
        layer = f"{prefix}.layers.{i}"
        h = _layer_norm(x, params, f"{layer}.self_attn_layer_norm", config)
        h, weights = multi_head_attention(h, h, params, f"{layer}.self_attn", config, mask)
        x = x + F.dropout(h, config.dropout, rng, training)
        h = _feed_forward(_layer_norm(x, params, f"{layer}.final_layer_norm", config), params, layer)
        x = x + F.dropout(h, config.dropout, rng, training)
        attentions.append(weights)
    return _layer_norm(x, params, f"{prefix}.layer_norm", config), attentions


def _as_batch(x: Union[np.ndarray, Tensor], ndim: int) -> Tuple[Union[np.ndarray, Tensor], bool]:
    if x.ndim == ndim - 1:
        return (x.reshape(1, *x.shape) if isinstance(x, Tensor) else x[None]), True
    return x, False


def _unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return x.reshape(x.shape[1:]) if squeeze else x


def embed_image(image_features: Union[np.ndarray, Tensor], params: ModelParams, config: MplConfig) -> Tensor:
    """Projection to width d plus positions, the input of the image encoder stack."""
    features = image_features if isinstance(image_features, Tensor) else Tensor(image_features)
    if features.shape[-1] != config.image_feature_dim:
        raise DimensionError(f"image features have width {features.shape[-1]}, "
                             f"config expects image_feature_dim={config.image_feature_dim}")
    if features.shape[-2] != config.image_seq_len:
        raise DimensionError(f"image feature sequence has {features.shape[-2]} rows, "
                             f"config expects image_seq_len={config.image_seq_len}")
    positions = _positions(config.image_seq_len, config.d_model).astype(features.dtype)
    return _linear(features, params, "image_encoder.projection") + positions


def encode_image(image_features: Union[np.ndarray, Tensor], params: ModelParams, config: MplConfig,
                 training: bool = False, rng: Optional[np.random.Generator] = None,
                 output_attentions: bool = False):
    """R_I: image feature rows [L_I, F] (or [B, L_I, F]) to representations [L_I, d]."""
    features, squeeze = _as_batch(np.asarray(image_features) if not isinstance(image_features, Tensor)
                                  else image_features, 3)
    x = F.dropout(embed_image(features, params, config), config.dropout, rng, training)
    out, attentions = encoder_stack(x, None, params, "image_encoder", config, training, rng)
    out = _unbatch(out, squeeze)
    return (out, attentions) if output_attentions else out


def _check_token_ids(ids: np.ndarray, config: MplConfig, max_len: int, what: str) -> None:
    if ids.shape[-1] == 0 or ids.size == 0:
        raise ContractError(f"{what} sequence is empty")
    if ids.shape[-1] > max_len:
        raise ContractError(f"{what} sequence has {ids.shape[-1]} tokens, the limit is {max_len}")
    if (ids < 0).any() or (ids >= config.vocab_size).any():
        raise TokenIndexError(f"{what} token ids must lie in [0, {config.vocab_size})")


def _embed_tokens(ids: np.ndarray, params: ModelParams, prefix: str, config: MplConfig) -> Tensor:
    embeddings = F.embedding(params[f"{prefix}.embed_tokens.weight"], ids) * float(np.sqrt(config.d_model))
    return embeddings + _positions(ids.shape[-1], config.d_model).astype(embeddings.dtype)


def encode_text(token_ids, params: ModelParams, config: MplConfig, max_len: Optional[int] = None,
                training: bool = False, rng: Optional[np.random.Generator] = None, output_attentions: bool = False,
                what: str = "text"):
    """Shared text encoder used for attributes and titles; pad positions are masked out as keys."""
    ids, squeeze = _as_batch(np.asarray(token_ids, dtype=np.int64), 2)
    _check_token_ids(ids, config, max_len or max(config.max_title_len, config.max_attribute_len), what)
    x = F.dropout(_embed_tokens(ids, params, "text_encoder", config), config.dropout, rng, training)
    mask = key_padding_mask(ids != config.pad_token_id)
    out, attentions = encoder_stack(x, mask, params, "text_encoder", config, training, rng)
    out = _unbatch(out, squeeze)
    return (out, attentions) if output_attentions else out


def encode_attributes(attribute_tokens, params: ModelParams, config: MplConfig, **kwargs):
    """R_A"""
    return encode_text(attribute_tokens, params, config, max_len=config.max_attribute_len, what="attribute", **kwargs)


def encode_title(title_tokens, params: ModelParams, config: MplConfig, **kwargs):
    """R_T"""
    return encode_text(title_tokens, params, config, max_len=config.max_title_len, what="title", **kwargs)


def decode_logits(memory: Tensor, input_ids, params: ModelParams, config: MplConfig,
                  memory_mask: Optional[np.ndarray] = None, training: bool = False,
                  rng: Optional[np.random.Generator] = None, output_attentions: bool = False):
    """
    Teacher-forced next-token logits [B, T, V]. The memory rows are attended without positions, so the
    decoder treats the prompt and representation prefixes as a set.
    """
    ids, squeeze = _as_batch(np.asarray(input_ids, dtype=np.int64), 2)
    memory, _ = _as_batch(memory, 3)
    if memory.shape[1] < 1:
        raise ContractError("the decoder memory needs at least one row")
    if memory.shape[-1] != config.d_model:
        raise DimensionError(f"memory rows have width {memory.shape[-1]}, config expects d_model={config.d_model}")
    if memory.shape[0] != ids.shape[0]:
        memory = F.expand(memory, (ids.shape[0],) + memory.shape[1:])
    if (ids < 0).any() or (ids >= config.vocab_size).any():
        raise TokenIndexError(f"decoder input ids must lie in [0, {config.vocab_size})")

    x = F.dropout(_embed_tokens(ids, params, "decoder", config), config.dropout, rng, training)
    self_mask = causal_mask(ids.shape[1])
    cross_mask = None if memory_mask is None else key_padding_mask(_as_batch(np.asarray(memory_mask), 2)[0])
    self_attentions, cross_attentions = [], []
    for i in range(config.num_decoder_layers):
        layer = f"decoder.layers.{i}"
        h = _layer_norm(x, params, f"{layer}.self_attn_layer_norm", config)
        h, weights = multi_head_attention(h, h, params, f"{layer}.self_attn", config, self_mask)
        x = x + F.dropout(h, config.dropout, rng, training)
        self_attentions.append(weights)
        h = _layer_norm(x, params, f"{layer}.encoder_attn_layer_norm", config)
        h, weights = multi_head_attention(h, memory, params, f"{layer}.encoder_attn", config, cross_mask)
        x = x + F.dropout(h, config.dropout, rng, training)
        cross_attentions.append(weights)
        h = _feed_forward(_layer_norm(x, params, f"{layer}.final_layer_norm", config), params, layer)
        x = x + F.dropout(h, config.dropout, rng, training)
    x = _layer_norm(x, params, "decoder.layer_norm", config)
    logits = _unbatch(_linear(x, params, "lm_head"), squeeze)
    if output_attentions:
        return logits, self_attentions, cross_attentions
    return logits


def check_titles(titles: np.ndarray, config: MplConfig) -> None:
    if titles.shape[-1] > config.max_title_len:
        raise ContractError(f"title has {titles.shape[-1]} tokens, max_title_len is {config.max_title_len}")
    for row in titles:
        tokens = row[row != config.pad_token_id]
        if len(tokens) < 2 or tokens[0] != config.bos_token_id or tokens[-1] != config.eos_token_id:
            raise ContractError("titles must start with bos and end with eos")


def decode_loss(memory: Tensor, title_tokens, params: ModelParams, config: MplConfig,
                memory_mask: Optional[np.ndarray] = None, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
    """Cross-entropy of the title given the memory prefix, with teacher forcing."""
    titles, _ = _as_batch(np.asarray(title_tokens, dtype=np.int64), 2)
    check_titles(titles, config)
    logits = decode_logits(memory, titles[:, :-1], params, config, memory_mask, training, rng)
    batch, length, vocab = logits.shape
    return F.cross_entropy(logits.reshape(batch * length, vocab), titles[:, 1:].reshape(-1), config.pad_token_id)


def next_token_accuracy(memory: Tensor, title_tokens, params: ModelParams, config: MplConfig,
                        memory_mask: Optional[np.ndarray] = None) -> float:
    """Share of non-pad title positions where the teacher-forced argmax is the reference token."""
    titles, _ = _as_batch(np.asarray(title_tokens, dtype=np.int64), 2)
    logits = decode_logits(memory, titles[:, :-1], params, config, memory_mask).data
    logits = logits.reshape(titles.shape[0], titles.shape[1] - 1, -1)
    targets = titles[:, 1:]
    keep = targets != config.pad_token_id
    return float((logits.argmax(axis=-1) == targets)[keep].mean())
