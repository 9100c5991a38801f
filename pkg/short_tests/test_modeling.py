import numpy as np
import pytest

from modeling.configuration_mpl import MplConfig
from modeling.modeling_mpl import (MASK_VALUE, decode_logits, decode_loss, encode_attributes, encode_image, encode_text,
                                   encode_title, init_params, key_padding_mask, next_token_accuracy, param_shapes,
                                   prefix_log_prior, prefix_memory_mask, prompt_rows)
from numeric.tensor import Tensor
from utils.exceptions import ContractError, DimensionError, TokenIndexError


def test_presets():
    desk = MplConfig.from_preset("desk")
    assert (desk.d_model, desk.num_prompts, desk.num_encoder_layers, desk.num_beams) == (64, 8, 2, 3)
    paper = MplConfig.from_preset("paper", vocab_size=100)
    assert (paper.d_model, paper.num_prompts, paper.vocab_size) == (512, 16, 100)
    with pytest.raises(ContractError):
        MplConfig.from_preset("huge")
    with pytest.raises(ContractError):
        MplConfig(d_model=10, num_attention_heads=4)


def test_config_round_trip():
    config = MplConfig.from_preset("desk", vocab_size=40)
    restored = MplConfig.from_dict(config.to_dict())
    assert restored.d_model == 64 and restored.vocab_size == 40 and restored.unk_token_id == 3


def test_parameter_names_are_stable(tiny_config):
    names = list(param_shapes(tiny_config))
    assert names[:2] == ["image_encoder.projection.weight", "image_encoder.projection.bias"]
    assert "text_encoder.layers.0.self_attn.q_proj.weight" in names
    assert "decoder.layers.1.encoder_attn.o_proj.bias" in names and "prompt_layer_norm.weight" in names
    assert param_shapes(tiny_config)["lm_head.weight"] == (16, 12)
    assert list(init_params(tiny_config, 0)) == names


def test_encode_image_shapes_and_seeds(tiny_config, tiny_model, rng):
    params, _ = tiny_model
    features = rng.normal(size=(tiny_config.image_seq_len, tiny_config.image_feature_dim))
    assert encode_image(features, params, tiny_config).shape == (2, 16)
    assert encode_image(features[None].repeat(3, axis=0), params, tiny_config).shape == (3, 2, 16)
    other = encode_image(features, init_params(tiny_config, seed=99), tiny_config)
    assert not np.allclose(encode_image(features, params, tiny_config).data, other.data)
    with pytest.raises(DimensionError):
        encode_image(np.ones((2, 5)), params, tiny_config)


def test_zero_input_image_rows_share_the_positional_pattern(tiny_config):
    params = init_params(tiny_config, seed=0)
    params["image_encoder.projection.weight"].data[:] = 0.0
    zero = encode_image(np.zeros((2, 4)), params, tiny_config).data
    again = encode_image(np.ones((2, 4)), params, tiny_config).data
    np.testing.assert_allclose(zero, again, atol=1e-6)


def test_text_encoder_contracts(tiny_config, tiny_model):
    params, _ = tiny_model
    assert encode_attributes([5], params, tiny_config).shape == (1, 16)
    assert encode_title([5], params, tiny_config).shape == (1, 16)
    # permuting tokens changes the output
    assert not np.allclose(encode_attributes([5, 6], params, tiny_config).data,
                           encode_attributes([6, 5], params, tiny_config).data[::-1])
    # one shared encoder
    np.testing.assert_array_equal(encode_attributes([4, 7], params, tiny_config).data,
                                  encode_title([4, 7], params, tiny_config).data)
    assert not np.allclose(encode_title([1, 4, 2], params, tiny_config).data,
                           encode_title([1, 5, 2], params, tiny_config).data)


def test_pad_positions_are_masked(tiny_config, tiny_model):
    params, _ = tiny_model
    short = encode_attributes([5, 6], params, tiny_config).data
    padded = encode_attributes([5, 6, 0, 0], params, tiny_config).data
    np.testing.assert_allclose(padded[:2], short, atol=1e-5)
    _, attentions = encode_text(np.array([[5, 6, 0]]), params, tiny_config, output_attentions=True)
    for weights in attentions:
        assert np.all(weights[0, :, :2, 2] == 0.0)


def test_prefix_prior_weighs_any_prefix_like_one_bank(tiny_config, tiny_model, rng):
    params, _ = tiny_model
    assert prefix_log_prior(2, 2) == 0.0 and prefix_log_prior(18, 2) == pytest.approx(-np.log(9.0))
    with pytest.raises(ContractError):
        prefix_log_prior(0, 2)
    keep = np.array([[True, True, True, False]])
    mask = prefix_memory_mask(6, 2, keep)
    np.testing.assert_allclose(mask[0, :6], -np.log(3.0))
    assert mask[0, 6] == 0.0 and mask[0, -1] == MASK_VALUE
    np.testing.assert_array_equal(key_padding_mask(keep)[0, 0, 0], prefix_memory_mask(0, 2, keep)[0])

    # identical keys: the prefix draws the prior mass of one bank of two rows against three representation rows
    same = Tensor(np.tile(rng.normal(size=16), (1, 10, 1)))
    _, _, cross = decode_logits(same, [[1, 4, 5]], params, tiny_config, mask, output_attentions=True)
    np.testing.assert_allclose(cross[0][..., :6].sum(axis=-1), 0.4, atol=1e-5)

    # three copies of a bank act as the bank itself
    bank, representations = rng.normal(size=(2, 16)), rng.normal(size=(4, 16))
    one = decode_logits(Tensor(np.concatenate([bank, representations])[None]), [[1, 4, 5]], params, tiny_config,
                        prefix_memory_mask(2, 2, np.ones((1, 4), dtype=bool))).data
    copies = decode_logits(Tensor(np.concatenate([bank, bank, bank, representations])[None]), [[1, 4, 5]], params,
                           tiny_config, prefix_memory_mask(6, 2, np.ones((1, 4), dtype=bool))).data
    np.testing.assert_allclose(copies, one, atol=1e-5)


def test_prompt_rows_match_the_representation_scale(tiny_config, tiny_model):
    params, bank = tiny_model
    bank.requires_grad_(True)
    rows = prompt_rows(bank.image, params, tiny_config)
    np.testing.assert_allclose(rows.data.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(rows.data.std(axis=-1), 1.0, rtol=0.1)
    (rows * rows).sum().backward()
    assert bank.image.grad is not None and params["prompt_layer_norm.weight"].grad is not None


def test_text_encoder_errors(tiny_config, tiny_model):
    params, _ = tiny_model
    with pytest.raises(TokenIndexError):
        encode_attributes([5, 12], params, tiny_config)
    with pytest.raises(ContractError):
        encode_attributes([], params, tiny_config)
    with pytest.raises(ContractError):
        encode_attributes([4] * 5, params, tiny_config)


def test_decoder_is_causal(tiny_config, tiny_model, rng):
    params, _ = tiny_model
    memory = Tensor(rng.normal(size=(3, 16)))
    logits = decode_logits(memory, [1, 4, 5, 6], params, tiny_config).data
    changed = decode_logits(memory, [1, 4, 9, 9], params, tiny_config).data
    assert logits.shape == (4, 12)
    np.testing.assert_allclose(logits[:2], changed[:2], atol=1e-6)
    assert not np.allclose(logits[2:], changed[2:])
    with pytest.raises(DimensionError):
        decode_logits(Tensor(np.ones((3, 8))), [1, 4], params, tiny_config)


def test_decode_loss_contracts(tiny_config, tiny_model, rng):
    params, _ = tiny_model
    memory = Tensor(rng.normal(size=(3, 16)))
    assert np.isfinite(decode_loss(memory, [1, 4, 5, 2], params, tiny_config).item())
    with pytest.raises(ContractError):
        decode_loss(memory, [4, 5, 2], params, tiny_config)
    with pytest.raises(ContractError):
        decode_loss(memory, [1] + [4] * 8 + [2], params, tiny_config)


def test_decode_loss_ignores_memory_row_order(tiny_config, tiny_model, rng):
    params, _ = tiny_model
    memory = rng.normal(size=(2, 5, 16))
    keep = np.ones((2, 5), dtype=bool)
    keep[1, 3:] = False
    titles = [[1, 4, 5, 2], [1, 6, 2, 0]]
    loss = decode_loss(Tensor(memory), titles, params, tiny_config, keep).item()
    for _ in range(20):
        order = rng.permutation(5)
        permuted = decode_loss(Tensor(memory[:, order]), titles, params, tiny_config, keep[:, order]).item()
        assert abs(permuted - loss) < 1e-6


def test_forced_single_token_vocabulary_has_zero_loss():
    config = MplConfig(d_model=16, num_attention_heads=2, num_encoder_layers=1, num_decoder_layers=1, ffn_dim=16,
                       vocab_size=5, image_feature_dim=4, image_seq_len=2, num_prompts=2, dropout=0.0)
    params = init_params(config, seed=0)
    # only eos is reachable
    params["lm_head.bias"].data[:] = -1e4
    params["lm_head.bias"].data[config.eos_token_id] = 0.0
    params["lm_head.weight"].data[:] = 0.0
    loss = decode_loss(Tensor(np.ones((2, 16))), [1, 2], params, config).item()
    assert loss == pytest.approx(0.0, abs=1e-6)


def test_random_model_loss_is_near_uniform(rng):
    config = MplConfig(d_model=32, num_attention_heads=4, num_encoder_layers=1, num_decoder_layers=2, ffn_dim=64,
                       vocab_size=50, image_feature_dim=4, image_seq_len=2, num_prompts=2, dropout=0.0)
    params = init_params(config, seed=0)
    titles = np.concatenate([np.ones((4, 1)), rng.integers(4, 50, size=(4, 10)), np.full((4, 1), 2)], axis=1)
    loss = decode_loss(Tensor(rng.normal(size=(4, 6, 32))), titles, params, config).item()
    assert abs(loss - np.log(50)) < 0.1 * np.log(50)


def test_dropout_only_in_training(rng):
    config = MplConfig(d_model=16, num_attention_heads=2, num_encoder_layers=1, num_decoder_layers=1, ffn_dim=16,
                       vocab_size=12, image_feature_dim=4, image_seq_len=2, num_prompts=2, dropout=0.3)
    params = init_params(config, seed=0)
    features = rng.normal(size=(2, 4))
    np.testing.assert_array_equal(encode_image(features, params, config).data,
                                  encode_image(features, params, config).data)
    trained = encode_image(features, params, config, training=True, rng=np.random.default_rng(0)).data
    assert not np.allclose(trained, encode_image(features, params, config).data)


def test_next_token_accuracy_range(tiny_config, tiny_model, rng):
    params, _ = tiny_model
    accuracy = next_token_accuracy(Tensor(rng.normal(size=(3, 16))), [[1, 4, 5, 2], [1, 6, 2, 0]], params,
                                   tiny_config)
    assert 0.0 <= accuracy <= 1.0
