import numpy as np
import pytest

from arguments.training_arguments import AblationSetting, Modality
from modeling.configuration_mpl import MplConfig
from modeling.modeling_mpl import decode_loss, init_params
from numeric.gradcheck import check_gradients
from numeric.optim import AdamW, AdamWState, adamw_step
from numeric.tensor import Tensor, default_dtype
from prompts.prompt_bank import bank_init
from training.trainer import Batch, mpt_loss, upt_losses
from utils.exceptions import ContractError


def test_zero_grad_without_decay_is_a_no_op():
    param = Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=np.float64)
    param.grad = np.zeros(2)
    adamw_step({"w": param}, AdamWState(learning_rate=0.1, weight_decay=0.0))
    np.testing.assert_array_equal(param.data, [1.0, -2.0])


def test_first_step_matches_closed_form():
    lr, wd, grad = 0.1, 0.01, 0.5
    param = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    param.grad = np.array([grad])
    state = AdamWState(learning_rate=lr, weight_decay=wd)
    adamw_step({"w": param}, state)
    # after one step the bias-corrected moments are g and g^2
    expected = 1.0 * (1 - lr * wd) - lr * grad / (abs(grad) + 1e-8)
    assert param.data[0] == pytest.approx(expected, abs=1e-12)
    assert state.step == 1
    assert param.grad is None


def test_missing_gradient_is_rejected():
    with pytest.raises(ContractError):
        adamw_step({"w": Tensor(np.ones(2), requires_grad=True)}, AdamWState())


def test_wrapper_skips_parameters_without_gradients():
    used = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    optimizer = AdamW({"used": used, "unused": unused}, learning_rate=0.1)
    (used * 2.0).sum().backward()
    optimizer.step()
    assert "unused" not in optimizer.state.exp_avg
    np.testing.assert_array_equal(unused.data, [1.0, 1.0])
    assert (used.data < 1.0).all()


def test_adamw_minimizes_a_quadratic():
    x = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
    optimizer = AdamW({"x": x}, learning_rate=0.1, weight_decay=0.0)
    for _ in range(500):
        optimizer.zero_grad()
        ((x - 3.0) * (x - 3.0)).sum().backward()
        optimizer.step()
    np.testing.assert_allclose(x.data, 3.0, atol=1e-2)


def test_default_learning_rate():
    assert AdamWState().learning_rate == 1e-4


# end-to-end gradients of the two training objectives

CHECKED = ["image_encoder.projection.bias", "text_encoder.layers.1.fc2.bias", "text_encoder.layer_norm.weight",
           "decoder.layers.0.encoder_attn.q_proj.bias", "decoder.layers.1.self_attn.v_proj.bias", "lm_head.bias"]


def _gradcheck_batch(config: MplConfig, rng: np.random.Generator) -> Batch:
    return Batch(ids=["p0", "p1"],
                 image_features=rng.normal(size=(2, config.image_seq_len, config.image_feature_dim)),
                 attribute_ids=np.array([[4, 5, 6], [7, 8, 0]]),
                 title_ids=np.array([[1, 4, 9, 10, 2], [1, 11, 7, 2, 0]]),
                 text_only_ids=np.array([[1, 5, 6, 2, 0]]),
                 references=["", ""])


@pytest.mark.parametrize("objective", ["upt", "mpt"])
def test_training_objectives_match_finite_differences(tiny_config, objective):
    with default_dtype(np.float64):
        params, bank = init_params(tiny_config, seed=3), bank_init(tiny_config, seed=4)
        batch = _gradcheck_batch(tiny_config, np.random.default_rng(5))
        lambdas = {Modality.IMAGE: 1.0, Modality.ATTRIBUTE: 0.7, Modality.TITLE: 0.4}
        if objective == "upt":
            def loss_fn():
                return upt_losses(batch, params, bank, tiny_config, AblationSetting.MPL, lambdas)[1]
        else:
            def loss_fn():
                return mpt_loss(batch, params, bank, tiny_config, AblationSetting.MPL)
        tensors = {name: params[name] for name in CHECKED}
        tensors.update(bank.parameters_dict())
        errors = check_gradients(loss_fn, tensors, h=1e-4)
    assert max(errors.values()) < 1e-4, errors


def test_decode_loss_gradient_wrt_memory(tiny_config):
    with default_dtype(np.float64):
        params = init_params(tiny_config, seed=3)
        memory = Tensor(np.random.default_rng(0).normal(size=(3, tiny_config.d_model)), requires_grad=True)
        errors = check_gradients(lambda: decode_loss(memory, [1, 4, 5, 2], params, tiny_config), {"memory": memory})
    assert errors["memory"] < 1e-4
