import numpy as np
import pytest

from numeric import functional as F
from numeric.gradcheck import check_gradients
from numeric.tensor import Tensor, default_dtype, no_grad
from utils.exceptions import ContractError, DegenerateBatchError, DimensionError, NumericError, TokenIndexError


def test_matmul_examples(rng):
    identity = Tensor([[1.0, 0.0], [0.0, 1.0]])
    other = Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(F.matmul(identity, other).data, other.data)
    assert F.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    expected = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(F.matmul(Tensor(a), Tensor(b)).data, expected, atol=1e-6)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_rows():
    np.testing.assert_allclose(F.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-7)
    np.testing.assert_allclose(F.softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])
    with default_dtype(np.float64):
        out = F.softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data
    expected = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
    np.testing.assert_allclose(out[0], expected, atol=1e-7)

    with pytest.raises(DimensionError):
        F.softmax_rows(Tensor(np.ones(3)))
    with pytest.raises(NumericError):
        F.softmax_rows(Tensor([[np.nan, 1.0]]))


def test_softmax_rows_are_stochastic_for_large_logits(rng):
    for _ in range(1000):
        scale = rng.uniform(0.0, 300.0)
        shape = tuple(rng.integers(1, 9, size=2))
        out = F.softmax_rows(Tensor(scale * rng.normal(size=shape))).data
        assert np.isfinite(out).all() and (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-5)


def test_cross_entropy(rng):
    perfect = np.full((3, 4), -1e4)
    perfect[np.arange(3), [1, 2, 3]] = 0.0
    assert F.cross_entropy(Tensor(perfect), [1, 2, 3], pad_id=0).item() == pytest.approx(0.0, abs=1e-6)
    assert F.cross_entropy(Tensor(np.zeros((5, 8))), [1, 2, 3, 4, 5], pad_id=0).item() == pytest.approx(np.log(8))

    with default_dtype(np.float64):
        logits = rng.normal(size=(3, 5))
        loss = F.cross_entropy(Tensor(logits), [2, 4, 0], pad_id=-1).item()
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    assert loss == pytest.approx(-np.mean(log_probs[np.arange(3), [2, 4, 0]]), abs=1e-6)

    # pad positions do not count
    masked = F.cross_entropy(Tensor(logits), [2, 0, 0], pad_id=0).item()
    assert masked == pytest.approx(-log_probs[0, 2], abs=1e-5)


def test_cross_entropy_errors():
    with pytest.raises(DegenerateBatchError):
        F.cross_entropy(Tensor(np.zeros((2, 4))), [0, 0], pad_id=0)
    with pytest.raises(TokenIndexError):
        F.cross_entropy(Tensor(np.zeros((2, 4))), [1, 9], pad_id=0)
    with pytest.raises(DimensionError):
        F.cross_entropy(Tensor(np.zeros((2, 4))), [1, 2, 3], pad_id=0)


def test_backward_simple_cases(rng):
    x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))

    x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    ((x * x).sum() * 0.5).backward()
    np.testing.assert_allclose(x.grad, x.data, rtol=1e-6)


def test_broadcast_gradients_are_summed():
    weights = Tensor(np.ones((2, 3)), requires_grad=True)
    bias = Tensor(np.zeros(3), requires_grad=True)
    (weights + bias).sum().backward()
    np.testing.assert_array_equal(bias.grad, [2.0, 2.0, 2.0])


def test_gradients_accumulate():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_backward_contracts():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()
    with pytest.raises(ContractError):
        Tensor(np.ones(1)).sum().backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad and y.is_leaf


def test_dropout_modes(rng):
    x = Tensor(np.ones((50, 50)))
    assert F.dropout(x, 0.5, rng, training=False) is x
    dropped = F.dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(dropped)) <= {0.0, 2.0}
    np.testing.assert_array_equal(dropped, F.dropout(x, 0.5, np.random.default_rng(0), training=True).data)


def _composite_cases(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    gamma = Tensor(rng.normal(size=4), requires_grad=True)
    beta = Tensor(rng.normal(size=4), requires_grad=True)
    table = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    positive = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    batched = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    weights = rng.normal(size=(3, 5))

    def stacked():
        return F.concat([F.embedding(table, np.array([0, 2, 2])), a], axis=0)

    return {
        "matmul_softmax": (lambda: (F.softmax(F.matmul(a, b)) * weights).sum(), {"a": a, "b": b}),
        "log_softmax": (lambda: (F.log_softmax(F.matmul(a, b), axis=0) * weights).sum(), {"a": a, "b": b}),
        "layer_norm_gelu": (lambda: (F.gelu(F.layer_norm(a, gamma, beta)) * a).sum(),
                            {"a": a, "gamma": gamma, "beta": beta}),
        "cross_entropy": (lambda: F.cross_entropy(F.matmul(a, b), [1, 0, 4], pad_id=0), {"a": a, "b": b}),
        "embedding_concat": (lambda: (stacked() * stacked()).sum(), {"table": table, "a": a}),
        "exp_log_div": (lambda: (F.log(positive) / positive + F.exp(a * 0.5)).sum(), {"positive": positive, "a": a}),
        "expand_getitem": (lambda: (F.expand(a, (2, 3, 4)) * batched)[1, 1:].sum() - (-a).mean(),
                           {"a": a, "batched": batched}),
        "transpose_reshape": (lambda: (F.matmul(batched, b).transpose(0, 2, 1).reshape(10, 3) * 1.5).sum(axis=0)
                              .sum(), {"batched": batched, "b": b}),
    }


@pytest.mark.parametrize("case", ["matmul_softmax", "log_softmax", "layer_norm_gelu", "cross_entropy",
                                  "embedding_concat", "exp_log_div", "expand_getitem", "transpose_reshape"])
def test_gradients_match_finite_differences(case):
    with default_dtype(np.float64):
        loss_fn, tensors = _composite_cases(np.random.default_rng(7))[case]
        errors = check_gradients(loss_fn, tensors, h=1e-4)
    assert max(errors.values()) < 1e-4, errors
