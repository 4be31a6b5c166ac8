import numpy as np
import pytest

from crossreg import autodiff as ad
from crossreg.errors import ContractError, DimensionMismatchError, NumericError

from helpers import gradcheck


def rand_param(rng, *shape):
    return ad.Tensor(rng.uniform(-1.0, 1.0, shape), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        a = ad.Tensor(rng.uniform(-1, 1, (2, 2)))
        eye = ad.Tensor(np.eye(2))
        assert np.allclose(ad.matmul(eye, a).data, a.data)

    def test_hand_product(self):
        a = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = ad.Tensor([[0.0], [1.0]])
        assert np.array_equal(ad.matmul(a, b).data, [[2.0], [4.0]])

    def test_shape_error_names_both(self):
        with pytest.raises(DimensionMismatchError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))

    def test_grad_of_sum_matches_row_sums_of_b(self):
        # d sum(AB) / dA has every row equal to the per-row sums of B
        rng = np.random.default_rng(1)
        a = rand_param(rng, 3, 4)
        b = ad.Tensor(rng.uniform(-1, 1, (4, 5)))
        loss = ad.tsum(ad.matmul(a, b))
        ad.backward(loss)
        expected = np.tile(b.data.sum(axis=1), (3, 1))
        assert np.allclose(a.grad, expected)

    def test_grad_both_sides_finite_difference(self):
        rng = np.random.default_rng(2)
        a = rand_param(rng, 3, 4)
        b = rand_param(rng, 4, 2)
        gradcheck(lambda: ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [a, b])


class TestSoftmax:
    def test_uniform_row(self):
        out = ad.softmax_rows(ad.Tensor([[0.0, 0.0, 0.0]]))
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_large_entries_stabilized(self):
        out = ad.softmax_rows(ad.Tensor([[1000.0, 0.0]]))
        assert np.isfinite(out.data).all()
        assert out.data[0, 0] > 1.0 - 1e-12

    def test_scalar_evaluation(self):
        out = ad.softmax_rows(ad.Tensor([[1.0, 2.0, 3.0]]))
        assert np.allclose(out.data, [[0.09003, 0.24473, 0.66524]], atol=1e-4)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        out = ad.softmax_rows(ad.Tensor(rng.uniform(-5, 5, (7, 9))))
        assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-9
        assert ((out.data > 0) & (out.data < 1)).all()

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            ad.softmax_rows(ad.Tensor([[np.nan, 0.0]]))

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = rand_param(rng, 4, 5)
        w = ad.Tensor(rng.uniform(-1, 1, (4, 5)))
        gradcheck(lambda: ad.tsum(ad.mul(ad.softmax_rows(x), w)), [x])


class TestBackward:
    def test_sum_gives_ones(self):
        rng = np.random.default_rng(5)
        x = rand_param(rng, 3, 2)
        ad.backward(ad.tsum(x))
        assert np.array_equal(x.grad, np.ones((3, 2)))

    def test_dot_gives_two_x(self):
        rng = np.random.default_rng(6)
        x = rand_param(rng, 5)
        ad.backward(ad.tsum(ad.mul(x, x)))
        assert np.allclose(x.grad, 2.0 * x.data)

    def test_accumulates_without_zeroing(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        ad.backward(ad.tsum(x))
        ad.backward(ad.tsum(x))
        assert np.allclose(x.grad, 2.0)

    def test_non_scalar_rejected(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ContractError):
            ad.backward(ad.add(x, x))

    def test_shared_subexpression(self):
        rng = np.random.default_rng(7)
        x = rand_param(rng, 4)
        y = ad.mul(x, x)
        gradcheck(lambda: ad.tsum(ad.add(ad.mul(x, x), ad.mul(x, x))), [x])
        assert y is not None


@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    x = rand_param(rng, 4, 3)
    y = rand_param(rng, 4, 3)
    w = rng.uniform(-1, 1, (4, 3))
    idx = rng.integers(0, 4, size=6)
    wg = rng.uniform(-1, 1, (6, 3))
    gain = rand_param(rng, 3)
    bias = rand_param(rng, 3)

    both = [x, y]
    only_x = [x]
    cases = [
        (lambda: ad.tsum(ad.mul(ad.add(x, y), w)), both),
        (lambda: ad.tsum(ad.mul(ad.mul(x, y), w)), both),
        (lambda: ad.tsum(ad.div(x, ad.add(ad.mul(y, y), 1.5))), both),
        (lambda: ad.tsum(ad.mul(ad.relu(x), w)), only_x),
        (lambda: ad.tsum(ad.mul(ad.sigmoid(x), w)), only_x),
        (lambda: ad.tsum(ad.mul(ad.exp(x), w)), only_x),
        (lambda: ad.tsum(ad.log(ad.add(ad.mul(x, x), 1.2))), only_x),
        (lambda: ad.tsum(ad.sqrt(ad.add(ad.mul(x, x), 0.3))), only_x),
        (lambda: ad.tsum(ad.mul(ad.gather_rows(x, idx), wg)), only_x),
        (lambda: ad.tsum(ad.mul(ad.concat([x, y], axis=1), ad.concat([w, w], axis=1))), both),
        (lambda: ad.tsum(ad.mul(ad.reshape(x, (3, 4)), ad.reshape(w, (3, 4)))), only_x),
        (lambda: ad.tsum(ad.mul(ad.transpose(x), ad.transpose(w))), only_x),
        (lambda: ad.tsum(ad.mul(ad.tmax(x, axis=0), w[0])), only_x),
        (lambda: ad.tsum(ad.mul(ad.tmean(x, axis=1, keepdims=True), w[:, :1])), only_x),
        (lambda: ad.tsum(ad.mul(ad.layer_norm_rows(x, gain, bias), w)), only_x),
        (lambda: ad.tsum(ad.clip(x, -0.5, 0.5)), only_x),
    ]
    for fn, params in cases:
        gradcheck(fn, params)
    gradcheck(lambda: ad.tsum(ad.mul(ad.layer_norm_rows(x, gain, bias), w)), [gain, bias])


class TestAdam:
    def test_single_step_bias_corrected(self):
        w = ad.Tensor(np.array([0.0]), requires_grad=True)
        w.grad = np.array([1.0])
        opt = ad.AdamState([w], lr=0.001)
        opt.apply_step()
        assert abs(w.data[0] + 0.001) < 1e-6

    def test_zero_grad_leaves_param(self):
        w = ad.Tensor(np.array([0.7]), requires_grad=True)
        w.grad = np.array([0.0])
        ad.AdamState([w]).apply_step()
        assert w.data[0] == 0.7

    def test_missing_grad_rejected(self):
        w = ad.Tensor(np.array([0.0]), requires_grad=True)
        with pytest.raises(ContractError):
            ad.AdamState([w]).apply_step()

    def test_lr_schedule_epoch_boundary(self):
        w = ad.Tensor(np.array([0.0]), requires_grad=True)
        opt = ad.AdamState([w], lr=0.001, lr_decay=0.25, lr_decay_every=5)
        opt.set_epoch(4)
        assert opt.lr == pytest.approx(0.001)
        opt.set_epoch(5)
        assert opt.lr == pytest.approx(0.00025)
        opt.set_epoch(10)
        assert opt.lr == pytest.approx(0.0000625)

    def test_step_counter(self):
        w = ad.Tensor(np.array([0.0]), requires_grad=True)
        w.grad = np.array([0.5])
        opt = ad.AdamState([w])
        opt.apply_step()
        w.grad = np.array([0.5])
        opt.apply_step()
        assert opt.step == 2


def test_no_grad_suppresses_tape():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad
    z = ad.mul(x, x)
    assert z.requires_grad


def test_tensor_invariants():
    t = ad.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    assert len(t.values) == 6
    assert t.shape == (2, 3)
    ad.backward(ad.tsum(t))
    assert len(t.grad_values) == len(t.values)
