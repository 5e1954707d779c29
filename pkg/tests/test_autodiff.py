import numpy as np
import pytest

from dibod import autodiff as ad
from dibod.autodiff import Tape, Tensor

from util import check_gradients


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(a, b)
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_projector():
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    v = Tensor([[5.0], [7.0]])
    out = ad.matmul(p, v)
    np.testing.assert_array_equal(out.data, [[5.0], [0.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = ad.parameter(rng.normal(size=(3, 3)))
    b = ad.parameter(rng.normal(size=(3, 3)))
    w = Tensor(rng.normal(size=(3, 3)))  # fixed weighting so loss isn't symmetric

    def build():
        return ad.tsum(ad.mul(ad.matmul(a, b), w))

    check_gradients(build, lambda: float((a.data @ b.data * w.data).sum()), [a, b])


def test_relu_values():
    out = ad.relu(Tensor([-1.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 2.0])


def test_softmax_rows_symmetry():
    out = ad.softmax_rows(Tensor([[0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(scale=10.0, size=(20, 7)))
    out = ad.softmax_rows(x)
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(20), atol=1e-12)


def test_cross_entropy_perfect_prediction_is_zero():
    onehot = Tensor([[1.0, 0.0], [0.0, 1.0]])
    loss = ad.cross_entropy_rows(onehot, onehot)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_softmax_cross_entropy_matches_composition():
    rng = np.random.default_rng(4)
    logits = Tensor(rng.normal(size=(6, 3)))
    labels = rng.integers(0, 3, size=6)
    fused = ad.softmax_cross_entropy(logits, labels).item()
    probs = ad.softmax_rows(logits)
    onehot = np.zeros((6, 3))
    onehot[np.arange(6), labels] = 1.0
    composed = ad.cross_entropy_rows(probs, Tensor(onehot)).item()
    assert fused == pytest.approx(composed, rel=1e-10)


def test_log_domain_error():
    with pytest.raises(ad.NumericDomainError):
        ad.log(Tensor([1.0, 0.0]))


def test_backward_quadratic():
    w = ad.parameter([3.0])
    with Tape():
        loss = ad.tsum(ad.mul(w, w))
        ad.backward(loss)
    np.testing.assert_allclose(w.grad, [6.0])


def test_backward_constant_gives_zero_grads():
    w = ad.parameter([3.0])
    with Tape():
        loss = Tensor([5.0])
        ad.backward(loss)
    assert w.grad is None


def test_backward_non_scalar_rejected():
    w = ad.parameter([1.0, 2.0])
    with Tape():
        out = ad.mul(w, w)
        with pytest.raises(ad.ContractError):
            ad.backward(out)


def test_backward_accumulates_without_reset():
    w = ad.parameter([2.0])
    for _ in range(2):
        with Tape():
            loss = ad.tsum(ad.mul(w, w))
            ad.backward(loss)
    np.testing.assert_allclose(w.grad, [8.0])


def test_composite_gcn_like_loss_gradient():
    # relu(S (X W)) -> mean pooled -> squared error against a target
    rng = np.random.default_rng(7)
    s = Tensor(rng.uniform(0, 1, size=(5, 5)))
    x = Tensor(rng.normal(size=(5, 4)))
    w = ad.parameter(rng.normal(size=(4, 3)))
    target = Tensor(rng.normal(size=(1, 3)))
    pool = Tensor(np.full((1, 5), 0.2))

    def build():
        h = ad.relu(ad.matmul(ad.matmul(s, x), w))
        return ad.mse(ad.matmul(pool, h), target)

    def value():
        h = np.maximum(s.data @ x.data @ w.data, 0.0)
        return float(((pool.data @ h - target.data) ** 2).mean())

    check_gradients(build, value, [w])


@pytest.mark.parametrize("seed", range(10))
def test_elementwise_ops_gradients_random_points(seed):
    rng = np.random.default_rng(100 + seed)
    x = ad.parameter(rng.normal(size=(4, 5)))
    y = ad.parameter(rng.uniform(0.5, 2.0, size=(4, 5)))
    r = Tensor(rng.normal(size=(4, 5)))

    def build():
        t = ad.add(ad.mul(x, y), ad.sigmoid(x))
        t = ad.add(t, ad.exp(ad.mul(x, Tensor(np.full((4, 5), 0.1)))))
        t = ad.add(t, ad.log(y))
        t = ad.add(t, ad.div(x, y))
        t = ad.add(t, ad.sqrt(y))
        t = ad.mul(t, r)
        sm = ad.softmax_rows(x)
        return ad.add(ad.tsum(t), ad.tsum(ad.mul(sm, r)))

    def value():
        t = (x.data * y.data + 1 / (1 + np.exp(-x.data))
             + np.exp(0.1 * x.data) + np.log(y.data)
             + x.data / y.data + np.sqrt(y.data)) * r.data
        e = np.exp(x.data - x.data.max(axis=1, keepdims=True))
        sm = e / e.sum(axis=1, keepdims=True)
        return float(t.sum() + (sm * r.data).sum())

    check_gradients(build, value, [x, y])


def test_broadcasting_gradients():
    rng = np.random.default_rng(11)
    x = ad.parameter(rng.normal(size=(4, 3)))
    row = ad.parameter(rng.normal(size=(1, 3)))
    col = ad.parameter(rng.normal(size=(4, 1)))

    def build():
        return ad.tsum(ad.mul(ad.add(x, row), col))

    def value():
        return float(((x.data + row.data) * col.data).sum())

    check_gradients(build, value, [x, row, col])


def test_gather_scatter_take_gradients():
    rng = np.random.default_rng(12)
    x = ad.parameter(rng.normal(size=(5, 3)))
    idx = np.array([0, 2, 2, 4])
    cols = np.array([0, 1, 2, 1, 0])
    r1 = Tensor(rng.normal(size=(4, 3)))
    r2 = Tensor(rng.normal(size=(7, 3)))

    def build():
        g = ad.gather_rows(x, idx)
        s = ad.scatter_rows(x, np.array([0, 1, 3, 5, 6]), 7)
        t = ad.take_cols(x, cols)
        return ad.add(ad.add(ad.tsum(ad.mul(g, r1)), ad.tsum(ad.mul(s, r2))),
                      ad.tsum(t))

    def value():
        s = np.zeros((7, 3))
        s[np.array([0, 1, 3, 5, 6])] = x.data
        t = x.data[np.arange(5), cols]
        return float((x.data[idx] * r1.data).sum() + (s * r2.data).sum() + t.sum())

    check_gradients(build, value, [x])


def test_tape_replay_determinism():
    def run():
        rng = np.random.default_rng(42)
        w = ad.parameter(rng.normal(size=(3, 3)))
        x = Tensor(rng.normal(size=(2, 3)))
        with Tape():
            loss = ad.tsum(ad.relu(ad.matmul(x, w)))
            ad.backward(loss)
        return loss.item(), w.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(g1, g2)


def test_no_tape_runs_plain():
    w = ad.parameter([1.0, 2.0])
    out = ad.mul(w, w)
    assert out.tape_id is None
    np.testing.assert_array_equal(out.data, [1.0, 4.0])


class TestAdam:
    def test_descends_on_quadratic(self):
        w = ad.parameter([1.0])
        opt = ad.Adam([w], lr=0.001)
        with Tape():
            loss = ad.tsum(ad.mul(w, w))
            ad.backward(loss)
        opt.step()
        assert w.data[0] < 1.0

    def test_zero_gradient_keeps_params(self):
        w = ad.parameter([1.0])
        opt = ad.Adam([w], lr=0.001)
        w.grad = np.zeros_like(w.data)
        opt.step()
        np.testing.assert_array_equal(w.data, [1.0])

    def test_missing_gradient_rejected(self):
        w = ad.parameter([1.0])
        opt = ad.Adam([w], lr=0.001)
        with pytest.raises(ad.ContractError):
            opt.step()

    def test_converges_to_quadratic_minimizer(self):
        # f(w) = (w - w*)^T A (w - w*), closed-form minimizer w*
        a_mat = np.array([[3.0, 0.5], [0.5, 1.0]])
        w_star = np.array([[0.7], [-0.3]])
        w = ad.parameter(np.zeros((2, 1)))
        opt = ad.Adam([w], lr=0.01)
        a_t = Tensor(a_mat)
        ws_t = Tensor(w_star)
        for _ in range(2000):
            opt.zero_grad()
            with Tape():
                d = ad.sub(w, ws_t)
                loss = ad.tsum(ad.mul(d, ad.matmul(a_t, d)))
                ad.backward(loss)
            opt.step()
        assert np.linalg.norm(w.data - w_star) < 1e-3
