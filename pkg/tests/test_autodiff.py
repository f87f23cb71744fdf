import numpy as np
import pytest

from symnets import autodiff as ad
from symnets.autodiff import Node


def leaf(value, name):
    return Node(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)


def test_quadratic_form_gradient_matches_closed_form(rng):
    A = rng.normal(size=(4, 4))
    x0 = rng.normal(size=(4, 1))

    def f(P):
        x = P["x"]
        return ad.sum_all(ad.mul(x, ad.matmul(ad.constant(A), x)))

    x = leaf(x0, "x")
    g = ad.backward(f({"x": x}))[x]
    np.testing.assert_allclose(g, (A + A.T) @ x0, rtol=1e-13)
    assert ad.grad_check(f, {"x": x0}) <= 1e-8


# each op composed into a scalar through a fixed random weighting
OPS = {
    "matmul": (lambda a, b: ad.matmul(a, ad.transpose(b)), 2),
    "linear": (lambda a, b: ad.linear(a, b, ad.transpose(ad.slice_cols(a, 0, 1))), 2),
    "add_broadcast": (lambda a, b: ad.add(a, ad.slice_cols(b, 0, 1)), 2),
    "sub": (lambda a, b: ad.sub(a, b), 2),
    "mul": (lambda a, b: ad.mul(a, b), 2),
    "scale_neg": (lambda a, b: ad.neg(ad.scale(a, 2.5)), 1),
    "relu": (lambda a, b: ad.relu(a), 1),
    "exp": (lambda a, b: ad.exp(a), 1),
    "softplus": (lambda a, b: ad.softplus(a), 1),
    "concat_slice": (lambda a, b: ad.slice_cols(ad.concat_cols(a, b), 1, 5), 2),
    "log_softmax": (lambda a, b: ad.log_softmax_rows(a), 1),
    "logsumexp": (lambda a, b: ad.logsumexp_rows(a), 1),
    "logaddexp": (lambda a, b: ad.logaddexp(a, b), 2),
    "pick": (lambda a, b: ad.pick(a, [2, 0, 1]), 1),
    "sum_rows": (lambda a, b: ad.sum_rows(ad.mul(a, b)), 2),
    "sum_cols": (lambda a, b: ad.sum_cols(ad.mul(a, b)), 2),
    "mean_all": (lambda a, b: ad.mean_all(ad.mul(a, a)), 1),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    op, arity = OPS[name]
    a0 = rng.normal(size=(3, 3))
    a0[np.abs(a0) < 1e-3] = 0.5  # keep relu away from its kink
    b0 = rng.normal(size=(3, 3))
    out_shape = op(Node(a0), Node(b0)).shape
    w = ad.constant(rng.normal(size=out_shape))

    def f(P):
        return ad.sum_all(ad.mul(op(P["a"], P.get("b", ad.constant(b0))), w))

    params = {"a": a0, "b": b0} if arity == 2 else {"a": a0}
    assert ad.grad_check(f, params) <= 1e-7


def test_gradient_is_linear_in_loss(rng):
    a0 = rng.normal(size=(2, 3))
    a = leaf(a0, "a")
    f1 = ad.sum_all(ad.exp(a))
    f2 = ad.sum_all(ad.mul(a, a))
    g1, g2 = ad.backward(f1)[a], ad.backward(f2)[a]
    g = ad.backward(ad.add(ad.scale(f1, 3.0), ad.scale(f2, -2.0)))[a]
    np.testing.assert_allclose(g, 3.0 * g1 - 2.0 * g2, rtol=1e-13)


def test_detach_blocks_gradient_and_shares_value():
    W = leaf(np.ones((2, 3)) * 2.0, "W")
    d = ad.detach(W)
    assert d.value is W.value and not d.requires_grad
    grads = ad.backward(ad.sum_all(ad.mul(d, W)))
    np.testing.assert_array_equal(grads[W], W.value)


def test_unreachable_leaf_gets_zero_gradient():
    a, b = leaf([[1.0, 2.0]], "a"), leaf([[3.0]], "b")
    grads = ad.backward(ad.sum_all(a), wrt=[a, b])
    np.testing.assert_array_equal(grads[b], np.zeros((1, 1)))


def test_shared_subexpression_accumulates():
    a = leaf([[1.5]], "a")
    sq = ad.mul(a, a)
    loss = ad.add(sq, ad.mul(sq, ad.constant([[2.0]])))  # 3 a^2
    assert ad.backward(loss)[a][0, 0] == pytest.approx(9.0)


def test_constant_loss_has_no_gradients():
    assert ad.backward(ad.sum_all(ad.constant(np.ones((2, 2))))) == {}


def test_deep_chain_does_not_recurse():
    a = leaf([[0.1]], "a")
    h = a
    for _ in range(5000):
        h = ad.add(h, ad.constant([[0.0]]))
    assert ad.backward(h)[a][0, 0] == 1.0


def test_relu_gradient_at_zero_is_zero():
    a = leaf([[0.0, 1.0, -1.0]], "a")
    np.testing.assert_array_equal(ad.backward(ad.sum_all(ad.relu(a)))[a], [[0.0, 1.0, 0.0]])


def test_operator_overloads():
    a, b = leaf([[2.0]], "a"), leaf([[5.0]], "b")
    loss = (a * b) - (a + 1.0) + (-b)
    grads = ad.backward(loss)
    assert loss.item() == 2.0 and grads[a][0, 0] == 4.0 and grads[b][0, 0] == 1.0


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(leaf(np.ones((2, 1)), "v"))


def test_item_rejects_non_scalar():
    with pytest.raises(ValueError, match="1x1"):
        Node(np.ones((1, 2))).item()


def test_op_shape_errors():
    with pytest.raises(ValueError):
        ad.concat_cols(Node(np.ones((2, 1))), Node(np.ones((3, 1))))
    with pytest.raises(ValueError):
        ad.pick(Node(np.ones((2, 2))), [0, 2])
    with pytest.raises(ValueError):
        ad.logaddexp(Node(np.ones((2, 2))), Node(np.ones((2, 1))))


def test_param_group_label_validated():
    assert ad.ParamGroup("classifiers", ["Cs.W"]).names == ["Cs.W"]
    with pytest.raises(ValueError):
        ad.ParamGroup("heads")


def test_grad_check_detects_wrong_gradient():
    def bad_square(P):
        x = P["x"]
        # value x^2, gradient path only through one factor
        return ad.sum_all(ad.mul(x, ad.detach(x)))

    assert ad.grad_check(bad_square, {"x": np.array([[1.0, -2.0]])}) > 0.4
