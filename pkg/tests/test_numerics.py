"""Tensor/tape, optimizer, and RNG tests.

Derived expectations are computed by independent oracles (hand chain rule,
central finite differences, closed-form single-step updates) and frozen
here; the tape must match them, not the other way around.
"""

import numpy as np
import pytest

from pdp.numerics import (
    AdamWState,
    NonScalarLossError,
    OpShapeError,
    Rng,
    Tensor,
    adamw_step,
    backward,
    forward_op,
    grad_check,
    keyed_normal,
    no_grad,
    zero_grads,
)
from pdp.numerics import tensor as T


def test_matmul_identity():
    rng = Rng(7)
    m = rng.normal((3, 3))
    out = forward_op("matmul", Tensor(np.eye(3)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_softmax_symmetry_and_rowsum():
    out = forward_op("softmax", Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], rtol=0, atol=0)
    z = Tensor(Rng(3).normal((8, 5)))
    s = forward_op("softmax", z, axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(8), atol=1e-12)


def test_mse_zero_case():
    a = Tensor([1.0, 2.0])
    assert forward_op("mse", a, Tensor([1.0, 2.0])).item() == 0.0


def test_layer_norm_statistics():
    x = Tensor(Rng(11).normal((6, 32)) * 3.0 + 1.5)
    y = forward_op("layer_norm", x, Tensor(np.ones(32)), Tensor(np.zeros(32)), eps=0.0)
    mu = y.data.mean(axis=-1)
    var = y.data.var(axis=-1)
    assert np.abs(mu).max() <= 1e-10
    assert np.abs(var - 1.0).max() <= 1e-8


def test_backward_hand_chain_rule():
    # loss = mse(w*x, y), w=1, x=2, y=0 -> dL/dw = 2*(w*x-y)*x = 8
    w = Tensor(np.asarray(1.0), requires_grad=True)
    loss = forward_op("mse", w * Tensor(2.0), Tensor(0.0))
    backward(loss)
    np.testing.assert_allclose(w.grad, 8.0, rtol=1e-15)


def test_backward_sum_gives_ones():
    w = Tensor(Rng(5).normal((3, 4)), requires_grad=True)
    loss = T.sum_(w)
    backward(loss)
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_backward_softmax_mse_matches_finite_differences():
    # frozen hand value: grad = [-0.25, 0.25] at z=[0,0], t=[1,0]
    z = Tensor([0.0, 0.0], requires_grad=True)
    loss = forward_op("mse", forward_op("softmax", z), Tensor([1.0, 0.0]))
    backward(loss)
    np.testing.assert_allclose(z.grad, [-0.25, 0.25], atol=1e-12)

    h = 1e-5
    fd = np.zeros(2)
    for i in range(2):
        for sgn in (+1, -1):
            zv = np.zeros(2)
            zv[i] = sgn * h
            e = np.exp(zv - zv.max())
            s = e / e.sum()
            fd[i] += sgn * ((s - np.array([1.0, 0.0])) ** 2).mean() / (2 * h)
    np.testing.assert_allclose(z.grad, fd, atol=1e-6)


def test_backward_errors():
    w = Tensor(np.ones(3), requires_grad=True)
    vec = w * Tensor(2.0)
    with pytest.raises(NonScalarLossError):
        backward(vec)
    loss = T.sum_(vec)
    backward(loss)
    with pytest.raises(RuntimeError):
        backward(loss)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(OpShapeError) as ei:
        forward_op("matmul", Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "matmul" in str(ei.value)
    assert "(2, 3)" in str(ei.value)


OP_CASES = {
    "matmul": lambda r: ("matmul", [r.normal((3, 4)), r.normal((4, 2))], {}),
    "add": lambda r: ("add", [r.normal((5, 3)), r.normal((3,))], {}),
    "mul": lambda r: ("mul", [r.normal((5, 3)), r.normal((5, 3))], {}),
    "layer_norm": lambda r: ("layer_norm", [r.normal((4, 6)), r.normal((6,)), r.normal((6,))], {}),
    "softmax": lambda r: ("softmax", [r.normal((4, 5))], {}),
    "relu": lambda r: ("relu", [r.normal((4, 5)) + 0.05], {}),
    "gelu": lambda r: ("gelu", [r.normal((4, 5))], {}),
    "sinusoidal_embed": lambda r: ("sinusoidal_embed", [r.normal((6,))], {"dim": 8}),
    "concat": lambda r: ("concat", [[r.normal((3, 2)), r.normal((3, 4))]], {"axis": 1}),
    "slice": lambda r: ("slice", [r.normal((5, 4))], {"key": (slice(1, 4), slice(0, 2))}),
    "mean": lambda r: ("mean", [r.normal((4, 6))], {"axis": 1}),
    "mse": lambda r: ("mse", [r.normal((4, 3)), r.normal((4, 3))], {}),
    "scaled_dot_product_attention": lambda r: (
        "scaled_dot_product_attention",
        [r.normal((2, 3, 4)), r.normal((2, 5, 4)), r.normal((2, 5, 4))],
        {"n_heads": 2},
    ),
    "kl_gaussian": lambda r: ("kl_gaussian", [r.normal((4, 3)), r.normal((4, 3)) * 0.3], {}),
}


@pytest.mark.parametrize("op_kind", sorted(OP_CASES))
def test_every_op_gradient_matches_central_differences(op_kind):
    # 10 random parameter points per op, h=1e-5, tolerance 1e-4 relative
    for trial in range(10):
        r = Rng(1000 * trial + hash(op_kind) % 1000)
        name, raw_inputs, kwargs = OP_CASES[op_kind](r)
        params = []
        tensors = []
        for i, raw in enumerate(raw_inputs):
            if isinstance(raw, list):
                group = [Tensor(x, requires_grad=True) for x in raw]
                params += [(f"in{i}_{j}", t) for j, t in enumerate(group)]
                tensors.append(group)
            else:
                t = Tensor(raw, requires_grad=True)
                params.append((f"in{i}", t))
                tensors.append(t)

        def f():
            out = forward_op(name, *tensors, **kwargs)
            return T.mse(out, Tensor(np.zeros(out.shape)))

        assert grad_check(f, params, h=1e-5) <= 1e-4


def test_dropout_train_eval_modes():
    x = Tensor(np.ones((200, 10)), requires_grad=True)
    out_eval = forward_op("dropout", x, 0.3, Rng(0), False)
    np.testing.assert_array_equal(out_eval.data, x.data)
    out_train = forward_op("dropout", x, 0.3, Rng(0), True)
    kept = out_train.data != 0.0
    assert abs(kept.mean() - 0.7) < 0.03
    np.testing.assert_allclose(out_train.data[kept], 1.0 / 0.7)
    # same rng seed -> same mask
    out_again = forward_op("dropout", x, 0.3, Rng(0), True)
    np.testing.assert_array_equal(out_train.data, out_again.data)


def test_grad_check_quadratic_and_constant():
    w = Tensor(Rng(2).normal((4,)), requires_grad=True)

    def quad():
        return T.mse(w, Tensor(np.zeros(4)))

    assert grad_check(quad, [("w", w)]) <= 1e-9

    def const():
        return T.sum_(w * Tensor(np.zeros(4)))

    assert grad_check(const, [("w", w)]) == 0.0


def test_adamw_single_step_closed_form():
    p = Tensor(np.asarray([1.0]), requires_grad=True)
    p.grad = np.asarray([1.0])
    st = AdamWState(lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-3)
    adamw_step([("p", p)], st)
    # theta - lr*m_hat/(sqrt(v_hat)+eps) - lr*wd*theta with m_hat = v_hat = 1
    expect = 1.0 - 1e-4 / (1.0 + 1e-8) - 1e-4 * 1e-3
    np.testing.assert_allclose(p.data, [expect], rtol=1e-12)
    assert abs(p.data[0] - 0.9998999) < 1e-6
    assert st.step_count == 1


def test_adamw_zero_grad_no_decay_is_identity():
    p = Tensor(np.asarray([2.5]), requires_grad=True)
    p.grad = np.asarray([0.0])
    st = AdamWState(lr=1e-2, weight_decay=0.0)
    adamw_step([("p", p)], st)
    np.testing.assert_array_equal(p.data, [2.5])


def test_adamw_wd_zero_equals_plain_adam():
    rng = Rng(9)
    g = rng.normal((5,))
    p1 = Tensor(rng.normal((5,)), requires_grad=True)
    p2 = Tensor(p1.data.copy(), requires_grad=True)
    p1.grad = g.copy()
    p2.grad = g.copy()
    adamw_step([("p", p1)], AdamWState(lr=1e-3, weight_decay=0.0))
    # plain Adam reference implemented inline
    m = 0.1 * g
    v = 0.001 * g * g
    ref = p2.data - 1e-3 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    np.testing.assert_allclose(p1.data, ref, rtol=1e-12)


def test_rng_reproducible_and_stream_independent():
    a = Rng(42).normal((100,))
    b = Rng(42).normal((100,))
    np.testing.assert_array_equal(a, b)
    c = Rng(43).normal((100,))
    assert not np.array_equal(a, c)
    child1 = Rng(42).spawn("collect").uniform((50,))
    child2 = Rng(42).spawn("collect").uniform((50,))
    other = Rng(42).spawn("eval").uniform((50,))
    np.testing.assert_array_equal(child1, child2)
    assert not np.array_equal(child1, other)


def test_rng_normal_moments():
    z = Rng(123).normal((200000,))
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_keyed_normal_matches_split_streams():
    base = Rng(7)
    keys = np.asarray([base.spawn(i).key for i in range(4)], dtype=np.uint64)
    batch = keyed_normal(keys, 9)
    for i in range(4):
        np.testing.assert_array_equal(batch[i], base.spawn(i).normal((9,)))


def test_no_grad_blocks_tape():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = T.sum_(w * Tensor(2.0))
    assert not out.requires_grad
    zero_grads([("w", w)])
    assert w.grad is None
