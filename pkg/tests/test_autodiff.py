"""Differentiation engine: analytic examples, finite-difference agreement,
optimizer and clipping behavior, determinism."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leo import autodiff as ad
from leo.optim import Adam, ParameterStore, clip_gradients

from oracles import adam_reference_trace, central_difference


def t(data, grad=True, name="p"):
    return ad.Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad, name=name)


# ---------------------------------------------------------------------------
# forward examples


def test_matmul_identity_column():
    out = ad.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[1.0], [0.0]]))
    assert np.array_equal(out.data, [[1.0], [3.0]])


def test_softmax_symmetry():
    out = ad.softmax(t([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(3)
    x = t(rng.normal(size=(20, 7)) * 5)
    out = ad.softmax(x).data
    assert np.all(out > 0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_maxpool_full_window():
    out = ad.max_time(t(np.array([[[1.0], [5.0], [2.0]]])))
    assert out.data.reshape(()) == 5.0


def test_square_gradient():
    w = t(3.0)
    loss = ad.reduce_sum(ad.mul(w, w))
    ad.backward(loss)
    assert w.grad == pytest.approx(6.0)


def test_softmax_cross_entropy_gradient_identity():
    # d(-log softmax(x)[y]) / dx = probs - onehot
    logits = t([[0.2, -1.0, 0.5]])
    onehot = ad.constant(np.array([[0.0, 1.0, 0.0]]))
    probs = ad.softmax(logits)
    picked = ad.sum_axis(ad.mul(probs, onehot), axis=1)
    loss = ad.reduce_sum(ad.neg(ad.log(picked)))
    ad.backward(loss)
    expected = probs.data - onehot.data
    assert np.allclose(logits.grad, expected, atol=1e-12)


def test_backward_rejects_non_scalar():
    x = t([1.0, 2.0])
    with pytest.raises(ad.GraphError):
        ad.backward(ad.mul(x, x))


def test_non_finite_forward_raises():
    x = t([800.0])
    with pytest.raises(ad.NumericError) as err:
        ad.exp(ad.mul(x, x))
    assert "exp" in str(err.value)


def test_matmul_shape_mismatch():
    with pytest.raises(ad.GraphError):
        ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))


def test_unreachable_parameter_gets_no_gradient():
    used = t([2.0])
    unused = t([5.0], name="unused")
    loss = ad.reduce_sum(ad.mul(used, used))
    ad.backward(loss)
    assert unused.grad is None  # store.ensure_grads turns this into zeros


# ---------------------------------------------------------------------------
# finite differences, primitive by primitive


def _fd_case(build, params):
    """Check analytic gradients of build() against the engine's checker and,
    for one parameter, against an independent central difference."""
    report = ad.finite_difference_check(build, params, h=1e-5)
    assert report.max_rel_error < 1e-4, report.flagged
    return report


def test_fd_each_primitive():
    rng = np.random.default_rng(11)

    a = t(rng.normal(size=(3, 4)), name="a")
    b = t(rng.normal(size=(4, 2)), name="b")
    _fd_case(lambda: ad.reduce_sum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), {"a": a, "b": b})

    x = t(rng.normal(size=(5,)) + 3.0, name="x")  # positive, away from relu kink
    y = t(rng.normal(size=(5,)) + 3.0, name="y")
    _fd_case(lambda: ad.reduce_sum(ad.mul(ad.log(x), ad.sqrt(y))), {"x": x, "y": y})
    _fd_case(lambda: ad.reduce_sum(ad.div(ad.exp(ad.scale(x, 0.3)), y)), {"x": x, "y": y})
    _fd_case(lambda: ad.reduce_sum(ad.relu(ad.sub(x, y))), {"x": x, "y": y})
    _fd_case(lambda: ad.reduce_mean(ad.tanh(ad.sigmoid(ad.mul(x, y)))), {"x": x, "y": y})
    _fd_case(lambda: ad.reduce_sum(ad.softmax(ad.reshape(x, (1, 5)))), {"x": x})
    soft_coeff = ad.constant(rng.normal(size=(1, 5)))
    _fd_case(lambda: ad.reduce_sum(ad.mul(ad.softmax(ad.reshape(x, (1, 5))), soft_coeff)),
             {"x": x})
    _fd_case(lambda: ad.reduce_sum(ad.maximum_const(x, 3.1)), {"x": x})
    _fd_case(lambda: ad.reduce_sum(ad.minimum_const(ad.neg(x), -2.9)), {"x": x})

    m = t(rng.normal(size=(4, 3)), name="m")
    tr_coeff = ad.constant(rng.normal(size=(3, 4)))
    _fd_case(lambda: ad.reduce_sum(ad.mul(ad.transpose(m), tr_coeff)), {"m": m})
    _fd_case(lambda: ad.reduce_sum(ad.exp(ad.sum_axis(m, axis=1))), {"m": m})
    _fd_case(lambda: ad.reduce_sum(ad.exp(ad.mean_axis(m, axis=0, keepdims=True))), {"m": m})
    cat_coeff = ad.constant(rng.normal(size=(4, 6)))
    _fd_case(lambda: ad.reduce_sum(ad.mul(ad.concat([m, m], axis=1), cat_coeff)), {"m": m})

    table = t(rng.normal(size=(6, 3)), name="table")
    idx = np.array([[0, 2, 5], [1, 1, 4]])
    gather_coeff = ad.constant(rng.normal(size=(2, 3, 3)))
    _fd_case(lambda: ad.reduce_sum(ad.mul(ad.gather_rows(table, idx), gather_coeff)),
             {"table": table})

    vals = t(rng.normal(size=(3, 2)), name="vals")
    _fd_case(lambda: ad.reduce_sum(ad.exp(ad.scatter_rows(
        vals, np.array([0, 0, 1]), np.array([1, 3, 0]), 2, 4))), {"vals": vals})


def test_fd_conv1d_random_input():
    rng = np.random.default_rng(23)
    x = t(rng.normal(size=(1, 5, 3)), name="x")
    w = t(rng.normal(size=(3, 3, 4)) * 0.5, name="w")
    b = t(rng.normal(size=(4,)), name="b")

    def build():
        return ad.reduce_sum(ad.mul(ad.conv1d(x, w, b),
                                    ad.constant(coeff)))

    coeff = rng.normal(size=(1, 3, 4))
    report = ad.finite_difference_check(build, {"x": x, "w": w, "b": b}, h=1e-5)
    assert report.max_rel_error < 1e-4


def test_fd_conv_relu_maxpool_chain():
    rng = np.random.default_rng(29)
    x = t(rng.normal(size=(2, 6, 3)), name="x")
    w = t(rng.normal(size=(3, 3, 4)) * 0.4, name="w")
    b = t(rng.normal(size=(4,)) * 0.1, name="b")

    def build():
        return ad.reduce_sum(ad.max_time(ad.relu(ad.conv1d(x, w, b))))

    report = ad.finite_difference_check(build, {"x": x, "w": w, "b": b}, h=1e-5)
    assert report.max_rel_error < 1e-4


def test_fd_dropout_with_fixed_stream():
    rng = np.random.default_rng(31)
    x = t(rng.normal(size=(4, 5)) + 2.0, name="x")

    def build():
        stream = np.random.default_rng(77)  # identical mask every call
        return ad.reduce_sum(ad.exp(ad.scale(ad.dropout(x, 0.8, stream, train=True), 0.2)))

    report = ad.finite_difference_check(build, {"x": x}, h=1e-5)
    assert report.max_rel_error < 1e-4


def test_fd_sigmoid_gate_chain_tight():
    rng = np.random.default_rng(37)
    w = t(rng.normal(size=(3, 3)), name="w")
    x = ad.constant(rng.normal(size=(2, 3)))

    def build():
        return ad.reduce_mean(ad.sigmoid(ad.matmul(x, w)))

    report = ad.finite_difference_check(build, {"w": w}, h=1e-5)
    assert report.max_rel_error < 1e-5


def test_fd_linear_layer_very_tight():
    rng = np.random.default_rng(41)
    w = t(rng.normal(size=(4, 3)), name="w")
    b = t(rng.normal(size=(3,)), name="b")
    x = ad.constant(rng.normal(size=(5, 4)))
    target = ad.constant(rng.normal(size=(5, 3)))

    def build():
        diff = ad.sub(ad.add(ad.matmul(x, w), b), target)
        return ad.reduce_sum(ad.mul(diff, diff))

    report = ad.finite_difference_check(build, {"w": w, "b": b}, h=1e-5)
    assert report.max_rel_error < 1e-6


def test_fd_zero_gradient_parameter():
    dead = t([[0.5, -0.2]], name="dead")
    live = t([[1.5]], name="live")

    def build():
        return ad.reduce_sum(ad.mul(live, live))

    report = ad.finite_difference_check(build, {"dead": dead, "live": live}, h=1e-5)
    assert report.per_param["dead"] == 0.0

    # independent FD agrees the gradient is tiny
    def f(v):
        dead.data = v.copy()
        return build().item()

    fd = central_difference(f, dead.data)
    assert np.all(np.abs(fd) < 1e-7)


def test_fd_random_graph_property():
    # 100 random small graphs mixing the elementwise and matrix primitives
    rng = np.random.default_rng(101)
    for case in range(100):
        n, m_, k = rng.integers(2, 5, size=3)
        a = t(rng.normal(size=(n, m_)), name="a")
        b = t(rng.normal(size=(m_, k)), name="b")
        c = t(rng.normal(size=(n, k)) + 2.5, name="c")
        pick = case % 5

        def build():
            h = ad.matmul(a, b)
            if pick == 0:
                h = ad.relu(ad.add(h, ad.constant(0.37)))
            elif pick == 1:
                h = ad.sigmoid(h)
            elif pick == 2:
                h = ad.mul(ad.tanh(h), c)
            elif pick == 3:
                h = ad.div(h, ad.sqrt(ad.mul(c, c)))
            else:
                h = ad.softmax(h, axis=1)
            return ad.reduce_mean(ad.mul(h, h))

        report = ad.finite_difference_check(build, {"a": a, "b": b, "c": c}, h=1e-5)
        assert report.max_rel_error < 1e-4, f"case {case}: {report.flagged[:3]}"


def test_deep_chain_does_not_recurse():
    x = t(np.array([1.0]))
    node = x
    for _ in range(3000):
        node = ad.add(node, ad.constant(0.001))
    ad.backward(ad.reduce_sum(node))
    assert x.grad == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# dropout semantics


def test_dropout_eval_is_identity():
    x = t(np.random.default_rng(5).normal(size=(3, 3)))
    out = ad.dropout(x, 0.8, np.random.default_rng(0), train=False)
    assert out is x


def test_dropout_train_mean_preserved():
    rng = np.random.default_rng(7)
    x = np.full((100_000, 4), 2.0)
    out = ad.dropout(t(x, grad=False), 0.8, rng, train=True)
    rel = np.abs(out.data.mean(axis=0) - 2.0) / 2.0
    assert np.all(rel < 0.02)


def test_dropout_deterministic_given_seed():
    x = t(np.random.default_rng(9).normal(size=(50, 8)))
    a = ad.dropout(x, 0.8, np.random.default_rng(1234), train=True).data
    b = ad.dropout(x, 0.8, np.random.default_rng(1234), train=True).data
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Adam and clipping


def test_adam_zero_gradient_keeps_parameters():
    store = ParameterStore()
    p = store.add("w", np.array([1.0, -2.0]), "g")
    p.grad = np.zeros(2)
    opt = Adam()
    opt.step(store, ["g"])
    assert np.array_equal(p.data, [1.0, -2.0])
    assert opt.step_count == 1


def test_adam_first_step_magnitude():
    store = ParameterStore()
    p = store.add("w", np.array([0.0]), "g")
    p.grad = np.array([1.0])
    Adam(lr=1e-3).step(store, ["g"])
    assert p.data[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_three_steps_match_reference_trace():
    store = ParameterStore()
    p = store.add("w", np.array([0.0]), "g")
    opt = Adam(lr=1e-3)
    expected = adam_reference_trace([1.0, 1.0, 1.0], lr=1e-3)
    for step in range(3):
        p.grad = np.array([1.0])
        opt.step(store, ["g"])
        assert abs(p.data[0] - expected[step]) < 1e-12


def test_adam_untouched_group_stays_put():
    store = ParameterStore()
    a = store.add("a", np.array([1.0]), "first")
    b = store.add("b", np.array([1.0]), "second")
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    Adam().step(store, ["first"])
    assert a.data[0] != 1.0
    assert b.data[0] == 1.0


def test_adam_missing_gradient_is_usage_error():
    store = ParameterStore()
    store.add("w", np.array([0.0]), "g")
    with pytest.raises(ad.GraphError):
        Adam().step(store, ["g"])


def test_clip_below_threshold_unchanged():
    g = [np.array([3.0, 4.0])]
    norm = clip_gradients(g, 10.0)
    assert norm == pytest.approx(5.0)
    assert np.array_equal(g[0], [3.0, 4.0])


def test_clip_scales_to_max_norm():
    g = [np.array([3.0, 4.0])]
    clip_gradients(g, 1.0)
    assert np.allclose(g[0], [0.6, 0.8])


def test_clip_zero_gradients_unchanged():
    g = [np.zeros(3)]
    clip_gradients(g, 1.0)
    assert np.array_equal(g[0], np.zeros(3))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=12),
       st.floats(0.01, 20.0))
def test_clip_never_increases_norm(values, max_norm):
    g = [np.asarray(values, dtype=np.float64)]
    before = float(np.sqrt((g[0] ** 2).sum()))
    clip_gradients(g, max_norm)
    after = float(np.sqrt((g[0] ** 2).sum()))
    assert after <= max(max_norm + 1e-9, before + 1e-12)
    assert after <= before + 1e-12


def test_parameter_store_rejects_duplicates():
    store = ParameterStore()
    store.add("w", np.zeros(2), "g")
    with pytest.raises(ad.GraphError):
        store.add("w", np.zeros(2), "g")


def test_store_ensure_grads_fills_zeros():
    store = ParameterStore()
    store.add("w", np.zeros((2, 2)), "g")
    store.ensure_grads(["g"])
    assert np.array_equal(store["w"].grad, np.zeros((2, 2)))
