import numpy as np
import pytest

from teleop_informer import autograd as ag
from teleop_informer.autograd import Tensor, count_macs, grad_check, no_grad
from teleop_informer.checks import PRIMITIVES, check_primitives
from teleop_informer.errors import NonFiniteError, ShapeError


def test_softmax_rows_uniform():
    np.testing.assert_allclose(ag.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_softmax_mask_excludes_entries():
    mask = np.array([[0.0, -np.inf, 0.0]])
    np.testing.assert_allclose(ag.softmax(Tensor([[1.0, 5.0, 1.0]]), mask=mask).data, [[0.5, 0, 0.5]])


def test_conv1d_delta_kernel_is_identity(rng):
    x = rng.standard_normal((2, 9, 3))
    w = np.zeros((3, 3, 3))
    w[1] = np.eye(3)
    np.testing.assert_array_equal(ag.conv1d(Tensor(x), Tensor(w)).data, x)


def test_conv1d_matches_direct_sum(rng):
    x = rng.standard_normal((7, 2))
    w = rng.standard_normal((3, 2, 4))
    out = ag.conv1d(Tensor(x), Tensor(w), dilation=2, padding="causal").data
    ref = np.zeros((7, 4))
    for t in range(7):
        for j in range(3):
            src = t - (2 - j) * 2
            if src >= 0:
                ref[t] += x[src] @ w[j]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_elu_values():
    out = ag.elu(Tensor([1.0, -10.0])).data
    assert out[0] == 1.0
    assert out[1] == pytest.approx(np.exp(-10) - 1, abs=1e-15)


def test_maxpool_floor_on_odd_length():
    x = Tensor(np.arange(7.0).reshape(7, 1))
    out = ag.maxpool1d(x)
    assert out.shape == (3, 1)
    np.testing.assert_array_equal(out.data[:, 0], [1, 3, 5])


def test_layer_norm_statistics(rng):
    out = ag.layer_norm(Tensor(rng.standard_normal((4, 6)) * 3 + 2), Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=-1), 1, atol=1e-5)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4, 3)))


def test_quadratic_grad_exact(rng):
    x = rng.standard_normal((3, 4))
    t = Tensor(x, requires_grad=True)
    ag.sum_of_squares(t).backward()
    np.testing.assert_allclose(t.grad, 2 * x, atol=1e-15)
    assert grad_check(lambda a: ag.sum_of_squares(a), [(3, 4)]) < 1e-9


def test_softmax_of_projection_grad():
    err = grad_check(lambda x, w: ag.mean(ag.softmax_rows(ag.matmul(x, w.transpose()))), [(4, 3), (4, 3)])
    assert err < 1e-4


def test_constant_function_zero_gradient():
    t = Tensor(np.ones(3), requires_grad=True)
    (ag.tsum(t) * 0.0).backward()
    np.testing.assert_array_equal(t.grad, 0)
    assert grad_check(lambda a: ag.tsum(a) * 0.0, [(3,)]) == 0.0


def test_unused_input_gets_zero_grad():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    c = Tensor(np.ones(2), requires_grad=True)
    ag.tsum(a * b).backward()
    assert c.grad is None or not np.any(c.grad)


def test_shared_node_visited_once():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    z = y + y
    z.backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_grad_check_rejects_non_finite():
    with pytest.raises(NonFiniteError), np.errstate(invalid="ignore"):
        grad_check(lambda a: ag.tsum(ag.log(a)), inputs=[np.array([-1.0])])


def test_no_grad_builds_no_graph():
    a = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        out = a * 2.0
    assert not out.requires_grad


def test_mac_counter_matmul():
    with count_macs() as c:
        ag.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 5))))
    assert c.macs == 2 * 3 * 4 * 5


def test_primitive_suite_below_tolerance():
    errs = check_primitives()
    assert set(errs) == set(PRIMITIVES)
    assert max(errs.values()) < 1e-4, {k: v for k, v in errs.items() if v >= 1e-4}


def _random_case(name, rng):
    n, m, k = (int(v) for v in rng.integers(1, 6, 3))
    L = int(rng.integers(2, 9))
    if name == "matmul":
        return lambda a, b: ag.sum_of_squares(ag.matmul(a, b)), [(n, m), (m, k)]
    if name == "add":
        return lambda a, b: ag.sum_of_squares(a + b), [(n, m), (m,)]
    if name == "mul":
        return lambda a, b: ag.sum_of_squares(a * b), [(n, m), (n, m)]
    if name == "softmax":
        return lambda a: ag.sum_of_squares(ag.softmax_rows(a) * np.arange(1.0, m + 1)), [(n, m)]
    if name == "layer_norm":
        m = max(m, 2)
        return lambda x, g, b: ag.sum_of_squares(ag.layer_norm(x, g, b) * np.arange(1.0, m + 1)), \
            [(n, m), (m,), (m,)]
    if name == "conv1d":
        kk = int(rng.choice([1, 3, 5]))
        return lambda x, w: ag.sum_of_squares(ag.conv1d(x, w)), [(L, m), (kk, m, k)]
    if name == "maxpool1d":
        return lambda x: ag.sum_of_squares(ag.maxpool1d(x)), [(L, m)]
    if name == "elu":
        return lambda x: ag.sum_of_squares(ag.elu(x)), [(n, m)]
    if name == "concat":
        return lambda a, b: ag.sum_of_squares(ag.concat([a, b], axis=0) * 1.5), [(n, m), (k, m)]
    if name == "slice":
        return lambda a: ag.sum_of_squares(a[: max(1, n // 2), ::2]), [(n, m)]
    if name == "mean":
        return lambda a: ag.sum_of_squares(ag.mean(a, axis=0)), [(n, m)]
    return lambda a: ag.sum_of_squares(a, axis=-1).sum(), [(n, m)]


@pytest.mark.parametrize("name", ["matmul", "add", "mul", "softmax", "layer_norm", "conv1d", "maxpool1d",
                                  "elu", "concat", "slice", "mean", "sum_of_squares"])
def test_primitive_random_shapes(name):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for seed in range(100):
        fn, shapes = _random_case(name, rng)
        worst = max(worst, grad_check(fn, shapes, seed=seed))
    assert worst < 1e-4


def test_forward_backward_deterministic(rng):
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((4, 3))

    def run():
        a, b = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        out = ag.mean(ag.softmax_rows(ag.matmul(a, b)) ** 2) if hasattr(Tensor, "__pow__") else \
            ag.sum_of_squares(ag.softmax_rows(ag.matmul(a, b)))
        out.backward()
        return out.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

    assert run() == run()
