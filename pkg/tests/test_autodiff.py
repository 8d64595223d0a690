"""Gradient correctness of the reverse-mode engine.

Central finite differences (h=1e-5) act as the independent oracle for
every differentiable path; random composite programs cover primitive
interactions the unit cases do not.
"""

import numpy as np
import pytest

from anadesign.autodiff import (Tensor, concat, index_select, load_weights,
                                no_grad, save_weights, scatter_add, softmax)

RNG = np.random.default_rng(7)


def finite_diff(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x0)
    flat = x0.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x0)
        flat[i] = orig - h
        fm = f(x0)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def check_grad(build, x0: np.ndarray, rtol: float = 1e-4):
    t = Tensor(x0.copy(), requires_grad=True)
    loss = build(t)
    loss.backward()
    expected = finite_diff(lambda arr: build(Tensor(arr)).item(), x0.copy())
    scale = np.maximum(np.abs(expected), 1e-6)
    assert np.all(np.abs(t.grad - expected) / scale < rtol), (
        f"max rel err {np.max(np.abs(t.grad - expected) / scale):.3e}")


def test_sigmoid_at_zero():
    t = Tensor(0.0, requires_grad=True)
    out = t.sigmoid()
    assert out.item() == 0.5
    out.backward()
    assert t.grad == pytest.approx(0.25)


def test_square_grad():
    t = Tensor(3.0, requires_grad=True)
    (t * t).backward()
    assert t.grad == pytest.approx(6.0)


def test_scatter_add_values():
    out = scatter_add(Tensor([1.0, 2.0, 3.0]), [0, 0, 1], 2)
    assert out.data.tolist() == [3.0, 3.0]


def test_relu_piecewise():
    for x0, expected in [(1.0, 2.0), (-1.0, 0.0)]:
        t = Tensor(x0, requires_grad=True)
        (t * 2.0).relu().backward()
        assert t.grad == pytest.approx(expected)


def test_relu_grad_defined_zero_at_kink():
    t = Tensor(0.0, requires_grad=True)
    t.relu().backward()
    assert t.grad == 0.0


def test_sum_of_weighted_rows():
    w = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
    v = RNG.normal(size=(3, 4))
    (w * Tensor(v)).sum().backward()
    np.testing.assert_allclose(w.grad, v)


def test_matmul_grad_matches_fd():
    b = RNG.normal(size=(4, 3))
    check_grad(lambda t: ((t @ Tensor(b)).relu()).sum(), RNG.normal(size=(2, 4)))


def test_three_layer_mlp_grad_matches_fd():
    w1 = RNG.normal(size=(5, 8))
    w2 = RNG.normal(size=(8, 8))
    w3 = RNG.normal(size=(8, 1))

    def net(t):
        h = (t @ Tensor(w1)).relu()
        h = (h @ Tensor(w2)).sigmoid()
        return (h @ Tensor(w3)).sum()

    check_grad(net, RNG.normal(size=(3, 5)))


def test_scalar_loss_required():
    t = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (t * 2.0).backward()


def test_grad_accumulates_over_reuse():
    t = Tensor(2.0, requires_grad=True)
    (t * t + t).backward()
    assert t.grad == pytest.approx(5.0)


def test_linearity_of_backward():
    x0 = RNG.normal(size=(4,))
    alpha, beta = 1.7, -0.4

    def f(t):
        return (t * t).sum()

    def g(t):
        return (t.sigmoid()).sum()

    ta = Tensor(x0.copy(), requires_grad=True)
    (f(ta) * alpha + g(ta) * beta).backward()
    tf = Tensor(x0.copy(), requires_grad=True)
    f(tf).backward()
    tg = Tensor(x0.copy(), requires_grad=True)
    g(tg).backward()
    np.testing.assert_allclose(ta.grad, alpha * tf.grad + beta * tg.grad, atol=1e-12)


def test_softmax_rows_normalized():
    t = Tensor(RNG.normal(size=(5, 7)) * 10)
    s = softmax(t, axis=-1).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(s > 0)


def test_division_and_log_grads():
    def f(t):
        return ((t + 3.0).log() / (t * t + 1.0)).sum()

    check_grad(f, RNG.uniform(0.5, 2.0, size=(6,)))


def test_log_domain_error():
    with pytest.raises(ValueError, match="log"):
        Tensor([-1.0]).log()


def test_pow_fractional_grad():
    check_grad(lambda t: t.pow(1.7).sum(), RNG.uniform(0.5, 3.0, size=(5,)))


def test_index_select_and_scatter_roundtrip_grads():
    idx = np.array([2, 0, 1, 0])

    def f(t):
        picked = index_select(t, idx)
        pooled = scatter_add(picked * 2.0, np.array([0, 1, 1, 0]), 2)
        return (pooled * pooled).sum()

    check_grad(f, RNG.normal(size=(3, 4)))


def test_concat_and_reshape_grads():
    def f(t):
        a = t.reshape(2, 6)
        b = concat([a, a * 3.0], axis=1)
        return (b * b).sum()

    check_grad(f, RNG.normal(size=(3, 4)))


def test_abs_grad_sign():
    t = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
    t.abs().sum().backward()
    assert t.grad.tolist() == [-1.0, 0.0, 1.0]


def test_row_broadcast_add_unbroadcasts_grad():
    bias = Tensor(RNG.normal(size=(4,)), requires_grad=True)
    x = Tensor(RNG.normal(size=(3, 4)))
    ((x + bias) * (x + bias)).sum().backward()
    expected = (2 * (x.data + bias.data)).sum(axis=0)
    np.testing.assert_allclose(bias.grad, expected, rtol=1e-12)


def test_incompatible_shapes_rejected():
    with pytest.raises(ValueError, match="shapes"):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3, 2)))


def test_no_grad_blocks_recording():
    t = Tensor(1.0, requires_grad=True)
    with no_grad():
        out = t * 2.0
    assert not out.requires_grad


def _random_program(rng):
    """Compose 3-6 primitives over a (4, 5) input into a scalar."""
    ops = []
    n_ops = rng.integers(3, 7)
    mats = [rng.normal(size=(5, 5)) for _ in range(n_ops)]

    def run(t):
        h = t
        for k in range(n_ops):
            choice = k % 6
            if choice == 0:
                h = (h @ Tensor(mats[k])).sigmoid()
            elif choice == 1:
                h = h * h + 0.5
            elif choice == 2:
                h = (h + 1.5).log()
            elif choice == 3:
                h = h.relu() + h * 0.1
            elif choice == 4:
                h = softmax(h, axis=-1) + 0.1
            else:
                h = (h / (h * h + 2.0)).exp()
        return h.mean()

    return run


@pytest.mark.parametrize("trial", range(100))
def test_random_composite_programs_match_fd(trial):
    rng = np.random.default_rng(1000 + trial)
    program = _random_program(rng)
    # keep values away from the relu kink so the fd oracle is valid
    x0 = rng.uniform(0.1, 1.2, size=(4, 5))
    check_grad(program, x0)


def test_weight_container_roundtrip(tmp_path):
    tensors = {"a.weight": Tensor(RNG.normal(size=(3, 2))),
               "b.bias": Tensor(RNG.normal(size=(4,)))}
    path = tmp_path / "weights.json"
    save_weights(path, tensors)
    loaded = load_weights(path)
    assert set(loaded) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(loaded[k].data, tensors[k].data)
    # deterministic bytes for identical content
    path2 = tmp_path / "again.json"
    save_weights(path2, tensors)
    assert path.read_bytes() == path2.read_bytes()
