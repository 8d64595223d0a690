import numpy as np
import pytest

from anadesign.autodiff import Tensor
from anadesign.optim import Adam, PlateauScheduler, xavier_uniform


def test_adam_first_step_magnitude_equals_lr():
    # hand evaluation: m=0.1, v=0.001, bias-corrected m_hat=1, v_hat=1,
    # so the first update is lr * 1 / (1 + eps)
    p = Tensor(0.0, requires_grad=True)
    p.grad = np.asarray(1.0)
    opt = Adam([p], lr=0.1)
    opt.step()
    assert p.data == pytest.approx(-0.1, rel=1e-7)


def test_adam_zero_grad_leaves_parameter():
    p = Tensor(1.5, requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.asarray(0.0)
    opt.step()
    assert p.data == 1.5


def test_adam_two_steps_match_reference_formula():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    grads = [0.3, -0.7]
    p = Tensor(0.2, requires_grad=True)
    opt = Adam([p], lr=lr)
    m = v = 0.0
    ref = 0.2
    for t, g in enumerate(grads, start=1):
        p.grad = np.asarray(g)
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert p.data == pytest.approx(ref, rel=1e-12)


def test_scheduler_halves_after_patience():
    p = Tensor(0.0, requires_grad=True)
    opt = Adam([p], lr=1.0)
    sched = PlateauScheduler(opt, factor=0.5, patience=2)
    lrs = [sched.step(1.0), sched.step(1.0), sched.step(1.0)]
    assert lrs == [1.0, 1.0, 0.5]


def test_scheduler_respects_min_lr_and_never_increases():
    p = Tensor(0.0, requires_grad=True)
    opt = Adam([p], lr=1e-7)
    sched = PlateauScheduler(opt, factor=0.5, patience=1, min_lr=1e-8)
    seen = [sched.step(1.0) for _ in range(10)]
    assert all(b <= a for a, b in zip(seen, seen[1:]))
    assert seen[-1] == pytest.approx(1e-8)


def test_scheduler_resets_on_improvement():
    p = Tensor(0.0, requires_grad=True)
    opt = Adam([p], lr=1.0)
    sched = PlateauScheduler(opt, factor=0.5, patience=2)
    sched.step(1.0)
    sched.step(0.9)   # improvement resets the wait counter
    sched.step(0.95)
    assert opt.lr == 1.0
    sched.step(0.95)
    assert opt.lr == 0.5


def test_xavier_bound_and_determinism():
    t = xavier_uniform((4, 4), seed=3)
    bound = np.sqrt(6 / 8)
    assert np.all(np.abs(t.data) <= bound)
    t2 = xavier_uniform((4, 4), seed=3)
    np.testing.assert_array_equal(t.data, t2.data)


def test_xavier_rejects_non_2d():
    with pytest.raises(ValueError):
        xavier_uniform((4,), seed=0)


def test_xavier_mean_within_three_sigma():
    n = 10_000
    t = xavier_uniform((100, 100), seed=11)
    draws = t.data.ravel()[:n]
    bound = np.sqrt(6 / 200)
    sigma = bound / np.sqrt(3)  # std of U(-bound, bound)
    assert abs(draws.mean()) < 3 * sigma / np.sqrt(n)
