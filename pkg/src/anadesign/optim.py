"""Adam, reduce-on-plateau scheduling, and Xavier initialization."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Adam with bias correction. Defaults: beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` consecutive non-improving steps.

    The lr never increases and never drops below ``min_lr``. An observation
    improves only if it is below ``best - threshold``.
    """

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 5,
                 min_lr: float = 1e-8, threshold: float = 0.0):
        if not (0.0 < factor < 1.0):
            raise ValueError("factor must lie in (0, 1)")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = np.inf
        self.wait = 0

    @property
    def lr(self) -> float:
        return self.optimizer.lr

    def step(self, metric: float) -> float:
        if metric < self.best - self.threshold:
            self.best = metric
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.optimizer.lr = max(self.optimizer.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.optimizer.lr


def xavier_uniform(shape: tuple[int, int], seed: int | None = None,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Uniform init on +-sqrt(6 / (fan_in + fan_out)) for a 2-D weight."""
    if len(shape) != 2:
        raise ValueError("xavier_uniform requires a 2-D shape")
    if rng is None:
        rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
