"""Adam with bias correction and the cosine learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def cosine_lr(iteration: int, total_iterations: int, lr_max: float = 2e-4,
              lr_min: float = 1e-6) -> float:
    """Half-cosine decay from lr_max at 0 to lr_min at total_iterations."""
    if total_iterations < 1:
        raise ValueError(f"schedule needs a positive length, got {total_iterations}")
    if not 0 <= iteration <= total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {total_iterations}]")
    frac = iteration / total_iterations
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + float(np.cos(np.pi * frac)))


class Adam:
    """Standard Adam over a named parameter dict.

    Moments are kept in each parameter's dtype so float32 training is
    bitwise reproducible; state serializes through ``state_dict``.
    """

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float) -> None:
        """Apply one update from accumulated gradients (missing grads skip)."""
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "moments": {k: (self.m[k].copy(), self.v[k].copy()) for k in self.params},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for k in self.params:
            if k not in state["moments"]:
                raise ValueError(f"optimizer state missing moments for {k}")
            m, v = state["moments"][k]
            self.m[k] = np.asarray(m, dtype=self.m[k].dtype).reshape(self.m[k].shape).copy()
            self.v[k] = np.asarray(v, dtype=self.v[k].dtype).reshape(self.v[k].shape).copy()
