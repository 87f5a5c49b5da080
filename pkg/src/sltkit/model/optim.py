"""Adam and Adafactor over a dict of numpy parameters, constant learning rate."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


class Adam:
    name = "adam"

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        # bias corrections folded into the step size
        alpha = self.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
        eps_hat = self.eps * np.sqrt(1.0 - b2 ** t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            params[k] -= (alpha * m / (np.sqrt(v) + eps_hat)).astype(params[k].dtype)


class Adafactor:
    """Factored second moments for matrices, no first moment, update clipping at 1."""

    name = "adafactor"

    def __init__(self, params: dict[str, np.ndarray], lr: float, decay_exponent: float = 0.8,
                 eps1: float = 1e-30, clip_threshold: float = 1.0):
        self.lr, self.decay_exponent, self.eps1, self.clip = lr, decay_exponent, eps1, clip_threshold
        self.step_count = 0
        self.row, self.col, self.full = {}, {}, {}
        for k, v in params.items():
            if v.ndim == 2:
                self.row[k] = np.zeros(v.shape[0], v.dtype)
                self.col[k] = np.zeros(v.shape[1], v.dtype)
            else:
                self.full[k] = np.zeros_like(v)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        beta2 = 1.0 - self.step_count ** (-self.decay_exponent)
        for k, g in grads.items():
            g2 = g * g + self.eps1
            if k in self.row:
                r, c = self.row[k], self.col[k]
                r *= beta2
                r += (1.0 - beta2) * g2.mean(1)
                c *= beta2
                c += (1.0 - beta2) * g2.mean(0)
                vhat = np.outer(r / r.mean(), c)
            else:
                v = self.full[k]
                v *= beta2
                v += (1.0 - beta2) * g2
                vhat = v
            u = g / np.sqrt(vhat)
            rms = np.sqrt(np.mean(u * u))
            u /= max(1.0, rms / self.clip)
            params[k] -= (self.lr * u).astype(params[k].dtype)


OPTIMIZERS = {"adam": Adam, "adafactor": Adafactor}


def make_optimizer(name: str, params: dict[str, np.ndarray], lr: float):
    if name not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}")
    if not lr >= 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    return OPTIMIZERS[name](params, lr)
