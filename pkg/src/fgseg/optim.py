"""RMSprop with momentum and a reduce-on-plateau learning-rate schedule.

Update rule per parameter p with gradient g:

    sq  <- rho * sq + (1 - rho) * g^2
    buf <- momentum * buf + g / (sqrt(sq) + eps)
    p   <- p - lr * weight_decay * p - lr * buf

Weight decay is decoupled (applied to the parameter directly, not folded
into the gradient). State starts at zero.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import NonFiniteError, Tensor


class RMSProp:
    def __init__(self, params: dict, lr: float, rho: float = 0.99,
                 eps: float = 1e-8, momentum: float = 0.9,
                 weight_decay: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.rho = float(rho)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.sq = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.buf = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        """Apply one update from the gradients stored on the parameters."""
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            sq = self.sq[name]
            sq *= self.rho
            sq += (1.0 - self.rho) * g * g
            buf = self.buf[name]
            buf *= self.momentum
            buf += g / (np.sqrt(sq) + self.eps)
            p.data -= self.lr * self.weight_decay * p.data + self.lr * buf
            if not np.isfinite(p.data).all():
                raise NonFiniteError(f"parameter {name!r} became non-finite")


def rmsprop_step(params: dict, grads: dict, config, state=None):
    """Functional single step: reads gradients from ``grads`` (name -> array),
    returns the mutated state. Mostly a convenience for tests; training uses
    the RMSProp class."""
    if state is None:
        state = {"sq": {k: np.zeros_like(p.data) for k, p in params.items()},
                 "buf": {k: np.zeros_like(p.data) for k, p in params.items()}}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        sq = state["sq"][name]
        sq *= config.rho
        sq += (1.0 - config.rho) * g * g
        buf = state["buf"][name]
        buf *= config.momentum
        buf += g / (np.sqrt(sq) + config.eps)
        p.data -= config.learning_rate * config.weight_decay * p.data \
            + config.learning_rate * buf
    return state


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without the monitored value improving by more than ``min_delta``."""

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.5,
                 min_delta: float = 1e-4):
        self.lr = float(lr)
        self.patience = int(patience)
        self.factor = float(factor)
        self.min_delta = float(min_delta)
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        """Feed one epoch's monitored value; returns the (possibly reduced)
        learning rate."""
        if metric < self.best - self.min_delta:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr
