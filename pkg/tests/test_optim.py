"""RMSprop update rule and the plateau schedule."""

import math

import numpy as np
import pytest

from fgseg.optim import PlateauScheduler, RMSProp
from fgseg.tensor import Tensor


def make_param(value):
    t = Tensor(np.array([float(value)]), requires_grad=True)
    return {"p": t}


class TestRMSProp:
    def test_zero_gradient_is_fixed_point(self):
        params = make_param(1.5)
        opt = RMSProp(params, lr=0.01, weight_decay=0.0)
        params["p"].grad = np.zeros(1)
        for _ in range(5):
            opt.step()
        assert params["p"].data[0] == 1.5

    def test_two_steps_match_hand_unroll(self):
        lr, rho, eps, mu, wd = 0.01, 0.99, 1e-8, 0.9, 1e-8
        params = make_param(0.7)
        opt = RMSProp(params, lr=lr, rho=rho, eps=eps, momentum=mu, weight_decay=wd)
        g1, g2 = 0.3, -0.2

        p = 0.7
        sq = buf = 0.0
        for g in (g1, g2):
            sq = rho * sq + (1 - rho) * g * g
            buf = mu * buf + g / (math.sqrt(sq) + eps)
            p = p - lr * wd * p - lr * buf

        params["p"].grad = np.array([g1])
        opt.step()
        params["p"].grad = np.array([g2])
        opt.step()
        assert abs(params["p"].data[0] - p) < 1e-12

    def test_constant_gradient_step_magnitude(self):
        # with a constant gradient the normalized step tends to
        # lr * sign(g) / (1 - momentum)
        lr, mu = 1e-3, 0.9
        params = make_param(0.0)
        opt = RMSProp(params, lr=lr, momentum=mu, weight_decay=0.0)
        prev = params["p"].data[0]
        step = 0.0
        for _ in range(400):
            params["p"].grad = np.array([2.0])
            opt.step()
            step = prev - params["p"].data[0]
            prev = params["p"].data[0]
        assert abs(step - lr / (1 - mu)) / (lr / (1 - mu)) < 0.05

    def test_decoupled_weight_decay_direction(self):
        params = make_param(10.0)
        opt = RMSProp(params, lr=0.1, weight_decay=1e-2, momentum=0.0)
        params["p"].grad = np.zeros(1)
        opt.step()
        assert params["p"].data[0] == 10.0 - 0.1 * 1e-2 * 10.0

    def test_accumulator_starts_at_zero(self):
        params = make_param(0.0)
        opt = RMSProp(params, lr=1.0)
        assert opt.sq["p"][0] == 0.0 and opt.buf["p"][0] == 0.0

    def test_skips_missing_gradients(self):
        params = make_param(3.0)
        opt = RMSProp(params, lr=0.5)
        params["p"].grad = None
        opt.step()
        assert params["p"].data[0] == 3.0


class TestPlateauScheduler:
    def test_improving_history_unchanged(self):
        sched = PlateauScheduler(1e-3, patience=5)
        for m in [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4]:
            lr = sched.step(m)
        assert lr == 1e-3

    def test_flat_history_one_reduction(self):
        sched = PlateauScheduler(1e-3, patience=5, factor=0.5)
        lrs = [sched.step(1.0) for _ in range(6)]
        assert lrs[-2] == 1e-3 and lrs[-1] == 5e-4
        assert sum(1 for a, b in zip(lrs, lrs[1:]) if b < a) == 1

    def test_two_plateaus_two_reductions(self):
        sched = PlateauScheduler(1e-3, patience=2, factor=0.5)
        history = [1.0, 1.0, 1.0,       # plateau -> reduce after 2 bad epochs
                   0.5,                 # improvement resets
                   0.5, 0.5]            # second plateau -> second reduction
        lr = 1e-3
        for m in history:
            lr = sched.step(m)
        assert lr == 2.5e-4

    def test_min_delta_counts_tiny_gains_as_plateau(self):
        sched = PlateauScheduler(1e-3, patience=2, factor=0.1, min_delta=1e-2)
        for m in [1.0, 0.999, 0.998]:
            lr = sched.step(m)
        assert lr == 1e-4
