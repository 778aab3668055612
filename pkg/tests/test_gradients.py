"""Finite-difference verification of every analytic gradient.

Op-level checks run on randomized small tensors (axes <= 6); the end-to-end
check differentiates the summed multi-block Charbonnier loss of a micro
network (K=2, 4 channels, 8x8x8 patch) with respect to every parameter
tensor, against central differences.
"""

import numpy as np
import pytest

from spadvid.network import (
    NetworkConfig,
    NetworkWeights,
    backward,
    forward,
    init_weights,
    multi_block_loss,
    multi_block_loss_and_grads,
)
from spadvid.ops import (
    ConvKernel3,
    LossConfig,
    charbonnier,
    conv3d_backward,
    conv3d_forward,
    leaky_relu,
    leaky_relu_backward,
)

from oracles import fd_grad, fd_grad_at, rel_err

H_FD = 1e-4
OP_TOL = 1e-4
NET_TOL = 1e-3
# End-to-end perturbations must stay below the scale at which they flip
# Leaky-ReLU activation signs; h=1e-4 crosses kinks on deep nets and turns
# the FD quotient into a non-derivative, so the network checks use 1e-7
# (float64 keeps the rounding floor near 1e-8 relative there).
H_FD_NET = 1e-7


def random_conv_problem(rng):
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    kt, kh, kw = [(1, 3)[int(rng.integers(2))] for _ in range(3)]
    t = int(rng.integers(kt, 7))
    h = int(rng.integers(kh, 7))
    w = int(rng.integers(kw, 7))
    n = int(rng.integers(1, 3))
    x = rng.standard_normal((n, c_in, t, h, w))
    weights = rng.standard_normal((c_out, c_in, kt, kh, kw))
    bias = rng.standard_normal(c_out)
    padding = ("same", "valid")[int(rng.integers(2))]
    out_shape = conv3d_forward(x, ConvKernel3(weights=weights, bias=bias), padding).shape
    # random linear functional makes the conv a scalar map for FD purposes
    probe = rng.standard_normal(out_shape)
    return x, weights, bias, padding, probe


class TestConvGradients:
    @pytest.mark.parametrize("trial", range(20))
    def test_matches_finite_differences(self, trial):
        rng = np.random.default_rng(1000 + trial)
        x, weights, bias, padding, probe = random_conv_problem(rng)

        def loss_wrt(x_=x, w_=weights, b_=bias):
            out = conv3d_forward(x_, ConvKernel3(weights=w_, bias=b_), padding)
            return float((out * probe).sum())

        gx, gw, gb = conv3d_backward(
            x, ConvKernel3(weights=weights, bias=bias), probe, padding
        )
        assert rel_err(gx, fd_grad(lambda v: loss_wrt(x_=v), x.copy(), H_FD)) < OP_TOL
        assert rel_err(gw, fd_grad(lambda v: loss_wrt(w_=v), weights.copy(), H_FD)) < OP_TOL
        assert rel_err(gb, fd_grad(lambda v: loss_wrt(b_=v), bias.copy(), H_FD)) < OP_TOL

    def test_specific_shape_from_contract(self):
        # 1x2x4x5x5 input: the weight-gradient reference case
        rng = np.random.default_rng(77)
        x = rng.standard_normal((1, 2, 4, 5, 5))
        weights = rng.standard_normal((3, 2, 3, 3, 3))
        bias = rng.standard_normal(3)
        probe = rng.standard_normal((1, 3, 4, 5, 5))

        def loss_w(w_):
            return float((conv3d_forward(x, ConvKernel3(weights=w_, bias=bias), "same") * probe).sum())

        _, gw, _ = conv3d_backward(x, ConvKernel3(weights=weights, bias=bias), probe, "same")
        assert rel_err(gw, fd_grad(loss_w, weights.copy(), H_FD)) < OP_TOL


class TestLeakyReluGradient:
    def test_away_from_zero(self):
        for x0 in (-0.5, 0.5):
            x = np.full((3,), x0)
            fd = fd_grad(lambda v: float(leaky_relu(v, 0.1).sum()), x.copy(), H_FD)
            got = leaky_relu_backward(x, np.ones(3), 0.1)
            assert rel_err(got, fd) < 1e-6

    def test_random_tensor(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 1, 3, 3, 3))
        x[np.abs(x) < 0.05] = 0.1   # keep FD away from the kink
        probe = rng.standard_normal(x.shape)
        fd = fd_grad(lambda v: float((leaky_relu(v, 0.2) * probe).sum()), x.copy(), H_FD)
        assert rel_err(leaky_relu_backward(x, probe, 0.2), fd) < OP_TOL


class TestCharbonnierGradient:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.standard_normal((2, 1, 3, 4, 4))
        target = rng.standard_normal(pred.shape)
        _, grad = charbonnier(pred, target, LossConfig(eta=1e-3))
        fd = fd_grad(lambda v: charbonnier(v, target, LossConfig(eta=1e-3))[0], pred.copy(), H_FD)
        assert rel_err(grad, fd) < OP_TOL


def micro_net(seed):
    cfg = NetworkConfig(num_blocks=2, channels=4, kernel=(3, 3, 3), convs_per_block=5)
    weights = init_weights(cfg, seed)
    # float64 parameters keep the FD oracle clean of storage rounding
    f64 = [a.astype(np.float64) for a in weights.flat()]
    return cfg, weights.replace_flat(f64)


def net_loss(weights, cfg, x, target):
    return multi_block_loss(forward(weights, cfg, x), target)


def analytic_grads(weights, cfg, x, target):
    cache = []
    ests = forward(weights, cfg, x, cache)
    _, grad_ests = multi_block_loss_and_grads(ests, target)
    return backward(weights, cfg, cache, grad_ests)


class TestEndToEndGradient:
    def test_full_finite_difference_one_seed(self):
        cfg, weights = micro_net(0)
        rng = np.random.default_rng(99)
        x = rng.random((1, 1, 8, 8, 8))
        target = rng.random(x.shape)
        grads = analytic_grads(weights, cfg, x, target)
        arrays = weights.flat()
        for i, (arr, grad) in enumerate(zip(arrays, grads)):
            def loss_of(v, i=i):
                swapped = list(arrays)
                swapped[i] = v
                return net_loss(weights.replace_flat(swapped), cfg, x, target)

            fd = fd_grad(loss_of, arr.copy(), H_FD_NET)
            assert rel_err(grad, fd) < NET_TOL, f"tensor {i}"

    @pytest.mark.parametrize("seed", range(10))
    def test_sampled_coordinates_ten_seeds(self, seed):
        cfg, weights = micro_net(seed)
        rng = np.random.default_rng(500 + seed)
        x = rng.random((1, 1, 8, 8, 8))
        target = rng.random(x.shape)
        grads = analytic_grads(weights, cfg, x, target)
        arrays = weights.flat()
        for i, (arr, grad) in enumerate(zip(arrays, grads)):
            k = min(arr.size, 6)
            idx = rng.choice(arr.size, size=k, replace=False)

            def loss_of(v, i=i):
                swapped = list(arrays)
                swapped[i] = v
                return net_loss(weights.replace_flat(swapped), cfg, x, target)

            fd = fd_grad_at(loss_of, arr.copy(), idx, H_FD_NET)
            got = grad.reshape(-1)[idx]
            assert rel_err(got, fd) < NET_TOL, f"seed {seed} tensor {i}"

    def test_cascade_routes_gradient_to_early_blocks(self):
        cfg, weights = micro_net(1)
        rng = np.random.default_rng(7)
        x = rng.random((1, 1, 6, 6, 6))
        target = rng.random(x.shape)
        grads = analytic_grads(weights, cfg, x, target)
        assert all(np.abs(g).max() > 0 for g in grads)
