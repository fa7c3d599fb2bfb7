import numpy as np
import pytest

from fpplab import InvalidArgument, InvalidState
from fpplab.nn import autograd as ag
from fpplab.nn.autograd import Tensor
from fpplab.nn.gradcheck import grad_check, grad_check_order_map
from fpplab.nn.network import NetworkConfig, OrderNet, init_params, network_input, zero_params
from fpplab.nn.optim import OptimizerState, adam_step
from fpplab.selfsup import soft_fringe_order

SMALL = NetworkConfig(channels=(4, 8), downsample_levels=1, head_channels=4)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"kernel_size": 4}, {"activation": "tanh"}, {"channels": (4, 8)},
                                    {"depth": 0}, {"downsample_levels": -1}, {"in_channels": 0}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            NetworkConfig(**kw)

    def test_plain_cnn(self):
        cfg = NetworkConfig(channels=(4, 4, 4), downsample_levels=0)
        out = OrderNet(cfg, seed=1)(np.zeros((1, 10, 6)))
        assert out.shape == (1, 10, 6)


class TestForward:
    def test_zero_weights_half_order(self):
        cfg = NetworkConfig()
        net = OrderNet(cfg, zero_params(cfg))
        k_o = net(np.random.default_rng(0).normal(size=(1, 16, 16)))
        assert np.all(k_o.data == 0)
        assert np.all(soft_fringe_order(k_o, 64).data == 32.0)

    def test_shape_contract(self):
        net = OrderNet(NetworkConfig(), seed=0)
        with ag.no_grad():
            out = net(np.zeros((1, 64, 64)))
        assert out.shape == (1, 64, 64) and np.all(np.isfinite(out.data))

    def test_bad_shapes(self):
        net = OrderNet(NetworkConfig(), seed=0)
        with pytest.raises(InvalidArgument):
            net(np.zeros((1, 30, 32)))
        with pytest.raises(InvalidArgument):
            net(np.zeros((2, 32, 32)))
        with pytest.raises(InvalidArgument):
            net(np.zeros((32, 32)))

    def test_deterministic(self, rng):
        x = rng.uniform(-1, 1, (1, 16, 16))
        a = OrderNet(NetworkConfig(), seed=3)(x).data
        b = OrderNet(NetworkConfig(), seed=3)(x).data
        c = OrderNet(NetworkConfig(), seed=4)(x).data
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_two_channel(self):
        cfg = NetworkConfig(in_channels=2)
        x = network_input(np.zeros((16, 16)), np.zeros((16, 16)))
        assert x.shape == (2, 16, 16) and OrderNet(cfg)(x).shape == (1, 16, 16)

    def test_init_scale(self):
        params = init_params(NetworkConfig(), seed=0)
        w = params["enc0.conv0.weight"].data
        bound = 1 / np.sqrt(w.shape[1] * w.shape[2] * w.shape[3])
        assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound

    def test_missing_params(self):
        params = init_params(SMALL)
        params.pop("head.out.weight")
        with pytest.raises(InvalidArgument):
            OrderNet(SMALL, params)

    def test_network_input(self):
        phi = np.array([[np.pi, -np.pi / 2], [0.0, 1.0]])
        mask = np.array([[True, True], [False, True]])
        x = network_input(phi, mask=mask)
        np.testing.assert_allclose(x[0], [[1.0, -0.5], [0.0, 1 / np.pi]])


class TestAdam:
    def param(self, value=1.0, grad=1.0):
        p = Tensor(np.array([value]), requires_grad=True)
        p.grad = np.array([grad])
        return {"w": p}

    def test_first_step(self):
        params = self.param()
        adam_step(params, OptimizerState(lr=1e-3, weight_decay=0.0))
        assert abs(params["w"].data[0] - (1.0 - 0.001)) < 1e-9

    def test_lr_zero(self):
        params = self.param()
        adam_step(params, OptimizerState(lr=0.0))
        assert params["w"].data[0] == 1.0

    def test_grad_zero(self):
        params = self.param(grad=0.0)
        adam_step(params, OptimizerState(lr=1e-2, weight_decay=0.0))
        assert params["w"].data[0] == 1.0

    def test_missing_grad(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(InvalidState):
            adam_step({"w": p}, OptimizerState())

    def test_weight_decay_in_gradient(self):
        # with grad 0 the decay term alone drives the first step: -lr * sign(param)
        params = self.param(value=2.0, grad=0.0)
        adam_step(params, OptimizerState(lr=1e-3, weight_decay=1e-4))
        assert abs(params["w"].data[0] - (2.0 - 1e-3)) < 1e-6

    def test_against_reference(self, rng):
        grads = rng.normal(size=(5, 3))
        p = Tensor(np.zeros(3), requires_grad=True)
        state = OptimizerState(lr=0.01, beta1=0.9, beta2=0.999, weight_decay=0.0, epsilon=1e-8)
        ref, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
        for t, g in enumerate(grads, 1):
            p.grad = g.copy()
            adam_step({"w": p}, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-12)
        assert state.step_count == 5

    @pytest.mark.parametrize("kw", [{"lr": -1}, {"beta1": 1.0}, {"epsilon": 0.0}])
    def test_invalid_state(self, kw):
        with pytest.raises(InvalidArgument):
            OptimizerState(**kw)


class TestGradCheck:
    def test_conv_only(self):
        rep = grad_check(SMALL, seed=0, chain="conv", size=8, n_entries=40)
        assert rep.passed(1e-4), rep.summary()

    def test_full_chain_small(self):
        rep = grad_check(SMALL, seed=1, chain="full", size=8, n_entries=40)
        assert rep.passed(1e-4), rep.summary()

    def test_order_map(self):
        rep = grad_check_order_map(size=8)
        assert rep.passed(1e-4), rep.summary()

    def test_zero_weights_flagged(self):
        rep = grad_check(SMALL, chain="conv", size=8, n_entries=30, zero_weights=True)
        assert rep.near_zero_flagged > 0
        assert all(e.rel_error is None for e in rep.entries if e.flag)

    def test_limits(self):
        with pytest.raises(InvalidArgument):
            grad_check(SMALL, size=32)
        with pytest.raises(InvalidArgument):
            grad_check(SMALL, chain="head")
