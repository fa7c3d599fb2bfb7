import math

import numpy as np
import pytest

from fpplab import InvalidArgument
from fpplab.nn import autograd as ag
from fpplab.nn.autograd import Tensor
from fpplab.phasecore import TWO_PI, PhaseMap, projector_phase_maps, wrap
from fpplab.selfsup import (LossWeights, chain_loss, compose_absolute, correspond, self_supervised_loss,
                            soft_fringe_order, synthesize_phases)
from fpplab.sim import SystemGeometry


def naive_bilinear(row, x):
    x0 = np.floor(x).astype(int)
    t = x - x0
    return (1 - t) * row[x0] + t * row[x0 + 1]


class TestSoftOrderAndCompose:
    def test_examples(self):
        assert soft_fringe_order(Tensor([[0.0]]), 64).item() == 32.0
        assert abs(soft_fringe_order(Tensor([[math.log(3)]]), 64).item() - 48.0) < 1e-12
        v = soft_fringe_order(Tensor([[-800.0]]), 64).item()
        assert v >= 0 and v < 1e-300

    def test_gradient(self):
        k = Tensor(np.array([[0.3, -1.2]]), requires_grad=True)
        ag.tsum(soft_fringe_order(k, 16)).backward()
        s = 1 / (1 + np.exp(-k.data))
        np.testing.assert_allclose(k.grad, 16 * s * (1 - s), rtol=1e-12)

    def test_bad_period(self):
        with pytest.raises(InvalidArgument):
            soft_fringe_order(Tensor([[0.0]]), 0)

    def test_compose(self):
        assert abs(compose_absolute(np.array([[0.5]]), Tensor([[2.0]])).item() - 13.06637) < 1e-5
        phi = np.array([[0.1, -2.0]])
        np.testing.assert_array_equal(compose_absolute(phi, Tensor(np.zeros((1, 2)))).data, phi)
        k = Tensor(np.ones((1, 2)), requires_grad=True)
        ag.tsum(compose_absolute(phi, k)).backward()
        np.testing.assert_allclose(k.grad, TWO_PI)

    def test_compose_size(self):
        with pytest.raises(InvalidArgument):
            compose_absolute(np.zeros((2, 2)), Tensor(np.zeros((2, 3))))

    def test_integer_order_matches_tpu(self, toy_samples):
        s = toy_samples[0]
        np.testing.assert_array_equal(compose_absolute(s.phi_high, Tensor(s.gt_order)).data[s.mask],
                                      s.gt_phase[s.mask])


class TestCorrespond:
    def test_examples(self):
        g = SystemGeometry(projector_width=684, period_number=64)
        f = correspond(Tensor([[0.0, TWO_PI * 32, TWO_PI * 64]]), g)
        np.testing.assert_allclose(f.x_p.data, [[0.0, 342.0, 684.0]])
        assert f.in_bounds.tolist() == [[True, True, False]]

    def test_rows_and_gradient(self):
        g = SystemGeometry()
        phi = Tensor(np.full((4, 3), 10.0), requires_grad=True)
        f = correspond(phi, g)
        np.testing.assert_allclose(f.y_p[:, 0], np.arange(4) * g.projector_height / g.camera_height)
        ag.tsum(f.x_p).backward()
        np.testing.assert_allclose(phi.grad, g.projector_width / (TWO_PI * g.period_number))

    def test_negative_out_of_bounds(self):
        f = correspond(Tensor([[-0.01]]), SystemGeometry())
        assert not f.in_bounds[0, 0]


class TestSynthesis:
    def field(self, geom, xs):
        xs = np.atleast_2d(np.asarray(xs, float))
        return correspond(Tensor(xs * TWO_PI * geom.period_number / geom.projector_width), geom)

    @pytest.mark.parametrize("mode", ["geodesic", "sincos"])
    def test_nodes_exact(self, mode):
        g = SystemGeometry()
        low, high = projector_phase_maps(g)
        xs = np.array([[0.0, 1.0, 10.0, 341.0, 683.0]])
        lo, hi = synthesize_phases(self.field(g, xs), g, mode)
        idx = xs.astype(int)[0]
        np.testing.assert_allclose(lo.data[0], low.values[0, idx], atol=1e-12)
        np.testing.assert_allclose(wrap(hi.data[0] - high.values[0, idx]), 0, atol=1e-12)

    @pytest.mark.parametrize("mode", ["geodesic", "sincos"])
    def test_seam_midpoint(self, mode):
        grid = np.array([[np.pi - 0.1, -(np.pi - 0.1)]])
        out = ag.sample_wrapped(grid, Tensor([[0.5]]), np.zeros((1, 1)), mode).item()
        assert abs(out - np.pi) < 1e-12
        assert abs(naive_bilinear(grid[0], np.array([0.5]))[0]) < 1e-12

    def test_half_period(self):
        g = SystemGeometry()
        lo, _ = synthesize_phases(self.field(g, [[g.projector_width / 2]]), g)
        assert abs(abs(lo.item()) - np.pi) < 1e-9

    def test_geodesic_exact_off_node(self, rng):
        g = SystemGeometry()
        xs = rng.uniform(0, g.projector_width - 1, (1, 500))
        lo, hi = synthesize_phases(self.field(g, xs), g)
        np.testing.assert_allclose(wrap(lo.data - TWO_PI * xs / g.projector_width), 0, atol=1e-9)
        np.testing.assert_allclose(wrap(hi.data - TWO_PI * g.period_number * xs / g.projector_width), 0,
                                   atol=1e-9)

    def test_sincos_chord_bias_small(self, rng):
        g = SystemGeometry()
        xs = rng.uniform(0, g.projector_width - 1, (1, 500))
        _, hi = synthesize_phases(self.field(g, xs), g, "sincos")
        err = np.abs(wrap(hi.data - TWO_PI * g.period_number * xs / g.projector_width))
        assert err.max() < 1e-3

    def test_unknown_mode(self):
        g = SystemGeometry()
        with pytest.raises(InvalidArgument):
            synthesize_phases(self.field(g, [[1.0]]), g, "nearest")


class TestLoss:
    def test_identity_zero(self, rng):
        phi_l, phi_h = rng.uniform(-3, 3, (2, 5, 5))
        m = np.ones((5, 5), bool)
        assert self_supervised_loss(phi_l, Tensor(phi_l), phi_h, Tensor(phi_h), m).item() == 0.0

    def test_uniform_low_error(self):
        phi_l = np.full((3, 3), 1.0)
        phi_h = np.full((3, 3), -2.0)
        m = np.ones((3, 3), bool)
        total = self_supervised_loss(phi_l, Tensor(phi_l + 0.1), phi_h, Tensor(phi_h), m, LossWeights(1, 2))
        assert abs(total.item() - 0.1) < 1e-12

    def test_default_weights(self):
        assert LossWeights() == LossWeights(1.0, 2.0)

    @pytest.mark.parametrize("w", [(0, 0), (-1, 2)])
    def test_bad_weights(self, w):
        with pytest.raises(InvalidArgument):
            LossWeights(*w)

    def test_circular_high_term(self):
        phi_h = np.array([[np.pi - 0.05]])
        hat = Tensor([[-np.pi + 0.05]])
        m = np.ones((1, 1), bool)
        _, _, l2 = self_supervised_loss(phi_h, Tensor(phi_h), phi_h, hat, m, return_terms=True)
        _, _, l2_plain = self_supervised_loss(phi_h, Tensor(phi_h), phi_h, hat, m, circular=False,
                                              return_terms=True)
        assert abs(l2.item() - 0.1) < 1e-12 and abs(l2_plain.item() - (TWO_PI - 0.1)) < 1e-12

    def test_only_masked_pixels(self):
        phi = np.zeros((2, 2))
        hat = np.zeros((2, 2))
        hat[0, 0] = 1.0
        m = np.array([[False, True], [True, True]])
        assert self_supervised_loss(phi, Tensor(hat), phi, Tensor(phi), m).item() == 0.0

    def test_empty_mask(self):
        z = np.zeros((2, 2))
        with pytest.raises(InvalidArgument):
            self_supervised_loss(z, Tensor(z), z, Tensor(z), np.zeros((2, 2), bool))

    def test_size_mismatch(self):
        z = np.zeros((2, 2))
        with pytest.raises(InvalidArgument):
            self_supervised_loss(z, Tensor(np.zeros((2, 3))), z, Tensor(z), np.ones((2, 2), bool))


def synth_from_orders(sample, k, geom, mode="geodesic"):
    field = correspond(compose_absolute(sample.phi_high, Tensor(k)), geom)
    lo, hi = synthesize_phases(field, geom, mode)
    return field, lo, hi


class TestChainProperties:
    def test_true_order_fixed_point(self, toy_samples, desk_geom):
        for s in toy_samples:
            field, lo, hi = synth_from_orders(s, s.gt_order, desk_geom)
            mask = s.mask & field.in_bounds
            assert self_supervised_loss(s.phi_low, lo, s.phi_high, hi, mask).item() < 1e-6

    def test_plus_one_raises_loss1(self, toy_samples, desk_geom):
        s = toy_samples[0]
        a = desk_geom.period_number
        _, lo0, _ = synth_from_orders(s, s.gt_order, desk_geom)
        field, lo1, _ = synth_from_orders(s, s.gt_order + 1, desk_geom)
        ok = s.mask & field.in_bounds
        target = np.mod(s.phi_low, TWO_PI)
        r0 = np.abs(np.mod(lo0.data, TWO_PI) - target)[ok]
        r1 = np.abs(np.mod(lo1.data, TWO_PI) - target)[ok]
        assert np.all(r1 > r0)
        np.testing.assert_allclose(r1 - r0, TWO_PI / a, atol=1e-6)

    def test_loss2_blind_to_uniform_shift(self, toy_samples, desk_geom):
        s = toy_samples[1]
        f0, _, hi0 = synth_from_orders(s, s.gt_order, desk_geom)
        f1, _, hi1 = synth_from_orders(s, s.gt_order + 1, desk_geom)
        region = s.mask & f0.in_bounds & f1.in_bounds
        # away from the seam of the projected high-frequency phase
        region &= np.abs(s.phi_high) < np.pi - 0.2
        assert region.sum() > 100
        _, _, l2a = self_supervised_loss(s.phi_low, hi0, s.phi_high, hi0, region, return_terms=True)
        _, _, l2b = self_supervised_loss(s.phi_low, hi0, s.phi_high, hi1, region, return_terms=True)
        assert abs(l2a.item() - l2b.item()) < 1e-9

    def test_chain_loss_mask_and_shape(self, toy_samples, desk_geom):
        s = toy_samples[0]
        k_o = Tensor(np.zeros((1,) + s.mask.shape), requires_grad=True)
        out = chain_loss(k_o, s.phi_low, s.phi_high, s.mask, desk_geom)
        assert out.k_soft.shape == s.mask.shape
        assert not np.any(out.mask & ~s.mask)
        out.loss.backward()
        assert k_o.grad.shape == k_o.shape and np.all(k_o.grad[0][~out.mask] == 0)

    def test_chain_rejects_multichannel(self, toy_samples, desk_geom):
        s = toy_samples[0]
        with pytest.raises(InvalidArgument):
            chain_loss(Tensor(np.zeros((2,) + s.mask.shape)), s.phi_low, s.phi_high, s.mask, desk_geom)

    def test_loss_decreases_toward_truth(self, toy_samples, desk_geom):
        s = toy_samples[0]
        a = desk_geom.period_number
        target = np.clip(s.gt_order + 0.5, 1e-3, a - 1e-3) / a
        k_true = np.log(target / (1 - target))
        far = chain_loss(Tensor(np.zeros_like(k_true)), s.phi_low, s.phi_high, s.mask, desk_geom).loss1
        near = chain_loss(Tensor(k_true), s.phi_low, s.phi_high, s.mask, desk_geom).loss1
        assert near < far


def test_phase_map_input_accepted(toy_samples, desk_geom):
    s = toy_samples[0]
    out = chain_loss(Tensor(np.zeros(s.mask.shape)), PhaseMap(s.phi_low, 1),
                     PhaseMap(s.phi_high, desk_geom.period_number), s.mask, desk_geom)
    assert np.isfinite(out.loss.item())
