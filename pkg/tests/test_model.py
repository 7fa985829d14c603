import numpy as np
import pytest

from falsim.adversary import sample_manifold
from falsim.core import RngStream
from falsim.model import (
    InitAnchor,
    LossKind,
    NetParams,
    batch_loss,
    forward,
    forward_many,
    grad_hidden,
    init_params,
    loss_eval,
    loss_subgrad,
    pseudo_batch_loss,
    pseudo_forward,
    pseudo_forward_many,
    pseudo_grad_hidden,
)


def tiny_net(hidden, output, bias):
    return NetParams(
        hidden=np.array(hidden, dtype=float),
        output=np.array(output, dtype=float),
        bias=np.array(bias, dtype=float),
    )


def anchored(m=64, d=3, seed=0, displacement=0.0):
    rng = RngStream(seed)
    params, anchor = init_params(m, d, rng.child(0))
    if displacement:
        dirs = rng.child(1).generator().standard_normal((d, m))
        dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
        params.hidden = anchor.hidden0 + displacement * dirs
    return params, anchor


class TestInit:
    def test_hidden_variance_matches_width(self):
        params, _ = anchored(m=128, d=50, seed=3)
        assert params.hidden.var() == pytest.approx(1.0 / 128.0, rel=0.10)

    def test_output_weight_bound(self):
        params, _ = anchored(m=4, d=2, seed=1)
        assert np.all(np.abs(params.output) <= 4 ** (-1.0 / 3.0))

    def test_anchor_is_bitwise_copy(self):
        params, anchor = anchored(m=16, d=2, seed=2)
        np.testing.assert_array_equal(params.hidden, anchor.hidden0)
        np.testing.assert_array_equal(params.output, anchor.output0)
        np.testing.assert_array_equal(params.bias, anchor.bias0)
        assert params.hidden is not anchor.hidden0

    def test_anchor_immutable(self):
        _, anchor = anchored(m=8, d=2)
        with pytest.raises(ValueError):
            anchor.hidden0[0, 0] = 1.0

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(ValueError):
            init_params(0, 3, RngStream(0))
        with pytest.raises(ValueError):
            init_params(4, 0, RngStream(0))


class TestForward:
    def test_zero_output_weights(self):
        params, _ = anchored(m=32, d=3)
        params = NetParams(hidden=params.hidden, output=np.zeros(32), bias=params.bias)
        xs = sample_manifold(RngStream(9), 10, 3)
        np.testing.assert_array_equal(forward_many(params, xs), np.zeros(10))

    def test_relu_clamps(self):
        p = tiny_net([[1.0], [0.0]], [1.0], [-2.0])
        assert forward(p, np.array([1.0, 0.0])) == 0.0

    def test_active_neuron_arithmetic(self):
        p = tiny_net([[1.0], [0.0]], [2.0], [0.5])
        assert forward(p, np.array([1.0, 0.0])) == pytest.approx(3.0)

    def test_positive_homogeneity_single_neuron(self):
        # scaling an active neuron's weights and bias by c > 0 scales its term by c
        p = tiny_net([[0.7], [-0.2]], [1.3], [0.4])
        x = np.array([0.9, 0.1])
        for c in (0.5, 2.0, 7.0):
            scaled = tiny_net([[0.7 * c], [-0.2 * c]], [1.3], [0.4 * c])
            assert forward(scaled, x) == pytest.approx(c * forward(p, x), rel=1e-12)

    def test_dimension_mismatch(self):
        params, _ = anchored(m=4, d=3)
        with pytest.raises(ValueError):
            forward(params, np.array([1.0, 0.0]))


class TestPseudoForward:
    def test_zero_displacement_is_exactly_zero(self):
        params, anchor = anchored(m=64, d=3)
        xs = sample_manifold(RngStream(5), 50, 3)
        np.testing.assert_array_equal(pseudo_forward_many(params, anchor, xs), np.zeros(50))

    def test_linearity_in_displacement(self):
        params, anchor = anchored(m=32, d=4)
        gen = np.random.default_rng(8)
        d1 = gen.standard_normal(params.hidden.shape) * 0.01
        d2 = gen.standard_normal(params.hidden.shape) * 0.01
        x = np.concatenate([gen.standard_normal(3), [0.5]])
        x /= np.linalg.norm(x)

        def val(disp):
            shifted = NetParams(hidden=anchor.hidden0 + disp, output=params.output, bias=params.bias)
            return pseudo_forward(shifted, anchor, x)

        lhs = val(2.0 * d1 + 3.0 * d2)
        rhs = 2.0 * val(d1) + 3.0 * val(d2)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-15)

    def test_doubling_displacement_doubles_value(self):
        params, anchor = anchored(m=32, d=3, displacement=0.05)
        xs = sample_manifold(RngStream(6), 20, 3)
        g1 = pseudo_forward_many(params, anchor, xs)
        doubled = NetParams(
            hidden=anchor.hidden0 + 2.0 * (params.hidden - anchor.hidden0),
            output=params.output,
            bias=params.bias,
        )
        np.testing.assert_allclose(pseudo_forward_many(doubled, anchor, xs), 2.0 * g1, rtol=1e-12)

    def test_gap_shrinks_with_width(self):
        # at column displacement 1/m^{2/3}, the worst real-vs-linearized gap
        # over manifold samples decreases as the width grows
        gaps = []
        for m in (64, 512, 4096):
            params, anchor = anchored(m=m, d=3, seed=4, displacement=m ** (-2.0 / 3.0))
            xs = sample_manifold(RngStream(7), 2000, 3)
            gaps.append(np.max(np.abs(forward_many(params, xs) - pseudo_forward_many(params, anchor, xs))))
        assert gaps[2] < gaps[1] < gaps[0]


class TestLoss:
    def test_zero_on_diagonal(self):
        assert loss_eval(LossKind.ABSOLUTE, 0.3, 0.3) == 0.0

    def test_basic_value(self):
        assert loss_eval(LossKind.ABSOLUTE, 1.0, -1.0) == pytest.approx(2.0)

    def test_one_lipschitz_random_pairs(self):
        gen = np.random.default_rng(3)
        z1, z2, y = gen.standard_normal((3, 1000)) * 5
        gap = np.abs(loss_eval(LossKind.ABSOLUTE, z1, y) - loss_eval(LossKind.ABSOLUTE, z2, y))
        assert np.all(gap <= np.abs(z1 - z2) + 1e-12)

    def test_non_negative(self):
        gen = np.random.default_rng(4)
        z, y = gen.standard_normal((2, 1000))
        assert np.all(loss_eval(LossKind.ABSOLUTE, z, y) >= 0)

    def test_subgrad_convention(self):
        assert loss_subgrad(LossKind.ABSOLUTE, 0.5, 0.5) == 0.0
        assert loss_subgrad(LossKind.ABSOLUTE, 1.0, 0.0) == 1.0
        assert loss_subgrad(LossKind.ABSOLUTE, -1.0, 0.0) == -1.0
        gen = np.random.default_rng(5)
        z, y = gen.standard_normal((2, 100))
        assert np.all(np.abs(loss_subgrad(LossKind.ABSOLUTE, z, y)) <= 1.0)


class TestGradHidden:
    def test_zero_output_weights_zero_gradient(self):
        params, _ = anchored(m=16, d=3)
        params = NetParams(hidden=params.hidden, output=np.zeros(16), bias=params.bias)
        xs = sample_manifold(RngStream(11), 6, 3)
        ys = np.linspace(-1, 1, 6)
        np.testing.assert_array_equal(grad_hidden(params, xs, ys), np.zeros((3, 16)))

    def test_column_norm_bound_unit_inputs(self):
        for seed in range(5):
            params, _ = anchored(m=64, d=3, seed=seed, displacement=0.02)
            xs = sample_manifold(RngStream(20 + seed), 12, 3)
            ys = RngStream(30 + seed).generator().uniform(-1, 1, 12)
            g = grad_hidden(params, xs, ys)
            col_norms = np.linalg.norm(g, axis=0)
            assert np.all(col_norms <= np.abs(params.output) * (1 + 1e-9) + 1e-15)
            assert np.all(col_norms <= 64 ** (-1.0 / 3.0) * (1 + 1e-9))

    def test_empty_batch_rejected(self):
        params, _ = anchored(m=8, d=3)
        with pytest.raises(ValueError):
            grad_hidden(params, np.empty((0, 3)), np.empty(0))

    def test_matches_finite_differences(self):
        params, _ = anchored(m=32, d=3, seed=6, displacement=0.03)
        xs = sample_manifold(RngStream(40), 8, 3)
        ys = RngStream(41).generator().uniform(-1, 1, 8)
        g = grad_hidden(params, xs, ys)
        pre = xs @ params.hidden + params.bias
        f = forward_many(params, xs)
        probe = 1e-6
        checked = 0
        gen = np.random.default_rng(0)
        while checked < 60:
            i, r = int(gen.integers(3)), int(gen.integers(32))
            if np.any(np.abs(pre[:, r]) < 1e-4) or np.any(np.abs(f - ys) < 1e-4):
                continue
            orig = params.hidden[i, r]
            params.hidden[i, r] = orig + probe
            hi = batch_loss(params, xs, ys)
            params.hidden[i, r] = orig - probe
            lo = batch_loss(params, xs, ys)
            params.hidden[i, r] = orig
            fd = (hi - lo) / (2 * probe)
            assert fd == pytest.approx(g[i, r], rel=1e-5, abs=1e-9)
            checked += 1


class TestPseudoGradHidden:
    def test_equals_real_gradient_at_anchor_with_unit_labels(self):
        # with +/-1 labels and |f| < 1, the per-point loss slopes agree, so at
        # zero displacement the two gradients coincide exactly
        params, anchor = anchored(m=64, d=3, seed=7)
        xs = sample_manifold(RngStream(50), 10, 3)
        ys = np.sign(RngStream(51).generator().standard_normal(10) + 0.01)
        assert np.all(np.abs(forward_many(params, xs)) < 1.0)
        np.testing.assert_array_equal(
            pseudo_grad_hidden(params, anchor, xs, ys), grad_hidden(params, xs, ys)
        )

    def test_unflipped_columns_identical(self):
        params, anchor = anchored(m=64, d=3, seed=8, displacement=0.01)
        xs = sample_manifold(RngStream(52), 10, 3)
        ys = np.sign(RngStream(53).generator().standard_normal(10) + 0.01)
        same_gate = np.all(
            ((xs @ params.hidden + params.bias) >= 0)
            == ((xs @ anchor.hidden0 + anchor.bias0) >= 0),
            axis=0,
        )
        assert same_gate.any()
        gp = pseudo_grad_hidden(params, anchor, xs, ys)
        gr = grad_hidden(params, xs, ys)
        np.testing.assert_array_equal(gp[:, same_gate], gr[:, same_gate])

    def test_matches_finite_differences_of_linearized_loss(self):
        params, anchor = anchored(m=32, d=3, seed=9, displacement=0.05)
        xs = sample_manifold(RngStream(54), 8, 3)
        ys = RngStream(55).generator().uniform(-1, 1, 8)
        g = pseudo_grad_hidden(params, anchor, xs, ys)
        pre0 = xs @ anchor.hidden0 + anchor.bias0
        gv = pseudo_forward_many(params, anchor, xs)
        probe = 1e-6
        checked = 0
        gen = np.random.default_rng(1)
        while checked < 60:
            i, r = int(gen.integers(3)), int(gen.integers(32))
            if np.any(np.abs(pre0[:, r]) < 1e-4) or np.any(np.abs(gv - ys) < 1e-4):
                continue
            orig = params.hidden[i, r]
            params.hidden[i, r] = orig + probe
            hi = pseudo_batch_loss(params, anchor, xs, ys)
            params.hidden[i, r] = orig - probe
            lo = pseudo_batch_loss(params, anchor, xs, ys)
            params.hidden[i, r] = orig
            fd = (hi - lo) / (2 * probe)
            assert fd == pytest.approx(g[i, r], rel=1e-7, abs=1e-11)
            checked += 1
