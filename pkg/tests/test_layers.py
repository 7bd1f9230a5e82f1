import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emgnet.errors import NumericError, ShapeError, SpecError, UsageError
from emgnet.layers import (
    BatchNormLayer,
    BatchNormParams,
    FireParams,
    LayerSpec,
    Network,
    NetworkSpec,
    batchnorm_forward,
    build_compact_cnn,
    build_generic_cnn,
    compact_cnn_spec,
    dropout_forward,
    fire_layers,
    forward,
    generic_cnn_spec,
    layer_parameter_counts,
    leaky_relu,
    parameter_count,
    softmax,
    spatial_reduction_forward,
    temporal_fire_forward,
)
from emgnet.tensor import FilterBank
from emgnet.training import AdamState, TrainConfig, adam_step, batch_cross_entropy

from conftest import central_difference, rel_error


def random_bank(rng, *shape):
    return FilterBank(rng.normal(size=shape), rng.normal(size=shape[-1]))


def mini_compact(num_classes=2, dropout=0.0, seed=0):
    spec = compact_cnn_spec(6, 2, num_classes, temporal_rows=3, temporal_filters=3, fires=((2, 4), (2, 4)), dropout=dropout)
    return Network.build(spec, seed)


def network_loss_and_grads(net, x, y):
    net.set_mode("train")
    probs = net.predict_proba(x)
    loss, dlogits = batch_cross_entropy(probs, y)
    net.backward(dlogits)
    return loss


class TestActivations:
    @pytest.mark.parametrize("x,expected", [(2.0, 2.0), (-2.0, -0.2), (0.0, 0.0)])
    def test_leaky_relu(self, x, expected):
        assert leaky_relu(x, 0.1) == pytest.approx(expected, abs=1e-15)

    def test_leaky_relu_array(self):
        np.testing.assert_allclose(leaky_relu(np.array([-1.0, 0.0, 3.0])), [-0.1, 0.0, 3.0])

    def test_leaky_relu_alpha_range(self):
        with pytest.raises(UsageError):
            leaky_relu(1.0, 1.5)

    def test_softmax_examples(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])
        np.testing.assert_allclose(softmax([0.0, math.log(3)]), [0.25, 0.75], atol=1e-15)
        np.testing.assert_allclose(softmax([1000.0, 1000.0]), [0.5, 0.5])

    def test_softmax_nan(self):
        with pytest.raises(NumericError):
            softmax([0.0, np.nan])

    def test_softmax_empty(self):
        with pytest.raises(UsageError):
            softmax([])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=20),
        st.floats(-100, 100),
    )
    def test_softmax_properties(self, logits, shift):
        p = softmax(logits)
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-12
        # order-preserving; logits closer than double resolution may tie in p
        x = np.array(logits)
        greater = x[:, None] > x[None, :]
        assert np.all((p[:, None] >= p[None, :])[greater])
        assert x[np.argmax(p)] >= x.max() - 1e-12
        assert x[np.argmax(softmax(x + shift))] >= x.max() - 1e-12


class TestSpecs:
    def test_rate_and_alpha_ranges(self):
        with pytest.raises(SpecError):
            LayerSpec("dropout", rate=1.0)
        with pytest.raises(SpecError):
            LayerSpec("temporal_conv", filter_rows=3, out_depth=4, alpha=0.0)

    def test_fire_constraints(self):
        with pytest.raises(SpecError):
            LayerSpec("fire", out_depth=8, squeeze_depth=9, expand_temporal_rows=3)
        with pytest.raises(SpecError, match="even"):
            LayerSpec("fire", out_depth=7, squeeze_depth=2, expand_temporal_rows=3)

    def test_unknown_kind(self):
        with pytest.raises(SpecError):
            LayerSpec("pooling")

    def test_last_layer_must_be_dense_softmax(self):
        with pytest.raises(SpecError):
            NetworkSpec(4, 2, (LayerSpec("dropout", rate=0.1),), 2)
        with pytest.raises(SpecError):
            NetworkSpec(4, 2, (LayerSpec("dense_softmax", out_depth=3),), 2)

    def test_spatial_reduction_must_span_channels(self):
        spec = NetworkSpec(
            4, 3, (LayerSpec("spatial_reduction", filter_cols=2, out_depth=2), LayerSpec("dense_softmax", out_depth=2)), 2
        )
        with pytest.raises(SpecError):
            Network.build(spec)

    def test_text_round_trip(self):
        spec = compact_cnn_spec(30, 8)
        assert NetworkSpec.from_text(spec.to_text()) == spec
        assert spec.to_text() == compact_cnn_spec(30, 8).to_text()


class TestFire:
    def test_shape(self, rng):
        p = FireParams(random_bank(rng, 1, 1, 8, 4), random_bank(rng, 1, 1, 4, 4), random_bank(rng, 3, 1, 4, 4))
        assert temporal_fire_forward(rng.normal(size=(30, 8, 8)), p).shape == (30, 8, 8)

    def test_zero_parameters_give_zero_output(self, rng):
        p = FireParams(FilterBank.zeros(1, 1, 8, 4), FilterBank.zeros(1, 1, 4, 4), FilterBank.zeros(3, 1, 4, 4))
        assert not temporal_fire_forward(rng.normal(size=(30, 8, 8)), p).any()

    def test_hand_count(self):
        # squeeze 1*1*8*4+4 = 36, expand 1*1*4*4+4 = 20 and 3*1*4*4+4 = 52
        spec = NetworkSpec(
            30, 8, (LayerSpec("fire", out_depth=8, squeeze_depth=4, expand_temporal_rows=3), LayerSpec("dense_softmax", out_depth=2)), 2
        )
        # the network input has depth 1, so count the fire layer on a depth-8 input by hand
        s, half, d = 4, 4, 8
        assert (d * s + s) + (s * half + half) + (3 * s * half + half) == 108
        assert layer_parameter_counts(spec)[0][1] == (1 * 4 + 4) + 20 + 52

    def test_filters_never_span_channels(self, rng):
        p = FireParams(random_bank(rng, 1, 2, 8, 4), random_bank(rng, 1, 1, 4, 4), random_bank(rng, 3, 1, 4, 4))
        with pytest.raises(SpecError):
            temporal_fire_forward(np.zeros((30, 8, 8)), p)

    def test_layer_gradient(self, rng):
        net = mini_compact()
        fire = fire_layers(net)[0]
        x = rng.normal(size=(2, 6, 2, 3))
        probe = rng.normal(size=(2, 6, 2, 4))

        def loss():
            return float((fire.forward(x, True) * probe).sum())

        loss()
        dx = fire.backward(probe)
        assert rel_error(dx, central_difference(loss, x)) < 1e-4
        for p, g in zip(fire.params(), fire.grads()):
            loss()
            fire.backward(probe)
            analytic = g.copy()
            assert rel_error(analytic, central_difference(loss, p)) < 1e-4


class TestSpatialReduction:
    def test_myo_shape(self, rng):
        out = spatial_reduction_forward(rng.normal(size=(30, 8, 5)), random_bank(rng, 1, 8, 5, 2))
        assert out.shape == (30, 1, 2)

    def test_delsys_shape(self, rng):
        out = spatial_reduction_forward(rng.normal(size=(300, 5, 3)), random_bank(rng, 1, 5, 3, 2))
        assert out.shape == (300, 1, 2)

    def test_ones(self):
        out = spatial_reduction_forward(np.ones((4, 8, 1)), FilterBank(np.ones((1, 8, 1, 1)), np.zeros(1)))
        np.testing.assert_array_equal(out, np.full((4, 1, 1), 8.0))

    def test_width_mismatch(self):
        with pytest.raises(SpecError):
            spatial_reduction_forward(np.ones((4, 8, 1)), FilterBank.zeros(1, 5, 1, 2))


class TestDropout:
    def test_infer_is_identity(self, rng):
        x = rng.normal(size=(5, 4, 3))
        np.testing.assert_array_equal(dropout_forward(x, 0.5, "infer", 0), x)

    def test_rate_zero_is_identity(self, rng):
        x = rng.normal(size=(5, 4, 3))
        np.testing.assert_array_equal(dropout_forward(x, 0.0, "train", 0), x)

    def test_zeroed_fraction(self):
        out = dropout_forward(np.ones(10_000), 0.5, "train", 7)
        assert abs((out == 0).mean() - 0.5) <= 0.02
        np.testing.assert_array_equal(np.unique(out), [0.0, 2.0])

    def test_rate_range(self):
        with pytest.raises(UsageError):
            dropout_forward(np.ones(3), 1.0)


class TestBatchNorm:
    def test_normalizes(self, rng):
        batch = 5.0 + 2.0 * rng.standard_normal((64, 3, 2, 4))
        batch = (batch - batch.mean(axis=(0, 1, 2))) / batch.std(axis=(0, 1, 2)) * 2.0 + 5.0
        out = batchnorm_forward(batch, BatchNormParams.identity(4), "train")
        np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0.0, atol=1e-6)
        # epsilon keeps the variance just under 1: 4 / (4 + 1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 4.0 / (4.0 + 1e-5), atol=1e-12)
        np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1.0, atol=1e-5)

    def test_zero_scale(self, rng):
        p = BatchNormParams.identity(3)
        p.scale[:] = 0.0
        p.shift[:] = [1.0, 2.0, 3.0]
        out = batchnorm_forward(rng.normal(size=(4, 2, 2, 3)), p, "train")
        np.testing.assert_array_equal(out, np.broadcast_to([1.0, 2.0, 3.0], out.shape))

    def test_infer_identity_stats(self, rng):
        x = rng.normal(size=(1, 3, 2, 2))
        out = batchnorm_forward(x, BatchNormParams.identity(2), "infer")
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5))

    def test_running_stats_momentum(self):
        p = BatchNormParams.identity(1)
        batch = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
        batchnorm_forward(batch, p, "train")
        assert p.running_mean[0] == pytest.approx(0.1 * 2.0)
        assert p.running_var[0] == pytest.approx(0.9 + 0.1 * 1.0)

    def test_batch_of_one_rejected(self):
        with pytest.raises(UsageError):
            batchnorm_forward(np.ones((1, 2, 2, 1)), BatchNormParams.identity(1), "train")

    def test_layer_gradient(self, rng):
        layer = BatchNormLayer(LayerSpec("batchnorm"), (3, 2, 2))
        layer.bn.scale[:] = [1.5, -0.7]
        layer.bn.shift[:] = [0.2, 0.1]
        x = rng.normal(size=(4, 3, 2, 2))
        probe = rng.normal(size=x.shape)

        def loss():
            return float((layer.forward(x, True) * probe).sum())

        loss()
        dx = layer.backward(probe)
        assert rel_error(dx, central_difference(loss, x)) < 1e-4
        gscale, gshift = (g.copy() for g in layer.grads())
        assert rel_error(gscale, central_difference(loss, layer.bn.scale)) < 1e-4
        assert rel_error(gshift, central_difference(loss, layer.bn.shift)) < 1e-4


class TestBuilders:
    def test_myo_calibration(self):
        net = build_compact_cnn("myo")
        assert parameter_count(net) == 5889

    def test_myo_structure(self):
        net = build_compact_cnn("myo")
        kinds = [l.kind for l in net.spec.layers]
        assert kinds == ["temporal_conv", "fire", "fire", "spatial_reduction", "dropout", "dense_softmax"]
        assert net.spec.layers[0].filter_rows == 3
        sr = net.spec.layers[3]
        assert (sr.filter_rows, sr.filter_cols, sr.out_depth) == (1, 8, 2)

    def test_delsys_structure(self):
        net = build_compact_cnn("delsys")
        assert (net.spec.input_rows, net.spec.input_cols) == (300, 5)
        assert net.spec.layers[0].filter_rows == 50
        assert net.spec.layers[3].filter_cols == 5

    @pytest.mark.parametrize("device", ["myo", "delsys"])
    def test_fire_filters_are_temporal(self, device):
        for fire in fire_layers(build_compact_cnn(device)):
            assert all(bank.filter_cols == 1 for bank in fire.banks())

    @pytest.mark.parametrize("device", ["myo", "delsys"])
    def test_spatial_reduction_two_maps(self, device):
        net = build_compact_cnn(device)
        assert net.layers[3].out_shape == (net.spec.input_rows, 1, 2)

    def test_zero_window_gives_distribution(self):
        p = forward(build_compact_cnn("myo"), np.zeros((30, 8)))
        assert p.shape == (15,)
        assert abs(p.sum() - 1.0) < 1e-9

    def test_identical_windows_identical_outputs(self, rng):
        net = build_compact_cnn("myo")
        w = rng.normal(size=(30, 8))
        np.testing.assert_array_equal(forward(net, w), forward(net, w.copy()))

    def test_fresh_network_not_saturated(self, rng):
        net = build_compact_cnn("myo")
        p = net.predict_proba(rng.normal(size=(1000, 30, 8, 1)))
        assert p.max(axis=1).mean() < 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            forward(build_compact_cnn("myo"), np.zeros((29, 8)))

    def test_unknown_device(self):
        with pytest.raises(UsageError):
            build_compact_cnn("emotiv")

    def test_generic_blocks(self):
        net = build_generic_cnn((30, 8))
        convs = [l for l in net.spec.layers if l.kind == "conv"]
        assert [c.filter_rows for c in convs] == [3, 3, 3, 1] * 3
        assert all(c.filter_cols == c.filter_rows and c.out_depth == 32 for c in convs)
        assert [l.kind for l in net.spec.layers[:3]] == ["conv", "batchnorm", "leaky_relu"]

    def test_generic_preserves_shape(self):
        net = build_generic_cnn((30, 8))
        for layer in net.layers[:-1]:
            assert layer.out_shape[:2] == (30, 8)
            assert layer.out_shape[2] == 32


class TestParameterCount:
    def spec_of(self, *layers, rows=10, cols=1, classes=15):
        return NetworkSpec(rows, cols, tuple(layers), classes)

    def test_dense_10_to_15(self):
        assert parameter_count(self.spec_of(LayerSpec("dense_softmax", out_depth=15))) == 165

    def test_temporal_conv(self):
        spec = self.spec_of(LayerSpec("temporal_conv", filter_rows=3, out_depth=8), LayerSpec("dense_softmax", out_depth=2), classes=2)
        assert layer_parameter_counts(spec)[0][1] == 32

    def test_dropout(self):
        spec = self.spec_of(LayerSpec("dropout", rate=0.5), LayerSpec("dense_softmax", out_depth=15))
        assert layer_parameter_counts(spec)[0][1] == 0

    def test_batchnorm_excludes_running_stats(self):
        spec = self.spec_of(
            LayerSpec("temporal_conv", filter_rows=3, out_depth=4), LayerSpec("batchnorm"), LayerSpec("dense_softmax", out_depth=2), classes=2
        )
        assert layer_parameter_counts(spec)[1][1] == 8
        net = Network.build(spec)
        assert parameter_count(net) == 16 + 8 + 40 * 2 + 2

    def test_spatial_reduction(self):
        spec = compact_cnn_spec(30, 8)
        assert layer_parameter_counts(spec)[3][1] == 1 * 8 * 64 * 2 + 2

    @pytest.mark.parametrize(
        "spec",
        [compact_cnn_spec(30, 8), compact_cnn_spec(300, 5, temporal_rows=50), generic_cnn_spec((30, 8)), generic_cnn_spec((6, 2), 3, filters=4)],
    )
    def test_closed_form_matches_built(self, spec):
        assert parameter_count(spec) == parameter_count(Network.build(spec))

    def test_equals_scalars_touched_by_adam(self, rng):
        net = mini_compact(num_classes=3)
        x = rng.normal(size=(8, 6, 2, 1))
        network_loss_and_grads(net, x, rng.integers(0, 3, 8))
        before = [p.copy() for p in net.params()]
        adam_step(net.params(), net.grads(), AdamState.zeros_like(net.params()), TrainConfig())
        changed = sum(int((p != b).sum()) for p, b in zip(net.params(), before))
        assert changed == parameter_count(net)


class TestNetworkGradients:
    def check(self, net, x, y, tol=1e-3):
        network_loss_and_grads(net, x, y)
        analytic = [g.copy() for g in net.grads()]

        def loss():
            net.set_mode("train")
            return batch_cross_entropy(net.predict_proba(x), y)[0]

        worst = 0.0
        for p, g in zip(net.params(), analytic):
            worst = max(worst, rel_error(g, central_difference(loss, p)))
        assert worst < tol

    def test_miniature_compact_cnn(self, rng):
        self.check(mini_compact(), rng.normal(size=(3, 6, 2, 1)), np.array([0, 1, 1]))

    def test_miniature_generic_cnn(self, rng):
        net = Network.build(generic_cnn_spec((4, 3), 3, filters=3), seed=1)
        self.check(net, rng.normal(size=(4, 4, 3, 1)), np.array([0, 1, 2, 1]))

    def test_dropout_mask_reused_in_backward(self, rng):
        net = mini_compact(dropout=0.5)
        x = rng.normal(size=(3, 6, 2, 1))
        y = np.array([0, 1, 0])
        seed = 99

        def loss():
            net.rng = np.random.default_rng(seed)
            net.set_mode("train")
            return batch_cross_entropy(net.predict_proba(x), y)[0]

        net.backward(batch_cross_entropy(_probs(net, x, seed), y)[1])
        analytic = [g.copy() for g in net.grads()]
        for p, g in zip(net.params(), analytic):
            assert rel_error(g, central_difference(loss, p)) < 1e-3


def _probs(net, x, seed):
    net.rng = np.random.default_rng(seed)
    net.set_mode("train")
    return net.predict_proba(x)
