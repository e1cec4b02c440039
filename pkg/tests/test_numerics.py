import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from layer_zoo import KINDS, make_layer

from clipforge.numerics import (
    CheckpointError,
    Conv2d,
    Dense,
    GlobalAvgPool,
    GroupNorm,
    GRUCell,
    Layer,
    ReLU,
    Sequential,
    ShapeError,
    Sigmoid,
    backward,
    flops,
    forward,
    gradcheck,
    load_params,
    save_params,
    softmax,
)
from clipforge.numerics.gradcheck import NonFiniteLossError, relative_error

SEEDS = range(10)


def naive_conv(x, w, b, stride, pad):
    """Nested-loop reference; also counts scalar multiplications."""
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    mults = 0
    for i in range(n):
        for o in range(co):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o]
                    for ci in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[i, ci, y * stride + ky, xx * stride + kx] * w[o, ci, ky, kx]
                                mults += 1
                    out[i, o, y, xx] = acc
    return out, mults




class TestForward:
    def test_dense_identity(self):
        layer = Dense(4, 4, bias=True)
        layer.params["weight"][...] = np.eye(4)
        layer.params["bias"][...] = 0.0
        v = np.array([[1.0, -2.0, 3.5, 0.25]])
        np.testing.assert_array_equal(forward(layer, v), v)

    def test_softmax_of_zeros(self):
        np.testing.assert_allclose(softmax(np.zeros(4)), [0.25] * 4)

    def test_conv_all_ones_gives_nines(self):
        layer = Conv2d(1, 1, 3)
        layer.params["weight"][...] = 1.0
        layer.params["bias"][...] = 0.0
        out = forward(layer, np.ones((1, 1, 5, 5)))
        np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 9.0))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 2), (3, 1)])
    def test_conv_matches_nested_loops(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        layer = Conv2d(2, 3, 3, stride=stride, padding=pad, rng=rng)
        layer.params["bias"][...] = rng.normal(size=3)
        x = rng.normal(size=(2, 2, 6, 7))
        ref, _ = naive_conv(x, layer.params["weight"], layer.params["bias"], stride, pad)
        np.testing.assert_allclose(forward(layer, x), ref, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_names_dimension(self):
        with pytest.raises(ShapeError, match="channels"):
            forward(Conv2d(3, 4, 3), np.zeros((1, 2, 5, 5)))
        with pytest.raises(ShapeError, match="features"):
            forward(Dense(4, 2), np.zeros((1, 5)))

    def test_forward_is_pure(self):
        rng = np.random.default_rng(3)
        net = Sequential(Conv2d(1, 2, 3, rng=rng), ReLU(), GlobalAvgPool(), Dense(2, 2, rng=rng))
        x = rng.normal(size=(2, 1, 6, 6))
        np.testing.assert_array_equal(forward(net, x), forward(net, x.copy()))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=9))
    def test_softmax_is_a_distribution(self, values):
        p = softmax(np.array(values))
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p >= 0) and np.all(p <= 1)

    def test_softmax_strictly_inside_unit_interval(self):
        p = softmax(np.random.default_rng(0).normal(size=(20, 6)))
        assert np.all((p > 0) & (p < 1))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestBackward:
    def test_dense_linear_map_gradients(self):
        rng = np.random.default_rng(1)
        layer = Dense(3, 2, rng=rng, bias=False)
        x = rng.normal(size=(1, 3))
        g = rng.normal(size=(1, 2))
        grads, dx = backward(layer, x, g)
        np.testing.assert_allclose(grads["weight"], g.T @ x)
        np.testing.assert_allclose(dx, g @ layer.params["weight"])

    def test_sigmoid_derivative_at_zero(self):
        _, dx = backward(Sigmoid(), np.zeros((1, 1)), np.ones((1, 1)))
        assert dx[0, 0] == 0.25

    def test_upstream_shape_checked(self):
        with pytest.raises(ShapeError):
            backward(Dense(3, 2), np.zeros((1, 3)), np.zeros((1, 3)))

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck_every_layer_kind(self, kind, seed):
        layer, x = make_layer(kind, np.random.default_rng(seed))
        report = gradcheck(layer, x)
        assert report.passed, f"{kind} seed {seed}\n{report}"

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck_small_cnn(self, seed):
        rng = np.random.default_rng(seed)
        net = Sequential(
            Conv2d(2, 4, 3, stride=2, padding=1, rng=rng), GroupNorm(2, 4), ReLU(), GlobalAvgPool(), Dense(4, 3, rng=rng)
        )
        assert gradcheck(net, rng.normal(size=(2, 2, 6, 6))).passed


class TestGradcheck:
    def test_dense_sigmoid_network_passes(self):
        rng = np.random.default_rng(0)
        net = Sequential(Dense(4, 5, rng=rng), Sigmoid(), Dense(5, 2, rng=rng), Sigmoid())
        assert gradcheck(net, rng.normal(size=(3, 4))).passed

    def test_parameter_free_network_has_empty_report(self):
        report = gradcheck(Sequential(ReLU()), np.ones((2, 3)), check_input=False)
        assert report.params == {} and report.inputs == []
        assert report.passed

    def test_corrupted_gradient_fails(self):
        class Broken(Dense):
            def backward(self, x, grad):
                grads, dx = super().backward(x, grad)
                grads["weight"] = grads["weight"] + 0.1
                return grads, dx

        rng = np.random.default_rng(0)
        assert not gradcheck(Broken(3, 2, rng=rng), rng.normal(size=(2, 3))).passed

    def test_non_finite_loss_raises(self):
        with pytest.raises(NonFiniteLossError):
            gradcheck(Dense(2, 2), np.ones((1, 2)), loss_fn=lambda y: (float("nan"), np.zeros_like(y)))

    def test_float32_rejected(self):
        with pytest.raises(TypeError):
            gradcheck(ReLU(), np.ones((1, 2), dtype=np.float32))

    def test_relative_error_identical_is_zero(self):
        a = np.array([1.0, -2.0, 0.0])
        assert relative_error(a, a.copy()) == 0.0


class TestFlops:
    def test_dense(self):
        assert flops(Dense(4, 3), (1, 4)) == 24

    def test_conv_example(self):
        # 3x3 kernel, 1 -> 2 channels, 8x8 input without padding gives a 6x6 output
        assert flops(Conv2d(1, 2, 3), (1, 1, 8, 8)) == 1296

    @pytest.mark.parametrize(
        "cin,cout,k,stride,pad,h,w", [(1, 2, 3, 1, 0, 8, 8), (2, 3, 3, 2, 1, 7, 6), (3, 1, 1, 1, 0, 4, 5)]
    )
    def test_conv_counts_naive_multiplications(self, cin, cout, k, stride, pad, h, w):
        rng = np.random.default_rng(0)
        layer = Conv2d(cin, cout, k, stride=stride, padding=pad, rng=rng)
        x = rng.normal(size=(2, cin, h, w))
        _, mults = naive_conv(x, layer.params["weight"], layer.params["bias"], stride, pad)
        assert flops(layer, x.shape) == 2 * mults

    def test_global_average_pool_counts_elements(self):
        assert flops(GlobalAvgPool(), (1, 3, 4, 5)) == 60

    def test_gru_cell(self):
        i, hdim = 32, 64
        assert flops(GRUCell(i, hdim), (1, i)) == 6 * hdim * (i + hdim) + 14 * hdim

    def test_sequential_sums_children(self):
        net = Sequential(Conv2d(1, 2, 3, padding=1), ReLU(), GlobalAvgPool())
        shape = (1, 1, 4, 4)
        expect = flops(net.layers[0], shape) + flops(ReLU(), (1, 2, 4, 4)) + 2 * 16
        assert flops(net, shape) == expect

    def test_every_kind_reports_non_negative_integer(self):
        rng = np.random.default_rng(0)
        for kind in KINDS:
            layer, x = make_layer(kind, rng)
            shape = x[0].shape if isinstance(x, tuple) else x.shape
            f = flops(layer, shape)
            assert isinstance(f, int) and f >= 0, kind


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"a.weight": rng.normal(size=(3, 4)), "b": np.array([1.5]), "c.scalar_like": rng.normal(size=(2, 1, 2))}
        save_params(params, tmp_path / "p.clpf")
        back = load_params(tmp_path / "p.clpf")
        assert list(back) == list(params)
        for k in params:
            np.testing.assert_array_equal(back[k], params[k])

    def test_header_bytes(self, tmp_path):
        save_params({"w": np.zeros(2)}, tmp_path / "p.clpf")
        raw = (tmp_path / "p.clpf").read_bytes()
        assert raw[:4] == b"CLPF"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 1

    def test_truncated_file_rejected(self, tmp_path):
        save_params({"w": np.arange(6.0).reshape(2, 3)}, tmp_path / "p.clpf")
        raw = (tmp_path / "p.clpf").read_bytes()
        (tmp_path / "t.clpf").write_bytes(raw[:-5])
        with pytest.raises(CheckpointError):
            load_params(tmp_path / "t.clpf")

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "x.clpf").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(CheckpointError):
            load_params(tmp_path / "x.clpf")


class TestLayerBase:
    def test_sequential_prefixes_parameter_names(self):
        net = Sequential(Dense(2, 3), ReLU(), Dense(3, 1))
        assert sorted(net.named_params()) == ["0.bias", "0.weight", "2.bias", "2.weight"]

    def test_base_layer_is_abstract(self):
        with pytest.raises(NotImplementedError):
            Layer().forward(np.zeros(1))
