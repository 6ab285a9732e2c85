import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sehilo import nn
from sehilo.nn import ParamSpec
from sehilo.tensorfile import (
    TENSOR_MAGIC,
    TensorFormatError,
    load_tensor,
    load_weights,
    save_tensor,
    save_weights,
    tensor_from_bytes,
    tensor_to_bytes,
)


class TestMatmul:
    def test_identity(self, rng):
        a = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(nn.matmul(a, np.eye(4)), a)

    def test_hand_example(self):
        np.testing.assert_array_equal(nn.matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])

    def test_associativity(self, rng):
        a, b, c = (rng.standard_normal((8, 8)) for _ in range(3))
        np.testing.assert_allclose(nn.matmul(nn.matmul(a, b), c), nn.matmul(a, nn.matmul(b, c)),
                                   atol=1e-9)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            nn.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(nn.softmax_rows([[0.0, 0.0, 0.0]]), [[1 / 3] * 3], atol=1e-15)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-100, 100))
    def test_shift_invariance_and_rows(self, row, c):
        x = np.array([row])
        a = nn.softmax_rows(x)
        np.testing.assert_allclose(a, nn.softmax_rows(x + c), atol=1e-12)
        assert abs(a.sum() - 1) <= 1e-9 and np.all(a >= 0)

    def test_stability(self):
        out = nn.softmax_rows([[1000.0, 0.0]])
        assert out[0, 0] == 1.0 and out[0, 1] < 1e-300
        assert np.all(np.isfinite(out))

    def test_rank(self):
        with pytest.raises(ValueError):
            nn.softmax_rows(np.zeros(3))


class TestLayerNorm:
    def test_constant_row(self):
        out = nn.layernorm(np.full((2, 6), 3.5), np.ones(6), np.zeros(6))
        np.testing.assert_array_equal(out, np.zeros((2, 6)))

    def test_moments(self, rng):
        x = rng.standard_normal((50, 16)) * 3 + 2
        out = nn.layernorm(x, np.ones(16), np.zeros(16))
        assert np.max(np.abs(out.mean(axis=1))) <= 1e-9
        assert np.max(np.abs(out.var(axis=1) - 1)) <= 1e-6

    def test_zero_scale_gives_bias(self, rng):
        bias = rng.standard_normal(5)
        out = nn.layernorm(rng.standard_normal((3, 5)), np.zeros(5), bias)
        np.testing.assert_array_equal(out, np.broadcast_to(bias, (3, 5)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.layernorm(np.zeros((2, 4)), np.ones(3), np.zeros(3))


class TestPooling:
    def test_constant(self):
        out = nn.avgpool2d(np.full((4, 6, 2), 7.0), 2)
        assert out.shape == (2, 3, 2)
        np.testing.assert_array_equal(out, 7.0)

    def test_block_mean(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        assert nn.avgpool2d(x, 2)[0, 0, 0] == 2.5

    def test_global_mean(self, rng):
        x = rng.standard_normal((8, 8, 3))
        assert abs(nn.avgpool2d(x, 4).mean() - x.mean()) <= 1e-12

    def test_not_divisible(self):
        with pytest.raises(ValueError):
            nn.avgpool2d(np.zeros((5, 4, 1)), 2)


class TestWindows:
    def test_roundtrip(self, rng):
        x = rng.standard_normal((8, 8, 4))
        np.testing.assert_array_equal(nn.window_merge(nn.window_partition(x, 2), 8, 8), x)

    def test_counting(self):
        w = nn.window_partition(np.zeros((4, 4, 3)), 2)
        assert w.shape == (4, 4, 3)

    def test_window_contents(self):
        x = np.arange(16.0).reshape(4, 4, 1)
        w = nn.window_partition(x, 2)
        np.testing.assert_array_equal(w[1, :, 0], [2, 3, 6, 7])

    def test_permuting_windows_permutes_blocks(self, rng):
        x = rng.standard_normal((4, 4, 2))
        w = nn.window_partition(x, 2)
        merged = nn.window_merge(w[[3, 1, 2, 0]], 4, 4)
        np.testing.assert_array_equal(merged[:2, :2], x[2:, 2:])
        np.testing.assert_array_equal(merged[2:, 2:], x[:2, :2])
        np.testing.assert_array_equal(merged[:2, 2:], x[:2, 2:])

    def test_not_divisible(self):
        with pytest.raises(ValueError):
            nn.window_partition(np.zeros((6, 4, 1)), 4)

    @settings(max_examples=100)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3),
           st.integers(0, 2 ** 32 - 1))
    def test_roundtrip_property(self, nh, nw, win, d, seed):
        x = np.random.default_rng(seed).standard_normal((nh * win, nw * win, d))
        np.testing.assert_array_equal(
            nn.window_merge(nn.window_partition(x, win), nh * win, nw * win), x)


class TestInit:
    LAYOUT = {
        "a.w": ParamSpec((256, 256), 256),
        "a.b": ParamSpec((256,), 256),
        "n.scale": ParamSpec((4,), init="ones"),
        "n.bias": ParamSpec((4,), init="zeros"),
        "empty.w": ParamSpec((0, 3), 0),
    }

    def test_same_seed(self):
        assert nn.init_weights(self.LAYOUT, 3).equals(nn.init_weights(self.LAYOUT, 3))

    def test_different_seed(self):
        assert not nn.init_weights(self.LAYOUT, 3).equals(nn.init_weights(self.LAYOUT, 4))

    def test_moments_and_bounds(self):
        w = nn.init_weights(self.LAYOUT, 0)["a.w"]
        lim = 1 / 16
        assert np.all(np.abs(w) <= lim)
        sd = lim / np.sqrt(3)
        assert abs(w.mean()) <= 4 * sd / np.sqrt(w.size)

    def test_fixed_inits(self):
        ws = nn.init_weights(self.LAYOUT, 0)
        np.testing.assert_array_equal(ws["n.scale"], 1.0)
        np.testing.assert_array_equal(ws["n.bias"], 0.0)
        assert ws["empty.w"].shape == (0, 3)


class TestTensorFile:
    def test_layout(self):
        buf = tensor_to_bytes(np.array([[1.0, 2.0, 3.0]]))
        assert buf[:8] == b"SHLT\x00\x00\x00\x01" == TENSOR_MAGIC
        assert buf[8:20] == b"\x02\x00\x00\x00\x01\x00\x00\x00\x03\x00\x00\x00"
        assert buf[20:] == np.array([1, 2, 3], dtype="<f4").tobytes()

    def test_roundtrip_upcasts(self, rng, tmp_path):
        x = rng.standard_normal((4, 5, 3))
        save_tensor(tmp_path / "t.shlt", x)
        y = load_tensor(tmp_path / "t.shlt")
        assert y.dtype == np.float64 and y.shape == x.shape
        np.testing.assert_array_equal(y, x.astype(np.float32).astype(np.float64))

    @pytest.mark.parametrize("buf", [
        b"", b"SHLX\x00\x00\x00\x01\x00\x00\x00\x00",
        TENSOR_MAGIC + b"\x01\x00\x00\x00\x02\x00\x00\x00\x00\x00\x80\x3f",
        TENSOR_MAGIC + b"\x03\x00\x00\x00",
    ])
    def test_malformed(self, buf):
        with pytest.raises(TensorFormatError):
            tensor_from_bytes(buf)

    def test_weight_directory(self, tmp_path):
        ws = nn.init_weights(TestInit.LAYOUT, 9)
        save_weights(tmp_path / "w", ws)
        back = load_weights(tmp_path / "w")
        assert back.names == ws.names and back.init_seed == 9
        for n in ws.names:
            np.testing.assert_array_equal(back[n], ws[n].astype(np.float32))
