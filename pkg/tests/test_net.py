"""SR network: conv kernels, forward/backward, init, checkpoints."""

import numpy as np
import pytest

from voxsr import (
    ConfigError,
    FormatError,
    Grid3,
    NetConfig,
    NonFiniteError,
    StateError,
    Volume3,
    backward,
    conv3,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    upsample,
)
from voxsr.net import conv3_backward, param_shapes

from conftest import rand_array, rand_volume


def conv3_oracle(x, w, b):
    """Brute-force 7-loop cross-correlation with zero padding 1."""
    c_out, c_in, _, _, _ = w.shape
    _, d, h, ww = x.shape
    out = np.zeros((c_out, d, h, ww), dtype=np.float64)
    xp = np.pad(x.astype(np.float64), ((0, 0), (1, 1), (1, 1), (1, 1)))
    for o in range(c_out):
        for c in range(c_in):
            for dz in range(3):
                for dy in range(3):
                    for dx in range(3):
                        out[o] += w[o, c, dz, dy, dx] * xp[c, dz:dz + d, dy:dy + h, dx:dx + ww]
        out[o] += b[o]
    return out


class TestNetConfig:
    @pytest.mark.parametrize("factor", [1.0, 1.25, 1.5, 1.75, 2.0])
    def test_supported_factors(self, factor):
        assert NetConfig(factor=factor).factor == factor

    @pytest.mark.parametrize("factor", [0.9, 2.5, float("nan")])
    def test_factor_bounds(self, factor):
        with pytest.raises(ConfigError):
            NetConfig(factor=factor)

    def test_kernel_is_fixed(self):
        with pytest.raises(ConfigError):
            NetConfig(factor=2.0, kernel=5)

    def test_dense_wiring_shapes(self):
        cfg = NetConfig(factor=2.0, layers=3, channels=8)
        shapes = param_shapes(cfg)
        assert shapes["stem.w"] == (8, 1, 3, 3, 3)
        # layer i consumes the stem plus all previous layer outputs
        assert shapes["dense0.w"] == (8, 8, 3, 3, 3)
        assert shapes["dense1.w"] == (8, 16, 3, 3, 3)
        assert shapes["dense2.w"] == (8, 24, 3, 3, 3)
        assert shapes["proj.w"] == (1, 32, 3, 3, 3)
        assert shapes["proj.b"] == (1,)


class TestConv3:
    def test_delta_kernel_is_identity(self):
        x = rand_array((2, 5, 5, 5), seed=1).astype(np.float64)
        w = np.zeros((2, 2, 3, 3, 3))
        w[0, 0, 1, 1, 1] = 1.0
        w[1, 1, 1, 1, 1] = 1.0
        out = conv3(x, w, np.zeros(2))
        np.testing.assert_array_equal(out, x)

    def test_ones_kernel_counts_neighbours(self):
        x = np.ones((1, 5, 5, 5))
        out = conv3(x, np.ones((1, 1, 3, 3, 3)), np.zeros(1))
        assert out[0, 2, 2, 2] == 27.0   # full interior neighbourhood
        assert out[0, 0, 0, 0] == 8.0    # corner sees a 2x2x2 block

    def test_matches_naive_oracle(self):
        g = np.random.default_rng(0)
        for trial in range(8):
            x = g.normal(size=(2, 6, 6, 6))
            w = g.normal(size=(3, 2, 3, 3, 3))
            b = g.normal(size=(3,))
            np.testing.assert_allclose(conv3(x, w, b), conv3_oracle(x, w, b), atol=1e-5)

    def test_backward_matches_finite_differences(self):
        g = np.random.default_rng(1)
        x = g.normal(size=(2, 4, 4, 4))
        w = g.normal(size=(2, 2, 3, 3, 3)) * 0.3
        b = g.normal(size=(2,)) * 0.1
        d_out = g.normal(size=(2, 4, 4, 4))
        d_x, d_w, d_b = conv3_backward(d_out, x, w)
        h = 1e-6

        def scalar(xx, ww, bb):
            return float(np.sum(conv3(xx, ww, bb) * d_out))

        for arr, grad, name in ((x, d_x, "x"), (w, d_w, "w"), (b, d_b, "b")):
            flat = arr.reshape(-1)
            for pos in (0, flat.size // 2, flat.size - 1):
                up, dn = arr.copy().reshape(-1), arr.copy().reshape(-1)
                up[pos] += h
                dn[pos] -= h
                fd = (scalar(*(up.reshape(arr.shape) if n == name else a for a, n in ((x, "x"), (w, "w"), (b, "b"))))
                      - scalar(*(dn.reshape(arr.shape) if n == name else a for a, n in ((x, "x"), (w, "w"), (b, "b"))))) / (2 * h)
                assert fd == pytest.approx(grad.reshape(-1)[pos], rel=1e-4, abs=1e-7)


class TestForward:
    def test_zero_init_equals_trilinear_bitwise(self):
        cfg = NetConfig(factor=2.0, layers=2, channels=4)
        params = init_params(cfg, seed=3)
        v = rand_volume(8, seed=4, spacing=3.0)
        out = forward(v, params, cfg)
        ref = upsample(v, 2.0, "trilinear")
        assert out.grid == ref.grid
        assert np.array_equal(out.data, ref.data)

    @pytest.mark.parametrize("factor", [1.25, 1.5, 1.75, 2.0])
    def test_output_dims_follow_shape_rule(self, factor):
        cfg = NetConfig(factor=factor, layers=1, channels=2)
        params = init_params(cfg, seed=5)
        v = rand_volume(11, seed=6)
        out = forward(v, params, cfg)
        expected = tuple(int(np.floor(11 * factor + 0.5)) for _ in range(3))
        assert out.grid.counts == expected

    def test_deterministic(self):
        cfg = NetConfig(factor=1.5, layers=2, channels=4)
        params = init_params(cfg, seed=7)
        # give the projection layer real weights so the net is nontrivial
        params["proj.w"] = rand_array(params["proj.w"].shape, seed=8, lo=-0.1, hi=0.1)
        v = rand_volume(8, seed=9)
        a = forward(v, params, cfg)
        b = forward(v, params, cfg)
        assert np.array_equal(a.data, b.data)

    def test_wrong_param_shapes_rejected(self):
        cfg = NetConfig(factor=2.0, layers=2, channels=4)
        params = init_params(cfg, seed=1)
        params["stem.w"] = params["stem.w"][:, :, :, :, :2]
        with pytest.raises(ConfigError):
            forward(rand_volume(8), params, cfg)

    def test_nonfinite_params_rejected(self):
        cfg = NetConfig(factor=2.0, layers=2, channels=4)
        params = init_params(cfg, seed=1)
        bad = params["stem.w"].copy()
        bad[0, 0, 0, 0, 0] = np.nan
        params["stem.w"] = bad
        with pytest.raises(NonFiniteError):
            forward(rand_volume(8), params, cfg)


class TestBackward:
    def _tiny(self, seed=11):
        cfg = NetConfig(factor=1.5, layers=2, channels=4)
        params = {k: v.astype(np.float64) for k, v in init_params(cfg, seed).items()}
        g = np.random.default_rng(seed)
        params["proj.w"] = g.normal(size=params["proj.w"].shape) * 0.05
        params["proj.b"] = g.normal(size=params["proj.b"].shape) * 0.05
        x = g.normal(size=(6, 6, 6)) + 2.0
        return cfg, params, x

    def test_zero_cotangent_gives_zero_grads(self):
        cfg, params, x = self._tiny()
        _, tape = forward(x, params, cfg, want_tape=True)
        d_params, d_x = backward(tape, np.zeros((9, 9, 9)))
        assert all(np.all(v == 0.0) for v in d_params.values())
        assert np.all(d_x == 0.0)

    def test_param_gradients_match_finite_differences(self):
        # h = 1e-5 keeps every probe inside one linear region of the ReLU
        # net (the activation pattern has dead units, so larger steps can
        # straddle a kink and corrupt the central-difference estimate)
        cfg, params, x = self._tiny()
        d_out = np.random.default_rng(2).normal(size=(9, 9, 9))

        def scalar(p):
            return float(np.sum(forward(x, p, cfg) * d_out))

        _, tape = forward(x, params, cfg, want_tape=True)
        d_params, d_x = backward(tape, d_out)
        h = 1e-5
        worst = 0.0
        for name, arr in params.items():
            for pos in (0, arr.size // 3, arr.size - 1):
                up = {k: v.copy() for k, v in params.items()}
                dn = {k: v.copy() for k, v in params.items()}
                up[name].reshape(-1)[pos] += h
                dn[name].reshape(-1)[pos] -= h
                fd = (scalar(up) - scalar(dn)) / (2 * h)
                an = d_params[name].reshape(-1)[pos]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        assert worst < 1e-3

    def test_input_gradient_matches_finite_differences(self):
        cfg, params, x = self._tiny(seed=12)
        d_out = np.random.default_rng(3).normal(size=(9, 9, 9))
        _, tape = forward(x, params, cfg, want_tape=True)
        _, d_x = backward(tape, d_out)
        h = 1e-4
        for idx in [(0, 0, 0), (3, 2, 4), (5, 5, 5)]:
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            fd = (float(np.sum(forward(xp, params, cfg) * d_out))
                  - float(np.sum(forward(xm, params, cfg) * d_out))) / (2 * h)
            assert fd == pytest.approx(d_x[idx], rel=1e-3, abs=1e-8)

    def test_tape_single_use(self):
        cfg, params, x = self._tiny()
        _, tape = forward(x, params, cfg, want_tape=True)
        backward(tape, np.zeros((9, 9, 9)))
        with pytest.raises(StateError):
            backward(tape, np.zeros((9, 9, 9)))

    def test_relu_blocks_negative_preactivations(self):
        # one layer, bias pushed far negative: every hidden unit is dead, so
        # no gradient reaches the stem weights
        cfg = NetConfig(factor=1.5, layers=1, channels=2)
        params = {k: v.astype(np.float64) for k, v in init_params(cfg, 13).items()}
        params["stem.b"] = np.full(2, -1e6)
        params["proj.w"] = np.full_like(params["proj.w"], 0.1)
        x = np.abs(np.random.default_rng(4).normal(size=(6, 6, 6))) + 1.0
        _, tape = forward(x, params, cfg, want_tape=True)
        d_params, _ = backward(tape, np.ones((9, 9, 9)))
        assert np.all(d_params["stem.w"] == 0.0)
        assert np.all(d_params["stem.b"] == 0.0)


class TestInit:
    def test_projection_starts_at_zero(self):
        cfg = NetConfig(factor=2.0, layers=3, channels=8)
        params = init_params(cfg, seed=21)
        assert np.all(params["proj.w"] == 0.0)
        assert np.all(params["proj.b"] == 0.0)

    def test_hidden_variance_tracks_fan_in(self):
        cfg = NetConfig(factor=2.0, layers=4, channels=16)
        params = init_params(cfg, seed=22)
        for name in ("stem.w", "dense2.w"):
            w = params[name]
            fan_in = w.shape[1] * 27
            var = float(w.astype(np.float64).var())
            assert abs(var - 2.0 / fan_in) / (2.0 / fan_in) < 0.10
        assert params["dense2.w"].size >= 10_000

    def test_biases_start_at_zero(self):
        params = init_params(NetConfig(factor=2.0, layers=2, channels=4), seed=23)
        for name, arr in params.items():
            if name.endswith(".b"):
                assert np.all(arr == 0.0)

    def test_same_seed_bitwise(self):
        cfg = NetConfig(factor=1.5, layers=2, channels=6)
        a = init_params(cfg, seed=24)
        b = init_params(cfg, seed=24)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = init_params(cfg, seed=25)
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_float32_parameters(self):
        params = init_params(NetConfig(factor=2.0, layers=1, channels=2), seed=26)
        assert all(v.dtype == np.float32 for v in params.values())


class TestCheckpoint:
    def _roundtrip_setup(self, tmp_path):
        cfg = NetConfig(factor=1.75, layers=2, channels=4, global_residual=False)
        params = init_params(cfg, seed=31)
        params["proj.w"] = rand_array(params["proj.w"].shape, seed=32, lo=-1, hi=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg, meta={"alpha": 0.01, "seed": 31})
        return cfg, params, path

    def test_roundtrip_bitwise(self, tmp_path):
        cfg, params, path = self._roundtrip_setup(tmp_path)
        got_params, got_cfg, meta = load_checkpoint(path)
        assert got_cfg == cfg
        assert set(got_params) == set(params)
        assert all(np.array_equal(got_params[k], params[k]) for k in params)
        assert meta["alpha"] == 0.01

    def test_sidecar_json_written(self, tmp_path):
        _, _, path = self._roundtrip_setup(tmp_path)
        sidecar = path.with_name(path.name + ".json")
        assert sidecar.exists()
        assert '"factor": 1.75' in sidecar.read_text()

    def test_bad_magic(self, tmp_path):
        _, _, path = self._roundtrip_setup(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        _, _, path = self._roundtrip_setup(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[9:13] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        _, _, path = self._roundtrip_setup(tmp_path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_loaded_params_run_forward(self, tmp_path):
        cfg, params, path = self._roundtrip_setup(tmp_path)
        got_params, got_cfg, _ = load_checkpoint(path)
        v = rand_volume(8, seed=33)
        a = forward(v, params, cfg)
        b = forward(v, got_params, got_cfg)
        assert np.array_equal(a.data, b.data)
