import struct

import numpy as np
import pytest

from icenet import autodiff as ad
from icenet import model


class TestParamShapes:
    def test_exact_parameter_count(self):
        # conv: 2*9*32+32 + 3*(32*9*32+32) + 3*(64*9*32+32); fc: 1*32+32 + 32*32+32
        assert model.EXPECTED_PARAM_COUNT == 84_864
        assert model.init_params(0).count() == 84_864

    def test_rejects_wrong_shapes(self):
        tensors = model.init_params(0).tensors
        bad = dict(tensors)
        bad["conv1.weight"] = np.zeros((32, 3, 3, 3))
        with pytest.raises(ValueError, match="conv1.weight"):
            model.ModelParams(bad)

    def test_rejects_non_finite(self):
        tensors = model.init_params(0).tensors
        bad = {k: v.copy() for k, v in tensors.items()}
        bad["fc2.bias"][0] = np.inf
        with pytest.raises(ValueError, match="fc2.bias"):
            model.ModelParams(bad)


class TestInit:
    def test_deterministic_in_seed(self):
        assert model.init_params(42) == model.init_params(42)

    def test_different_seeds_differ(self):
        assert model.init_params(1) != model.init_params(2)

    def test_biases_zero(self):
        params = model.init_params(5)
        for name, arr in params.tensors.items():
            if name.endswith(".bias"):
                assert np.all(arr == 0.0)

    def test_weight_statistics(self):
        params = model.init_params(123)
        weights = np.concatenate(
            [v.ravel() for k, v in params.tensors.items() if k.endswith(".weight")]
        )
        n = weights.size
        assert n > 10_000
        assert abs(weights.mean()) < 3 * model.INIT_STD / np.sqrt(n)
        assert weights.std() == pytest.approx(model.INIT_STD, rel=0.05)


class TestForward:
    def test_zero_params_give_zero_features(self, rng):
        zeros = model.ModelParams(
            {k: np.zeros_like(v) for k, v in model.init_params(0).tensors.items()}
        )
        tensors = model.as_tensors(zeros)
        f = model.extract_features(tensors, rng.uniform(0, 1, (8, 8)), np.zeros((8, 8)))
        assert np.all(f.data == 0.0)

    def test_feature_shape(self, default_params, rng):
        tensors = model.as_tensors(default_params)
        f = model.extract_features(tensors, rng.uniform(0, 1, (16, 16)), np.zeros((16, 16)))
        assert f.shape == (32, 16, 16)

    def test_forward_deterministic(self, default_params, rng):
        luma = rng.uniform(0, 255, (12, 12))
        scribble = rng.integers(-1, 2, (12, 12)).astype(float)
        tensors = model.as_tensors(default_params)
        a = model.predict_gamma(tensors, luma, scribble, 0.4).data
        b = model.predict_gamma(tensors, luma, scribble, 0.4).data
        assert np.array_equal(a, b)

    def test_dim_mismatch(self, default_params):
        tensors = model.as_tensors(default_params)
        with pytest.raises(ValueError):
            model.extract_features(tensors, np.zeros((4, 4)), np.zeros((4, 5)))


class TestDrivingVector:
    def test_eta_range_enforced(self, default_params):
        tensors = model.as_tensors(default_params)
        for bad in (-0.1, 1.0001, 2.0):
            with pytest.raises(ValueError):
                model.driving_vector(tensors, bad)

    def test_zero_weights_leave_bias(self):
        params = model.init_params(0)
        tensors = params.tensors
        tensors = {k: np.zeros_like(v) for k, v in tensors.items()}
        tensors["fc2.bias"] = np.linspace(-1, 1, 32)
        wrapped = model.as_tensors(model.ModelParams(tensors))
        out = model.driving_vector(wrapped, 0.0)
        assert np.array_equal(out.data, np.linspace(-1, 1, 32))

    def test_same_eta_same_vector(self, default_params):
        tensors = model.as_tensors(default_params)
        a = model.driving_vector(tensors, 0.73).data
        b = model.driving_vector(tensors, 0.73).data
        assert np.array_equal(a, b)


class TestGammaMap:
    def test_zero_inner_product_gives_five(self):
        f = ad.Tensor(np.zeros((32, 3, 3)))
        w = ad.Tensor(np.zeros(32))
        gamma = model.gamma_from_features(f, w)
        assert np.all(gamma.data == 5.0)

    def test_logit_oracle(self):
        # <F, w> = ln(0.9 / 0.1) makes the sigmoid exactly 0.9
        f = np.zeros((32, 1, 1))
        f[0, 0, 0] = np.log(9.0)
        w = np.zeros(32)
        w[0] = 1.0
        gamma = model.gamma_from_features(ad.Tensor(f), ad.Tensor(w))
        assert gamma.data[0, 0] == pytest.approx(9.0, abs=1e-9)

    def test_channel_length_mismatch(self):
        with pytest.raises(ValueError):
            model.gamma_from_features(ad.Tensor(np.zeros((16, 2, 2))), ad.Tensor(np.zeros(32)))

    def test_range_strict_even_when_saturated(self, rng):
        from icenet.gradcheck import random_params

        for std in (0.02, 5.0, 50.0):
            params = random_params(rng, std, std)
            tensors = model.as_tensors(params)
            luma = rng.uniform(0, 255, (6, 6))
            scribble = rng.integers(-1, 2, (6, 6)).astype(float)
            gamma = model.predict_gamma(tensors, luma, scribble, 0.7).data
            assert np.all(gamma > 0.0)
            assert np.all(gamma < 10.0)

    def test_full_forward_gradients(self, rng):
        from icenet.gradcheck import random_params

        params = random_params(rng, 0.05, 0.1)
        luma = rng.uniform(0, 255, (8, 8))
        scribble = rng.integers(-1, 2, (8, 8)).astype(float)

        def compute():
            signs = []
            tensors = model.as_tensors(params, requires_grad=True)
            with ad.record_relu_signs(signs):
                gamma = model.predict_gamma(tensors, luma, scribble, 0.3)
                loss = ad.reduce_mean(ad.square(gamma))
            loss.backward()
            return (
                loss.item(),
                {k: t.grad if t.grad is not None else np.zeros_like(t.data)
                 for k, t in tensors.items()},
                b"".join(signs),
            )

        err = ad.finite_diff_check(
            compute, params.tensors, samples_per_param=3, rng=np.random.default_rng(0)
        )
        assert err < 1e-4


class TestCheckpoint:
    def test_roundtrip_bitwise_at_32_bit(self, tmp_path, default_params):
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(default_params, path)
        loaded = model.load_checkpoint(path)
        for name in default_params.tensors:
            assert np.array_equal(
                default_params.tensors[name].astype(np.float32),
                loaded.tensors[name].astype(np.float32),
            )

    def test_save_is_stable(self, tmp_path, default_params):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        model.save_checkpoint(default_params, a)
        model.save_checkpoint(model.load_checkpoint(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_names_expected(self, tmp_path, default_params):
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(default_params, path)
        blob = bytearray(path.read_bytes())
        blob[:8] = b"NOTMAGIC"
        path.write_bytes(bytes(blob))
        with pytest.raises(model.CheckpointError, match="ICENET01"):
            model.load_checkpoint(path)

    def test_truncated_file(self, tmp_path, default_params):
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(default_params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(model.CheckpointError, match="truncated"):
            model.load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path, default_params):
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(default_params, path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(model.CheckpointError, match="trailing"):
            model.load_checkpoint(path)

    def test_wrong_tensor_shape_is_named(self, tmp_path):
        # hand-written checkpoint with conv1 expecting 3 input channels
        path = tmp_path / "model.ckpt"
        shapes = dict(model.expected_shapes())
        shapes["conv1.weight"] = (32, 3, 3, 3)
        chunks = [model.CHECKPOINT_MAGIC, struct.pack("<I", len(shapes))]
        for name, shape in shapes.items():
            encoded = name.encode()
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<B", len(shape)))
            chunks.append(struct.pack(f"<{len(shape)}I", *shape))
            chunks.append(np.zeros(shape, dtype="<f4").tobytes())
        path.write_bytes(b"".join(chunks))
        with pytest.raises(model.CheckpointError, match="conv1.weight"):
            model.load_checkpoint(path)
