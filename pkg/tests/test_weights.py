import numpy as np
import pytest

from goalstack.errors import ConfigError
from goalstack.weights import load_weights, save_weights


class TestWeightsFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        tensors = {
            "mlp.w0": rng.standard_normal((4, 8)).astype(np.float32),
            "mlp.b0": rng.standard_normal(8).astype(np.float32),
            "attn.wq": rng.standard_normal((8, 8)).astype(np.float32),
        }
        path = tmp_path / "weights.bin"
        save_weights(path, tensors)
        loaded = load_weights(path)
        assert set(loaded) == set(tensors)
        for name in tensors:
            np.testing.assert_array_equal(loaded[name], tensors[name].astype(np.float64))

    def test_manifest_written(self, tmp_path):
        import json

        path = tmp_path / "weights.bin"
        save_weights(path, {"a": np.zeros((2, 3))})
        manifest = json.loads((tmp_path / "weights.json").read_text())
        assert manifest["tensors"] == {"a": [2, 3]}
        assert manifest["version"] == 1

    def test_shape_validation(self, tmp_path):
        path = tmp_path / "weights.bin"
        save_weights(path, {"a": np.zeros((2, 3))})
        load_weights(path, expected_shapes={"a": (2, 3)})
        with pytest.raises(ConfigError):
            load_weights(path, expected_shapes={"a": (3, 2)})
        with pytest.raises(ConfigError):
            load_weights(path, expected_shapes={"missing": (1,)})

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ConfigError):
            load_weights(path)

    def test_f32_quantization_on_save(self, tmp_path):
        path = tmp_path / "weights.bin"
        value = np.array([[1.0 + 1e-12]])  # f64 precision beyond f32 is dropped
        save_weights(path, {"x": value})
        loaded = load_weights(path)["x"]
        assert loaded.dtype == np.float64
        assert loaded[0, 0] == np.float32(value[0, 0])

    def test_module_params_roundtrip_with_config_validation(self, tmp_path):
        from goalstack.kernels import AttentionParams, MlpParams
        from goalstack.weights import attention_expected_shapes, attention_tensors, mlp_expected_shapes, mlp_tensors

        rng = np.random.default_rng(3)
        mlp = MlpParams.seeded([8, 16, 8], rng)
        attn = AttentionParams.seeded(8, 2, rng)
        path = tmp_path / "module.bin"
        save_weights(path, {**mlp_tensors(mlp, "head.mlp"), **attention_tensors(attn, "head.attn")})
        expected = {**mlp_expected_shapes([8, 16, 8], "head.mlp"), **attention_expected_shapes(8, "head.attn")}
        loaded = load_weights(path, expected_shapes=expected)
        np.testing.assert_allclose(loaded["head.mlp.w0"], mlp.weights[0], atol=1e-7)
        np.testing.assert_allclose(loaded["head.attn.wq"], attn.wq, atol=1e-7)
        # a config with a different width must reject the file
        with pytest.raises(ConfigError):
            load_weights(path, expected_shapes=mlp_expected_shapes([8, 32, 8], "head.mlp"))

    def test_little_endian_layout(self, tmp_path):
        path = tmp_path / "weights.bin"
        save_weights(path, {"t": np.array([1.0], dtype=np.float32)})
        raw = path.read_bytes()
        assert raw[:4] == b"GSTW"
        # version 1, count 1, name_len 1, name 't', ndim 1, dim 1, payload 1.0f
        assert raw[4:8] == (1).to_bytes(4, "little")
        assert raw[8:12] == (1).to_bytes(4, "little")
        assert raw[12:14] == (1).to_bytes(2, "little")
        assert raw[14:15] == b"t"
        assert raw[15] == 1
        assert raw[16:20] == (1).to_bytes(4, "little")
        assert np.frombuffer(raw[20:24], dtype="<f4")[0] == 1.0
