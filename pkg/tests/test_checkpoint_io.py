import numpy as np
import pytest

from core.deepset_net import DeepSetParams, MlpParams, init_mlp_params, init_params
from core.errors import DimensionMismatchError
from utils.checkpoint_io import HEADER, encode_params, load_params, save_params


def test_deepset_checkpoint_restores_parameters(tmp_path, rng) -> None:
    params = init_params(16, 8, 10.0, rng)
    params = params.with_alpha(params.alpha0 + 0.1 * rng.standard_normal(params.alpha.shape))
    path = save_params(tmp_path / "ckpt" / "actor.bin", params)
    restored = load_params(path)
    assert type(restored) is DeepSetParams
    np.testing.assert_array_equal(restored.u, params.u)
    np.testing.assert_array_equal(restored.alpha, params.alpha)
    np.testing.assert_array_equal(restored.alpha0, params.alpha0)
    assert restored.radius == 10.0
    assert path.stat().st_size == HEADER.size + 16 + 2 * 8 * 16 * 8


def test_mlp_checkpoint_keeps_its_kind(tmp_path, rng) -> None:
    restored = load_params(save_params(tmp_path / "critic.bin", init_mlp_params(6, 11, 2.0, rng)))
    assert isinstance(restored, MlpParams)
    assert restored.m == 6 and restored.d == 11


def test_truncated_checkpoint(tmp_path, rng) -> None:
    path = tmp_path / "short.bin"
    path.write_bytes(encode_params(init_params(4, 3, 1.0, rng))[:-8])
    with pytest.raises(DimensionMismatchError):
        load_params(path)


def test_unknown_magic(tmp_path, rng) -> None:
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + encode_params(init_params(4, 3, 1.0, rng))[4:])
    with pytest.raises(DimensionMismatchError):
        load_params(path)
