import numpy as np
import pytest

from sttr import tensor as T
from sttr.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from sttr.errors import CheckpointError
from sttr.networks import NetworkConfig, build_stream
from sttr.tensor import Tensor

TOPO = {"V": 5, "edges": [[0, 1], [1, 2], [1, 3], [3, 4]], "center": 1}


def model(kind="S-TR", seed=0, channels=(8, 8)):
    return build_stream(NetworkConfig(channels=channels, num_classes=3, topology=TOPO, feature_layers=1,
                                      heads=2, kernel_size=3, seed=seed), kind)


def test_roundtrip_forward_bit_exact(tmp_path, rng):
    a = model(seed=1)
    x = Tensor(rng.normal(size=(4, 3, 6, 5)).astype(np.float32))
    a(x)  # one training forward so the BN running stats move
    a.eval()
    want = a(x).data
    save_checkpoint(a, tmp_path / "m.ckpt")
    b = model(seed=2).eval()
    load_checkpoint(b, tmp_path / "m.ckpt")
    assert np.array_equal(b(x).data, want)
    for (n1, v1), (n2, v2) in zip(a.state_dict().items(), b.state_dict().items()):
        assert n1 == n2 and np.array_equal(v1, v2)


def test_header(tmp_path):
    save_checkpoint(model(), tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"STTR" and int.from_bytes(raw[4:8], "little") == 1


def test_truncated_file_loads_nothing(tmp_path):
    a = model(seed=1)
    save_checkpoint(a, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(raw[:-10])
    b = model(seed=2)
    before = {k: v.copy() for k, v in b.state_dict().items()}
    with pytest.raises(CheckpointError):
        load_checkpoint(b, tmp_path / "m.ckpt")
    assert all(np.array_equal(before[k], v) for k, v in b.state_dict().items())


def test_bad_version(tmp_path):
    save_checkpoint(model(), tmp_path / "m.ckpt")
    raw = bytearray((tmp_path / "m.ckpt").read_bytes())
    raw[4:8] = (7).to_bytes(4, "little")
    (tmp_path / "m.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(tmp_path / "m.ckpt")


def test_shape_mismatch_names_layer(tmp_path):
    save_checkpoint(model(channels=(8, 8)), tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError, match="layers"):
        load_checkpoint(model(channels=(8, 16)), tmp_path / "m.ckpt")


def test_architecture_mismatch(tmp_path):
    save_checkpoint(model("S-TR"), tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(model("T-TR"), tmp_path / "m.ckpt")


def test_float64_model_stores_float32(tmp_path):
    with T.default_dtype(np.float64):
        m = model()
    save_checkpoint(m, tmp_path / "m.ckpt")
    assert all(v.dtype == np.float32 for v in read_checkpoint(tmp_path / "m.ckpt").values())
