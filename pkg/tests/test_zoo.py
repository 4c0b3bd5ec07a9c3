import struct
import zlib

import numpy as np
import pytest

from insidebias.errors import (
    ArchMismatchError, ChecksumError, ConfigurationError, TruncatedFileError, VersionError, WeightFileError,
)
from insidebias.tensor_core import forward
from insidebias.zoo import build_resnet, build_vgg, load_weights, save_weights
from insidebias.zoo.weights import MAGIC, encode_weights


def test_vgg_structure():
    m = build_vgg((28, 28, 3), 10)
    convs = [layer for layer in m.layers if layer.kind == "conv"]
    assert len(convs) == 8
    assert m.probe_points == [f"conv{i}" for i in range(1, 9)]
    assert [layer.kind for layer in m.layers].count("dense") == 2
    assert [layer.kind for layer in m.layers].count("pool") == 4
    assert [layer.kind for layer in m.layers].count("dropout") == 1


def test_param_count_bounds():
    vgg = build_vgg((120, 120, 3), 2)
    res = build_resnet((120, 120, 3), 2)
    assert vgg.param_count > 660_000
    assert res.param_count > 370_000
    assert vgg.param_count == sum(t.size for _, t in vgg.parameters())
    assert (vgg.param_count, res.param_count) == (4_384_290, 377_458)


def test_resnet_probe_points_and_shapes():
    m = build_resnet((120, 120, 3), 2)
    assert m.probe_points == [
        "block1.conv_a", "block1.conv_b", "block1",
        "block2.conv_a", "block2.conv_b", "block2",
        "block3.conv_a", "block3.conv_b", "block3",
    ]
    _, trace = forward(m, np.zeros((120, 120, 3), np.float32), capture=True)
    # 120 -> 60 -> 30 -> 15, hand computed from stride-2 3x3 convs with padding 1
    assert trace["block1"].shape == (1, 60, 60, 48)
    assert trace["block2"].shape == (1, 30, 30, 64)
    assert trace["block3"].shape == (1, 15, 15, 128)


def test_shortcut_toggle_on_zero_model():
    outs = []
    for use in (True, False):
        m = build_resnet((32, 32, 3), 2, use_shortcut=use)
        for _, t in m.parameters():
            t.data[...] = 0
        outs.append(forward(m, np.random.default_rng(0).random((32, 32, 3)))[0])
    assert np.all(outs[0] == 0) and np.all(outs[1] == 0)


def test_same_seed_same_init():
    a, b = build_vgg(seed=3), build_vgg(seed=3)
    for (na, ta), (nb, tb) in zip(a.parameters(), b.parameters()):
        assert na == nb and ta.data.tobytes() == tb.data.tobytes()
    c = build_vgg(seed=4)
    assert c.parameters()[0][1].data.tobytes() != a.parameters()[0][1].data.tobytes()


@pytest.mark.parametrize("shape, classes", [((20, 20, 3), 2), ((28, 28, 1), 10), ((64, 64, 3), 5)])
def test_unsupported_shapes(shape, classes):
    with pytest.raises(ConfigurationError):
        build_vgg(shape, classes)


def test_round_trip_bit_exact(tmp_path):
    m = build_resnet((32, 32, 3), 2, seed=9)
    path = tmp_path / "w.bin"
    save_weights(m, path)
    back = load_weights(path)
    assert back.arch_id == "resnet_small"
    for (n1, t1), (n2, t2) in zip(m.parameters(), back.parameters()):
        assert n1 == n2 and t1.data.tobytes() == t2.data.tobytes()
    x = np.random.default_rng(0).random((3, 32, 32, 3)).astype(np.float32)
    assert forward(m, x)[0].tobytes() == forward(back, x)[0].tobytes()
    assert encode_weights(back) == path.read_bytes()


def test_byte_flip_names_tensor(tmp_path):
    m = build_vgg(seed=1)
    path = tmp_path / "w.bin"
    save_weights(m, path)
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0xFF  # inside the last tensor (fc2.bias)
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError) as info:
        load_weights(path)
    assert info.value.tensor == "fc2.bias"
    assert "fc2.bias" in str(info.value)


def test_header_flip_and_version_and_truncation(tmp_path):
    m = build_vgg(seed=1)
    raw = encode_weights(m)
    bad = bytearray(raw)
    bad[20] ^= 0x01  # inside the JSON config
    (tmp_path / "h.bin").write_bytes(bytes(bad))
    with pytest.raises(ChecksumError):
        load_weights(tmp_path / "h.bin")

    v2 = bytearray(raw)
    v2[len(MAGIC):len(MAGIC) + 4] = struct.pack("<I", 2)
    (tmp_path / "v.bin").write_bytes(bytes(v2))
    with pytest.raises(VersionError):
        load_weights(tmp_path / "v.bin")

    (tmp_path / "t.bin").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncatedFileError):
        load_weights(tmp_path / "t.bin")
    (tmp_path / "t2.bin").write_bytes(raw[:30])
    with pytest.raises(TruncatedFileError):
        load_weights(tmp_path / "t2.bin")

    (tmp_path / "m.bin").write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "m.bin")


def test_arch_mismatch(tmp_path):
    path = tmp_path / "w.bin"
    save_weights(build_vgg(), path)
    with pytest.raises(ArchMismatchError):
        load_weights(path, expect_arch="resnet_small")
    assert load_weights(path, expect_arch="vgg_small").arch_id == "vgg_small"


def test_header_crc_covers_table():
    raw = encode_weights(build_vgg())
    # the header CRC sits right before the data section and covers everything before it
    m = build_vgg()
    data_len = sum(t.data.nbytes for _, t in m.parameters())
    header_end = len(raw) - data_len - 4
    (crc,) = struct.unpack_from("<I", raw, header_end)
    assert crc == zlib.crc32(raw[:header_end])
