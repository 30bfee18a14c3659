import struct

import numpy as np
import pytest

from gcd.exceptions import FormatError
from gcd.fileio import (
    decode_binary,
    encode_binary,
    load_assignments,
    load_features,
    load_label_sidecar,
    save_assignments,
    save_features,
    save_label_sidecar,
)


@pytest.fixture
def matrix():
    rng = np.random.default_rng(0)
    return rng.standard_normal((7, 3)).astype(np.float32).astype(np.float64)


def test_header_layout(matrix):
    buf = encode_binary(matrix)
    assert buf[:4] == b"GCDF"
    assert struct.unpack_from("<HQI", buf, 4) == (1, 7, 3)
    assert len(buf) == 18 + 7 * 3 * 4 + 1


@pytest.mark.parametrize("with_labels", [False, True])
def test_binary_roundtrip_byte_identical(tmp_path, matrix, with_labels):
    labels = np.array([0, 1, -1, 2, -1, 0, 1]) if with_labels else None
    p = tmp_path / "f.gcdf"
    save_features(p, matrix, labels)
    X, lab = load_features(p)
    assert np.array_equal(X, matrix)
    if with_labels:
        assert lab.tolist() == labels.tolist()
    else:
        assert lab is None
    q = tmp_path / "g.gcdf"
    save_features(q, X, lab)
    assert p.read_bytes() == q.read_bytes()


def test_file_without_label_flag_accepted(matrix):
    buf = encode_binary(matrix)[:-1]
    X, lab = decode_binary(buf)
    assert lab is None and X.shape == (7, 3)


def test_truncated_payload():
    # header says 3 x 2 but only 5 floats follow
    buf = struct.pack("<4sHQI", b"GCDF", 1, 3, 2) + np.zeros(5, "<f4").tobytes()
    with pytest.raises(FormatError) as err:
        decode_binary(buf)
    assert err.value.kind == "truncated"
    assert err.value.offset == 18 + 20
    assert "offset 38" in str(err.value)


def test_bad_magic_and_version(matrix):
    buf = bytearray(encode_binary(matrix))
    bad = bytes(b"XXXX" + buf[4:])
    with pytest.raises(FormatError) as err:
        decode_binary(bad)
    assert err.value.kind == "bad-magic" and err.value.offset == 0
    buf[4:6] = struct.pack("<H", 2)
    with pytest.raises(FormatError) as err:
        decode_binary(bytes(buf))
    assert err.value.kind == "bad-version"


def test_truncated_header():
    with pytest.raises(FormatError) as err:
        decode_binary(b"GCDF\x01")
    assert err.value.kind == "truncated"


def test_non_finite_binary_value():
    data = np.array([1.0, np.inf, 3.0, 4.0], "<f4").tobytes()
    buf = struct.pack("<4sHQI", b"GCDF", 1, 2, 2) + data + b"\x00"
    with pytest.raises(FormatError) as err:
        decode_binary(buf)
    assert err.value.kind == "non-finite" and err.value.offset == 18 + 4


def test_truncated_label_block(matrix):
    buf = encode_binary(matrix, np.zeros(7, dtype=int))[:-3]
    with pytest.raises(FormatError) as err:
        decode_binary(buf)
    assert err.value.kind == "truncated"


def test_trailing_bytes_rejected(matrix):
    with pytest.raises(FormatError) as err:
        decode_binary(encode_binary(matrix) + b"junk")
    assert err.value.kind == "trailing"


def test_csv_roundtrip(tmp_path):
    X = np.random.default_rng(1).standard_normal((4, 2))
    labels = np.array([3, -1, 0, -1])
    p = tmp_path / "f.csv"
    save_features(p, X, labels)
    assert p.read_text().splitlines()[0] == "dim=2"
    Y, lab = load_features(p)
    assert np.array_equal(X, Y)
    assert lab.tolist() == labels.tolist()


def test_csv_nan_rejected(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("dim=2\n1.0,2.0\nnan,1.0\n")
    with pytest.raises(FormatError) as err:
        load_features(p)
    assert err.value.kind == "non-finite" and err.value.offset == 3
    assert "line 3" in str(err.value)


def test_csv_row_length_mismatch(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("dim=3\n1,2,3\n1,2,label=0\n")
    with pytest.raises(FormatError) as err:
        load_features(p)
    assert err.value.kind == "row-length" and err.value.offset == 3


def test_csv_missing_header(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("1,2\n")
    with pytest.raises(FormatError) as err:
        load_features(p)
    assert err.value.kind == "bad-header"


def test_label_sidecar_roundtrip(tmp_path):
    p = tmp_path / "l.csv"
    save_label_sidecar(p, [4, -1, 2], [True, False, True])
    assert p.read_text().splitlines() == ["index,label,is_labelled", "0,4,1", "1,-1,0", "2,2,1"]
    labels, mask = load_label_sidecar(p)
    assert labels.tolist() == [4, -1, 2] and mask.tolist() == [True, False, True]


def test_label_sidecar_errors(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("index,label,is_labelled\n0,1,1\n2,1,1\n")
    with pytest.raises(FormatError) as err:
        load_label_sidecar(p)
    assert err.value.offset == 3
    p.write_text("idx,lab\n")
    with pytest.raises(FormatError):
        load_label_sidecar(p)


def test_assignments_roundtrip(tmp_path):
    p = tmp_path / "a.csv"
    save_assignments(p, [2, 0, 1])
    idx, cl = load_assignments(p)
    assert idx.tolist() == [0, 1, 2] and cl.tolist() == [2, 0, 1]
