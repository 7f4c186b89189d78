import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dense
from exfil_lab.errors import ArgumentError, NumericError, ParseError
from exfil_lab.nn import Network, init_network
from exfil_lab.weights_io import (
    ArchiveEntry,
    WeightArchive,
    decode_archive,
    diff_archives,
    encode_archive,
    read_archive,
    to_archive,
    to_network,
    write_archive,
)


def one_value(bits):
    return WeightArchive([ArchiveEntry("w", (1,), np.array([bits], dtype=np.uint32).view(np.float32))])


def entry_bytes(name=b"w", dtype=0, dims=(1, 1), values=(1.0,)):
    return (
        struct.pack("<H", len(name)) + name + struct.pack("<BB", dtype, len(dims))
        + struct.pack(f"<{len(dims)}I", *dims) + struct.pack(f"<{len(values)}f", *values)
    )


def archive_bytes(*entries, version=1):
    return b"MWT1" + struct.pack("<II", version, len(entries)) + b"".join(entries)


class TestLayout:
    def test_empty_network_is_twelve_bytes(self, tmp_path):
        assert write_archive(Network([]), tmp_path / "e.mwt") == 12
        assert (tmp_path / "e.mwt").read_bytes() == b"MWT1" + bytes([1, 0, 0, 0, 0, 0, 0, 0])

    def test_one_layer_sizes(self):
        data = encode_archive(to_archive(Network([dense(np.ones((2, 2)))])))
        assert struct.unpack_from("<I", data, 8)[0] == 2
        weight_header = 2 + len("layer1.weight") + 2 + 4 * 2
        bias_header = 2 + len("layer1.bias") + 2 + 4 * 1
        assert len(data) == 12 + weight_header + bias_header + 4 * 4 + 2 * 4 == 80

    def test_hand_built_single_value(self):
        data = archive_bytes(entry_bytes())
        assert data[-4:] == bytes.fromhex("0000803f")
        arch = decode_archive(data)
        assert arch.names() == ["w"] and arch["w"].tolist() == [[1.0]]

    def test_entry_names_and_order(self):
        arch = to_archive(init_network([4, 3, 2]))
        assert arch.names() == ["layer1.weight", "layer1.bias", "layer2.weight", "layer2.bias"]


class TestRoundtrip:
    def test_bit_exact(self, tmp_path, rng):
        net = init_network([7, 5, 3], seed=2)
        write_archive(net, tmp_path / "m.mwt")
        back = to_network(read_archive(tmp_path / "m.mwt"))
        for p, q in zip(net.parameters(), back.parameters()):
            assert np.array_equal(p.astype(np.float32), q.astype(np.float32))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=0, max_size=5), st.integers(0, 2**31))
    def test_write_read_write_identical(self, shapes, seed):
        r = np.random.default_rng(seed)
        entries = [
            ArchiveEntry(f"t{i}", dims, r.standard_normal(int(np.prod(dims))).astype(np.float32))
            for i, dims in enumerate(shapes)
        ]
        data = encode_archive(WeightArchive(entries))
        assert encode_archive(decode_archive(data)) == data

    def test_refuses_nonfinite(self, tmp_path):
        with pytest.raises(NumericError):
            write_archive(Network([dense([[np.nan]])]), tmp_path / "x.mwt")
        with pytest.raises(NumericError):
            to_archive(Network([dense([[1e39]])]))


class TestCorruptFiles:
    def test_bad_magic(self):
        with pytest.raises(ParseError, match="offset 0"):
            decode_archive(b"MWT2" + bytes(8))

    def test_unsupported_version(self):
        with pytest.raises(ParseError, match="version 2"):
            decode_archive(b"MWT1" + struct.pack("<II", 2, 0))

    def test_truncated_header(self):
        with pytest.raises(ParseError):
            decode_archive(b"MWT1\x01")

    def test_truncated_mid_values(self):
        data = archive_bytes(entry_bytes(dims=(2,), values=(1.0, 2.0)))
        with pytest.raises(ParseError) as info:
            decode_archive(data[:-3])
        assert info.value.offset == len(data) - 8

    def test_unknown_dtype(self):
        with pytest.raises(ParseError, match="dtype"):
            decode_archive(archive_bytes(entry_bytes(dtype=7)))

    def test_dims_overflow(self):
        with pytest.raises(ParseError, match="overflow"):
            decode_archive(archive_bytes(entry_bytes(dims=(2**16, 2**16, 2), values=())))

    def test_duplicate_names(self):
        with pytest.raises(ParseError, match="duplicate"):
            decode_archive(archive_bytes(entry_bytes(), entry_bytes()))

    def test_trailing_bytes(self):
        with pytest.raises(ParseError, match="trailing"):
            decode_archive(archive_bytes(entry_bytes()) + b"\x00")

    def test_invalid_utf8_name(self):
        with pytest.raises(ParseError, match="UTF-8"):
            decode_archive(archive_bytes(entry_bytes(name=b"\xff\xfe")))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_archive(tmp_path / "nope.mwt")


class TestDiff:
    def test_identity(self):
        a = to_archive(init_network([3, 2]))
        assert diff_archives(a, a) == {"max_abs": 0.0, "mean_abs": 0.0, "changed_param_fraction": 0.0, "changed_bit_fraction": 0.0}

    def test_value_change(self):
        d = diff_archives(one_value(0x3F800000), one_value(0x40000000))
        assert d["changed_param_fraction"] == 1.0 and d["max_abs"] == 1.0

    def test_single_bit(self):
        d = diff_archives(one_value(0x3F800000), one_value(0x3F800100))
        assert d["changed_bit_fraction"] == 1 / 32

    def test_structure_mismatch(self):
        with pytest.raises(ArgumentError):
            diff_archives(to_archive(init_network([3, 2])), to_archive(init_network([3, 3])))
