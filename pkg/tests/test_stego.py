import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exfil_lab.errors import ArgumentError, CapacityError, MalformedPayloadError
from exfil_lab.metrics import bit_error_rate
from exfil_lab.nn import init_network
from exfil_lab.stego import (
    QuantizerConfig,
    StegoPayload,
    capacity,
    dequantize,
    embed,
    extract,
    low_words,
    quantize,
)
from exfil_lab.weights_io import ArchiveEntry, WeightArchive, to_archive

Q = QuantizerConfig()


def archive_of(values):
    return WeightArchive([ArchiveEntry("w", (len(values),), np.asarray(values, dtype=np.float32))])


class TestQuantizer:
    @pytest.mark.parametrize("v, code", [(-0.5, 10000), (0.0, 20000), (2.27675, 65535), (-1.0, 0)])
    def test_codes(self, v, code):
        assert int(quantize(v)) == code

    def test_clamp_counted(self):
        codes, clamped = quantize([2.5, 0.0, -3.0], return_clamped=True)
        assert codes.tolist() == [65535, 20000, 0] and clamped == 2

    def test_half_rounds_away_from_zero(self):
        assert int(quantize(0.5 / 20000 - 1.0)) == 1  # raw 0.5
        assert int(quantize(2.5 / 20000)) == 20003  # raw 20002.5

    @pytest.mark.parametrize("code, v", [(10000, -0.5), (20000, 0.0)])
    def test_dequantize(self, code, v):
        assert dequantize(code) == v

    def test_range_endpoints(self):
        assert Q.min_val == -1.0 and Q.max_val == pytest.approx(2.27675)

    def test_roundtrip_error_bound(self):
        v = np.linspace(Q.min_val, Q.max_val, 10_000)
        assert np.abs(dequantize(quantize(v)) - v).max() <= 2.5e-5

    def test_nonfinite(self):
        with pytest.raises(ArgumentError):
            quantize([np.nan])

    def test_bad_scale(self):
        with pytest.raises(ArgumentError):
            QuantizerConfig(scale=0.0)


class TestCapacity:
    @pytest.mark.parametrize("p, d, n", [(11_171_840, 512, 21_820), (7_481_344, 512, 14_612), (511, 512, 0)])
    def test_floor(self, p, d, n):
        assert capacity(p, d) == n

    def test_rejects_zero_dim(self):
        with pytest.raises(ArgumentError):
            capacity(10, 0)


class TestEmbed:
    def test_single_word(self):
        # first code word lands in parameter 2, after the two header words
        out = embed(archive_of([0.0, 0.0, 1.0]), StegoPayload(1, [0x2710]))
        assert out.flat_bits().tolist() == [1, 1, 0x3F802710]

    def test_zero_codes_into_zero_weights(self):
        arch = archive_of(np.zeros(10))
        out = embed(arch, StegoPayload(4, np.zeros(8)))
        bits = out.flat_bits()
        assert bits[0] == 2 and bits[1] == 4 and not bits[2:].any()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 6), st.integers(0, 2**31))
    def test_roundtrip(self, dim, n, seed):
        r = np.random.default_rng(seed)
        arch = archive_of(r.standard_normal(64))
        payload = StegoPayload(dim, r.integers(0, 65536, n * dim))
        got = extract(embed(arch, payload))
        assert got.latent_dim == dim and np.array_equal(got.codes, payload.codes)
        assert bit_error_rate(payload.codes, got.codes) == 0.0

    def test_upper_half_invariant_1e6(self):
        r = np.random.default_rng(7)
        arch = archive_of(r.standard_normal(1_000_000) * r.choice([1e-3, 1.0, 1e3], 1_000_000))
        payload = StegoPayload(1000, r.integers(0, 65536, 999_000))
        before, after = arch.flat_bits(), embed(arch, payload).flat_bits()
        assert np.array_equal(before >> 16, after >> 16)
        x, y = arch.flat_values(), embed(arch, payload).flat_values()
        normal = np.abs(x) >= np.finfo(np.float32).tiny
        assert (np.abs(y - x)[normal] / np.abs(x[normal])).max() < 2.0**-7

    def test_capacity_error_names_numbers(self):
        arch = archive_of(np.zeros(10))
        with pytest.raises(CapacityError, match="10") as info:
            embed(arch, StegoPayload(4, np.zeros(12)))
        assert "n=3" in str(info.value) and "D=4" in str(info.value)

    def test_embed_on_model_archive(self):
        arch = to_archive(init_network([16, 8, 4]))
        payload = StegoPayload(8, np.arange(80))
        assert np.array_equal(extract(embed(arch, payload)).codes, payload.codes)


class TestExtract:
    def test_never_embedded_returns_garbage_or_errors(self):
        arch = to_archive(init_network([64, 32, 8], seed=1))
        try:
            payload = extract(arch)
        except MalformedPayloadError:
            return
        assert payload.codes.size == payload.count * payload.latent_dim

    def test_single_bit_fault(self):
        arch = archive_of(np.ones(20))
        payload = StegoPayload(3, np.arange(18) * 1000)
        bits = embed(arch, payload).flat_bits()
        bits[5] ^= 1 << 4
        got = extract(arch.with_flat_bits(bits))
        diff = got.codes ^ payload.codes
        assert np.count_nonzero(diff) == 1 and diff[3] == 16
        assert bit_error_rate(payload.codes, got.codes) == 1 / (16 * 18)

    def test_header_overrun(self):
        bits = archive_of(np.zeros(5)).flat_bits()
        bits[0], bits[1] = 3, 2  # claims 6 codes + 2 header words > 5
        with pytest.raises(MalformedPayloadError):
            extract(archive_of(np.zeros(5)).with_flat_bits(bits))

    def test_too_small(self):
        with pytest.raises(MalformedPayloadError):
            extract(archive_of([1.0]))

    def test_low_words_bounds(self):
        with pytest.raises(MalformedPayloadError):
            low_words(archive_of(np.zeros(3)), 4)
