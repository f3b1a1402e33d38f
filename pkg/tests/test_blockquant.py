"""Tests for blockwise quantization, packing, and the binary file formats."""

import numpy as np
import pytest

import quantlab.blockquant as bq
import quantlab.codebook as qc
from quantlab.errors import DataError, DomainError, FormatError


@pytest.fixture(scope="module")
def codes():
    bins = qc.uniform_bins(64)
    lo, hi = qc.feasible_seed_interval(bins)
    return {
        "nf4": qc.nf4_code(),
        "af4": qc.af4_code(64),
        "balanced": qc.balanced_code(0.5 * (lo + hi), bins, block_size=64),
        "custom": qc.Code16(np.linspace(-1, 1, 16)),
    }


def brute_force_indices(normalized, values):
    """Exhaustive nearest-value scan; first minimal index wins ties."""
    dist = np.abs(np.asarray(normalized, dtype=np.float64)[..., None] - values)
    return dist.argmin(axis=-1)


class TestNearestIndex:
    def test_matches_exhaustive_oracle(self, codes):
        rng = np.random.default_rng(2024)
        for code in codes.values():
            x = rng.uniform(-1.02, 1.02, size=5000)
            got = bq.nearest_index(x, code.values)
            np.testing.assert_array_equal(got, brute_force_indices(x, code.values))

    def test_exact_midpoint_goes_low(self, codes):
        v = codes["custom"].values
        mids = 0.5 * (v[:-1] + v[1:])
        got = bq.nearest_index(mids, v)
        expected = brute_force_indices(mids, v)
        np.testing.assert_array_equal(got, expected)
        # np.argmin picks the first minimum, i.e. the lower index
        assert np.all(got == np.arange(15))


class TestQuantize:
    def test_lattice_tensor_recovers_exactly(self, codes):
        code = codes["nf4"]
        rng = np.random.default_rng(5)
        idx = rng.integers(0, 16, size=(8, 64))
        idx[:, 0] = 15  # force each block's absmax to the code point 1.0
        scale = 4.0  # power of two keeps the float32 lattice exact
        w = (code.values[idx].astype(np.float32) * np.float32(scale))
        qt = bq.quantize(w, code, 64, axis=1)
        np.testing.assert_array_equal(
            bq.unpack_nibbles(qt.packed, 64), idx.astype(np.uint8)
        )
        np.testing.assert_allclose(bq.dequantize(qt), w, atol=0)
        assert bq.reconstruction_error(w, bq.dequantize(qt)) == 0.0

    def test_zero_block(self, codes):
        code = codes["nf4"]
        qt = bq.quantize(np.zeros(64, dtype=np.float32), code, 64, axis=0)
        assert qt.scales[0] == 0.0
        expected_idx = int(np.argmin(np.abs(code.values)))
        assert np.all(bq.unpack_nibbles(qt.packed, 64) == expected_idx)
        assert np.all(bq.dequantize(qt) == 0.0)

    def test_oracle_equivalence_random_blocks(self, codes):
        rng = np.random.default_rng(11)
        for name, code in codes.items():
            w = rng.standard_normal((256, 64)).astype(np.float32)
            qt = bq.quantize(w, code, 64, axis=1)
            idx = bq.unpack_nibbles(qt.packed, 64)
            M = np.abs(w).max(axis=1).astype(np.float32)
            x = w / M[:, None]
            np.testing.assert_array_equal(
                idx, brute_force_indices(x, code.values), err_msg=name
            )

    def test_per_element_error_bound(self, codes):
        rng = np.random.default_rng(12)
        code = codes["af4"]
        gap = np.diff(code.values).max()
        w = rng.standard_normal((64, 129))
        qt = bq.quantize(w, code, 32, axis=1)
        err = np.abs(w - bq.dequantize(qt))
        rows, _ = bq._blocks_view(w, 1, 32)
        M = np.abs(rows).max(axis=1)
        bound = bq._unblock(
            np.repeat(M[:, None], 32, axis=1), w.shape, 1, 32
        )
        assert np.all(err <= bound * gap / 2 + 1e-12)

    def test_partial_final_block_absmax(self, codes):
        code = codes["nf4"]
        w = np.zeros(70, dtype=np.float32)
        w[:64] = 0.001
        w[64:] = np.array([5.0, -1.0, 2.0, 0.5, 0.25, 0.125], dtype=np.float32)
        qt = bq.quantize(w, code, 64, axis=0)
        # absmax of the short block covers only its own 6 elements
        assert qt.scales[1] == 5.0
        np.testing.assert_allclose(bq.dequantize(qt)[:64], 0.001, atol=1e-3)

    def test_non_finite_rejected(self, codes):
        w = np.ones((4, 8), dtype=np.float32)
        w[2, 3] = np.nan
        with pytest.raises(DataError, match=r"\(2, 3\)"):
            bq.quantize(w, codes["nf4"], 4, axis=1)

    def test_axis_handling(self, codes):
        rng = np.random.default_rng(13)
        w = rng.standard_normal((6, 8, 10)).astype(np.float32)
        for axis in (0, 1, 2, -1):
            qt = bq.quantize(w, codes["nf4"], 4, axis=axis)
            assert bq.dequantize(qt).shape == w.shape
        with pytest.raises(DomainError):
            bq.quantize(w, codes["nf4"], 4, axis=3)

    def test_idempotence(self, codes):
        rng = np.random.default_rng(14)
        w = rng.standard_normal((16, 64)).astype(np.float32)
        qt = bq.quantize(w, codes["nf4"], 64, axis=1)
        deq = bq.dequantize(qt)
        qt2 = bq.quantize(deq, codes["nf4"], 64, axis=1)
        np.testing.assert_array_equal(bq.dequantize(qt2), deq)

    def test_determinism(self, codes):
        rng = np.random.default_rng(15)
        w = rng.standard_normal((33, 21)).astype(np.float32)
        a = bq.quantize(w, codes["af4"], 5, axis=0)
        b = bq.quantize(w, codes["af4"], 5, axis=0)
        assert np.array_equal(a.scales, b.scales)
        assert np.array_equal(a.packed, b.packed)


class TestUsageHistogram:
    def test_zeros_concentrate_on_smallest_value(self, codes):
        code = codes["nf4"]
        qt = bq.quantize(np.zeros((4, 64), dtype=np.float32), code, 64, axis=1)
        hist = bq.usage_histogram(qt)
        assert hist.total == 256
        assert hist.counts[int(np.argmin(np.abs(code.values)))] == 256

    def test_nf4_usage_spread(self, codes):
        rng = np.random.default_rng(16)
        w = rng.standard_normal(1 << 22).astype(np.float32)
        qt = bq.quantize(w, codes["nf4"], 64, axis=0)
        props = bq.usage_histogram(qt).proportions
        assert props.min() < 0.03
        assert props.max() > 0.08

    def test_partial_blocks_not_counted_as_padding(self, codes):
        w = np.ones(65, dtype=np.float32)
        qt = bq.quantize(w, codes["nf4"], 64, axis=0)
        hist = bq.usage_histogram(qt)
        assert hist.total == 65
        assert hist.counts[15] == 65

    def test_invariants(self):
        with pytest.raises(DomainError):
            bq.UsageHistogram(tuple(range(16)), total=3)
        with pytest.raises(DomainError):
            bq.UsageHistogram((1,) * 15, total=15)


class TestReconstructionError:
    def test_identical_tensors(self):
        w = np.ones((3, 3))
        for metric in ("mean_abs", "mean_sq", "max_abs"):
            assert bq.reconstruction_error(w, w, metric) == 0.0

    def test_known_values(self):
        a = np.array([0.0, 1.0, 2.0])
        b = np.array([0.5, 1.0, 0.0])
        assert bq.reconstruction_error(a, b, "mean_abs") == pytest.approx(2.5 / 3)
        assert bq.reconstruction_error(a, b, "mean_sq") == pytest.approx(4.25 / 3)
        assert bq.reconstruction_error(a, b, "max_abs") == 2.0

    def test_dim_mismatch(self):
        with pytest.raises(DomainError, match="mismatch"):
            bq.reconstruction_error(np.ones(3), np.ones(4))

    def test_unknown_metric(self):
        with pytest.raises(DomainError):
            bq.reconstruction_error(np.ones(3), np.ones(3), "rmse")

    def test_af4_beats_nf4_at_large_blocks(self, codes):
        rng = np.random.default_rng(17)
        w = rng.standard_normal((512, 4096)).astype(np.float32)
        af4 = qc.af4_code(4096)
        err_af4 = bq.reconstruction_error(
            w, bq.dequantize(bq.quantize(w, af4, 4096, axis=1))
        )
        err_nf4 = bq.reconstruction_error(
            w, bq.dequantize(bq.quantize(w, codes["nf4"], 4096, axis=1))
        )
        assert err_af4 < err_nf4

    def test_mean_abs_tracks_l1_times_mean_absmax(self):
        # mean_abs ~ expected_l1 * E[absmax]: approximate only, because the
        # per-block scale and the conditional distance are correlated; the
        # gap shrinks as the absmax concentrates with growing block size
        from scipy import integrate

        import quantlab.distributions as qd

        gaps = []
        for B, nblk in ((64, 1 << 14), (4096, 1 << 9)):
            code = qc.af4_code(B)
            mean_absmax, _ = integrate.quad(
                lambda m: m * qd.absmax_pdf(m, B), 0, 30, limit=200
            )
            product = qc.expected_l1(code, B) * mean_absmax
            rng = np.random.default_rng(77)
            w = rng.standard_normal((nblk, B))
            qt = bq.quantize(w, code, B, axis=1)
            est = np.abs(w - bq.dequantize(qt)).mean()
            gaps.append(abs(est - product) / est)
        assert gaps[0] < 0.02 and gaps[1] < 0.02
        assert gaps[1] < gaps[0]


class TestPacking:
    def test_roundtrip_even_and_odd(self):
        rng = np.random.default_rng(18)
        for n in (2, 7, 16, 33):
            idx = rng.integers(0, 16, size=(5, n)).astype(np.uint8)
            packed = bq.pack_nibbles(idx)
            assert packed.shape == (5, (n + 1) // 2)
            np.testing.assert_array_equal(bq.unpack_nibbles(packed, n), idx)

    def test_layout(self):
        packed = bq.pack_nibbles(np.array([[1, 2, 3, 4]], dtype=np.uint8))
        # element 2k -> low nibble of byte k
        np.testing.assert_array_equal(packed, [[0x21, 0x43]])


class TestTensorFiles:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(19)
        for shape in ((7,), (5, 9), (2, 3, 4)):
            w = rng.standard_normal(shape).astype(np.float32)
            path = tmp_path / "t.fqt"
            bq.tensor_write(w, path)
            back = bq.tensor_read(path)
            assert back.dtype == np.float32
            np.testing.assert_array_equal(back, w)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fqt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(FormatError, match="magic"):
            bq.tensor_read(path)

    def test_truncation_reports_lengths(self, tmp_path):
        w = np.ones((4, 4), dtype=np.float32)
        path = tmp_path / "t.fqt"
        bq.tensor_write(w, path)
        data = path.read_bytes()
        path.write_bytes(data[:-7])
        with pytest.raises(FormatError, match="expected 64 bytes, got 57"):
            bq.tensor_read(path)

    def test_trailing_bytes(self, tmp_path):
        w = np.ones(3, dtype=np.float32)
        path = tmp_path / "t.fqt"
        bq.tensor_write(w, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(FormatError, match="trailing"):
            bq.tensor_read(path)


class TestQuantizedTensorFiles:
    @pytest.mark.parametrize(
        "shape,B,axis",
        [((128,), 64, 0), ((100,), 7, 0), ((5, 33), 8, 1), ((5, 33), 8, 0),
         ((3, 4, 5), 4, 1), ((17,), 32, 0)],
    )
    def test_roundtrip_bit_exact(self, tmp_path, codes, shape, B, axis):
        rng = np.random.default_rng(20)
        w = rng.standard_normal(shape).astype(np.float32)
        qt = bq.quantize(w, codes["af4"], B, axis=axis)
        path = tmp_path / "t.fqz"
        bq.qtensor_write(qt, path)
        back = bq.qtensor_read(path)
        assert back.dims == qt.dims
        assert back.block_axis == qt.block_axis
        assert back.block_size == qt.block_size
        np.testing.assert_array_equal(back.scales, qt.scales)
        np.testing.assert_array_equal(back.packed, qt.packed)
        # code values survive as float32
        np.testing.assert_allclose(
            back.code.values, qt.code.values, atol=1e-7
        )

    def test_byte_identical_rewrite(self, tmp_path, codes):
        rng = np.random.default_rng(21)
        w = rng.standard_normal((9, 31)).astype(np.float32)
        qt = bq.quantize(w, codes["nf4"], 6, axis=1)
        p1, p2 = tmp_path / "a.fqz", tmp_path / "b.fqz"
        bq.qtensor_write(qt, p1)
        bq.qtensor_write(bq.qtensor_read(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fqz"
        path.write_bytes(b"QZF1" + bytes(32))
        with pytest.raises(FormatError, match="magic"):
            bq.qtensor_read(path)

    def test_bad_version(self, tmp_path, codes):
        w = np.ones(8, dtype=np.float32)
        qt = bq.quantize(w, codes["nf4"], 8, axis=0)
        path = tmp_path / "t.fqz"
        bq.qtensor_write(qt, path)
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            bq.qtensor_read(path)

    def test_truncated_blocks(self, tmp_path, codes):
        w = np.ones(64, dtype=np.float32)
        qt = bq.quantize(w, codes["nf4"], 64, axis=0)
        path = tmp_path / "t.fqz"
        bq.qtensor_write(qt, path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="truncated"):
            bq.qtensor_read(path)

    def test_non_ascending_code_rejected(self, tmp_path, codes):
        w = np.ones(8, dtype=np.float32)
        qt = bq.quantize(w, codes["nf4"], 8, axis=0)
        path = tmp_path / "t.fqz"
        bq.qtensor_write(qt, path)
        data = bytearray(path.read_bytes())
        # code values start after 4 magic + 2 header + 4 extent + 6 block hdr
        offset = 4 + 2 + 4 + 6
        data[offset:offset + 4], data[offset + 4:offset + 8] = (
            data[offset + 4:offset + 8], data[offset:offset + 4])
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="ascending"):
            bq.qtensor_read(path)
