import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exfil_lab.errors import ArgumentError, ShapeError, UndefinedAUCError
from exfil_lab.metrics import (
    SSIM_C1,
    accuracy,
    bit_error_rate,
    evaluate_logits,
    gaussian_window,
    leakage,
    macro_auc,
    per_class_auc,
    psnr,
    psnr_batch,
    ssim,
    ssim_batch,
)


def checkerboard(n=16):
    y, x = np.mgrid[0:n, 0:n]
    return ((x + y) % 2).astype(float)


class TestSsim:
    def test_self_similarity(self, rng):
        x = rng.random((16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        expected = (2 * 0.2 * 0.7 + SSIM_C1) / (0.2**2 + 0.7**2 + SSIM_C1)
        got = ssim(np.full((16, 16), 0.2), np.full((16, 16), 0.7))
        assert got == pytest.approx(expected, rel=1e-9)
        assert got == pytest.approx(0.52839, abs=1e-5)

    def test_inverted_checkerboard_negative(self):
        x = checkerboard()
        assert ssim(x, 1 - x) < 0

    def test_window_normalised(self):
        w = gaussian_window()
        assert w.size == 7 and w.sum() == pytest.approx(1.0) and np.argmax(w) == 3

    def test_small_image_rejected(self):
        with pytest.raises(ArgumentError):
            ssim(np.zeros((6, 6)), np.zeros((6, 6)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ssim_batch(np.zeros((2, 8, 8)), np.zeros((3, 8, 8)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_symmetric(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.random((3, 9, 11)), r.random((3, 9, 11))
        assert np.allclose(ssim_batch(a, b), ssim_batch(b, a), atol=1e-12, rtol=0)

    def test_batch_matches_single(self, rng):
        a, b = rng.random((4, 16, 16)), rng.random((4, 16, 16))
        assert np.allclose(ssim_batch(a, b), [ssim(a[i], b[i]) for i in range(4)])


class TestPsnr:
    def test_identical_capped(self):
        x = np.zeros((16, 16))
        assert psnr(x, x) == 100.0

    @pytest.mark.parametrize("offset, db", [(0.1, 20.0), (1.0, 0.0)])
    def test_uniform_offset(self, offset, db):
        assert psnr(np.zeros((8, 8)), np.full((8, 8), offset)) == pytest.approx(db, abs=1e-9)

    @given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
    def test_strictly_decreasing_in_mse(self, a, b):
        if abs(a - b) < 1e-9:
            return
        pa, pb = psnr_batch(np.zeros((1, 4, 4)), np.full((1, 4, 4), a))[0], psnr_batch(np.zeros((1, 4, 4)), np.full((1, 4, 4), b))[0]
        assert (pa > pb) == (a < b)


class TestAccuracy:
    def test_counts(self):
        logits = np.eye(4)
        assert accuracy(logits, [0, 1, 2, 3]) == 1.0
        assert accuracy(logits, [1, 2, 3, 0]) == 0.0
        assert accuracy(logits, [0, 1, 2, 0]) == 0.75

    @given(st.integers(0, 2**31), st.floats(-100, 100))
    def test_shift_invariant(self, seed, c):
        r = np.random.default_rng(seed)
        logits = r.standard_normal((10, 4))
        labels = r.integers(0, 4, 10)
        assert accuracy(logits + c, labels) == accuracy(logits, labels)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            accuracy(np.zeros((3, 2)), [0, 1])


class TestAuc:
    def test_perfect_and_ties(self):
        assert macro_auc(np.eye(3), [0, 1, 2]) == 1.0
        assert macro_auc(np.ones((6, 3)), [0, 1, 2, 0, 1, 2]) == 0.5

    def test_hand_mann_whitney(self):
        assert macro_auc(np.array([0.9, 0.8, 0.3]), [1, 0, 0]) == 1.0
        assert macro_auc(np.array([0.3, 0.8, 0.9]), [1, 0, 0]) == 0.0

    def test_all_excluded(self):
        with pytest.raises(UndefinedAUCError):
            macro_auc(np.ones((3, 2)), [0, 0, 0])

    def test_missing_class_excluded(self):
        per = per_class_auc(np.eye(3)[[0, 1, 0, 1]], [0, 1, 0, 1])
        assert set(per) == {0, 1}
        assert evaluate_logits(np.eye(3)[[0, 1, 0, 1]], [0, 1, 0, 1]).excluded_classes == [2]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_invariant(self, seed):
        r = np.random.default_rng(seed)
        s = r.standard_normal((30, 3))
        y = np.arange(30) % 3
        assert macro_auc(np.exp(2 * s) + 5, y) == pytest.approx(macro_auc(s, y), abs=1e-12)


class TestBer:
    def test_identical_and_complement(self):
        a = np.array([0, 0xFFFF, 0x1234], dtype=np.uint16)
        assert bit_error_rate(a, a) == 0.0
        assert bit_error_rate(a, ~a) == 1.0

    def test_one_flip(self):
        a = np.zeros(5, dtype=np.uint16)
        b = a.copy()
        b[2] = 1 << 9
        assert bit_error_rate(a, b) == 1 / 80
        assert bit_error_rate(a[2:3], b[2:3]) == 1 / 16

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            bit_error_rate(np.zeros(2), np.zeros(3))


def test_leakage_summary(rng):
    ref = rng.random((5, 16, 16))
    res = leakage(ref, ref, 0.0)
    assert res.ssim_mean == pytest.approx(1.0) and res.psnr_mean == 100.0 and res.ber == 0.0
