import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from polypsynth.data import to_luminance
from polypsynth.exceptions import InvalidArgumentError, NumericError, ShapeError
from polypsynth.metrics import (
    ReaderResponse,
    ReaderScore,
    confusion_counts,
    extract_features,
    fid,
    iou_suite,
    psnr,
    score_survey,
    ssim,
    survey_mean,
)


def rand_image(seed, size=32):
    return np.random.default_rng(seed).uniform(size=(size, size, 3))


class TestSSIM:
    def test_identical_is_one(self):
        x = rand_image(0)
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_matches_skimage(self):
        a, b = rand_image(1, 40), rand_image(2, 40)
        b = 0.5 * a + 0.5 * b
        oracle = structural_similarity(
            to_luminance(a), to_luminance(b), data_range=1.0,
            gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
        )
        assert ssim(a, b) == pytest.approx(oracle, abs=1e-8)

    def test_inverted_image_low(self):
        yy, xx = np.mgrid[0:48, 0:48]
        g = 0.5 + 0.4 * np.sin(xx / 3.0) * np.cos(yy / 4.0)
        x = np.repeat(g[..., None], 3, axis=2)
        assert ssim(x, 1 - x) < 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ssim(rand_image(0, 16), rand_image(0, 20))


class TestPSNR:
    def test_identical_capped(self):
        x = rand_image(0)
        assert psnr(x, x) == 100.0

    def test_closed_form(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.1)
        # mse = 0.01 -> 10 log10(1 / 0.01) = 20 dB
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_extremes(self):
        assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == pytest.approx(0.0, abs=1e-12)


def fid_oracle(a, b):
    mu = a.mean(0) - b.mean(0)
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    root = scipy.linalg.sqrtm(ca @ cb)
    return float(mu @ mu + np.trace(ca + cb - 2 * np.real(root)))


class TestFID:
    def test_self_distance_zero(self):
        f = np.random.default_rng(0).standard_normal((64, 6))
        assert fid(f, f) == pytest.approx(0.0, abs=1e-8)

    def test_hand_computed(self):
        # identical spreads, means shifted by (3, 4): fid = |mu|^2 = 25
        a = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        assert fid(a, a + [3, 4]) == pytest.approx(25.0, abs=1e-9)

    def test_matches_scipy_sqrtm(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((200, 5))
        b = rng.standard_normal((150, 5)) @ rng.standard_normal((5, 5)) + 0.7
        assert fid(a, b) == pytest.approx(fid_oracle(a, b), rel=1e-6)

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((50, 4)), rng.standard_normal((60, 4)) * 2
        assert fid(a, b) == pytest.approx(fid(b, a), rel=1e-8)

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidArgumentError):
            fid(np.zeros((1, 3)), np.zeros((5, 3)))
        with pytest.raises(ShapeError):
            fid(np.zeros((4, 3)), np.zeros((4, 2)))
        with pytest.raises(NumericError):
            fid(np.full((4, 2), np.nan), np.zeros((4, 2)))

    def test_default_extractor(self):
        imgs = [rand_image(i, 32) for i in range(4)]
        f = extract_features(imgs)
        assert f.shape[0] == 4 and f.ndim == 2
        np.testing.assert_array_equal(f, extract_features(imgs))
        assert fid(f, f) == pytest.approx(0.0, abs=1e-6)


def brute_force(preds, gts):
    """Per-pixel loops; independent of the vectorised counting."""
    TP = FP = FN = 0
    per = []
    for p, g in zip(preds, gts):
        tp = fp = fn = 0
        for pv, gv in zip(np.ravel(p), np.ravel(g)):
            tp += pv == 1 and gv == 1
            fp += pv == 1 and gv == 0
            fn += pv == 0 and gv == 1
        TP, FP, FN = TP + tp, FP + fp, FN + fn
        per.append(tp / (tp + fp + fn) if tp + fp + fn else 1.0)
    return TP / (TP + FP + FN), float(np.mean(per)), 2 * TP / (2 * TP + FP + FN), TP / (TP + FP), TP / (TP + FN)


class TestIoU:
    def test_identical(self):
        m = np.zeros((8, 8), np.uint8)
        m[2:5, 2:6] = 1
        r = iou_suite([m], [m])
        assert r.image_iou == r.dataset_iou == r.dice == r.precision == r.recall == 1.0

    def test_hand_example(self):
        p = np.array([[1, 1, 0, 0]], np.uint8)
        g = np.array([[0, 1, 1, 0]], np.uint8)
        r = iou_suite([p], [g])
        assert r.image_iou == pytest.approx(1 / 3)
        assert r.dice == pytest.approx(0.5)
        assert confusion_counts(p, g) == (1, 1, 1)

    def test_both_empty_is_perfect(self):
        z = np.zeros((4, 4), np.uint8)
        m = z.copy()
        m[0, 0] = 1
        r = iou_suite([z, m], [z, m])
        assert r.dataset_iou == 1.0 and r.image_iou == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
    def test_matches_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        preds = [(rng.uniform(size=(6, 5)) > 0.5).astype(np.uint8) for _ in range(n)]
        gts = [(rng.uniform(size=(6, 5)) > 0.5).astype(np.uint8) for _ in range(n)]
        preds[0][0, 0] = gts[0][0, 0] = 1  # keep aggregate denominators non-zero
        r = iou_suite(preds, gts)
        np.testing.assert_allclose(
            [r.image_iou, r.dataset_iou, r.dice, r.precision, r.recall], brute_force(preds, gts), rtol=1e-12
        )

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            iou_suite([np.zeros((2, 2))], [])


# rows transcribed from the published reader-study table: (tp, fn, fp, tn), printed acc/rec/prec in %
READER_ROWS = [
    ("DOC", (4, 1, 1, 4), (80, 80, 80)),
    ("DOC", (3, 2, 3, 2), (50, 60, 50)),
    ("GEC", (4, 1, 3, 2), (60, 80, 57)),
    ("GEC", (3, 2, 1, 4), (70, 60, 75)),
    ("GEC", (3, 2, 3, 2), (50, 60, 50)),
    ("GEC", (3, 2, 5, 0), (30, 60, 37.5)),
]


class TestSurvey:
    @pytest.mark.parametrize("who,counts,printed", READER_ROWS)
    def test_table_rows(self, who, counts, printed):
        s = ReaderScore.from_counts(*counts)
        # printed precision is rounded to the nearest percent in some rows
        assert s.matches(*(v / 100 for v in printed), tol=0.005 if printed[2] != 57 else 0.0015 + 0.005)

    def test_inconsistent_row_detected(self):
        # this row prints 70/80/66 but its counts give 50/60/50
        s = ReaderScore.from_counts(3, 2, 3, 2)
        assert not s.matches(0.70, 0.80, 0.66)
        assert s.matches(0.50, 0.60, 0.50)

    def test_score_survey_threshold(self):
        responses = [
            ReaderResponse("a", 10, "generated"),
            ReaderResponse("b", 6, "generated"),
            ReaderResponse("c", 5, "generated"),
            ReaderResponse("d", 7, "real"),
            ReaderResponse("e", 1, "real"),
        ]
        s = score_survey(responses)
        assert (s.tp, s.fn, s.fp, s.tn) == (2, 1, 1, 1)

    def test_response_validation(self):
        with pytest.raises(InvalidArgumentError):
            ReaderResponse("a", 11, "real")
        with pytest.raises(InvalidArgumentError):
            ReaderResponse("a", 3, "fake")

    def test_mean(self):
        m = survey_mean([ReaderScore(1, 0, 0, 1), ReaderScore(0, 1, 1, 0)])
        assert m == {"accuracy": 0.5, "recall": 0.5, "precision": 0.5}
