"""Image-quality, segmentation and reader-study metrics."""
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .data import to_luminance
from .exceptions import InvalidArgumentError, NumericError, ShapeError
from .validation import check_binary, check_image

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
EIGEN_CLAMP = -1e-10


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = _gaussian_window()


def ssim(a, b, data_range=1.0):
    """Mean structural similarity of the luminance channels of two images.

    Local statistics use an 11x11 Gaussian window (sigma 1.5) with reflected
    borders; the 5-pixel band where the window overhangs is dropped when the
    image is large enough.
    """
    a = to_luminance(check_image(a, "a"))
    b = to_luminance(check_image(b, "b"))
    if a.shape != b.shape:
        raise ShapeError(f"images differ in size: {a.shape} vs {b.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(x):
        return ndimage.correlate(x, _WINDOW, mode="reflect")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = num / den
    pad = SSIM_WINDOW // 2
    if smap.shape[0] > 2 * pad and smap.shape[1] > 2 * pad:
        smap = smap[pad:-pad, pad:-pad]
    return float(smap.mean())


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for data in [0, 1]; identical inputs give 100."""
    a = check_image(a, "a")
    b = check_image(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"images differ in size: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _sqrtm_trace(sigma_a, sigma_b):
    """Trace of (sigma_a sigma_b)^(1/2) via the symmetric form sqrt(A) B sqrt(A)."""
    w, v = np.linalg.eigh((sigma_a + sigma_a.T) / 2)
    w = np.where(w < 0, 0.0, w)
    root_a = (v * np.sqrt(w)) @ v.T
    product = root_a @ sigma_b @ root_a
    product = (product + product.T) / 2
    eig = np.linalg.eigvalsh(product)
    if np.any(eig < EIGEN_CLAMP * max(1.0, float(np.abs(eig).max()))):
        raise NumericError("covariance product is not positive semi-definite")
    eig = np.clip(eig, 0.0, None)
    return float(np.sqrt(eig).sum())


def fid(features_a, features_b):
    """Frechet distance between Gaussian fits of two feature sets (rows are samples)."""
    fa = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    fb = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ShapeError(f"feature matrices must be (n, d) with equal d, got {fa.shape} and {fb.shape}")
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise InvalidArgumentError("fid needs at least 2 samples per set")
    if not (np.all(np.isfinite(fa)) and np.all(np.isfinite(fb))):
        raise NumericError("features contain non-finite values")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False).reshape(fa.shape[1], fa.shape[1])
    cov_b = np.cov(fb, rowvar=False).reshape(fb.shape[1], fb.shape[1])
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * _sqrtm_trace(cov_a, cov_b)
    if not np.isfinite(value):
        raise NumericError("fid evaluated to a non-finite value")
    return max(float(value), 0.0)


def extract_features(images, extractor=None):
    """Stack one feature row per image, in order.

    ``extractor`` is any callable mapping an ``(N, H, W, 3)`` float array to an
    ``(N, d)`` array; the default is the frozen random network from
    :mod:`polypsynth.features`.
    """
    if len(images) == 0:
        raise InvalidArgumentError("extract_features needs at least one image")
    batch = np.stack([check_image(x) for x in images])
    if extractor is None:
        from .features import default_extractor

        extractor = default_extractor()
    feats = np.asarray(extractor(batch), dtype=np.float64)
    return feats.reshape(len(batch), -1)


# --- segmentation -------------------------------------------------------------


@dataclass(frozen=True)
class SegMetrics:
    image_iou: float
    dataset_iou: float
    dice: float
    precision: float
    recall: float

    def to_dict(self):
        return asdict(self)


def _safe_ratio(num, den, vacuous):
    return num / den if den else vacuous


def confusion_counts(pred, gt):
    p = check_binary(pred, "pred").astype(bool)
    g = check_binary(gt, "gt").astype(bool)
    if p.shape != g.shape:
        raise ShapeError(f"pred {p.shape} and gt {g.shape} differ in size")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn


def iou_suite(preds: Sequence, gts: Sequence) -> SegMetrics:
    """Aggregate IoU, mean per-image IoU, and aggregate Dice/precision/recall.

    A pair where both masks are empty counts as IoU 1 in the per-image mean
    and adds nothing to the aggregate sums.
    """
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if len(preds) == 0:
        raise InvalidArgumentError("iou_suite needs at least one pair")
    TP = FP = FN = 0
    per_image = []
    for p, g in zip(preds, gts):
        tp, fp, fn = confusion_counts(p, g)
        TP, FP, FN = TP + tp, FP + fp, FN + fn
        union = tp + fp + fn
        per_image.append(tp / union if union else 1.0)
    return SegMetrics(
        image_iou=_safe_ratio(TP, TP + FP + FN, 1.0),
        dataset_iou=float(np.mean(per_image)),
        dice=_safe_ratio(2 * TP, 2 * TP + FP + FN, 1.0),
        precision=_safe_ratio(TP, TP + FP, 1.0 if FN == 0 else 0.0),
        recall=_safe_ratio(TP, TP + FN, 1.0 if FP == 0 else 0.0),
    )


# --- reader study -------------------------------------------------------------

TRUTHS = ("real", "generated")


@dataclass(frozen=True)
class ReaderResponse:
    image_id: str
    confidence: int
    truth: str

    def __post_init__(self):
        if not (isinstance(self.confidence, (int, np.integer)) and 1 <= self.confidence <= 10):
            raise InvalidArgumentError(
                f"confidence for {self.image_id!r} must be an integer in [1, 10], got {self.confidence!r}"
            )
        if self.truth not in TRUTHS:
            raise InvalidArgumentError(f"truth must be one of {TRUTHS}, got {self.truth!r}")


@dataclass(frozen=True)
class ReaderScore:
    tp: int
    fn: int
    fp: int
    tn: int

    @classmethod
    def from_counts(cls, tp, fn, fp, tn):
        if min(tp, fn, fp, tn) < 0:
            raise InvalidArgumentError("confusion counts must be non-negative")
        return cls(int(tp), int(fn), int(fp), int(tn))

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    @property
    def accuracy(self):
        return _safe_ratio(self.tp + self.tn, self.total, 0.0)

    @property
    def recall(self):
        return _safe_ratio(self.tp, self.tp + self.fn, 0.0)

    @property
    def precision(self):
        return _safe_ratio(self.tp, self.tp + self.fp, 0.0)

    def rates(self):
        return {"accuracy": self.accuracy, "recall": self.recall, "precision": self.precision}

    def to_dict(self):
        return {**asdict(self), **self.rates()}

    def matches(self, accuracy, recall, precision, tol=0.005):
        """True if the count-derived rates agree with reported ones within ``tol``."""
        got = self.rates()
        want = {"accuracy": accuracy, "recall": recall, "precision": precision}
        return all(abs(got[k] - want[k]) <= tol for k in got)


def score_survey(responses, threshold=6) -> ReaderScore:
    """Confusion counts for one reader; "generated" is the positive class.

    A response predicts "generated" when its confidence is at least ``threshold``.
    """
    if len(responses) == 0:
        raise InvalidArgumentError("score_survey needs at least one response")
    tp = fn = fp = tn = 0
    for r in responses:
        if not isinstance(r, ReaderResponse):
            r = ReaderResponse(**r) if isinstance(r, dict) else ReaderResponse(*r)
        says_generated = r.confidence >= threshold
        if r.truth == "generated":
            tp, fn = (tp + 1, fn) if says_generated else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if says_generated else (fp, tn + 1)
    return ReaderScore(tp, fn, fp, tn)


def survey_mean(scores):
    """Unweighted mean accuracy/recall/precision over readers.

    Items may be :class:`ReaderScore` objects or mappings holding the three
    rates (e.g. rates transcribed from a published table).
    """
    if len(scores) == 0:
        raise InvalidArgumentError("survey_mean needs at least one score")
    keys = ("accuracy", "recall", "precision")
    rows = [s if isinstance(s, dict) else {k: getattr(s, k) for k in keys} for s in scores]
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}
