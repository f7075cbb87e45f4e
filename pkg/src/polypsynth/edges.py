"""Canny edge extraction and edge-map surgery for polyp transplantation."""
import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .data import EdgeMap, to_luminance
from .exceptions import InvalidArgumentError
from .validation import check_binary, check_image, check_same_shape

DEFAULT_SIGMA = 2.0
DEFAULT_HIGH_RATIO = 0.2
DEFAULT_LOW_RATIO = 0.5

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_TIE_TOLERANCE = 1e-6
# (row, col) step along the gradient for each quantised direction
_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))


def _shift(arr, dr, dc):
    """``out[i, j] = arr[i + dr, j + dc]`` with zeros beyond the border."""
    out = np.zeros_like(arr)
    h, w = arr.shape
    src_r = slice(max(dr, 0), h + min(dr, 0))
    dst_r = slice(max(-dr, 0), h + min(-dr, 0))
    src_c = slice(max(dc, 0), w + min(dc, 0))
    dst_c = slice(max(-dc, 0), w + min(-dc, 0))
    out[dst_r, dst_c] = arr[src_r, src_c]
    return out


def canny(gray, sigma=DEFAULT_SIGMA, high_ratio=DEFAULT_HIGH_RATIO, low_ratio=DEFAULT_LOW_RATIO):
    """Canny edges of a 2-D float array.

    Thresholds are relative: ``high = high_ratio * max|grad|`` and
    ``low = low_ratio * high``.
    """
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be > 0, got {sigma}")
    if not 0 < high_ratio <= 1 or not 0 < low_ratio <= 1:
        raise InvalidArgumentError("threshold ratios must lie in (0, 1]")
    smoothed = ndimage.gaussian_filter(np.asarray(gray, dtype=np.float64), sigma, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return np.zeros(mag.shape, dtype=np.uint8)

    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(np.int64)) % 4
    # magnitudes closer than this are ties; a flat ramp must not yield round-off edges
    tol = _TIE_TOLERANCE * peak
    keep = np.zeros(mag.shape, dtype=bool)
    for k, (dr, dc) in enumerate(_OFFSETS):
        # ties go to the pixel on the negative side so plateaus stay one pixel wide
        local = (mag >= _shift(mag, dr, dc) - tol) & (mag > _shift(mag, -dr, -dc) + tol)
        keep |= (sector == k) & local
    thin = np.where(keep, mag, 0.0)

    high = high_ratio * peak
    low = low_ratio * high
    weak = thin >= low
    labels, n = ndimage.label(weak, structure=_EIGHT_CONNECTED)
    if n == 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    strong_labels = np.unique(labels[thin >= high])
    connected = np.zeros(n + 1, dtype=bool)
    connected[strong_labels] = True
    connected[0] = False
    return connected[labels].astype(np.uint8)


def extract_edges(image, sigma=DEFAULT_SIGMA, high_ratio=DEFAULT_HIGH_RATIO, low_ratio=DEFAULT_LOW_RATIO):
    """Canny edges on the image luminance."""
    arr = check_image(image)
    return EdgeMap(canny(to_luminance(arr), sigma, high_ratio, low_ratio))


def extract_polyp_edges(polyp_image, mask, sigma=DEFAULT_SIGMA, **thresholds):
    """Edges of ``polyp_image`` kept only where ``mask`` is 1."""
    m = check_binary(mask)
    check_same_shape(("polyp_image", polyp_image), ("mask", m))
    edges = extract_edges(polyp_image, sigma, **thresholds).data
    return EdgeMap(edges * m)


def merge_edges(clean_edges, polyp_edges, mask):
    """Polyp edges inside the mask, clean-image edges everywhere else."""
    c = check_binary(clean_edges, "clean_edges")
    p = check_binary(polyp_edges, "polyp_edges")
    m = check_binary(mask)
    check_same_shape(("clean_edges", c), ("polyp_edges", p), ("mask", m))
    return EdgeMap(np.where(m == 1, p, c).astype(np.uint8))


class CannyEdgeExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping a batch of RGB images to binary edge maps.

    Parameters
    ----------
    sigma : float
        Gaussian pre-smoothing scale.
    high_ratio : float
        Strong threshold as a fraction of the largest gradient magnitude.
    low_ratio : float
        Weak threshold as a fraction of the strong one.
    """

    def __init__(self, sigma=DEFAULT_SIGMA, high_ratio=DEFAULT_HIGH_RATIO, low_ratio=DEFAULT_LOW_RATIO):
        self.sigma = sigma
        self.high_ratio = high_ratio
        self.low_ratio = low_ratio

    def fit(self, X=None, y=None):
        if not self.sigma > 0:
            raise InvalidArgumentError(f"sigma must be > 0, got {self.sigma}")
        return self

    def transform(self, X):
        """``X`` is ``(N, H, W, 3)`` or a list of images; returns ``(N, H, W)`` uint8."""
        return np.stack([
            extract_edges(x, self.sigma, self.high_ratio, self.low_ratio).data for x in X
        ])

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
