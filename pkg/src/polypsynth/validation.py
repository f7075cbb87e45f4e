"""Input checks shared by every estimator and function in the package.

The helpers accept either the domain types from :mod:`polypsynth.data` or
plain numpy arrays and return validated float/uint8 arrays, in the spirit of
``sklearn.utils.check_array``.
"""
import numpy as np

from .exceptions import InvalidArgumentError, ShapeError


def _unwrap(obj):
    return getattr(obj, "data", obj)


def check_image(image, name="image"):
    """Return ``image`` as a float64 ``(H, W, 3)`` array with values in [0, 1]."""
    arr = np.asarray(_unwrap(image))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"{name} has an empty spatial dimension {arr.shape[:2]}")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidArgumentError(f"{name} values must lie in [0, 1]")
    return arr


def check_binary(field, name="mask"):
    """Return a binary 2-D field as a uint8 ``(H, W)`` array of 0/1."""
    arr = np.asarray(_unwrap(field))
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"{name} has an empty spatial dimension {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.isin(arr, (0, 1)).all():
        raise InvalidArgumentError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8)


def check_same_shape(*named):
    """Raise :class:`ShapeError` unless all ``(name, array)`` pairs share H and W."""
    shapes = [(name, np.shape(_unwrap(a))[:2]) for name, a in named]
    ref_name, ref = shapes[0]
    for name, shape in shapes[1:]:
        if shape != ref:
            raise ShapeError(f"{name} has size {shape}, expected {ref} to match {ref_name}")
    return ref


def check_positive(value, name, allow_zero=False):
    if allow_zero:
        if value < 0:
            raise InvalidArgumentError(f"{name} must be >= 0, got {value}")
    elif not value > 0:
        raise InvalidArgumentError(f"{name} must be > 0, got {value}")
    return value


def is_power_of_two(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0
