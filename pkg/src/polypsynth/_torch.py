"""Torch plumbing: seeding, array conversion and loss checks."""
import contextlib
import math

import numpy as np
import torch

from .exceptions import TrainingDivergedError


@contextlib.contextmanager
def seeded(seed):
    """Run a block (typically module construction) under a fixed global torch seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed) % (2 ** 63))
        yield


def generator(seed):
    return torch.Generator().manual_seed(int(seed) % (2 ** 63))


def images_to_tensor(images, dtype=torch.float32):
    """``(N, H, W, 3)`` array or list of images -> ``(N, 3, H, W)`` tensor."""
    arr = np.stack([np.asarray(getattr(x, "data", x), dtype=np.float64) for x in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype).contiguous()


def fields_to_tensor(fields, dtype=torch.float32):
    """``(N, H, W)`` binary fields -> ``(N, 1, H, W)`` tensor."""
    arr = np.stack([np.asarray(getattr(x, "data", x), dtype=np.float64) for x in fields])
    return torch.from_numpy(arr)[:, None].to(dtype).contiguous()


def tensor_to_images(t):
    return t.detach().permute(0, 2, 3, 1).to(torch.float64).clamp(0, 1).numpy()


def check_finite(losses, iteration, stage=None):
    """Raise :class:`TrainingDivergedError` if any loss value is NaN or infinite."""
    values = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in losses.items()}
    if not all(math.isfinite(v) for v in values.values()):
        raise TrainingDivergedError(iteration, stage, values)
    return values
