import numpy as np
import pytest
import yaml

from polypsynth.data import save_binary, save_image


def gradient_images(n, size=64, seed=0):
    """Linear colour ramps in random directions."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    out = []
    for _ in range(n):
        theta = rng.uniform(0, 2 * np.pi)
        t = np.cos(theta) * xx + np.sin(theta) * yy
        t = (t - t.min()) / (t.max() - t.min())
        a, b = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        out.append(a * (1 - t[..., None]) + b * t[..., None])
    return out


def rect_masks(n, size=64, seed=0, h=24, w=20):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        m = np.zeros((size, size), np.uint8)
        r, c = rng.integers(size // 8, size - max(h, w) - size // 8, 2)
        m[r:r + h, c:c + w] = 1
        out.append(m)
    return out


def polyp_pairs(n, size=64, seed=0):
    """Textured pinkish backgrounds with a darker elliptical "polyp" and its mask."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    images, masks = [], []
    for _ in range(n):
        bg = np.array([0.85, 0.45, 0.4]) + 0.05 * rng.standard_normal((size, size, 1))
        cy, cx = rng.uniform(0.3, 0.7, 2) * size
        ry, rx = rng.uniform(0.12, 0.25, 2) * size
        m = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1).astype(np.uint8)
        img = np.where(m[..., None] == 1, np.array([0.55, 0.2, 0.2]), bg)
        images.append(np.clip(img, 0, 1))
        masks.append(m)
    return images, masks


def write_labeled(root, images, masks, prefix="img"):
    for i, (img, m) in enumerate(zip(images, masks)):
        save_image(root / "images" / f"{prefix}{i:04d}.png", img)
        save_binary(root / "masks" / f"{prefix}{i:04d}.png", m)
    return root


def write_unlabeled(root, images, prefix="u"):
    for i, img in enumerate(images):
        save_image(root / f"{prefix}{i:04d}.png", img)
    return root


@pytest.fixture
def labeled_dir(tmp_path):
    images, masks = polyp_pairs(6, size=32)
    return write_labeled(tmp_path / "labeled", images, masks)


@pytest.fixture
def unlabeled_dir(tmp_path):
    return write_unlabeled(tmp_path / "unlabeled", gradient_images(5, size=32))


TOY_CONFIG = {
    "seed": 0,
    "n_synth": 4,
    "phases": ["gen_masks", "pretrain", "finetune", "generate", "train_seg", "eval_seg", "eval_inpaint"],
    "data": {"labeled": "labeled", "unlabeled": "unlabeled", "clean": "clean", "val_count": 2},
    "masks": {"count": 24},
    "mask_gan": {"start_resolution": 8, "target_resolution": 32, "iterations_per_stage": 40, "batch_size": 8,
                 "channels": 16, "latent_dim": 32, "learning_rate": 0.002},
    "inpaint": {"resolution": 32, "iterations": 3, "batch_size": 2, "width": 8, "n_downsample": 1,
                "n_res_blocks": 1, "eval_every": 1},
    "generate": {"n": 4},
    "segmentation": {"resolution": 32, "epochs": 2, "batch_size": 4, "base_channels": 4, "depth": 2},
}


def toy_workspace(root, **overrides):
    """Tiny labeled/unlabeled/clean datasets plus a YAML config for the full pipeline."""
    write_labeled(root / "labeled", *polyp_pairs(6, size=32))
    write_unlabeled(root / "unlabeled", gradient_images(5, size=32))
    write_unlabeled(root / "clean", gradient_images(3, size=32, seed=5), prefix="c")
    cfg = {**TOY_CONFIG, **overrides}
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
