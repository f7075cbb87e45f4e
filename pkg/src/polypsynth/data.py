"""Image, mask and dataset primitives shared across the pipeline."""
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import (
    ImageIOError,
    IngestionError,
    InvalidArgumentError,
    InvalidSplitError,
    MissingAnnotationError,
    ShapeError,
)
from .validation import check_binary, check_image, check_same_shape

DEFAULT_RESOLUTION = 256
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
MASK_THRESHOLD = 0.5
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

ORIGINS = ("real", "synthetic")
SPLITS = ("train", "val")

Resolution = Union[int, Tuple[int, int]]


def to_luminance(rgb):
    """Rec. 601 luma of an ``(..., 3)`` array."""
    return np.asarray(rgb, dtype=np.float64) @ LUMA_WEIGHTS


def _hw(resolution):
    if resolution is None:
        return None
    if isinstance(resolution, (int, np.integer)):
        return int(resolution), int(resolution)
    h, w = resolution
    return int(h), int(w)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """An ``(H, W, 3)`` float image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", check_image(self.data))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def luminance(self):
        return to_luminance(self.data)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """An ``(H, W)`` 0/1 field; 1 marks the polyp / hole region."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", check_binary(self.data, "mask"))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def fill_ratio(self):
        return int(self.data.sum()) / self.data.size

    def resize(self, size):
        return BinaryMask(resize_nearest(self.data, size))


@dataclass(frozen=True, eq=False)
class EdgeMap:
    """An ``(H, W)`` 0/1 edge field."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", check_binary(self.data, "edge map"))

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class MaskedSample:
    image: RasterImage
    mask: BinaryMask
    holed_image: RasterImage


def make_masked_sample(image, mask):
    """Zero the masked pixels of ``image``."""
    image = image if isinstance(image, RasterImage) else RasterImage(image)
    mask = mask if isinstance(mask, BinaryMask) else BinaryMask(mask)
    check_same_shape(("image", image), ("mask", mask))
    holed = image.data * (1 - mask.data)[..., None]
    return MaskedSample(image=image, mask=mask, holed_image=RasterImage(holed))


def resize_nearest(field, size):
    """Nearest-neighbour resize of a 2-D (or H, W, C) array to ``size`` = (H, W).

    Each output pixel samples the input pixel containing its centre, so the
    value set of the input is preserved exactly.
    """
    h_out, w_out = _hw(size)
    arr = np.asarray(field)
    h_in, w_in = arr.shape[:2]
    rows = np.minimum(((np.arange(h_out) + 0.5) * h_in / h_out).astype(np.int64), h_in - 1)
    cols = np.minimum(((np.arange(w_out) + 0.5) * w_in / w_out).astype(np.int64), w_in - 1)
    return arr[rows[:, None], cols[None, :]]


# --- file I/O ---------------------------------------------------------------


def _open(path):
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise ImageIOError(path, "file not found") from None
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageIOError(path, str(exc)) from exc
    return img


def load_image(path, resolution: Optional[Resolution] = None) -> RasterImage:
    img = _open(path).convert("RGB")
    hw = _hw(resolution)
    if hw is not None and img.size != (hw[1], hw[0]):
        img = img.resize((hw[1], hw[0]), Image.BILINEAR)
    return RasterImage(np.asarray(img, dtype=np.float64) / 255.0)


def load_mask(path, resolution: Optional[Resolution] = None) -> BinaryMask:
    """Load a mask, binarising its luminance at 0.5 before any resize."""
    img = _open(path).convert("RGB")
    lum = to_luminance(np.asarray(img, dtype=np.float64) / 255.0)
    mask = (lum >= MASK_THRESHOLD).astype(np.uint8)
    hw = _hw(resolution)
    if hw is not None and mask.shape != hw:
        mask = resize_nearest(mask, hw)
    return BinaryMask(mask)


def to_uint8(arr):
    return np.clip(np.round(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def quantize(arr):
    """Round to the 8-bit grid the images are stored on."""
    return to_uint8(arr).astype(np.float64) / 255.0


def save_image(path, image):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(getattr(image, "data", image)), mode="RGB").save(path)


def save_binary(path, field):
    """Write a mask or edge map as a 1-bit PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    arr = check_binary(getattr(field, "data", field))
    Image.fromarray(arr.astype(bool)).convert("1").save(path)


# --- manifests ----------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    image_path: str
    mask_path: Optional[str] = None
    origin: str = "real"
    split: Optional[str] = None
    # provenance of a synthetic record, e.g. "clean=a;polyp=b"
    source: Optional[str] = None

    def __post_init__(self):
        if self.source is not None and ("\t" in self.source or "\n" in self.source):
            raise InvalidArgumentError("source must not contain tabs or newlines")
        if self.origin not in ORIGINS:
            raise InvalidArgumentError(f"origin must be one of {ORIGINS}, got {self.origin!r}")
        if self.split is not None and self.split not in SPLITS:
            raise InvalidArgumentError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def stem(self):
        return Path(self.image_path).stem

    @property
    def labeled(self):
        return self.mask_path is not None


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered, immutable list of dataset records plus the seed that split them."""

    records: Tuple[Record, ...] = ()
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    @property
    def is_split(self):
        return any(r.split is not None for r in self.records)

    def subset(self, split):
        return DatasetManifest(tuple(r for r in self.records if r.split == split), self.seed)

    def train(self):
        return self.subset("train")

    def val(self):
        return self.subset("val")

    def require_masks(self):
        for r in self.records:
            if r.mask_path is None:
                raise MissingAnnotationError(r.stem)
        return self

    def load_images(self, resolution=None, workers=None):
        """Load every image, returned in manifest order."""
        return _map_ordered(lambda r: load_image(r.image_path, resolution), self.records, workers)

    def load_masks(self, resolution=None, workers=None):
        self.require_masks()
        return _map_ordered(lambda r: load_mask(r.mask_path, resolution), self.records, workers)

    def write(self, path):
        """Persist as tab-separated ``image, mask|-, origin, split|-[, source]`` lines.

        Paths inside the manifest's directory are stored relative to it so a
        run directory can be moved or compared byte-for-byte.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        base = path.parent.resolve()
        lines = [f"# seed\t{'-' if self.seed is None else self.seed}"]
        for r in self.records:
            fields = [
                _rel(r.image_path, base),
                "-" if r.mask_path is None else _rel(r.mask_path, base),
                r.origin,
                r.split or "-",
            ]
            if r.source is not None:
                fields.append(r.source)
            lines.append("\t".join(fields))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.is_file():
            raise IngestionError(f"manifest not found: {path}")
        base = path.parent.resolve()
        seed = None
        records = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].strip().split("\t")
                if parts[0] == "seed" and len(parts) == 2 and parts[1] != "-":
                    seed = int(parts[1])
                continue
            parts = line.split("\t")
            if len(parts) not in (4, 5):
                raise IngestionError(f"{path}:{lineno}: expected 4 or 5 tab-separated fields, got {len(parts)}")
            image, mask, origin, split = parts[:4]
            records.append(Record(
                image_path=_abs(image, base),
                mask_path=None if mask == "-" else _abs(mask, base),
                origin=origin,
                split=None if split == "-" else split,
                source=parts[4] if len(parts) == 5 else None,
            ))
        return cls(tuple(records), seed)


def _rel(p, base):
    p = Path(p).resolve()
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.as_posix()


def _abs(p, base):
    p = Path(p)
    return str(p if p.is_absolute() else (base / p))


def _map_ordered(fn, items, workers):
    if not workers or workers <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _list_images(directory):
    return sorted(
        p for p in Path(directory).iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def load_dataset(root_dir, layout="labeled", verify=True) -> DatasetManifest:
    """Enumerate a dataset directory into a manifest sorted by image path.

    ``labeled`` expects ``root/images`` and ``root/masks`` with matching file
    stems; ``unlabeled`` takes every image directly under ``root``. With
    ``verify`` each file is decoded once so unreadable files fail here rather
    than mid-training.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IngestionError(f"dataset root does not exist: {root}")
    if layout == "labeled":
        image_dir, mask_dir = root / "images", root / "masks"
        for d in (image_dir, mask_dir):
            if not d.is_dir():
                raise IngestionError(f"labeled layout requires {d}")
        masks = {}
        for p in _list_images(mask_dir):
            # prefer png when a stem has several encodings
            if p.stem not in masks or p.suffix.lower() == ".png":
                masks[p.stem] = p
        records = []
        for img in _list_images(image_dir):
            if img.stem not in masks:
                raise MissingAnnotationError(img.stem)
            records.append(Record(str(img), str(masks[img.stem]), "real"))
    elif layout == "unlabeled":
        records = [Record(str(p), None, "real") for p in _list_images(root)]
    else:
        raise InvalidArgumentError(f"layout must be 'labeled' or 'unlabeled', got {layout!r}")
    records.sort(key=lambda r: r.image_path)
    if verify:
        for r in records:
            _open(r.image_path)
            if r.mask_path is not None:
                m = _open(r.mask_path)
                i = Image.open(r.image_path)
                if m.size != i.size:
                    raise ShapeError(
                        f"mask {r.mask_path} has size {m.size}, image has {i.size}"
                    )
    return DatasetManifest(tuple(records))


def split_dataset(manifest: DatasetManifest, val_count: int, seed: int) -> DatasetManifest:
    """Tag ``val_count`` records as ``val`` (chosen by ``seed``) and the rest ``train``."""
    n = len(manifest)
    if manifest.is_split:
        raise InvalidSplitError("manifest already carries split tags")
    if val_count < 0 or val_count >= n:
        raise InvalidSplitError(f"val_count must be in [0, {n}), got {val_count}")
    rng = np.random.default_rng(seed)
    val_idx = set(rng.choice(n, size=val_count, replace=False).tolist())
    records = tuple(
        replace(r, split="val" if i in val_idx else "train")
        for i, r in enumerate(manifest.records)
    )
    return DatasetManifest(records, seed)


def pair_random_mask(image, mask_pool: Sequence, seed) -> MaskedSample:
    """Pick one mask from ``mask_pool`` uniformly and punch it into ``image``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if len(mask_pool) == 0:
        raise InvalidArgumentError("mask_pool is empty")
    image = image if isinstance(image, RasterImage) else RasterImage(image)
    rng = np.random.default_rng(seed)
    chosen = mask_pool[int(rng.integers(len(mask_pool)))]
    chosen = chosen if isinstance(chosen, BinaryMask) else BinaryMask(chosen)
    if chosen.shape != (image.height, image.width):
        chosen = chosen.resize((image.height, image.width))
    return make_masked_sample(image, chosen)
