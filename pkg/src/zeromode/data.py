"""Optical-digits dataset handling: loading, balanced splits, noise injection.

The input format is the UCI optdigits text format: one image per line, 65
comma-separated integers (64 pixels row-major in [0, 16], then the digit
label).  ``data/optdigits_full.csv`` in this repository holds the full 5620
images; ``scripts/fetch_optdigits.py`` documents where it comes from.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

IMAGE_SIDE = 8
MAX_PIXEL = 16


class DataError(ValueError):
    """Malformed dataset file or impossible subset request."""


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray         # (8, 8) float64
    label: int
    id: int


@dataclass(frozen=True, eq=False)
class Dataset:
    images: tuple[Image, ...]
    fingerprint: str = field(default="")
    split_tag: str = "all"

    def __post_init__(self):
        if not self.fingerprint:
            object.__setattr__(self, "fingerprint", _fingerprint(self.images))

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def __getitem__(self, i) -> Image:
        return self.images[i]

    def labels(self) -> np.ndarray:
        return np.array([im.label for im in self.images])

    def ids(self) -> np.ndarray:
        return np.array([im.id for im in self.images])


@dataclass(frozen=True)
class NoiseSpec:
    """Uniform additive intensity noise, normalized to the image's own peak."""

    level: float
    seed: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be nonnegative")


def _fingerprint(images) -> str:
    h = hashlib.sha256()
    for im in images:
        h.update(np.int64(im.id).tobytes())
        h.update(np.int64(im.label).tobytes())
        h.update(np.ascontiguousarray(im.pixels, dtype=np.float64).tobytes())
    return h.hexdigest()


def load_optdigits(path) -> Dataset:
    """Parse a UCI-format optdigits CSV into a Dataset, ids in file order."""
    images = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 65:
                raise DataError(
                    f"{path}: line {lineno}: expected 65 fields, got {len(fields)}"
                )
            try:
                vals = [int(v) for v in fields]
            except ValueError as err:
                raise DataError(f"{path}: line {lineno}: {err}") from err
            pixels, label = vals[:64], vals[64]
            if not all(0 <= p <= MAX_PIXEL for p in pixels):
                raise DataError(
                    f"{path}: line {lineno}: pixel value outside [0, {MAX_PIXEL}]"
                )
            if not 0 <= label <= 9:
                raise DataError(f"{path}: line {lineno}: label {label} outside [0, 9]")
            images.append(
                Image(
                    pixels=np.array(pixels, dtype=float).reshape(IMAGE_SIDE, IMAGE_SIDE),
                    label=label,
                    id=len(images),
                )
            )
    if not images:
        raise DataError(f"{path}: no images found")
    return Dataset(images=tuple(images), split_tag="all")


def _draw(rng, pool: np.ndarray, need: int, what: str) -> np.ndarray:
    if len(pool) < need:
        raise DataError(
            f"not enough images of {what}: need {need}, dataset has {len(pool)}"
        )
    return rng.choice(pool, size=need, replace=False)


def subset_and_split(
    data: Dataset,
    task: str,
    target_digit: int,
    total: int,
    train_fraction: float,
    seed: int,
    other_digit: int | None = None,
) -> tuple[Dataset, Dataset]:
    """Draw a balanced subset and split it into train/test parts.

    one_vs_one draws total/2 images of the target digit and total/2 of
    ``other_digit``; one_vs_all draws total/2 of the target digit and total/2
    spread as uniformly as possible over the other nine digits.  The split is
    stratified per class so both parts keep the 50/50 balance, and everything
    is a pure function of the seed.
    """
    if task not in ("one_vs_one", "one_vs_all"):
        raise ValueError(f"unknown task {task!r}")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if total < 2 or total % 2:
        raise ValueError("total must be a positive even number")
    if not 0 <= target_digit <= 9:
        raise ValueError("target_digit must be a digit")
    if task == "one_vs_one":
        if other_digit is None:
            raise ValueError("one_vs_one needs other_digit")
        if other_digit == target_digit:
            raise ValueError("other_digit must differ from target_digit")

    rng = np.random.default_rng(seed)
    labels = data.labels()
    indices = np.arange(len(data))
    half = total // 2

    pos = _draw(rng, indices[labels == target_digit], half, f"digit {target_digit}")
    if task == "one_vs_one":
        neg = _draw(rng, indices[labels == other_digit], half, f"digit {other_digit}")
    else:
        others = [d for d in range(10) if d != target_digit]
        base, rem = divmod(half, len(others))
        bump = set(rng.permutation(others)[:rem].tolist())
        parts = [
            _draw(rng, indices[labels == d], base + (d in bump), f"digit {d}")
            for d in others
        ]
        neg = rng.permutation(np.concatenate(parts))

    n_train = int(round(train_fraction * half))
    if n_train == 0 or n_train == half:
        raise DataError("split leaves one side empty; adjust total or train_fraction")
    train_idx = np.concatenate([pos[:n_train], neg[:n_train]])
    test_idx = np.concatenate([pos[n_train:], neg[n_train:]])

    def subset(idx, tag):
        chosen = sorted(int(i) for i in idx)
        return Dataset(
            images=tuple(data.images[i] for i in chosen), split_tag=tag
        )

    return subset(train_idx, "train"), subset(test_idx, "test")


def dataset_from_ids(source: Dataset, ids, split_tag: str = "all") -> Dataset:
    by_id = {im.id: im for im in source}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"ids not present in dataset: {missing[:5]}...")
    return Dataset(images=tuple(by_id[i] for i in ids), split_tag=split_tag)


def add_noise(image: Image, spec: NoiseSpec, symmetric: bool = False) -> Image:
    """Perturb each pixel with independent uniform intensity noise.

    The noise amplitude is spec.level times the maximum pixel of the
    unperturbed image; draws are uniform on [0, amplitude) or, with
    ``symmetric``, on [-amplitude, amplitude).  Pixels are not clamped
    afterwards: the |MI| encoding accepts any real values.  The generator is
    seeded from (spec.seed, image.id), so a fixed spec maps a fixed image to
    a fixed result while different images stay uncorrelated.
    """
    if spec.level == 0:
        return image
    rng = np.random.default_rng((spec.seed, image.id))
    amplitude = spec.level * float(image.pixels.max())
    u = rng.uniform(size=image.pixels.shape)
    noise = (2.0 * u - 1.0) * amplitude if symmetric else u * amplitude
    return Image(pixels=image.pixels + noise, label=image.label, id=image.id)


def write_ids_csv(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("id\n")
        for im in dataset:
            f.write(f"{im.id}\n")


def read_ids_csv(path) -> list[int]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "id":
            raise DataError(f"{path}: expected header 'id', got {header!r}")
        ids = [int(line) for line in f if line.strip()]
    if not ids:
        raise DataError(f"{path}: empty split file")
    return ids
