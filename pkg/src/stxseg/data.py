"""Dataset loading, preprocessing, and deterministic batching.

Preprocessing pipeline per image: rescale the per-image [min, max] to [-1, 1],
bilinear-resize the short side to the working size, center crop. Masks follow
the same geometric path with nearest-neighbor resampling so the label alphabet
survives. Both resamplers use half-pixel centers.

Mask isolation: masks are only reachable through ``Sample.mask``, which
notifies any active ``MaskReadCounter``. Training wraps itself in
``count_mask_reads`` and asserts that the target-domain read count is zero.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import phantom
from .common import Domain, validate_mask_alphabet


class DataError(ValueError):
    """A dataset file or array violates the loading contract."""


# --- mask-read accounting -------------------------------------------------------

class MaskReadCounter:
    """Counts mask reads per domain while registered via count_mask_reads."""

    def __init__(self) -> None:
        self.counts = {Domain.SOURCE: 0, Domain.TARGET: 0}

    def record(self, domain: Domain) -> None:
        self.counts[domain] += 1

    @property
    def target_reads(self) -> int:
        return self.counts[Domain.TARGET]

    @property
    def source_reads(self) -> int:
        return self.counts[Domain.SOURCE]


_ACTIVE_COUNTERS: list[MaskReadCounter] = []


@contextmanager
def count_mask_reads(counter: MaskReadCounter):
    """Route every Sample.mask access inside the block through `counter`."""
    _ACTIVE_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTERS.remove(counter)


# --- core containers --------------------------------------------------------------

@dataclass
class Sample:
    image: np.ndarray  # float32 (S, S), preprocessed to [-1, 1]
    patient_id: int
    slice_index: int
    domain: Domain
    mask_array: np.ndarray | None = field(default=None, repr=False)

    @property
    def has_mask(self) -> bool:
        return self.mask_array is not None

    @property
    def mask(self) -> np.ndarray | None:
        # the single instrumented access path; see count_mask_reads
        for counter in _ACTIVE_COUNTERS:
            counter.record(self.domain)
        return self.mask_array


@dataclass
class Dataset:
    samples: list[Sample]
    manifest_path: Path | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def image_size(self) -> int:
        return self.samples[0].image.shape[0]

    @property
    def domain(self) -> Domain:
        return self.samples[0].domain

    def patients(self) -> dict[int, list[Sample]]:
        grouped: dict[int, list[Sample]] = {}
        for s in self.samples:
            grouped.setdefault(s.patient_id, []).append(s)
        for slices in grouped.values():
            slices.sort(key=lambda s: s.slice_index)
        return grouped


@dataclass
class Batch:
    images: np.ndarray  # float32 (B, 1, S, S)
    masks: np.ndarray | None  # uint8 (B, S, S) or None
    domain: Domain

    def __len__(self) -> int:
        return self.images.shape[0]


# --- preprocessing ---------------------------------------------------------------

def _scaled_size(in_h: int, in_w: int, target: int) -> tuple[int, int]:
    """Short side -> target, long side scaled proportionally (round half up)."""
    if in_h <= in_w:
        return target, max(target, int(np.floor(in_w * target / in_h + 0.5)))
    return max(target, int(np.floor(in_h * target / in_w + 0.5))), target


def _center_crop(arr: np.ndarray, target: int) -> np.ndarray:
    h, w = arr.shape
    top, left = (h - target) // 2, (w - target) // 2
    return arr[top : top + target, left : left + target]


def preprocess(image: np.ndarray, target_size: int) -> np.ndarray:
    """Raw 2-D intensities -> float32 (target_size, target_size) in [-1, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DataError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("image contains non-finite values")
    if target_size < 1:
        raise DataError(f"target_size must be >= 1, got {target_size}")

    lo, hi = arr.min(), arr.max()
    if hi > lo:
        arr = (arr - lo) / (hi - lo) * 2.0 - 1.0
    else:
        arr = np.zeros_like(arr)  # constant image -> all zeros

    out_h, out_w = _scaled_size(*arr.shape, target_size)
    if (out_h, out_w) != arr.shape:
        t = torch.from_numpy(arr)[None, None]
        t = torch.nn.functional.interpolate(t, size=(out_h, out_w), mode="bilinear", align_corners=False)
        arr = t[0, 0].numpy()
    return np.ascontiguousarray(_center_crop(arr, target_size), dtype=np.float32)


def preprocess_mask(mask: np.ndarray, target_size: int) -> np.ndarray:
    """Label map -> uint8 (target_size, target_size); nearest-neighbor, same crop."""
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise DataError(f"expected a non-empty 2-D mask, got shape {arr.shape}")
    try:
        validate_mask_alphabet(arr)
    except ValueError as exc:
        raise DataError(str(exc)) from None

    arr = arr.astype(np.uint8)
    out_h, out_w = _scaled_size(*arr.shape, target_size)
    if (out_h, out_w) != arr.shape:
        in_h, in_w = arr.shape
        rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64), in_h - 1)
        cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64), in_w - 1)
        arr = arr[np.ix_(rows, cols)]
    return np.ascontiguousarray(_center_crop(arr, target_size))


# --- loading ----------------------------------------------------------------------

def load_dataset(
    manifest_path: Path | str,
    require_masks: bool,
    target_size: int | None = None,
) -> Dataset:
    """Load and preprocess every sample referenced by a manifest.

    With ``target_size=None`` the images keep their native size, which must
    then be square and uniform across the dataset.
    """
    manifest = phantom.load_manifest(manifest_path)
    samples: list[Sample] = []
    for entry in manifest.entries:
        image_raw = phantom.decode_image_file(manifest.root / entry.image_path)
        if target_size is None:
            h, w = image_raw.shape
            if h != w:
                raise DataError(f"{entry.image_path}: non-square image {h}x{w}; pass target_size to resize")
            size = h
        else:
            size = target_size
        image = preprocess(image_raw, size)

        mask = None
        if entry.mask_path:
            mask_file = manifest.root / entry.mask_path
            if mask_file.is_file():
                mask_raw = phantom.decode_mask_file(mask_file)
                try:
                    validate_mask_alphabet(mask_raw, where=str(mask_file))
                except ValueError as exc:
                    raise DataError(str(exc)) from None
                mask = preprocess_mask(mask_raw, size)
            elif require_masks:
                raise DataError(f"mask file missing: {mask_file}")
        elif require_masks:
            raise DataError(f"manifest entry (patient {entry.patient_id}, slice {entry.slice_index}) has no mask_path")

        if image.shape != (samples[0].image.shape if samples else image.shape):
            raise DataError(f"{entry.image_path}: shape {image.shape} differs from {samples[0].image.shape}")
        samples.append(
            Sample(
                image=image,
                mask_array=mask,
                patient_id=entry.patient_id,
                slice_index=entry.slice_index,
                domain=entry.domain,
            )
        )
    if not samples:
        raise DataError(f"{manifest_path}: manifest lists no samples")
    return Dataset(samples=samples, manifest_path=Path(manifest_path))


# --- batching ---------------------------------------------------------------------

def batch_iterator(
    dataset: Dataset,
    batch_size: int,
    shuffle_seed: int,
    epoch: int,
    include_masks: bool = False,
):
    """Yield batches in a permutation determined by (shuffle_seed, epoch).

    Every sample appears exactly once per epoch; the final batch may be short.
    Masks are only read (and counted) when ``include_masks`` is set.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    if n == 0:
        raise DataError("cannot iterate an empty dataset")
    domain = dataset.samples[0].domain
    if any(s.domain != domain for s in dataset.samples):
        raise DataError("batch_iterator expects a single-domain dataset")

    order = np.random.Generator(np.random.PCG64(np.random.SeedSequence([shuffle_seed, epoch]))).permutation(n)
    for start in range(0, n, batch_size):
        chosen = [dataset.samples[i] for i in order[start : start + batch_size]]
        images = np.stack([s.image for s in chosen])[:, None]
        masks = None
        if include_masks:
            pulled = [s.mask for s in chosen]
            if any(m is None for m in pulled):
                raise DataError("include_masks requested but a sample has no mask")
            masks = np.stack(pulled)
        yield Batch(images=images, masks=masks, domain=domain)
