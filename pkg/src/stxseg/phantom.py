"""Synthetic two-domain cardiac-like phantom with exact ground-truth masks.

Geometry is an LV disk inside a closed myocardial annulus, plus an optional
RV crescent hugging the outer boundary. The same geometry generator drives
both domains; only appearance differs. SOURCE slices get high class contrast
and sharp boundaries; TARGET slices get compressed contrast, bright patches
inside the myocardium, blurred boundaries, and stronger noise.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .common import BG, LV, MYO, RV, Domain, substream_seed

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

# Substream tags. Geometry streams never see the domain, so the mask of a
# given (seed, patient, slice) is identical across domains.
_PATIENT_STREAM = 7
_SLICE_STREAM = 11
_APPEARANCE_STREAM = 13

# RV crescent width as a fraction of the sampled myocardium thickness.
_RV_WIDTH_FACTOR = 0.8

# Center jitter as a fraction of image size (patient-level, then per-slice).
_PATIENT_CENTER_JITTER = 0.06
_SLICE_CENTER_JITTER = 0.02

_MASK_PALETTE = [0, 0, 0, 220, 60, 60, 90, 200, 90, 80, 110, 230] + [0] * (768 - 12)


class PhantomSpecError(ValueError):
    """A PhantomSpec field violates its documented range."""


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters controlling geometry, intensity, and noise of generated slices.

    Radii and thicknesses are fractions of ``image_size``; intensities live in
    the normalized [-1, 1] range shared by the whole pipeline.
    """

    image_size: int = 128
    lv_radius_range: tuple[float, float] = (0.10, 0.16)
    myo_thickness_range: tuple[float, float] = (0.07, 0.11)
    rv_crescent: bool = True
    rv_angle_range: tuple[float, float] = (70.0, 150.0)  # angular extent, degrees
    scar_patch_count_range: tuple[int, int] = (1, 3)  # TARGET domain only
    scar_intensity: float = 0.70
    noise_sigma_source: float = 0.03
    noise_sigma_target: float = 0.06
    boundary_blur_target: float = 1.2  # Gaussian std in pixels
    # per-class mean intensity, indexed (BG, LV, MYO, RV)
    intensity_profile_source: tuple[float, float, float, float] = (-0.75, 0.75, -0.30, 0.55)
    intensity_profile_target: tuple[float, float, float, float] = (-0.45, 0.15, -0.10, 0.00)


@dataclass(frozen=True)
class PhantomSample:
    image: np.ndarray  # float32 (S, S) in [-1, 1]
    mask: np.ndarray  # uint8 (S, S) over {0,1,2,3}
    domain: Domain
    seed: int
    patient_id: int
    slice_index: int


@dataclass(frozen=True)
class ManifestEntry:
    patient_id: int
    slice_index: int
    domain: Domain
    image_path: str  # relative to the manifest directory
    mask_path: str
    seed: int


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    domain: Domain
    image_size: int
    entries: tuple[ManifestEntry, ...]

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME


def validate_spec(spec: PhantomSpec) -> None:
    """Check every PhantomSpec invariant; errors name the offending field."""

    def _range_ok(name, rng, lo, hi, open_ends=True):
        a, b = rng
        if not (a <= b):
            raise PhantomSpecError(f"{name}: min {a} > max {b}")
        inside = (lo < a and b < hi) if open_ends else (lo <= a and b <= hi)
        if not inside:
            bound = f"({lo}, {hi})" if open_ends else f"[{lo}, {hi}]"
            raise PhantomSpecError(f"{name}: ({a}, {b}) outside {bound}")

    if int(spec.image_size) != spec.image_size or spec.image_size < 32:
        raise PhantomSpecError(f"image_size: {spec.image_size} (must be an integer >= 32)")
    _range_ok("lv_radius_range", spec.lv_radius_range, 0.0, 0.5)
    _range_ok("myo_thickness_range", spec.myo_thickness_range, 0.0, 0.5)
    _range_ok("rv_angle_range", spec.rv_angle_range, 0.0, 360.0, open_ends=False)
    lo, hi = spec.scar_patch_count_range
    if not (0 <= lo <= hi) or int(lo) != lo or int(hi) != hi:
        raise PhantomSpecError(f"scar_patch_count_range: ({lo}, {hi}) must be integers with 0 <= min <= max")
    for name in ("noise_sigma_source", "noise_sigma_target", "boundary_blur_target"):
        if getattr(spec, name) < 0:
            raise PhantomSpecError(f"{name}: {getattr(spec, name)} must be >= 0")
    if not -1.0 <= spec.scar_intensity <= 1.0:
        raise PhantomSpecError(f"scar_intensity: {spec.scar_intensity} outside [-1, 1]")
    for name in ("intensity_profile_source", "intensity_profile_target"):
        profile = getattr(spec, name)
        if len(profile) != 4:
            raise PhantomSpecError(f"{name}: needs 4 per-class means, got {len(profile)}")
        if any(not -1.0 <= v <= 1.0 for v in profile):
            raise PhantomSpecError(f"{name}: {profile} has means outside [-1, 1]")
    # everything (max LV + max MYO + RV crescent + center jitter) must fit inside the frame
    reach = spec.lv_radius_range[1] + spec.myo_thickness_range[1] * (1.0 + _RV_WIDTH_FACTOR)
    reach += _PATIENT_CENTER_JITTER + _SLICE_CENTER_JITTER
    if reach >= 0.5:
        raise PhantomSpecError(
            f"lv_radius_range/myo_thickness_range: maximum structure reach {reach:.3f} of image size"
            " exceeds 0.5; shrink the radii or thickness"
        )


def _rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream_seed(*keys)))


def _sample_geometry(spec: PhantomSpec, seed: int, patient_id: int, slice_index: int):
    """Draw slice geometry. Patient-level base values, mild per-slice variation."""
    s = float(spec.image_size)
    prng = _rng(seed, patient_id, _PATIENT_STREAM)
    cy = s / 2 + prng.uniform(-_PATIENT_CENTER_JITTER, _PATIENT_CENTER_JITTER) * s
    cx = s / 2 + prng.uniform(-_PATIENT_CENTER_JITTER, _PATIENT_CENTER_JITTER) * s
    lv_r_base = prng.uniform(*spec.lv_radius_range) * s
    myo_t = prng.uniform(*spec.myo_thickness_range) * s
    rv_dir = prng.uniform(0.0, 360.0)
    rv_extent = prng.uniform(*spec.rv_angle_range)

    srng = _rng(seed, patient_id, slice_index, _SLICE_STREAM)
    lv_r = lv_r_base * srng.uniform(0.85, 1.0)  # apex-to-base style taper
    cy += srng.uniform(-_SLICE_CENTER_JITTER, _SLICE_CENTER_JITTER) * s
    cx += srng.uniform(-_SLICE_CENTER_JITTER, _SLICE_CENTER_JITTER) * s
    return cy, cx, lv_r, myo_t, rv_dir, rv_extent


def _rasterize_mask(spec: PhantomSpec, cy, cx, lv_r, myo_t, rv_dir, rv_extent) -> np.ndarray:
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.hypot(yy - cy, xx - cx)
    r_out = lv_r + myo_t

    mask = np.full((size, size), BG, dtype=np.uint8)
    if spec.rv_crescent:
        angles = np.degrees(np.arctan2(yy - cy, xx - cx))
        delta = np.abs((angles - rv_dir + 180.0) % 360.0 - 180.0)
        rv_band = (dist > r_out) & (dist <= r_out + _RV_WIDTH_FACTOR * myo_t)
        mask[rv_band & (delta <= rv_extent / 2)] = RV
    mask[(dist > lv_r) & (dist <= r_out)] = MYO
    mask[dist <= lv_r] = LV
    return mask


def _paint_scars(img: np.ndarray, myo_region: np.ndarray, spec: PhantomSpec, rng: np.random.Generator) -> None:
    """Stamp bright blobs (unions of small disks) clipped to the myocardium."""
    lo, hi = spec.scar_patch_count_range
    n_patches = int(rng.integers(lo, hi, endpoint=True))
    if n_patches == 0:
        return
    size = img.shape[0]
    myo_idx = np.argwhere(myo_region)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    scar = np.zeros_like(myo_region)
    for _ in range(n_patches):
        anchor = myo_idx[rng.integers(len(myo_idx))]
        n_disks = int(rng.integers(2, 4, endpoint=True))
        for _ in range(n_disks):
            center = anchor + rng.normal(0.0, 1.2, size=2)
            radius = rng.uniform(1.0, 2.2)
            scar |= np.hypot(yy - center[0], xx - center[1]) <= radius
    img[scar & myo_region] = spec.scar_intensity


def generate_sample(
    spec: PhantomSpec,
    domain: Domain,
    seed: int,
    patient_id: int = 0,
    slice_index: int = 0,
) -> PhantomSample:
    """Generate one slice. Pure function of (spec, domain, seed, patient_id, slice_index)."""
    validate_spec(spec)
    domain = Domain(domain)
    geometry = _sample_geometry(spec, seed, patient_id, slice_index)
    mask = _rasterize_mask(spec, *geometry)

    arng = _rng(seed, patient_id, slice_index, domain.code, _APPEARANCE_STREAM)
    profile = spec.intensity_profile_target if domain is Domain.TARGET else spec.intensity_profile_source
    img = np.asarray(profile, dtype=np.float64)[mask]
    if domain is Domain.TARGET:
        _paint_scars(img, mask == MYO, spec, arng)
        if spec.boundary_blur_target > 0:
            img = gaussian_filter(img, sigma=spec.boundary_blur_target)
        img = img + arng.normal(0.0, spec.noise_sigma_target, img.shape)
    else:
        img = img + arng.normal(0.0, spec.noise_sigma_source, img.shape)
    img = np.clip(img, -1.0, 1.0).astype(np.float32)
    return PhantomSample(image=img, mask=mask, domain=domain, seed=seed, patient_id=patient_id, slice_index=slice_index)


# --- file encodings -----------------------------------------------------------

def encode_image(values: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> uint16 gray levels."""
    return np.round((np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * 65535.0).astype(np.uint16)


def decode_image_file(path: Path | str) -> np.ndarray:
    """Read a grayscale image file into a raw float32 intensity array."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image, got shape {arr.shape}")
    return arr.astype(np.float32)


def write_image_file(values: np.ndarray, path: Path) -> None:
    Image.fromarray(encode_image(values)).save(path)


def write_mask_file(mask: np.ndarray, path: Path) -> None:
    im = Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="P")
    im.putpalette(_MASK_PALETTE)
    im.save(path)


def decode_mask_file(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mask file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im).astype(np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel label image, got shape {arr.shape}")
    return arr


# --- dataset writing ----------------------------------------------------------

def generate_dataset(
    spec: PhantomSpec,
    n_patients: int,
    slices_per_patient: int,
    domain: Domain,
    seed: int,
    out_dir: Path | str,
    overwrite: bool = False,
) -> DatasetManifest:
    """Write a phantom dataset (images, masks, manifest) under ``out_dir``.

    Deterministic: repeated calls with the same arguments produce byte-identical
    files. Refuses to clobber an existing manifest unless ``overwrite`` is set.
    """
    validate_spec(spec)
    domain = Domain(domain)
    if n_patients < 1:
        raise ValueError(f"n_patients must be >= 1, got {n_patients}")
    if slices_per_patient < 1:
        raise ValueError(f"slices_per_patient must be >= 1, got {slices_per_patient}")

    root = Path(out_dir)
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists() and not overwrite:
        raise FileExistsError(f"refusing to overwrite existing manifest: {manifest_path} (pass overwrite)")
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)

    entries = []
    for patient_id in range(n_patients):
        for slice_index in range(slices_per_patient):
            sample = generate_sample(spec, domain, seed, patient_id, slice_index)
            stem = f"p{patient_id:03d}_s{slice_index:02d}.png"
            image_rel, mask_rel = f"images/{stem}", f"masks/{stem}"
            write_image_file(sample.image, root / image_rel)
            write_mask_file(sample.mask, root / mask_rel)
            entries.append(
                ManifestEntry(
                    patient_id=patient_id,
                    slice_index=slice_index,
                    domain=domain,
                    image_path=image_rel,
                    mask_path=mask_rel,
                    seed=seed,
                )
            )

    manifest = DatasetManifest(root=root, domain=domain, image_size=spec.image_size, entries=tuple(entries))
    save_manifest(manifest)
    return manifest


def save_manifest(manifest: DatasetManifest) -> None:
    payload = {
        "format_version": MANIFEST_VERSION,
        "domain": manifest.domain.value,
        "image_size": manifest.image_size,
        "samples": [
            {
                "patient_id": e.patient_id,
                "slice_index": e.slice_index,
                "domain": e.domain.value,
                "image_path": e.image_path,
                "mask_path": e.mask_path,
                "seed": e.seed,
            }
            for e in manifest.entries
        ],
    }
    manifest.path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    payload = json.loads(path.read_text())
    version = payload.get("format_version")
    if version != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest format_version {version!r} (expected {MANIFEST_VERSION})")
    entries = tuple(
        ManifestEntry(
            patient_id=int(e["patient_id"]),
            slice_index=int(e["slice_index"]),
            domain=Domain(e["domain"]),
            image_path=e["image_path"],
            mask_path=e.get("mask_path"),
            seed=int(e.get("seed", 0)),
        )
        for e in payload["samples"]
    )
    return DatasetManifest(
        root=path.parent,
        domain=Domain(payload["domain"]),
        image_size=int(payload.get("image_size", 0)),
        entries=entries,
    )


def spec_to_dict(spec: PhantomSpec) -> dict:
    return dataclasses.asdict(spec)
