"""Segmentation metrics: overlap (Dice, Jaccard) and surface distances (ASD, HD).

Conventions, also recorded in emitted output headers:
- both regions empty -> overlap = 1.0 (perfect agreement); exactly one empty
  -> overlap = 0.0 and surface distances undefined (reported as NaN);
- boundaries are region pixels with a 4-neighbor outside the region, the image
  border counting as outside;
- volume distances stack per-slice 2-D boundary points with the slice index
  scaled by the slice spacing; cohort std uses the n-1 (sample) divisor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .common import LV, MYO, RV


class Structure(str, Enum):
    LV = "lv"
    MYO = "myo"
    RV = "rv"


class BoundaryName(str, Enum):
    LV_ENDO = "lv_endo"  # boundary of the LV blood pool
    LV_EPI = "lv_epi"  # boundary of LV + myocardium
    RV_ENDO = "rv_endo"  # boundary of the RV region


STRUCTURE_LABELS = {Structure.LV: (LV,), Structure.MYO: (MYO,), Structure.RV: (RV,)}
BOUNDARY_REGIONS = {
    BoundaryName.LV_ENDO: (LV,),
    BoundaryName.LV_EPI: (LV, MYO),
    BoundaryName.RV_ENDO: (RV,),
}


@dataclass(frozen=True)
class BoundarySet:
    """Integer pixel coordinates of a region boundary plus physical spacing."""

    points: np.ndarray  # (N, 2) or (N, 3) int64
    spacing: tuple[float, ...]

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != len(self.spacing):
            raise ValueError(f"points shape {self.points.shape} does not match spacing {self.spacing}")

    def __len__(self) -> int:
        return self.points.shape[0]

    def scaled(self) -> np.ndarray:
        return self.points.astype(np.float64) * np.asarray(self.spacing, dtype=np.float64)


@dataclass(frozen=True)
class MetricsReport:
    """Per-structure overlap and per-boundary distance metrics for one patient."""

    patient_id: int
    dice: dict[Structure, float]
    jaccard: dict[Structure, float]
    asd: dict[BoundaryName, float]
    hd: dict[BoundaryName, float]


def _as_bool(region: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(region)
    if arr.dtype != bool:
        arr = arr.astype(bool)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def dice(seg: np.ndarray, gt: np.ndarray) -> float:
    """2|A n B| / (|A| + |B|); 1.0 when both regions are empty."""
    seg, gt = _as_bool(seg, "seg"), _as_bool(gt, "gt")
    if seg.shape != gt.shape:
        raise ValueError(f"shape mismatch: {seg.shape} vs {gt.shape}")
    denom = int(seg.sum()) + int(gt.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((seg & gt).sum()) / denom


def jaccard(seg: np.ndarray, gt: np.ndarray) -> float:
    """|A n B| / |A u B|; 1.0 when both regions are empty."""
    seg, gt = _as_bool(seg, "seg"), _as_bool(gt, "gt")
    if seg.shape != gt.shape:
        raise ValueError(f"shape mismatch: {seg.shape} vs {gt.shape}")
    union = int((seg | gt).sum())
    if union == 0:
        return 1.0
    return int((seg & gt).sum()) / union


def boundary_pixels(region: np.ndarray) -> np.ndarray:
    """Region pixels with at least one 4-neighbor outside (border = outside)."""
    region = _as_bool(region, "region")
    padded = np.pad(region, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return np.argwhere(region & ~interior).astype(np.int64)


def extract_boundary(
    mask: np.ndarray,
    boundary: BoundaryName,
    spacing: tuple[float, float] = (1.0, 1.0),
) -> BoundarySet:
    """Boundary point set of a named anatomical surface; may be empty."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    region = np.isin(mask, BOUNDARY_REGIONS[BoundaryName(boundary)])
    return BoundarySet(points=boundary_pixels(region), spacing=tuple(float(s) for s in spacing))


def _nearest_distances(from_pts: np.ndarray, to_pts: np.ndarray) -> np.ndarray:
    return cKDTree(to_pts).query(from_pts, k=1)[0]


def asd(b1: BoundarySet, b2: BoundarySet) -> float:
    """Average symmetric surface distance; NaN when either set is empty."""
    if len(b1) == 0 or len(b2) == 0:
        return math.nan
    p1, p2 = b1.scaled(), b2.scaled()
    d12 = _nearest_distances(p1, p2)
    d21 = _nearest_distances(p2, p1)
    return float((d12.sum() + d21.sum()) / (len(b1) + len(b2)))


def hd(b1: BoundarySet, b2: BoundarySet) -> float:
    """Hausdorff distance, max of the two directed distances; NaN when empty."""
    if len(b1) == 0 or len(b2) == 0:
        return math.nan
    p1, p2 = b1.scaled(), b2.scaled()
    return float(max(_nearest_distances(p1, p2).max(), _nearest_distances(p2, p1).max()))


def _stacked_boundary(slices: list[np.ndarray], boundary: BoundaryName, spacing3: tuple[float, float, float]) -> BoundarySet:
    slice_sp, row_sp, col_sp = spacing3
    pts = []
    for k, mask in enumerate(slices):
        b = extract_boundary(mask, boundary).points
        if len(b):
            pts.append(np.column_stack([np.full(len(b), k, dtype=np.int64), b]))
    points = np.concatenate(pts, axis=0) if pts else np.empty((0, 3), dtype=np.int64)
    return BoundarySet(points=points, spacing=(slice_sp, row_sp, col_sp))


def _normalize_spacing(spacing) -> tuple[float, float, float]:
    if np.isscalar(spacing):
        return (float(spacing),) * 3
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError(f"spacing must be a scalar or (slice, row, col), got {spacing}")
    return spacing


def evaluate_volume(
    seg_slices: list[np.ndarray],
    gt_slices: list[np.ndarray],
    spacing=1.0,
    patient_id: int = 0,
    per_slice_distances: bool = False,
) -> MetricsReport:
    """All metrics for one patient volume (an ordered stack of label slices).

    Overlaps are computed on the stacked 3-D voxel sets. Distances default to
    the stacked-boundary convention; ``per_slice_distances`` switches to the
    mean of per-slice 2-D distances over slices where both boundaries exist.
    """
    if len(seg_slices) != len(gt_slices) or not seg_slices:
        raise ValueError(f"slice count mismatch: {len(seg_slices)} vs {len(gt_slices)}")
    for s, g in zip(seg_slices, gt_slices):
        if np.asarray(s).shape != np.asarray(g).shape:
            raise ValueError("seg/gt slice shapes differ")
    spacing3 = _normalize_spacing(spacing)

    seg_vol = np.stack([np.asarray(s) for s in seg_slices])
    gt_vol = np.stack([np.asarray(g) for g in gt_slices])
    dice_scores, jaccard_scores = {}, {}
    for structure, labels in STRUCTURE_LABELS.items():
        seg_region = np.isin(seg_vol, labels)
        gt_region = np.isin(gt_vol, labels)
        dice_scores[structure] = dice(seg_region, gt_region)
        jaccard_scores[structure] = jaccard(seg_region, gt_region)

    asd_scores, hd_scores = {}, {}
    for boundary in BoundaryName:
        if per_slice_distances:
            a_vals, h_vals = [], []
            for s, g in zip(seg_slices, gt_slices):
                bs = extract_boundary(s, boundary, spacing3[1:])
                bg = extract_boundary(g, boundary, spacing3[1:])
                if len(bs) and len(bg):
                    a_vals.append(asd(bs, bg))
                    h_vals.append(hd(bs, bg))
            asd_scores[boundary] = float(np.mean(a_vals)) if a_vals else math.nan
            hd_scores[boundary] = float(np.mean(h_vals)) if h_vals else math.nan
        else:
            bs = _stacked_boundary(seg_slices, boundary, spacing3)
            bg = _stacked_boundary(gt_slices, boundary, spacing3)
            asd_scores[boundary] = asd(bs, bg)
            hd_scores[boundary] = hd(bs, bg)
    return MetricsReport(patient_id=patient_id, dice=dice_scores, jaccard=jaccard_scores, asd=asd_scores, hd=hd_scores)


@dataclass(frozen=True)
class CohortStat:
    mean: float
    std: float  # sample std (n-1 divisor); NaN for a single defined value
    n_defined: int


@dataclass(frozen=True)
class CohortSummary:
    """Cohort mean +- std per metric; undefined per-patient values excluded."""

    n_patients: int
    dice: dict[Structure, CohortStat]
    jaccard: dict[Structure, CohortStat]
    asd: dict[BoundaryName, CohortStat]
    hd: dict[BoundaryName, CohortStat]


def _aggregate(values: list[float]) -> CohortStat:
    defined = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if defined.size == 0:
        return CohortStat(mean=math.nan, std=math.nan, n_defined=0)
    std = float(defined.std(ddof=1)) if defined.size > 1 else math.nan
    return CohortStat(mean=float(defined.mean()), std=std, n_defined=int(defined.size))


def aggregate_cohort(reports: list[MetricsReport]) -> CohortSummary:
    if not reports:
        raise ValueError("aggregate_cohort needs at least one report")
    return CohortSummary(
        n_patients=len(reports),
        dice={s: _aggregate([r.dice[s] for r in reports]) for s in Structure},
        jaccard={s: _aggregate([r.jaccard[s] for r in reports]) for s in Structure},
        asd={b: _aggregate([r.asd[b] for r in reports]) for b in BoundaryName},
        hd={b: _aggregate([r.hd[b] for r in reports]) for b in BoundaryName},
    )


def summary_table(summary: CohortSummary) -> str:
    """Human-readable cohort table (mean +- sample std, NaN-excluding)."""
    lines = [
        f"cohort of {summary.n_patients} patients; mean +- sample std (n-1); "
        "undefined (empty-region) distances excluded per metric",
        "",
        f"{'metric':<10}{'lv':>16}{'rv':>16}{'myo':>16}",
    ]
    for name, table in (("dice", summary.dice), ("jaccard", summary.jaccard)):
        cells = [table[Structure.LV], table[Structure.RV], table[Structure.MYO]]
        lines.append(f"{name:<10}" + "".join(f"{c.mean:9.3f}+-{c.std:5.3f}" for c in cells))
    lines.append("")
    lines.append(f"{'metric':<10}{'lv_endo':>16}{'lv_epi':>16}{'rv_endo':>16}")
    for name, table in (("asd", summary.asd), ("hd", summary.hd)):
        cells = [table[BoundaryName.LV_ENDO], table[BoundaryName.LV_EPI], table[BoundaryName.RV_ENDO]]
        lines.append(f"{name:<10}" + "".join(f"{c.mean:9.3f}+-{c.std:5.3f}" for c in cells))
    return "\n".join(lines) + "\n"
