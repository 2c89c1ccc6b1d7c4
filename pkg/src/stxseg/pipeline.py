"""End-to-end command flows shared by the CLI and the test harness.

Three training modes:
- ``unet``          segmentor trained on labeled source slices, applied to the
                    target domain as-is;
- ``noshape``       translation GAN trained without the shape term, then a
                    fresh segmentor trained on (translated source, source mask)
                    pairs (optionally jointly, behind ``ablation.joint_noshape``);
- ``shapetransfer`` segmentor pretrained on source pairs, then the full joint
                    objective with the shape-preservation term.

Target-domain masks are read only by evaluation; training-time isolation is
enforced by the counters inside the train module and re-reported here.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import metrics, nets, phantom, train, viz
from .common import Domain, substream_seed
from .config import RunConfig, write_resolved_config
from .losses import LossWeights

MODES = ("unet", "noshape", "shapetransfer")

# dataset-generation substreams relative to a master seed
_SOURCE_DATA_STREAM, _TARGET_DATA_STREAM, _EVAL_DATA_STREAM = 21, 22, 23


class PipelineError(RuntimeError):
    pass


@dataclass
class ModeResult:
    mode: str
    checkpoint_path: Path
    gan_log_rows: list[dict]
    segmentor_history: list[train.EpochStats]
    target_mask_reads: int


def _fmt(value: float) -> str:
    return f"{value:.10g}"


# --- dataset provisioning -------------------------------------------------------


def ensure_phantom_datasets(cfg: RunConfig, data_dir: Path, master_seed: int, overwrite: bool = False) -> dict[str, Path]:
    """Generate source/target/eval phantom datasets if not already present."""
    ab = cfg.ablation
    plans = {
        "source": (Domain.SOURCE, ab.source_patients, ab.source_slices, _SOURCE_DATA_STREAM),
        "target": (Domain.TARGET, ab.target_patients, ab.target_slices, _TARGET_DATA_STREAM),
        "eval": (Domain.TARGET, ab.eval_patients, ab.eval_slices, _EVAL_DATA_STREAM),
    }
    manifests: dict[str, Path] = {}
    for name, (domain, patients, slices, stream) in plans.items():
        root = data_dir / name
        manifest_path = root / phantom.MANIFEST_NAME
        if overwrite or not manifest_path.is_file():
            phantom.generate_dataset(
                cfg.phantom,
                n_patients=patients,
                slices_per_patient=slices,
                domain=domain,
                seed=substream_seed(master_seed, stream),
                out_dir=root,
                overwrite=True,
            )
        manifests[name] = manifest_path
    return manifests


def _load_training_data(cfg: RunConfig, need_target: bool):
    if not cfg.data.source_manifest:
        raise PipelineError("config.data.source_manifest is not set")
    size = cfg.data.target_size or cfg.arch.image_size
    source = data_mod.load_dataset(cfg.data.source_manifest, require_masks=True, target_size=size)
    target = None
    if need_target:
        if not cfg.data.target_manifest:
            raise PipelineError("config.data.target_manifest is not set")
        target = data_mod.load_dataset(cfg.data.target_manifest, require_masks=False, target_size=size)
    return source, target


# --- training modes ---------------------------------------------------------------


def run_mode(
    cfg: RunConfig,
    mode: str,
    out_dir: Path | str,
    pretrained_checkpoint: Path | None = None,
) -> ModeResult:
    """Run one training mode end to end, leaving artifacts under out_dir."""
    if mode not in MODES:
        raise PipelineError(f"unknown mode {mode!r}; expected one of {MODES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    tcfg = cfg.train

    mask_reads = 0
    gan_rows: list[dict] = []
    seg_history: list[train.EpochStats] = []

    if mode == "unet":
        source, _ = _load_training_data(cfg, need_target=False)
        bundle, seg_history = train.pretrain_segmentor(source, cfg.arch, tcfg)
        epoch_done = tcfg.pretrain_epochs
    elif mode == "noshape":
        source, target = _load_training_data(cfg, need_target=True)
        tcfg = dataclasses.replace(tcfg, weights=LossWeights(tcfg.weights.lambda_cyc, 0.0))
        bundle = nets.init_bundle(cfg.arch, tcfg.seed)
        result = train.train_shape_transfer_gan(
            source,
            target,
            bundle,
            tcfg,
            train_segmentor=cfg.ablation.joint_noshape,
            checkpoint_dir=out_dir / "checkpoints",
        )
        gan_rows, mask_reads = result.log_rows, result.mask_reads.target_reads
        if not cfg.ablation.joint_noshape:
            seg_history = train.posttrain_segmentor_on_translations(source, bundle, tcfg)
        epoch_done = tcfg.epochs
    else:  # shapetransfer
        source, target = _load_training_data(cfg, need_target=True)
        if pretrained_checkpoint is not None:
            bundle = train.checkpoint_load(pretrained_checkpoint).bundle
        else:
            bundle, seg_history = train.pretrain_segmentor(source, cfg.arch, tcfg)
        result = train.train_shape_transfer_gan(
            source, target, bundle, tcfg, train_segmentor=True, checkpoint_dir=out_dir / "checkpoints"
        )
        gan_rows, mask_reads = result.log_rows, result.mask_reads.target_reads
        epoch_done = tcfg.epochs

    checkpoint_path = out_dir / "checkpoint.ckpt"
    train.checkpoint_save(train.Checkpoint(bundle=bundle, optimizer_state=None, config=tcfg, epoch=epoch_done), checkpoint_path)

    if gan_rows:
        train.write_training_log(gan_rows, out_dir / "train_log.csv")
        viz.plot_loss_curves(gan_rows, out_dir / "loss_curves.png", title=f"{mode} losses")
    if seg_history:
        _write_segmentor_log(seg_history, out_dir / "segmentor_log.csv")
        viz.plot_pretrain_curves(seg_history, out_dir / "segmentor_curve.png", title=f"{mode} segmentor")
    return ModeResult(
        mode=mode,
        checkpoint_path=checkpoint_path,
        gan_log_rows=gan_rows,
        segmentor_history=seg_history,
        target_mask_reads=mask_reads,
    )


def _write_segmentor_log(history: list[train.EpochStats], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "cross_entropy", "dice_myo"])
        for h in history:
            writer.writerow([h.epoch, _fmt(h.loss), _fmt(h.dice_myo)])


# --- inference ----------------------------------------------------------------------


def run_segment(checkpoint_path: Path | str, input_manifest: Path | str, out_dir: Path | str) -> Path:
    """Segment every image in a manifest; write masks + a predictions manifest."""
    ckpt = train.checkpoint_load(checkpoint_path)
    bundle = ckpt.bundle
    dataset = data_mod.load_dataset(input_manifest, require_masks=False, target_size=bundle.arch.image_size)

    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    source_manifest = phantom.load_manifest(input_manifest)

    entries = []
    samples = dataset.samples
    images = np.stack([s.image for s in samples])[:, None]
    predicted = train.segment(bundle, images)
    for sample, entry, pred in zip(samples, source_manifest.entries, predicted):
        stem = f"p{sample.patient_id:03d}_s{sample.slice_index:02d}.png"
        phantom.write_mask_file(pred, out_dir / "masks" / stem)
        entries.append(
            phantom.ManifestEntry(
                patient_id=sample.patient_id,
                slice_index=sample.slice_index,
                domain=sample.domain,
                image_path=os.path.relpath(source_manifest.root / entry.image_path, out_dir),
                mask_path=f"masks/{stem}",
                seed=entry.seed,
            )
        )
    manifest = phantom.DatasetManifest(
        root=out_dir, domain=dataset.domain, image_size=bundle.arch.image_size, entries=tuple(entries)
    )
    phantom.save_manifest(manifest)
    return manifest.path


# --- evaluation ---------------------------------------------------------------------


@dataclass
class EvaluationResult:
    reports: list[metrics.MetricsReport]
    summary: metrics.CohortSummary


def _masks_by_patient(manifest_path: Path | str, target_size: int | None) -> dict[int, list]:
    dataset = data_mod.load_dataset(manifest_path, require_masks=True, target_size=target_size)
    counter = data_mod.MaskReadCounter()  # evaluation reads are legitimate; keep them scoped
    grouped: dict[int, list] = {}
    with data_mod.count_mask_reads(counter):
        for patient_id, slices in dataset.patients().items():
            grouped[patient_id] = [(s.slice_index, s.mask) for s in slices]
    return grouped


def run_evaluate(
    pred_manifest: Path | str,
    gt_manifest: Path | str,
    out_dir: Path | str,
    spacing=1.0,
    per_slice_distances: bool = False,
) -> EvaluationResult:
    """Volume metrics per patient plus the cohort summary; writes CSV artifacts."""
    pred = _masks_by_patient(pred_manifest, target_size=None)
    gt = _masks_by_patient(gt_manifest, target_size=None)
    if set(pred) != set(gt):
        raise PipelineError(
            f"patient sets differ between predictions {sorted(pred)} and ground truth {sorted(gt)}"
        )

    reports = []
    for patient_id in sorted(pred):
        pred_slices = [m for _, m in sorted(pred[patient_id])]
        gt_slices = [m for _, m in sorted(gt[patient_id])]
        if len(pred_slices) != len(gt_slices):
            raise PipelineError(f"patient {patient_id}: slice count mismatch")
        reports.append(
            metrics.evaluate_volume(
                pred_slices, gt_slices, spacing=spacing, patient_id=patient_id, per_slice_distances=per_slice_distances
            )
        )
    summary = metrics.aggregate_cohort(reports)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "metric", "structure", "value"])
        for r in reports:
            for s in metrics.Structure:
                writer.writerow([r.patient_id, "dice", s.value, _fmt(r.dice[s])])
                writer.writerow([r.patient_id, "jaccard", s.value, _fmt(r.jaccard[s])])
            for b in metrics.BoundaryName:
                writer.writerow([r.patient_id, "asd", b.value, _fmt(r.asd[b])])
                writer.writerow([r.patient_id, "hd", b.value, _fmt(r.hd[b])])
    with open(out_dir / "cohort_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "structure", "mean", "std", "n_defined"])
        for name, table in (("dice", summary.dice), ("jaccard", summary.jaccard)):
            for s in metrics.Structure:
                stat = table[s]
                writer.writerow([name, s.value, _fmt(stat.mean), _fmt(stat.std), stat.n_defined])
        for name, table in (("asd", summary.asd), ("hd", summary.hd)):
            for b in metrics.BoundaryName:
                stat = table[b]
                writer.writerow([name, b.value, _fmt(stat.mean), _fmt(stat.std), stat.n_defined])
    (out_dir / "summary.txt").write_text(metrics.summary_table(summary))
    return EvaluationResult(reports=reports, summary=summary)


# --- ablation ----------------------------------------------------------------------


@dataclass
class AblationResult:
    rows: list[dict]  # per (seed, mode): structure dice means
    table: dict[str, dict[str, float]]  # mode -> structure -> dice mean across seeds
    isolation: dict[str, int]  # "seed/mode" -> target mask reads during training
    comparison_csv: Path


def run_ablation(cfg: RunConfig, out_dir: Path | str) -> AblationResult:
    """Run all three modes over the configured master seeds, evaluate, compare.

    Sub-run artifacts are flushed as they are produced, so a failure preserves
    partial results; the exception is then re-raised.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)

    rows: list[dict] = []
    isolation: dict[str, int] = {}
    try:
        for master_seed in cfg.ablation.master_seeds:
            seed_dir = out_dir / f"seed_{master_seed}"
            manifests = ensure_phantom_datasets(cfg, seed_dir / "data", master_seed)
            seed_cfg = dataclasses.replace(
                cfg,
                seed=master_seed,
                data=dataclasses.replace(
                    cfg.data,
                    source_manifest=str(manifests["source"]),
                    target_manifest=str(manifests["target"]),
                    eval_manifest=str(manifests["eval"]),
                ),
            ).resolved()

            unet_checkpoint = None
            for mode in MODES:
                mode_dir = seed_dir / mode
                # the unet run doubles as shapetransfer's pretrained segmentor
                # (same seed, same data, same procedure)
                pretrained = unet_checkpoint if mode == "shapetransfer" else None
                result = run_mode(seed_cfg, mode, mode_dir, pretrained_checkpoint=pretrained)
                if mode == "unet":
                    unet_checkpoint = result.checkpoint_path
                isolation[f"{master_seed}/{mode}"] = result.target_mask_reads

                pred_manifest = run_segment(result.checkpoint_path, manifests["eval"], mode_dir / "predictions")
                evaluation = run_evaluate(pred_manifest, manifests["eval"], mode_dir / "eval")
                row = {"seed": master_seed, "mode": mode}
                for s in metrics.Structure:
                    row[f"dice_{s.value}"] = evaluation.summary.dice[s].mean
                rows.append(row)
                _write_rows_csv(rows, out_dir / "comparison_per_seed.csv")
    except Exception:
        _write_isolation(isolation, out_dir)
        raise

    table: dict[str, dict[str, float]] = {}
    for mode in MODES:
        mode_rows = [r for r in rows if r["mode"] == mode]
        table[mode] = {
            s.value: sum(r[f"dice_{s.value}"] for r in mode_rows) / len(mode_rows) for s in metrics.Structure
        }
    comparison_csv = out_dir / "comparison.csv"
    with open(comparison_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + [f"dice_{s.value}" for s in metrics.Structure])
        for mode in MODES:
            writer.writerow([mode] + [_fmt(table[mode][s.value]) for s in metrics.Structure])
    viz.plot_method_bars(table, out_dir / "comparison.png")
    _write_isolation(isolation, out_dir)
    return AblationResult(rows=rows, table=table, isolation=isolation, comparison_csv=comparison_csv)


def _write_rows_csv(rows: list[dict], path: Path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(rows[0]))
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row.values()])


def _write_isolation(isolation: dict[str, int], out_dir: Path) -> None:
    payload = {
        "target_mask_reads_during_training": isolation,
        "total": sum(isolation.values()),
    }
    (out_dir / "isolation_report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
