"""Training orchestration: segmentor pretraining, joint GAN training, inference.

Per joint step, with a labeled source batch x and an unlabeled target batch y:
(a) discriminators maximize the signed adversarial objective on detached
fakes, (b) generators minimize non-saturating adversarial + weighted cycle +
weighted shape terms, (c) the segmentor minimizes the shape term on fresh
post-update translations. Each role has its own Adam optimizer, so a sub-step
can only move its own parameter group.

Determinism: all stochasticity is the seeded init plus per-epoch permutations
keyed on (seed, epoch), so checkpoint-resume replays the exact trajectory.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import losses, metrics, nets
from .common import MYO, Domain, dataclass_from_dict, substream_seed

CHECKPOINT_VERSION = 1

# shuffle-stream tags, one per training phase
_PRETRAIN_STREAM, _GAN_SOURCE_STREAM, _GAN_TARGET_STREAM, _POSTTRAIN_STREAM = 101, 102, 103, 104

LOG_COLUMNS = ("epoch", "step", "l_gan1", "l_gan2", "l_gan", "l_cyc", "l_shape", "l_total", "wall_time_s")


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4
    lr_gan: float = 1e-4
    lr_seg: float = 1e-5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    seed: int = 0
    checkpoint_every: int = 50  # epochs
    log_every: int = 1  # steps
    pretrain_epochs: int = 30
    deterministic: bool = True
    device: str = "cpu"

    def __post_init__(self):
        if self.lr_gan <= 0 or self.lr_seg <= 0:
            raise ValueError(f"learning rates must be > 0 (lr_gan={self.lr_gan}, lr_seg={self.lr_seg})")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"epochs and batch_size must be >= 1 (epochs={self.epochs}, batch_size={self.batch_size})")
        if self.pretrain_epochs < 0 or self.log_every < 1 or self.checkpoint_every < 1:
            raise ValueError("pretrain_epochs must be >= 0; log_every and checkpoint_every >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dice_myo: float


@dataclass
class GanTrainResult:
    bundle: nets.ModelBundle
    log_rows: list[dict]
    optimizer_state: dict
    mask_reads: data_mod.MaskReadCounter


def _apply_determinism(cfg: TrainConfig) -> None:
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.manual_seed(cfg.seed)


def _adam(params, lr: float, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(cfg.adam_beta1, cfg.adam_beta2))


def _to_tensors(batch: data_mod.Batch, device: str, with_mask: bool):
    images = torch.from_numpy(batch.images).to(device)
    if not with_mask:
        return images, None
    return images, torch.from_numpy(batch.masks.astype(np.int64)).to(device)


def _check_bundle_matches(bundle: nets.ModelBundle, dataset: data_mod.Dataset, name: str) -> None:
    if dataset.image_size != bundle.arch.image_size:
        raise TrainingError(
            f"{name} dataset size {dataset.image_size} does not match architecture size {bundle.arch.image_size}"
        )


def _require_masks(dataset: data_mod.Dataset, name: str) -> None:
    missing = [i for i, s in enumerate(dataset.samples) if not s.has_mask]
    if missing:
        raise TrainingError(f"{name} dataset must carry masks; {len(missing)} samples have none")


def _batch_dice_myo(logits: torch.Tensor, mask: torch.Tensor) -> float:
    pred = logits.argmax(dim=1)
    scores = []
    for p, m in zip(pred, mask):
        scores.append(metrics.dice((p == MYO).numpy(), (m == MYO).numpy()))
    return float(np.mean(scores))


def _segmentor_epochs(
    bundle: nets.ModelBundle,
    dataset: data_mod.Dataset,
    cfg: TrainConfig,
    n_epochs: int,
    shuffle_stream: int,
    translate: bool,
) -> list[EpochStats]:
    """Train S for n_epochs on (x, m) pairs, optionally translating x through G1."""
    opt = _adam(bundle.s.parameters(), cfg.lr_seg, cfg)
    shuffle_seed = substream_seed(cfg.seed, shuffle_stream)
    history: list[EpochStats] = []
    counter = data_mod.MaskReadCounter()
    with data_mod.count_mask_reads(counter):
        for epoch in range(n_epochs):
            ce_values, dice_values = [], []
            for batch in data_mod.batch_iterator(dataset, cfg.batch_size, shuffle_seed, epoch, include_masks=True):
                x, m = _to_tensors(batch, cfg.device, with_mask=True)
                if translate:
                    with torch.no_grad():
                        x = nets.generator_forward(bundle.g1, x)
                opt.zero_grad(set_to_none=True)
                logits = nets.segmentor_forward(bundle.s, x)
                loss = losses.shape_loss(m, logits)
                loss.backward()
                opt.step()
                ce_values.append(float(loss))
                dice_values.append(_batch_dice_myo(logits.detach(), m))
            history.append(EpochStats(epoch=epoch, loss=float(np.mean(ce_values)), dice_myo=float(np.mean(dice_values))))
    if counter.target_reads:
        raise TrainingError(f"target-domain masks were read {counter.target_reads} times during segmentor training")
    return history


def pretrain_segmentor(
    source_dataset: data_mod.Dataset,
    arch: nets.ArchConfig,
    cfg: TrainConfig,
) -> tuple[nets.ModelBundle, list[EpochStats]]:
    """Train S on labeled source pairs; G and D stay freshly initialized."""
    _apply_determinism(cfg)
    bundle = nets.init_bundle(arch, cfg.seed)
    _check_bundle_matches(bundle, source_dataset, "source")
    _require_masks(source_dataset, "source")
    history = _segmentor_epochs(bundle, source_dataset, cfg, cfg.pretrain_epochs, _PRETRAIN_STREAM, translate=False)
    return bundle, history


def posttrain_segmentor_on_translations(
    source_dataset: data_mod.Dataset,
    bundle: nets.ModelBundle,
    cfg: TrainConfig,
    n_epochs: int | None = None,
) -> list[EpochStats]:
    """Train S on (G1(x), m_x) pairs with G1 frozen (the no-shape pipeline)."""
    _apply_determinism(cfg)
    _check_bundle_matches(bundle, source_dataset, "source")
    _require_masks(source_dataset, "source")
    epochs = cfg.pretrain_epochs if n_epochs is None else n_epochs
    return _segmentor_epochs(bundle, source_dataset, cfg, epochs, _POSTTRAIN_STREAM, translate=True)


def _gan_step(
    bundle: nets.ModelBundle,
    optimizers: dict[str, torch.optim.Adam],
    x: torch.Tensor,
    m_x: torch.Tensor,
    y: torch.Tensor,
    weights: losses.LossWeights,
    train_segmentor: bool,
    substep_hook=None,
) -> losses.LossReport:
    fake_y = nets.generator_forward(bundle.g1, x)
    fake_x = nets.generator_forward(bundle.g2, y)
    rec_x = nets.generator_forward(bundle.g2, fake_y)
    rec_y = nets.generator_forward(bundle.g1, fake_x)

    # (a) discriminators, on detached fakes
    optimizers["d"].zero_grad(set_to_none=True)
    adv_value_1 = losses.adversarial_value(
        nets.discriminator_forward(bundle.d1, y), nets.discriminator_forward(bundle.d1, fake_y.detach())
    )
    adv_value_2 = losses.adversarial_value(
        nets.discriminator_forward(bundle.d2, x), nets.discriminator_forward(bundle.d2, fake_x.detach())
    )
    d_loss = -(adv_value_1 + adv_value_2) / 2
    d_loss.backward()
    optimizers["d"].step()
    if substep_hook:
        substep_hook("d", bundle)

    # (b) generators; shape couples S(G1(x)) to m_x when weighted
    gen_adv_1 = losses.adversarial_loss_g(nets.discriminator_forward(bundle.d1, fake_y))
    gen_adv_2 = losses.adversarial_loss_g(nets.discriminator_forward(bundle.d2, fake_x))
    cyc_1, cyc_2, _ = losses.cycle_loss(x, rec_x, y, rec_y)
    if weights.lambda_shape > 0:
        shape_g = losses.shape_loss(m_x, nets.segmentor_forward(bundle.s, fake_y))
    else:
        shape_g = torch.zeros((), dtype=x.dtype, device=x.device)
    components = losses.LossComponents(
        adv_value_1=adv_value_1.detach(),
        adv_value_2=adv_value_2.detach(),
        gen_adv_1=gen_adv_1,
        gen_adv_2=gen_adv_2,
        cyc_1=cyc_1,
        cyc_2=cyc_2,
        shape=shape_g,
    )
    report, targets = losses.total_objective(components, weights)
    optimizers["g"].zero_grad(set_to_none=True)
    targets.generator.backward()
    optimizers["g"].step()
    if substep_hook:
        substep_hook("g", bundle)

    # (c) segmentor, on fresh post-update translations
    if train_segmentor:
        with torch.no_grad():
            fresh_fake_y = nets.generator_forward(bundle.g1, x)
        optimizers["s"].zero_grad(set_to_none=True)
        shape_s = losses.shape_loss(m_x, nets.segmentor_forward(bundle.s, fresh_fake_y))
        shape_s.backward()
        optimizers["s"].step()
        if substep_hook:
            substep_hook("s", bundle)
        if weights.lambda_shape == 0:
            report = dataclasses.replace(report, l_shape=float(shape_s))
    return report


def train_shape_transfer_gan(
    source_dataset: data_mod.Dataset,
    target_dataset: data_mod.Dataset,
    bundle: nets.ModelBundle,
    cfg: TrainConfig,
    *,
    train_segmentor: bool = True,
    start_epoch: int = 0,
    optimizer_state: dict | None = None,
    checkpoint_dir: Path | str | None = None,
    substep_hook=None,
) -> GanTrainResult:
    """Joint adversarial training from start_epoch to cfg.epochs.

    Target masks are never read: the iterator omits them and an access counter
    verifies the count stayed zero. Steps per epoch is the number of full
    passes over the smaller of the two datasets.
    """
    _apply_determinism(cfg)
    _check_bundle_matches(bundle, source_dataset, "source")
    _check_bundle_matches(bundle, target_dataset, "target")
    _require_masks(source_dataset, "source")

    optimizers = {
        "d": _adam(list(bundle.d1.parameters()) + list(bundle.d2.parameters()), cfg.lr_gan, cfg),
        "g": _adam(list(bundle.g1.parameters()) + list(bundle.g2.parameters()), cfg.lr_gan, cfg),
        "s": _adam(bundle.s.parameters(), cfg.lr_seg, cfg),
    }
    if optimizer_state is not None:
        for role, opt in optimizers.items():
            opt.load_state_dict(optimizer_state[role])

    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    src_seed = substream_seed(cfg.seed, _GAN_SOURCE_STREAM)
    tgt_seed = substream_seed(cfg.seed, _GAN_TARGET_STREAM)
    log_rows: list[dict] = []
    counter = data_mod.MaskReadCounter()
    started = time.monotonic()

    def _state():
        return {role: opt.state_dict() for role, opt in optimizers.items()}

    def _save(path: Path, epoch_done: int) -> None:
        checkpoint_save(Checkpoint(bundle=bundle, optimizer_state=_state(), config=cfg, epoch=epoch_done), path)

    with data_mod.count_mask_reads(counter):
        for epoch in range(start_epoch, cfg.epochs):
            source_batches = data_mod.batch_iterator(
                source_dataset, cfg.batch_size, src_seed, epoch, include_masks=True
            )
            target_batches = data_mod.batch_iterator(
                target_dataset, cfg.batch_size, tgt_seed, epoch, include_masks=False
            )
            for batch_x, batch_y in zip(source_batches, target_batches):
                x, m_x = _to_tensors(batch_x, cfg.device, with_mask=True)
                y, _ = _to_tensors(batch_y, cfg.device, with_mask=False)
                try:
                    report = _gan_step(bundle, optimizers, x, m_x, y, cfg.weights, train_segmentor, substep_hook)
                except losses.LossInputError as exc:
                    if checkpoint_dir is not None:
                        _save(checkpoint_dir / "diagnostic_nonfinite.ckpt", epoch)
                    raise TrainingError(f"non-finite loss at epoch {epoch}, step {bundle.step}: {exc}") from exc
                bundle.step += 1
                if bundle.step % cfg.log_every == 0:
                    wall = 0.0 if cfg.deterministic else time.monotonic() - started
                    log_rows.append(
                        {
                            "epoch": epoch,
                            "step": bundle.step,
                            "l_gan1": report.l_gan1,
                            "l_gan2": report.l_gan2,
                            "l_gan": report.l_gan,
                            "l_cyc": report.l_cyc,
                            "l_shape": report.l_shape,
                            "l_total": report.l_total,
                            "wall_time_s": wall,
                        }
                    )
            if checkpoint_dir is not None and (epoch + 1) % cfg.checkpoint_every == 0 and (epoch + 1) < cfg.epochs:
                _save(checkpoint_dir / f"ckpt_epoch{epoch + 1:04d}.ckpt", epoch + 1)
    if counter.target_reads:
        raise TrainingError(f"target-domain masks were read {counter.target_reads} times during GAN training")
    if checkpoint_dir is not None:
        _save(checkpoint_dir / "ckpt_final.ckpt", cfg.epochs)
    return GanTrainResult(bundle=bundle, log_rows=log_rows, optimizer_state=_state(), mask_reads=counter)


def segment(bundle: nets.ModelBundle, images) -> np.ndarray:
    """Argmax segmentation masks for a batch of preprocessed images.

    Ties break toward the lower class index (argmax picks the first maximum).
    """
    if isinstance(images, np.ndarray):
        images = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], 16):
            logits = nets.segmentor_forward(bundle.s, images[start : start + 16])
            out.append(np.argmax(logits.numpy(), axis=1).astype(np.uint8))
    return np.concatenate(out, axis=0)


def write_training_log(rows: list[dict], path: Path | str) -> None:
    """CSV log; floats are written with repr-stable formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["epoch"], row["step"]] + [f"{row[c]:.10g}" for c in LOG_COLUMNS[2:]]
            )


# --- checkpointing ----------------------------------------------------------------

@dataclass
class Checkpoint:
    bundle: nets.ModelBundle
    optimizer_state: dict | None
    config: TrainConfig
    epoch: int
    format_version: int = CHECKPOINT_VERSION


def checkpoint_save(ckpt: Checkpoint, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": ckpt.format_version,
        "epoch": ckpt.epoch,
        "step": ckpt.bundle.step,
        "rng_seed": ckpt.bundle.rng_seed,
        "arch": dataclasses.asdict(ckpt.bundle.arch),
        "config": dataclasses.asdict(ckpt.config),
        "models": {name: module.state_dict() for name, module in ckpt.bundle.named_modules_by_role().items()},
        "optimizers": ckpt.optimizer_state,
    }
    torch.save(payload, path)


def checkpoint_load(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format_version {version!r} unsupported (expected {CHECKPOINT_VERSION})")

    arch = dataclass_from_dict(nets.ArchConfig, payload["arch"], "checkpoint.arch")
    cfg = dataclass_from_dict(TrainConfig, payload["config"], "checkpoint.config")
    modules = nets.build_modules(arch)
    for name, module in modules.items():
        module.load_state_dict(payload["models"][name])
    bundle = nets.ModelBundle(arch=arch, step=int(payload["step"]), rng_seed=int(payload["rng_seed"]), **modules)
    return Checkpoint(
        bundle=bundle,
        optimizer_state=payload.get("optimizers"),
        config=cfg,
        epoch=int(payload["epoch"]),
        format_version=version,
    )
