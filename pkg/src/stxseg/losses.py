"""Objective blocks: adversarial, cycle-reconstruction, shape preservation.

Discriminator scores are raw patch maps; the logistic function is applied
inside the losses with probabilities clamped to [1e-7, 1 - 1e-7] so the logs
stay finite. The generator side uses the non-saturating form -log sigma(D(G(x)))
instead of +log(1 - sigma(.)), which stalls early in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .common import LABEL_ALPHABET

PROB_EPS = 1e-7


class LossInputError(ValueError):
    """Loss inputs are non-finite or shaped inconsistently."""


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_shape: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cyc", "lambda_shape"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise LossInputError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    """Scalar summary of one training step, in signed objective convention."""

    l_gan1: float
    l_gan2: float
    l_gan: float
    l_cyc1: float
    l_cyc2: float
    l_cyc: float
    l_shape: float
    l_total: float


@dataclass
class LossComponents:
    """Per-block tensors produced by one step, combined by total_objective.

    adv_value_1/2 are the signed adversarial objectives (computed against
    detached fakes; the discriminators maximize them). gen_adv_1/2 are the
    non-saturating generator losses with gradient paths into the generators.
    """

    adv_value_1: torch.Tensor
    adv_value_2: torch.Tensor
    gen_adv_1: torch.Tensor
    gen_adv_2: torch.Tensor
    cyc_1: torch.Tensor
    cyc_2: torch.Tensor
    shape: torch.Tensor


@dataclass
class RoleTargets:
    """Minimization targets for the three optimizer roles."""

    discriminator: torch.Tensor
    generator: torch.Tensor
    segmentor: torch.Tensor


def _check_finite(t: torch.Tensor, name: str) -> None:
    if not torch.isfinite(t).all():
        raise LossInputError(f"{name} contains non-finite values")


def _clamped_prob(scores: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(scores).clamp(PROB_EPS, 1.0 - PROB_EPS)


def adversarial_value(d_real_scores: torch.Tensor, d_fake_scores: torch.Tensor) -> torch.Tensor:
    """Signed objective E[log sigma(real)] + E[log(1 - sigma(fake))].

    The discriminator maximizes this; its minimization loss is the negation
    (see adversarial_loss_d).
    """
    _check_finite(d_real_scores, "d_real_scores")
    _check_finite(d_fake_scores, "d_fake_scores")
    return torch.log(_clamped_prob(d_real_scores)).mean() + torch.log(1.0 - _clamped_prob(d_fake_scores)).mean()


def adversarial_loss_d(d_real_scores: torch.Tensor, d_fake_scores: torch.Tensor) -> torch.Tensor:
    """Discriminator minimization loss; fake scores must come from detached fakes."""
    return -adversarial_value(d_real_scores, d_fake_scores)


def adversarial_loss_g(d_fake_scores: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss -E[log sigma(D(fake))]."""
    _check_finite(d_fake_scores, "d_fake_scores")
    return -torch.log(_clamped_prob(d_fake_scores)).mean()


def cycle_loss(
    x: torch.Tensor,
    x_rec: torch.Tensor,
    y: torch.Tensor,
    y_rec: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """L1 reconstruction penalties (per direction, and their mean)."""
    if x.shape != x_rec.shape:
        raise LossInputError(f"x/x_rec shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    if y.shape != y_rec.shape:
        raise LossInputError(f"y/y_rec shape mismatch: {tuple(y.shape)} vs {tuple(y_rec.shape)}")
    for t, name in ((x, "x"), (x_rec, "x_rec"), (y, "y"), (y_rec, "y_rec")):
        _check_finite(t, name)
    l_cyc1 = (x_rec - x).abs().mean()
    l_cyc2 = (y_rec - y).abs().mean()
    return l_cyc1, l_cyc2, (l_cyc1 + l_cyc2) / 2


def shape_loss(mask: torch.Tensor, seg_logits: torch.Tensor) -> torch.Tensor:
    """Pixel cross-entropy between a label mask and 4-class logits."""
    if seg_logits.dim() != 4:
        raise LossInputError(f"seg_logits must be (B, C, S, S), got {tuple(seg_logits.shape)}")
    if mask.shape != (seg_logits.shape[0], seg_logits.shape[2], seg_logits.shape[3]):
        raise LossInputError(f"mask shape {tuple(mask.shape)} does not match logits {tuple(seg_logits.shape)}")
    _check_finite(seg_logits, "seg_logits")
    mask = mask.long()
    if mask.numel() and (int(mask.min()) not in LABEL_ALPHABET or int(mask.max()) >= seg_logits.shape[1]):
        raise LossInputError("mask contains labels outside the class alphabet")
    return torch.nn.functional.cross_entropy(seg_logits, mask)


def total_objective(components: LossComponents, weights: LossWeights) -> tuple[LossReport, RoleTargets]:
    """Combine block values into the overall objective and per-role targets.

    Report arithmetic: l_gan = (l_gan1 + l_gan2)/2, l_cyc = (l_cyc1 + l_cyc2)/2,
    l_total = l_gan + lambda_cyc * l_cyc + lambda_shape * l_shape.
    """
    for name in ("adv_value_1", "adv_value_2", "gen_adv_1", "gen_adv_2", "cyc_1", "cyc_2", "shape"):
        _check_finite(getattr(components, name), name)

    l_gan1 = float(components.adv_value_1)
    l_gan2 = float(components.adv_value_2)
    l_gan = (l_gan1 + l_gan2) / 2
    l_cyc1 = float(components.cyc_1)
    l_cyc2 = float(components.cyc_2)
    l_cyc = (l_cyc1 + l_cyc2) / 2
    l_shape = float(components.shape)
    report = LossReport(
        l_gan1=l_gan1,
        l_gan2=l_gan2,
        l_gan=l_gan,
        l_cyc1=l_cyc1,
        l_cyc2=l_cyc2,
        l_cyc=l_cyc,
        l_shape=l_shape,
        l_total=l_gan + weights.lambda_cyc * l_cyc + weights.lambda_shape * l_shape,
    )
    targets = RoleTargets(
        discriminator=-(components.adv_value_1 + components.adv_value_2) / 2,
        generator=(components.gen_adv_1 + components.gen_adv_2) / 2
        + weights.lambda_cyc * (components.cyc_1 + components.cyc_2) / 2
        + weights.lambda_shape * components.shape,
        segmentor=components.shape,
    )
    return report, targets
