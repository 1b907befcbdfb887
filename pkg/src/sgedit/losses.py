"""Training losses and the per-step loss report."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import torch
import torch.nn.functional as F


class NonFiniteLossError(RuntimeError):
    """A loss turned NaN/Inf; carries the offending component breakdown."""


def reconstruction_loss(generated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all pixels and channels."""
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(generated.shape)} vs {tuple(target.shape)}")
    return (generated - target).abs().mean()


def masked_reconstruction_loss(
    generated: torch.Tensor, target: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """L1 restricted to a boolean spatial mask; zero when the mask is empty."""
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(generated.shape)} vs {tuple(target.shape)}")
    m = mask.to(generated.dtype)
    while m.dim() < generated.dim():
        m = m.unsqueeze(0)
    denom = m.sum() * generated.shape[-3]
    if denom.item() == 0:
        return generated.sum() * 0.0
    return ((generated - target).abs() * m).sum() / denom


def bbox_loss(
    predicted: torch.Tensor, target: torch.Tensor, contributing: torch.Tensor
) -> torch.Tensor:
    """Mean squared error over the contributing nodes' box coordinates."""
    if predicted.shape != target.shape:
        raise ValueError("box tensors must align")
    if contributing.sum().item() == 0:
        return predicted.sum() * 0.0
    diff = (predicted[contributing] - target[contributing]) ** 2
    return diff.mean()


def hinge_losses(
    d_real: list[torch.Tensor], d_fake: list[torch.Tensor]
) -> tuple[torch.Tensor, torch.Tensor]:
    """(discriminator, generator) hinge objectives, averaged over scales."""
    if len(d_real) != len(d_fake):
        raise ValueError("real/fake logit lists must align")
    d_terms = []
    g_terms = []
    for real, fake in zip(d_real, d_fake):
        d_terms.append(F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean())
        g_terms.append(-fake.mean())
    hinge_d = torch.stack(d_terms).mean()
    hinge_g = torch.stack(g_terms).mean()
    return hinge_d, hinge_g


def perceptual_loss(generated: torch.Tensor, target: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over extractor layers of mean absolute feature differences."""
    total = None
    for fg, ft in zip(extractor(generated), extractor(target)):
        term = (fg - ft).abs().mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("extractor produced no feature layers")
    return total


def feature_matching_loss(
    real_feats: list[torch.Tensor], fake_feats: list[torch.Tensor]
) -> torch.Tensor:
    """Mean absolute difference per layer, averaged over all layers."""
    if len(real_feats) != len(fake_feats):
        raise ValueError("feature lists must align")
    terms = []
    for fr, ff in zip(real_feats, fake_feats):
        if fr.shape != ff.shape:
            raise ValueError("feature shapes must align")
        terms.append((fr - ff).abs().mean())
    if not terms:
        raise ValueError("empty feature lists")
    return torch.stack(terms).mean()


def aux_classification_loss(class_logits: torch.Tensor, class_ids: torch.Tensor) -> torch.Tensor:
    if class_logits.dim() == 1:
        class_logits = class_logits.unsqueeze(0)
        class_ids = class_ids.view(1)
    return F.cross_entropy(class_logits, class_ids)


@dataclass
class LossReport:
    """Named components plus the weighted totals logged every step."""

    l1_rec: float = 0.0
    bbox_l2: float = 0.0
    perceptual: float = 0.0
    feature_matching: float = 0.0
    hinge_g: float = 0.0
    hinge_d: float = 0.0
    aux_cls: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0
    head1_l1: float = 0.0
    head2_l1: float = 0.0
    iteration: int = 0

    FIELDS = (
        "iteration",
        "l1_rec",
        "bbox_l2",
        "perceptual",
        "feature_matching",
        "hinge_g",
        "hinge_d",
        "aux_cls",
        "total_g",
        "total_d",
        "head1_l1",
        "head2_l1",
    )

    def weighted_total_g(self, w) -> float:
        """Recompute total_g from components with the given weight record."""
        return (
            w.weight_l1 * self.l1_rec
            + w.weight_hinge * self.hinge_g
            + w.weight_perceptual * self.perceptual
            + w.weight_feature_matching * self.feature_matching
            + w.weight_bbox * self.bbox_l2
            + w.weight_aux * self.aux_cls
        )

    def check_finite(self) -> None:
        import math

        bad = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if isinstance(getattr(self, f.name), float) and not math.isfinite(getattr(self, f.name))
        }
        if bad:
            raise NonFiniteLossError(f"non-finite losses: {bad}; full report: {self}")

    def row(self) -> list:
        return [getattr(self, name) for name in self.FIELDS]
