"""Metric and classification objectives.

The pair loss decouples the positive/negative margins and rescales the
positive term by a smooth dynamic factor that grows as the batch's average
negative similarity drops, shifting gradient mass onto positive-pair
compaction once negatives are separated. The scaling factor is detached
from the gradient graph (a per-batch constant).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import NonFiniteSimilarity, UnknownLabel


@dataclass(frozen=True)
class CircleTParams:
    delta_p: float = 0.75
    delta_n: float = 0.25
    gamma: float = 32.0
    beta: float = 0.5
    tau: float = 0.5
    lambda_max: float = 2.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.lambda_max < 1:
            raise ValueError("lambda_max must be >= 1")


def dynamic_scale(s_n_mean: float | torch.Tensor, params: CircleTParams) -> torch.Tensor:
    """lambda = min(1 + beta * exp(-s_n_mean / tau), lambda_max)."""
    s = torch.as_tensor(s_n_mean, dtype=torch.float64)
    lam = 1.0 + params.beta * torch.exp(-s / params.tau)
    return torch.clamp(lam, max=params.lambda_max)


def circle_t_loss(s_p: torch.Tensor, s_n: torch.Tensor, params: CircleTParams) -> torch.Tensor:
    """Pair loss for one (anchor, positive) instance against its negatives.

    L = log[1 + sum_n exp(gamma * (a_n (s_n - d_n) - lam * a_p (s_p - d_p)))]
    with a_p = [2 - d_p - s_p]+, a_n = [s_n + d_n]+, computed via a stable
    log-sum-exp. An empty negative set gives exactly 0.
    """
    s_p = torch.as_tensor(s_p)
    s_n = torch.as_tensor(s_n).reshape(-1)
    if s_n.numel() == 0:
        return torch.zeros((), dtype=s_p.dtype if s_p.is_floating_point() else torch.float32)
    if not (torch.isfinite(s_p).all() and torch.isfinite(s_n).all()):
        raise NonFiniteSimilarity("similarities must be finite")

    lam = dynamic_scale(s_n.mean().detach(), params).to(s_n.dtype)
    alpha_p = torch.clamp_min(2.0 - params.delta_p - s_p, 0.0)
    alpha_n = torch.clamp_min(s_n + params.delta_n, 0.0)
    logits = params.gamma * (alpha_n * (s_n - params.delta_n)
                             - lam * alpha_p * (s_p - params.delta_p))
    # log(1 + sum exp(a)) = logsumexp([0, a_1, ..., a_N])
    padded = torch.cat([logits.new_zeros(1), logits])
    return torch.logsumexp(padded, dim=0)


def circle_t_batch(anchors: torch.Tensor, anchor_labels: list[str],
                   others: torch.Tensor, other_labels: list[str],
                   params: CircleTParams) -> torch.Tensor:
    """Mean loss over every (anchor, positive) instance in the batch.

    All same-label cross items are positives, all other-label items are
    negatives; one instance per (anchor, positive) pair. Anchors with no
    positive are skipped with a warning.
    """
    if anchors.numel() == 0 or others.numel() == 0:
        return anchors.new_zeros(())
    sims = anchors @ others.T  # (A, B) cosine similarities of unit rows
    instance_losses = []
    skipped = 0
    for a in range(len(anchor_labels)):
        pos_idx = [b for b, l in enumerate(other_labels) if l == anchor_labels[a]]
        neg_idx = [b for b, l in enumerate(other_labels) if l != anchor_labels[a]]
        if not pos_idx:
            skipped += 1
            continue
        s_n = sims[a, neg_idx]
        for p in pos_idx:
            instance_losses.append(circle_t_loss(sims[a, p], s_n, params))
    if skipped:
        warnings.warn(f"{skipped} anchors had no positive and were skipped", stacklevel=2)
    if not instance_losses:
        return anchors.new_zeros(())
    return torch.stack(instance_losses).mean()


class ClassifierHead(torch.nn.Module):
    """Linear head over unit-norm embeddings with a learnable temperature
    to keep logit scale healthy on the unit sphere."""

    def __init__(self, class_names: list[str], dim: int = 1280, temperature: float = 10.0):
        super().__init__()
        self.class_names = list(class_names)
        self.weight = torch.nn.Parameter(torch.zeros(len(class_names), dim))
        torch.nn.init.normal_(self.weight, std=0.01)
        self.temperature = torch.nn.Parameter(torch.tensor(float(temperature)))
        self._index = {c: i for i, c in enumerate(self.class_names)}

    def logits(self, embeddings: torch.Tensor) -> torch.Tensor:
        return self.temperature * (embeddings @ self.weight.T)

    def label_indices(self, labels: list[str]) -> torch.Tensor:
        try:
            return torch.tensor([self._index[l] for l in labels])
        except KeyError as e:
            raise UnknownLabel(f"label {e.args[0]!r} not in classifier head") from e


def view_cls_loss(view_embeddings: torch.Tensor, labels: list[str],
                  head: ClassifierHead) -> torch.Tensor:
    """Mean cross-entropy of the view-branch classifier."""
    targets = head.label_indices(labels)
    return F.cross_entropy(head.logits(view_embeddings), targets)


def total_loss(l_ske: torch.Tensor, l_view: torch.Tensor, l_cls_view: torch.Tensor,
               eta: float = 10.0) -> torch.Tensor:
    """L = L_ske + L_view + eta * L_cls_view (no sketch classification term)."""
    return l_ske + l_view + eta * l_cls_view
