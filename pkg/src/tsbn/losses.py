"""Training losses.

All losses are batch means rather than raw sums, so ``alpha`` and the class
weight ``w`` keep their meaning when the batch size changes.
"""
from __future__ import annotations

import torch

from .errors import InvalidInput

PROB_EPS = 1e-7
DEFAULT_POS_WEIGHT = 15.0
DEFAULT_ALPHA = 1.0


def _tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise InvalidInput(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def restoration_loss(pred, target) -> torch.Tensor:
    """Mean squared error over every pixel of every batch element."""
    pred = _tensor(pred)
    target = _tensor(target, pred)
    _same_shape(pred, target, "restoration_loss")
    return torch.mean((pred - target) ** 2)


def transfer_loss(p_emb, d_emb) -> torch.Tensor:
    """Squared distance between the two channel embeddings, averaged over batch and dims."""
    p_emb = _tensor(p_emb)
    d_emb = _tensor(d_emb, p_emb)
    _same_shape(p_emb, d_emb, "transfer_loss")
    return torch.mean((p_emb - d_emb) ** 2)


def weighted_bce(probs, labels, w: float = DEFAULT_POS_WEIGHT) -> torch.Tensor:
    """Binary cross-entropy with the positive term scaled by ``w``.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the logs.
    """
    probs = _tensor(probs)
    labels = _tensor(labels, probs).to(probs.dtype)
    _same_shape(probs, labels, "weighted_bce")
    if not torch.all((labels == 0) | (labels == 1)):
        raise InvalidInput("labels must be 0 or 1")
    if not w > 0:
        raise InvalidInput(f"positive-class weight must be > 0, got {w}")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    per_sample = -(w * labels * torch.log(p) + (1.0 - labels) * torch.log1p(-p))
    return per_sample.mean()


def weighted_bce_with_logits(logits, labels, w: float = DEFAULT_POS_WEIGHT) -> torch.Tensor:
    """``weighted_bce(sigmoid(logits), ...)``; goes through the same clamp so values agree."""
    logits = _tensor(logits)
    return weighted_bce(torch.sigmoid(logits), labels, w)


def downstream_loss(ct, bce, alpha: float = DEFAULT_ALPHA):
    """``alpha * ct + bce``."""
    if not alpha >= 0:
        raise InvalidInput(f"alpha must be >= 0, got {alpha}")
    return alpha * ct + bce
