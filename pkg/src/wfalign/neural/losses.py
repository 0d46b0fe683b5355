"""Contrastive training objectives.

All three losses are batch means rather than sums so that the weighting
coefficients do not depend on batch size.
"""
from __future__ import annotations

import torch

from ..errors import ConfigError, DegenerateBatch


def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def info_nce(zT, zL, tau: float = 0.07) -> torch.Tensor:
    """Cross-modal InfoNCE: row i of ``zT`` must pick row i of ``zL``."""
    if tau <= 0:
        raise ConfigError("tau must be positive")
    zT, zL = _t(zT), _t(zL)
    logits = zT @ zL.T / tau
    return -torch.diagonal(torch.log_softmax(logits, dim=1)).mean()


def supcon(z, labels, tau: float = 0.07) -> torch.Tensor:
    """Supervised contrastive loss over one modality.

    For anchor i the candidates are all other rows; its loss is the mean
    negative log-probability of its same-label rows. Anchors without a
    positive are skipped.
    """
    if tau <= 0:
        raise ConfigError("tau must be positive")
    z = _t(z)
    labels = torch.as_tensor(labels)
    m = z.shape[0]
    eye = torch.eye(m, dtype=torch.bool)
    pos = (labels[:, None] == labels[None, :]) & ~eye
    n_pos = pos.sum(1)
    anchors = n_pos > 0
    if not anchors.any():
        raise DegenerateBatch("no anchor has a positive")
    logits = (z @ z.T / tau).masked_fill(eye, float("-inf"))
    log_prob = torch.log_softmax(logits, dim=1).masked_fill(eye, 0.0)
    per_anchor = -(log_prob * pos).sum(1)[anchors] / n_pos[anchors]
    return per_anchor.mean()


def consistency(z, labels) -> torch.Tensor:
    """Mean squared distance over same-label pairs i < j (0 when there are none)."""
    z = _t(z)
    labels = torch.as_tensor(labels)
    same = torch.triu(labels[:, None] == labels[None, :], diagonal=1)
    if not same.any():
        return z.sum() * 0.0
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    return d2[same].mean()
