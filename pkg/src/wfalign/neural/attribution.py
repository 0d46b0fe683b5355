"""Gradient x Input attribution for either tower.

The target is the cosine similarity between the sample's embedding and a
fixed unit reference vector. Continuous columns get d(target)/dx * x.
Categorical columns have no input gradient (they are rounded to indices),
so they are scored at the embedding level: the gradient with respect to the
looked-up vector dotted with that vector.
"""
from __future__ import annotations

import numpy as np
import torch

from ..core import LogicMatrix, TrafficMatrix
from ..errors import ValidationError
from .model import DualEncoder, batch_tensors

# logic feature layout: linear map of these columns, then one embedding per categorical
_LOGIC_CONT_COLS = [0, 1, 2, 3, 5]
_LOGIC_CAT_COLS = [4, 6, 7]


def grad_x_input(model: DualEncoder, matrix: TrafficMatrix | LogicMatrix,
                 reference: np.ndarray) -> np.ndarray:
    """Importance matrix with the same shape as ``matrix.rows``."""
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if ref.shape != (model.cfg.embed_dim,):
        raise ValidationError(f"reference must have length {model.cfg.embed_dim}")
    if abs(np.linalg.norm(ref) - 1.0) > 1e-6:
        raise ValidationError("reference vector must be unit norm")
    is_traffic = isinstance(matrix, TrafficMatrix)
    tower = model.traffic if is_traffic else model.logic
    multiple = tower.length_multiple if is_traffic else 1
    x, n = batch_tensors([matrix], model.cfg.dtype, multiple)
    x = x.clone().requires_grad_(True)

    feats = tower.features(x, n)
    feats.retain_grad()
    z = tower.head(tower.trunk(feats, n))
    z = z / z.norm(dim=-1, keepdim=True)
    target = (z[0] * torch.as_tensor(ref, dtype=z.dtype)).sum()
    tower.zero_grad(set_to_none=True)
    target.backward()

    xi = x.detach()[0]
    gx = x.grad[0]
    fg = (feats.grad * feats.detach())[0]
    out = torch.zeros_like(xi)
    cd, kd = model.cfg.cont_dim, model.cfg.cat_dim
    if is_traffic:
        out[:, 0] = gx[:, 0] * xi[:, 0]
        out[:, 1] = fg[:, cd:cd + kd].sum(-1)
        out[:, 2] = fg[:, cd + kd:cd + 2 * kd].sum(-1)
    else:
        for c in _LOGIC_CONT_COLS:
            out[:, c] = gx[:, c] * xi[:, c]
        for i, c in enumerate(_LOGIC_CAT_COLS):
            out[:, c] = fg[:, cd + i * kd:cd + (i + 1) * kd].sum(-1)
    result = np.zeros_like(matrix.rows, dtype=np.float64)
    k = min(result.shape[0], out.shape[0], matrix.valid_len)
    result[:k] = out[:k].numpy()
    return result
