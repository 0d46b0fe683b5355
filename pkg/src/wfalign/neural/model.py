"""Dual encoders mapping traffic and logic matrices onto the unit sphere.

Traffic: categorical columns (HTTP version, flow index) are embedded,
the signed log length goes through a linear map, and the concatenation runs
through a stack of masked 1-D convolution blocks with masked average pooling.

Logic: each resource row becomes a token (linear map of the continuous
columns concatenated with version/MIME/IP embeddings), a pre-norm
transformer encoder with key padding masks mixes tokens, and a masked mean
pools them.

Both towers end in a two-layer projection head followed by L2
normalisation. Padding rows never influence valid positions, so embeddings
do not depend on how far a matrix is padded.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..core import EncodingParams, LogicMatrix, TrafficMatrix
from ..errors import NumericError, ValidationError

DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 256
    conv_channels: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 5
    token_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 2
    cat_dim: int = 8
    cont_dim: int = 16
    max_index: int = 64
    traffic_pool: str = "mean"
    head_hidden: int | None = None
    traffic_len: int = 5000
    logic_len: int = 80
    precision: str = "float64"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.embed_dim < 8:
            raise ValidationError("embed_dim must be >= 8")
        if self.token_dim % self.n_heads:
            raise ValidationError("token_dim must be divisible by n_heads")
        if self.precision not in DTYPES:
            raise ValidationError(f"precision must be one of {sorted(DTYPES)}")
        if self.kernel_size % 2 == 0:
            raise ValidationError("kernel_size must be odd")
        if self.traffic_pool not in ("mean", "mean_max"):
            raise ValidationError("traffic_pool must be 'mean' or 'mean_max'")
        if not self.conv_channels:
            raise ValidationError("need at least one conv block")

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.precision]

    @property
    def hidden(self) -> int:
        return self.head_hidden or 2 * self.embed_dim

    @property
    def encoding(self) -> EncodingParams:
        return EncodingParams(self.traffic_len, self.logic_len)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d


def clamp_index(x: torch.Tensor, max_index: int) -> torch.Tensor:
    """Integer column to embedding index; values past max_index share one overflow slot."""
    return x.round().long().clamp(0, max_index + 1)


def masked_mean(h: torch.Tensor, mask: torch.Tensor, dim: int) -> torch.Tensor:
    m = mask.to(h.dtype)
    return (h * m).sum(dim) / m.sum(dim).clamp(min=1.0)


class ProjectionHead(nn.Module):
    def __init__(self, d_in, hidden, d_out):
        super().__init__()
        self.fc1 = nn.Linear(d_in, hidden)
        self.fc2 = nn.Linear(hidden, d_out)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TrafficEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.len_proj = nn.Linear(1, cfg.cont_dim)
        self.version_emb = nn.Embedding(4, cfg.cat_dim)
        self.flow_emb = nn.Embedding(cfg.max_index + 2, cfg.cat_dim)
        c_in = cfg.cont_dim + 2 * cfg.cat_dim
        convs = []
        for c_out in cfg.conv_channels:
            convs.append(nn.Conv1d(c_in, c_out, cfg.kernel_size, padding=cfg.kernel_size // 2))
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        pooled = 2 * c_in if cfg.traffic_pool == "mean_max" else c_in
        self.head = ProjectionHead(pooled, cfg.hidden, cfg.embed_dim)

    @property
    def length_multiple(self) -> int:
        return 2 ** (len(self.cfg.conv_channels) - 1)

    def features(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Per-position input features (B, L, C), zero on padding rows."""
        mask = (torch.arange(x.shape[1]) < lengths[:, None]).unsqueeze(-1)
        feats = torch.cat([
            self.len_proj(x[..., :1]),
            self.version_emb(clamp_index(x[..., 1], 2)),
            self.flow_emb(clamp_index(x[..., 2], self.cfg.max_index)),
        ], dim=-1)
        return feats * mask.to(feats.dtype)

    def trunk(self, feats: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        h = feats.transpose(1, 2)  # (B, C, L)
        L = h.shape[-1]
        mult = self.length_multiple
        if L % mult:
            h = F.pad(h, (0, mult - L % mult))
        mask = (torch.arange(h.shape[-1]) < lengths[:, None]).unsqueeze(1).to(h.dtype)
        for i, conv in enumerate(self.convs):
            h = F.gelu(conv(h)) * mask
            if i < len(self.convs) - 1:
                # masked 2:1 average pooling; a window is valid if any slot is
                num = F.avg_pool1d(h, 2) * 2.0
                den = F.avg_pool1d(mask, 2) * 2.0
                mask = (den > 0).to(h.dtype)
                h = num / den.clamp(min=1.0)
        pooled = masked_mean(h, mask, dim=-1)
        if self.cfg.traffic_pool == "mean_max":
            peak = h.masked_fill(mask == 0, float("-inf")).amax(dim=-1)
            pooled = torch.cat([pooled, peak], dim=-1)
        return pooled

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.head(self.trunk(self.features(x, lengths), lengths)), dim=-1)


class SelfAttention(nn.Module):
    def __init__(self, dim, n_heads):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, h, key_mask):
        B, L, D = h.shape
        hd = D // self.n_heads
        q, k, v = self.qkv(h).view(B, L, 3, self.n_heads, hd).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        att = torch.softmax(scores, dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(B, L, D))


class TransformerBlock(nn.Module):
    def __init__(self, dim, n_heads, ff_mult):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ff_mult * dim)
        self.ff2 = nn.Linear(ff_mult * dim, dim)

    def forward(self, h, key_mask):
        h = h + self.attn(self.ln1(h), key_mask)
        return h + self.ff2(F.gelu(self.ff1(self.ln2(h))))


class LogicEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        # four log-scaled sizes plus the alt-svc flag
        self.cont_proj = nn.Linear(5, cfg.cont_dim)
        self.version_emb = nn.Embedding(4, cfg.cat_dim)
        self.mime_emb = nn.Embedding(8, cfg.cat_dim)
        self.ip_emb = nn.Embedding(cfg.max_index + 2, cfg.cat_dim)
        self.token_proj = nn.Linear(cfg.cont_dim + 3 * cfg.cat_dim, cfg.token_dim)
        self.blocks = nn.ModuleList(TransformerBlock(cfg.token_dim, cfg.n_heads, cfg.ff_mult)
                                    for _ in range(cfg.n_layers))
        self.ln_out = nn.LayerNorm(cfg.token_dim)
        self.head = ProjectionHead(cfg.token_dim, cfg.hidden, cfg.embed_dim)

    def features(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        mask = (torch.arange(x.shape[1]) < lengths[:, None]).unsqueeze(-1)
        feats = torch.cat([
            self.cont_proj(torch.cat([x[..., :4], x[..., 5:6]], dim=-1)),
            self.version_emb(clamp_index(x[..., 4], 2)),
            self.mime_emb(x[..., 6].round().long().clamp(0, 7)),
            self.ip_emb(clamp_index(x[..., 7], self.cfg.max_index)),
        ], dim=-1)
        return feats * mask.to(feats.dtype)

    def trunk(self, feats: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        mask = torch.arange(feats.shape[1]) < lengths[:, None]
        h = self.token_proj(feats)
        for block in self.blocks:
            h = block(h, mask)
        return masked_mean(self.ln_out(h), mask.unsqueeze(-1), dim=1)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.head(self.trunk(self.features(x, lengths), lengths)), dim=-1)


class DualEncoder(nn.Module):
    """Both towers plus their configuration; this is the trainable parameter store."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.init_seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(torch.randint(0, 2**62, (1,), generator=gen)))
            self.traffic = TrafficEncoder(cfg)
            self.logic = LogicEncoder(cfg)
        self.to(cfg.dtype)

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise NumericError(f"parameter {name} has non-finite values")

    def encode_traffic(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return self.traffic(x, lengths)

    def encode_logic(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return self.logic(x, lengths)


def batch_tensors(mats: Sequence[TrafficMatrix | LogicMatrix], dtype=torch.float64,
                  multiple: int = 1) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack matrices cut to the longest valid length in the batch.

    Cutting only removes padding, so results match the full-length stack.
    """
    lengths = np.array([m.valid_len for m in mats], dtype=np.int64)
    L = max(1, int(lengths.max()))
    if L % multiple:
        L += multiple - L % multiple
    width = mats[0].rows.shape[1]
    out = np.zeros((len(mats), L, width), dtype=np.float64)
    for i, m in enumerate(mats):
        k = min(L, m.rows.shape[0])
        out[i, :k] = m.rows[:k]
    return torch.as_tensor(out, dtype=dtype), torch.as_tensor(lengths)


def _embed(model, tower, mats, batch_size, multiple):
    outs = []
    with torch.no_grad():
        for i in range(0, len(mats), batch_size):
            x, n = batch_tensors(mats[i:i + batch_size], model.cfg.dtype, multiple)
            outs.append(tower(x, n).to(torch.float64).numpy())
    if not outs:
        return np.zeros((0, model.cfg.embed_dim))
    return np.concatenate(outs)


def encode_traffic_embed(model: DualEncoder, matrix: TrafficMatrix | Sequence[TrafficMatrix],
                         batch_size: int = 64) -> np.ndarray:
    """Unit-norm traffic embedding(s): shape (d,) for one matrix, (N, d) for a list."""
    model.check_finite()
    single = isinstance(matrix, TrafficMatrix)
    mats = [matrix] if single else list(matrix)
    z = _embed(model, model.traffic, mats, batch_size, model.traffic.length_multiple)
    return z[0] if single else z


def encode_logic_embed(model: DualEncoder, matrix: LogicMatrix | Sequence[LogicMatrix],
                       batch_size: int = 64) -> np.ndarray:
    model.check_finite()
    single = isinstance(matrix, LogicMatrix)
    mats = [matrix] if single else list(matrix)
    z = _embed(model, model.logic, mats, batch_size, 1)
    return z[0] if single else z
