"""Composite-batch training of the dual encoder."""
from __future__ import annotations

import copy
import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from ..core import PairedSample, TrafficMatrix, LogicMatrix, TrafficTrace
from ..encoding import encode_logic, encode_traffic
from ..errors import BatchError, ConfigError, DivergedError
from .losses import consistency, info_nce, supcon
from .model import DualEncoder, ModelConfig, batch_tensors

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.07
    lambda_sup: float = 1.0
    lambda_cons: float = 0.1
    batch_size: int = 64
    epochs: int = 10
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_schedule: str = "constant"
    mix_ratio: tuple[float, float, float] = (10.0, 3.0, 3.0)
    labeled_per_class: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mix_ratio", tuple(float(r) for r in self.mix_ratio))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lambda_sup < 0 or self.lambda_cons < 0:
            raise ConfigError("loss weights must be non-negative")
        if len(self.mix_ratio) != 3 or min(self.mix_ratio) < 0 or sum(self.mix_ratio) <= 0:
            raise ConfigError("mix_ratio needs three non-negative parts, not all zero")
        if self.mix_ratio[0] <= 0:
            raise ConfigError("the cross-modal share of mix_ratio must be positive")
        if self.labeled_per_class < 2:
            raise ConfigError("labeled_per_class must be >= 2 so every class has a positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be 'constant' or 'cosine'")
        if self.batch_size < 2 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 2 and epochs >= 0")

    def split(self) -> tuple[int, int, int]:
        """Rows per sub-batch (cross-modal, augmented, labeled)."""
        r = np.asarray(self.mix_ratio) / sum(self.mix_ratio)
        n_aug = int(round(self.batch_size * r[1]))
        n_lab = int(round(self.batch_size * r[2]))
        if r[2] > 0:
            n_lab = max(self.labeled_per_class * 2,
                        n_lab - n_lab % self.labeled_per_class)
        n_cross = max(1, self.batch_size - n_aug - n_lab)
        return n_cross, n_aug, n_lab


@dataclass
class Batch:
    """One composite step: a paired sub-batch from distinct sites plus labeled traffic."""

    traffic: torch.Tensor
    traffic_len: torch.Tensor
    logic: torch.Tensor
    logic_len: torch.Tensor
    sites: list[str]
    labeled: Optional[torch.Tensor] = None
    labeled_len: Optional[torch.Tensor] = None
    labels: Optional[torch.Tensor] = None

    @classmethod
    def from_matrices(cls, model: DualEncoder, pairs: Sequence[tuple[TrafficMatrix, LogicMatrix]],
                      sites: Sequence[str], labeled: Sequence[TrafficMatrix] = (),
                      labels: Sequence[int] = ()) -> "Batch":
        if len(set(sites)) != len(sites):
            raise BatchError("cross-modal sub-batch must contain each site at most once")
        dtype = model.cfg.dtype
        mult = model.traffic.length_multiple
        t, tn = batch_tensors([p[0] for p in pairs], dtype, mult)
        lg, ln = batch_tensors([p[1] for p in pairs], dtype)
        batch = cls(t, tn, lg, ln, list(sites))
        if len(labeled):
            batch.labeled, batch.labeled_len = batch_tensors(list(labeled), dtype, mult)
            batch.labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
        return batch


def objective(model: DualEncoder, batch: Batch, cfg: TrainConfig) -> tuple[torch.Tensor, dict]:
    """InfoNCE + lambda_sup * SupCon + lambda_cons * consistency, with its parts."""
    if len(set(batch.sites)) != len(batch.sites):
        raise BatchError("cross-modal sub-batch must contain each site at most once")
    zT = model.encode_traffic(batch.traffic, batch.traffic_len)
    zL = model.encode_logic(batch.logic, batch.logic_len)
    loss = info_nce(zT, zL, cfg.tau)
    parts = {"info_nce": loss.item()}
    if batch.labeled is not None and (cfg.lambda_sup > 0 or cfg.lambda_cons > 0):
        zl = model.encode_traffic(batch.labeled, batch.labeled_len)
        if cfg.lambda_sup > 0:
            sc = supcon(zl, batch.labels, cfg.tau)
            loss = loss + cfg.lambda_sup * sc
            parts["supcon"] = sc.item()
        if cfg.lambda_cons > 0:
            cons = consistency(zl, batch.labels)
            loss = loss + cfg.lambda_cons * cons
            parts["consistency"] = cons.item()
    return loss, parts


def combined_loss(batch: Batch, model: DualEncoder, cfg: TrainConfig) -> tuple[float, dict]:
    """Loss value and reverse-mode gradients for every named parameter."""
    model.zero_grad(set_to_none=True)
    loss, _ = objective(model, batch, cfg)
    loss.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in model.named_parameters()}
    model.zero_grad(set_to_none=True)
    return loss.item(), grads


@dataclass
class EncodedPairs:
    """Matrices of a paired dataset, encoded once up front."""

    traffic: list[TrafficMatrix]
    logic: list[LogicMatrix]
    sites: list[str]

    @classmethod
    def build(cls, pairs: Sequence[PairedSample], model_cfg: ModelConfig) -> "EncodedPairs":
        enc = model_cfg.encoding
        return cls([encode_traffic(p.traffic, enc) for p in pairs],
                   [encode_logic(p.logic, enc) for p in pairs],
                   [p.site_id for p in pairs])

    def __len__(self):
        return len(self.sites)


@dataclass
class TrainResult:
    model: DualEncoder
    history: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


class CompositeSampler:
    """Seeded draw of composite batches.

    Each epoch walks a fresh permutation of the cross-modal set; a pair
    whose site is already in the current batch waits for the next one.
    Augmented pairs fill their share with sites not yet in the batch, and
    labeled traces come as ``labeled_per_class`` traces from each of a few
    random classes.
    """

    def __init__(self, cross: EncodedPairs, aug: EncodedPairs | None,
                 labeled: list[TrafficMatrix], labels: list[int], cfg: TrainConfig):
        self.cross, self.aug = cross, aug
        self.labeled, self.labels = labeled, np.asarray(labels, dtype=np.int64)
        self.cfg = cfg
        self.n_cross, self.n_aug, self.n_lab = cfg.split()
        if not self.aug or not len(self.aug):
            self.n_aug = 0
        self.by_class: dict[int, list[int]] = {}
        for i, y in enumerate(self.labels):
            self.by_class.setdefault(int(y), []).append(i)
        self.classes = sorted(c for c, idx in self.by_class.items()
                              if len(idx) >= cfg.labeled_per_class)
        if len(self.classes) < 2:
            self.n_lab = 0

    def steps_per_epoch(self) -> int:
        return max(1, -(-len(self.cross) // self.n_cross))

    def epoch(self, rng: np.random.Generator):
        queue = list(rng.permutation(len(self.cross)))
        for _ in range(self.steps_per_epoch()):
            if not queue:
                queue = list(rng.permutation(len(self.cross)))
            chosen, used, deferred = [], set(), []
            while queue and len(chosen) < self.n_cross:
                i = queue.pop(0)
                site = self.cross.sites[i]
                if site in used:
                    deferred.append(i)
                else:
                    chosen.append(("c", i))
                    used.add(site)
            queue = deferred + queue
            if self.n_aug:
                order = rng.permutation(len(self.aug))
                taken = 0
                for j in order:
                    if taken == self.n_aug:
                        break
                    site = self.aug.sites[j]
                    if site not in used:
                        chosen.append(("a", int(j)))
                        used.add(site)
                        taken += 1
            lab_idx, lab_y = [], []
            if self.n_lab:
                k = self.cfg.labeled_per_class
                n_cls = min(len(self.classes), max(2, self.n_lab // k))
                for c in rng.choice(self.classes, size=n_cls, replace=False):
                    members = self.by_class[int(c)]
                    for m in rng.choice(len(members), size=k, replace=False):
                        lab_idx.append(members[int(m)])
                        lab_y.append(int(c))
            yield chosen, lab_idx, lab_y

    def make_batch(self, model, chosen, lab_idx, lab_y) -> Batch:
        pairs, sites = [], []
        for src, i in chosen:
            ds = self.cross if src == "c" else self.aug
            pairs.append((ds.traffic[i], ds.logic[i]))
            sites.append(ds.sites[i])
        return Batch.from_matrices(model, pairs, sites, [self.labeled[i] for i in lab_idx], lab_y)


def _labeled_matrices(items, model_cfg: ModelConfig):
    enc = model_cfg.encoding
    mats, labels = [], []
    for it in items:
        trace = it.traffic if isinstance(it, PairedSample) else it
        if not isinstance(trace, TrafficTrace) or trace.label is None:
            raise ConfigError("labeled training data needs traffic traces with labels")
        mats.append(encode_traffic(trace, enc))
        labels.append(trace.label)
    return mats, labels


def train(datasets: dict, cfg: TrainConfig = TrainConfig(),
          model_cfg: ModelConfig = ModelConfig(), model: Optional[DualEncoder] = None,
          callback=None) -> TrainResult:
    """Train both encoders on ``{"crossmodal", "augmented", "labeled"}``.

    ``crossmodal`` and ``augmented`` hold PairedSamples, ``labeled`` holds
    labeled traces (or pairs whose traffic carries a label). Raises
    DivergedError carrying the last finite parameter state if the loss
    stops being finite.
    """
    cross_pairs = datasets.get("crossmodal") or []
    if not cross_pairs:
        raise ConfigError("the cross-modal dataset must not be empty")
    model = model or DualEncoder(model_cfg)
    model_cfg = model.cfg
    cross = EncodedPairs.build(cross_pairs, model_cfg)
    aug_pairs = datasets.get("augmented") or []
    aug = EncodedPairs.build(aug_pairs, model_cfg) if aug_pairs else None
    lab_mats, lab_labels = _labeled_matrices(datasets.get("labeled") or [], model_cfg)
    sampler = CompositeSampler(cross, aug, lab_mats, lab_labels, cfg)

    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
                            weight_decay=cfg.weight_decay)
    total_steps = cfg.epochs * sampler.steps_per_epoch()
    sched = None
    if cfg.lr_schedule == "cosine" and total_steps:
        sched = torch.optim.lr_scheduler.LambdaLR(
            opt, lambda step: 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps)))
    rng = np.random.default_rng(cfg.rng_seed)
    result = TrainResult(model)
    last_good = copy.deepcopy(model.state_dict())
    for epoch in range(cfg.epochs):
        model.train()
        losses = []
        for chosen, lab_idx, lab_y in sampler.epoch(rng):
            batch = sampler.make_batch(model, chosen, lab_idx, lab_y)
            opt.zero_grad(set_to_none=True)
            loss, parts = objective(model, batch, cfg)
            if not torch.isfinite(loss):
                model.load_state_dict(last_good)
                raise DivergedError(f"non-finite loss at epoch {epoch}", last_good,
                                    result.history)
            # these parameters produced a finite loss
            last_good = copy.deepcopy(model.state_dict())
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            result.history.append(loss.item())
            losses.append(loss.item())
        result.epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d loss %.4f", epoch, result.epoch_losses[-1])
        if callback is not None:
            callback(epoch, result)
    model.eval()
    return result
