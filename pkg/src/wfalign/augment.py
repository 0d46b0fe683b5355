"""Structure-aware augmentation: drop whole server-IP groups from both modalities.

Resources are grouped by server IP. IPs hosting a small share of the page
are more likely to be picked (weight 1 - |group| / |R|). Whole groups are
removed from the logic profile together with every packet exchanged with
that IP, until a Gaussian-drawn share of the resources is gone.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LogicProfile, PairedSample, TrafficTrace
from .errors import NotAugmentable, ValidationError


@dataclass(frozen=True)
class AugConfig:
    mu: float = 0.3
    sigma: float = 0.1
    clamp: tuple[float, float] = (0.05, 0.6)
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.clamp
        if not 0.0 <= lo <= hi < 1.0:
            raise ValidationError("clamp must satisfy 0 <= min <= max < 1")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")
        object.__setattr__(self, "clamp", (float(lo), float(hi)))


def ip_groups(logic: LogicProfile) -> dict[str, list[int]]:
    """Resource indices per server IP, IPs in first-seen order."""
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(logic.resources):
        groups.setdefault(r.server_ip, []).append(i)
    return groups


def selection_weights(groups: dict[str, list[int]]) -> dict[str, float]:
    total = sum(len(g) for g in groups.values())
    if total < 1:
        raise ValueError("selection weights need at least one resource")
    return {ip: 1.0 - len(g) / total for ip, g in groups.items()}


def deletion_threshold(n_resources: int, largest_group: int, cfg: AugConfig,
                       rng: np.random.Generator) -> float:
    """Number of resources to delete: N(mu, sigma) * |R|, clamped so one IP survives."""
    t = rng.normal(cfg.mu, cfg.sigma) * n_resources
    lo, hi = cfg.clamp
    t = min(max(t, lo * n_resources), hi * n_resources)
    return min(t, n_resources - largest_group)


def augment_pair(pair: PairedSample, cfg: AugConfig = AugConfig(),
                 seed: Optional[int] = None) -> PairedSample:
    """Return a sub-pair with some server IPs removed from both modalities.

    Raises NotAugmentable when the logic side has fewer than two server IPs.
    ``seed`` overrides ``cfg.rng_seed``.
    """
    groups = ip_groups(pair.logic)
    if len(groups) < 2:
        raise NotAugmentable("need at least two server IPs")
    weights = selection_weights(groups)
    n = len(pair.logic.resources)
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    threshold = deletion_threshold(n, max(len(g) for g in groups.values()), cfg, rng)

    remaining = dict(weights)
    deleted: list[str] = []
    n_deleted = 0
    while n_deleted < threshold:
        # deleting the last surviving IP would empty the logic profile
        if len(remaining) < 2:
            break
        ips = list(remaining)
        w = np.array([remaining[ip] for ip in ips])
        if w.sum() <= 0:
            break
        ip = ips[int(rng.choice(len(ips), p=w / w.sum()))]
        del remaining[ip]
        deleted.append(ip)
        n_deleted += len(groups[ip])

    if not deleted:
        raise NotAugmentable("no server IP could be deleted")
    gone = set(deleted)
    logic = LogicProfile(tuple(r for r in pair.logic.resources if r.server_ip not in gone),
                         pair.logic.site_id)
    traffic = TrafficTrace(tuple(p for p in pair.traffic.packets if p.server_ip not in gone),
                           pair.traffic.site_id, pair.traffic.label)
    if not traffic.packets:
        raise NotAugmentable("augmentation would leave no packets")
    return PairedSample(logic, traffic, pair.site_id)


def augment_corpus(pairs: list[PairedSample], cfg: AugConfig = AugConfig(),
                   copies: int = 1) -> list[PairedSample]:
    """Augmented copies of every augmentable pair, deterministic under ``cfg.rng_seed``."""
    seeds = np.random.SeedSequence(cfg.rng_seed).generate_state(
        max(1, len(pairs) * copies), np.uint64)
    out = []
    for i, pair in enumerate(pairs):
        for c in range(copies):
            try:
                out.append(augment_pair(pair, cfg, int(seeds[i * copies + c])))
            except NotAugmentable:
                continue
    return out
