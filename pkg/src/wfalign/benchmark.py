"""Synthetic zero-shot benchmark: train on some sites, retrieve unseen ones.

Sites are split three ways. Training sites supply cross-modal pairs,
labeled traces and augmented pairs. Monitored test sites are never seen in
training; their logic profiles form the gallery and their visits are the
queries. Unmonitored sites only contribute visits for the open-world check.
Extra visits of the monitored sites serve as few-shot support.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .augment import AugConfig, augment_corpus
from .neural.model import DualEncoder, ModelConfig, encode_logic_embed, encode_traffic_embed
from .neural.training import TrainConfig, train
from .encoding import encode_logic, encode_traffic
from .retrieval import (FewShotMemory, Gallery, linear_probe_fit, model_checksum,
                        open_world_eval, tip_adapter_logits, topk_accuracy_embeddings)
from .synth import GenConfig, gen_corpus, gen_sites

BENCH_MODEL = ModelConfig(embed_dim=64, conv_channels=(16, 32, 64), kernel_size=5, token_dim=32,
                          n_layers=2, n_heads=4, cont_dim=8, cat_dim=4, traffic_len=512,
                          logic_len=80)
BENCH_TRAIN = TrainConfig(epochs=100, batch_size=64, lr=2e-3, lr_schedule="cosine")


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train: int = 200
    n_monitored: int = 50
    n_unmonitored: int = 50
    train_visits: int = 4
    labeled_visits: int = 2
    test_visits: int = 4
    support_shots: int = 16
    tip_shots: int = 4
    aug_copies: int = 1
    gen: GenConfig = field(default_factory=lambda: GenConfig(rng_seed=1))
    aug: AugConfig = field(default_factory=lambda: AugConfig(rng_seed=3))
    model: ModelConfig = BENCH_MODEL
    train: TrainConfig = BENCH_TRAIN

    def with_seed(self, seed: int) -> "BenchmarkConfig":
        """Same sites, different model init and batch order."""
        return replace(self, model=replace(self.model, init_seed=seed),
                       train=replace(self.train, rng_seed=seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


@dataclass
class BenchmarkData:
    cross: list
    labeled: list
    augmented: list
    gallery_profiles: list
    queries: list
    unmonitored: list
    support: list


def build_data(cfg: BenchmarkConfig) -> BenchmarkData:
    n_sites = cfg.n_train + cfg.n_monitored + cfg.n_unmonitored
    gen = replace(cfg.gen, n_sites=n_sites)
    sites = gen_sites(gen)
    tr = sites[:cfg.n_train]
    mon = sites[cfg.n_train:cfg.n_train + cfg.n_monitored]
    unm = sites[cfg.n_train + cfg.n_monitored:]
    cross = gen_corpus(gen, tr, cfg.train_visits)
    labeled = gen_corpus(gen, tr, cfg.labeled_visits, seed_offset=1)
    augmented = augment_corpus(cross, cfg.aug, copies=cfg.aug_copies) if cfg.aug_copies else []
    queries = gen_corpus(gen, mon, cfg.test_visits, seed_offset=2, label_offset=cfg.n_train)
    unmonitored = gen_corpus(gen, unm, cfg.test_visits, seed_offset=3,
                             label_offset=cfg.n_train + cfg.n_monitored)
    support = gen_corpus(gen, mon, cfg.support_shots, seed_offset=4, label_offset=cfg.n_train)
    return BenchmarkData(cross, labeled, augmented, [s.logic_profile() for s in mon],
                         queries, unmonitored, support)


@dataclass
class BenchmarkResult:
    top1: float
    top5: float
    auc: float
    best_f1: float
    tip_top1: float
    probe_top1: dict
    checksum: str
    epoch_losses: list
    pr_curve: list = field(repr=False, default_factory=list)

    def metrics(self) -> dict:
        """Scalar metrics only; these must repeat exactly under a fixed seed."""
        return {"top1": self.top1, "top5": self.top5, "auc": self.auc, "best_f1": self.best_f1,
                "tip_top1": self.tip_top1,
                "probe_top1": {str(k): v for k, v in self.probe_top1.items()},
                "checksum": self.checksum}


def _first_shots(samples, n):
    taken, out = {}, []
    for s in samples:
        if taken.get(s.label, 0) < n:
            taken[s.label] = taken.get(s.label, 0) + 1
            out.append(s)
    return out


def evaluate(model: DualEncoder, data: BenchmarkData, cfg: BenchmarkConfig) -> dict:
    enc = model.cfg.encoding
    class_ids = [q.label for q in data.queries[::cfg.test_visits]]
    anchors = encode_logic_embed(model, [encode_logic(p, enc) for p in data.gallery_profiles])
    gallery = Gallery(anchors, class_ids)
    zq = encode_traffic_embed(model, [encode_traffic(q.traffic, enc) for q in data.queries])
    zu = encode_traffic_embed(model, [encode_traffic(u.traffic, enc) for u in data.unmonitored])
    labels = [q.label for q in data.queries]
    out = {"top1": topk_accuracy_embeddings(gallery, zq, labels, 1),
           "top5": topk_accuracy_embeddings(gallery, zq, labels, 5)}
    ow = open_world_eval((zq @ anchors.T).max(1), (zu @ anchors.T).max(1))
    out.update(auc=ow.auc, best_f1=ow.best_f1, pr_curve=list(ow.pr_rows()))

    support = data.support
    zs = encode_traffic_embed(model, [encode_traffic(s.traffic, enc) for s in support])
    idx = {id(s): i for i, s in enumerate(support)}
    tip_set = _first_shots(support, cfg.tip_shots)
    mem = FewShotMemory.build(gallery, zs[[idx[id(s)] for s in tip_set]],
                              [s.label for s in tip_set])
    pred = np.argmax(tip_adapter_logits(gallery, mem, zq), axis=1)
    truth = np.array([gallery.index_of(y) for y in labels])
    out["tip_top1"] = float(np.mean(pred == truth))
    probe = {}
    for n in sorted({1, cfg.tip_shots, cfg.support_shots}):
        shots = _first_shots(support, n)
        lp = linear_probe_fit(zs[[idx[id(s)] for s in shots]], [s.label for s in shots],
                              class_ids)
        probe[n] = float(np.mean(np.array(lp.predict(zq)) == np.array(labels)))
    out["probe_top1"] = probe
    return out


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), data: BenchmarkData | None = None,
                  datasets: str = "full") -> BenchmarkResult:
    """Train one model and score it.

    ``datasets`` picks the training mix: "full" uses all three sources with
    the configured ratio, "no_aug" drops the augmented share (10:0:3 style)
    and "infonce" trains on cross-modal pairs with the supervised terms off.
    """
    data = data or build_data(cfg)
    tcfg = cfg.train
    sources = {"crossmodal": data.cross, "augmented": data.augmented, "labeled": data.labeled}
    if datasets == "no_aug":
        tcfg = replace(tcfg, mix_ratio=(tcfg.mix_ratio[0], 0.0, tcfg.mix_ratio[2]))
        sources["augmented"] = []
    elif datasets == "infonce":
        # same cross-modal batches, supervised terms off
        tcfg = replace(tcfg, lambda_sup=0.0, lambda_cons=0.0)
        sources["labeled"] = []
    elif datasets != "full":
        raise ValueError(f"unknown training mix {datasets!r}")
    res = train(sources, tcfg, cfg.model)
    m = evaluate(res.model, data, cfg)
    return BenchmarkResult(m["top1"], m["top5"], m["auc"], m["best_f1"], m["tip_top1"],
                           m["probe_top1"], model_checksum(res.model), res.epoch_losses,
                           m["pr_curve"])
