"""Acceptance criteria 1 to 11, one PASS/FAIL line each.

The lines are collected during the run and printed in the terminal summary
under "acceptance criteria". Criteria 7 to 11 share one set of benchmark
runs (about ten trainings) and take most of the time.
"""
import csv
import math
import time

import numpy as np
import pytest

from conftest import (ACCEPTANCE_KEY, check_augmented, finite_difference_check, oracle_dcor,
                      oracle_fdr, oracle_pearson, oracle_wasserstein1, tiny_batch,
                      tiny_model_cfg)


@pytest.fixture
def record(request):
    def _record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE_KEY][n] = line
        print(line)
        assert ok, line
    return _record


def test_c01_huffman_length(record):
    from hpack.huffman import HuffmanEncoder
    from hpack.huffman_constants import REQUEST_CODES, REQUEST_CODES_LENGTH

    from wfalign.hpack_huffman import huffman_encoded_len

    oracle = HuffmanEncoder(REQUEST_CODES, REQUEST_CODES_LENGTH)
    rng = np.random.default_rng(1)
    strings = ["".join(chr(c) for c in rng.integers(32, 127, size=int(rng.integers(0, 100))))
               for _ in range(1000)]
    t0 = time.perf_counter()
    ours = [huffman_encoded_len(s) for s in strings]
    dt = time.perf_counter() - t0
    agree = sum(a == len(oracle.encode(s.encode())) for a, s in zip(ours, strings))
    record(1, agree == 1000 and dt < 1.0, f"huffman lengths {agree}/1000 agree with hpack, "
                                          f"{dt:.3f} s")


def test_c02_statistics(record):
    from wfalign.anchors import pearson, wasserstein1
    from wfalign.retrieval import dcor, fdr

    rng = np.random.default_rng(2)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        n = int(rng.integers(6, 30))
        x, y = rng.normal(size=n), rng.lognormal(size=n)
        b = rng.normal(size=int(rng.integers(1, 30)))
        labels = np.concatenate([np.arange(3), rng.integers(0, 3, n - 3)])
        e, f = rng.normal(size=(n, 5)), rng.normal(size=(n, 2))
        pairs = [(pearson(x, y), oracle_pearson(x.tolist(), y.tolist())),
                 (wasserstein1(x, b), oracle_wasserstein1(x, b)),
                 (fdr(e, labels).value, oracle_fdr(e, labels.tolist())),
                 (dcor(e, f), oracle_dcor(e.tolist(), f.tolist()))]
        for got, want in pairs:
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
    dt = time.perf_counter() - t0
    record(2, worst <= 1e-8 and dt < 10.0,
           f"pearson/W1/FDR/dcor worst relative error {worst:.2e} over 100 instances, {dt:.2f} s")


def test_c03_zero_noise_anchors(record):
    from wfalign.anchors import aggregate_report, request_anchor, response_anchor
    from wfalign.core import LogicProfile, PairedSample
    from wfalign.synth import GenConfig, gen_corpus

    t0 = time.perf_counter()
    corpus = gen_corpus(GenConfig(n_sites=50, visits_per_site=1, rng_seed=3).zero_noise())
    rep = aggregate_report(corpus)
    req = [request_anchor(p) for p in corpus]
    resp = [response_anchor(p) for p in corpus]
    sig_req = np.mean([r.request_p < 0.05 for r in rep.sites])
    # each site's traffic against another site's logic; one derangement is a
    # noisy draw, so the fraction is averaged over ten of them
    drng = np.random.default_rng(0)
    fractions = []
    while len(fractions) < 10:
        perm = drng.permutation(len(corpus))
        if np.any(perm == np.arange(len(corpus))):
            continue
        wrong = [PairedSample(LogicProfile(corpus[j].logic.resources, p.site_id), p.traffic,
                              p.site_id) for p, j in zip(corpus, perm)]
        fractions.append(aggregate_report(wrong, seed=len(fractions)).request.significant_fraction)
    mis = float(np.mean(fractions))
    dt = time.perf_counter() - t0
    ok = (all(r == 1.0 for r in req) and all(abs(r - 1.0) <= 1e-9 for r in resp)
          and rep.protocol_r >= 0.99 and sig_req == 1.0
          and mis <= 0.10 and dt < 60)
    record(3, ok, f"request r min {min(req):.12f}, response min {min(resp):.12f}, "
                  f"protocol r {rep.protocol_r:.4f}, significant {sig_req:.0%}, "
                  f"mismatched significant {mis:.1%} (mean of 10 derangements), {dt:.1f} s")


def test_c04_augmentation(record):
    from wfalign.augment import AugConfig, augment_pair
    from wfalign.core import PairedSample
    from wfalign.errors import NotAugmentable
    from wfalign.synth import GenConfig, gen_corpus

    from conftest import pkt, profile, res, trace

    t0 = time.perf_counter()
    corpus = gen_corpus(GenConfig(n_sites=20, visits_per_site=1, rng_seed=4))
    checked = 0
    for seed in range(1000):
        pair = corpus[seed % len(corpus)]
        try:
            out = augment_pair(pair, AugConfig(), seed)
        except NotAugmentable:
            continue
        check_augmented(pair, out)
        checked += 1
    ips = ["lone"] + ["big"] * 9
    pair = PairedSample(profile([res(uri=f"/{i}", ip=ip) for i, ip in enumerate(ips)]),
                        trace([pkt(i, ip=ip) for i, ip in enumerate(ips)]), "s")
    cfg = AugConfig(mu=0.1, sigma=0.0, clamp=(0.1, 0.1))
    n = 10_000
    rate = sum("lone" not in augment_pair(pair, cfg, s).logic.server_ips for s in range(n)) / n
    dt = time.perf_counter() - t0
    record(4, checked >= 900 and abs(rate - 0.9) <= 0.02 and dt < 30,
           f"invariants held on {checked} augmentations, deletion rate {rate:.4f}, {dt:.1f} s")


def test_c05_gradient_check(record):
    from wfalign.neural.model import DualEncoder
    from wfalign.neural.training import TrainConfig

    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(20):
        model = DualEncoder(tiny_model_cfg(draw))
        batch = tiny_batch(model, draw)
        worst = max(worst, finite_difference_check(model, batch, TrainConfig(), per_tensor=2,
                                                   seed=draw))
    dt = time.perf_counter() - t0
    record(5, worst < 1e-4 and dt < 120,
           f"worst finite-difference relative error {worst:.2e} over 20 draws, {dt:.1f} s")


def test_c06_loss_identities(record):
    from wfalign.neural.losses import consistency, info_nce
    from wfalign.retrieval import FewShotMemory, Gallery, tip_adapter_logits

    rng = np.random.default_rng(6)
    unit = lambda n, d: (lambda z: z / np.linalg.norm(z, axis=1, keepdims=True))(
        rng.normal(size=(n, d)))
    single = info_nce(unit(1, 8), unit(1, 8)).item() + 0.0  # drop a negative zero
    uniform = max(abs(info_nce(np.eye(1, 4).repeat(n, 0), np.eye(1, 4).repeat(n, 0)).item()
                      - math.log(n)) for n in (2, 7, 32))
    z = np.tile(unit(1, 8), (4, 1))
    cons = consistency(z, [1, 1, 1, 1]).item()
    g = Gallery(unit(10, 8), list(range(10)))
    mem = FewShotMemory.build(g, unit(20, 8), [k for k in range(10) for _ in range(2)],
                              alpha=0.0)
    q = unit(100, 8)
    same = np.array_equal(np.argmax(tip_adapter_logits(g, mem, q), 1), np.argmax(q @ g.anchors.T, 1))
    record(6, single == 0.0 and uniform <= 1e-9 and cons == 0.0 and same,
           f"info_nce(N=1)={single}, |uniform - ln N| max {uniform:.1e}, consistency {cons}, "
           f"tip alpha=0 argmax matches zero-shot: {same}")


# --- benchmark-backed criteria ----------------------------------------------

SEEDS = (0, 1, 2)


class Runs:
    def __init__(self):
        from wfalign.benchmark import BenchmarkConfig, build_data
        self.cfg = BenchmarkConfig()
        self.data = build_data(self.cfg)
        self.cache = {}
        self.times = {}

    def get(self, seed=0, mix="full", rerun=False):
        from wfalign.benchmark import run_benchmark
        key = (seed, mix, rerun)
        if key not in self.cache:
            t0 = time.perf_counter()
            self.cache[key] = run_benchmark(self.cfg.with_seed(seed), self.data, mix)
            self.times[key] = time.perf_counter() - t0
        return self.cache[key]


@pytest.fixture(scope="module")
def runs():
    return Runs()


@pytest.mark.slow
def test_c07_zero_shot(record, runs):
    r = runs.get()
    record(7, r.top1 >= 0.40 and r.top5 >= 0.70,
           f"200 train / 50 unseen sites: top1 {r.top1:.3f}, top5 {r.top5:.3f} "
           f"({runs.times[(0, 'full', False)]:.0f} s training+eval)")


@pytest.mark.slow
def test_c08_open_world(record, runs, tmp_path):
    r = runs.get()
    path = tmp_path / "pr_curve.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        w.writerows(r.pr_curve)
    n_rows = len(path.read_text().splitlines()) - 1
    record(8, r.auc >= 0.85 and n_rows > 0,
           f"50 monitored + 50 unmonitored: AUC {r.auc:.3f}, best F1 {r.best_f1:.3f}, "
           f"PR CSV {n_rows} rows")


@pytest.mark.slow
def test_c09_few_shot(record, runs):
    r = runs.get()
    p = r.probe_top1
    record(9, r.tip_top1 >= r.top1 and p[16] >= p[1],
           f"tip n=4 {r.tip_top1:.3f} vs zero-shot {r.top1:.3f}; "
           f"probe n=1 {p[1]:.3f}, n=4 {p[4]:.3f}, n=16 {p[16]:.3f}")


@pytest.mark.slow
def test_c10_ablations(record, runs):
    full = np.mean([runs.get(s).top1 for s in SEEDS])
    no_aug = np.mean([runs.get(s, "no_aug").top1 for s in SEEDS])
    nce = np.mean([runs.get(s, "infonce").top1 for s in SEEDS])
    record(10, full >= no_aug - 0.02 and full >= nce - 0.02,
           f"mean top1 over 3 seeds: 10:3:3 {full:.3f}, 10:0:3 {no_aug:.3f}, "
           f"InfoNCE only {nce:.3f}")


@pytest.mark.slow
def test_c11_determinism(record, runs):
    a = runs.get().metrics()
    b = runs.get(rerun=True).metrics()
    record(11, a == b, f"rerun metrics identical: {a == b} (checksum {a['checksum'][:12]})")
