import numpy as np
import pytest
import torch

from wfalign.core import (Direction, HttpVersion, LogicProfile, MimeCategory, PacketRecord,
                          ResourceRecord, TrafficTrace, Transport)

torch.set_num_threads(1)

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])


def pkt(ts, direction="c2s", length=100, ip="10.0.0.1", port=443, transport="tcp", b0=None):
    return PacketRecord(float(ts), Direction(direction), length, Transport(transport), ip, port,
                        b0 if length > 0 else None)


def res(uri="/a.js", size=1000, header=200, version=2, alt=False, mime=MimeCategory.SCRIPT,
        ip="10.0.0.1"):
    return ResourceRecord.from_uri(uri, size, header, HttpVersion(version), alt, mime, ip)


def profile(resources, site="s"):
    return LogicProfile(tuple(resources), site)


def trace(packets, site="s", label=None):
    return TrafficTrace(tuple(packets), site, label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def check_augmented(pair, out):
    """Structural invariants of one augmentation of ``pair``."""
    from wfalign.augment import ip_groups

    orig = pair.logic.server_ips
    kept = out.logic.server_ips
    assert kept == out.traffic.server_ips
    assert kept <= orig and kept
    deleted = orig - kept
    groups = ip_groups(pair.logic)
    for ip, idx in groups.items():
        n_out = sum(r.server_ip == ip for r in out.logic.resources)
        assert n_out in (0, len(idx))
    assert len(out.logic.resources) >= 1 and len(out.traffic.packets) >= 1
    assert all(p.server_ip not in deleted for p in out.traffic.packets)
    assert [r for r in pair.logic.resources if r.server_ip in kept] == list(out.logic.resources)
    assert out.site_id == pair.site_id and out.label == pair.label


# --- small neural fixtures --------------------------------------------------

def tiny_model_cfg(seed=0, **kw):
    from wfalign.neural.model import ModelConfig
    base = dict(embed_dim=8, conv_channels=(2, 2), kernel_size=3, token_dim=8, n_layers=1,
                n_heads=2, cont_dim=4, cat_dim=2, max_index=8, traffic_len=32, logic_len=12,
                init_seed=seed)
    base.update(kw)
    return ModelConfig(**base)


def tiny_batch(model, seed=0, n_pairs=3, n_labeled=4):
    """Composite batch built from a few synthetic visits."""
    from wfalign.encoding import encode_logic, encode_traffic
    from wfalign.neural.training import Batch
    from wfalign.synth import GenConfig, gen_corpus

    cfg = GenConfig(n_sites=n_pairs, resources_per_site=(3, 6), visits_per_site=2, rng_seed=seed)
    corpus = gen_corpus(cfg)
    enc = model.cfg.encoding
    pairs = [(encode_traffic(p.traffic, enc), encode_logic(p.logic, enc)) for p in corpus[::2]]
    sites = [p.site_id for p in corpus[::2]]
    lab = corpus[:n_labeled]
    return Batch.from_matrices(model, pairs, sites, [encode_traffic(p.traffic, enc) for p in lab],
                               [p.label for p in lab])


def finite_difference_check(model, batch, train_cfg, per_tensor=3, h=1e-4, seed=0):
    """Worst relative error between autograd and central differences.

    Samples ``per_tensor`` entries from every parameter tensor.
    """
    import torch
    from wfalign.neural.training import combined_loss, objective

    _, grads = combined_loss(batch, model, train_cfg)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            for k in rng.choice(flat.numel(), size=min(per_tensor, flat.numel()), replace=False):
                old = flat[k].item()
                flat[k] = old + h
                up = objective(model, batch, train_cfg)[0].item()
                flat[k] = old - h
                down = objective(model, batch, train_cfg)[0].item()
                flat[k] = old
                fd = (up - down) / (2 * h)
                g = grads[name].view(-1)[k].item()
                err = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
                worst = max(worst, err)
    return worst


# --- brute-force statistic oracles -----------------------------------------

def oracle_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / (sxx * syy) ** 0.5


def oracle_wasserstein1(a, b):
    from scipy.stats import wasserstein_distance
    return wasserstein_distance(a, b)


def oracle_fdr(x, labels):
    x = [list(map(float, r)) for r in x]
    d, n = len(x[0]), len(x)
    mu = [sum(r[j] for r in x) / n for j in range(d)]
    between = within = 0.0
    for c in sorted(set(labels)):
        rows = [r for r, y in zip(x, labels) if y == c]
        mc = [sum(r[j] for r in rows) / len(rows) for j in range(d)]
        between += len(rows) * sum((mc[j] - mu[j]) ** 2 for j in range(d))
        within += sum((r[j] - mc[j]) ** 2 for r in rows for j in range(d))
    return between / within


def oracle_dcor(x, y):
    import math

    def dist(p):
        n = len(p)
        return [[math.dist(p[i], p[j]) for j in range(n)] for i in range(n)]

    def center(dm):
        n = len(dm)
        row = [sum(r) / n for r in dm]
        col = [sum(dm[i][j] for i in range(n)) / n for j in range(n)]
        tot = sum(row) / n
        return [[dm[i][j] - row[i] - col[j] + tot for j in range(n)] for i in range(n)]

    a, b = center(dist(x)), center(dist(y))
    n = len(a)
    v = lambda p, q: sum(p[i][j] * q[i][j] for i in range(n) for j in range(n)) / n ** 2
    return math.sqrt(v(a, b) / math.sqrt(v(a, a) * v(b, b)))


def oracle_auc(pos, neg):
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))
