import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wfalign.anchors import request_series
from wfalign.augment import AugConfig, augment_pair, ip_groups, selection_weights
from wfalign.core import PairedSample
from wfalign.errors import NotAugmentable, ValidationError
from wfalign.synth import GenConfig, gen_corpus

from conftest import check_augmented, pkt, profile, res, trace


def _pair(ips, site="s"):
    logic = profile([res(uri=f"/{i}", ip=ip) for i, ip in enumerate(ips)], site)
    packets = [pkt(i, ip=ip) for i, ip in enumerate(ips)]
    return PairedSample(logic, trace(packets, site), site)


def test_groups():
    assert list(ip_groups(_pair(["a"] * 4).logic).values()) == [[0, 1, 2, 3]]
    assert len(ip_groups(_pair(list("abcd")).logic)) == 4
    g = ip_groups(_pair(["a", "a", "a", "b", "b", "c"]).logic)
    assert [len(v) for v in g.values()] == [3, 2, 1]


def test_weights():
    assert selection_weights({"a": [0, 1, 2]}) == {"a": 0.0}
    w = selection_weights({"a": [0], "b": [1, 2, 3]})
    assert w == {"a": 0.75, "b": 0.25}
    w = selection_weights({k: [i] for i, k in enumerate("abcde")})
    assert all(v == pytest.approx(0.8) for v in w.values())


def test_single_ip_not_augmentable():
    with pytest.raises(NotAugmentable):
        augment_pair(_pair(["a"] * 5))


def test_config_validation():
    with pytest.raises(ValidationError):
        AugConfig(clamp=(0.5, 0.2))
    with pytest.raises(ValidationError):
        AugConfig(clamp=(0.1, 1.0))


def test_deletion_probability_monte_carlo():
    pair = _pair(["lone"] + ["big"] * 9)
    cfg = AugConfig(mu=0.1, sigma=0.0, clamp=(0.1, 0.1))
    hits = 0
    n = 10_000
    for seed in range(n):
        out = augment_pair(pair, cfg, seed)
        hits += "lone" not in out.logic.server_ips
    assert abs(hits / n - 0.9) <= 0.02


@given(st.lists(st.sampled_from("abcdef"), min_size=2, max_size=30), st.integers(0, 2**32 - 1))
@settings(max_examples=200)
def test_invariants_property(ips, seed):
    pair = _pair(ips)
    try:
        out = augment_pair(pair, AugConfig(), seed)
    except NotAugmentable:
        assert len(set(ips)) < 2
        return
    check_augmented(pair, out)
    again = augment_pair(pair, AugConfig(), seed)
    assert again == out


def test_zero_noise_identity_survives():
    cfg = GenConfig(n_sites=5).zero_noise()
    for pair in gen_corpus(cfg, visits_per_site=1):
        try:
            out = augment_pair(pair, AugConfig(), 7)
        except NotAugmentable:
            continue
        x, y = request_series(out)
        assert np.all(x - y == cfg.header_overhead)
