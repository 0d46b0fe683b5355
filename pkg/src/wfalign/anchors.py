"""Statistics for the three cross-modal alignment anchors.

* request: Pearson r between client-to-server packet sizes and Huffman URI
  lengths, paired by order of occurrence;
* response: 1 - W1 between max-normalised per-flow response volumes and the
  matching per-server sums of resource sizes;
* protocol: Pearson r across sites between the UDP packet share and the
  HTTP/3 resource share.

Significance comes from permutation tests.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Direction, HttpVersion, PairedSample, Transport
from .errors import DegenerateInput, EmptyInput

ALPHA = 0.05
N_PERM = 1000

# Real-crawl values for the same statistics, kept for side-by-side reporting.
REFERENCE_VALUES = {
    "request_r": 0.3114,
    "response_score": 0.9109,
    "protocol_r": 0.5607,
}


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D sequences of equal length")
    if x.size < 2:
        raise DegenerateInput("pearson needs at least two points")
    # shifting by the first element first keeps exact affine pairs exact
    dx = x - x[0]
    dy = y - y[0]
    dx -= dx.mean()
    dy -= dy.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("pearson is undefined for a constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def wasserstein1(a: Sequence[float], b: Sequence[float]) -> float:
    """Empirical 1-D Wasserstein-1 distance (uniform weights)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptyInput("wasserstein1 needs two non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    # integrate |Qa(u) - Qb(u)| over u in (0, 1); both quantile functions are
    # constant between consecutive merged breakpoints
    edges = np.union1d(np.arange(1, a.size) / a.size, np.arange(1, b.size) / b.size)
    edges = np.concatenate(([0.0], edges, [1.0]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    qa = a[np.minimum((mids * a.size).astype(np.int64), a.size - 1)]
    qb = b[np.minimum((mids * b.size).astype(np.int64), b.size - 1)]
    return float(np.sum(np.abs(qa - qb) * np.diff(edges)))


def request_series(pair: PairedSample) -> tuple[np.ndarray, np.ndarray]:
    x = [p.payload_len for p in pair.traffic.packets if p.direction is Direction.C2S]
    y = [r.uri_huffman_len for r in pair.logic.resources]
    n = min(len(x), len(y))
    return np.asarray(x[:n], dtype=np.float64), np.asarray(y[:n], dtype=np.float64)


def request_anchor(pair: PairedSample) -> float:
    x, y = request_series(pair)
    if x.size < 2:
        raise DegenerateInput("request anchor needs two requests and two resources")
    return pearson(x, y)


def response_volumes(pair: PairedSample) -> tuple[np.ndarray, np.ndarray]:
    """Per-flow response byte sums and the matching per-server resource sums.

    A flow is (server_ip, transport); the logic side is grouped the same
    way, with HTTP/3 resources on UDP and the rest on TCP.
    """
    traffic: dict = {}
    for p in pair.traffic.packets:
        if p.direction is Direction.S2C:
            key = (p.server_ip, p.transport)
            traffic[key] = traffic.get(key, 0) + p.payload_len
    logic: dict = {}
    for r in pair.logic.resources:
        t = Transport.UDP if r.http_version is HttpVersion.H3 else Transport.TCP
        key = (r.server_ip, t)
        logic[key] = logic.get(key, 0) + r.response_size
    return (np.array(list(traffic.values()), dtype=np.float64),
            np.array(list(logic.values()), dtype=np.float64))


def _max_normalize(v: np.ndarray) -> np.ndarray:
    top = v.max()
    if top <= 0:
        raise DegenerateInput("all sizes are zero")
    return v / top


def response_score(traffic_volumes: np.ndarray, logic_volumes: np.ndarray) -> float:
    if traffic_volumes.size == 0 or logic_volumes.size == 0:
        raise DegenerateInput("response anchor needs response packets and resources")
    return 1.0 - wasserstein1(_max_normalize(traffic_volumes), _max_normalize(logic_volumes))


def response_anchor(pair: PairedSample) -> float:
    return response_score(*response_volumes(pair))


def protocol_ratios(pair: PairedSample) -> tuple[float, float]:
    pk = pair.traffic.packets
    res = pair.logic.resources
    if not pk or not res:
        raise DegenerateInput("protocol ratios need packets and resources")
    udp = sum(p.transport is Transport.UDP for p in pk) / len(pk)
    h3 = sum(r.http_version is HttpVersion.H3 for r in res) / len(res)
    return udp, h3


def protocol_anchor(corpus: Sequence[PairedSample]) -> float:
    if len(corpus) < 2:
        raise DegenerateInput("protocol anchor needs at least two sites")
    xy = np.array([protocol_ratios(p) for p in corpus])
    return pearson(xy[:, 0], xy[:, 1])


def permutation_test(stat_fn: Callable[[np.ndarray, np.ndarray], float], x, y,
                     n_perm: int = N_PERM, seed: int = 0) -> float:
    """Two-sided permutation p-value, (1 + #{|stat*| >= |stat|}) / (n_perm + 1).

    Permutations are drawn up front from one seeded generator, so the result
    does not depend on evaluation order.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    x = np.asarray(x)
    y = np.asarray(y)
    observed = abs(stat_fn(x, y))
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(np.arange(len(y)), (n_perm, 1)), axis=1)
    # tolerate float noise so an exact re-pairing counts as "as extreme"
    tol = 1e-12 * max(1.0, observed)
    hits = sum(abs(stat_fn(x, y[idx])) >= observed - tol for idx in perms)
    return (1 + hits) / (n_perm + 1)


@dataclass
class SiteRecord:
    site_id: str
    request_r: Optional[float] = None
    request_p: Optional[float] = None
    response_score: Optional[float] = None
    response_p: Optional[float] = None
    udp_ratio: Optional[float] = None
    h3_ratio: Optional[float] = None


@dataclass
class AnchorSummary:
    n: int
    mean: Optional[float]
    std: Optional[float]
    mean_p: Optional[float]
    median_p: Optional[float]
    significant_fraction: Optional[float]
    skipped: int = 0


@dataclass
class AnchorReport:
    sites: list[SiteRecord]
    request: AnchorSummary
    response: AnchorSummary
    protocol_r: Optional[float]
    protocol_p: Optional[float]
    alpha: float = ALPHA
    n_perm: int = N_PERM
    reference: dict = field(default_factory=lambda: dict(REFERENCE_VALUES))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        def fmt(v, spec=".4f"):
            return "-" if v is None else format(v, spec)

        rows = [("Anchor", "Metric", "Mean", "Std", "p (mean)", "p (median)", "Sig. (%)", "Ref.")]
        for name, metric, s, ref in (
                ("Request", "Pearson r", self.request, REFERENCE_VALUES["request_r"]),
                ("Response", "1 - W1", self.response, REFERENCE_VALUES["response_score"])):
            sig = None if s.significant_fraction is None else 100 * s.significant_fraction
            rows.append((name, metric, fmt(s.mean), fmt(s.std), fmt(s.mean_p),
                         fmt(s.median_p), fmt(sig, ".0f"), fmt(ref)))
        sig = None if self.protocol_p is None else 100.0 * (self.protocol_p < self.alpha)
        rows.append(("Protocol", "Pearson r", fmt(self.protocol_r), "-", fmt(self.protocol_p),
                     fmt(self.protocol_p), fmt(sig, ".0f"), fmt(REFERENCE_VALUES["protocol_r"])))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _summarize(values, pvalues, skipped, alpha) -> AnchorSummary:
    if not values:
        return AnchorSummary(0, None, None, None, None, None, skipped)
    v = np.asarray(values)
    p = np.asarray(pvalues)
    return AnchorSummary(len(v), float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0,
                         float(p.mean()), float(np.median(p)), float(np.mean(p < alpha)),
                         skipped)


def aggregate_report(corpus: Sequence[PairedSample], n_perm: int = N_PERM, seed: int = 0,
                     alpha: float = ALPHA) -> AnchorReport:
    """Per-site anchor statistics plus corpus-level aggregates.

    Request p-values permute the URI lengths within a site. Response
    p-values compare a site's score against its scores when paired with
    every other site's logic profile. Sites where an anchor is undefined are
    skipped for that anchor and counted.
    """
    if len(corpus) < 2:
        raise DegenerateInput("aggregate_report needs at least two sites")
    seeds = np.random.SeedSequence(seed).generate_state(len(corpus), np.uint64)
    records = [SiteRecord(p.site_id) for p in corpus]

    req_vals, req_ps, req_skip = [], [], 0
    for rec, pair, s in zip(records, corpus, seeds):
        try:
            x, y = request_series(pair)
            if x.size < 2:
                raise DegenerateInput("too few requests")
            rec.request_r = pearson(x, y)
            rec.request_p = permutation_test(pearson, x, y, n_perm, int(s))
        except DegenerateInput:
            req_skip += 1
            continue
        req_vals.append(rec.request_r)
        req_ps.append(rec.request_p)

    volumes = []
    for pair in corpus:
        try:
            t, lg = response_volumes(pair)
            volumes.append((_max_normalize(t), _max_normalize(lg)))
        except (DegenerateInput, ValueError):
            volumes.append(None)
    resp_vals, resp_ps, resp_skip = [], [], 0
    valid = [j for j, v in enumerate(volumes) if v is not None]
    for i, rec in enumerate(records):
        if volumes[i] is None:
            resp_skip += 1
            continue
        t_i = volumes[i][0]
        score = 1.0 - wasserstein1(t_i, volumes[i][1])
        others = [1.0 - wasserstein1(t_i, volumes[j][1]) for j in valid if j != i]
        rec.response_score = score
        rec.response_p = (1 + sum(o >= score - 1e-12 for o in others)) / (len(others) + 1)
        resp_vals.append(score)
        resp_ps.append(rec.response_p)

    for rec, pair in zip(records, corpus):
        try:
            rec.udp_ratio, rec.h3_ratio = protocol_ratios(pair)
        except DegenerateInput:
            pass
    ratios = np.array([(r.udp_ratio, r.h3_ratio) for r in records if r.udp_ratio is not None])
    protocol_r = protocol_p = None
    if len(ratios) >= 2:
        try:
            protocol_r = pearson(ratios[:, 0], ratios[:, 1])
            protocol_p = permutation_test(pearson, ratios[:, 0], ratios[:, 1], n_perm, seed)
        except DegenerateInput:
            pass

    return AnchorReport(records, _summarize(req_vals, req_ps, req_skip, alpha),
                        _summarize(resp_vals, resp_ps, resp_skip, alpha),
                        protocol_r, protocol_p, alpha, n_perm)
