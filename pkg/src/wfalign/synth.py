"""Synthetic websites and paired visits with known cross-modal structure.

A site is a list of resources spread over a handful of server IPs (a few
IPs host most resources). A visit turns each resource into one request
packet whose size follows the compressed-header model

    request_len = huffman_len(uri) + round(C * H) + jitter

and a run of response packets carrying ``response_size`` plus overhead,
cut at the MTU. HTTP/3 resources travel over UDP, everything else over TCP.
With all noise knobs at zero the three alignment relations hold exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (Direction, HttpVersion, LogicProfile, MimeCategory, PacketRecord,
                   PairedSample, ResourceRecord, TrafficTrace, Transport)
from .errors import ValidationError
from .hpack_huffman import huffman_encoded_len
from .ingest import TLS_APPDATA

URI_ALPHABET = np.array(list("abcdefghijklmnopqrstuvwxyz0123456789/._-"))
HTTPS_PORT = 443

# rough share of each category on a typical page
_MIME_WEIGHTS = np.array([0.04, 0.28, 0.10, 0.36, 0.06, 0.02, 0.10, 0.04])
_MIME_EXT = {MimeCategory.DOCUMENT: ".html", MimeCategory.SCRIPT: ".js",
             MimeCategory.STYLESHEET: ".css", MimeCategory.IMAGE: ".png",
             MimeCategory.FONT: ".woff2", MimeCategory.MEDIA: ".mp4",
             MimeCategory.XHR: ".json", MimeCategory.OTHER: ""}


@dataclass(frozen=True)
class NoiseConfig:
    request_len_jitter_bytes: int = 4
    response_overhead_frac: float = 0.05
    packet_mtu: int = 1460
    shuffle_visit_order: bool = True

    def __post_init__(self):
        if self.packet_mtu < 64:
            raise ValidationError("packet_mtu must be >= 64")
        if self.request_len_jitter_bytes < 0 or self.response_overhead_frac < 0:
            raise ValidationError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class GenConfig:
    n_sites: int = 20
    resources_per_site: tuple[int, int] = (12, 40)
    uri_len: tuple[int, int] = (6, 80)
    ips_per_site: tuple[int, int] = (2, 6)
    header_count_H: int = 8
    header_index_bytes_C: float = 2.0
    h3_probability: float = 0.3
    response_size_log_mean: float = 8.5
    response_size_log_sd: float = 1.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    visits_per_site: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("resources_per_site", "uri_len", "ips_per_site"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValidationError(f"{name} must be a non-empty positive range")
            object.__setattr__(self, name, (int(lo), int(hi)))
        if not 0.0 <= self.h3_probability <= 1.0:
            raise ValidationError("h3_probability must lie in [0, 1]")
        if self.n_sites < 0 or self.visits_per_site < 0:
            raise ValidationError("counts must be non-negative")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseConfig(**self.noise))

    @property
    def header_overhead(self) -> int:
        return int(round(self.header_index_bytes_C * self.header_count_H))

    def zero_noise(self, shuffle: bool = False) -> "GenConfig":
        """Copy of this config with every noise source switched off."""
        noise = replace(self.noise, request_len_jitter_bytes=0, response_overhead_frac=0.0,
                        shuffle_visit_order=shuffle)
        return replace(self, noise=noise)


@dataclass(frozen=True)
class SiteResource:
    uri: str
    response_size: int
    header_len: int
    http_version: HttpVersion
    alt_svc_h3: bool
    mime_category: MimeCategory
    server_ip: str


@dataclass(frozen=True)
class SiteSpec:
    site_id: str
    resources: tuple[SiteResource, ...]
    rng_seed: int

    def __post_init__(self):
        if not self.resources:
            raise ValidationError("a site needs at least one resource")

    def logic_profile(self) -> LogicProfile:
        recs = tuple(ResourceRecord.from_uri(r.uri, r.response_size, r.header_len,
                                             r.http_version, r.alt_svc_h3,
                                             r.mime_category, r.server_ip)
                     for r in self.resources)
        return LogicProfile(recs, self.site_id)


def _random_uri(rng: np.random.Generator, lo: int, hi: int, mime: MimeCategory) -> str:
    ext = _MIME_EXT[mime]
    n = int(rng.integers(lo, hi + 1))
    body_len = max(1, n - 1 - len(ext))
    body = "".join(rng.choice(URI_ALPHABET, size=body_len))
    return "/" + body + ext if n > len(ext) + 1 else "/" + body


def _site_ips(rng: np.random.Generator, k: int, site_idx: int) -> list[str]:
    ips = []
    while len(ips) < k:
        a, b, c = rng.integers(1, 255, size=3)
        ip = f"{10 + site_idx % 200}.{a}.{b}.{c}"
        if ip not in ips:
            ips.append(ip)
    return ips


def gen_site(cfg: GenConfig, site_idx: int, seed: int) -> SiteSpec:
    rng = np.random.default_rng(seed)
    n_res = int(rng.integers(cfg.resources_per_site[0], cfg.resources_per_site[1] + 1))
    n_ips = int(rng.integers(cfg.ips_per_site[0], cfg.ips_per_site[1] + 1))
    ips = _site_ips(rng, n_ips, site_idx)
    # Zipf-like hosting: the first IP (the origin) carries the bulk of the page
    weights = 1.0 / np.arange(1, n_ips + 1) ** 1.3
    weights /= weights.sum()
    # HTTP version is a property of the server. The per-site HTTP/3 propensity
    # is Beta distributed with mean h3_probability: most sites sit near "all
    # CDN/QUIC" or "no QUIC", as on the real web.
    p = cfg.h3_probability
    site_h3 = float(rng.beta(p + 1e-9, 1.0 - p + 1e-9))
    ip_version = {}
    for ip in ips:
        if rng.random() < site_h3:
            ip_version[ip] = HttpVersion.H3
        else:
            ip_version[ip] = HttpVersion.H2 if rng.random() < 0.75 else HttpVersion.H1
    resources = []
    for j in range(n_res):
        mime = MimeCategory.DOCUMENT if j == 0 else MimeCategory(
            int(rng.choice(8, p=_MIME_WEIGHTS)))
        ip = ips[0] if j == 0 else ips[int(rng.choice(n_ips, p=weights))]
        uri = "/" if j == 0 else _random_uri(rng, *cfg.uri_len, mime)
        size = int(max(64, round(rng.lognormal(cfg.response_size_log_mean,
                                               cfg.response_size_log_sd))))
        version = ip_version[ip]
        alt_svc = version is HttpVersion.H3 or bool(rng.random() < 0.1)
        resources.append(SiteResource(uri, size, int(rng.integers(120, 700)), version,
                                      alt_svc, mime, ip))
    return SiteSpec(f"site-{site_idx:05d}", tuple(resources), seed)


def gen_sites(cfg: GenConfig) -> list[SiteSpec]:
    """Deterministic list of ``cfg.n_sites`` sites under ``cfg.rng_seed``."""
    seeds = np.random.SeedSequence(cfg.rng_seed).generate_state(max(cfg.n_sites, 1), np.uint64)
    return [gen_site(cfg, i, int(seeds[i])) for i in range(cfg.n_sites)]


def simulate_visit(site: SiteSpec, cfg: GenConfig, visit_seed: int,
                   label: Optional[int] = None) -> PairedSample:
    """One page load of ``site``; the logic side is the crawl-ordered resource list."""
    rng = np.random.default_rng(visit_seed)
    noise = cfg.noise
    order = np.arange(len(site.resources))
    if noise.shuffle_visit_order:
        order = rng.permutation(order)
    packets = []
    t = 0.0
    for j in order:
        r = site.resources[j]
        transport = Transport.UDP if r.http_version is HttpVersion.H3 else Transport.TCP
        tcp = transport is Transport.TCP
        jitter = int(rng.integers(-noise.request_len_jitter_bytes,
                                  noise.request_len_jitter_bytes + 1))
        req_len = max(1, huffman_encoded_len(r.uri) + cfg.header_overhead + jitter)
        t += float(rng.exponential(0.004))
        packets.append(PacketRecord(t, Direction.C2S, req_len, transport, r.server_ip,
                                    HTTPS_PORT, TLS_APPDATA if tcp else None))
        overhead = noise.response_overhead_frac * float(rng.random())
        total = int(math.ceil(r.response_size * (1.0 + overhead)))
        first = True
        while total > 0:
            chunk = min(total, noise.packet_mtu)
            total -= chunk
            t += float(rng.exponential(0.001))
            if not tcp:
                b0 = None
            elif r.http_version is HttpVersion.H2 or first:
                b0 = TLS_APPDATA
            else:
                # continuation segments of one large HTTP/1.1 record start mid-ciphertext
                b0 = int(rng.integers(0, 256))
                if b0 == TLS_APPDATA:
                    b0 = 0x42
            packets.append(PacketRecord(t, Direction.S2C, chunk, transport, r.server_ip,
                                        HTTPS_PORT, b0))
            first = False
    traffic = TrafficTrace(tuple(packets), site.site_id, label)
    return PairedSample(site.logic_profile(), traffic, site.site_id)


def gen_corpus(cfg: GenConfig, sites: Optional[list[SiteSpec]] = None,
               visits_per_site: Optional[int] = None, seed_offset: int = 0,
               label_offset: int = 0) -> list[PairedSample]:
    """All visits of all sites, site-major order; labels are site positions."""
    sites = gen_sites(cfg) if sites is None else sites
    visits = cfg.visits_per_site if visits_per_site is None else visits_per_site
    ss = np.random.SeedSequence([cfg.rng_seed, 7919, seed_offset])
    seeds = ss.generate_state(max(1, len(sites) * visits), np.uint64)
    out = []
    for i, site in enumerate(sites):
        for v in range(visits):
            out.append(simulate_visit(site, cfg, int(seeds[i * visits + v]),
                                      label=label_offset + i))
    return out
