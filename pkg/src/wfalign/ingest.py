"""Turning captures and resource logs into traces and logic profiles.

Three input formats are understood:

* classic libpcap files (either byte order, micro- or nanosecond stamps),
  Ethernet framing, IPv4/IPv6, TCP/UDP;
* packet JSONL, one object per packet::

      {"ts": 0.013, "dir": "c2s", "len": 517, "transport": "tcp",
       "server_ip": "93.184.216.34", "server_port": 443, "b0": 23}

* resource JSONL, one object per resource::

      {"uri": "/static/app.js", "response_size": 48213, "header_len": 312,
       "http_version": "h2", "alt_svc_h3": true,
       "mime_type": "application/javascript", "server_ip": "93.184.216.34"}
"""
from __future__ import annotations

import ipaddress
import json
import logging
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import (Direction, FlowKey, HttpVersion, LogicProfile, MimeCategory,
                   PacketRecord, ResourceRecord, TrafficTrace, Transport)
from .errors import EmptyInput, FormatError, ParseError, Unsupported, ValidationError

log = logging.getLogger(__name__)

TLS_APPDATA = 0x17

PCAP_MAGIC_USEC = 0xA1B2C3D4
PCAP_MAGIC_NSEC = 0xA1B23C4D
PCAPNG_MAGIC = 0x0A0D0D0A
LINKTYPE_ETHERNET = 1

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
IPPROTO_TCP = 6
IPPROTO_UDP = 17
_IPV6_EXT_HEADERS = {0, 43, 60}


@dataclass(frozen=True)
class CaptureConfig:
    client_hint: Optional[str] = None
    link_type: str = "ethernet"
    tls_appdata_byte: int = TLS_APPDATA

    def __post_init__(self):
        if self.tls_appdata_byte != TLS_APPDATA:
            raise ValidationError("tls_appdata_byte is fixed at 0x17")
        if self.link_type != "ethernet":
            raise Unsupported(f"link type {self.link_type!r}")


@dataclass
class PcapStats:
    packets: int = 0
    kept: int = 0
    truncated: int = 0
    non_ip: int = 0
    other_transport: int = 0
    empty_payload: int = 0
    foreign: int = 0


# --- per-packet heuristics --------------------------------------------------

def assign_flow_indices(trace: TrafficTrace) -> list[int]:
    """Number flows 1, 2, ... in order of first appearance of their FlowKey."""
    seen: dict[FlowKey, int] = {}
    out = []
    for p in trace.packets:
        key = p.flow_key
        if key not in seen:
            seen[key] = len(seen) + 1
        out.append(seen[key])
    return out


def infer_http_versions(trace: TrafficTrace) -> list[int]:
    """Per-packet HTTP version guess from transport behaviour.

    UDP is HTTP/3. Within each TCP flow, two consecutive packets whose
    payload starts with the TLS application-data byte mark both packets as
    HTTP/2; every other TCP packet is HTTP/1.1. Empty packets are skipped
    when looking for pairs and a missing first byte counts as non-0x17.
    """
    versions = [0] * len(trace.packets)
    by_flow: dict[FlowKey, list[int]] = {}
    for i, p in enumerate(trace.packets):
        if p.transport is Transport.UDP:
            versions[i] = 3
        else:
            versions[i] = 1
            if p.payload_len > 0:
                by_flow.setdefault(p.flow_key, []).append(i)
    for members in by_flow.values():
        appdata = [trace.packets[i].first_payload_byte == TLS_APPDATA for i in members]
        for a, b, hit_a, hit_b in zip(members, members[1:], appdata, appdata[1:]):
            if hit_a and hit_b:
                versions[a] = versions[b] = 2
    return versions


# --- MIME mapping -----------------------------------------------------------

def mime_category(mime_type: str) -> MimeCategory:
    """Bucket a MIME type the way browser devtools group requests."""
    m = (mime_type or "").split(";", 1)[0].strip().lower()
    if m == "text/html":
        return MimeCategory.DOCUMENT
    if "javascript" in m:
        return MimeCategory.SCRIPT
    if m == "text/css":
        return MimeCategory.STYLESHEET
    if m.startswith("image/"):
        return MimeCategory.IMAGE
    if m.startswith("font/"):
        return MimeCategory.FONT
    if m.startswith(("audio/", "video/")):
        return MimeCategory.MEDIA
    if m in ("application/json", "application/xml"):
        return MimeCategory.XHR
    return MimeCategory.OTHER


# Representative MIME string per category, used when re-emitting resources.
CATEGORY_MIME = {
    MimeCategory.DOCUMENT: "text/html",
    MimeCategory.SCRIPT: "application/javascript",
    MimeCategory.STYLESHEET: "text/css",
    MimeCategory.IMAGE: "image/png",
    MimeCategory.FONT: "font/woff2",
    MimeCategory.MEDIA: "video/mp4",
    MimeCategory.XHR: "application/json",
    MimeCategory.OTHER: "application/octet-stream",
}


# --- JSONL ------------------------------------------------------------------

def _lines(text: str | Iterable[str]) -> Iterable[tuple[int, str]]:
    if isinstance(text, str):
        text = text.splitlines()
    for n, line in enumerate(text, start=1):
        if line.strip():
            yield n, line


def _require(obj: dict, key: str, types, lineno: int):
    if key not in obj:
        raise ParseError(f"missing field {key!r}", lineno)
    val = obj[key]
    # bool is an int subclass; never accept it where a number is meant
    if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ParseError(f"field {key!r} has wrong type", lineno)
    if not isinstance(val, types):
        raise ParseError(f"field {key!r} has wrong type", lineno)
    return val


def packet_from_json(obj: dict, lineno: Optional[int] = None) -> PacketRecord:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno)
    ts = _require(obj, "ts", (int, float), lineno)
    direction = _require(obj, "dir", str, lineno)
    length = _require(obj, "len", int, lineno)
    transport = _require(obj, "transport", str, lineno)
    ip = _require(obj, "server_ip", str, lineno)
    port = _require(obj, "server_port", int, lineno)
    b0 = obj.get("b0")
    if b0 is not None and (isinstance(b0, bool) or not isinstance(b0, int)):
        raise ParseError("field 'b0' must be an integer or null", lineno)
    try:
        return PacketRecord(float(ts), Direction(direction), length,
                            Transport(transport), ip, port, b0)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def packet_to_json(p: PacketRecord) -> dict:
    return {"b0": p.first_payload_byte, "dir": p.direction.value, "len": p.payload_len,
            "server_ip": p.server_ip, "server_port": p.server_port,
            "transport": p.transport.value, "ts": p.timestamp}


def packets_to_trace(packets: list[PacketRecord], site_id: str = "",
                     label: Optional[int] = None) -> TrafficTrace:
    # sorted() is stable, so equal timestamps keep their file order
    if any(b.timestamp < a.timestamp for a, b in zip(packets, packets[1:])):
        packets = sorted(packets, key=lambda p: p.timestamp)
    return TrafficTrace(tuple(packets), site_id, label)


def parse_packet_jsonl(lines: str | Iterable[str], site_id: str = "",
                       label: Optional[int] = None) -> TrafficTrace:
    """Parse packet JSONL. Zero lines yield an empty trace."""
    packets = []
    for n, line in _lines(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", n) from None
        packets.append(packet_from_json(obj, n))
    return packets_to_trace(packets, site_id, label)


def resource_from_json(obj: dict, lineno: Optional[int] = None) -> ResourceRecord:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno)
    uri = _require(obj, "uri", str, lineno)
    size = _require(obj, "response_size", int, lineno)
    header_len = _require(obj, "header_len", int, lineno)
    version = _require(obj, "http_version", str, lineno)
    alt_svc = _require(obj, "alt_svc_h3", bool, lineno)
    mime = _require(obj, "mime_type", str, lineno)
    ip = _require(obj, "server_ip", str, lineno)
    if size < 0 or header_len < 0:
        raise ValidationError(f"line {lineno}: negative size field")
    try:
        hv = HttpVersion.from_tag(version)
    except ValidationError:
        raise ParseError(f"unknown http_version {version!r}", lineno) from None
    return ResourceRecord.from_uri(uri, size, header_len, hv, alt_svc,
                                   mime_category(mime), ip)


def resource_to_json(r: ResourceRecord) -> dict:
    return {"alt_svc_h3": r.alt_svc_h3, "header_len": r.header_len,
            "http_version": r.http_version.tag, "mime_type": CATEGORY_MIME[r.mime_category],
            "response_size": r.response_size, "server_ip": r.server_ip, "uri": r.uri}


def parse_resource_jsonl(lines: str | Iterable[str], site_id: str = "") -> LogicProfile:
    resources = []
    for n, line in _lines(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", n) from None
        resources.append(resource_from_json(obj, n))
    if not resources:
        raise EmptyInput("resource log has no entries")
    return LogicProfile(tuple(resources), site_id)


# --- pcap -------------------------------------------------------------------

def _decode_ip(data: bytes, off: int, stats: PcapStats):
    """Return (src, dst, proto, l4_offset, l4_end) or None."""
    ethertype = struct.unpack_from("!H", data, off - 2)[0]
    if ethertype == ETH_IPV4:
        if len(data) < off + 20:
            stats.truncated += 1
            return None
        ver_ihl, total_len = data[off], struct.unpack_from("!H", data, off + 2)[0]
        ihl = (ver_ihl & 0x0F) * 4
        frag = struct.unpack_from("!H", data, off + 6)[0]
        if frag & 0x1FFF:
            # non-first fragment: no transport header to read
            stats.other_transport += 1
            return None
        proto = data[off + 9]
        src = str(ipaddress.IPv4Address(data[off + 12:off + 16]))
        dst = str(ipaddress.IPv4Address(data[off + 16:off + 20]))
        return src, dst, proto, off + ihl, off + total_len
    if ethertype == ETH_IPV6:
        if len(data) < off + 40:
            stats.truncated += 1
            return None
        payload_len = struct.unpack_from("!H", data, off + 4)[0]
        proto = data[off + 6]
        src = str(ipaddress.IPv6Address(data[off + 8:off + 24]))
        dst = str(ipaddress.IPv6Address(data[off + 24:off + 40]))
        end = off + 40 + payload_len
        l4 = off + 40
        while proto in _IPV6_EXT_HEADERS:
            if len(data) < l4 + 2:
                stats.truncated += 1
                return None
            proto, ext_len = data[l4], (data[l4 + 1] + 1) * 8
            l4 += ext_len
        return src, dst, proto, l4, end
    stats.non_ip += 1
    return None


def parse_pcap(data: bytes, cfg: Optional[CaptureConfig] = None, site_id: str = "",
               label: Optional[int] = None, stats: Optional[PcapStats] = None) -> TrafficTrace:
    """Read a classic pcap into a trace of payload-bearing TCP/UDP packets.

    The client is ``cfg.client_hint`` if set, otherwise the source of the
    first IP packet. Packets truncated before the end of their transport
    header are counted in ``stats.truncated`` and skipped.
    """
    cfg = cfg or CaptureConfig()
    stats = stats if stats is not None else PcapStats()
    if len(data) < 24:
        raise FormatError("file too short for a pcap header")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le == PCAPNG_MAGIC:
        raise Unsupported("pcapng captures are not supported")
    for endian in "<>":
        magic = struct.unpack_from(endian + "I", data, 0)[0]
        if magic in (PCAP_MAGIC_USEC, PCAP_MAGIC_NSEC):
            break
    else:
        raise FormatError(f"bad pcap magic 0x{magic_le:08x}")
    ts_div = 1e9 if magic == PCAP_MAGIC_NSEC else 1e6
    linktype = struct.unpack_from(endian + "I", data, 20)[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise Unsupported(f"link type {linktype} (only Ethernet is supported)")

    client = cfg.client_hint
    records = []
    pos = 24
    rec_hdr = struct.Struct(endian + "IIII")
    while pos + 16 <= len(data):
        ts_sec, ts_frac, incl_len, _orig = rec_hdr.unpack_from(data, pos)
        pos += 16
        frame = data[pos:pos + incl_len]
        pos += incl_len
        stats.packets += 1
        if len(frame) < incl_len or len(frame) < 14:
            stats.truncated += 1
            continue
        ip = _decode_ip(frame, 14, stats)
        if ip is None:
            continue
        src, dst, proto, l4, end = ip
        if client is None:
            client = src
        if end <= l4:
            end = len(frame)
        if proto == IPPROTO_TCP:
            if len(frame) < l4 + 20:
                stats.truncated += 1
                continue
            sport, dport = struct.unpack_from("!HH", frame, l4)
            doff = (frame[l4 + 12] >> 4) * 4
            payload_start = l4 + doff
            transport = Transport.TCP
        elif proto == IPPROTO_UDP:
            if len(frame) < l4 + 8:
                stats.truncated += 1
                continue
            sport, dport, udp_len = struct.unpack_from("!HHH", frame, l4)
            payload_start = l4 + 8
            end = min(end, l4 + udp_len) if udp_len >= 8 else end
            transport = Transport.UDP
        else:
            stats.other_transport += 1
            continue
        # lengths come from the headers, so snaplen-truncated payloads keep their size
        payload_len = max(0, end - payload_start)
        if payload_len == 0:
            stats.empty_payload += 1
            continue
        if src == client:
            direction, server_ip, server_port = Direction.C2S, dst, dport
        elif dst == client:
            direction, server_ip, server_port = Direction.S2C, src, sport
        else:
            stats.foreign += 1
            continue
        b0 = None
        if transport is Transport.TCP and payload_start < len(frame):
            b0 = frame[payload_start]
        records.append(PacketRecord(ts_sec + ts_frac / ts_div, direction, payload_len,
                                    transport, server_ip, server_port, b0))
        stats.kept += 1
    if pos < len(data):
        stats.truncated += 1
    if stats.truncated:
        log.warning("skipped %d truncated packet(s)", stats.truncated)
    return packets_to_trace(records, site_id, label)
