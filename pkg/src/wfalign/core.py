"""Domain types shared by every stage of the pipeline.

All records are frozen dataclasses; matrices are plain numpy arrays wrapped
together with the count of non-padding rows.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ValidationError


class Direction(str, enum.Enum):
    C2S = "c2s"
    S2C = "s2c"


class Transport(str, enum.Enum):
    TCP = "tcp"
    UDP = "udp"


class HttpVersion(enum.IntEnum):
    H1 = 1
    H2 = 2
    H3 = 3

    @property
    def tag(self) -> str:
        return f"h{int(self)}"

    @classmethod
    def from_tag(cls, tag: str) -> "HttpVersion":
        try:
            return cls(int(tag.lower().lstrip("h")))
        except (ValueError, AttributeError):
            raise ValidationError(f"unknown http_version {tag!r}") from None


class MimeCategory(enum.IntEnum):
    DOCUMENT = 0
    SCRIPT = 1
    STYLESHEET = 2
    IMAGE = 3
    FONT = 4
    MEDIA = 5
    XHR = 6
    OTHER = 7


class ScaleKind(enum.Enum):
    SIGNED_LOG = "signed_log"
    LOG = "log"
    IDENTITY = "identity"


def normalize_scalar(x: float, kind: ScaleKind) -> float:
    """Map a raw feature value onto the scale used inside the matrices.

    ``SIGNED_LOG`` is sign(x)*ln(1+|x|), ``LOG`` is ln(1+x) and is only
    defined for x >= 0.
    """
    if kind is ScaleKind.SIGNED_LOG:
        return math.copysign(math.log1p(abs(x)), x) if x != 0 else 0.0
    if kind is ScaleKind.LOG:
        if x < 0:
            raise DomainError(f"log scaling needs x >= 0, got {x}")
        return math.log1p(x)
    if kind is ScaleKind.IDENTITY:
        return float(x)
    raise DomainError(f"unknown scale kind {kind!r}")


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp: float
    direction: Direction
    payload_len: int
    transport: Transport
    server_ip: str
    server_port: int
    first_payload_byte: Optional[int] = None

    def __post_init__(self):
        if self.payload_len < 0:
            raise ValidationError(f"negative payload_len {self.payload_len}")
        if self.first_payload_byte is not None:
            if self.payload_len == 0:
                raise ValidationError("first_payload_byte set on an empty payload")
            if not 0 <= self.first_payload_byte <= 255:
                raise ValidationError(f"first_payload_byte out of range: {self.first_payload_byte}")

    @property
    def flow_key(self) -> "FlowKey":
        return FlowKey(self.server_ip, self.server_port, self.transport)


@dataclass(frozen=True, slots=True)
class FlowKey:
    """Server-side identity of a connection; client ports are not tracked."""

    server_ip: str
    server_port: int
    transport: Transport


@dataclass(frozen=True)
class TrafficTrace:
    packets: tuple[PacketRecord, ...]
    site_id: str = ""
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(self.packets))
        prev = -math.inf
        for p in self.packets:
            if p.timestamp < prev:
                raise ValidationError("packet timestamps must be non-decreasing")
            prev = p.timestamp

    def __len__(self):
        return len(self.packets)

    @property
    def server_ips(self) -> set[str]:
        return {p.server_ip for p in self.packets}


@dataclass(frozen=True, slots=True)
class ResourceRecord:
    uri: str
    uri_raw_len: int
    uri_huffman_len: int
    response_size: int
    header_len: int
    http_version: HttpVersion
    alt_svc_h3: bool
    mime_category: MimeCategory
    server_ip: str

    def __post_init__(self):
        if self.response_size < 0 or self.header_len < 0:
            raise ValidationError("response_size and header_len must be non-negative")
        if self.uri_raw_len < 0 or self.uri_huffman_len < 0:
            raise ValidationError("uri lengths must be non-negative")

    @classmethod
    def from_uri(cls, uri: str, response_size: int, header_len: int,
                 http_version: HttpVersion, alt_svc_h3: bool,
                 mime_category: MimeCategory, server_ip: str) -> "ResourceRecord":
        """Build a record, deriving both URI length columns from ``uri``."""
        from .hpack_huffman import huffman_encoded_len

        raw = uri.encode("utf-8")
        return cls(uri, len(raw), huffman_encoded_len(raw), int(response_size),
                   int(header_len), HttpVersion(http_version), bool(alt_svc_h3),
                   MimeCategory(mime_category), server_ip)


@dataclass(frozen=True)
class LogicProfile:
    resources: tuple[ResourceRecord, ...]
    site_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "resources", tuple(self.resources))

    def __len__(self):
        return len(self.resources)

    @property
    def server_ips(self) -> set[str]:
        return {r.server_ip for r in self.resources}


@dataclass(frozen=True)
class PairedSample:
    logic: LogicProfile
    traffic: TrafficTrace
    site_id: str = ""

    def __post_init__(self):
        site = self.site_id or self.logic.site_id or self.traffic.site_id
        object.__setattr__(self, "site_id", site)
        if self.logic.site_id != site or self.traffic.site_id != site:
            raise ValidationError(
                f"site mismatch: logic={self.logic.site_id!r} traffic={self.traffic.site_id!r}")

    @property
    def label(self) -> Optional[int]:
        return self.traffic.label


@dataclass(frozen=True)
class EncodingParams:
    """Fixed matrix lengths; the defaults are full scale."""

    traffic_len: int = 5000
    logic_len: int = 80

    def __post_init__(self):
        if self.traffic_len < 1 or self.logic_len < 1:
            raise ValidationError("matrix lengths must be >= 1")


TRAFFIC_COLUMNS = ("directional_len_scaled", "http_version", "flow_index")
LOGIC_COLUMNS = ("huffman_len_scaled", "raw_len_scaled", "response_size_scaled",
                 "header_len_scaled", "http_version_idx", "alt_svc_flag", "mime_idx",
                 "ip_index")


@dataclass(frozen=True, eq=False)
class TrafficMatrix:
    rows: np.ndarray = field(repr=False)
    valid_len: int

    @property
    def shape(self):
        return self.rows.shape


@dataclass(frozen=True, eq=False)
class LogicMatrix:
    rows: np.ndarray = field(repr=False)
    valid_len: int

    @property
    def shape(self):
        return self.rows.shape


def stack_matrices(mats: Sequence[TrafficMatrix | LogicMatrix]) -> tuple[np.ndarray, np.ndarray]:
    """Stack same-shaped matrices into a (B, L, C) batch plus a (B,) length vector."""
    rows = np.stack([m.rows for m in mats])
    lengths = np.array([m.valid_len for m in mats], dtype=np.int64)
    return rows, lengths
