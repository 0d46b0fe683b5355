"""Fixed-length matrix encodings of traffic traces and logic profiles."""
from __future__ import annotations

import numpy as np

from .core import (Direction, EncodingParams, LogicMatrix, LogicProfile, TrafficMatrix,
                   TrafficTrace)
from .errors import EmptyInput
from .ingest import assign_flow_indices, infer_http_versions

DEFAULT_PARAMS = EncodingParams()


def encode_traffic(trace: TrafficTrace, params: EncodingParams = DEFAULT_PARAMS) -> TrafficMatrix:
    """Encode a trace as an (L_T, 3) matrix.

    Columns: signed log packet length (client-to-server positive), inferred
    HTTP version, flow index. Versions and flow indices are computed on the
    whole trace before truncation.
    """
    if not trace.packets:
        raise EmptyInput("cannot encode an empty trace")
    versions = infer_http_versions(trace)
    flows = assign_flow_indices(trace)
    n = min(len(trace.packets), params.traffic_len)
    lengths = np.array([p.payload_len for p in trace.packets[:n]], dtype=np.float64)
    sign = np.array([1.0 if p.direction is Direction.C2S else -1.0 for p in trace.packets[:n]])
    rows = np.zeros((params.traffic_len, 3), dtype=np.float64)
    rows[:n, 0] = sign * np.log1p(lengths)
    rows[:n, 1] = versions[:n]
    rows[:n, 2] = flows[:n]
    return TrafficMatrix(rows, n)


def ip_indices(profile: LogicProfile) -> list[int]:
    """Index server IPs 1, 2, ... in first-seen order."""
    seen: dict[str, int] = {}
    return [seen.setdefault(r.server_ip, len(seen) + 1) for r in profile.resources]


def encode_logic(profile: LogicProfile, params: EncodingParams = DEFAULT_PARAMS) -> LogicMatrix:
    if not profile.resources:
        raise EmptyInput("cannot encode an empty logic profile")
    res = profile.resources[:params.logic_len]
    n = len(res)
    rows = np.zeros((params.logic_len, 8), dtype=np.float64)
    raw = np.array([[r.uri_huffman_len, r.uri_raw_len, r.response_size, r.header_len]
                    for r in res], dtype=np.float64)
    rows[:n, :4] = np.log1p(raw)
    rows[:n, 4] = [int(r.http_version) for r in res]
    rows[:n, 5] = [1.0 if r.alt_svc_h3 else 0.0 for r in res]
    rows[:n, 6] = [int(r.mime_category) for r in res]
    rows[:n, 7] = ip_indices(profile)[:n]
    return LogicMatrix(rows, n)


def pad_matrix(m: TrafficMatrix | LogicMatrix, length: int) -> TrafficMatrix | LogicMatrix:
    """Return ``m`` zero-padded (or cut) to ``length`` rows; ``length`` >= valid_len."""
    if length < m.valid_len:
        raise ValueError("padding length shorter than the valid rows")
    rows = np.zeros((length, m.rows.shape[1]), dtype=m.rows.dtype)
    k = min(length, m.rows.shape[0])
    rows[:k] = m.rows[:k]
    return type(m)(rows, m.valid_len)
