"""JSONL dataset files: one paired sample per line.

Each line is ``{"label", "logic", "packets", "site_id"}`` with the resource
and packet objects of the ingest schemas. Keys are written in alphabetical
order with compact separators, so parse then re-emit reproduces the bytes.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

from .core import LogicProfile, PairedSample, TrafficTrace
from .errors import EmptyInput, ParseError
from .ingest import packet_from_json, packet_to_json, packets_to_trace, resource_from_json, \
    resource_to_json


def sample_to_json(s: PairedSample) -> dict:
    return {"label": s.label, "logic": [resource_to_json(r) for r in s.logic.resources],
            "packets": [packet_to_json(p) for p in s.traffic.packets], "site_id": s.site_id}


def sample_from_json(obj: dict, lineno: int | None = None) -> PairedSample:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno)
    for key in ("site_id", "logic", "packets"):
        if key not in obj:
            raise ParseError(f"missing field {key!r}", lineno)
    site, label = obj["site_id"], obj.get("label")
    if not isinstance(site, str):
        raise ParseError("site_id must be a string", lineno)
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise ParseError("label must be an integer or null", lineno)
    if not isinstance(obj["logic"], list) or not isinstance(obj["packets"], list):
        raise ParseError("logic and packets must be lists", lineno)
    if not obj["logic"]:
        raise ParseError("a sample needs at least one resource", lineno)
    logic = LogicProfile(tuple(resource_from_json(r, lineno) for r in obj["logic"]), site)
    trace = packets_to_trace([packet_from_json(p, lineno) for p in obj["packets"]], site, label)
    return PairedSample(logic, trace, site)


def dumps_sample(s: PairedSample) -> str:
    return json.dumps(sample_to_json(s), sort_keys=True, separators=(",", ":"))


def parse_dataset(lines: str | Iterable[str]) -> list[PairedSample]:
    if isinstance(lines, str):
        lines = lines.splitlines()
    out = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", n) from None
        out.append(sample_from_json(obj, n))
    return out


def read_dataset(path, allow_empty: bool = False) -> list[PairedSample]:
    with open(path, encoding="utf-8") as fh:
        samples = parse_dataset(fh)
    if not samples and not allow_empty:
        raise EmptyInput(f"dataset {path} has no samples")
    return samples


def write_dataset(samples: Sequence[PairedSample], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(dumps_sample(s) + "\n")
    return path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def traces_of(samples: Sequence[PairedSample]) -> list[TrafficTrace]:
    return [s.traffic for s in samples]
