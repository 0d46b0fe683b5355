"""Encoded length of strings under the HPACK static Huffman code (RFC 7541, Appendix B).

Only code *lengths* are needed: the encoded size of a header string is the
sum of its per-byte code lengths, padded up to a whole octet with EOS bits.
"""
from __future__ import annotations

import numpy as np

# Code length in bits for symbols 0..255 followed by EOS (256), RFC 7541 Appendix B.
CODE_BIT_LENGTHS = (
    13, 23, 28, 28, 28, 28, 28, 28, 28, 24, 30, 28, 28, 30, 28, 28,
    28, 28, 28, 28, 28, 28, 30, 28, 28, 28, 28, 28, 28, 28, 28, 28,
    6, 10, 10, 12, 13, 6, 8, 11, 10, 10, 8, 11, 8, 6, 6, 6,
    5, 5, 5, 6, 6, 6, 6, 6, 6, 6, 7, 8, 15, 6, 12, 10,
    13, 6, 7, 7, 7, 7, 7, 7, 7, 7, 7, 7, 7, 7, 7, 7,
    7, 7, 7, 7, 7, 7, 7, 7, 8, 7, 8, 13, 19, 13, 14, 6,
    15, 5, 6, 5, 6, 5, 6, 6, 6, 5, 7, 7, 6, 6, 6, 5,
    6, 7, 6, 5, 5, 6, 7, 7, 7, 7, 7, 15, 11, 14, 13, 28,
    20, 22, 20, 20, 22, 22, 22, 23, 22, 23, 23, 23, 23, 23, 24, 23,
    24, 24, 22, 23, 24, 23, 23, 23, 23, 21, 22, 23, 22, 23, 23, 24,
    22, 21, 20, 22, 22, 23, 23, 21, 23, 22, 22, 24, 21, 22, 23, 23,
    21, 21, 22, 21, 23, 22, 23, 23, 20, 22, 22, 22, 23, 22, 22, 23,
    26, 26, 20, 19, 22, 23, 22, 25, 26, 26, 26, 27, 27, 26, 24, 25,
    19, 21, 26, 27, 27, 26, 27, 24, 21, 21, 26, 26, 28, 27, 27, 27,
    20, 24, 20, 21, 22, 21, 21, 23, 22, 22, 25, 25, 24, 24, 26, 23,
    26, 27, 26, 26, 27, 27, 27, 27, 27, 28, 27, 27, 27, 27, 27, 26,
    30,
)
EOS = 256

_LENGTHS = np.array(CODE_BIT_LENGTHS[:256], dtype=np.int64)


def _as_bytes(s: bytes | bytearray | str) -> bytes:
    if isinstance(s, str):
        return s.encode("utf-8")
    return bytes(s)


def huffman_encoded_bits(s: bytes | bytearray | str) -> int:
    """Total code bits for ``s`` (str input is UTF-8 encoded), EOS excluded."""
    data = _as_bytes(s)
    if not data:
        return 0
    return int(_LENGTHS[np.frombuffer(data, dtype=np.uint8)].sum())


def huffman_encoded_len(s: bytes | bytearray | str) -> int:
    """Octets occupied by the Huffman-coded form of ``s``."""
    return (huffman_encoded_bits(s) + 7) // 8
