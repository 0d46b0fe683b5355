import time

import numpy as np
from hpack.huffman import HuffmanEncoder
from hpack.huffman_constants import REQUEST_CODES, REQUEST_CODES_LENGTH
from hypothesis import given, strategies as st

from wfalign.hpack_huffman import CODE_BIT_LENGTHS, huffman_encoded_bits, huffman_encoded_len

ORACLE = HuffmanEncoder(REQUEST_CODES, REQUEST_CODES_LENGTH)


def test_table_shape():
    assert len(CODE_BIT_LENGTHS) == 257
    assert all(5 <= b <= 30 for b in CODE_BIT_LENGTHS)
    assert CODE_BIT_LENGTHS[256] == 30
    assert tuple(CODE_BIT_LENGTHS) == tuple(REQUEST_CODES_LENGTH)


def test_examples():
    assert huffman_encoded_len(b"") == 0
    assert huffman_encoded_bits(b"") == 0
    assert CODE_BIT_LENGTHS[ord("/")] == 6
    assert huffman_encoded_len(b"/") == 1
    assert huffman_encoded_len(b"www.example.com") == len(ORACLE.encode(b"www.example.com"))
    assert huffman_encoded_bits(b"aa") == 2 * CODE_BIT_LENGTHS[ord("a")]


def test_str_is_utf8():
    assert huffman_encoded_len("/café") == huffman_encoded_len("/café".encode())


@given(st.binary(max_size=64), st.binary(max_size=64))
def test_additive_and_monotone(a, b):
    assert huffman_encoded_bits(a + b) == huffman_encoded_bits(a) + huffman_encoded_bits(b)
    assert huffman_encoded_len(a + b) >= huffman_encoded_len(a)
    assert huffman_encoded_len(a) == -(-huffman_encoded_bits(a) // 8)


@given(st.integers(0, 255))
def test_single_byte(b):
    assert huffman_encoded_bits(bytes([b])) == CODE_BIT_LENGTHS[b]


def test_oracle_random_ascii():
    rng = np.random.default_rng(0)
    strings = [bytes(rng.integers(0, 128, size=int(rng.integers(0, 65))).tolist())
               for _ in range(1000)]
    t0 = time.perf_counter()
    ours = [huffman_encoded_len(s) for s in strings]
    assert time.perf_counter() - t0 < 1.0
    assert ours == [len(ORACLE.encode(s)) for s in strings]
