"""Shared independent oracles for the test suite.

These are written from scratch against the operation definitions (triple
loops, scalar bit fiddling) so they share no code path with the library
implementations they check.
"""

import numpy as np


def matmul_triple_loop(a, b):
    """Naive exact integer matmul."""
    a = np.asarray(a, dtype=object)
    b = np.asarray(b, dtype=object)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=object)
    for i in range(m):
        for j in range(n):
            s = 0
            for t in range(k):
                s += int(a[i, t]) * int(b[t, j])
            out[i, j] = s
    return out.astype(np.int64)


def nibble_transpose_direct(rows):
    """Scalar transpose of an 8x8 nibble matrix given as 8 words (LSB-first).

    rows[r] holds nibbles of row r; output word c holds column c with
    nibble position s taken from row s.
    """
    out = []
    for c in range(8):
        word = 0
        for s in range(8):
            nib = (int(rows[s]) >> (4 * c)) & 0xF
            word |= nib << (4 * s)
        out.append(word)
    return out


def byte_transpose_direct(words):
    """Scalar 4x4 byte transpose oracle."""
    out = []
    for j in range(4):
        word = 0
        for i in range(4):
            byte = (int(words[i]) >> (8 * j)) & 0xFF
            word |= byte << (8 * i)
        out.append(word)
    return out


def recombine_chunks(chunks, width):
    return sum(int(c) << (width * i) for i, c in enumerate(chunks))
