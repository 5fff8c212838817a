"""Minimal binary PGM (P5) encoding for depth, id, and label images.

8-bit images carry binary label channels (0/255); 16-bit images carry
millimeter depth and shifted object ids.  16-bit payloads are big-endian as
the format requires.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray


def encode_pgm(img: NDArray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if img.dtype == np.uint8:
        maxval, payload = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, payload = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported dtype {img.dtype}; use uint8 or uint16")
    h, w = img.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + payload


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-separated tokens, skipping '#' comments."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ValueError("truncated PGM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i


def decode_pgm(data: bytes) -> NDArray:
    tokens, end = _header_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if w < 1 or h < 1:
        raise ValueError("PGM dimensions must be positive")
    # Exactly one whitespace byte separates the header from the payload.
    payload = data[end + 1 :]
    if maxval == 255:
        img = np.frombuffer(payload, dtype=np.uint8, count=w * h)
    elif maxval == 65535:
        img = np.frombuffer(payload, dtype=">u2", count=w * h).astype(np.uint16)
    else:
        raise ValueError(f"unsupported maxval {maxval}")
    return img.reshape(h, w).copy()
