# SPDX-License-Identifier: Apache-2.0
"""Independent Python re-implementations used to freeze golden values.

Nothing here imports or calls the Rust code.
"""

import math
import re

MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def hashed_vector(key: bytes, dim: int) -> list:
    rng = SplitMix64(fnv1a64(key))
    raw = []
    for _ in range(dim):
        s = rng.uniform() + rng.uniform() + rng.uniform() + rng.uniform()
        raw.append((s - 2.0) * math.sqrt(3.0))
    sq = 0.0
    for v in raw:
        sq += v * v
    n = math.sqrt(sq)
    return [v / n for v in raw]


def tokenize(text: str) -> list:
    out = []
    for t in re.split(r"[^0-9A-Za-z']+", text.lower()):
        t = t.strip("'")
        if t:
            out.append(t)
    return out


def mean_rows(rows):
    n = len(rows)
    c = len(rows[0])
    acc = [0.0] * c
    for r in rows:
        for i in range(c):
            acc[i] += r[i]
    return [a / n for a in acc]


def normalize(v):
    n = math.sqrt(sum(x * x for x in v))
    if n == 0.0:
        out = [0.0] * len(v)
        out[0] = 1.0
        return out
    return [x / n for x in v]


def dot(a, b):
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s


def bits(x: float) -> str:
    import struct

    return struct.pack(">d", x).hex()
