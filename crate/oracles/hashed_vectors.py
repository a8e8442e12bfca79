# SPDX-License-Identifier: Apache-2.0
"""Freezes hashed_vector outputs, including the all-black reference frame."""

import json
import sys

from common import bits, hashed_vector

KEYS = [b"", b"a", b"b", b"umbrella", b"weather", b"What is this", bytes([0, 0, 0]), bytes([255, 255, 255])]
DIMS = [2, 8, 64]

out = {"vectors": [], "black_frame": None}
for k in KEYS:
    for d in DIMS:
        out["vectors"].append({"key_hex": k.hex(), "dim": d, "bits": [bits(x) for x in hashed_vector(k, d)]})

# Reference frame encoder on an all-black image: every cell's rounded mean
# colour is (0, 0, 0), so each of the N rows is hashed_vector(b"\0\0\0", C).
N, C = 16, 64
row = [bits(x) for x in hashed_vector(bytes([0, 0, 0]), C)]
out["black_frame"] = {"tokens_per_frame": N, "channels": C, "rows": [row] * N}

json.dump(out, sys.stdout, indent=1)
print()
