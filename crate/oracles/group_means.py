# SPDX-License-Identifier: Apache-2.0
"""Spatial down-sampling cases: F (T*N x C) to H (T*P x C).

Row p of frame t in H is the mean of the N/P contiguous rows
t*N + p*(N/P) .. t*N + (p+1)*(N/P) of F. Also records the normalized mean
of all rows of F, the reference global memory.
"""

import json
import random
import sys

from common import mean_rows, normalize

rng = random.Random(7)
cases = []
for T, N, P, C in [(1, 4, 1, 2), (2, 4, 2, 3), (4, 16, 4, 8), (3, 9, 3, 5), (2, 8, 8, 4), (5, 6, 2, 16)]:
    F = [[rng.uniform(-1, 1) for _ in range(C)] for _ in range(T * N)]
    g = N // P
    H = []
    for t in range(T):
        for p in range(P):
            H.append(mean_rows(F[t * N + p * g : t * N + (p + 1) * g]))
    cases.append({
        "frames": T,
        "tokens_per_frame": N,
        "memory_tokens": P,
        "channels": C,
        "features": F,
        "short_term": H,
        "global": normalize(mean_rows(F)),
    })
json.dump(cases, sys.stdout)
print()
