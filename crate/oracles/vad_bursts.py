# SPDX-License-Identifier: Apache-2.0
"""Voice segments of the three-burst trace, computed offline.

The signal is rebuilt from scratch: silence with integer triangle-wave
bursts (period 72 samples, peak 6000). Chunks are 256 samples (16 ms). A
chunk is voiced when its RMS exceeds 1000. A segment opens at the first
chunk of a run of at least 4 voiced chunks (64 ms) and closes at the end of
the 16th consecutive unvoiced chunk (256 ms) that follows.
"""

import json
import math
import sys

RATE = 16000
CHUNK = 256
THRESHOLD = 1000.0
ONSET_CHUNKS = 4
HANGOVER_CHUNKS = 16
BURSTS = [(1008, 800), (3008, 496), (5008, 1200)]
END_MS = 9000


def triangle(n):
    period, peak, half = 72, 6000, 36
    out = []
    for i in range(n):
        p = i % period
        tri = p if p < half else period - p
        # Integer division truncating toward zero, as in C.
        num = peak * (2 * tri - half)
        out.append(int(num / half) if num >= 0 else -((-num) // half))
    return out


pcm = [0] * (END_MS * RATE // 1000)
for start, dur in BURSTS:
    s = start * RATE // 1000
    w = triangle(dur * RATE // 1000)
    pcm[s : s + len(w)] = w

voiced = []
for c in range(len(pcm) // CHUNK):
    block = pcm[c * CHUNK : (c + 1) * CHUNK]
    voiced.append(math.sqrt(sum(x * x for x in block) / CHUNK) > THRESHOLD)

segments = []
c = 0
n = len(voiced)
while c < n:
    if voiced[c] and all(voiced[c : c + ONSET_CHUNKS]) and c + ONSET_CHUNKS <= n:
        start = c
        quiet = 0
        d = c
        while d < n and quiet < HANGOVER_CHUNKS:
            quiet = 0 if voiced[d] else quiet + 1
            d += 1
        if quiet == HANGOVER_CHUNKS:
            segments.append({"start_ms": start * 16, "end_ms": d * 16})
        c = d
    else:
        c += 1

json.dump({"bursts": BURSTS, "segments": segments}, sys.stdout, indent=1)
print()
