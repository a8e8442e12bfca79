# SPDX-License-Identifier: Apache-2.0
"""Full retrieval rankings for the caption scenarios.

Each caption frame is a 16 x 64 matrix whose row r is the hashed vector of
caption token r mod len; a clip is four identical frames. The clip's global
memory is the normalized mean of its rows, the question vector is the
normalized mean of its token hashes, and the score is
cos(q, g_j) + bonus / (1 + age_j) with age counted in clips.
"""

import json
import sys

from common import dot, hashed_vector, mean_rows, normalize, tokenize

N, C, FRAMES = 16, 64, 4

SCENARIOS = {
    "weather": {
        "question": "How about the weather today?",
        "snapshot_t_ms": 10512,
        "bonus": 0.0,
        "captions": [
            "umbrella rain weather today",
            "desk laptop keyboard coffee",
            "bookshelf novel lamp",
            "window street bicycle",
            "sofa cushion blanket",
        ],
    },
    "sandwich": {
        "question": "Where can I heat my sandwiches?",
        "snapshot_t_ms": 8512,
        "bonus": 0.0,
        "captions": [
            "fridge milk eggs",
            "microwave heat sandwiches kitchen",
            "sofa television remote",
            "bedroom pillow alarm",
        ],
    },
    "whatisthis": {
        "question": "What is this",
        "snapshot_t_ms": 8512,
        "bonus": 2.0,
        "captions": ["this is a red mug", "bookshelf novel lamp", "window street bicycle", "green plant pot"],
    },
    "snapshot_isolation": {
        "question": "Where did I leave my keys?",
        "snapshot_t_ms": 5000,
        "bonus": 0.0,
        "captions": [
            "keys table hallway",
            "kitchen sink dishes",
            "where did i leave my keys",
            "garden hose bucket",
            "garage car tools",
        ],
    },
}


def clip_global(caption):
    toks = tokenize(caption)
    vecs = [hashed_vector(t.encode(), C) for t in toks]
    rows = [vecs[r % len(vecs)] for r in range(N)] * FRAMES
    return normalize(mean_rows(rows))


def ranking(s):
    # Clip k ends at 2000 (k + 1); the snapshot holds clips ending at or before it.
    held = [k for k in range(len(s["captions"])) if 2000 * (k + 1) <= s["snapshot_t_ms"]]
    q = normalize(mean_rows([hashed_vector(t.encode(), C) for t in tokenize(s["question"])]))
    n = len(held)
    scored = []
    for pos, k in enumerate(held):
        cos = dot(q, clip_global(s["captions"][k]))
        age = n - 1 - pos
        scored.append((k, cos + s["bonus"] / (1 + age)))
    scored.sort(key=lambda x: (-x[1], x[0]))
    return scored


out = {}
for name, s in SCENARIOS.items():
    out[name] = {
        "question": s["question"],
        "ranked": [{"clip": k, "score": sc} for k, sc in ranking(s)],
    }
json.dump(out, sys.stdout, indent=1)
print()
