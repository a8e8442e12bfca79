# SPDX-License-Identifier: Apache-2.0
"""Writes the three golden prompts.

Usage: prompt_goldens.py OUT_DIR

Clip c carries frames 16c + {0, 5, 10, 15} stamped at frame * 1000 ms and a
64 x 64 short-term memory. Each file ends with one newline.
"""

import os
import sys


def img(clip):
    return " ".join(f"<img clip={clip} frame={f} t={f * 1000}>" for f in (16 * clip + d for d in (0, 5, 10, 15)))


def prompt(question, clips):
    if not clips:
        return f"Question: {question}\n"
    return (
        f"Question: {question},\n"
        f"Here is the question related video clip {' '.join(img(c) for c in clips)};\n"
        f"Here is the question related memory {' '.join(f'<mem clip={c} shape=64x64>' for c in clips)}\n"
    )


CASES = {
    "one_clip.txt": prompt("What is this", [3]),
    "two_clips.txt": prompt("How about the weather today?", [5, 1]),
    "cold_start.txt": prompt("What is this", []),
}

out = sys.argv[1]
os.makedirs(out, exist_ok=True)
for name, text in CASES.items():
    with open(os.path.join(out, name), "w", encoding="utf-8", newline="") as f:
        f.write(text)
