# SPDX-License-Identifier: Apache-2.0
"""A 100-query synthetic run report and the aggregate metrics expected for it.

Percentiles use the nearest-rank rule: the value at 1-based rank
ceil(p/100 * n) of the sorted sample. Precision@k counts ground-truth clips
among the first k retrieved and divides by k.
"""

import json
import math
import random
import sys

rng = random.Random(20260417)
TOP_K = 3


def nearest_rank(values, p):
    v = sorted(values)
    rank = max(1, math.ceil(p / 100 * len(v)))
    return v[min(rank, len(v)) - 1]


def summary(values):
    if not values:
        return None
    return {
        "count": len(values),
        "p50": nearest_rank(values, 50),
        "p95": nearest_rank(values, 95),
        "max": max(values),
        "mean": math.fsum(values) / len(values),
    }


queries = []
for i in range(100):
    ignored = rng.random() < 0.2
    q = {
        "segment_id": i,
        "text": f"query {i}",
        "verdict": "ignore" if ignored else "answer",
        "reason": "filler" if ignored else None,
        "voice_end_ms": 1000 * i,
        "answer_id": None if ignored else i,
        "answer": None if ignored else f"answer {i}",
        "retrieved": [],
        "snapshot_t_ms": None,
        "gate_ms": round(rng.uniform(0.1, 3.0), 3),
        "retrieve_ms": None,
        "generate_ms": None,
        "first_audio_ms": None,
        "precision_at_k": None,
    }
    if not ignored:
        q["retrieved"] = rng.sample(range(20), TOP_K)
        q["snapshot_t_ms"] = 1000 * i
        q["retrieve_ms"] = round(rng.uniform(0.05, 1.0), 3)
        q["generate_ms"] = round(rng.uniform(5.0, 40.0), 3)
        q["first_audio_ms"] = round(rng.uniform(10.0, 60.0), 3)
        if rng.random() < 0.7:
            truth = rng.sample(range(20), rng.randint(1, 3))
            hits = sum(1 for c in q["retrieved"][:TOP_K] if c in truth)
            q["precision_at_k"] = hits / TOP_K
    queries.append(q)

interrupts = [
    {"generation": g, "onset_ms": 500 * g, "delivered_ms": 500 * g + 64.0, "latency_ms": float(rng.choice([48, 64, 80]))}
    for g in range(1, 8)
]
expects = [{"id": f"e{i}", "check": "answers", "pass": i % 4 != 0, "detail": ""} for i in range(10)]

report = {
    "trace": "synthetic",
    "mode": "virtual",
    "speed": 1.0,
    "top_k": TOP_K,
    "queries": queries,
    "interrupts": interrupts,
    "voice_segments": [],
    "clips": [],
    "queue_high_water": {},
    "output": {
        "transcripts": 0,
        "answers": 0,
        "interrupts": 0,
        "audio_frames": 0,
        "stale_audio_after_interrupt": 0,
        "status": {},
        "stale_dropped": 0,
        "overflow_dropped": 0,
    },
    "expects": expects,
    "event_log_sha256": "",
}


def col(name):
    return [q[name] for q in queries if q[name] is not None]


prec = col("precision_at_k")
metrics = {
    "queries": len(queries),
    "answered": sum(1 for q in queries if q["answer_id"] is not None),
    "ignored": sum(1 for q in queries if q["verdict"] == "ignore"),
    "first_audio_ms": summary(col("first_audio_ms")),
    "gate_ms": summary(col("gate_ms")),
    "retrieve_ms": summary(col("retrieve_ms")),
    "generate_ms": summary(col("generate_ms")),
    "interrupt_ms": summary([i["latency_ms"] for i in interrupts]),
    "precision_at_k": math.fsum(prec) / len(prec) if prec else None,
    "expects_passed": sum(1 for e in expects if e["pass"]),
    "expects_failed": sum(1 for e in expects if not e["pass"]),
}

json.dump({"report": report, "metrics": metrics}, sys.stdout, indent=1)
print()
