#!/usr/bin/env python3
"""Ignores its inputs: predicts 0 and samples N(0, 1)."""
import json
import random
import sys

for line in sys.stdin:
    req = json.loads(line)
    rid, op = req["id"], req["op"]
    if op == "handshake":
        reply = {"id": rid, "capabilities": ["mean", "distributional"]}
    elif op == "predict_mean":
        reply = {"id": rid, "y": 0.0}
    elif op == "predict_dist":
        gen = random.Random(req["seed"])
        reply = {"id": rid, "samples": [gen.gauss(0.0, 1.0) for _ in range(req["n_y"])]}
    else:
        reply = {"id": rid, "ok": True}
    sys.stdout.write(json.dumps(reply) + "\n")
    sys.stdout.flush()
    if op == "shutdown":
        break
