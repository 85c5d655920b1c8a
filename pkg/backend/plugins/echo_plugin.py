#!/usr/bin/env python3
"""
Protocol-conformance plugin: accepts any data and predicts y = 0.
"""
import json
import sys


def emit(obj):
    sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def main():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        rid = req.get("id")
        op = req.get("op")

        if op == "handshake":
            emit({"id": rid, "capabilities": ["mean", "distributional"]})
        elif op == "fit":
            emit({"id": rid, "ok": True})
        elif op == "predict_mean":
            emit({"id": rid, "y": 0.0})
        elif op == "predict_dist":
            emit({"id": rid, "samples": [0.0] * int(req.get("n_y", 1))})
        elif op == "shutdown":
            emit({"id": rid, "ok": True})
            return
        else:
            emit({"id": rid, "error": f"unsupported op {op}"})


if __name__ == "__main__":
    main()
