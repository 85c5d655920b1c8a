#!/usr/bin/env python3
"""Reads requests and never answers."""
import sys
import time

for line in sys.stdin:
    time.sleep(60)
