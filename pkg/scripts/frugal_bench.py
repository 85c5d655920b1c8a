#!/usr/bin/env python3
"""
Launcher for the frugal-bench CLI

Usage:
    python scripts/frugal_bench.py run data/configs/setting1.json --workers 4
    python scripts/frugal_bench.py validate data/configs/setting2.json
    python scripts/frugal_bench.py plugin-test python backend/plugins/echo_plugin.py
"""
import sys
from pathlib import Path

# Add backend to path
backend_dir = Path(__file__).parent.parent / "backend"
sys.path.insert(0, str(backend_dir))

from cli import main

if __name__ == "__main__":
    sys.exit(main())
