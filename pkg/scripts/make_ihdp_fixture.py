#!/usr/bin/env python3
"""
Write an IHDP-shaped CSV (747 subjects, 25 covariates) for the semi-synthetic config
"""
import sys
from pathlib import Path

# Add backend to path
backend_dir = Path(__file__).parent.parent / "backend"
sys.path.insert(0, str(backend_dir))

from config import DATA_DIR
from services.ihdp_fixture import write_ihdp_csv


def main():
    """Main function"""
    import argparse

    parser = argparse.ArgumentParser(description='Generate an IHDP-shaped study table')
    parser.add_argument('--out', default=str(DATA_DIR / "ihdp_fixture.csv"), help='Output CSV path')
    parser.add_argument('--seed', type=int, default=0, help='Master seed (default: 0)')
    parser.add_argument('--trials', type=int, default=10, help='Outcome surfaces to generate (default: 10)')
    parser.add_argument('--observational', action='store_true',
                        help='Assign treatment by expit(x2 + x3 + x4) instead of at random')

    args = parser.parse_args()

    print(f"🧪 Generating {args.trials} trial(s) of IHDP-shaped data...")
    frame = write_ihdp_csv(args.out, seed=args.seed, n_trials=args.trials, observational=args.observational)
    print(f"✅ Wrote {len(frame)} rows x {frame.shape[1]} columns to {args.out}")


if __name__ == "__main__":
    main()
