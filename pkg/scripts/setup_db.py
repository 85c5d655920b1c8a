#!/usr/bin/env python3
"""
Run-store setup script for frugal-bench
Run this script to create the run and result tables.
"""

import sys
from pathlib import Path

# Add the backend directory to Python path
backend_dir = Path(__file__).parent.parent / "backend"
sys.path.insert(0, str(backend_dir))

from database import init_database, DatabaseManager
from config import settings


def setup_database():
    """Initialize database and create tables"""
    print("🔧 Setting up run store...")

    try:
        init_database()
        print("✅ Tables created successfully")
        print(f"📁 Database: {settings.DATABASE_URL}")
        print(f"📁 Results directory: {settings.RESULTS_DIR}")

    except Exception as e:
        print(f"❌ Error setting up database: {str(e)}")
        sys.exit(1)


def show_runs(limit: int = 20):
    """Print the most recent runs with their pass rates"""
    with DatabaseManager() as db:
        runs = db.list_runs(limit=limit)
        if not runs:
            print("No runs recorded yet")
            return

        print("\n📊 Recorded runs:")
        print("=" * 60)
        for run in runs:
            print(f"#{run.id} {run.name} [{run.status}] digest {run.config_digest[:12]}")
            for entry in db.pass_rate_summary(run.id):
                percent = "n/a" if entry["percent"] is None else f"{entry['percent']:.1f}%"
                print(f"    {entry['model']:<24} {entry['test_kind']:<14} {percent} of {entry['trials']}")


def main():
    """Main function"""
    import argparse

    parser = argparse.ArgumentParser(description='Set up the frugal-bench run store')
    parser.add_argument('--runs', action='store_true', help='List recorded runs after setup')
    args = parser.parse_args()

    setup_database()
    if args.runs:
        show_runs()


if __name__ == "__main__":
    main()
