"""
Configuration settings for frugal-bench
"""
import os
from pathlib import Path
from typing import Optional
import logging
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Base paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
CONFIGS_DIR = DATA_DIR / "configs"


class Settings:
    """Application settings loaded from environment variables"""

    # Run store
    DATABASE_URL: str = os.getenv("FRUGAL_BENCH_DATABASE_URL", "sqlite:///./frugal_bench.db")

    # Execution
    WORKERS: int = int(os.getenv("FRUGAL_BENCH_WORKERS", "1"))
    PLUGIN_TIMEOUT: float = float(os.getenv("FRUGAL_BENCH_PLUGIN_TIMEOUT", "300"))
    POOLED_SAMPLE_CAP: int = int(os.getenv("FRUGAL_BENCH_POOLED_CAP", "10000000"))
    RESULTS_DIR: Path = Path(os.getenv("FRUGAL_BENCH_RESULTS_DIR", str(BASE_DIR / "results")))

    # API Settings
    API_HOST: str = os.getenv("API_HOST", "localhost")
    API_PORT: int = int(os.getenv("API_PORT", "8000"))
    DEBUG: bool = os.getenv("DEBUG", "false").lower() == "true"

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("LOG_FILE")

    def __init__(self):
        """Initialize settings and validate required values"""
        self.validate_settings()
        self.setup_logging()

    def validate_settings(self):
        """Validate required configuration values"""
        if self.WORKERS < 1:
            raise ValueError("FRUGAL_BENCH_WORKERS must be at least 1")

        if self.PLUGIN_TIMEOUT <= 0:
            raise ValueError("FRUGAL_BENCH_PLUGIN_TIMEOUT must be positive")

        if self.POOLED_SAMPLE_CAP < 1:
            raise ValueError("FRUGAL_BENCH_POOLED_CAP must be at least 1")

    def setup_logging(self):
        """Configure logging for the application"""
        handlers = [logging.StreamHandler()]
        if self.LOG_FILE:
            handlers.append(logging.FileHandler(self.LOG_FILE))

        logging.basicConfig(
            level=getattr(logging, self.LOG_LEVEL.upper()),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=handlers
        )


# Global settings instance
settings = Settings()

# Treatment is binary throughout
TREATMENT_LEVELS = (0, 1)

# Positivity clip for emitted propensities
PROPENSITY_CLIP = (0.01, 0.99)

# Fitting guards
MIN_ARM_ROWS = 10
RIDGE_JITTER = 1e-8
CONDITIONING_JITTER = 1e-10
RANK_CLAMP = 1e-12

# Bootstrap redraws when a test sample has no rows at x0
MAX_REDRAW_ATTEMPTS = 10

# Default experiment sizes
DEFAULT_ITERATIONS = 50
DEFAULT_N_Y = 50
RUN_DEFAULTS = {
    "synthetic": {"n_bootstrap": 200, "n_train": 200, "n_test": 50},
    "semi_synthetic": {"n_bootstrap": 200, "n_train": 1000, "n_test": 200},
}

# Output files written by a run
RESULTS_CSV = "results.csv"
SUMMARY_TXT = "summary.txt"
REPORT_JSON = "report.json"

# Fixed CSV column order for results.csv
RESULTS_COLUMNS = [
    "iteration",
    "model",
    "test_kind",
    "target",
    "p_value",
    "statistic",
    "degenerate",
    "seed",
    "out_of_support",
    "error",
]
