"""
Process-wide settings.
"""

import os
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Default root for run directories, exports and data caches.
    out_root: str = os.getenv("DIVDR_OUT", "runs")

    # Worker threads for no-grad sweeps (gate collection, evaluation).
    threads: int = int(os.getenv("DIVDR_THREADS", "1"))

    # Logging.
    log_level: str = os.getenv("DIVDR_LOG_LEVEL", "INFO")

    # Pruning threshold used by the pruned-cost diagnostic.
    prune_threshold: float = float(os.getenv("DIVDR_PRUNE_THRESHOLD", "0.1"))

    # Misc.
    debug: bool = os.getenv("DEBUG", "false").lower() == "true"


settings = Settings()
