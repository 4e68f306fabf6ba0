"""
Environment configuration for the XVA engine.

Run parameters (market, claim, regime, solver, sweep) live in the JSON run
configuration handled by app.cli.run_config; this module only carries the
process-level settings that come from the environment or a .env file.
"""

import logging
import os

from dotenv import load_dotenv

from app.exceptions import ConfigurationError

load_dotenv()

VALID_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
VALID_THEMES = ["desk", "plain"]


class Config:
    """Process-level settings read from the environment."""

    OUTPUT_DIR = os.getenv("XVA_OUTPUT_DIR", "./xva_output")
    THREADS = int(os.getenv("XVA_THREADS", "1"))
    LOG_LEVEL = os.getenv("XVA_LOG_LEVEL", "WARNING").upper()
    DEFAULT_SEED = int(os.getenv("XVA_SEED", "20240101"))
    THEME = os.getenv("XVA_THEME", "desk").lower()

    # Rows per random-stream chunk; changing it changes every simulated path
    PATH_CHUNK = int(os.getenv("XVA_PATH_CHUNK", "4096"))

    # Regression targets above/below these quantiles are winsorized
    CLAMP_QUANTILE = 1e-4

    @property
    def log_level_value(self) -> int:
        """Numeric logging level for LOG_LEVEL."""
        return getattr(logging, self.LOG_LEVEL, logging.WARNING)

    def update_threads(self, threads: int) -> bool:
        """
        Update the worker cap at runtime.

        Args:
            threads: New worker count

        Returns:
            True if update successful
        """
        if threads >= 1:
            self.THREADS = threads
            os.environ["XVA_THREADS"] = str(threads)
            return True
        return False

    def update_output_dir(self, path: str) -> bool:
        """Point outputs at a new directory."""
        if not path:
            return False
        self.OUTPUT_DIR = path
        os.environ["XVA_OUTPUT_DIR"] = path
        return True

    def validate(self) -> list[str]:
        """Validate configuration; returns non-fatal warnings."""
        warnings = []

        if self.THREADS < 1:
            raise ConfigurationError(
                "XVA_THREADS must be a positive integer", {"value": self.THREADS}
            )

        if self.PATH_CHUNK < 2 or self.PATH_CHUNK % 2:
            raise ConfigurationError(
                "XVA_PATH_CHUNK must be an even integer >= 2",
                {"value": self.PATH_CHUNK},
            )

        if self.LOG_LEVEL not in VALID_LOG_LEVELS:
            raise ConfigurationError(f"Invalid log level: {self.LOG_LEVEL}")

        if self.THEME not in VALID_THEMES:
            warnings.append(f"Unknown XVA_THEME {self.THEME!r}, using desk")

        if self.THREADS > (os.cpu_count() or 1):
            warnings.append(
                f"XVA_THREADS={self.THREADS} exceeds the {os.cpu_count()} available CPUs"
            )

        return warnings


config = Config()
