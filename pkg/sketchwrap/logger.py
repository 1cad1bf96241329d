"""
Structured logging configuration for sketchwrap
"""
import logging
import sys
from pathlib import Path
from typing import Any, Optional

ROOT_LOGGER = 'sketchwrap'


class ColoredFormatter(logging.Formatter):
    """Custom formatter with colors for console output."""

    COLORS = {
        'DEBUG': '\033[36m',      # Cyan
        'INFO': '\033[32m',       # Green
        'WARNING': '\033[33m',    # Yellow
        'ERROR': '\033[31m',      # Red
        'CRITICAL': '\033[35m',   # Magenta
    }
    RESET = '\033[0m'

    def format(self, record):
        # Work on a copy so file handlers sharing the record keep a plain levelname
        record = logging.makeLogRecord(record.__dict__)
        color = self.COLORS.get(record.levelname, self.RESET)
        record.levelname = f"{color}{record.levelname:8}{self.RESET}"
        return super().format(record)


def setup_logging(log_level=logging.INFO, log_file: Optional[str] = None, color: bool = True):
    """
    Setup structured logging for sketchwrap.

    Args:
        log_level: Logging level (default: INFO)
        log_file: Optional file path; parent directories are created
        color: Use ANSI colors on the console handler

    Returns:
        Logger instance
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(log_level)

    # Remove existing handlers
    logger.handlers = []

    # Console goes to stderr so `extract` can stream JSON on stdout
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    fmt = '%(asctime)s | %(levelname)s | %(name)s | %(message)s'
    if color:
        console_formatter = ColoredFormatter(fmt, datefmt='%Y-%m-%d %H:%M:%S')
    else:
        console_formatter = logging.Formatter(fmt, datefmt='%Y-%m-%d %H:%M:%S')
    console_handler.setFormatter(console_formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(log_level)
        file_formatter = logging.Formatter(
            '%(asctime)s | %(levelname)-8s | %(name)s | %(funcName)s:%(lineno)d | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)

    return logger


def get_logger(name: Optional[str] = None):
    """
    Get a logger instance.

    Args:
        name: Logger name below the project root (default: sketchwrap)

    Returns:
        Logger instance
    """
    logger_name = f'{ROOT_LOGGER}.{name}' if name else ROOT_LOGGER
    return logging.getLogger(logger_name)


# Convenience functions
def log_solve(solver: str, status: str, iterations: int, duration_ms: float):
    """Log one optimizer call."""
    logger = get_logger('solver')
    logger.debug(f"Solver: {solver} | Status: {status} | Iterations: {iterations} | Duration: {duration_ms:.2f}ms")


def log_cycle(scenario_id: str, t: float, mode: str, runtime_ms: float, failed: bool = False):
    """Log one closed-loop planning cycle."""
    logger = get_logger('sim')
    status = "FALLBACK" if failed else "OK"
    logger.debug(f"Scenario: {scenario_id} | t={t:.1f}s | Mode: {mode} | Runtime: {runtime_ms:.1f}ms | Status: {status}")


def log_fallback(context: str, reason: str):
    """Log a degraded-mode decision (braking fallback, mode downgrade)."""
    logger = get_logger('fallback')
    logger.warning(f"⚠️  {context} | {reason}")


def log_error(error: Exception, context: Optional[str] = None):
    """Log errors with context."""
    logger = get_logger('errors')
    context_str = f" | Context: {context}" if context else ""
    logger.error(f"Error: {type(error).__name__}: {str(error)}{context_str}", exc_info=True)


def log_config_change(setting: str, old_value: Any, new_value: Any):
    """Log parameter overrides."""
    logger = get_logger('config')
    logger.info(f"Config Change | Setting: {setting} | Old: {old_value} | New: {new_value}")
