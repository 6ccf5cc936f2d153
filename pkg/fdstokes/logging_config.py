import logging
import sys

from colorlog import ColoredFormatter

from .config import Config

LOG_COLORS = {
    "DEBUG": "blue",
    "INFO": "green",
    "WARNING": "bold_yellow",
    "ERROR": "red",
    "CRITICAL": "bold_red",
}


def _formatter() -> ColoredFormatter:
    return ColoredFormatter(
        fmt="%(asctime)s - %(name)s - %(log_color)s%(levelname)s%(reset)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        log_colors=LOG_COLORS,
    )


def setup_logging(level: str | None = None):
    """
    Configures colored console logging for the solver runs.

    Expected Config variables:
      - LOG_LEVEL: Logging level (e.g., "INFO", "DEBUG")
      - LOG_FILE: (Optional) File path to log to. If empty or not set, only stdout is used.

    :param level: Overrides Config.LOG_LEVEL when given (the CLI ``--log-level`` flag).
    """
    log_level = (level or Config.LOG_LEVEL or "INFO").upper()
    log_file = Config.LOG_FILE or None

    root = logging.getLogger()
    root.setLevel(log_level)
    root.handlers.clear()

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    formatter = _formatter()
    for handler in handlers:
        handler.setLevel(log_level)
        handler.setFormatter(formatter)
        root.addHandler(handler)

    root.info(
        "Logging configuration complete",
        extra={"log_level": log_level, "log_file": log_file},
    )
