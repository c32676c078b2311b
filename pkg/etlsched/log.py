"""
Logging for etlsched.

Console output is colored by level, file output goes through a rotating
handler guarded by a process-wide lock so sweep workers running in separate
processes can share one log file. Every record carries a ``run_id`` naming the
run it belongs to (agent, seed, grid point), set with :func:`run_context`.

Key components:
    - ColoredFormatter: ANSI colors for level names, ``%f`` support in dates
    - MultiProcessingLog: lock-guarded RotatingFileHandler wrapper
    - RunContextFilter: injects the current ``run_id`` into every record
    - ColoredLogger: cached wrapper around :class:`logging.Logger`
    - get_logger / configure_logging: factory and reconfiguration entry points

Settings come from the ``logging`` block of :class:`~etlsched.config.SchedConfig`:
``level``, ``log_dir``, ``colored_console``, ``file_logging``,
``rotation_size_mb``, ``backup_count``, ``log_format``, ``datefmt``,
``log_filename`` and ``module_levels``.

Example:
    >>> from etlsched.log import get_logger, run_context
    >>> logger = get_logger(__name__)
    >>> with run_context("dqn/seed42"):
    ...     logger.info("episode %d reward %.3f", 1, 0.25)
"""

import logging
import os
import sys
from contextlib import contextmanager
from datetime import datetime
from logging import LogRecord
from logging.handlers import RotatingFileHandler
from multiprocessing import Lock
from typing import Any, Dict, Iterator, List, Literal, Mapping, Optional, Type, Union

from .config import SchedConfig

_RUN_ID = "-"


def current_run_id() -> str:
    return _RUN_ID


@contextmanager
def run_context(run_id: str) -> Iterator[str]:
    """
    Tag every record logged inside the block with ``run_id``.

    The tag is process-local; sweep workers set their own.
    """
    global _RUN_ID
    previous = _RUN_ID
    _RUN_ID = run_id
    try:
        yield run_id
    finally:
        _RUN_ID = previous


class RunContextFilter(logging.Filter):
    """Adds ``record.run_id`` so format strings can reference ``%(run_id)s``."""

    def filter(self, record: LogRecord) -> bool:
        if not hasattr(record, "run_id"):
            record.run_id = _RUN_ID
        return True


class ColoredFormatter(logging.Formatter):
    """
    Formatter that wraps the level name in ANSI color codes.

    Args:
        fmt: Format string for log messages
        datefmt: Date format; ``%f`` gives microseconds
        style: Format string style
        colored: Whether to color the level name at all
    """

    COLORS = {
        "DEBUG": "\033[94m",
        "INFO": "\033[92m",
        "WARNING": "\033[93m",
        "ERROR": "\033[91m",
        "CRITICAL": "\033[91m\033[1m",
    }
    RESET = "\033[0m"

    def __init__(
        self,
        fmt: Optional[str] = None,
        datefmt: Optional[str] = None,
        style: Literal["%", "{", "$"] = "%",
        colored: bool = True,
    ) -> None:
        super().__init__(fmt, datefmt, style)
        self.colored = colored

    def format(self, record: LogRecord) -> str:
        levelname = record.levelname
        if self.colored and levelname in self.COLORS:
            record.levelname = f"{self.COLORS[levelname]}{levelname}{self.RESET}"
        try:
            return super().format(record)
        finally:
            record.levelname = levelname

    def formatTime(self, record: LogRecord, datefmt: Optional[str] = None) -> str:
        return datetime.fromtimestamp(record.created).strftime(datefmt or "%Y-%m-%d %H:%M:%S")


class MultiProcessingLog(logging.Handler):
    """
    Process-safe rotating file handler.

    All writes and rollovers take a class-level :class:`multiprocessing.Lock`
    inherited by forked sweep workers.

    Args:
        filename: Path to the log file
        mode: File opening mode
        maxBytes: Rollover size in bytes, 0 disables rotation
        backupCount: Rotated files to keep
    """

    file_lock = Lock()

    def __init__(self, filename: str, mode: str = "a", maxBytes: int = 0, backupCount: int = 0) -> None:
        super().__init__()
        self.filename = filename
        self.mode = mode
        self.maxBytes = maxBytes  # pylint: disable=invalid-name
        self.backupCount = backupCount  # pylint: disable=invalid-name
        self._handler: Optional[RotatingFileHandler] = None
        directory = os.path.dirname(filename)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._create_handler()

    def _create_handler(self) -> None:
        if self._handler is not None:
            try:
                self._handler.close()
            except (OSError, ValueError) as e:
                SchedConfig.debug_print(f"Warning: error closing log handler: {e}")
        self._handler = RotatingFileHandler(self.filename, self.mode, self.maxBytes, self.backupCount)
        if self.formatter:
            self._handler.setFormatter(self.formatter)

    def emit(self, record: LogRecord) -> None:
        with self.__class__.file_lock:
            try:
                if self._handler is None:
                    self._create_handler()
                assert self._handler is not None
                if self._handler.shouldRollover(record):
                    self._handler.doRollover()
                self._handler.emit(record)
            except Exception:  # pylint: disable=broad-except
                self.handleError(record)

    def setFormatter(self, fmt: Optional[logging.Formatter]) -> None:
        super().setFormatter(fmt)
        if self._handler is not None and fmt is not None:
            self._handler.setFormatter(fmt)

    def close(self) -> None:
        if self._handler is not None:
            self._handler.close()
        super().close()

    def __repr__(self) -> str:
        return f"<MultiProcessingLog {self.filename} ({logging.getLevelName(self.level)})>"


class ColoredLogger:
    """
    Cached logger with a colored console handler and the shared file handler.

    Instances are created through :func:`get_logger`. The underlying
    :class:`logging.Logger` does not propagate, so records are written exactly
    once.
    """

    _initialized_loggers: Dict[str, "ColoredLogger"] = {}
    _file_handler: Optional[MultiProcessingLog] = None
    _log_file_path: Optional[str] = None

    def __init__(self, name: str, level: Optional[Union[int, str]] = None) -> None:
        self.name = name
        self._configured_level = SchedConfig.get_level(name, level)
        self.logger = logging.getLogger(name)
        self.logger.propagate = False
        self.logger.setLevel(logging.DEBUG)
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
            handler.close()
        self._add_handlers()
        self.__class__._initialized_loggers[name] = self

    def _add_handlers(self) -> None:
        log_format = SchedConfig.get("logging.log_format")
        datefmt = SchedConfig.get("logging.datefmt")

        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(
            ColoredFormatter(fmt=log_format, datefmt=datefmt, colored=bool(SchedConfig.get("logging.colored_console")))
        )
        console.addFilter(RunContextFilter())
        console.setLevel(self._configured_level)
        self.logger.addHandler(console)

        if SchedConfig.get("logging.file_logging"):
            if self.__class__._file_handler is None:
                self.__class__._file_handler = self.__class__.setup_file_handler()
            self.logger.addHandler(self.__class__._file_handler)

    @classmethod
    def setup_file_handler(cls, log_file_path: Optional[str] = None) -> MultiProcessingLog:
        """
        Create the file handler shared by all loggers of this process.

        Args:
            log_file_path: Explicit path; by default ``<log_dir>/<log_filename>_<timestamp>.log``
        """
        if log_file_path is None:
            log_dir = SchedConfig.get("logging.log_dir", "logs")
            timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
            log_file_path = os.path.join(log_dir, f"{SchedConfig.get_filename_prefix()}_{timestamp}.log")
        cls._log_file_path = log_file_path

        rotation_bytes = max(1024, int(float(SchedConfig.get("logging.rotation_size_mb", 10)) * 1024 * 1024))
        backup_count = max(1, int(SchedConfig.get("logging.backup_count", 5)))
        handler = MultiProcessingLog(log_file_path, "a", rotation_bytes, backup_count)
        handler.setFormatter(
            ColoredFormatter(
                fmt=SchedConfig.get("logging.log_format"), datefmt=SchedConfig.get("logging.datefmt"), colored=False
            )
        )
        handler.addFilter(RunContextFilter())
        handler.setLevel(logging.DEBUG)
        SchedConfig.debug_print(f"Logging to file {log_file_path} (max {rotation_bytes} bytes, {backup_count} backups)")
        return handler

    @classmethod
    def reset(cls) -> Type["ColoredLogger"]:
        """
        Close every handler and rebuild known loggers from the current settings.

        Returns:
            The class, for chaining
        """
        names = list(cls._initialized_loggers)
        for name in names:
            logger = logging.getLogger(name)
            for handler in logger.handlers[:]:
                logger.removeHandler(handler)
                try:
                    handler.close()
                except Exception:  # pylint: disable=broad-except
                    pass
        cls._initialized_loggers.clear()
        if cls._file_handler is not None:
            cls._file_handler.close()
            cls._file_handler = None
        for name in names:
            ColoredLogger(name)
        return cls

    @classmethod
    def update_logger_level(cls, name: str, level: Union[int, str]) -> None:
        if name in cls._initialized_loggers:
            cls._initialized_loggers[name].level = SchedConfig.map_level(level)

    @property
    def handlers(self) -> List[logging.Handler]:
        return self.logger.handlers

    @property
    def level(self) -> int:
        return self._configured_level

    @level.setter
    def level(self, value: int) -> None:
        self._configured_level = value
        for handler in self.logger.handlers:
            if isinstance(handler, logging.StreamHandler) and not isinstance(handler, MultiProcessingLog):
                handler.setLevel(value)

    def debug(self, msg: str, *args: Any, **kwargs: Any) -> None:
        self.logger.debug(msg, *args, **kwargs, stacklevel=2)

    def info(self, msg: str, *args: Any, **kwargs: Any) -> None:
        self.logger.info(msg, *args, **kwargs, stacklevel=2)

    def warning(self, msg: str, *args: Any, **kwargs: Any) -> None:
        self.logger.warning(msg, *args, **kwargs, stacklevel=2)

    def error(self, msg: str, *args: Any, **kwargs: Any) -> None:
        self.logger.error(msg, *args, **kwargs, stacklevel=2)

    def critical(self, msg: str, *args: Any, **kwargs: Any) -> None:
        self.logger.critical(msg, *args, **kwargs, stacklevel=2)

    def exception(self, msg: str, *args: Any, **kwargs: Any) -> None:
        self.logger.exception(msg, *args, **kwargs, stacklevel=2)


def configure_external_loggers(module_levels: Mapping[str, Any]) -> None:
    """Apply ``module_levels`` to loggers not created through :func:`get_logger` (third-party libraries)."""
    for name, level in module_levels.items():
        if name in ColoredLogger._initialized_loggers or name.startswith("etlsched"):
            continue
        logging.getLogger(name).setLevel(SchedConfig.map_level(level))
        SchedConfig.debug_print(f"Set external logger '{name}' to level {level}")


def configure_logging(settings: Optional[Mapping[str, Any]] = None) -> None:
    """
    Apply a ``logging`` settings block and rebuild every known logger.

    Args:
        settings: Keys of the ``logging`` config block; unspecified keys keep
            their current value
    """
    for key, value in (settings or {}).items():
        if key == "module_levels":
            for module, level in dict(value).items():
                SchedConfig.set(f"logging.module_levels.{module}", level)
        else:
            SchedConfig.set(f"logging.{key}", value)
    ColoredLogger.reset()
    configure_external_loggers(SchedConfig.get("logging.module_levels", {}) or {})


def get_logger(name: str, level: Optional[Union[int, str]] = None) -> ColoredLogger:
    """
    Get the cached logger for ``name``, creating it on first use.

    Args:
        name: Logger name, usually ``__name__``
        level: Explicit level overriding the configured one

    Returns:
        The :class:`ColoredLogger` for ``name``
    """
    existing = ColoredLogger._initialized_loggers.get(name)
    if existing is not None:
        if level is not None:
            ColoredLogger.update_logger_level(name, level)
        return existing
    return ColoredLogger(name, level)
