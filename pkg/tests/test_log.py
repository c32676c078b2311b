"""
Tests for the etlsched logging layer.

Covers logger caching, console formatting with run tags, level resolution,
the shared rotating file handler and reconfiguration through
configure_logging.
"""

import logging
import os

import pytest

from etlsched.config import SchedConfig
from etlsched.log import (
    ColoredFormatter,
    ColoredLogger,
    MultiProcessingLog,
    RunContextFilter,
    configure_logging,
    current_run_id,
    get_logger,
    run_context,
)


def make_record(level=logging.INFO, msg="message"):
    return logging.LogRecord("test", level, __file__, 1, msg, (), None)


class TestColoredLogger:
    """Logger creation, console output and levels."""

    def test_logger_is_cached(self):
        """get_logger returns the same object for the same name."""
        first = get_logger("test.cached")
        assert get_logger("test.cached") is first
        assert first.logger.propagate is False

    def test_no_redundant_handlers(self):
        """Only the console handler is attached while file logging is off."""
        logger = get_logger("test.handlers")
        assert len(logger.handlers) == 1
        assert isinstance(logger.handlers[0], logging.StreamHandler)

    def test_console_output_carries_run_id(self, capsys):
        """Messages go to stderr tagged with the active run id."""
        SchedConfig.initialize(**{"logging.colored_console": False})
        logger = get_logger("test.console")
        logger.info("outside")
        with run_context("dqn/seed7"):
            assert current_run_id() == "dqn/seed7"
            logger.warning("inside")
        assert current_run_id() == "-"
        err = capsys.readouterr().err
        assert "[INFO] - [-] - outside" in err
        assert "[WARNING] - [dqn/seed7] - inside" in err
        assert "\033[" not in err

    def test_level_filters_console(self, capsys):
        """Records below the configured level are dropped."""
        SchedConfig.initialize(**{"logging.level": "WARNING"})
        logger = get_logger("test.levels")
        logger.info("hidden")
        logger.error("shown")
        err = capsys.readouterr().err
        assert "hidden" not in err
        assert "shown" in err

    def test_module_level_beats_global_level(self):
        """A module_levels entry applies to the module and its children."""
        SchedConfig.initialize(**{"logging.level": "ERROR", "logging.module_levels": {"test.mod": "DEBUG"}})
        assert get_logger("test.mod.child").level == logging.DEBUG
        assert get_logger("test.other").level == logging.ERROR

    def test_update_level_on_existing_logger(self):
        """Passing a level to get_logger for a cached name updates it."""
        logger = get_logger("test.update")
        get_logger("test.update", "ERROR")
        assert logger.level == logging.ERROR
        assert logger.handlers[0].level == logging.ERROR

    def test_reset_rebuilds_known_loggers(self):
        """reset() applies new settings to loggers created earlier."""
        get_logger("test.reset")
        SchedConfig.set("logging.level", "CRITICAL")
        ColoredLogger.reset()
        assert get_logger("test.reset").level == logging.CRITICAL


class TestFormatting:
    """ColoredFormatter and the run-id filter."""

    def test_colored_level_name(self):
        """Level names are wrapped in ANSI codes and restored afterwards."""
        record = make_record(logging.ERROR)
        text = ColoredFormatter("%(levelname)s %(message)s").format(record)
        assert text == f"{ColoredFormatter.COLORS['ERROR']}ERROR{ColoredFormatter.RESET} message"
        assert record.levelname == "ERROR"

    def test_plain_level_name(self):
        """colored=False leaves the level name alone."""
        text = ColoredFormatter("%(levelname)s %(message)s", colored=False).format(make_record(logging.DEBUG))
        assert text == "DEBUG message"

    def test_microsecond_dates(self):
        """%f in the date format gives six digits of microseconds."""
        formatter = ColoredFormatter("%(asctime)s", datefmt="%H:%M:%S.%f", colored=False)
        stamp = formatter.format(make_record())
        assert len(stamp.split(".")[-1]) == 6

    def test_filter_keeps_explicit_run_id(self):
        """A record that already has run_id is not overwritten."""
        record = make_record()
        record.run_id = "sweep/lr=0.001"
        with run_context("other"):
            RunContextFilter().filter(record)
        assert record.run_id == "sweep/lr=0.001"


class TestFileLogging:
    """The shared rotating file handler."""

    def test_log_file_creation(self, temp_log_dir):
        """With file logging on, messages land in <log_dir>/<prefix>_<timestamp>.log."""
        SchedConfig.initialize(**{"logging.file_logging": True, "logging.log_dir": str(temp_log_dir)})
        logger = get_logger("test.file")
        with run_context("bench/seed1"):
            logger.info("written to file")
        path = ColoredLogger._log_file_path
        assert path is not None and path.startswith(str(temp_log_dir))
        assert os.path.basename(path).startswith("etlsched_")
        ColoredLogger._file_handler.close()
        with open(path, encoding="utf-8") as f:
            content = f.read()
        assert "[bench/seed1] - written to file" in content
        assert "\033[" not in content

    def test_file_handler_is_shared(self, temp_log_dir):
        """Every logger of the process writes through one file handler."""
        SchedConfig.initialize(**{"logging.file_logging": True, "logging.log_dir": str(temp_log_dir)})
        a = get_logger("test.shared.a")
        b = get_logger("test.shared.b")
        assert a.handlers[1] is b.handlers[1] is ColoredLogger._file_handler

    def test_file_handler_rotation(self, temp_log_dir):
        """Writing past maxBytes rolls the file over."""
        path = str(temp_log_dir / "rotate.log")
        handler = MultiProcessingLog(path, "a", maxBytes=512, backupCount=2)
        handler.setFormatter(logging.Formatter("%(message)s"))
        for i in range(100):
            handler.emit(make_record(msg=f"line {i:04d} " + "x" * 40))
        handler.close()
        assert os.path.exists(path + ".1")
        assert not os.path.exists(path + ".3")

    def test_configure_logging_switches_file_on(self, temp_log_dir):
        """configure_logging updates settings and rebuilds existing loggers."""
        logger = get_logger("test.configure")
        assert len(logger.handlers) == 1
        configure_logging({"file_logging": True, "log_dir": str(temp_log_dir), "module_levels": {"somelib": "ERROR"}})
        rebuilt = get_logger("test.configure")
        assert len(rebuilt.handlers) == 2
        assert logging.getLogger("somelib").level == logging.ERROR


@pytest.mark.concurrency
class TestProcessSafety:
    """The file lock is shared by class, so forked workers serialize writes."""

    def test_lock_is_class_level(self, temp_log_dir):
        """Two handlers use the same lock object."""
        first = MultiProcessingLog(str(temp_log_dir / "a.log"))
        second = MultiProcessingLog(str(temp_log_dir / "b.log"))
        try:
            assert first.file_lock is second.file_lock
        finally:
            first.close()
            second.close()
