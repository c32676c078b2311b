"""
Standard command-line arguments shared by every etlsched subcommand.

Features:
---------
* One set of logging flags for all subcommands
* One set of run flags (config file, seeds, output directory, overrides)
* Mapping from parsed flags to dotted configuration keys, ready for
  :meth:`etlsched.config.SchedConfig.initialize`

Available Arguments:
--------------------
--log-level            Default logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
--log-dir              Directory where log files are written
--log-file             Also write logs to a rotating file under --log-dir
--no-color             Disable colored console output
--config               Run configuration file (JSON or YAML)
--seed                 Single master seed
--seeds                Comma separated master seeds
--out                  Output directory
--episodes             Training episodes per run
--jobs                 Worker processes
--set                  Dotted override, repeatable (``--set agent.lr=1e-3``)
--trace                Dump simulator event traces

Usage Example::

    import argparse
    from etlsched.argparser import add_logging_arguments, add_run_arguments, extract_overrides

    parser = argparse.ArgumentParser()
    add_run_arguments(add_logging_arguments(parser))
    args = parser.parse_args()
    overrides = extract_overrides(args)
"""

import argparse
from typing import Any, Dict, List, Optional


def _seed_list(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list '{text}'") from None
    if not seeds or any(not 0 <= s < 2**64 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be 64-bit unsigned integers")
    return seeds


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer '{text}'") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


class SchedArgumentParser:
    """Adds the standard etlsched arguments to argparse parsers."""

    # parsed attribute name -> dotted configuration key
    LOGGING_KEYS = {
        "log_level": "logging.level",
        "log_dir": "logging.log_dir",
        "log_file": "logging.file_logging",
        "colored_console": "logging.colored_console",
    }
    RUN_KEYS = {
        "seeds": "run.seeds",
        "out": "run.output_dir",
        "episodes": "run.episodes",
        "jobs": "run.jobs",
        "trace": "run.trace",
    }

    @staticmethod
    def add_logging_arguments(parser: Optional[argparse.ArgumentParser] = None) -> argparse.ArgumentParser:
        """
        Add the logging flags.

        Args:
            parser: Existing parser; a new one is created when None

        Returns:
            The parser
        """
        if parser is None:
            parser = argparse.ArgumentParser()
        group = parser.add_argument_group("logging")
        group.add_argument(
            "--log-level",
            choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
            type=str.upper,
            help="default logging level (case-insensitive)",
        )
        group.add_argument("--log-dir", help="directory where log files are written")
        group.add_argument(
            "--log-file", dest="log_file", action="store_true", default=None, help="also log to a rotating file"
        )
        group.add_argument(
            "--no-color",
            "--no-colors",
            dest="colored_console",
            action="store_false",
            default=None,
            help="disable colored console output",
        )
        return parser

    @staticmethod
    def add_run_arguments(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
        """Add the run flags common to ``train``, ``bench`` and ``sweep``."""
        parser.add_argument("--config", help="run configuration file (.json, .yaml)")
        seeds = parser.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int, help="single master seed")
        seeds.add_argument("--seeds", type=_seed_list, help="comma separated master seeds, e.g. 1,2,3")
        parser.add_argument("--out", help="output directory (default: $ETLSCHED_OUTPUT_ROOT or ./runs)")
        parser.add_argument("--episodes", type=_positive_int, help="training episodes per run")
        parser.add_argument("--jobs", type=_positive_int, help="worker processes for independent runs")
        parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value by dotted path, repeatable",
        )
        parser.add_argument(
            "--trace", action="store_true", default=None, help="write simulator event traces as JSON Lines"
        )
        return parser

    @classmethod
    def extract_logging_args(cls, args: argparse.Namespace) -> Dict[str, Any]:
        """
        Map parsed logging flags to dotted configuration keys.

        Flags that were not given are left out.
        """
        values = vars(args)
        return {key: values[name] for name, key in cls.LOGGING_KEYS.items() if values.get(name) is not None}

    @classmethod
    def extract_overrides(cls, args: argparse.Namespace) -> List[str]:
        """
        Collect every configuration override carried by ``args``.

        Returns:
            ``"dotted.path=value"`` strings: dedicated flags first, then the
            raw ``--set`` values, so ``--set`` wins on conflicts
        """
        values = vars(args)
        result: List[str] = []
        for key, value in cls.extract_logging_args(args).items():
            result.append(f"{key}={value}")
        if values.get("seed") is not None:
            result.append(f"run.seeds={values['seed']}")
        for name, key in cls.RUN_KEYS.items():
            value = values.get(name)
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            result.append(f"{key}={value}")
        result.extend(values.get("overrides") or [])
        return result


def add_logging_arguments(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    return SchedArgumentParser.add_logging_arguments(parser)


def add_run_arguments(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    return SchedArgumentParser.add_run_arguments(parser)


def extract_logging_args(args: argparse.Namespace) -> Dict[str, Any]:
    return SchedArgumentParser.extract_logging_args(args)


def extract_overrides(args: argparse.Namespace) -> List[str]:
    return SchedArgumentParser.extract_overrides(args)
