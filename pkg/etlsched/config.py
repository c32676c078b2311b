"""
Run configuration management for etlsched.

One nested configuration dictionary drives every command: workload generator,
cluster profile, environment and reward settings, agent hyperparameters, run
bookkeeping and logging. It is assembled from several sources, lowest to
highest priority:

1. Built-in defaults (:attr:`SchedConfig.DEFAULT_CONFIG`, schema ``runcfg-v1``)
2. Environment variables
3. Configuration file (JSON, or YAML when PyYAML is installed)
4. Command-line overrides (``--set agent.lr=1e-3`` and the dedicated flags)
5. Programmatic keyword arguments

Loading happens in two phases: a collection phase gathers each source and
converts its string values to the type of the default at the same dotted path,
then an application phase deep-merges the sources in priority order.

Environment Variables:
    - ``ETLSCHED_OUTPUT_ROOT``: default output directory (``run.output_dir``)
    - ``ETLSCHED_LOG_LEVEL``: default log level (``logging.level``)
    - ``ETLSCHED_LOG_DIR``: log file directory (``logging.log_dir``)
    - ``ETLSCHED_JOBS``: worker processes for sweeps and benches (``run.jobs``)
    - ``ETLSCHED_NO_COLOR``: disable colored console output when truthy

Type Conversion:
    Strings coming from the environment or the command line are converted
    using the default's type. Booleans accept
    ``true/1/yes/y/t/on`` and ``false/0/no/n/f/off/none``; lists accept JSON
    array syntax or comma separated values.

Usage examples:
    # Defaults only
    SchedConfig.initialize()

    # File plus dotted overrides
    SchedConfig.initialize(config_file="example/default.json", overrides=["agent.lr=1e-3"])

    # Access
    gamma = SchedConfig.get("agent.gamma")
"""

import copy
import json
import os
import re
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Type

from .errors import ConfigurationError

SCHEMA = "runcfg-v1"

_TRUE_WORDS = ("true", "1", "yes", "y", "t", "on")
_FALSE_WORDS = ("false", "0", "no", "n", "f", "off", "none")

# Keys below these paths are free-form mappings and are not checked against the defaults.
_FREE_FORM = ("logging.module_levels",)


def _is_free_form(path: str) -> bool:
    return any(path == p or path.startswith(p + ".") for p in _FREE_FORM)


def get_dotted(config: Mapping[str, Any], dotted: str, default: Any = None) -> Any:
    """
    Look up ``"a.b.c"`` in a nested mapping.

    Returns ``default`` when any component is missing.
    """
    node: Any = config
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return default
        node = node[part]
    return node


def set_dotted(config: Dict[str, Any], dotted: str, value: Any) -> None:
    """Assign ``value`` at ``"a.b.c"``, creating intermediate dictionaries."""
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def _convert_scalar(raw: str, like: Any, path: str) -> Any:
    text = raw.strip()
    if isinstance(like, bool):
        lowered = text.lower()
        if lowered in _TRUE_WORDS:
            return True
        if lowered in _FALSE_WORDS:
            return False
        raise ConfigurationError(f"cannot convert '{raw}' to boolean", path=path)
    if isinstance(like, int):
        try:
            return int(text)
        except ValueError:
            try:
                as_float = float(text)
            except ValueError:
                as_float = float("nan")
            if as_float.is_integer():
                return int(as_float)
            raise ConfigurationError(f"cannot convert '{raw}' to integer", path=path) from None
    if isinstance(like, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigurationError(f"cannot convert '{raw}' to number", path=path) from None
    if isinstance(like, str):
        return raw
    # default is None or a container: accept JSON, fall back to the raw string
    try:
        return json.loads(text)
    except ValueError:
        return raw


def convert_value(raw: Any, default: Any, path: str = "") -> Any:
    """
    Convert a raw string to the type of ``default``.

    Non-string values are returned unchanged.

    Args:
        raw: Value as read from the environment or command line
        default: Default at the same dotted path, used as type witness
        path: Dotted path, for error messages

    Returns:
        The converted value

    Raises:
        ConfigurationError: If the string cannot be converted

    Examples:
        >>> convert_value("yes", False)
        True
        >>> convert_value("1,2,3", [0])
        [1, 2, 3]
    """
    if not isinstance(raw, str):
        return raw
    if isinstance(default, (list, tuple)):
        text = raw.strip()
        if text.startswith("["):
            try:
                items = json.loads(text)
            except ValueError as exc:
                raise ConfigurationError(f"invalid list '{raw}': {exc}", path=path) from exc
        else:
            items = [item for item in text.split(",") if item.strip()]
        witness = default[0] if len(default) else None
        return [convert_value(item, witness, path) if isinstance(item, str) else item for item in items]
    if isinstance(default, dict):
        try:
            value = json.loads(raw)
        except ValueError as exc:
            raise ConfigurationError(f"invalid mapping '{raw}': {exc}", path=path) from exc
        if not isinstance(value, dict):
            raise ConfigurationError("expected a JSON object", path=path)
        return value
    if default is None:
        return _convert_scalar(raw, None, path)
    return _convert_scalar(raw, default, path)


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def _flatten(config: Mapping[str, Any], prefix: str = "") -> List[Tuple[str, Any]]:
    items: List[Tuple[str, Any]] = []
    for key, value in config.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, Mapping) and not _is_free_form(path):
            items.extend(_flatten(value, path))
        else:
            items.append((path, value))
    return items


def _find_key_line(text: str, dotted: str) -> Optional[int]:
    """1-based line of the leaf key of ``dotted`` in a JSON or YAML text."""
    leaf = re.escape(dotted.split(".")[-1])
    pattern = re.compile(rf'^\s*(?:"{leaf}"|\'{leaf}\'|{leaf})\s*:')
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line) or re.search(rf'[{{,]\s*"{leaf}"\s*:', line):
            return lineno
    return None


class SchedConfig:
    """
    Process-wide run configuration.

    Class-level state, accessed through classmethods, so every module sees the
    same configuration once :meth:`initialize` ran. Worker processes of a
    sweep receive their configuration explicitly and call :meth:`initialize`
    themselves.

    Attributes:
        DEFAULT_CONFIG: Nested defaults; the key set defines the schema
        ENV_VARS: Environment variable to dotted path mapping

    Examples:
        >>> SchedConfig.initialize(overrides=["run.episodes=5"])["run"]["episodes"]
        5
    """

    DEFAULT_CONFIG: Dict[str, Any] = {
        "schema": SCHEMA,
        "workload": {
            "n_tasks": 200,
            "layer_widths": [40, 40, 40, 40, 40],
            "edge_prob": 0.1,
            "scale_factor": 1.0,
            "deadline_slack": 3.0,
            "stream_fraction": 0.3,
            "seed": 0,
            "batch_fraction": 0.5,
            "ref_speed": 2.5,
            "ref_bandwidth": 12.5,
        },
        "cluster": {
            "profile": "default-hetero-v1",
            "n_nodes": 8,
            "coord_base": 0.05,
            "coord_per_node": 0.02,
        },
        "env": {
            "a1": 1.0,
            "a2": 0.5,
            "a3": 0.5,
            "t_max": None,
            "c_max": None,
            "horizon": None,
            "horizon_multiplier": 1.5,
            "mask_invalid": False,
            "defer_cap": 16,
        },
        "agent": {
            "gamma": 0.93,
            "lr": 5e-4,
            "epsilon_start": 1.0,
            "epsilon_end": 0.05,
            "epsilon_decay_steps": 20000,
            "batch_size": 64,
            "target_sync_interval": 500,
            "buffer_capacity": 50000,
            "warmup_transitions": 1000,
            "double_dqn": False,
            "hidden": [64, 32],
            "embedding": "sigmoid",
            "tabular_alpha": 0.1,
        },
        "run": {
            "episodes": 300,
            "eval_episodes": 20,
            "seeds": [42],
            "output_dir": "runs",
            "jobs": 1,
            "trace": False,
            "agent": "dqn",
            "agents": ["dqn", "random", "roundrobin", "leastloaded"],
        },
        "logging": {
            "level": "INFO",
            "log_dir": "logs",
            "colored_console": True,
            "file_logging": False,
            "rotation_size_mb": 10,
            "backup_count": 5,
            "log_format": "%(asctime)s - %(name)s - [%(levelname)s] - [%(run_id)s] - %(message)s",
            "datefmt": "%Y-%m-%d %H:%M:%S",
            "log_filename": "etlsched",
            "module_levels": {},
        },
    }

    ENV_VARS: Dict[str, str] = {
        "ETLSCHED_OUTPUT_ROOT": "run.output_dir",
        "ETLSCHED_LOG_LEVEL": "logging.level",
        "ETLSCHED_LOG_DIR": "logging.log_dir",
        "ETLSCHED_JOBS": "run.jobs",
        "ETLSCHED_NO_COLOR": "logging.colored_console",
    }

    _config: Dict[str, Any] = copy.deepcopy(DEFAULT_CONFIG)
    _initialized = False
    _debug_mode = False

    @classmethod
    def debug_print(cls, message: str) -> None:
        """Print ``message`` only when configuration debugging is on."""
        if cls._debug_mode:
            print(message)

    @classmethod
    def initialize(
        cls,
        config_file: Optional[str] = None,
        overrides: Optional[Sequence[str]] = None,
        **kwargs: Any,
    ) -> Dict[str, Any]:
        """
        Build the active configuration from every source.

        Args:
            config_file: Path to a ``.json``, ``.yaml`` or ``.yml`` run config
            overrides: ``"dotted.path=value"`` strings from the command line
            **kwargs: Top-level blocks or dotted paths, highest priority

        Returns:
            The complete configuration dictionary

        Raises:
            ConfigurationError: Unreadable file, unknown key or bad value
        """
        sources = cls._collect_configurations(config_file, overrides or (), kwargs)
        cls._apply_configurations(sources)
        cls._validate(cls._config, sources.get("_file_text", {}).get("text"), config_file)
        cls._initialized = True
        return cls._config

    @classmethod
    def _collect_configurations(
        cls, config_file: Optional[str], overrides: Iterable[str], kwargs: Dict[str, Any]
    ) -> Dict[str, Dict[str, Any]]:
        sources: Dict[str, Dict[str, Any]] = {
            "defaults": copy.deepcopy(cls.DEFAULT_CONFIG),
            "env": cls.load_from_env(),
            "file": {},
            "cli": {},
            "kwargs": {},
            "_file_text": {},
        }

        if config_file:
            text, file_config = cls._load_raw_file_config(config_file)
            cls._check_keys(file_config, cls.DEFAULT_CONFIG, "", text, config_file)
            sources["file"] = file_config
            sources["_file_text"] = {"text": text}
            cls.debug_print(f"Collected from file: {file_config}")

        for override in overrides:
            path, value = cls.parse_override(override)
            set_dotted(sources["cli"], path, value)
        if sources["cli"]:
            cls._check_keys(sources["cli"], cls.DEFAULT_CONFIG, "", None, None)
            cls.debug_print(f"Collected from CLI: {sources['cli']}")

        for key, value in kwargs.items():
            if "." in key:
                set_dotted(sources["kwargs"], key, value)
            else:
                sources["kwargs"][key] = value
        if sources["kwargs"]:
            cls._check_keys(sources["kwargs"], cls.DEFAULT_CONFIG, "", None, None)

        return sources

    @classmethod
    def _apply_configurations(cls, sources: Dict[str, Dict[str, Any]]) -> None:
        config = sources["defaults"]
        for name in ("env", "file", "cli", "kwargs"):
            if sources[name]:
                cls.debug_print(f"Applying {name}: {sources[name]}")
                _deep_merge(config, sources[name])
        cls._config = config
        cls.debug_print(f"Final configuration: {cls._config}")

    @classmethod
    def parse_override(cls, override: str) -> Tuple[str, Any]:
        """
        Split and type-convert one ``dotted.path=value`` override.

        Raises:
            ConfigurationError: Missing ``=`` or unknown path
        """
        if "=" not in override:
            raise ConfigurationError(f"override '{override}' is not of the form key=value", path="--set")
        path, raw = override.split("=", 1)
        path = path.strip()
        if not _is_free_form(path) and get_dotted(cls.DEFAULT_CONFIG, path, _MISSING) is _MISSING:
            raise ConfigurationError("unknown configuration key", path=path)
        return path, convert_value(raw, get_dotted(cls.DEFAULT_CONFIG, path), path)

    @classmethod
    def _load_raw_file_config(cls, config_path: str) -> Tuple[str, Dict[str, Any]]:
        if not os.path.exists(config_path):
            raise ConfigurationError("configuration file not found", path=config_path)
        try:
            with open(config_path, mode="r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read configuration file: {exc}", path=config_path) from exc

        if config_path.endswith((".yaml", ".yml")):
            try:
                import yaml  # pylint: disable=import-outside-toplevel
            except ImportError:
                raise ConfigurationError(
                    "YAML configuration requires PyYAML. Install with: pip install etlsched[yaml]", path=config_path
                ) from None
            try:
                data = yaml.safe_load(text)
            except yaml.YAMLError as exc:
                mark = getattr(exc, "problem_mark", None)
                line = mark.line + 1 if mark is not None else None
                col = f", column {mark.column + 1}" if mark is not None else ""
                raise ConfigurationError(f"invalid YAML{col}: {exc}", path=config_path, line=line) from exc
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(
                    f"invalid JSON, column {exc.colno}: {exc.msg}", path=config_path, line=exc.lineno
                ) from exc

        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError("top level must be a mapping", path=config_path, line=1)
        schema = data.get("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigurationError(
                f"unsupported schema '{schema}', expected '{SCHEMA}'",
                path=config_path,
                line=_find_key_line(text, "schema"),
            )
        return text, data

    @classmethod
    def load_from_env(cls) -> Dict[str, Any]:
        """Collect and convert the ``ETLSCHED_*`` environment variables."""
        env_config: Dict[str, Any] = {}
        for env_var, path in cls.ENV_VARS.items():
            if env_var not in os.environ:
                continue
            raw = os.environ[env_var]
            value = convert_value(raw, get_dotted(cls.DEFAULT_CONFIG, path), env_var)
            if env_var == "ETLSCHED_NO_COLOR":
                value = not value
            set_dotted(env_config, path, value)
        if env_config:
            cls.debug_print(f"Collected from environment: {env_config}")
        return env_config

    @classmethod
    def locate(
        cls, error: ConfigurationError, config_file: Optional[str], overrides: Sequence[str] = ()
    ) -> ConfigurationError:
        """
        Point a dotted-path error at the line of ``config_file`` that sets the key.

        Range checks run after loading and only know the dotted path. When the
        key is written in the file and no override replaced it, the returned
        error names the file and line; otherwise ``error`` comes back unchanged.
        """
        path = error.path
        if not config_file or not path or error.line is not None:
            return error
        if any(o.split("=", 1)[0].strip() == path for o in overrides):
            return error
        try:
            text, data = cls._load_raw_file_config(config_file)
        except ConfigurationError:
            return error
        if get_dotted(data, path, _MISSING) is _MISSING:
            return error
        line = _find_key_line(text, path)
        if line is None:
            return error
        return ConfigurationError(error.message, path=f"{config_file}: {path}", line=line)

    @classmethod
    def load_from_file(cls, config_path: str) -> Dict[str, Any]:
        """Read a run-config file and check its keys, without merging."""
        text, data = cls._load_raw_file_config(config_path)
        cls._check_keys(data, cls.DEFAULT_CONFIG, "", text, config_path)
        return data

    @classmethod
    def _check_keys(
        cls,
        source: Mapping[str, Any],
        defaults: Mapping[str, Any],
        prefix: str,
        text: Optional[str],
        file_path: Optional[str],
    ) -> None:
        for key, value in source.items():
            path = f"{prefix}.{key}" if prefix else str(key)
            if _is_free_form(path):
                continue
            if key not in defaults:
                line = _find_key_line(text, path) if text else None
                raise ConfigurationError(
                    f"unknown configuration key '{path}'", path=file_path or path, line=line
                )
            if isinstance(defaults[key], dict):
                if not isinstance(value, Mapping):
                    line = _find_key_line(text, path) if text else None
                    raise ConfigurationError(f"'{path}' must be a mapping", path=file_path or path, line=line)
                cls._check_keys(value, defaults[key], path, text, file_path)

    @classmethod
    def _validate(cls, config: Mapping[str, Any], text: Optional[str], file_path: Optional[str]) -> None:
        """Type-check every leaf against the default at the same path."""
        for path, value in _flatten(config):
            default = get_dotted(cls.DEFAULT_CONFIG, path, _MISSING)
            if default is _MISSING or default is None or _is_free_form(path):
                continue
            if not _same_kind(value, default):
                line = _find_key_line(text, path) if text else None
                where = f"{file_path}: {path}" if file_path else path
                raise ConfigurationError(
                    f"expected {type(default).__name__}, got {type(value).__name__} ({value!r})", path=where, line=line
                )

    @classmethod
    def get_config(cls) -> Dict[str, Any]:
        if not cls._initialized:
            cls.initialize()
        return cls._config

    @classmethod
    def get(cls, key: str, default: Any = None) -> Any:
        """
        Get a configuration value by dotted path.

        Example:
            ```python
            level = SchedConfig.get("logging.level", "INFO")
            ```
        """
        if not cls._initialized:
            cls.initialize()
        value = get_dotted(cls._config, key, _MISSING)
        if value is _MISSING:
            value = get_dotted(cls.DEFAULT_CONFIG, key, default)
        return value

    @classmethod
    def set(cls, key: str, value: Any) -> None:
        """
        Set a configuration value by dotted path.

        Example:
            >>> SchedConfig.set("logging.module_levels.etlsched.cluster", "DEBUG")
        """
        if not cls._initialized:
            cls.initialize()
        if key.startswith("logging.module_levels."):
            cls._config["logging"]["module_levels"][key[len("logging.module_levels.") :]] = value
        else:
            set_dotted(cls._config, key, value)

    @classmethod
    def map_level(cls, level: Any) -> int:
        """Map a level name (case-insensitive) or number to a :mod:`logging` level; unknown names map to INFO."""
        import logging  # pylint: disable=import-outside-toplevel

        if isinstance(level, int):
            return level
        return {
            "DEBUG": logging.DEBUG,
            "INFO": logging.INFO,
            "WARNING": logging.WARNING,
            "WARN": logging.WARNING,
            "ERROR": logging.ERROR,
            "CRITICAL": logging.CRITICAL,
        }.get(str(level).upper(), logging.INFO)

    @classmethod
    def get_level(cls, name: Optional[str] = None, explicit: Optional[Any] = None) -> int:
        """
        Numeric level for logger ``name``.

        Priority: ``explicit`` argument, then ``logging.module_levels`` (the
        longest matching dotted prefix wins), then ``logging.level``.
        """
        if explicit is not None:
            return cls.map_level(explicit)
        if name:
            module_levels = cls.get("logging.module_levels", {}) or {}
            candidates = [m for m in module_levels if name == m or name.startswith(m + ".")]
            if candidates:
                return cls.map_level(module_levels[max(candidates, key=len)])
        return cls.map_level(cls.get("logging.level", "INFO"))

    @classmethod
    def is_initialized(cls) -> bool:
        return cls._initialized

    @classmethod
    def reset(cls) -> Type["SchedConfig"]:
        """
        Restore defaults and forget the initialized state.

        Returns:
            The class, for chaining
        """
        cls._config = copy.deepcopy(cls.DEFAULT_CONFIG)
        cls._initialized = False
        cls.debug_print("SchedConfig reset to default values")
        return cls

    @classmethod
    def get_filename_prefix(cls) -> str:
        return str(cls.get("logging.log_filename", "etlsched"))


class _Missing:
    def __repr__(self) -> str:
        return "<missing>"


_MISSING: Any = _Missing()


def _same_kind(value: Any, default: Any) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, (list, tuple)):
        return isinstance(value, (list, tuple))
    return isinstance(value, type(default))


def load_run_config(
    config_file: Optional[str] = None, overrides: Optional[Sequence[str]] = None, **kwargs: Any
) -> Dict[str, Any]:
    """
    Load a run configuration and return a private copy of it.

    Convenience wrapper around :meth:`SchedConfig.initialize`.
    """
    return copy.deepcopy(SchedConfig.initialize(config_file=config_file, overrides=overrides, **kwargs))
