"""
Tests for the SchedConfig run configuration.

Covers the priority order between sources (defaults, environment variables,
configuration files, command-line overrides and keyword arguments), type
conversion of string values and the error reporting for bad files.
"""

import json
import os

import pytest

from etlsched.config import SchedConfig, convert_value, get_dotted, load_run_config, set_dotted
from etlsched.errors import ConfigurationError


def write_json(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return str(path)


class TestSchedConfig:
    """
    Test suite for the SchedConfig class.

    Tests the following functionality:
    - Priority order between sources
    - Type conversion of environment and CLI strings
    - Unknown keys and bad values with file and line
    - Module-specific log levels
    """

    def test_defaults_only(self):
        """Without any source the built-in defaults are active."""
        config = SchedConfig.initialize()
        assert config["schema"] == "runcfg-v1"
        assert SchedConfig.get("agent.gamma") == 0.93
        assert SchedConfig.get("cluster.n_nodes") == 8
        assert SchedConfig.get("logging.file_logging") is False

    def test_priority_order_with_all_sources(self, tmp_path, monkeypatch):
        """Keyword arguments beat CLI overrides, which beat the file, which beats the environment."""
        monkeypatch.setenv("ETLSCHED_JOBS", "2")
        monkeypatch.setenv("ETLSCHED_LOG_LEVEL", "WARNING")
        monkeypatch.setenv("ETLSCHED_OUTPUT_ROOT", "env_runs")
        path = write_json(tmp_path, {"run": {"jobs": 3, "episodes": 7}, "logging": {"level": "ERROR"}})

        SchedConfig.initialize(config_file=path, overrides=["run.jobs=4", "run.episodes=8"], **{"run.jobs": 5})

        assert SchedConfig.get("run.jobs") == 5
        assert SchedConfig.get("run.episodes") == 8
        assert SchedConfig.get("logging.level") == "ERROR"
        assert SchedConfig.get("run.output_dir") == "env_runs"

    def test_file_does_not_overwrite_unset_keys(self, tmp_path):
        """A partial file only replaces the keys it names."""
        path = write_json(tmp_path, {"agent": {"lr": 0.001}})
        SchedConfig.initialize(config_file=path)
        assert SchedConfig.get("agent.lr") == 0.001
        assert SchedConfig.get("agent.gamma") == 0.93
        assert SchedConfig.get("agent.hidden") == [64, 32]

    def test_override_type_conversion(self):
        """CLI strings take the type of the default at the same path."""
        config = SchedConfig.initialize(
            overrides=["agent.lr=1e-3", "agent.double_dqn=yes", "agent.hidden=32,16", "run.seeds=[1, 2, 3]"]
        )
        assert config["agent"]["lr"] == pytest.approx(1e-3)
        assert config["agent"]["double_dqn"] is True
        assert config["agent"]["hidden"] == [32, 16]
        assert config["run"]["seeds"] == [1, 2, 3]

    def test_nullable_defaults_accept_numbers(self):
        """Keys defaulting to None parse JSON values."""
        config = SchedConfig.initialize(overrides=["env.t_max=12.5", "env.horizon=null"])
        assert config["env"]["t_max"] == 12.5
        assert config["env"]["horizon"] is None

    def test_no_color_is_inverted(self, monkeypatch):
        """ETLSCHED_NO_COLOR=1 turns colored console output off."""
        monkeypatch.setenv("ETLSCHED_NO_COLOR", "1")
        SchedConfig.initialize()
        assert SchedConfig.get("logging.colored_console") is False

    def test_bad_env_value(self, monkeypatch):
        """Unconvertible environment values name the variable."""
        monkeypatch.setenv("ETLSCHED_JOBS", "many")
        with pytest.raises(ConfigurationError, match="ETLSCHED_JOBS"):
            SchedConfig.initialize()

    def test_unknown_override_key(self):
        """Overrides must target a known key."""
        with pytest.raises(ConfigurationError) as excinfo:
            SchedConfig.initialize(overrides=["agent.momentum=0.9"])
        assert excinfo.value.path == "agent.momentum"

    def test_override_without_equals(self):
        """Overrides are key=value pairs."""
        with pytest.raises(ConfigurationError, match="key=value"):
            SchedConfig.parse_override("agent.lr")

    def test_unknown_file_key_reports_line(self, tmp_path):
        """Unknown keys in a file are reported with file and line."""
        path = write_json(tmp_path, {"agent": {"gamma": 0.9, "momentum": 0.5}})
        with pytest.raises(ConfigurationError) as excinfo:
            SchedConfig.initialize(config_file=path)
        assert excinfo.value.path == path
        assert excinfo.value.line == 4
        assert "agent.momentum" in str(excinfo.value)

    def test_wrong_type_in_file(self, tmp_path):
        """A string where a number belongs is a configuration error with its line."""
        path = write_json(tmp_path, {"run": {"episodes": "many"}})
        with pytest.raises(ConfigurationError) as excinfo:
            SchedConfig.initialize(config_file=path)
        assert excinfo.value.line == 3
        assert "run.episodes" in str(excinfo.value)

    def test_invalid_json_reports_line(self, tmp_path):
        """JSON syntax errors carry the line number of the parser."""
        path = tmp_path / "broken.json"
        path.write_text('{\n  "run": {\n    "episodes": ,\n  }\n}\n')
        with pytest.raises(ConfigurationError) as excinfo:
            SchedConfig.initialize(config_file=str(path))
        assert excinfo.value.line == 3

    def test_locate_attaches_file_and_line(self, tmp_path):
        """A range error on a key written in the file gets that file's line."""
        path = write_json(tmp_path, {"run": {"episodes": 2}, "agent": {"gamma": 1.5}})
        error = SchedConfig.locate(ConfigurationError("1.5 outside (0, 1)", path="agent.gamma"), path)
        assert error.line == 6
        assert error.message == "1.5 outside (0, 1)"
        assert str(error) == f"{path}: agent.gamma (line 6): 1.5 outside (0, 1)"

    def test_locate_leaves_other_errors_alone(self, tmp_path):
        """Keys set by an override, absent from the file, or already located stay unchanged."""
        path = write_json(tmp_path, {"agent": {"gamma": 0.9}})
        error = ConfigurationError("1.5 outside (0, 1)", path="agent.gamma")
        assert SchedConfig.locate(error, path, ["agent.gamma=1.5"]) is error
        assert SchedConfig.locate(error, None) is error
        absent = ConfigurationError("must be >= 1", path="run.episodes")
        assert SchedConfig.locate(absent, path) is absent
        located = ConfigurationError("bad", path=path, line=2)
        assert SchedConfig.locate(located, path) is located

    def test_locate_in_yaml(self, tmp_path):
        """YAML files are located the same way."""
        pytest.importorskip("yaml")
        path = tmp_path / "run.yaml"
        path.write_text("agent:\n  gamma: 0.95\ncluster:\n  coord_base: -1.0\n")
        error = SchedConfig.locate(ConfigurationError("must be >= 0", path="cluster.coord_base"), str(path))
        assert error.line == 4

    def test_missing_file(self, tmp_path):
        """A missing file is reported with its path."""
        missing = str(tmp_path / "nope.json")
        with pytest.raises(ConfigurationError, match="not found"):
            SchedConfig.initialize(config_file=missing)

    def test_wrong_schema(self, tmp_path):
        """Only runcfg-v1 files are accepted."""
        path = write_json(tmp_path, {"schema": "runcfg-v0"})
        with pytest.raises(ConfigurationError, match="runcfg-v1"):
            SchedConfig.initialize(config_file=path)

    def test_yaml_file(self, tmp_path):
        """YAML configs load the same keys as JSON."""
        pytest.importorskip("yaml")
        path = tmp_path / "run.yaml"
        path.write_text("agent:\n  gamma: 0.95\n  double_dqn: true\ncluster:\n  n_nodes: 4\n")
        SchedConfig.initialize(config_file=str(path))
        assert SchedConfig.get("agent.gamma") == 0.95
        assert SchedConfig.get("agent.double_dqn") is True
        assert SchedConfig.get("cluster.n_nodes") == 4

    def test_example_configs_are_valid(self):
        """The shipped example configuration loads cleanly."""
        root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        config = load_run_config(os.path.join(root, "example", "default.json"))
        assert config["schema"] == "runcfg-v1"

    def test_load_run_config_returns_a_copy(self):
        """Mutating the returned dictionary does not touch the active configuration."""
        config = load_run_config()
        config["agent"]["gamma"] = 0.1
        assert SchedConfig.get("agent.gamma") == 0.93

    def test_reset_restores_defaults(self):
        """reset() forgets earlier overrides."""
        SchedConfig.initialize(overrides=["run.episodes=3"])
        SchedConfig.reset()
        assert not SchedConfig.is_initialized()
        assert SchedConfig.get("run.episodes") == 300


class TestLevels:
    """Level lookup for loggers."""

    def test_map_level(self):
        """Names are case-insensitive and unknown names fall back to INFO."""
        assert SchedConfig.map_level("debug") == 10
        assert SchedConfig.map_level("WARN") == 30
        assert SchedConfig.map_level("verbose") == 20
        assert SchedConfig.map_level(40) == 40

    def test_module_levels_longest_prefix(self):
        """The most specific module entry wins over the global level."""
        SchedConfig.initialize(
            **{"logging.module_levels": {"etlsched": "WARNING", "etlsched.cluster": "DEBUG"}, "logging.level": "ERROR"}
        )
        assert SchedConfig.get_level("etlsched.cluster") == 10
        assert SchedConfig.get_level("etlsched.cluster.events") == 10
        assert SchedConfig.get_level("etlsched.env") == 30
        assert SchedConfig.get_level("other") == 40
        assert SchedConfig.get_level("etlsched.env", explicit="CRITICAL") == 50

    def test_set_module_level(self):
        """Dotted module names are kept whole under module_levels."""
        SchedConfig.set("logging.module_levels.etlsched.agents", "DEBUG")
        assert SchedConfig.get("logging.module_levels") == {"etlsched.agents": "DEBUG"}


class TestHelpers:
    """Dotted access and conversion helpers."""

    def test_dotted_access(self):
        """set_dotted creates intermediate levels and get_dotted reads them back."""
        data = {}
        set_dotted(data, "a.b.c", 1)
        assert data == {"a": {"b": {"c": 1}}}
        assert get_dotted(data, "a.b.c") == 1
        assert get_dotted(data, "a.x", "fallback") == "fallback"

    @pytest.mark.parametrize(
        "raw, default, expected",
        [
            ("true", False, True),
            ("off", True, False),
            ("12", 0, 12),
            ("3.0", 0, 3),
            ("2.5", 0.0, 2.5),
            ("a,b", ["x"], ["a", "b"]),
            ('{"k": 1}', {}, {"k": 1}),
        ],
    )
    def test_convert_value(self, raw, default, expected):
        """Strings convert by the type of the default."""
        assert convert_value(raw, default) == expected

    def test_convert_value_errors(self):
        """Unconvertible strings raise ConfigurationError."""
        with pytest.raises(ConfigurationError):
            convert_value("maybe", False)
        with pytest.raises(ConfigurationError):
            convert_value("2.5", 0)
