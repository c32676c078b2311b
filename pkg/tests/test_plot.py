"""Tests for the SVG sweep charts."""

import re

import pytest

from etlsched.errors import UsageError
from etlsched.plot import load_series, plot_sweep, render_svg

SUMMARY = """param,value,metric,mean,sd,n,failed
gamma,0.8,asd,3.1,0.2,3,0
gamma,0.85,asd,2.9,0.1,3,0
gamma,0.9,asd,2.5,0.1,3,0
gamma,0.93,asd,2.4,0.05,3,0
gamma,0.95,asd,2.45,0.1,3,0
gamma,0.97,asd,2.7,0.2,3,0
gamma,0.99,asd,3.0,0.3,3,0
"""

LONG_FORM = """param,value,seed,agent,metric,result,status
lr,0.001,1,dqn,avg_cum_reward,1.0,ok
lr,0.001,2,dqn,avg_cum_reward,3.0,ok
lr,0.0001,1,dqn,avg_cum_reward,2.0,ok
lr,0.0001,2,dqn,avg_cum_reward,,error
"""


def polyline_points(svg):
    match = re.search(r'<polyline points="([^"]*)"', svg)
    assert match is not None
    return match.group(1).split()


class TestLoadSeries:
    """Reading sweep CSVs."""

    def test_summary_csv(self, tmp_path):
        """Summary files are used as they are, sorted by value."""
        path = tmp_path / "sweep_gamma_summary.csv"
        path.write_text(SUMMARY)
        frame, param, metric = load_series(str(path))
        assert len(frame) == 7
        assert (param, metric) == ("gamma", "asd")

    def test_long_form_is_summarized(self, tmp_path):
        """Long-form rows are grouped per value and failed runs are dropped."""
        path = tmp_path / "sweep_lr.csv"
        path.write_text(LONG_FORM)
        frame, param, metric = load_series(str(path))
        assert frame["value"].tolist() == [0.0001, 0.001]
        assert frame["mean"].tolist() == pytest.approx([2.0, 2.0])
        assert frame["sd"].tolist()[0] == 0.0
        assert (param, metric) == ("lr", "avg_cum_reward")

    def test_missing_column(self, tmp_path):
        """A CSV without value or result columns is a usage error."""
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(UsageError, match="missing column 'value'"):
            load_series(str(path))
        path.write_text("value,other\n1,2\n")
        with pytest.raises(UsageError, match="missing column 'result'"):
            load_series(str(path))

    def test_header_only(self, tmp_path):
        """A CSV with no data rows is refused."""
        path = tmp_path / "empty.csv"
        path.write_text("param,value,metric,mean,sd,n,failed\n")
        with pytest.raises(UsageError, match="no data rows"):
            load_series(str(path))

    def test_missing_file(self, tmp_path):
        """A missing file is a usage error, not a traceback."""
        with pytest.raises(UsageError, match="no such file"):
            load_series(str(tmp_path / "absent.csv"))


class TestRender:
    """SVG output."""

    def test_one_polyline_with_one_vertex_per_value(self, tmp_path):
        """Seven grid values give a single seven-vertex polyline."""
        csv_path = tmp_path / "sweep_gamma_summary.csv"
        csv_path.write_text(SUMMARY)
        out = plot_sweep(str(csv_path), str(tmp_path / "gamma.svg"))
        svg = (tmp_path / "gamma.svg").read_text()
        assert out.endswith("gamma.svg")
        assert svg.count("<polyline") == 1
        assert len(polyline_points(svg)) == 7
        assert "discount factor" in svg
        assert svg.startswith("<svg") and svg.endswith("</svg>\n")

    def test_identical_input_gives_identical_bytes(self, tmp_path):
        """Rendering is deterministic."""
        csv_path = tmp_path / "s.csv"
        csv_path.write_text(SUMMARY)
        plot_sweep(str(csv_path), str(tmp_path / "a.svg"))
        plot_sweep(str(csv_path), str(tmp_path / "b.svg"))
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_points_stay_inside_the_canvas(self):
        """Every vertex lies within the 640 x 400 drawing."""
        svg = render_svg([1, 2, 3], [5.0, -1.0, 2.0], [0.5, 0.5, 0.0], "x", "y")
        for point in polyline_points(svg):
            x, y = (float(v) for v in point.split(","))
            assert 0 <= x <= 640 and 0 <= y <= 400

    def test_log_axis_for_learning_rates(self, tmp_path):
        """Learning-rate sweeps use a log x-axis with exponent tick labels."""
        csv_path = tmp_path / "sweep_lr.csv"
        csv_path.write_text(LONG_FORM)
        plot_sweep(str(csv_path), str(tmp_path / "lr.svg"))
        svg = (tmp_path / "lr.svg").read_text()
        assert "1e-04" in svg and "1e-03" in svg
        with pytest.raises(UsageError):
            render_svg([0.0, 1.0], [1.0, 2.0], [0.0, 0.0], "x", "y", log_x=True)

    def test_single_point(self):
        """A one-value sweep still renders."""
        svg = render_svg([8], [2.0], [0.0], "nodes", "asd")
        assert len(polyline_points(svg)) == 1

    def test_unknown_kind(self, tmp_path):
        """Only the documented plot kinds are accepted."""
        csv_path = tmp_path / "s.csv"
        csv_path.write_text(SUMMARY)
        with pytest.raises(UsageError, match="unknown plot kind"):
            plot_sweep(str(csv_path), str(tmp_path / "x.svg"), kind="batch")
