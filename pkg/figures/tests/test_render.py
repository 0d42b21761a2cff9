"""Unit tests for CSV loading, validation and rendering."""

import pytest

from gfra_figures.cli import main
from gfra_figures.render import FigureError, FigureSpec, extract_series, render

HEADER = ("snr_db,l_p,m,p_a,sigma_tau,n_it,algorithm,aer,ce_mse,ce_mse_db,"
          "trials,errors,wall_time_s")

ROWS = [
    "6.0,20,8,0.1,0.0,80,pudmp,0.02,0.001,-30.0,200,0,0.0",
    "6.0,20,8,0.1,0.0,80,ga_mmse,0.0,0.0008,-30.97,200,0,0.0",
    "10.0,20,8,0.1,0.0,80,pudmp,0.01,0.0004,-33.98,200,0,0.0",
    "10.0,20,8,0.1,0.0,80,ga_mmse,0.0,0.0003,-35.23,200,0,0.0",
    "14.0,20,8,0.1,0.0,80,pudmp,0.001,0.0002,-36.99,200,0,0.0",
    "14.0,20,8,0.1,0.0,80,ga_mmse,0.0,0.00015,-38.24,200,0,0.0",
]


@pytest.fixture
def sample_csv(tmp_path):
    path = tmp_path / "rows.csv"
    path.write_text(HEADER + "\n" + "\n".join(ROWS) + "\n", encoding="utf-8")
    return path


def make_spec(sample_csv, tmp_path, **kwargs):
    base = dict(csv_path=str(sample_csv), x_axis="snr_db", y_metric="aer",
                series_by="algorithm", output_path=str(tmp_path / "fig.png"))
    base.update(kwargs)
    return FigureSpec(**base)


class TestExtractSeries:
    def test_groups_by_series_and_sorts_by_x(self, sample_csv, tmp_path):
        series = extract_series(make_spec(sample_csv, tmp_path))
        assert sorted(series) == ["ga_mmse", "pudmp"]
        xs, ys = series["pudmp"]
        assert xs == [6.0, 10.0, 14.0]
        assert ys == [0.02, 0.01, 0.001]

    def test_series_by_second_axis(self, sample_csv, tmp_path):
        series = extract_series(make_spec(sample_csv, tmp_path,
                                          x_axis="snr_db", series_by="l_p"))
        assert list(series) == ["20"]
        assert len(series["20"][0]) == len(ROWS)

    def test_missing_column_lists_available(self, sample_csv, tmp_path):
        with pytest.raises(FigureError, match="available columns"):
            extract_series(make_spec(sample_csv, tmp_path, x_axis="bogus"))

    def test_unsupported_metric_rejected(self, sample_csv, tmp_path):
        with pytest.raises(FigureError, match="unsupported metric"):
            extract_series(make_spec(sample_csv, tmp_path, y_metric="ce_mse"))

    def test_header_only_csv_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text(HEADER + "\n", encoding="utf-8")
        with pytest.raises(FigureError, match="no data rows"):
            extract_series(make_spec(path, tmp_path))

    def test_non_numeric_cell_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(HEADER + "\n"
                        + "oops,20,8,0.1,0.0,80,pudmp,0.1,0.1,-10,1,0,0\n",
                        encoding="utf-8")
        with pytest.raises(FigureError, match="non-numeric"):
            extract_series(make_spec(path, tmp_path))


class TestRender:
    def test_writes_image(self, sample_csv, tmp_path):
        spec = make_spec(sample_csv, tmp_path)
        result = render(spec)
        assert (tmp_path / "fig.png").exists()
        assert len(result.series) == 2

    def test_no_file_written_on_failure(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text(HEADER + "\n", encoding="utf-8")
        out = tmp_path / "fig.png"
        with pytest.raises(FigureError):
            render(make_spec(path, tmp_path, output_path=str(out)))
        assert not out.exists()

    def test_deterministic_data_arrays(self, sample_csv, tmp_path):
        spec = make_spec(sample_csv, tmp_path, y_metric="ce_mse_db",
                         log_y=False)
        a = render(spec)
        b = render(spec)
        assert a.series == b.series

    def test_log_scale_and_markdown(self, sample_csv, tmp_path):
        md = tmp_path / "report.md"
        spec = make_spec(sample_csv, tmp_path, log_y=True,
                         markdown_path=str(md))
        render(spec)
        text = md.read_text(encoding="utf-8")
        assert text.startswith("## AER vs snr_db")
        assert "fig.png" in text
        assert "| 6 |" in text

    def test_infinite_metric_values_survive_parsing(self, tmp_path):
        path = tmp_path / "inf.csv"
        path.write_text(HEADER + "\n"
                        + "10.0,20,8,0.0,0.0,80,ga_mmse,0.0,0.0,-inf,5,0,0\n"
                        + "14.0,20,8,0.0,0.0,80,ga_mmse,0.0,0.0,-inf,5,0,0\n",
                        encoding="utf-8")
        result = render(make_spec(path, tmp_path, y_metric="ce_mse_db"))
        assert result.series["ga_mmse"][1] == [float("-inf")] * 2
        assert (tmp_path / "fig.png").exists()


class TestCli:
    def test_end_to_end(self, sample_csv, tmp_path, capsys):
        out = tmp_path / "cli.png"
        code = main(["--csv", str(sample_csv), "--x", "snr_db", "--y", "aer",
                     "--series", "algorithm", "--logy", "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert "2 series" in capsys.readouterr().out

    def test_failure_exit_code(self, tmp_path, capsys):
        path = tmp_path / "empty.csv"
        path.write_text(HEADER + "\n", encoding="utf-8")
        code = main(["--csv", str(path), "--x", "snr_db", "--y", "aer",
                     "--series", "algorithm", "--out",
                     str(tmp_path / "x.png")])
        assert code == 1
        assert "no data rows" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["--csv", "x.csv"])
        assert exc.value.code == 2
