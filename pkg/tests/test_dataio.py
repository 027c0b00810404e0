import numpy as np
import pytest

from fieldyield.data import Season
from fieldyield.dataio import RunConfig, load_field_csv, load_run_config, write_field_csv
from fieldyield.errors import DataValidationError
from fieldyield.synth import synth_field

MINI_HEADER = (
    "task,region,row,col,yield,soil_elev,soil_slope,soil_curv,soil_eca,"
    "band1,band2,band3,band4,"
    + ",".join(f"ndvi_{i:02d}" for i in range(1, 12))
    + ","
    + ",".join(f"temp_{i:02d}" for i in range(1, 12))
    + ","
    + ",".join(f"rain_{i:02d}" for i in range(1, 12))
)


def mini_row(task=2001, region=0, row=0, col=0, yield_="850.5"):
    feats = ["1.0", "2.0", "3.0", "4.0"] + ["0.1", "0.2", "0.3", "0.4"]
    feats += [f"0.{i + 10}" for i in range(11)]  # ndvi
    feats += ["25.0"] * 11 + ["1.5"] * 11
    return ",".join([str(task), str(region), str(row), str(col), yield_] + feats)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoader:
    def test_minimal_file(self, tmp_path):
        f = tmp_path / "mini.csv"
        write_lines(f, [MINI_HEADER, mini_row()])
        ds = load_field_csv(f)
        assert ds.tasks == (2001,)
        assert ds.grid.n_regions == 1
        assert ds.tables[2001].yields[0] == 850.5
        assert ds.soil_names == ("soil_elev", "soil_slope", "soil_curv", "soil_eca")

    def test_missing_yield_is_nan(self, tmp_path):
        f = tmp_path / "mini.csv"
        write_lines(f, [MINI_HEADER, mini_row(yield_="")])
        ds = load_field_csv(f)
        assert np.isnan(ds.tables[2001].yields[0])

    def test_duplicate_row_names_line(self, tmp_path):
        f = tmp_path / "dup.csv"
        write_lines(f, [MINI_HEADER, mini_row(), mini_row()])
        with pytest.raises(DataValidationError, match="line 3"):
            load_field_csv(f)

    def test_tasks_sorted_ascending(self, tmp_path):
        f = tmp_path / "multi.csv"
        write_lines(
            f,
            [
                MINI_HEADER,
                mini_row(task=2003),
                mini_row(task=2001),
                mini_row(task=2002),
            ],
        )
        ds = load_field_csv(f)
        assert ds.tasks == (2001, 2002, 2003)

    def test_missing_column_rejected(self, tmp_path):
        f = tmp_path / "bad.csv"
        header = MINI_HEADER.replace("yield,", "")
        row = mini_row().split(",")
        del row[4]
        write_lines(f, [header, ",".join(row)])
        with pytest.raises(DataValidationError, match="yield"):
            load_field_csv(f)

    def test_non_numeric_cell_names_line(self, tmp_path):
        f = tmp_path / "bad.csv"
        write_lines(f, [MINI_HEADER, mini_row(yield_="oops")])
        with pytest.raises(DataValidationError, match="line 2"):
            load_field_csv(f)

    def test_region_id_must_be_row_major(self, tmp_path):
        f = tmp_path / "bad.csv"
        write_lines(
            f,
            [
                MINI_HEADER,
                mini_row(region=1, row=0, col=0),
                mini_row(region=0, row=0, col=1),
            ],
        )
        with pytest.raises(DataValidationError, match="row-major"):
            load_field_csv(f)

    def test_conflicting_coordinates_rejected(self, tmp_path):
        f = tmp_path / "bad.csv"
        write_lines(
            f,
            [
                MINI_HEADER,
                mini_row(task=2001, region=0, row=0, col=0),
                mini_row(task=2002, region=0, row=1, col=1),
            ],
        )
        with pytest.raises(DataValidationError, match="previously"):
            load_field_csv(f)

    def test_inconsistent_weather_rejected(self, tmp_path):
        f = tmp_path / "bad.csv"
        row2 = mini_row(region=1, col=1).replace("25.0", "26.0")
        write_lines(f, [MINI_HEADER, mini_row(), row2])
        with pytest.raises(DataValidationError, match="weather"):
            load_field_csv(f)

    def test_window_count_must_match_season(self, tmp_path):
        f = tmp_path / "mini.csv"
        write_lines(f, [MINI_HEADER, mini_row()])
        with pytest.raises(DataValidationError, match="window"):
            load_field_csv(f, season=Season(start=(5, 1), end=(6, 30)))

    def test_roundtrip_value_identical(self, tmp_path):
        ds, _ = synth_field(5, 7, 3, seed=13)
        # punch a hole in the mask via a prediction-only yield
        ds.tables[ds.tasks[0]].yields[3] = np.nan
        f = tmp_path / "field.csv"
        write_field_csv(ds, f)
        back = load_field_csv(f)
        assert back.tasks == ds.tasks
        assert back.grid.rows == ds.grid.rows and back.grid.cols == ds.grid.cols
        for t in ds.tasks:
            a, b = ds.tables[t], back.tables[t]
            assert np.array_equal(a.regions, b.regions)
            for name in ("soil", "spectral", "ndvi", "temp", "rain"):
                assert np.array_equal(getattr(a, name), getattr(b, name)), name
            assert np.array_equal(a.yields, b.yields, equal_nan=True)
        f2 = tmp_path / "again.csv"
        write_field_csv(back, f2)
        assert f.read_bytes() == f2.read_bytes()


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.power == 2.0
        assert cfg.dropout == 0.2
        assert cfg.season().n_windows == 11

    def test_load_and_override(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text(
            "# sidecar\nradius = 2.5\nlam = 0.3\nhead_widths = 8,4\nseason_end = 08-31\n",
            encoding="utf-8",
        )
        cfg = load_run_config(f)
        assert cfg.radius == 2.5
        assert cfg.lam == 0.3
        assert cfg.head_widths == (8, 4)
        assert cfg.season().end == (8, 31)
        assert cfg.power == 2.0  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("nope = 1\n", encoding="utf-8")
        with pytest.raises(DataValidationError, match="unknown config key"):
            load_run_config(f)

    def test_bad_value_rejected(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("radius = fast\n", encoding="utf-8")
        with pytest.raises(DataValidationError, match="bad value"):
            load_run_config(f)

    def test_missing_equals_rejected(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("radius 3\n", encoding="utf-8")
        with pytest.raises(DataValidationError, match="key = value"):
            load_run_config(f)
