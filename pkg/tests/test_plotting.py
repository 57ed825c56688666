from pathlib import Path

import matplotlib
import pytest

from fhe_alloc.errors import ConfigError
from fhe_alloc.plotting import render_plots
from fhe_alloc.sweep import COLUMNS

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN_MATPLOTLIB = "3.10.9"  # the golden files were frozen with this version


def test_render_writes_one_chart_per_metric(tmp_path):
    paths = render_plots(FIXTURES / "sweep_small.csv", tmp_path)
    assert sorted(p.name for p in paths) == sorted(p.name for p in (FIXTURES / "golden").iterdir())
    for p in paths:
        text = p.read_text()
        assert text.startswith("<?xml") and "<svg" in text
        assert "<dc:date>" not in text


def test_output_is_deterministic(tmp_path):
    a = render_plots(FIXTURES / "sweep_small.csv", tmp_path / "a")
    b = render_plots(FIXTURES / "sweep_small.csv", tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


@pytest.mark.skipif(matplotlib.__version__ != GOLDEN_MATPLOTLIB,
                    reason="golden SVGs depend on the matplotlib version")
def test_matches_golden(tmp_path):
    for p in render_plots(FIXTURES / "sweep_small.csv", tmp_path):
        assert p.read_bytes() == (FIXTURES / "golden" / p.name).read_bytes(), p.name


def test_empty_csv_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(COLUMNS) + "\r\n")
    with pytest.raises(ConfigError):
        render_plots(path, tmp_path)
