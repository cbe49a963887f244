import re
import shutil
from pathlib import Path

import numpy as np
import pytest

from factored_skills.plots import curve_stats, curves_svg, emit_plots

DATA = Path(__file__).parent / "data"


def _rows(series):
    return [{"method": m, "seed": str(s), "episode": str(e), "eval_return": str(v)}
            for m, s, e, v in series]


def _band_heights(svg):
    """Vertical extent of each band polygon, per x position."""
    pts = re.search(r'<polygon points="([^"]+)"', svg).group(1).split()
    xy = np.array([[float(v) for v in p.split(",")] for p in pts])
    half = len(xy) // 2
    upper, lower = xy[:half], xy[half:][::-1]
    return lower[:, 1] - upper[:, 1]


def test_single_seed_zero_width_band():
    stats = curve_stats(_rows([("a", 0, 0, 1.0), ("a", 0, 10, 3.0)]))
    assert stats["a"][2].tolist() == [0.0, 0.0]
    assert np.allclose(_band_heights(curves_svg(stats)), 0.0)


def test_constant_series_flat_line_and_exact_std():
    rows = _rows([("a", s, e, 5.0) for s in range(3) for e in (0, 10, 20)])
    eps, mean, std = curve_stats(rows)["a"]
    assert mean.tolist() == [5.0] * 3 and std.tolist() == [0.0] * 3
    line = re.search(r'<polyline points="([^"]+)"', curves_svg({"a": (eps, mean, std)})).group(1)
    assert len({p.split(",")[1] for p in line.split()}) == 1
    rows = _rows([("b", s, 0, v) for s, v in enumerate([1.0, 2.0, 6.0])])
    assert curve_stats(rows)["b"][2][0] == pytest.approx(np.std([1.0, 2.0, 6.0], ddof=1), abs=1e-15)


def test_golden_svgs(tmp_path):
    shutil.copy(DATA / "tiny_curves.csv", tmp_path / "curves.csv")
    shutil.copy(DATA / "tiny_dci.csv", tmp_path / "dci.csv")
    written = emit_plots(tmp_path)
    assert sorted(p.name for p in written) == ["curves.svg", "curves_term_0.svg", "dci.svg"]
    for p in written:
        assert p.read_bytes() == (DATA / f"golden_{p.name}").read_bytes(), p.name


def test_missing_csv_names_file(tmp_path):
    shutil.copy(DATA / "tiny_dci.csv", tmp_path / "dci.csv")
    with pytest.raises(FileNotFoundError, match="curves.csv"):
        emit_plots(tmp_path)
    shutil.copy(DATA / "tiny_curves.csv", tmp_path / "curves.csv")
    (tmp_path / "dci.csv").unlink()
    with pytest.raises(FileNotFoundError, match="dci.csv"):
        emit_plots(tmp_path)
