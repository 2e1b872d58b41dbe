"""Figure rendering: files exist, are PNG, and render deterministically."""

import math

import numpy as np

from hemodesign import figures
from hemodesign.model import Dataset, MouseRecord

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _dataset(grouped=False):
    records = [
        MouseRecord("m0", 0.0, math.log(650.0), math.log(2000.0)),
        MouseRecord("m1", 2.0, math.log(420.0), math.log(1450.0),
                    group="perturbed" if grouped else ""),
        MouseRecord("m2", 6.0, math.log(310.0), math.log(820.0)),
    ]
    return Dataset(records=tuple(records))


def test_dataset_figure_renders_png_deterministically(tmp_path):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    figures.save_dataset_figure(_dataset(grouped=True), a)
    figures.save_dataset_figure(_dataset(grouped=True), b)
    payload = a.read_bytes()
    assert payload.startswith(_PNG_MAGIC)
    assert payload == b.read_bytes()


def test_band_figure_renders(tmp_path):
    times = np.linspace(0.0, 6.0, 13)
    median = 650.0 * np.exp(-0.3 * times)
    band_hsc = np.stack([0.8 * median, median, 1.25 * median], axis=-1)
    band_mpp = 3.0 * band_hsc
    bands = {"": np.stack([band_hsc, band_mpp], axis=1)}
    path = tmp_path / "bands.png"
    figures.save_band_figure(times, bands, _dataset(), path)
    assert path.read_bytes().startswith(_PNG_MAGIC)


def test_heatmap_figure_handles_nan_cells(tmp_path):
    matrix = np.array([[1.0, 1.4, float("nan")], [2.0, float("nan"), 3.1]])
    path = tmp_path / "heat.png"
    figures.save_heatmap_figure(
        ["{0,6}", "{0,2,6}"], ["3", "4", "5"], matrix, path, "fold change"
    )
    assert path.read_bytes().startswith(_PNG_MAGIC)


def test_empty_dataset_figure_renders(tmp_path):
    path = tmp_path / "empty.png"
    figures.save_dataset_figure(Dataset(records=()), path)
    assert path.read_bytes().startswith(_PNG_MAGIC)
