import numpy as np
import pytest
from matplotlib.image import imread

from ir2vis.plotting import GUTTER, compose_montage, plot_report, plot_train_log, save_labeled_montage, save_montage
from ir2vis.reporting import MetricsReport
from ir2vis.training import TrainLog, score_predictions
from ir2vis.imagery import synth_dataset


def _img(v, size=8):
    return np.full((1, 3, size, size), v, np.float32)


def test_montage_geometry_and_placement():
    rows = [[_img(0.0), _img(0.5), _img(1.0)], [_img(0.25), None, _img(0.75)]]
    grid = compose_montage(rows)
    assert grid.shape == (2 * 8 + GUTTER, 3 * 8 + 2 * GUTTER, 3)
    assert np.all(grid[:8, 8 + GUTTER:16 + GUTTER] == 0.5)
    assert np.all(grid[8 + GUTTER:, 8 + GUTTER:16 + GUTTER] == 1.0)  # None panel stays background
    assert np.all(grid[:8, 8:8 + GUTTER] == 1.0)


def test_montage_rejects_mixed_sizes_and_empty():
    with pytest.raises(ValueError):
        compose_montage([[_img(0, 8), _img(0, 9)]])
    with pytest.raises(ValueError):
        compose_montage([[None]])


def test_saved_montage_is_pixel_exact(tmp_path):
    r = np.random.default_rng(0)
    a = np.round(r.uniform(0, 1, (1, 3, 6, 6)) * 255) / 255
    path = save_montage(tmp_path / "m.png", [[a, a]])
    back = imread(path)[..., :3]
    assert back.shape == (6, 12 + GUTTER, 3)
    np.testing.assert_allclose(back[:, :6], a[0].transpose(1, 2, 0), atol=1 / 255)


def test_figures_are_written(tmp_path):
    pairs = synth_dataset(2, 16, seed=0)
    report = MetricsReport({"copy": score_predictions(pairs, [p.visible for p in pairs])})
    assert plot_report(report, tmp_path / "r.png").stat().st_size > 0
    log = TrainLog()
    for i in range(4):
        log.step("D", d_loss=1.0 / (i + 1))
        log.step("G", g_total=2.0 / (i + 1))
    assert plot_train_log(log, tmp_path / "t.png").stat().st_size > 0
    assert plot_train_log(TrainLog(), tmp_path / "empty.png").exists()
    out = save_labeled_montage(tmp_path / "l.png", [[_img(0.1), _img(0.9)]], ["IR input", "Ground truth"], ["a"])
    assert imread(out).ndim == 3
