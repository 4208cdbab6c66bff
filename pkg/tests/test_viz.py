import numpy as np
import pytest
from PIL import Image

from vidboot.errors import ContractError
from vidboot.losses import VOID
from vidboot.networks import init_params
from vidboot.viz import (
    MISSING_COLOR,
    VOID_COLOR,
    colorize_depth,
    colorize_labels,
    palette,
    plot_benchmark,
    plot_training_log,
    render_frame_panels,
    save_png,
    three_panel,
)


@pytest.mark.parametrize("C", [2, 6, 10, 19, 40])
def test_palette_colors_are_distinct(C):
    pal = palette(C)
    colors = {tuple(c) for c in pal}
    assert pal.shape == (C, 3) and len(colors) == C
    assert VOID_COLOR not in colors and MISSING_COLOR not in colors


def test_colorize_labels_maps_void_to_black():
    labels = np.array([[0, 1], [VOID, 2]])
    out = colorize_labels(labels, 3)
    assert tuple(out[1, 0]) == VOID_COLOR
    np.testing.assert_array_equal(out[0, 1], palette(3)[1])


def test_colorize_depth_near_is_bright():
    img = colorize_depth(np.array([[1.0, 10.0]]), 1.0, 10.0, cmap="gray")
    assert tuple(img[0, 0]) == (255, 255, 255) and tuple(img[0, 1]) == (0, 0, 0)
    with pytest.raises(ContractError):
        colorize_depth(np.ones((2, 2)), 2.0, 1.0)


def test_three_panel_layout():
    a = np.full((4, 5, 3), 10, np.uint8)
    c = np.full((4, 5, 3), 30, np.uint8)
    out = three_panel(a, None, c, zoom=3)
    assert out.shape == (12, 45, 3)
    assert tuple(out[0, 15]) == MISSING_COLOR and tuple(out[0, 44]) == (30, 30, 30)
    with pytest.raises(ContractError):
        three_panel(a, None, c[:2])


def test_frame_panels_and_png(small_seq, tmp_path):
    panels = render_frame_panels(init_params(0), small_seq.frames[0], 6, zoom=1)
    assert panels["depth"].shape == panels["seg"].shape == (64, 192, 3)
    np.testing.assert_array_equal(panels["seg"][:, :64], small_seq.frames[0].image)
    path = save_png(tmp_path / "x" / "p.png", panels["seg"])
    np.testing.assert_array_equal(np.array(Image.open(path)), panels["seg"])


def test_report_figures(tmp_path):
    records = [{"step": i, "total": 1.0 / (i + 1), "weighted": {"pho": 0.5 / (i + 1), "sm": 0.1}} for i in range(5)]
    assert plot_training_log(records, tmp_path / "log.png", "run").stat().st_size > 0
    with pytest.raises(ContractError):
        plot_training_log([], tmp_path / "empty.png")
    arm = {"median": {"abs_rel": 0.2}, "none": {"abs_rel": 0.3}, "miou": 0.6}
    results = [{"seed": s, "supervised": arm, "bootstrapped": arm} for s in range(2)]
    assert plot_benchmark(results, tmp_path / "b.png").stat().st_size > 0
