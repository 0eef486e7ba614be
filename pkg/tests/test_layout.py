import numpy as np
import pytest

from trustlens.errors import LayoutError
from trustlens.layout import TokenLayout
from trustlens.rng import Rng


def full_scale_layout():
    return TokenLayout(grid_x=180, grid_y=180, cell_size=0.6, num_cams=6, cam_h=40, cam_w=100)


def test_full_scale_token_counts():
    layout = full_scale_layout()
    assert layout.s_pc == 32_400
    assert layout.s_img == 24_000
    assert layout.s_total == 56_400


def test_first_lidar_token_is_zero():
    assert full_scale_layout().token_index("lidar", 0, 0) == 0


def test_first_camera_token_follows_lidar_block():
    assert full_scale_layout().token_index("cam0", 0, 0) == 32_400


def test_round_trip_random_indices():
    layout = TokenLayout(grid_x=9, grid_y=13, cell_size=0.5, num_cams=3, cam_h=4, cam_w=7)
    picks = Rng(1).integers(1000, layout.s_total)
    for idx in picks.tolist():
        modality, row, col = layout.token_info(idx)
        assert layout.token_index(modality, row, col) == idx


def test_out_of_range_rejected_with_details():
    layout = TokenLayout(grid_x=4, grid_y=4, cell_size=1.0, num_cams=1, cam_h=2, cam_w=2)
    with pytest.raises(LayoutError, match=r"\(4, 0\)"):
        layout.token_index("lidar", 4, 0)
    with pytest.raises(LayoutError, match="cam0"):
        layout.token_index("cam0", 0, 5)
    with pytest.raises(LayoutError):
        layout.token_info(layout.s_total)
    with pytest.raises(LayoutError):
        layout.token_index("cam7", 0, 0)


def test_sensor_slices_tile_the_token_range():
    layout = TokenLayout(grid_x=5, grid_y=6, cell_size=1.0, num_cams=2, cam_h=3, cam_w=4)
    stops = []
    start = 0
    for name in layout.sensors():
        sl = layout.sensor_slice(name)
        assert sl.start == start
        start = sl.stop
        stops.append(sl.stop)
    assert stops[-1] == layout.s_total


def test_every_index_maps_to_exactly_one_sensor():
    layout = TokenLayout(grid_x=3, grid_y=3, cell_size=1.0, num_cams=2, cam_h=2, cam_w=2)
    owners = np.zeros(layout.s_total, dtype=int)
    for name in layout.sensors():
        owners[layout.sensor_slice(name)] += 1
    assert (owners == 1).all()


def test_invalid_layouts_rejected():
    with pytest.raises(LayoutError):
        TokenLayout(grid_x=0, grid_y=4, cell_size=1.0, num_cams=0, cam_h=1, cam_w=1)
    with pytest.raises(LayoutError):
        TokenLayout(grid_x=4, grid_y=4, cell_size=-1.0, num_cams=0, cam_h=1, cam_w=1)


def test_lidar_only_layout_supported():
    layout = TokenLayout(grid_x=8, grid_y=8, cell_size=1.0, num_cams=0, cam_h=1, cam_w=1)
    assert layout.sensors() == ("lidar",)
    assert layout.s_total == 64


def test_cell_centers_origin_centered():
    layout = TokenLayout(grid_x=4, grid_y=4, cell_size=2.0, num_cams=0, cam_h=1, cam_w=1)
    centers = layout.bev_cell_centers()
    assert centers.shape == (16, 2)
    assert np.allclose(centers.mean(axis=0), [0.0, 0.0])
    assert np.isclose(centers[0, 0], -3.0)  # first cell center at -extent/2 + cell/2
