"""Token layout bookkeeping for the concatenated LiDAR + camera token set.

Tokens are ordered LiDAR-first: BEV cell (ix, iy) -> ix*grid_y + iy, then
camera c's tokens at s_pc + c*cam_h*cam_w + row*cam_w + col.  Every flat
index maps to exactly one (sensor, row, col) triple and back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutError

LIDAR = "lidar"


@dataclass(frozen=True)
class TokenLayout:
    grid_x: int
    grid_y: int
    cell_size: float  # meters per BEV cell
    num_cams: int
    cam_h: int
    cam_w: int

    def __post_init__(self):
        if self.grid_x < 1 or self.grid_y < 1:
            raise LayoutError(f"BEV grid must be positive, got {self.grid_x}x{self.grid_y}")
        if self.cell_size <= 0:
            raise LayoutError(f"cell_size must be positive meters, got {self.cell_size}")
        if self.num_cams < 0:
            raise LayoutError(f"num_cams must be >= 0, got {self.num_cams}")
        if self.num_cams > 0 and (self.cam_h < 1 or self.cam_w < 1):
            raise LayoutError(f"camera grid must be positive, got {self.cam_h}x{self.cam_w}")

    @property
    def s_pc(self) -> int:
        return self.grid_x * self.grid_y

    @property
    def s_img(self) -> int:
        return self.num_cams * self.cam_h * self.cam_w

    @property
    def s_total(self) -> int:
        return self.s_pc + self.s_img

    @property
    def cam_tokens(self) -> int:
        return self.cam_h * self.cam_w

    @property
    def extent_x(self) -> float:
        """BEV coverage along x in meters."""
        return self.grid_x * self.cell_size

    @property
    def extent_y(self) -> float:
        return self.grid_y * self.cell_size

    def sensors(self) -> tuple[str, ...]:
        """Sensor names in token order: lidar, cam0, cam1, ..."""
        return (LIDAR,) + tuple(f"cam{c}" for c in range(self.num_cams))

    def sensor_slice(self, name: str) -> slice:
        """Flat token index range occupied by one sensor."""
        if name == LIDAR:
            return slice(0, self.s_pc)
        if name.startswith("cam"):
            try:
                c = int(name[3:])
            except ValueError:
                raise LayoutError(f"unknown sensor name {name!r}")
            if not 0 <= c < self.num_cams:
                raise LayoutError(f"camera {c} out of range for {self.num_cams} cameras")
            start = self.s_pc + c * self.cam_tokens
            return slice(start, start + self.cam_tokens)
        raise LayoutError(f"unknown sensor name {name!r}")

    def token_index(self, modality: str, row: int, col: int) -> int:
        """Flat token index of (modality, row, col)."""
        if modality == LIDAR:
            if not (0 <= row < self.grid_x and 0 <= col < self.grid_y):
                raise LayoutError(
                    f"LiDAR cell ({row}, {col}) outside {self.grid_x}x{self.grid_y} grid"
                )
            return row * self.grid_y + col
        base = self.sensor_slice(modality).start
        if not (0 <= row < self.cam_h and 0 <= col < self.cam_w):
            raise LayoutError(
                f"{modality} token ({row}, {col}) outside {self.cam_h}x{self.cam_w} grid"
            )
        return base + row * self.cam_w + col

    def token_info(self, index: int) -> tuple[str, int, int]:
        """Inverse of token_index: (modality, row, col) of a flat index."""
        if not 0 <= index < self.s_total:
            raise LayoutError(f"token index {index} outside [0, {self.s_total})")
        if index < self.s_pc:
            return LIDAR, index // self.grid_y, index % self.grid_y
        rel = index - self.s_pc
        c, within = divmod(rel, self.cam_tokens)
        return f"cam{c}", within // self.cam_w, within % self.cam_w

    def bev_cell_centers(self) -> np.ndarray:
        """(s_pc, 2) array of BEV cell-center coordinates, origin-centered."""
        ix = np.arange(self.grid_x, dtype=np.float64)
        iy = np.arange(self.grid_y, dtype=np.float64)
        x = (ix + 0.5 - self.grid_x / 2.0) * self.cell_size
        y = (iy + 0.5 - self.grid_y / 2.0) * self.cell_size
        gx, gy = np.meshgrid(x, y, indexing="ij")
        return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)

    def camera_sector(self, cam: int) -> tuple[float, float]:
        """Azimuth interval [lo, hi) covered by camera cam; sectors tile [-pi, pi)."""
        if not 0 <= cam < self.num_cams:
            raise LayoutError(f"camera {cam} out of range for {self.num_cams} cameras")
        width = 2.0 * np.pi / self.num_cams
        lo = -np.pi + cam * width
        return lo, lo + width

    def max_range(self) -> float:
        """Radius of the circumscribed BEV circle in meters."""
        return 0.5 * float(np.hypot(self.extent_x, self.extent_y))

    def to_dict(self) -> dict:
        return {
            "schema": "layout",
            "version": 1,
            "grid_x": self.grid_x,
            "grid_y": self.grid_y,
            "cell_size_m": self.cell_size,
            "num_cams": self.num_cams,
            "cam_h": self.cam_h,
            "cam_w": self.cam_w,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenLayout":
        return cls(
            grid_x=int(d["grid_x"]),
            grid_y=int(d["grid_y"]),
            cell_size=float(d["cell_size_m"]),
            num_cams=int(d["num_cams"]),
            cam_h=int(d["cam_h"]),
            cam_w=int(d["cam_w"]),
        )
