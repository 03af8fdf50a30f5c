from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import VoxelGrid


class IncompatibleGridError(ValueError):
    pass


@dataclass
class Volume:
    """A 3D scalar field on a voxel grid, stored ``(d, h, w)``."""

    data: np.ndarray
    grid: VoxelGrid
    unit: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != self.grid.dims:
            raise IncompatibleGridError(
                f"data shape {self.data.shape} does not match grid dims {self.grid.dims}")

    def like(self, data, unit=None) -> "Volume":
        return Volume(data, self.grid, self.unit if unit is None else unit)


def require_same_grid(*volumes: Volume) -> VoxelGrid:
    grid = volumes[0].grid
    for v in volumes[1:]:
        if v.grid != grid:
            raise IncompatibleGridError(f"grid mismatch: {v.grid} vs {grid}")
    return grid
