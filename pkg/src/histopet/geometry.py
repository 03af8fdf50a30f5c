"""Cylindrical scanner model, crystal addressing and voxel grids.

Points are ``(x, y, z)`` in mm with ``z`` along the scanner axis.  Voxel
arrays are indexed ``(depth, height, width)`` which maps to ``(z, y, x)``;
``VoxelGrid`` stores its sizes and origin in that array order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

SPEED_OF_LIGHT = 0.299792458  # mm / ps


class GeometryError(ValueError):
    pass


class InvalidAddressError(GeometryError):
    pass


class DegenerateLORError(GeometryError):
    pass


class CrystalAddress(NamedTuple):
    ring: int
    crystal: int


@dataclass(frozen=True)
class ScannerGeometry:
    ring_radius: float = 400.0
    num_rings: int = 8
    crystals_per_ring: int = 192
    crystal_axial_pitch: float = 3.2
    timing_resolution_fwhm: float = 214.0
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not self.ring_radius > 0:
            raise GeometryError(f"ring_radius must be > 0, got {self.ring_radius}")
        if self.num_rings < 1:
            raise GeometryError(f"num_rings must be >= 1, got {self.num_rings}")
        if self.crystals_per_ring < 8 or self.crystals_per_ring % 2:
            raise GeometryError(
                f"crystals_per_ring must be even and >= 8, got {self.crystals_per_ring}")
        if not self.crystal_axial_pitch > 0:
            raise GeometryError("crystal_axial_pitch must be > 0")
        if not self.timing_resolution_fwhm > 0:
            raise GeometryError("timing_resolution_fwhm must be > 0")

    @property
    def num_crystals(self) -> int:
        return self.num_rings * self.crystals_per_ring

    @property
    def axial_extent(self) -> float:
        """Axial length covered by the crystal faces, in mm."""
        return self.num_rings * self.crystal_axial_pitch

    def ring_z(self, ring):
        return (np.asarray(ring, dtype=np.float64) - (self.num_rings - 1) / 2.0) \
            * self.crystal_axial_pitch

    def crystal_table(self) -> np.ndarray:
        """Positions of every crystal as an array of shape (rings, crystals, 3)."""
        angles = 2.0 * np.pi * np.arange(self.crystals_per_ring) / self.crystals_per_ring
        table = np.empty((self.num_rings, self.crystals_per_ring, 3))
        table[:, :, 0] = self.ring_radius * np.cos(angles)[None, :]
        table[:, :, 1] = self.ring_radius * np.sin(angles)[None, :]
        table[:, :, 2] = self.ring_z(np.arange(self.num_rings))[:, None]
        return table

    def to_config(self) -> dict:
        return {
            "ring_radius": self.ring_radius,
            "num_rings": self.num_rings,
            "crystals_per_ring": self.crystals_per_ring,
            "crystal_axial_pitch": self.crystal_axial_pitch,
            "timing_resolution_fwhm": self.timing_resolution_fwhm,
        }

    def digest(self) -> bytes:
        """16-byte hash of the canonical key/value form; stored in event files."""
        text = "\n".join(f"{k} = {v!r}" for k, v in sorted(self.to_config().items()))
        return hashlib.sha256(text.encode()).digest()[:16]


def crystal_position(geometry: ScannerGeometry, addr) -> np.ndarray:
    ring, crystal = int(addr[0]), int(addr[1])
    if not (0 <= ring < geometry.num_rings and 0 <= crystal < geometry.crystals_per_ring):
        raise InvalidAddressError(
            f"address (ring={ring}, crystal={crystal}) outside "
            f"{geometry.num_rings} rings x {geometry.crystals_per_ring} crystals")
    angle = 2.0 * np.pi * crystal / geometry.crystals_per_ring
    return np.array([geometry.ring_radius * np.cos(angle),
                     geometry.ring_radius * np.sin(angle),
                     float(geometry.ring_z(ring))])


@dataclass(frozen=True)
class VoxelGrid:
    dims: tuple  # (d, h, w)
    voxel_size: tuple = (1.65, 1.65, 1.65)  # mm, (z, y, x)
    origin: Optional[tuple] = None  # center of voxel (0,0,0), mm, (z, y, x)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        size = tuple(float(s) for s in self.voxel_size)
        if len(dims) != 3 or min(dims) < 1:
            raise GeometryError(f"grid dims must be three counts >= 1, got {self.dims}")
        if len(size) != 3 or min(size) <= 0:
            raise GeometryError(f"voxel sizes must be > 0, got {self.voxel_size}")
        if self.origin is None:
            origin = tuple(-(n - 1) / 2.0 * s for n, s in zip(dims, size))
        else:
            origin = tuple(float(o) for o in self.origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "origin", origin)

    @property
    def num_voxels(self) -> int:
        d, h, w = self.dims
        return d * h * w

    @property
    def lower(self) -> np.ndarray:
        """Lower corner of the grid extent in array order (z, y, x)."""
        return np.asarray(self.origin) - 0.5 * np.asarray(self.voxel_size)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.asarray(self.dims) * np.asarray(self.voxel_size)

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.voxel_size[axis] * np.arange(self.dims[axis])

    def center_of(self, index) -> np.ndarray:
        """Center of voxel ``(k, j, i)`` as a point ``(x, y, z)``."""
        zyx = np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.voxel_size)
        return zyx[::-1].copy()

    def mesh(self):
        """Voxel-center coordinate arrays ``x, y, z`` broadcastable to ``dims``."""
        z = self.centers(0)[:, None, None]
        y = self.centers(1)[None, :, None]
        x = self.centers(2)[None, None, :]
        return x, y, z

    def to_config(self) -> dict:
        return {"dims": self.dims, "voxel_size": self.voxel_size, "origin": self.origin}


def check_grid_fits(geometry: ScannerGeometry, grid: VoxelGrid) -> None:
    """Raise unless the transaxial extent of ``grid`` fits inside the bore."""
    extent = grid.upper - grid.lower
    if max(extent[1], extent[2]) >= 2.0 * geometry.ring_radius:
        raise GeometryError(
            f"grid transaxial extent {max(extent[1:]):.1f} mm does not fit a bore "
            f"of radius {geometry.ring_radius} mm")


def round_half_away(u):
    return np.copysign(np.floor(np.abs(u) + 0.5), u)


def voxel_indices(grid: VoxelGrid, points: np.ndarray):
    """Vectorised nearest-voxel lookup.

    ``points`` has shape (n, 3) in (x, y, z). Returns ``(index, inside)`` where
    ``index`` is an (n, 3) int array in (k, j, i) order and ``inside`` flags the
    points whose nearest center lies inside the grid.
    """
    points = np.asarray(points, dtype=np.float64)
    zyx = points[:, ::-1]
    u = (zyx - np.asarray(grid.origin)) / np.asarray(grid.voxel_size)
    idx = round_half_away(u)
    inside = np.all((idx >= 0) & (idx < np.asarray(grid.dims)), axis=1)
    return idx.astype(np.int64), inside


def voxel_of_point(grid: VoxelGrid, p) -> Optional[tuple]:
    """Index of the voxel whose center is nearest ``p``; ``None`` outside the grid.

    Ties on an axis round half away from zero, so a point midway between two
    interior centers maps to the higher index.
    """
    idx, inside = voxel_indices(grid, np.asarray(p, dtype=np.float64).reshape(1, 3))
    if not inside[0]:
        return None
    return tuple(int(v) for v in idx[0])
