"""Analytical activity / attenuation phantoms rendered onto voxel grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import VoxelGrid
from .volume import Volume

MU_WATER = 0.0096  # 1/mm at 511 keV

DEFAULT_SPHERE_DIAMETERS = (3.5, 5.0, 6.5, 8.0, 10.0, 13.0, 17.0, 20.0, 22.0, 25.0)


class InvalidSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Shape:
    """A solid painted into the phantom.

    ``kind`` is ``"ellipsoid"`` (radii are the three semi-axes) or
    ``"cylinder"`` (radii are ``(rx, ry, half_length)``, axis along z).
    ``angle`` rotates the shape about z, in radians.  Centers are ``(x, y, z)``.
    """

    kind: str
    center: tuple
    radii: tuple
    activity: float
    mu: float
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ellipsoid", "cylinder"):
            raise InvalidSpecError(f"unknown shape kind {self.kind!r}")
        if len(self.center) != 3 or len(self.radii) != 3:
            raise InvalidSpecError("center and radii need three components")
        if min(self.radii) <= 0:
            raise InvalidSpecError(f"radii must be > 0, got {self.radii}")
        if self.activity < 0 or self.mu < 0:
            raise InvalidSpecError("activity and mu must be >= 0")

    def contains(self, x, y, z):
        c, s = np.cos(self.angle), np.sin(self.angle)
        dx, dy, dz = x - self.center[0], y - self.center[1], z - self.center[2]
        u = c * dx + s * dy
        v = -s * dx + c * dy
        rx, ry, rz = self.radii
        if self.kind == "ellipsoid":
            return (u / rx) ** 2 + (v / ry) ** 2 + (dz / rz) ** 2 <= 1.0
        return ((u / rx) ** 2 + (v / ry) ** 2 <= 1.0) & (np.abs(dz) <= rz)

    def bounds(self):
        """Axis-aligned bounding box ``(lo, hi)`` in (x, y, z)."""
        c, s = abs(np.cos(self.angle)), abs(np.sin(self.angle))
        rx, ry, rz = self.radii
        # the transaxial cross-section is an ellipse for both kinds
        half = np.array([np.hypot(rx * c, ry * s), np.hypot(rx * s, ry * c), rz])
        return np.asarray(self.center) - half, np.asarray(self.center) + half


@dataclass(frozen=True)
class PhantomSpec:
    """Shapes painted in order over a background; later shapes win."""

    kind: str
    shapes: tuple = field(default_factory=tuple)
    background_activity: float = 0.0
    background_mu: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform-cylinder", "sphere-set", "random-ellipsoids"):
            raise InvalidSpecError(f"unknown phantom kind {self.kind!r}")
        if self.background_activity < 0 or self.background_mu < 0:
            raise InvalidSpecError("background activity and mu must be >= 0")


def uniform_cylinder(radius: float, half_length: float, activity: float = 5000.0,
                     mu: float = MU_WATER, center=(0.0, 0.0, 0.0)) -> PhantomSpec:
    body = Shape("cylinder", tuple(center), (radius, radius, half_length), activity, mu)
    return PhantomSpec("uniform-cylinder", (body,))


def sphere_set(diameters=DEFAULT_SPHERE_DIAMETERS, ring_radius: float = 60.0,
               sphere_activity: float = 20000.0, background_activity: float = 5000.0,
               body_radius: float = 100.0, body_half_length: float = 12.8,
               mu: float = MU_WATER, z: float = 0.0) -> PhantomSpec:
    """Spheres placed evenly on a circle inside a uniform body cylinder."""
    shapes = [Shape("cylinder", (0.0, 0.0, 0.0), (body_radius, body_radius, body_half_length),
                    background_activity, mu)]
    n = len(diameters)
    for k, dia in enumerate(diameters):
        phi = 2.0 * np.pi * k / n
        r = 0.5 * float(dia)
        shapes.append(Shape("ellipsoid", (ring_radius * np.cos(phi), ring_radius * np.sin(phi), z),
                            (r, r, r), sphere_activity, mu))
    return PhantomSpec("sphere-set", tuple(shapes))


def random_ellipsoids(grid: VoxelGrid, seed: int, n_lesions=(3, 8),
                      body_activity=(1000.0, 4000.0), fill_fraction=(0.55, 0.9)) -> PhantomSpec:
    """A randomised body (elliptical cylinder) holding hot, cold and low-mu ellipsoids.

    Deterministic for a given ``seed`` and ``grid``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = grid.lower, grid.upper  # (z, y, x)
    half_x = 0.5 * (hi[2] - lo[2])
    half_y = 0.5 * (hi[1] - lo[1])
    half_z = 0.5 * (hi[0] - lo[0])
    cz = 0.5 * (hi[0] + lo[0])
    cx, cy = 0.5 * (hi[2] + lo[2]), 0.5 * (hi[1] + lo[1])

    rx = half_x * rng.uniform(*fill_fraction)
    ry = half_y * rng.uniform(*fill_fraction)
    bg = rng.uniform(*body_activity)
    body = Shape("cylinder", (cx, cy, cz), (rx, ry, half_z), bg, MU_WATER,
                 angle=rng.uniform(-0.3, 0.3))
    shapes = [body]
    body_r = min(rx, ry)
    for _ in range(rng.integers(n_lesions[0], n_lesions[1] + 1)):
        # stay inside the inscribed circle of the body
        a = rng.uniform(0.06, 0.35) * body_r
        b = rng.uniform(0.06, 0.35) * body_r
        c = rng.uniform(0.3, 1.0) * half_z
        reach = max(a, b)
        rho = rng.uniform(0.0, max(body_r - reach - 1e-3, 0.0))
        phi = rng.uniform(0, 2 * np.pi)
        zc = cz + rng.uniform(-1.0, 1.0) * (half_z - c)
        kind = rng.random()
        if kind < 0.6:
            act, mu = bg * rng.uniform(1.5, 5.0), MU_WATER
        elif kind < 0.8:
            act, mu = bg * rng.uniform(0.0, 0.5), MU_WATER
        else:  # lung-like / bone-like attenuation structure
            act, mu = bg * rng.uniform(0.1, 1.2), rng.choice([0.003, 0.015])
        shapes.append(Shape("ellipsoid", (cx + rho * np.cos(phi), cy + rho * np.sin(phi), zc),
                            (a, b, c), act, mu, angle=rng.uniform(0, np.pi)))
    return PhantomSpec("random-ellipsoids", tuple(shapes))


def _check_inside(spec: PhantomSpec, grid: VoxelGrid, tol: float = 1e-6):
    lo = grid.lower[::-1] - tol
    hi = grid.upper[::-1] + tol
    for shape in spec.shapes:
        slo, shi = shape.bounds()
        if np.any(slo < lo) or np.any(shi > hi):
            raise InvalidSpecError(
                f"{shape.kind} at {shape.center} with radii {shape.radii} "
                f"extends outside the grid")


def build_phantom(spec: PhantomSpec, grid: VoxelGrid):
    """Render ``spec`` into ``(activity [Bq/ml], mu [1/mm])`` volumes.

    A voxel takes a shape's value when its center lies inside the shape.
    """
    _check_inside(spec, grid)
    x, y, z = grid.mesh()
    activity = np.full(grid.dims, spec.background_activity, dtype=np.float64)
    mu = np.full(grid.dims, spec.background_mu, dtype=np.float64)
    for shape in spec.shapes:
        mask = np.broadcast_to(shape.contains(x, y, z), grid.dims)
        activity[mask] = shape.activity
        mu[mask] = shape.mu
    return Volume(activity, grid, "Bq/ml"), Volume(mu, grid, "1/mm")
