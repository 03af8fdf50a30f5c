"""Image-quality metrics: MAE, slice-wise MS-SSIM, ROI statistics, line profiles, FWHM."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .autodiff import Tensor, avg_pool2d, filter2d_valid, no_grad
from .volume import IncompatibleGridError, Volume

log = logging.getLogger(__name__)

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


class EmptyRoiError(ValueError):
    pass


class OutOfGridError(ValueError):
    pass


class NotMeasurableError(ValueError):
    pass


def gaussian_taps(size: int = WINDOW, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def scale_count(h: int, w: int, scales: int = len(MS_SSIM_WEIGHTS)) -> int:
    """Largest number of dyadic scales (<= ``scales``) whose coarsest image still fits the window."""
    m = 1
    while m < scales and min(h, w) // 2 ** m >= WINDOW:
        m += 1
    if min(h, w) < WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {WINDOW}x{WINDOW} window")
    return m


def scale_weights(m: int) -> np.ndarray:
    w = np.asarray(MS_SSIM_WEIGHTS[:m], dtype=np.float64)
    return w / w.sum()


_warned: set = set()


def ms_ssim_images(a: Tensor, b: Tensor, data_range: float = 1.0) -> Tensor:
    """Differentiable MS-SSIM of image stacks ``(..., h, w)``; returns one value per image.

    Inputs are expected to be normalized already (dynamic range ``data_range``).
    With fewer than five scales available the standard weights are truncated
    and renormalized.
    """
    h, w = a.shape[-2:]
    m = scale_count(h, w)
    if m < len(MS_SSIM_WEIGHTS) and (h, w) not in _warned:
        _warned.add((h, w))
        warnings.warn(f"{h}x{w} images support only {m} MS-SSIM scales; weights renormalized",
                      stacklevel=2)
    weights = scale_weights(m)
    taps = gaussian_taps()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    result = None
    for j in range(m):
        mu_a = filter2d_valid(a, taps)
        mu_b = filter2d_valid(b, taps)
        saa = filter2d_valid(a * a, taps) - mu_a * mu_a
        sbb = filter2d_valid(b * b, taps) - mu_b * mu_b
        sab = filter2d_valid(a * b, taps) - mu_a * mu_b
        cs_map = (2.0 * sab + c2) / (saa + sbb + c2)
        if j < m - 1:
            term = cs_map.mean(axis=(-2, -1)).relu() ** weights[j]
            a, b = avg_pool2d(a), avg_pool2d(b)
        else:
            lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
            term = (lum * cs_map).mean(axis=(-2, -1)).relu() ** weights[j]
        result = term if result is None else result * term
    return result


def _as_array(v):
    return v.data if isinstance(v, Volume) else np.asarray(v)


def _pair(xhat, x):
    if isinstance(xhat, Volume) and isinstance(x, Volume) and xhat.grid != x.grid:
        raise IncompatibleGridError("volumes are on different grids")
    a, b = _as_array(xhat), _as_array(x)
    if a.shape != b.shape:
        raise IncompatibleGridError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mae(xhat, x) -> float:
    """Mean absolute voxel difference."""
    a, b = _pair(xhat, x)
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def mae_per_slice(xhat, x) -> np.ndarray:
    a, b = _pair(xhat, x)
    return np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64)), axis=(-2, -1))


def ms_ssim_per_slice(xhat, x) -> np.ndarray:
    """MS-SSIM of every transaxial slice after scaling the pair by its joint maximum."""
    a, b = _pair(xhat, x)
    a = a.astype(np.float64).reshape((-1,) + a.shape[-2:])
    b = b.astype(np.float64).reshape((-1,) + b.shape[-2:])
    peak = np.maximum(a.max(axis=(1, 2)), b.max(axis=(1, 2)))
    absmax = np.maximum(np.abs(a).max(axis=(1, 2)), np.abs(b).max(axis=(1, 2)))
    scale = np.where(peak > 0, peak, absmax)
    zero = scale == 0
    if zero.any():
        log.info("%d all-zero slice pair(s) scored as identical", int(zero.sum()))
    scale = np.where(zero, 1.0, scale)[:, None, None]
    with no_grad():
        vals = ms_ssim_images(Tensor(a / scale), Tensor(b / scale)).data
    return np.where(zero, 1.0, vals)


def ms_ssim(xhat, x) -> float:
    """Slice-averaged MS-SSIM of two volumes (or 2-D images)."""
    return float(np.mean(ms_ssim_per_slice(xhat, x)))


def roi_stats(volume: Volume, center, diameter: float):
    """(mean, std, min, max) over voxels whose centers lie in a sphere; ``center`` is (x, y, z) mm."""
    x, y, z = volume.grid.mesh()
    cx, cy, cz = (float(c) for c in center)
    inside = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= (diameter / 2.0) ** 2
    vals = volume.data[inside]
    if vals.size == 0:
        raise EmptyRoiError(f"no voxel centers within {diameter} mm of {tuple(center)}")
    return float(vals.mean()), float(vals.std()), float(vals.min()), float(vals.max())


def line_profile(volume: Volume, p_start, p_end, samples: int):
    """Trilinearly interpolated values at ``samples`` equally spaced points.

    Returns ``(positions, values)``: distance from ``p_start`` in mm and the
    sampled values.  Both endpoints must lie within the hull of voxel centers.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    grid = volume.grid
    p0 = np.asarray(p_start, dtype=np.float64)
    p1 = np.asarray(p_end, dtype=np.float64)
    t = np.linspace(0.0, 1.0, samples)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    coords = (pts[:, ::-1] - np.asarray(grid.origin)) / np.asarray(grid.voxel_size)
    tol = 1e-9
    if np.any(coords < -tol) or np.any(coords > np.asarray(grid.dims) - 1 + tol):
        raise OutOfGridError("profile leaves the grid")
    coords = np.clip(coords, 0, np.asarray(grid.dims) - 1)
    values = map_coordinates(volume.data.astype(np.float64), coords.T, order=1, mode="nearest")
    return t * np.linalg.norm(p1 - p0), values


def fwhm(positions, values=None) -> float:
    """Full width at half maximum of a sampled profile.

    Accepts ``(positions, values)`` or a list of ``(position, value)`` pairs.
    The baseline is the smaller end value; crossings are linearly interpolated
    walking outward from the first maximum.
    """
    if values is None:
        arr = np.asarray(positions, dtype=np.float64)
        positions, values = arr[:, 0], arr[:, 1]
    x = np.asarray(positions, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    peak = int(np.argmax(v))
    base = min(v[0], v[-1])
    if v[peak] <= base:
        raise NotMeasurableError("profile has no maximum above its baseline")
    half = base + 0.5 * (v[peak] - base)

    left = peak
    while left > 0 and v[left - 1] >= half:
        left -= 1
    right = peak
    while right < len(v) - 1 and v[right + 1] >= half:
        right += 1
    if left == 0 or right == len(v) - 1:
        raise NotMeasurableError("half maximum not crossed on both sides")

    def cross(i, j):
        # v[i] < half <= v[j]
        return x[i] + (half - v[i]) / (v[j] - v[i]) * (x[j] - x[i])
    return float(cross(right + 1, right) - cross(left - 1, left))


@dataclass
class MetricsReport:
    mae_slices: np.ndarray
    ms_ssim_slices: np.ndarray
    roi: dict = field(default_factory=dict)
    fwhm: dict = field(default_factory=dict)

    @property
    def mae(self) -> float:
        return float(np.mean(self.mae_slices))

    @property
    def ms_ssim(self) -> float:
        return float(np.mean(self.ms_ssim_slices))

    def records(self):
        """Tab-separated lines: one per slice, then summary rows."""
        yield "kind\tkey\tmae\tms_ssim"
        for k, (m, s) in enumerate(zip(self.mae_slices, self.ms_ssim_slices)):
            yield f"slice\t{k}\t{m:.6g}\t{s:.6f}"
        yield f"mean\tall\t{self.mae:.6g}\t{self.ms_ssim:.6f}"
        for name, (mean, std, lo, hi) in self.roi.items():
            yield f"roi\t{name}\tmean={mean:.6g}\tstd={std:.6g}\tmin={lo:.6g}\tmax={hi:.6g}"
        for name, width in self.fwhm.items():
            yield f"fwhm\t{name}\t{width:.6g}"


def evaluate(recon, target) -> MetricsReport:
    return MetricsReport(mae_per_slice(recon, target), ms_ssim_per_slice(recon, target))
