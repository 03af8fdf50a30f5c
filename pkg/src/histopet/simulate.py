"""TOF list-mode event simulation from voxelised phantoms."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .geometry import CrystalAddress, DegenerateLORError, ScannerGeometry
from .raytrace import _trace
from .volume import Volume, require_same_grid

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

EVENT_DTYPE = np.dtype([
    ("ring1", "<u2"), ("crystal1", "<u2"),
    ("ring2", "<u2"), ("crystal2", "<u2"),
    ("delta_t", "<f4"), ("flags", "u1"),
])
PROMPT_FLAG = 1

_TRIAL_BATCH = 1 << 17


class InvalidInputError(ValueError):
    pass


class ListModeEvent(NamedTuple):
    a1: CrystalAddress
    a2: CrystalAddress
    delta_t: float  # ps, t1 - t2
    is_prompt: bool


def event_at(events: np.ndarray, k: int) -> ListModeEvent:
    e = events[k]
    return ListModeEvent(CrystalAddress(int(e["ring1"]), int(e["crystal1"])),
                         CrystalAddress(int(e["ring2"]), int(e["crystal2"])),
                         float(e["delta_t"]), bool(e["flags"] & PROMPT_FLAG))


def make_events(ring1, crystal1, ring2, crystal2, delta_t, prompt) -> np.ndarray:
    events = np.empty(len(delta_t), dtype=EVENT_DTYPE)
    events["ring1"], events["crystal1"] = ring1, crystal1
    events["ring2"], events["crystal2"] = ring2, crystal2
    events["delta_t"] = delta_t
    events["flags"] = np.where(prompt, PROMPT_FLAG, 0)
    return events


class EfficiencyTable:
    """Per-crystal detection efficiencies, shape (rings, crystals), values in (0, 1]."""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("efficiency table must be 2-D (rings, crystals)")
        if np.any(~(values > 0)) or np.any(values > 1):
            raise ValueError("crystal efficiencies must lie in (0, 1]")
        self.values = values

    @classmethod
    def uniform(cls, geometry: ScannerGeometry) -> "EfficiencyTable":
        return cls(np.ones((geometry.num_rings, geometry.crystals_per_ring)))

    @classmethod
    def random(cls, geometry: ScannerGeometry, seed: int, low: float = 0.8) -> "EfficiencyTable":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(low, 1.0, (geometry.num_rings, geometry.crystals_per_ring)))

    def matches(self, geometry: ScannerGeometry) -> bool:
        return self.values.shape == (geometry.num_rings, geometry.crystals_per_ring)


@dataclass(frozen=True)
class SimulationConfig:
    prompts: int = 1_000_000
    randoms_fraction: float = 0.0
    seed: int = 0
    attenuation: bool = True
    timing_blur: bool = True
    voxel_jitter: bool = True
    shards: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.prompts < 1:
            raise InvalidInputError("prompt count must be >= 1")
        if not 0.0 <= self.randoms_fraction < 1.0:
            raise InvalidInputError("randoms fraction must lie in [0, 1)")
        if self.shards < 1 or self.workers < 1:
            raise InvalidInputError("shards and workers must be >= 1")


def tof_delta_from_position(p, p1, p2, c: float = 0.299792458):
    """Arrival-time difference (ps) whose MLAP is the projection of ``p`` on ``p1 -> p2``.

    Vectorised over leading axes.
    """
    p, p1, p2 = (np.asarray(a, dtype=np.float64) for a in (p, p1, p2))
    diff = p1 - p2
    norm = np.linalg.norm(diff, axis=-1)
    if np.any(norm == 0):
        raise DegenerateLORError("LOR endpoints coincide")
    along = np.sum((p - 0.5 * (p1 + p2)) * diff, axis=-1) / norm
    return 2.0 * along / c


def decimate(events: np.ndarray, keep_prob: float, rng) -> np.ndarray:
    """Independently keep each event with probability ``keep_prob``; order is preserved."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    rng = np.random.default_rng(rng)
    keep = rng.random(len(events)) < keep_prob
    return events[keep]



@numba.njit(cache=True, nogil=True)
def _true_trials(seed, n_trials, cdf, dims, origin, size, jitter, cos_max, R, n_rings,
                 n_cryst, pitch, table, eff, mu, mu_lower, attenuation, blur, sigma_t, c,
                 out):
    """Run ``n_trials`` emission trials; accepted events go to ``out`` rows
    ``(ring1, crystal1, ring2, crystal2, delta_t)``.  Uses numba's own RNG,
    seeded from ``seed`` so each call is reproducible."""
    np.random.seed(seed)
    nz, ny, nx = dims[0], dims[1], dims[2]
    total = cdf[cdf.shape[0] - 1]
    p = np.empty(3)
    e1 = np.empty(3)
    e2 = np.empty(3)
    two_pi = 2.0 * np.pi
    n_geo = 0
    n_acc = 0
    for _ in range(n_trials):
        flat = np.searchsorted(cdf, np.random.random() * total, side="right")
        if flat >= cdf.shape[0]:
            flat = cdf.shape[0] - 1
        k = flat // (ny * nx)
        j = (flat // nx) % ny
        i = flat % nx
        fk, fj, fi = float(k), float(j), float(i)
        if jitter:
            fk += np.random.random() - 0.5
            fj += np.random.random() - 0.5
            fi += np.random.random() - 0.5
        p[2] = origin[0] + fk * size[0]
        p[1] = origin[1] + fj * size[1]
        p[0] = origin[2] + fi * size[2]
        cos_t = (2.0 * np.random.random() - 1.0) * cos_max
        phi = two_pi * np.random.random()
        sin_t = np.sqrt(1.0 - cos_t * cos_t)
        ux = sin_t * np.cos(phi)
        uy = sin_t * np.sin(phi)
        uz = cos_t
        a = sin_t * sin_t
        if a < 1e-300:
            continue
        b = p[0] * ux + p[1] * uy
        cc = p[0] * p[0] + p[1] * p[1] - R * R
        root = np.sqrt(b * b - a * cc)
        t1 = (-b + root) / a
        t2 = (-b - root) / a
        z1 = p[2] + t1 * uz
        z2 = p[2] + t2 * uz
        r1 = int(np.rint(z1 / pitch + (n_rings - 1) / 2.0))
        r2 = int(np.rint(z2 / pitch + (n_rings - 1) / 2.0))
        if r1 < 0 or r1 >= n_rings or r2 < 0 or r2 >= n_rings:
            continue
        x1 = p[0] + t1 * ux
        y1 = p[1] + t1 * uy
        x2 = p[0] + t2 * ux
        y2 = p[1] + t2 * uy
        c1 = int(np.rint(np.arctan2(y1, x1) * n_cryst / two_pi)) % n_cryst
        c2 = int(np.rint(np.arctan2(y2, x2) * n_cryst / two_pi)) % n_cryst
        if r1 == r2 and c1 == c2:
            continue
        n_geo += 1
        u = np.random.random()
        prob = eff[r1, c1] * eff[r2, c2]
        if u >= prob:
            continue
        for ax in range(3):
            e1[ax] = table[r1, c1, ax]
            e2[ax] = table[r2, c2, ax]
        if attenuation and u >= prob * np.exp(-_trace(mu, mu_lower, size, e1, e2)):
            continue
        # arrival-time difference for the projection of p on the detected LOR
        dx = e1[0] - e2[0]
        dy = e1[1] - e2[1]
        dz = e1[2] - e2[2]
        norm = np.sqrt(dx * dx + dy * dy + dz * dz)
        along = ((p[0] - 0.5 * (e1[0] + e2[0])) * dx + (p[1] - 0.5 * (e1[1] + e2[1])) * dy
                 + (p[2] - 0.5 * (e1[2] + e2[2])) * dz) / norm
        dt = 2.0 * along / c
        if blur:
            dt += np.random.normal(0.0, sigma_t)
        out[n_acc, 0] = r1
        out[n_acc, 1] = c1
        out[n_acc, 2] = r2
        out[n_acc, 3] = c2
        out[n_acc, 4] = dt
        n_acc += 1
    return n_geo, n_acc


class _Sampler:
    """Precomputed state shared by all shards of one simulation."""

    def __init__(self, activity: Volume, mu: Volume, geometry, efficiencies, config):
        self.grid = require_same_grid(activity, mu)
        self.geometry = geometry
        self.config = config
        self.eff = efficiencies.values
        weights = np.asarray(activity.data, dtype=np.float64).ravel()
        if np.any(weights < 0):
            raise InvalidInputError("activity must be non-negative")
        self.cdf = np.cumsum(weights)
        if not self.cdf[-1] > 0:
            raise InvalidInputError("activity volume is all zero")
        self.mu = mu
        self.table = geometry.crystal_table()
        g = self.grid
        self.origin = np.asarray(g.origin)
        self.size = np.asarray(g.voxel_size)
        self.dims = np.asarray(g.dims)
        # Only directions that can reach the detector from some grid point are
        # drawn; restricting the polar band scales every voxel's sensitivity by
        # the same factor.  Both photons must land within the axial extent Z and
        # the transaxial chord through a point at radius rho is at least
        # 2 sqrt(R^2 - rho^2), so |cot(theta)| <= Z / (2 sqrt(R^2 - rho^2)).
        corners_y = np.abs([g.lower[1], g.upper[1]]).max()
        corners_x = np.abs([g.lower[2], g.upper[2]]).max()
        rho_max = math.hypot(corners_y, corners_x)
        R = geometry.ring_radius
        if rho_max >= R:
            self.cos_max = 1.0
        else:
            k = geometry.axial_extent / (2.0 * math.sqrt(R * R - rho_max * rho_max))
            self.cos_max = min(1.0, 1.0001 * k / math.sqrt(1.0 + k * k))
        self.stats_keys = ("trials", "geometric", "accepted")

    def trues(self, n: int, rng: np.random.Generator, stats: dict):
        cfg, geo = self.config, self.geometry
        sigma_t = geo.timing_resolution_fwhm * FWHM_TO_SIGMA
        mu = np.ascontiguousarray(self.mu.data, dtype=np.float64)
        out = []
        have = 0
        while have < n:
            B = _TRIAL_BATCH
            buf = np.empty((B, 5))
            n_geo, n_acc = _true_trials(
                int(rng.integers(0, 2**62)), B, self.cdf, self.dims, self.origin, self.size,
                cfg.voxel_jitter, self.cos_max, geo.ring_radius, geo.num_rings,
                geo.crystals_per_ring, geo.crystal_axial_pitch, self.table, self.eff,
                mu, self.grid.lower, cfg.attenuation, cfg.timing_blur, sigma_t,
                geo.speed_of_light, buf)
            take = min(n_acc, n - have)
            b = buf[:take]
            stats["trials"] += B
            stats["geometric"] += n_geo
            stats["accepted"] += n_acc  # over the whole batch, like "geometric"
            out.append(make_events(b[:, 0], b[:, 1], b[:, 2], b[:, 3], b[:, 4], True))
            have += take
        if not out:
            return np.empty(0, dtype=EVENT_DTYPE)
        return np.concatenate(out)

    def randoms(self, n: int, prompt: bool, rng: np.random.Generator):
        geo = self.geometry
        nc = geo.num_crystals
        i = rng.integers(0, nc, n)
        j = (i + rng.integers(1, nc, n)) % nc  # distinct from i, uniform over the rest
        r1, c1 = np.divmod(i, geo.crystals_per_ring)
        r2, c2 = np.divmod(j, geo.crystals_per_ring)
        dist = np.linalg.norm(self.table[r1, c1] - self.table[r2, c2], axis=1)
        tmax = dist / geo.speed_of_light
        dt = rng.uniform(-1.0, 1.0, n) * tmax
        return make_events(r1, c1, r2, c2, dt, prompt)

    def shard(self, n_prompts: int, seed_seq: np.random.SeedSequence):
        rng = np.random.default_rng(seed_seq)
        stats = dict.fromkeys(self.stats_keys, 0)
        r = self.config.randoms_fraction
        n_rp = int(rng.binomial(n_prompts, r)) if r > 0 else 0
        n_delay = int(rng.binomial(n_prompts, r)) if r > 0 else 0
        parts = [self.trues(n_prompts - n_rp, rng, stats)]
        if n_rp:
            parts.append(self.randoms(n_rp, True, rng))
        if n_delay:
            parts.append(self.randoms(n_delay, False, rng))
        events = np.concatenate(parts)
        if len(parts) > 1:
            events = events[rng.permutation(len(events))]
        stats["random_prompts"] = n_rp
        stats["delays"] = n_delay
        return events, stats


def simulate_events(activity: Volume, mu: Volume, geometry: ScannerGeometry,
                    efficiencies: EfficiencyTable, config: SimulationConfig,
                    return_stats: bool = False):
    """Simulate a TOF list-mode stream from an activity / attenuation phantom.

    Emission voxels are drawn in proportion to activity, the annihilation point
    is jittered uniformly inside the voxel and the photon pair direction is
    isotropic.  The pair is assigned to the crystals nearest the cylinder
    intersections and survives with probability ``exp(-int mu) * e1 * e2``.
    Randoms are uniform crystal pairs with uniform arrival-time differences;
    they appear both among the prompts and, independently, as delays.

    Exactly ``config.prompts`` prompts are produced.  The stream depends only on
    ``(config.seed, config.shards)``.
    """
    if efficiencies is None:
        efficiencies = EfficiencyTable.uniform(geometry)
    if not efficiencies.matches(geometry):
        raise InvalidInputError("efficiency table shape does not match the geometry")
    sampler = _Sampler(activity, mu, geometry, efficiencies, config)
    S = config.shards
    counts = [config.prompts // S + (k < config.prompts % S) for k in range(S)]
    seeds = np.random.SeedSequence(config.seed).spawn(S)
    if config.workers > 1 and S > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(sampler.shard, counts, seeds))
    else:
        results = [sampler.shard(n, s) for n, s in zip(counts, seeds)]
    events = np.concatenate([ev for ev, _ in results])
    if not return_stats:
        return events
    stats = {k: sum(st[k] for _, st in results) for k in results[0][1]}
    return events, stats
