"""Simulated training corpora: phantom -> list-mode events -> histo-image triples."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .geometry import ScannerGeometry, VoxelGrid
from .histogram import HistogramConfig, histogram
from .phantoms import PhantomSpec, build_phantom, random_ellipsoids
from .simulate import EfficiencyTable, SimulationConfig, decimate, simulate_events
from .training import TrainingSample
from .volume import Volume

# Slice centers sit on ring planes and ring-pair midplanes (multiples of half
# the ring pitch), so direct and cross-plane LORs never tie between slices.
DESK_GEOMETRY = ScannerGeometry(num_rings=9, crystals_per_ring=576)
DESK_GRID = VoxelGrid((16, 64, 64), (1.6, 4.0, 4.0), origin=(-12.8, -126.0, -126.0))


@dataclass
class SimulatedStudy:
    sample: TrainingSample  # full-count histo, mu, true activity
    low_dose_histo: Optional[np.ndarray] = None


def simulate_study(spec: PhantomSpec, grid: VoxelGrid = DESK_GRID,
                   geometry: ScannerGeometry = DESK_GEOMETRY,
                   sim: SimulationConfig = SimulationConfig(),
                   efficiencies: Optional[EfficiencyTable] = None,
                   keep_prob: Optional[float] = None, workers: int = 1) -> SimulatedStudy:
    """Simulate one phantom; optionally also histogram a decimated copy of its events."""
    activity, mu = build_phantom(spec, grid)
    eff = efficiencies or EfficiencyTable.uniform(geometry)
    events = simulate_events(activity, mu, geometry, eff, sim)
    hcfg = HistogramConfig(worker_count=workers)
    histo = histogram(events, geometry, grid, eff, hcfg).values.astype(np.float32)
    low = None
    if keep_prob is not None:
        rng = np.random.default_rng([sim.seed, 0x1D])
        low = histogram(decimate(events, keep_prob, rng), geometry, grid, eff, hcfg).values.astype(np.float32)
    sample = TrainingSample(histo, mu.data.astype(np.float32), activity.data.astype(np.float32))
    return SimulatedStudy(sample, low)


def ellipsoid_corpus(n: int, seed: int = 0, grid: VoxelGrid = DESK_GRID,
                     geometry: ScannerGeometry = DESK_GEOMETRY, prompts: int = 1_000_000,
                     randoms_fraction: float = 0.05, keep_prob: Optional[float] = None,
                     workers: int = 1) -> list:
    """``n`` randomized ellipsoid studies; study ``i`` depends only on ``(seed, i)``."""
    out = []
    for i in range(n):
        ss = np.random.SeedSequence([seed, i])
        phantom_seed, sim_seed, eff_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        spec = random_ellipsoids(grid, phantom_seed)
        sim = SimulationConfig(prompts=prompts, randoms_fraction=randoms_fraction, seed=sim_seed)
        eff = EfficiencyTable.random(geometry, eff_seed)
        out.append(simulate_study(spec, grid, geometry, sim, eff, keep_prob, workers))
    return out


def save_corpus(directory, studies, grid: VoxelGrid) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, st in enumerate(studies):
        s = st.sample
        io.write_volume(d / f"{i:04d}_histo.hvol", Volume(s.histo, grid, "counts"))
        io.write_volume(d / f"{i:04d}_mu.hvol", Volume(s.mu, grid, "1/mm"))
        io.write_volume(d / f"{i:04d}_target.hvol", Volume(s.target, grid, "Bq/ml"))
        if st.low_dose_histo is not None:
            io.write_volume(d / f"{i:04d}_histo_low.hvol", Volume(st.low_dose_histo, grid, "counts"))


def load_corpus(directory, low_dose: bool = False) -> list:
    """Read ``NNNN_{histo,mu,target}.hvol`` triples in index order."""
    d = Path(directory)
    names = sorted(p.name[:4] for p in d.glob("*_target.hvol"))
    if not names:
        raise io.DataError(f"{directory}: no *_target.hvol files")
    out = []
    for n in names:
        histo = io.read_volume(d / f"{n}_histo{'_low' if low_dose else ''}.hvol")
        mu = io.read_volume(d / f"{n}_mu.hvol")
        target = io.read_volume(d / f"{n}_target.hvol")
        out.append(TrainingSample.from_volumes(histo, mu, target))
    return out
