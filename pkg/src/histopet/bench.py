"""Throughput benchmarks: histogramming events/s per worker count, seconds per reconstruction."""

from __future__ import annotations

import logging
import os
import statistics
import time

import numpy as np

from .geometry import ScannerGeometry, VoxelGrid
from .histogram import HistogramConfig, histogram
from .network import Model
from .reconstruct import reconstruct

log = logging.getLogger(__name__)


def bench_histogram(events, geometry: ScannerGeometry, grid: VoxelGrid, efficiencies=None,
                    workers=(1, 2, 4), repeats: int = 3) -> dict:
    """Median events/s for each worker count (after one warm-up pass)."""
    histogram(events[: min(len(events), 1000)], geometry, grid, efficiencies)  # compile
    out = {}
    for w in workers:
        rates = []
        for _ in range(repeats):
            h = histogram(events, geometry, grid, efficiencies, HistogramConfig(worker_count=w))
            rates.append(len(events) / h.seconds)
        out[int(w)] = statistics.median(rates)
    ordered = [out[w] for w in sorted(out)]
    if any(b < a for a, b in zip(ordered, ordered[1:])):
        log.warning("events/s not monotone in worker count: %s (cpu count %s)",
                    {w: round(r) for w, r in out.items()}, os.cpu_count())
    return out


def bench_reconstruct(model: Model, shape=(96, 128, 128), repeats: int = 5, chunk_depth=None,
                      seed: int = 0) -> dict:
    """Median wall-clock seconds to reconstruct a random volume of ``shape``."""
    rng = np.random.default_rng(seed)
    histo = rng.poisson(5.0, size=shape).astype(np.float32)
    mu = np.full(shape, 0.0096, dtype=np.float32)
    times = []
    for _ in range(repeats):
        _, s = reconstruct(model, histo, mu, chunk_depth)
        times.append(s)
    return {"shape": list(shape), "repeats": repeats, "seconds": times,
            "median_seconds": statistics.median(times)}


def run_bench(events, geometry, grid, model: Model | None, efficiencies=None, workers=(1, 2, 4),
              repeats: int = 3, recon_shape=(96, 128, 128), recon_repeats: int = 5,
              chunk_depth=None) -> dict:
    t0 = time.perf_counter()
    report = {
        "events": int(len(events)),
        "cpu_count": os.cpu_count(),
        "histogram_events_per_second": {str(k): v for k, v in
                                        bench_histogram(events, geometry, grid, efficiencies,
                                                        workers, repeats).items()},
    }
    if model is not None:
        report["reconstruction"] = bench_reconstruct(model, recon_shape, recon_repeats, chunk_depth)
    report["wall_seconds"] = time.perf_counter() - t0
    return report
