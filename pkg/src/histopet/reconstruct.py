"""Whole-volume inference, optionally in overlapping axial chunks."""

from __future__ import annotations

import time

import numpy as np

from .autodiff import ShapeError
from .network import Model, predict
from .volume import Volume, require_same_grid


def chunk_ranges(depth: int, chunk_depth: int, overlap: int):
    """Start/stop pairs covering ``[0, depth)``; neighbors share at least ``overlap`` slices."""
    if chunk_depth >= depth:
        return [(0, depth)]
    overlap = min(max(overlap, 0), chunk_depth - 1)
    step = chunk_depth - overlap
    starts = list(range(0, depth - chunk_depth, step)) + [depth - chunk_depth]
    return [(s, s + chunk_depth) for s in sorted(set(starts))]


def blend_weights(start: int, stop: int, depth: int, overlap: int) -> np.ndarray:
    """Linear ramps toward chunk ends that are interior to the volume, 1 elsewhere."""
    n = stop - start
    w = np.ones(n)
    ramp = np.arange(1, overlap + 1) / (overlap + 1)
    if overlap > 0:
        if start > 0:
            w[:min(overlap, n)] = np.minimum(w[:min(overlap, n)], ramp[:n])
        if stop < depth:
            w[-min(overlap, n):] = np.minimum(w[-min(overlap, n):], ramp[::-1][-n:])
    return w


def reconstruct(model: Model, histo: np.ndarray, mu: np.ndarray, chunk_depth: int | None = None,
                overlap: int | None = None, dtype=np.float32):
    """Predict activity for a (d, h, w) pair; returns ``(volume, seconds)``.

    Chunks are predicted independently and averaged with linear weights in
    their overlaps.  The default overlap is a quarter of the chunk depth.
    """
    histo = np.asarray(histo)
    mu = np.asarray(mu)
    if histo.shape != mu.shape or histo.ndim != 3:
        raise ShapeError(f"histo {histo.shape} and mu {mu.shape} must be equal (d, h, w)")
    d, h, w = histo.shape
    div = model.config.divisor
    if h % div or w % div:
        raise ShapeError(f"height and width must be divisible by {div}, got {h}x{w}")
    t0 = time.perf_counter()
    chunk_depth = d if not chunk_depth else int(chunk_depth)
    if overlap is None:
        overlap = max(1, chunk_depth // 4)
    ranges = chunk_ranges(d, chunk_depth, overlap)
    if len(ranges) == 1:
        out = predict(model, histo, mu, dtype).astype(np.float32)
        return out, time.perf_counter() - t0
    acc = np.zeros((d, h, w))
    wsum = np.zeros(d)
    for start, stop in ranges:
        pred = predict(model, histo[start:stop], mu[start:stop], dtype)
        wt = blend_weights(start, stop, d, overlap)
        acc[start:stop] += wt[:, None, None] * pred
        wsum[start:stop] += wt
    out = (acc / wsum[:, None, None]).astype(np.float32)
    return out, time.perf_counter() - t0


def reconstruct_volume(model: Model, histo: Volume, mu: Volume, chunk_depth=None):
    grid = require_same_grid(histo, mu)
    out, seconds = reconstruct(model, histo.data, mu.data, chunk_depth)
    return Volume(out, grid, "Bq/ml"), seconds
