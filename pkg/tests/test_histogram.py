import numpy as np
import pytest

from histopet.geometry import DegenerateLORError, ScannerGeometry, VoxelGrid, voxel_of_point
from histopet.histogram import (HistogramConfig, HistoImage, InvalidEfficiencyError, histogram,
                                merge_partials, mlap_position)
from histopet.simulate import EfficiencyTable, make_events
from histopet.volume import IncompatibleGridError


def _brute_force(events, geometry, grid, eff):
    # independent per-event loop: MLAP, nearest voxel, signed 1/(e1 e2) weight
    out = np.zeros(grid.dims)
    table = geometry.crystal_table()
    skipped = 0
    for e in events:
        p1 = table[e["ring1"], e["crystal1"]]
        p2 = table[e["ring2"], e["crystal2"]]
        u = (p1 - p2) / np.linalg.norm(p1 - p2)
        p = 0.5 * (p1 + p2) + 0.5 * 0.299792458 * float(e["delta_t"]) * u
        v = voxel_of_point(grid, p)
        if v is None:
            skipped += 1
            continue
        w = 1.0 / (eff[e["ring1"], e["crystal1"]] * eff[e["ring2"], e["crystal2"]])
        out[v] += w if e["flags"] & 1 else -w
    return out, skipped


def test_matches_brute_force(small_events, geometry, grid, efficiencies):
    ev = small_events[:4000]
    h = histogram(ev, geometry, grid, efficiencies)
    ref, skipped = _brute_force(ev, geometry, grid, efficiencies.values)
    np.testing.assert_allclose(h.values, ref, rtol=1e-12, atol=1e-12)
    assert h.skipped == skipped
    assert h.prompts_used + h.delays_used + h.skipped == len(ev)


def test_delays_subtract(geometry, grid):
    ev = make_events([4, 4], [0, 0], [4, 4], [288, 288], [0.0, 0.0], [True, False])
    h = histogram(ev, geometry, grid)
    assert h.values.sum() == 0.0 and h.prompts_used == 1 and h.delays_used == 1


def test_worker_count_does_not_change_bytes(small_events, geometry, grid, efficiencies):
    ev = np.concatenate([small_events] * 12)  # several blocks
    base = histogram(ev, geometry, grid, efficiencies).values.tobytes()
    for w in (2, 3):
        assert histogram(ev, geometry, grid, efficiencies,
                         HistogramConfig(worker_count=w)).values.tobytes() == base


def test_unweighted_counts_are_integers(small_events, geometry, grid, efficiencies):
    h = histogram(small_events, geometry, grid, efficiencies, HistogramConfig(efficiency_weighting=False))
    np.testing.assert_array_equal(h.values, np.round(h.values))
    assert h.values.sum() == h.prompts_used - h.delays_used


def test_empty_stream(geometry, grid):
    h = histogram(make_events([], [], [], [], [], []), geometry, grid)
    assert not h.values.any() and h.prompts_used == 0


def test_bad_inputs(geometry, grid):
    ev = make_events([0], [0], [0], [0], [0.0], [True])
    with pytest.raises(DegenerateLORError):
        histogram(ev, geometry, grid)
    bad = np.ones((geometry.num_rings, geometry.crystals_per_ring))
    bad[0, 0] = 0.0
    with pytest.raises(InvalidEfficiencyError):
        histogram(ev, geometry, grid, bad)
    with pytest.raises(InvalidEfficiencyError):
        histogram(ev, geometry, grid, np.ones((2, 2)))
    with pytest.raises(ValueError):
        histogram(make_events([99], [0], [0], [1], [0.0], [True]), geometry, grid)


def test_mlap_vectorised_and_degenerate():
    p1 = np.array([[10.0, 0, 0], [0, 10.0, 0]])
    p2 = -p1
    np.testing.assert_allclose(mlap_position(p1, p2, [0.0, 0.0]), 0.0)
    with pytest.raises(DegenerateLORError):
        mlap_position([1.0, 0, 0], [1.0, 0, 0], 0.0)


def test_merge_partials_in_order(grid):
    a = HistoImage(grid, np.full(grid.dims, 1.0), 1, 0, 0)
    b = HistoImage(grid, np.full(grid.dims, 2.0), 2, 1, 3)
    m = merge_partials([a, b])
    assert m.values[0, 0, 0] == 3.0 and (m.prompts_used, m.delays_used, m.skipped) == (3, 1, 3)
    other = VoxelGrid((2, 2, 2))
    with pytest.raises(IncompatibleGridError):
        merge_partials([a, HistoImage(other, np.zeros((2, 2, 2)))])
    with pytest.raises(ValueError):
        merge_partials([])


def test_to_volume(small_events, geometry, grid):
    vol = histogram(small_events, geometry, grid).to_volume()
    assert vol.grid == grid and vol.unit == "counts"
