import json

import numpy as np
import pytest

from covplan.world import (
    EAST,
    N_ACTIONS,
    NORTH,
    STAY,
    DensityGenConfig,
    TargetSet,
    WorldParams,
    apply_action,
    footprint,
    footprint_bounds,
    generate_density,
    load_scenario,
    local_coverage_map,
    rasterize_targets,
    sample_robots,
    sample_targets,
    save_scenario,
    step_targets,
    window_bounds,
)

PAPER = WorldParams()  # G=100, r_s=6, d_s=20, r_c=20, fill=0.15
DESK = WorldParams(grid_size=32, sensing_range=3, step_distance=8, comm_range=12.0)


def test_params_validation():
    with pytest.raises(ValueError):
        WorldParams(grid_size=30, step_distance=25, sensing_range=6)
    with pytest.raises(ValueError):
        WorldParams(sensing_range=0)
    with pytest.raises(ValueError):
        WorldParams(fill_fraction=0.0)
    with pytest.raises(ValueError):
        WorldParams(fill_fraction=1.5)


class TestGenerateDensity:
    def test_normalized_and_nonnegative(self):
        field = generate_density(PAPER, seed=42)
        assert abs(field.probs.sum() - 1.0) <= 1e-9
        assert (field.probs >= 0).all()

    def test_deterministic(self):
        a = generate_density(PAPER, seed=42)
        b = generate_density(PAPER, seed=42)
        assert np.array_equal(a.probs, b.probs)
        assert a.n_components == b.n_components

    def test_component_count_range(self):
        # paper-stated range [10, 30], checked over many seeds
        counts = [generate_density(PAPER, seed=s).n_components for s in range(300)]
        assert min(counts) >= 10 and max(counts) <= 30
        # both endpoints should actually occur over this many draws
        assert 10 in counts and 30 in counts

    def test_all_inverted_retries(self):
        cfg = DensityGenConfig(invert_prob=1.0, max_retries=0)
        with pytest.raises(RuntimeError):
            generate_density(PAPER, cfg, seed=0)


class TestSampleTargets:
    def test_paper_fill_count(self):
        field = generate_density(PAPER, seed=1)
        targets = sample_targets(field, PAPER, seed=2)
        assert len(targets) == 1500  # 15% of 100*100

    def test_zero_fill_limit(self):
        params = WorldParams(grid_size=10, sensing_range=1, step_distance=2,
                             comm_range=3, fill_fraction=0.005)
        field = generate_density(params, DensityGenConfig().scaled_to(10), seed=0)
        targets = sample_targets(field, params, seed=0)
        assert len(targets) == 0

    def test_distinct_cells(self):
        field = generate_density(DESK, DensityGenConfig().scaled_to(32), seed=3)
        targets = sample_targets(field, DESK, seed=4)
        cells = {tuple(c) for c in targets.cells()}
        assert len(cells) == len(targets)

    def test_insufficient_support_raises(self):
        g = 10
        params = WorldParams(grid_size=g, sensing_range=1, step_distance=2,
                             comm_range=3, fill_fraction=0.5)
        probs = np.zeros((g, g))
        probs[0, :5] = 0.2  # only 5 positive cells, 50 targets wanted
        from covplan.world import DensityField

        with pytest.raises(ValueError, match="positive"):
            sample_targets(DensityField(probs=probs), params, seed=0)

    def test_uniform_sampling_chi_square(self):
        # frequency oracle: aggregated draws from a uniform density must be
        # uniform per cell (chi-square, p > 0.01)
        from scipy import stats

        g = 10
        params = WorldParams(grid_size=g, sensing_range=1, step_distance=2,
                             comm_range=3, fill_fraction=0.05)
        from covplan.world import DensityField

        uniform = DensityField(probs=np.full((g, g), 1.0 / (g * g)))
        counts = np.zeros(g * g)
        for s in range(2000):
            targets = sample_targets(uniform, params, seed=s)
            cells = targets.cells()
            np.add.at(counts, cells[:, 0] * g + cells[:, 1], 1)
        assert counts.sum() == 10_000
        _, p_value = stats.chisquare(counts)
        assert p_value > 0.01


def _reflect_scalar(x, v, g):
    # scalar reference for the reflection rule
    x = x + v
    while x < 0 or x > g:
        if x < 0:
            x, v = -x, -v
        else:
            x, v = 2 * g - x, -v
    if x == g:
        x, v = np.nextafter(g, 0.0), -v
    return x, v


class TestStepTargets:
    def test_zero_velocity_fixed_point(self):
        t = TargetSet(positions=np.array([[5.0, 5.0]]), velocities=np.zeros((1, 2)))
        t2 = step_targets(t, PAPER)
        assert np.array_equal(t2.positions, [[5.0, 5.0]])

    def test_linear_motion(self):
        t = TargetSet(positions=np.array([[5.0, 5.0]]), velocities=np.array([[2.0, -1.0]]))
        t2 = step_targets(t, PAPER)
        assert np.array_equal(t2.positions, [[7.0, 4.0]])
        assert np.array_equal(t2.velocities, [[2.0, -1.0]])

    def test_reflection_matches_scalar_oracle(self):
        t = TargetSet(positions=np.array([[99.5, 10.0]]), velocities=np.array([[1.0, 0.0]]))
        t2 = step_targets(t, PAPER)
        ox, ovx = _reflect_scalar(99.5, 1.0, 100.0)
        assert t2.positions[0, 0] == ox == 99.5
        assert t2.velocities[0, 0] == ovx == -1.0

    def test_many_random_against_oracle(self):
        rng = np.random.default_rng(0)
        g = 32.0
        pos = rng.uniform(0, g, size=(200, 2))
        vel = rng.uniform(-40, 40, size=(200, 2))  # large speeds: multiple bounces
        t2 = step_targets(TargetSet(positions=pos.copy(), velocities=vel.copy()), DESK)
        for i in range(200):
            for ax in range(2):
                ox, ov = _reflect_scalar(pos[i, ax], vel[i, ax], g)
                assert t2.positions[i, ax] == ox
                assert t2.velocities[i, ax] == ov
        assert (t2.positions >= 0).all() and (t2.positions < g).all()

    def test_count_conserved(self):
        field = generate_density(DESK, DensityGenConfig().scaled_to(32), seed=5)
        t = sample_targets(field, DESK, seed=6)
        assert len(step_targets(t, DESK)) == len(t)


class TestApplyAction:
    def test_north_moves_plus_y(self):
        assert apply_action((50, 50), NORTH, PAPER) == (50, 70)

    def test_stay(self):
        assert apply_action((50, 50), STAY, PAPER) == (50, 50)

    def test_clamped_at_edge(self):
        assert apply_action((95, 50), EAST, PAPER) == (99, 50)


class TestFootprint:
    def test_interior_size(self):
        assert len(footprint((50, 50), 6, 100)) == 13 * 13

    def test_corner_clipped(self):
        assert len(footprint((0, 0), 6, 100)) == 7 * 7

    def test_degenerate_range(self):
        assert footprint((50, 50), 0, 100) == {(50, 50)}

    def test_symmetry_under_square_group(self):
        # interior footprint invariant under the 8 symmetries about center
        cx, cy, r = 50, 50, 6
        cells = footprint((cx, cy), r, 100)
        rel = {(x - cx, y - cy) for x, y in cells}
        for sx, sy in [(1, 1), (1, -1), (-1, 1), (-1, -1)]:
            assert {(sx * a, sy * b) for a, b in rel} == rel
        assert {(b, a) for a, b in rel} == rel


class TestLocalCoverageMap:
    def test_masking_soundness(self):
        rng = np.random.default_rng(7)
        grid = rng.random((100, 100))
        local = local_coverage_map(grid, (50, 50), PAPER)
        x0, x1, y0, y1 = local.window
        assert (x0, x1, y0, y1) == (24, 76, 24, 76)  # half-width 26
        inside = local.grid[x0 : x1 + 1, y0 : y1 + 1]
        assert np.array_equal(inside, grid[x0 : x1 + 1, y0 : y1 + 1])
        outside = local.grid.copy()
        outside[x0 : x1 + 1, y0 : y1 + 1] = 0
        assert not outside.any()

    def test_window_boundary_membership(self):
        # Chebyshev distance 26 visible, 27 masked (d_s + r_s = 26)
        grid = np.zeros((100, 100))
        grid[50, 76] = 1.0
        grid[50, 77] = 1.0
        local = local_coverage_map(grid, (50, 50), PAPER)
        assert local.grid[50, 76] == 1.0
        assert local.grid[50, 77] == 0.0

    def test_zero_propagation(self):
        local = local_coverage_map(np.zeros((100, 100)), (10, 10), PAPER)
        assert not local.grid.any()


def test_rasterize_counts_and_binary():
    t = TargetSet(
        positions=np.array([[1.2, 1.8], [1.9, 1.1], [5.5, 5.5]]),
        velocities=np.zeros((3, 2)),
    )
    counts = rasterize_targets(t, 8)
    assert counts[1, 1] == 2.0 and counts[5, 5] == 1.0
    assert counts.sum() == 3.0
    binary = rasterize_targets(t, 8, binary=True)
    assert binary[1, 1] == 1.0 and binary.sum() == 2.0


def test_scenario_round_trip(tmp_path):
    field = generate_density(DESK, DensityGenConfig().scaled_to(32), seed=8)
    targets = sample_targets(field, DESK, seed=9)
    robots = sample_robots(DESK, 4, seed=10)
    path = tmp_path / "scenario.json"
    save_scenario(path, DESK, robots, targets, density_seed=8)
    params2, robots2, targets2, seed2 = load_scenario(path)
    assert params2 == DESK
    assert np.array_equal(robots2.positions, robots.positions)
    assert np.array_equal(targets2.positions, targets.positions)
    assert np.array_equal(targets2.velocities, targets.velocities)
    assert seed2 == 8
    doc = json.loads(path.read_text())
    assert doc["format"].startswith("covplan-scenario/")
