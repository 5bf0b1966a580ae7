import numpy as np
import pytest

from covplan.objective import coverage, marginal_gain, mass_coverage
from covplan.world import (
    EAST,
    N_ACTIONS,
    STAY,
    TargetSet,
    WorldParams,
    apply_action,
    footprint,
    rasterize_targets,
)

PARAMS = WorldParams(grid_size=20, sensing_range=2, step_distance=4, comm_range=8.0)


def _targets(*cells):
    pos = np.array(cells, dtype=float) + 0.5
    return TargetSet(positions=pos, velocities=np.zeros_like(pos))


def test_empty_assignment_zero():
    robots = np.array([(5, 5)])
    assert coverage(robots, _targets((5, 5), (6, 6)), {}, PARAMS) == 0


def test_single_robot_counts_inside():
    robots = np.array([(5, 5)])
    targets = _targets((5, 5), (6, 6), (4, 4), (15, 15))
    assert coverage(robots, targets, {0: STAY}, PARAMS) == 3


def test_overlap_counted_once():
    # both robots' post-action footprints contain the same 2 targets and one
    # covers 1 extra: union gives 3, not 5
    robots = np.array([(5, 5), (7, 5)])
    targets = _targets((6, 5), (6, 6), (3, 5))
    a = {0: STAY, 1: STAY}
    cov = coverage(robots, targets, a, PARAMS)
    foot0 = footprint((5, 5), 2, 20)
    foot1 = footprint((7, 5), 2, 20)
    union = {tuple(c) for c in targets.cells()} & (foot0 | foot1)
    assert cov == len(union) == 3


def test_boundary_target_covered():
    robots = np.array([(5, 5)])
    targets = _targets((7, 7))  # Chebyshev distance exactly r_s = 2
    assert coverage(robots, targets, {0: STAY}, PARAMS) == 1


def test_marginal_gain_empty_base():
    robots = np.array([(5, 5)])
    targets = _targets((5, 5), (6, 6))
    gain = marginal_gain(robots, targets, {}, (0, STAY), PARAMS)
    assert gain == coverage(robots, targets, {0: STAY}, PARAMS)


def test_marginal_gain_absorbed_by_base():
    robots = np.array([(5, 5), (5, 5)])
    targets = _targets((5, 5), (6, 6))
    base = {0: STAY}
    assert marginal_gain(robots, targets, base, (1, STAY), PARAMS) == 0


def test_marginal_gain_duplicate_robot_rejected():
    robots = np.array([(5, 5)])
    with pytest.raises(ValueError):
        marginal_gain(robots, _targets((5, 5)), {0: STAY}, (0, EAST), PARAMS)


def test_marginal_gain_matches_recomputation():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = 4
        robots = rng.integers(0, 20, (n, 2))
        cells = rng.integers(0, 20, (30, 2))
        targets = _targets(*map(tuple, cells))
        k = int(rng.integers(0, n))
        base = {i: int(rng.integers(0, N_ACTIONS)) for i in range(k)}
        cand = (k, int(rng.integers(0, N_ACTIONS)))
        gain = marginal_gain(robots, targets, base, cand, PARAMS)
        with_c = dict(base)
        with_c[cand[0]] = cand[1]
        assert gain == coverage(robots, targets, with_c, PARAMS) - coverage(
            robots, targets, base, PARAMS
        )


def _random_instance(rng, n_robots=4, n_targets=40):
    robots = rng.integers(0, 20, (n_robots, 2))
    cells = rng.integers(0, 20, (n_targets, 2))
    return robots, _targets(*map(tuple, cells))


def test_monotone_and_submodular():
    # diminishing returns over random nested assignment pairs
    rng = np.random.default_rng(1)
    for _ in range(300):
        robots, targets = _random_instance(rng)
        actions = rng.integers(0, N_ACTIONS, 4)
        base = {0: int(actions[0])}
        base_sup = {0: int(actions[0]), 1: int(actions[1]), 2: int(actions[2])}
        cand = (3, int(actions[3]))
        # monotonicity
        assert coverage(robots, targets, base_sup, PARAMS) >= coverage(
            robots, targets, base, PARAMS
        )
        # submodularity
        assert marginal_gain(robots, targets, base, cand, PARAMS) >= marginal_gain(
            robots, targets, base_sup, cand, PARAMS
        )


def test_upper_bound_union_of_windows():
    rng = np.random.default_rng(2)
    for _ in range(50):
        robots, targets = _random_instance(rng)
        assignment = {i: int(a) for i, a in enumerate(rng.integers(0, N_ACTIONS, 4))}
        cov = coverage(robots, targets, assignment, PARAMS)
        half = PARAMS.window_halfwidth
        cells = targets.cells()
        visible = np.zeros(len(targets), dtype=bool)
        for r in robots:
            visible |= (np.abs(cells[:, 0] - r[0]) <= half) & (np.abs(cells[:, 1] - r[1]) <= half)
        assert cov <= int(visible.sum())


def test_mass_coverage_equals_count_coverage_on_truth():
    rng = np.random.default_rng(3)
    for _ in range(50):
        robots, targets = _random_instance(rng)
        field = rasterize_targets(targets, 20)
        assignment = {i: int(a) for i, a in enumerate(rng.integers(0, N_ACTIONS, 4))}
        assert mass_coverage(field, robots, assignment, PARAMS) == pytest.approx(
            coverage(robots, targets, assignment, PARAMS)
        )
