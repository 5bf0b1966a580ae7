"""Joint coverage objective with union semantics.

A target is covered when it lies in the footprint of at least one robot's
post-action position; overlapping footprints count each target once.
Targets on the footprint boundary (Chebyshev distance exactly equal to the
sensing range) count as covered.

Planning on predicted maps uses :func:`mass_coverage`, which sums per-cell
mass over the union of footprints; evaluation always scores true targets
via :func:`coverage`.
"""
from __future__ import annotations

import numpy as np

from .world import N_ACTIONS, TargetSet, WorldParams, apply_action, footprint_bounds

# An assignment maps robot index -> action index, at most one per robot.
Assignment = dict[int, int]


def covered_mask(
    robots: np.ndarray,
    targets: TargetSet,
    assignment: Assignment,
    params: WorldParams,
) -> np.ndarray:
    """Boolean mask over targets covered by the joint assignment."""
    cells = targets.cells()
    mask = np.zeros(len(targets), dtype=bool)
    for robot, action in assignment.items():
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"invalid action index {action}")
        x, y = apply_action(robots[robot], action, params)
        r = params.sensing_range
        mask |= (np.abs(cells[:, 0] - x) <= r) & (np.abs(cells[:, 1] - y) <= r)
    return mask


def coverage(
    robots: np.ndarray,
    targets: TargetSet,
    assignment: Assignment,
    params: WorldParams,
) -> int:
    """Number of distinct targets covered by the joint assignment."""
    if len(set(assignment)) != len(assignment):
        raise ValueError("duplicate robot in assignment")
    return int(covered_mask(robots, targets, assignment, params).sum())


def marginal_gain(
    robots: np.ndarray,
    targets: TargetSet,
    base: Assignment,
    candidate: tuple[int, int],
    params: WorldParams,
) -> int:
    """coverage(base + candidate) - coverage(base)."""
    robot, action = candidate
    if robot in base:
        raise ValueError(f"robot {robot} already assigned in base")
    extended = dict(base)
    extended[robot] = action
    return coverage(robots, targets, extended, params) - coverage(robots, targets, base, params)


def mass_coverage(
    field: np.ndarray,
    robots: np.ndarray,
    assignment: Assignment,
    params: WorldParams,
) -> float:
    """Total field mass inside the union of post-action footprints.

    For a count map this equals :func:`coverage`; for a predicted
    occupancy map it is the planner's belief of targets covered.
    """
    g = params.grid_size
    claimed = np.zeros((g, g), dtype=bool)
    for robot, action in assignment.items():
        x0, x1, y0, y1 = footprint_bounds(
            apply_action(robots[robot], action, params), params.sensing_range, g
        )
        claimed[x0 : x1 + 1, y0 : y1 + 1] = True
    return float(np.asarray(field, dtype=np.float64)[claimed].sum())
