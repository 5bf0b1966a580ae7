"""Classical planners behind a single interface.

* expert: centralized sequential greedy with global target information.
* bruteforce: exhaustive joint-action search, usable only on small teams;
  serves as the optimality oracle.
* dg: decentralized greedy; each robot runs the greedy over the clique of
  itself plus its 1-hop neighbors, on local coverage maps only.
* random: uniform action per robot, the floor baseline.

Tie-breaking everywhere: lowest robot index first, then action order
north, south, east, west, stay.  This makes every planner except random
seed-free deterministic, which is what makes imitation labels reproducible.

Latency model: centralized planners report wall-clock for the whole plan;
decentralized planners report each robot's own computation time, and the
team latency is the max over robots (parallel execution).
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .comms import CommGraph
from .objective import Assignment
from .world import (
    N_ACTIONS,
    CoverageMap,
    RobotState,
    TargetSet,
    WorldParams,
    apply_action,
    footprint_bounds,
)


@dataclass
class PlannerInput:
    """Everything a planner may look at; decentralized planners must only
    touch local_maps and the graph."""

    params: WorldParams
    robots: RobotState
    graph: CommGraph
    local_maps: list[CoverageMap] = field(default_factory=list)
    targets: TargetSet | None = None  # global truth; expert/bruteforce only

    @property
    def n_robots(self) -> int:
        return len(self.robots)


@dataclass
class PlanResult:
    actions: list[int]  # one per robot, indexed by robot
    per_robot_s: list[float]
    total_s: float
    planner: str

    @property
    def assignment(self) -> Assignment:
        return dict(enumerate(self.actions))

    @property
    def decentralized_latency_s(self) -> float:
        return max(self.per_robot_s) if self.per_robot_s else self.total_s


def _target_in_footprint(inp: PlannerInput) -> np.ndarray:
    """(N, A, T) bool: target t inside footprint of robot i after action a."""
    cells = inp.targets.cells()
    n, r = inp.n_robots, inp.params.sensing_range
    out = np.zeros((n, N_ACTIONS, len(cells)), dtype=bool)
    for i in range(n):
        for a in range(N_ACTIONS):
            x, y = apply_action(inp.robots.positions[i], a, inp.params)
            out[i, a] = (np.abs(cells[:, 0] - x) <= r) & (np.abs(cells[:, 1] - y) <= r)
    return out


def expert_plan(inp: PlannerInput) -> PlanResult:
    """Centralized sequential greedy over (robot, action) pairs.

    Each round evaluates the marginal gain of every unassigned pair against
    the targets not yet covered, takes the best pair, and removes that robot
    and the newly covered targets.  O(n^2) pair evaluations for n robots.
    """
    if inp.targets is None:
        raise ValueError("expert_plan requires global target information")
    t0 = time.perf_counter()
    in_foot = _target_in_footprint(inp)
    n = inp.n_robots
    uncovered = np.ones(len(inp.targets), dtype=bool)
    actions = [-1] * n
    unassigned = list(range(n))
    for _ in range(n):
        best = None  # (gain, robot, action)
        for i in unassigned:
            for a in range(N_ACTIONS):
                gain = int(np.count_nonzero(in_foot[i, a] & uncovered))
                if best is None or gain > best[0]:
                    best = (gain, i, a)
        _, i, a = best
        actions[i] = a
        unassigned.remove(i)
        uncovered &= ~in_foot[i, a]
    total = time.perf_counter() - t0
    return PlanResult(actions=actions, per_robot_s=[], total_s=total, planner="expert")


def brute_force_plan(inp: PlannerInput, max_joint_actions: int = 10**6) -> PlanResult:
    """Exhaustive maximization over all joint actions (small teams only).

    Deterministic tie-break: the lexicographically smallest action tuple
    among maximizers (strict improvement required to switch).
    """
    if inp.targets is None:
        raise ValueError("brute_force_plan requires global target information")
    n = inp.n_robots
    if N_ACTIONS**n > max_joint_actions:
        raise ValueError(
            f"instance too large for brute force: {N_ACTIONS}^{n} joint actions "
            f"exceeds the guard of {max_joint_actions}"
        )
    t0 = time.perf_counter()
    in_foot = _target_in_footprint(inp)
    best_actions = None
    best_cov = -1
    for joint in itertools.product(range(N_ACTIONS), repeat=n):
        covered = np.zeros(len(inp.targets), dtype=bool)
        for i, a in enumerate(joint):
            covered |= in_foot[i, a]
        cov = int(covered.sum())
        if cov > best_cov:
            best_cov = cov
            best_actions = joint
    total = time.perf_counter() - t0
    return PlanResult(
        actions=list(best_actions), per_robot_s=[], total_s=total, planner="bruteforce"
    )


def _clique_greedy(
    inp: PlannerInput, members: list[int], fields: dict[int, np.ndarray]
) -> Assignment:
    """Sequential greedy over one clique using claimed-cell mass semantics.

    Each member's gains are evaluated on its own local map; cells claimed by
    earlier picks contribute nothing, which reproduces the count-each-target-
    once rule exactly when the maps are ground-truth counts.
    """
    g = inp.params.grid_size
    unclaimed = np.ones((g, g), dtype=np.float64)
    assigned: Assignment = {}
    remaining = sorted(members)
    for _ in range(len(members)):
        best = None  # (gain, robot, action)
        for j in remaining:
            fj = fields[j]
            for a in range(N_ACTIONS):
                x0, x1, y0, y1 = footprint_bounds(
                    apply_action(inp.robots.positions[j], a, inp.params),
                    inp.params.sensing_range,
                    g,
                )
                gain = float(
                    (fj[x0 : x1 + 1, y0 : y1 + 1] * unclaimed[x0 : x1 + 1, y0 : y1 + 1]).sum()
                )
                if best is None or gain > best[0]:
                    best = (gain, j, a)
        _, j, a = best
        assigned[j] = a
        remaining.remove(j)
        x0, x1, y0, y1 = footprint_bounds(
            apply_action(inp.robots.positions[j], a, inp.params), inp.params.sensing_range, g
        )
        unclaimed[x0 : x1 + 1, y0 : y1 + 1] = 0.0
    return assigned


def dg_plan(inp: PlannerInput) -> PlanResult:
    """Decentralized greedy: robot i runs the sequential greedy over
    {i} + neighbors(i) on those robots' local maps and keeps its own slot.

    Each robot's computation consumes only 1-hop information, so the
    per-robot times are the honest decentralized cost.
    """
    if len(inp.local_maps) != inp.n_robots:
        raise ValueError("dg_plan needs one local map per robot")
    n = inp.n_robots
    actions = [-1] * n
    per_robot = [0.0] * n
    fields = {i: np.asarray(m.grid, dtype=np.float64) for i, m in enumerate(inp.local_maps)}
    for i in range(n):
        t0 = time.perf_counter()
        members = [i] + list(inp.graph.neighbors(i))
        assigned = _clique_greedy(inp, members, {j: fields[j] for j in members})
        actions[i] = assigned[i]
        per_robot[i] = time.perf_counter() - t0
    return PlanResult(actions=actions, per_robot_s=per_robot, total_s=sum(per_robot), planner="dg")


def random_plan(inp: PlannerInput, seed: int) -> PlanResult:
    """Uniform action per robot; the only seeded planner."""
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    actions = rng.integers(0, N_ACTIONS, size=inp.n_robots).tolist()
    total = time.perf_counter() - t0
    return PlanResult(actions=actions, per_robot_s=[], total_s=total, planner="random")


PLANNER_NAMES = ("expert", "dg", "random", "bruteforce", "d2coplan")


def get_planner(name: str, *, seed: int = 0, model=None):
    """Resolve a planner name to a callable PlannerInput -> PlanResult.

    ``d2coplan`` needs a trained model (see covplan.d2coplan); the seed only
    affects ``random``.
    """
    if name == "expert":
        return expert_plan
    if name == "bruteforce":
        return brute_force_plan
    if name == "dg":
        return dg_plan
    if name == "random":
        return lambda inp: random_plan(inp, seed)
    if name == "d2coplan":
        if model is None:
            raise ValueError("planner 'd2coplan' requires trained weights")
        return model.plan_input
    raise ValueError(f"unknown planner {name!r}; choose from {PLANNER_NAMES}")
