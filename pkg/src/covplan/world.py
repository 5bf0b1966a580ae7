"""Grid world: target density generation, target motion, robot motion
primitives, sensing footprints, and local coverage-map extraction.

Conventions, fixed once so every downstream result is reproducible:

* Coordinates are ``(x, y)`` with east = +x and north = +y.
* Grid arrays are indexed ``[x, y]``, so ``grid[3, 7]`` is the cell at
  x=3, y=7.
* Robots occupy integer cells in ``[0, G-1]`` per axis.  Targets move
  continuously in ``[0, G)`` and belong to cell ``(floor(x), floor(y))``.
* Robot actions clamp at the grid edge (partial moves allowed); targets
  reflect elastically off the walls.

All operations are pure functions of their inputs; anything random takes
an explicit seed and is bit-reproducible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCENARIO_FORMAT = "covplan-scenario/1"

# Motion primitives, in fixed tie-break order.
ACTION_NAMES = ("north", "south", "east", "west", "stay")
N_ACTIONS = len(ACTION_NAMES)
NORTH, SOUTH, EAST, WEST, STAY = range(N_ACTIONS)
_ACTION_UNIT = np.array([(0, 1), (0, -1), (1, 0), (-1, 0), (0, 0)], dtype=np.int64)


@dataclass(frozen=True)
class WorldParams:
    """World geometry and sensing/communication ranges (units: grid cells)."""

    grid_size: int = 100
    sensing_range: int = 6
    step_distance: int = 20
    comm_range: float = 20.0
    fill_fraction: float = 0.15

    def __post_init__(self):
        if self.grid_size < 2:
            raise ValueError(f"grid_size must be >= 2, got {self.grid_size}")
        for name in ("sensing_range", "step_distance", "comm_range"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.step_distance + self.sensing_range >= self.grid_size:
            raise ValueError(
                "step_distance + sensing_range must be < grid_size "
                f"({self.step_distance} + {self.sensing_range} >= {self.grid_size})"
            )
        if not 0.0 < self.fill_fraction <= 1.0:
            raise ValueError(f"fill_fraction must be in (0, 1], got {self.fill_fraction}")

    @property
    def window_halfwidth(self) -> int:
        """Chebyshev half-width of a robot's reachable sensing window."""
        return self.step_distance + self.sensing_range


@dataclass(frozen=True)
class DensityGenConfig:
    """Knobs for the Gaussian-mixture target density."""

    components_range: tuple[int, int] = (10, 30)
    stddev_choices: tuple[float, ...] = (20.0, 30.0, 40.0, 50.0)
    invert_prob: float = 0.3
    max_retries: int = 100

    def scaled_to(self, grid_size: int, reference: int = 100) -> "DensityGenConfig":
        """Same mixture shape on a different grid size (stddevs rescaled)."""
        f = grid_size / reference
        return DensityGenConfig(
            components_range=self.components_range,
            stddev_choices=tuple(max(1.0, round(s * f)) for s in self.stddev_choices),
            invert_prob=self.invert_prob,
            max_retries=self.max_retries,
        )


@dataclass
class DensityField:
    """Categorical distribution over grid cells used to spawn targets."""

    probs: np.ndarray  # (G, G) float64, sums to 1
    n_components: int = 0
    retries: int = 0

    @property
    def grid_size(self) -> int:
        return self.probs.shape[0]


@dataclass
class TargetSet:
    """Point targets with per-axis linear velocities (cells/step)."""

    positions: np.ndarray   # (T, 2) float64 in [0, G)
    velocities: np.ndarray  # (T, 2) float64

    def __post_init__(self):
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def cells(self) -> np.ndarray:
        """Integer cell of each target, shape (T, 2)."""
        return np.floor(self.positions).astype(np.int64)


@dataclass
class RobotState:
    """Integer cell coordinates of the robot team, shape (N, 2)."""

    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("robot positions must have shape (N, 2)")

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass
class CoverageMap:
    """Nonnegative per-cell target mass (counts or predicted probability).

    ``window`` marks the inclusive rectangle (x0, x1, y0, y1) outside which
    the map is identically zero; None means the map is global.
    """

    grid: np.ndarray
    window: tuple[int, int, int, int] | None = None

    @property
    def grid_size(self) -> int:
        return self.grid.shape[0]


def _rng(seed, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def generate_density(
    params: WorldParams,
    gen_cfg: DensityGenConfig | None = None,
    seed: int = 0,
) -> DensityField:
    """Build a normalized Gaussian-mixture density over the grid.

    Sums K isotropic bumps (K uniform in components_range, means uniform on
    the grid, stddevs drawn from stddev_choices, each sign-flipped with
    invert_prob), clamps the sum at zero cell-wise, and normalizes.  If the
    clamped field is identically zero the draw is retried with an
    incremented sub-seed; the retry count is recorded on the result.
    """
    cfg = gen_cfg or DensityGenConfig()
    g = params.grid_size
    coords = np.arange(g, dtype=np.float64) + 0.5
    xs, ys = np.meshgrid(coords, coords, indexing="ij")
    for attempt in range(cfg.max_retries + 1):
        rng = _rng(seed, attempt)
        k = int(rng.integers(cfg.components_range[0], cfg.components_range[1] + 1))
        means = rng.uniform(0.0, g, size=(k, 2))
        stds = rng.choice(np.asarray(cfg.stddev_choices, dtype=np.float64), size=k)
        signs = np.where(rng.random(k) < cfg.invert_prob, -1.0, 1.0)
        total = np.zeros((g, g), dtype=np.float64)
        for i in range(k):
            d2 = (xs - means[i, 0]) ** 2 + (ys - means[i, 1]) ** 2
            total += signs[i] * np.exp(-d2 / (2.0 * stds[i] ** 2))
        total = np.maximum(total, 0.0)
        mass = total.sum()
        if mass > 0.0:
            return DensityField(probs=total / mass, n_components=k, retries=attempt)
    raise RuntimeError(
        f"density generation produced an all-zero field {cfg.max_retries + 1} times "
        f"(seed={seed}); check invert_prob={cfg.invert_prob}"
    )


def sample_targets(
    density: DensityField,
    params: WorldParams,
    seed: int = 0,
    speed_range: tuple[float, float] = (-2.0, 2.0),
) -> TargetSet:
    """Spawn ``floor(fill_fraction * G^2)`` targets on distinct cells.

    Cells are drawn without replacement proportionally to the density;
    each target sits at its cell center and gets a per-axis velocity
    drawn uniformly from ``speed_range``.
    """
    g = params.grid_size
    count = int(np.floor(params.fill_fraction * g * g))
    if count == 0:
        empty = np.zeros((0, 2), dtype=np.float64)
        return TargetSet(positions=empty, velocities=empty.copy())
    n_positive = int(np.count_nonzero(density.probs > 0.0))
    if count > n_positive:
        raise ValueError(
            f"cannot place {count} targets: density has only {n_positive} cells "
            f"with positive probability (fill_fraction={params.fill_fraction}, G={g})"
        )
    rng = _rng(seed)
    flat = density.probs.ravel()
    idx = rng.choice(g * g, size=count, replace=False, p=flat / flat.sum())
    positions = np.stack([idx // g, idx % g], axis=1).astype(np.float64) + 0.5
    velocities = rng.uniform(speed_range[0], speed_range[1], size=(count, 2))
    return TargetSet(positions=positions, velocities=velocities)


def step_targets(targets: TargetSet, params: WorldParams) -> TargetSet:
    """Advance every target by its velocity, reflecting off the walls.

    Reflection is elastic: the overshoot is mirrored back into the grid and
    the velocity component along that axis is negated.  A target landing
    exactly on the far wall is nudged to the largest representable
    coordinate below G so positions stay in [0, G).
    """
    g = float(params.grid_size)
    pos = targets.positions + targets.velocities
    vel = targets.velocities.copy()
    # Iterated bouncing: same operation sequence as the scalar reference,
    # so results are bit-identical to it.
    while True:
        neg = pos < 0.0
        over = pos > g
        if not (neg.any() or over.any()):
            break
        pos = np.where(neg, -pos, pos)
        pos = np.where(over, 2.0 * g - pos, pos)
        flip = neg | over
        vel = np.where(flip, -vel, vel)
    wall = pos == g
    if wall.any():
        pos = np.where(wall, np.nextafter(g, 0.0), pos)
        vel = np.where(wall, -vel, vel)
    return TargetSet(positions=pos, velocities=vel)


def apply_action(robot_pos, action: int, params: WorldParams):
    """Post-action cell for one robot: displacement of step_distance along
    the action's axis, clamped to the grid."""
    dx, dy = _ACTION_UNIT[action] * params.step_distance
    x = min(max(int(robot_pos[0]) + int(dx), 0), params.grid_size - 1)
    y = min(max(int(robot_pos[1]) + int(dy), 0), params.grid_size - 1)
    return (x, y)


def footprint_bounds(center, sensing_range: int, grid_size: int) -> tuple[int, int, int, int]:
    """Inclusive (x0, x1, y0, y1) of the Chebyshev ball around center,
    intersected with the grid."""
    cx, cy = int(center[0]), int(center[1])
    return (
        max(0, cx - sensing_range),
        min(grid_size - 1, cx + sensing_range),
        max(0, cy - sensing_range),
        min(grid_size - 1, cy + sensing_range),
    )


def footprint(center, sensing_range: int, grid_size: int) -> set[tuple[int, int]]:
    """Cells within Chebyshev distance sensing_range of center, on-grid."""
    x0, x1, y0, y1 = footprint_bounds(center, sensing_range, grid_size)
    return {(x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1)}


def window_bounds(robot_pos, params: WorldParams) -> tuple[int, int, int, int]:
    """Inclusive bounds of a robot's reachable window: the union of
    footprints reachable by any single primitive (half-width d_s + r_s)."""
    return footprint_bounds(robot_pos, params.window_halfwidth, params.grid_size)


def rasterize_targets(targets: TargetSet, grid_size: int, binary: bool = False) -> np.ndarray:
    """Per-cell target counts (or occupancy if binary), shape (G, G) float32."""
    grid = np.zeros((grid_size, grid_size), dtype=np.float32)
    if len(targets):
        cells = targets.cells()
        np.add.at(grid, (cells[:, 0], cells[:, 1]), 1.0)
    if binary:
        grid = (grid > 0).astype(np.float32)
    return grid


def local_coverage_map(global_map, robot_pos, params: WorldParams) -> CoverageMap:
    """Mask a global coverage map to one robot's reachable window.

    The result equals the global map inside the window and is exactly zero
    outside; the window bounds are recorded on the returned map.
    """
    grid = global_map.grid if isinstance(global_map, CoverageMap) else np.asarray(global_map)
    x0, x1, y0, y1 = window_bounds(robot_pos, params)
    masked = np.zeros_like(grid)
    masked[x0 : x1 + 1, y0 : y1 + 1] = grid[x0 : x1 + 1, y0 : y1 + 1]
    return CoverageMap(grid=masked, window=(x0, x1, y0, y1))


def sample_robots(params: WorldParams, n_robots: int, seed: int = 0) -> RobotState:
    """Place n_robots on distinct uniformly random cells."""
    g = params.grid_size
    if n_robots > g * g:
        raise ValueError(f"cannot place {n_robots} robots on a {g}x{g} grid")
    rng = _rng(seed)
    idx = rng.choice(g * g, size=n_robots, replace=False)
    return RobotState(positions=np.stack([idx // g, idx % g], axis=1))


def save_scenario(
    path,
    params: WorldParams,
    robots: RobotState,
    targets: TargetSet,
    density_seed: int,
) -> None:
    """Write one scenario instance as versioned JSON (exact float round-trip)."""
    doc = {
        "format": SCENARIO_FORMAT,
        "params": {
            "grid_size": params.grid_size,
            "sensing_range": params.sensing_range,
            "step_distance": params.step_distance,
            "comm_range": params.comm_range,
            "fill_fraction": params.fill_fraction,
        },
        "density_seed": density_seed,
        "robots": robots.positions.tolist(),
        "targets": {
            "positions": targets.positions.tolist(),
            "velocities": targets.velocities.tolist(),
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_scenario(path):
    """Inverse of save_scenario; returns (params, robots, targets, density_seed)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SCENARIO_FORMAT:
        raise ValueError(f"unsupported scenario format: {doc.get('format')!r}")
    params = WorldParams(**doc["params"])
    robots = RobotState(positions=np.asarray(doc["robots"], dtype=np.int64))
    tpos = np.asarray(doc["targets"]["positions"], dtype=np.float64).reshape(-1, 2)
    tvel = np.asarray(doc["targets"]["velocities"], dtype=np.float64).reshape(-1, 2)
    targets = TargetSet(positions=tpos, velocities=tvel)
    return params, robots, targets, doc["density_seed"]
