"""Seeded Monte-Carlo evaluation harness with paired trials.

Every planner in a comparison sees the bit-identical instance (same seed,
same index), and coverage is always scored against the true label-step
target positions regardless of what map the planner planned on.  Results
are per-trial CSV rows plus aggregate rows recomputed from them; columns
are documented in a version-stamped comment row.

Latencies: centralized planners report total wall-clock; decentralized
planners report the max over robots of that robot's own computation time.
Timing runs should be serial (``jobs=1``); warm-up trials are excluded and
the median of per-chunk means is reported next to the plain mean.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import HISTORY_STEPS, EpisodeRecord, build_episode
from .objective import coverage
from .planners import PlannerInput, get_planner
from .world import CoverageMap, DensityGenConfig, WorldParams, window_bounds

CSV_VERSION = "covplan-bench/1"

TRIAL_COLUMNS = (
    "row_type", "trial", "seed", "planner", "coverage", "expert_coverage",
    "relative_coverage", "latency_s", "latency_kind", "n_robots", "grid_size",
)

_COLUMN_DOC = (
    f"# {CSV_VERSION} row_type=trial|aggregate; coverage=targets covered; "
    "expert_coverage=expert on the same instance; relative_coverage=coverage/expert; "
    "latency_s: wall-clock for centralized planners, max per-robot time for "
    "decentralized ones (latency_kind says which); aggregate rows carry means "
    "over trials (trial=-1) plus sem_relative and median_of_means_latency_s"
)

AGGREGATE_COLUMNS = TRIAL_COLUMNS + ("sem_relative", "median_of_means_latency_s")


@dataclass
class SweepSpec:
    variable: str                      # "robots" | "density"
    values: list
    trials_per_value: int
    planners: list[str]
    seed: int
    params: WorldParams
    n_robots: int

    def __post_init__(self):
        if not self.values:
            raise ValueError("sweep value list must be nonempty")
        if self.variable not in ("robots", "density"):
            raise ValueError(f"unknown sweep variable {self.variable!r}")


def predicted_local_maps(record: EpisodeRecord, predictor) -> list[CoverageMap]:
    """Per-robot planner inputs from the map predictor: the occupied-
    probability channel masked to each robot's window."""
    maps = []
    for i in range(record.n_robots):
        history = record.local_maps[:HISTORY_STEPS, i]
        pred = predictor.predict_map(history)
        x0, x1, y0, y1 = window_bounds(record.robots.positions[i], record.params)
        grid = np.zeros_like(pred.occupied)
        grid[x0 : x1 + 1, y0 : y1 + 1] = pred.occupied[x0 : x1 + 1, y0 : y1 + 1]
        maps.append(CoverageMap(grid=grid, window=(x0, x1, y0, y1)))
    return maps


def planner_input_for(record: EpisodeRecord, map_mode: str = "truth", predictor=None) -> PlannerInput:
    if map_mode == "truth":
        return record.planner_input()
    if map_mode == "predicted":
        if predictor is None:
            raise ValueError("map_mode='predicted' needs a trained map predictor")
        inp = record.planner_input()
        inp.local_maps = predicted_local_maps(record, predictor)
        return inp
    raise ValueError(f"unknown map mode {map_mode!r}")


def _latency(result) -> tuple[float, str]:
    if result.per_robot_s:
        return max(result.per_robot_s), "max_per_robot"
    return result.total_s, "total"


def _trial_random_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0xBE, trial)).generate_state(1)[0])


def _run_one_trial(trial: int, seed: int, params: WorldParams, n_robots: int,
                   planner_names: list[str], models: dict, map_mode: str,
                   predictor, gen_cfg, speed_range) -> list[dict]:
    record = build_episode(params, n_robots, seed, index=trial, gen_cfg=gen_cfg,
                           speed_range=speed_range)
    expert_cov = record.expert_coverage
    inp = planner_input_for(record, map_mode, predictor)
    rows = []
    for name in planner_names:
        fn = get_planner(name, seed=_trial_random_seed(seed, trial), model=models.get(name))
        result = fn(inp)
        cov = coverage(record.robots.positions, record.targets_final,
                       result.assignment, params)
        lat, kind = _latency(result)
        rows.append({
            "row_type": "trial",
            "trial": trial,
            "seed": seed,
            "planner": name,
            "coverage": cov,
            "expert_coverage": expert_cov,
            "relative_coverage": cov / expert_cov if expert_cov > 0 else np.nan,
            "latency_s": lat,
            "latency_kind": kind,
            "n_robots": n_robots,
            "grid_size": params.grid_size,
        })
    return rows


def run_paired_trials(
    planner_names: list[str],
    params: WorldParams,
    n_robots: int,
    n_trials: int,
    seed: int,
    *,
    models: dict | None = None,
    map_mode: str = "truth",
    predictor=None,
    gen_cfg: DensityGenConfig | None = None,
    speed_range: tuple[float, float] = (-2.0, 2.0),
    jobs: int = 1,
) -> list[dict]:
    """Paired comparison: every planner sees the identical instances.

    Referenced models must exist before any trial runs; ``models`` maps
    planner name to a trained model for the learned planners.
    """
    models = models or {}
    for name in planner_names:
        # fail before any trial runs if weights are missing
        get_planner(name, seed=seed, model=models.get(name))
    gen_cfg = gen_cfg or DensityGenConfig().scaled_to(params.grid_size)
    args = [(t, seed, params, n_robots, planner_names, models, map_mode, predictor,
             gen_cfg, speed_range) for t in range(n_trials)]
    if jobs > 1 and predictor is None and not models:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_one_trial_star, args))
    else:
        chunks = [_run_one_trial(*a) for a in args]
    rows = [row for chunk in chunks for row in chunk]
    rows.extend(aggregate_rows(rows))
    return rows


def _run_one_trial_star(args):
    return _run_one_trial(*args)


def _median_of_means(values: list[float], chunks: int = 3) -> float:
    if not values:
        return float("nan")
    parts = np.array_split(np.asarray(values, dtype=np.float64), min(chunks, len(values)))
    return float(np.median([p.mean() for p in parts]))


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Per-planner aggregate rows recomputed purely from the trial rows."""
    planners = sorted({r["planner"] for r in rows if r["row_type"] == "trial"})
    out = []
    for name in planners:
        sub = [r for r in rows if r["row_type"] == "trial" and r["planner"] == name]
        rel = [r["relative_coverage"] for r in sub if not np.isnan(r["relative_coverage"])]
        lats = [r["latency_s"] for r in sub]
        out.append({
            "row_type": "aggregate",
            "trial": -1,
            "seed": sub[0]["seed"],
            "planner": name,
            "coverage": float(np.mean([r["coverage"] for r in sub])),
            "expert_coverage": float(np.mean([r["expert_coverage"] for r in sub])),
            "relative_coverage": float(np.mean(rel)) if rel else np.nan,
            "latency_s": float(np.mean(lats)),
            "latency_kind": sub[0]["latency_kind"],
            "n_robots": sub[0]["n_robots"],
            "grid_size": sub[0]["grid_size"],
            "sem_relative": float(np.std(rel, ddof=1) / np.sqrt(len(rel))) if len(rel) > 1 else 0.0,
            "median_of_means_latency_s": _median_of_means(lats),
        })
    return out


def run_sweep(spec: SweepSpec, *, models: dict | None = None,
              gen_cfg: DensityGenConfig | None = None) -> list[dict]:
    """Generalization sweep over robot count or target density; paired
    trials per value, aggregates per (value, planner)."""
    rows = []
    for value in spec.values:
        if spec.variable == "robots":
            params, n_robots = spec.params, int(value)
        else:
            params = WorldParams(
                grid_size=spec.params.grid_size,
                sensing_range=spec.params.sensing_range,
                step_distance=spec.params.step_distance,
                comm_range=spec.params.comm_range,
                fill_fraction=float(value),
            )
            n_robots = spec.n_robots
        sub = run_paired_trials(
            spec.planners, params, n_robots, spec.trials_per_value, spec.seed,
            models=models, gen_cfg=gen_cfg,
        )
        for r in sub:
            r["sweep_variable"] = spec.variable
            r["sweep_value"] = value
        rows.extend(sub)
    return rows


def measure_scaling(
    robot_counts: list[int],
    planner_names: list[str],
    params: WorldParams,
    trials: int,
    seed: int,
    *,
    model_factory=None,
    warmup: int = 2,
    gen_cfg: DensityGenConfig | None = None,
) -> list[dict]:
    """Latency scaling over team size, serial timing only.

    ``model_factory`` builds the learned planner's model for a given robot
    count (weights must exist before timing starts); classical planners
    need none.  Warm-up trials are run and discarded per (count, planner).
    """
    if sorted(robot_counts) != list(robot_counts):
        raise ValueError("robot counts must be ascending")
    gen_cfg = gen_cfg or DensityGenConfig().scaled_to(params.grid_size)
    models = {}
    if "d2coplan" in planner_names:
        if model_factory is None:
            raise ValueError("scaling over 'd2coplan' needs a model factory")
        models["d2coplan"] = model_factory()
    rows = []
    for n_robots in robot_counts:
        planner_fns = {
            name: get_planner(name, seed=seed, model=models.get(name))
            for name in planner_names
        }
        records = [
            build_episode(params, n_robots, seed, index=t, gen_cfg=gen_cfg)
            for t in range(warmup + trials)
        ]
        for name, fn in planner_fns.items():
            lats = []
            for t, record in enumerate(records):
                inp = planner_input_for(record, "truth")
                result = fn(inp)
                lat, kind = _latency(result)
                if t >= warmup:
                    lats.append(lat)
            rows.append({
                "row_type": "scaling",
                "trial": -1,
                "seed": seed,
                "planner": name,
                "coverage": np.nan,
                "expert_coverage": np.nan,
                "relative_coverage": np.nan,
                "latency_s": float(np.mean(lats)),
                "latency_kind": kind,
                "n_robots": n_robots,
                "grid_size": params.grid_size,
                "sem_relative": np.nan,
                "median_of_means_latency_s": _median_of_means(lats),
            })
    return rows


DMP_REGIMES = ("joint", "separate", "frozen-downstream")


def _flatten_robot_samples(arrays: dict, n_samples: int):
    """Per-robot (history, next-map) pairs for standalone predictor training."""
    b, n = arrays["labels"].shape
    g = arrays["histories"].shape[-1]
    hist = arrays["histories"].reshape(b * n, -1, g, g)
    nxt = arrays["next_maps"].reshape(b * n, g, g)
    k = min(n_samples, hist.shape[0])
    return hist[:k], nxt[:k]


def train_regime_artifacts(
    regime: str,
    train_arrays: dict,
    planner_cfg,
    dmp_cfg,
    train_cfg,
    dmp_train_cfg,
    *,
    base_planner=None,
    dmp_samples: int = 100,
):
    """Train the (predictor, planner) pair for one regime.

    ``separate`` and ``frozen-downstream`` use the supplied pre-trained
    planner; ``joint`` trains its own from scratch.
    """
    from . import dmp as dmp_mod

    if regime == "joint":
        result = dmp_mod.train_joint(train_arrays, planner_cfg, dmp_cfg, dmp_train_cfg)
        return result.predictor, result.planner
    if base_planner is None:
        raise ValueError(f"regime {regime!r} needs a pre-trained planner")
    if regime == "separate":
        hist, nxt = _flatten_robot_samples(train_arrays, dmp_samples)
        result = dmp_mod.train_dmp_standalone(hist, nxt, dmp_cfg, dmp_train_cfg)
        return result.predictor, base_planner
    if regime == "frozen-downstream":
        result = dmp_mod.train_dmp_downstream(train_arrays, base_planner, dmp_cfg, dmp_train_cfg)
        return result.predictor, base_planner
    raise ValueError(f"unknown regime {regime!r}; choose from {DMP_REGIMES}")


def regime_eval_rows(
    tag: str,
    planner_model,
    predictor,
    params: WorldParams,
    n_robots: int,
    trials: int,
    seed: int,
    *,
    gen_cfg=None,
    speed_range=(-2.0, 2.0),
) -> list[dict]:
    """Paired trials of one trained (predictor -> planner) pipeline; rows
    are tagged with the regime so one coverage curve comes out per regime."""
    rows = run_paired_trials(
        ["d2coplan"], params, n_robots, trials, seed,
        models={"d2coplan": planner_model}, map_mode="predicted", predictor=predictor,
        gen_cfg=gen_cfg, speed_range=speed_range,
    )
    for r in rows:
        r["planner"] = tag
    return rows


def predictor_planner_comparison(
    planner_model,
    dmp_separate,
    dmp_downstream,
    params: WorldParams,
    n_robots: int,
    trials: int,
    seed: int,
    *,
    gen_cfg=None,
    speed_range=(-2.0, 2.0),
) -> list[dict]:
    """Classical-vs-learned pipelines on predicted maps, paired by seed:
    dg fed by the standalone predictor vs d2coplan fed by the downstream-
    trained predictor, with the ground-truth expert as oracle reference."""
    rows = run_paired_trials(
        ["expert"], params, n_robots, trials, seed,
        gen_cfg=gen_cfg, speed_range=speed_range,
    )
    for r in rows:
        r["planner"] = "oracle(expert+truth)"
    dg_rows = run_paired_trials(
        ["dg"], params, n_robots, trials, seed,
        map_mode="predicted", predictor=dmp_separate,
        gen_cfg=gen_cfg, speed_range=speed_range,
    )
    for r in dg_rows:
        r["planner"] = "dg+dmp(separate)"
    d2_rows = run_paired_trials(
        ["d2coplan"], params, n_robots, trials, seed,
        models={"d2coplan": planner_model}, map_mode="predicted",
        predictor=dmp_downstream, gen_cfg=gen_cfg, speed_range=speed_range,
    )
    for r in d2_rows:
        r["planner"] = "d2coplan+dmp(frozen-downstream)"
    return rows + dg_rows + d2_rows


def write_csv(path, rows: list[dict]) -> None:
    """Versioned CSV: comment row documenting the schema, then header+rows."""
    columns = list(AGGREGATE_COLUMNS)
    extra = sorted({k for r in rows for k in r} - set(columns))
    columns += extra
    buf = io.StringIO()
    buf.write(_COLUMN_DOC + "\n")
    writer = csv.DictWriter(buf, fieldnames=columns, restval="")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    """Read back a bench CSV (skipping the schema comment row)."""
    text = Path(path).read_text().splitlines()
    body = [line for line in text if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))
