"""Seeded episode/dataset generation with expert action labels.

Each episode records 4 consecutive timesteps: a 3-step observation history
plus the label step.  Robots hold position while observing; the expert
labels the joint action against the label-step target positions, which is
also the step coverage is scored on.

On disk a dataset is one directory: a ``records/rec_######`` subdirectory
per episode (scenario JSON, float32 map blobs as .npy, float64 target
tracks, metadata JSON) and a ``manifest.json`` written last, which doubles
as the completion marker — a dataset without a manifest is invalid.
Every record is a pure function of (seed, index), and per-index generation
is independent, so serial and parallel runs produce byte-identical output.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .comms import CommGraph, build_graph, normalize, shift_powers
from .planners import PlannerInput, expert_plan
from .objective import coverage
from .world import (
    CoverageMap,
    DensityGenConfig,
    RobotState,
    TargetSet,
    WorldParams,
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

DATASET_FORMAT = "covplan-dataset/1"
HISTORY_STEPS = 3
RECORD_STEPS = HISTORY_STEPS + 1  # history plus the label step


@dataclass
class EpisodeRecord:
    index: int
    params: WorldParams
    robots: RobotState
    targets_initial: TargetSet
    targets_final: TargetSet            # positions at the label step
    global_maps: np.ndarray             # (RECORD_STEPS, G, G) float32 counts
    local_maps: np.ndarray              # (RECORD_STEPS, N, G, G) float32
    adjacency: np.ndarray               # (N, N) uint8
    label_actions: np.ndarray           # (N,) int64, expert labels
    expert_coverage: int
    density_seed: int

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    def graph(self) -> CommGraph:
        return CommGraph(adjacency=self.adjacency.astype(np.float64),
                         positions=self.robots.positions)

    def planner_truth_maps(self) -> list[CoverageMap]:
        """Per-robot ground-truth local maps at the label step."""
        return [
            CoverageMap(grid=self.local_maps[HISTORY_STEPS, i],
                        window=window_bounds(self.robots.positions[i], self.params))
            for i in range(self.n_robots)
        ]

    def planner_input(self) -> PlannerInput:
        return PlannerInput(
            params=self.params,
            robots=self.robots,
            graph=self.graph(),
            local_maps=self.planner_truth_maps(),
            targets=self.targets_final,
        )


def build_episode(
    params: WorldParams,
    n_robots: int,
    seed: int,
    index: int = 0,
    gen_cfg: DensityGenConfig | None = None,
    speed_range: tuple[float, float] = (-2.0, 2.0),
) -> EpisodeRecord:
    """Deterministically build one episode from (seed, index)."""
    root = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))
    density_seed, target_seed, robot_seed = (int(x) for x in root.integers(2**62, size=3))
    # a clamped mixture can have too little positive support for the fill
    # fraction; redraw the density deterministically until sampling works
    for attempt in range(100):
        density = generate_density(params, gen_cfg, seed=density_seed + attempt)
        try:
            targets = sample_targets(density, params, seed=target_seed, speed_range=speed_range)
        except ValueError:
            continue
        density_seed = density_seed + attempt
        break
    else:
        raise RuntimeError(
            f"could not draw a density with enough support after 100 attempts "
            f"(seed={seed}, index={index})"
        )
    robots = sample_robots(params, n_robots, seed=robot_seed)
    g = params.grid_size

    targets_initial = targets
    steps = [targets]
    for _ in range(HISTORY_STEPS):
        steps.append(step_targets(steps[-1], params))
    global_maps = np.stack([rasterize_targets(t, g) for t in steps[:RECORD_STEPS]])
    local_maps = np.stack(
        [
            np.stack(
                [local_coverage_map(global_maps[k], robots.positions[i], params).grid
                 for i in range(n_robots)]
            )
            for k in range(RECORD_STEPS)
        ]
    )
    graph = build_graph(robots, params.comm_range)
    targets_final = steps[HISTORY_STEPS]
    label = expert_plan(
        PlannerInput(params=params, robots=robots, graph=graph, targets=targets_final)
    )
    cov = coverage(robots.positions, targets_final, label.assignment, params)
    return EpisodeRecord(
        index=index,
        params=params,
        robots=robots,
        targets_initial=targets_initial,
        targets_final=targets_final,
        global_maps=global_maps,
        local_maps=local_maps,
        adjacency=graph.adjacency.astype(np.uint8),
        label_actions=np.asarray(label.actions, dtype=np.int64),
        expert_coverage=cov,
        density_seed=density_seed,
    )


# -- disk format -------------------------------------------------------------


def _record_dir(root: Path, index: int) -> Path:
    return Path(root) / "records" / f"rec_{index:06d}"


def _canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def _write_record(root: str, params_doc: dict, n_robots: int, seed: int, index: int,
                  gen_doc: dict, speed_range: tuple[float, float]) -> str:
    """Worker: build and write one record; returns its content checksum."""
    params = WorldParams(**params_doc)
    gen_cfg = DensityGenConfig(**{**gen_doc, "stddev_choices": tuple(gen_doc["stddev_choices"]),
                                  "components_range": tuple(gen_doc["components_range"])})
    rec = build_episode(params, n_robots, seed, index, gen_cfg, tuple(speed_range))
    rdir = _record_dir(Path(root), index)
    rdir.mkdir(parents=True, exist_ok=True)
    save_scenario(rdir / "scenario.json", params, rec.robots, rec.targets_initial,
                  rec.density_seed)
    np.save(rdir / "global_maps.npy", rec.global_maps)
    np.save(rdir / "local_maps.npy", rec.local_maps)
    np.save(rdir / "adjacency.npy", rec.adjacency)
    np.save(rdir / "targets_final_pos.npy", rec.targets_final.positions)
    np.save(rdir / "targets_final_vel.npy", rec.targets_final.velocities)
    meta = {
        "index": index,
        "n_robots": n_robots,
        "label_actions": rec.label_actions.tolist(),
        "expert_coverage": rec.expert_coverage,
        "density_seed": rec.density_seed,
    }
    (rdir / "meta.json").write_text(_canonical_json(meta))
    return _record_checksum(rdir)


_RECORD_FILES = (
    "scenario.json", "global_maps.npy", "local_maps.npy", "adjacency.npy",
    "targets_final_pos.npy", "targets_final_vel.npy", "meta.json",
)


def _record_checksum(rdir: Path) -> str:
    h = hashlib.sha256()
    for name in _RECORD_FILES:
        h.update(name.encode())
        h.update((rdir / name).read_bytes())
    return h.hexdigest()


def split_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Exact partition: floor for train and validation, remainder is test."""
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    return n_train, n_val, n - n_train - n_val


@dataclass
class DatasetManifest:
    count: int
    seed: int
    params: WorldParams
    n_robots: int
    split_fractions: tuple[float, float, float]
    splits: dict[str, list[int]]
    checksums: list[str]
    gen_cfg: DensityGenConfig = field(default_factory=DensityGenConfig)
    speed_range: tuple[float, float] = (-2.0, 2.0)


def generate_dataset(
    out_dir,
    count: int,
    params: WorldParams,
    n_robots: int,
    seed: int,
    gen_cfg: DensityGenConfig | None = None,
    speed_range: tuple[float, float] = (-2.0, 2.0),
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    jobs: int = 1,
) -> DatasetManifest:
    """Write ``count`` episode records under out_dir; manifest written last."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {split_fractions}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    gen_cfg = gen_cfg or DensityGenConfig()
    params_doc = {
        "grid_size": params.grid_size,
        "sensing_range": params.sensing_range,
        "step_distance": params.step_distance,
        "comm_range": params.comm_range,
        "fill_fraction": params.fill_fraction,
    }
    gen_doc = {
        "components_range": list(gen_cfg.components_range),
        "stddev_choices": list(gen_cfg.stddev_choices),
        "invert_prob": gen_cfg.invert_prob,
        "max_retries": gen_cfg.max_retries,
    }
    args = [(str(root), params_doc, n_robots, seed, i, gen_doc, speed_range)
            for i in range(count)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            checksums = list(pool.map(_write_record_star, args))
    else:
        checksums = [_write_record(*a) for a in args]
    n_train, n_val, n_test = split_counts(count, split_fractions)
    splits = {
        "train": list(range(0, n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, count)),
    }
    manifest_doc = {
        "format": DATASET_FORMAT,
        "count": count,
        "seed": seed,
        "n_robots": n_robots,
        "params": params_doc,
        "gen_cfg": gen_doc,
        "speed_range": list(speed_range),
        "split_fractions": list(split_fractions),
        "splits": splits,
        "checksums": checksums,
    }
    (root / "manifest.json").write_text(_canonical_json(manifest_doc))
    return DatasetManifest(
        count=count, seed=seed, params=params, n_robots=n_robots,
        split_fractions=split_fractions, splits=splits, checksums=checksums,
        gen_cfg=gen_cfg, speed_range=speed_range,
    )


def _write_record_star(args):
    return _write_record(*args)


def load_manifest(dataset_dir) -> DatasetManifest:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(
            f"{dataset_dir}: no manifest.json (dataset missing or incomplete)"
        )
    doc = json.loads(path.read_text())
    if doc.get("format") != DATASET_FORMAT:
        raise ValueError(f"unsupported dataset format {doc.get('format')!r}")
    gen = doc["gen_cfg"]
    return DatasetManifest(
        count=doc["count"],
        seed=doc["seed"],
        params=WorldParams(**doc["params"]),
        n_robots=doc["n_robots"],
        split_fractions=tuple(doc["split_fractions"]),
        splits={k: list(v) for k, v in doc["splits"].items()},
        checksums=list(doc["checksums"]),
        gen_cfg=DensityGenConfig(
            components_range=tuple(gen["components_range"]),
            stddev_choices=tuple(gen["stddev_choices"]),
            invert_prob=gen["invert_prob"],
            max_retries=gen["max_retries"],
        ),
        speed_range=tuple(doc["speed_range"]),
    )


def load_record(dataset_dir, index: int) -> EpisodeRecord:
    rdir = _record_dir(Path(dataset_dir), index)
    params, robots, targets_initial, density_seed = load_scenario(rdir / "scenario.json")
    meta = json.loads((rdir / "meta.json").read_text())
    targets_final = TargetSet(
        positions=np.load(rdir / "targets_final_pos.npy"),
        velocities=np.load(rdir / "targets_final_vel.npy"),
    )
    return EpisodeRecord(
        index=meta["index"],
        params=params,
        robots=robots,
        targets_initial=targets_initial,
        targets_final=targets_final,
        global_maps=np.load(rdir / "global_maps.npy"),
        local_maps=np.load(rdir / "local_maps.npy"),
        adjacency=np.load(rdir / "adjacency.npy"),
        label_actions=np.asarray(meta["label_actions"], dtype=np.int64),
        expert_coverage=meta["expert_coverage"],
        density_seed=meta["density_seed"],
    )


def iter_split(dataset_dir, split: str):
    manifest = load_manifest(dataset_dir)
    for index in manifest.splits[split]:
        yield load_record(dataset_dir, index)


def _window_masks(record: EpisodeRecord) -> np.ndarray:
    g = record.params.grid_size
    masks = np.zeros((record.n_robots, g, g), dtype=np.float32)
    for i in range(record.n_robots):
        x0, x1, y0, y1 = window_bounds(record.robots.positions[i], record.params)
        masks[i, x0 : x1 + 1, y0 : y1 + 1] = 1.0
    return masks


def arrays_from_records(records: list[EpisodeRecord], hops: int = 1) -> dict:
    """Stack records into the training arrays the models consume.

    Returns 'maps' (B, N, G, G) planner ground-truth inputs, 'shifts'
    (B, hops+1, N, N), 'labels' (B, N), 'histories' (B, N, 3, G, G),
    'next_maps' (B, N, G, G) window-masked binary occupancy at the label
    step, and 'window_masks' (B, N, G, G).
    """
    if not records:
        raise ValueError("no records given")
    maps, shifts, labels, histories, next_maps, masks = [], [], [], [], [], []
    for rec in records:
        maps.append(rec.local_maps[HISTORY_STEPS])
        shifts.append(shift_powers(normalize(rec.graph()), hops))
        labels.append(rec.label_actions)
        histories.append(rec.local_maps[:HISTORY_STEPS].transpose(1, 0, 2, 3))
        wm = _window_masks(rec)
        masks.append(wm)
        binary = (rec.global_maps[HISTORY_STEPS] > 0).astype(np.float32)
        next_maps.append(binary[None] * wm)
    return {
        "maps": np.stack(maps).astype(np.float32),
        "shifts": np.stack(shifts).astype(np.float32),
        "labels": np.stack(labels),
        "histories": np.stack(histories).astype(np.float32),
        "next_maps": np.stack(next_maps).astype(np.float32),
        "window_masks": np.stack(masks),
    }


def load_training_arrays(dataset_dir, split: str = "train", hops: int = 1) -> dict:
    return arrays_from_records(list(iter_split(dataset_dir, split)), hops=hops)


def verify_labels(dataset_dir, sample_fraction: float = 0.01, seed: int = 0) -> int:
    """Relabel a sample of records from their stored scenarios and compare
    with the stored expert labels; returns the number checked, raises on
    any mismatch."""
    manifest = load_manifest(dataset_dir)
    n = manifest.count
    k = max(1, int(round(sample_fraction * n)))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    indices = rng.choice(n, size=min(k, n), replace=False)
    for index in indices:
        rec = load_record(dataset_dir, int(index))
        targets = rec.targets_initial
        for _ in range(HISTORY_STEPS):
            targets = step_targets(targets, rec.params)
        graph = build_graph(rec.robots, rec.params.comm_range)
        result = expert_plan(
            PlannerInput(params=rec.params, robots=rec.robots, graph=graph, targets=targets)
        )
        if list(result.actions) != rec.label_actions.tolist():
            raise AssertionError(
                f"record {index}: stored label {rec.label_actions.tolist()} != "
                f"recomputed {result.actions}"
            )
    return len(indices)
