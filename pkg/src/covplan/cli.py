"""Command-line entry point.

Subcommands: gen-data, train-planner, train-dmp, eval, bench
(compare|sweep|scaling|regimes), grad-check.  Configuration comes from a
named profile, an optional JSON config file, and flags, in increasing
precedence; the fully resolved configuration (with per-field provenance)
is written into the run directory before anything executes.

Exit codes: 0 success, 1 runtime failure (with a machine-parsable
``error: {...}`` line on stderr), 2 usage/configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import datagen, nn
from .config import PROFILES, RunConfig, resolve_config
from .d2coplan import CoveragePlanner, D2CoPlanConfig, train_imitation
from .dmp import DmpConfig, MapPredictor
from .planners import PLANNER_NAMES
from .world import WorldParams


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", choices=PROFILES, default="desk")
    parser.add_argument("--config", help="JSON config file (overrides profile)")
    parser.add_argument("--grid", type=int, dest="grid_size")
    parser.add_argument("--robots", type=int, dest="n_robots")
    parser.add_argument("--fill", type=float, dest="fill_fraction")
    parser.add_argument("--sensing-range", type=int, dest="sensing_range")
    parser.add_argument("--step-distance", type=int, dest="step_distance")
    parser.add_argument("--comm-range", type=float, dest="comm_range")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--dmp-epochs", type=int, dest="dmp_epochs")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--jobs", type=int)


_OVERRIDE_KEYS = (
    "grid_size", "n_robots", "fill_fraction", "sensing_range", "step_distance",
    "comm_range", "seed", "epochs", "dmp_epochs", "trials", "jobs",
)


def _resolve(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    return resolve_config(args.profile, getattr(args, "config", None), overrides)


def _write_run_config(cfg: RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_log_dict(), indent=2, sort_keys=True) + "\n")


def _planner_for_dataset(cfg: RunConfig, manifest) -> D2CoPlanConfig:
    # the model's spatial config must match the data it is trained/run on
    return D2CoPlanConfig(
        grid_size=manifest.params.grid_size,
        encoder_channels=tuple(cfg.encoder_channels),
        gnn_widths=tuple(cfg.gnn_widths),
        hops=cfg.hops,
        dropout=cfg.dropout,
    )


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    _write_run_config(cfg, args.out)
    manifest = datagen.generate_dataset(
        args.out,
        count=args.count if args.count is not None else cfg.dataset_count,
        params=cfg.world_params(),
        n_robots=cfg.n_robots,
        seed=cfg.seed,
        gen_cfg=cfg.density_config(),
        speed_range=cfg.speed_range(),
        split_fractions=tuple(cfg.split_fractions),
        jobs=cfg.jobs,
    )
    print(f"wrote {manifest.count} records to {args.out}")
    return 0


def cmd_train_planner(args) -> int:
    cfg = _resolve(args)
    _write_run_config(cfg, args.out)
    manifest = datagen.load_manifest(args.dataset)
    model_cfg = _planner_for_dataset(cfg, manifest)
    train_arrays = datagen.load_training_arrays(args.dataset, "train", hops=cfg.hops)
    val_arrays = datagen.load_training_arrays(args.dataset, "val", hops=cfg.hops)
    result = train_imitation(train_arrays, val_arrays, model_cfg, cfg.train_config(),
                             out_dir=args.out, log_every=args.log_every)
    print(
        f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}); "
        f"model written to {Path(args.out) / 'model.cpw'}"
    )
    return 0


def cmd_train_dmp(args) -> int:
    cfg = _resolve(args)
    _write_run_config(cfg, args.out)
    manifest = datagen.load_manifest(args.dataset)
    model_cfg = _planner_for_dataset(cfg, manifest)
    dmp_cfg = DmpConfig(grid_size=manifest.params.grid_size, channels=tuple(cfg.dmp_channels))
    train_arrays = datagen.load_training_arrays(args.dataset, "train", hops=cfg.hops)
    if args.dmp_regime == "separate":
        # standalone training needs no planner; one is only paired in at eval
        from .dmp import train_dmp_standalone

        hist, nxt = bench_mod._flatten_robot_samples(train_arrays, cfg.dmp_samples)
        predictor = train_dmp_standalone(hist, nxt, dmp_cfg, cfg.dmp_train_config()).predictor
        planner = None
    else:
        base_planner = None
        if args.dmp_regime == "frozen-downstream":
            if not args.planner_weights:
                raise ValueError(f"--dmp-regime {args.dmp_regime} requires --planner-weights")
            base_planner = CoveragePlanner.load(args.planner_weights, model_cfg)
        predictor, planner = bench_mod.train_regime_artifacts(
            args.dmp_regime, train_arrays, model_cfg, dmp_cfg,
            cfg.train_config(), cfg.dmp_train_config(),
            base_planner=base_planner, dmp_samples=cfg.dmp_samples,
        )
    out = Path(args.out)
    predictor.save(out / "dmp.cpw", regime=args.dmp_regime, seed=cfg.seed)
    if args.dmp_regime == "joint":
        planner.save(out / "planner.cpw", regime="joint", seed=cfg.seed)
    print(f"wrote {out / 'dmp.cpw'} (regime {args.dmp_regime})")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    manifest = datagen.load_manifest(args.dataset)
    model = None
    if args.planner == "d2coplan":
        if not args.weights:
            raise ValueError("--planner d2coplan requires --weights")
        model = CoveragePlanner.load(args.weights, _planner_for_dataset(cfg, manifest))
    from .objective import coverage
    from .planners import get_planner

    rows = []
    for rec in (datagen.load_record(args.dataset, i) for i in range(manifest.count)):
        fn = get_planner(args.planner, seed=cfg.seed + rec.index, model=model)
        result = fn(rec.planner_input())
        cov = coverage(rec.robots.positions, rec.targets_final, result.assignment,
                       rec.params)
        lat, kind = bench_mod._latency(result)
        rows.append({
            "row_type": "trial",
            "trial": rec.index,
            "seed": manifest.seed,
            "planner": args.planner,
            "coverage": cov,
            "expert_coverage": rec.expert_coverage,
            "relative_coverage": cov / rec.expert_coverage if rec.expert_coverage else np.nan,
            "latency_s": lat,
            "latency_kind": kind,
            "n_robots": rec.n_robots,
            "grid_size": rec.params.grid_size,
        })
    rows.extend(bench_mod.aggregate_rows(rows))
    bench_mod.write_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _load_bench_model(cfg: RunConfig, weights: str | None):
    if not weights:
        raise ValueError("planner 'd2coplan' requires --weights")
    return CoveragePlanner.load(weights, cfg.planner_config())


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    params = cfg.world_params()
    if args.mode == "compare":
        planners = args.planners.split(",")
        models = {}
        if "d2coplan" in planners:
            models["d2coplan"] = _load_bench_model(cfg, args.weights)
        rows = bench_mod.run_paired_trials(
            planners, params, cfg.n_robots, cfg.trials, cfg.seed,
            models=models, gen_cfg=cfg.density_config(), speed_range=cfg.speed_range(),
            jobs=1 if args.serial_timing else cfg.jobs,
        )
    elif args.mode == "sweep":
        planners = args.planners.split(",")
        models = {}
        if "d2coplan" in planners:
            models["d2coplan"] = _load_bench_model(cfg, args.weights)
        values = [float(v) if args.variable == "density" else int(v)
                  for v in args.values.split(",")]
        spec = bench_mod.SweepSpec(
            variable=args.variable, values=values, trials_per_value=cfg.trials,
            planners=planners, seed=cfg.seed, params=params, n_robots=cfg.n_robots,
        )
        rows = bench_mod.run_sweep(spec, models=models, gen_cfg=cfg.density_config())
    elif args.mode == "scaling":
        counts = [int(v) for v in args.counts.split(",")]
        planners = args.planners.split(",")
        factory = None
        if "d2coplan" in planners:
            if args.weights:
                factory = lambda: _load_bench_model(cfg, args.weights)
            else:
                # timing-only runs may use a seeded untrained model
                factory = lambda: CoveragePlanner(cfg.planner_config(), init_seed=cfg.seed)
        rows = bench_mod.measure_scaling(
            counts, planners, params, cfg.trials, cfg.seed,
            model_factory=factory, gen_cfg=cfg.density_config(),
        )
    elif args.mode == "regimes":
        if not args.dataset:
            raise ValueError("bench regimes requires --dataset")
        manifest = datagen.load_manifest(args.dataset)
        model_cfg = _planner_for_dataset(cfg, manifest)
        dmp_cfg = DmpConfig(grid_size=manifest.params.grid_size,
                            channels=tuple(cfg.dmp_channels))
        train_arrays = datagen.load_training_arrays(args.dataset, "train", hops=cfg.hops)
        val_arrays = datagen.load_training_arrays(args.dataset, "val", hops=cfg.hops)
        base = train_imitation(train_arrays, val_arrays, model_cfg, cfg.train_config()).model
        rows = []
        for regime in bench_mod.DMP_REGIMES:
            predictor, planner = bench_mod.train_regime_artifacts(
                regime, train_arrays, model_cfg, dmp_cfg,
                cfg.train_config(), cfg.dmp_train_config(),
                base_planner=base, dmp_samples=cfg.dmp_samples,
            )
            rows.extend(bench_mod.regime_eval_rows(
                f"d2coplan+dmp({regime})", planner, predictor,
                manifest.params, manifest.n_robots, cfg.trials, cfg.seed,
                gen_cfg=cfg.density_config(), speed_range=cfg.speed_range(),
            ))
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown bench mode {args.mode!r}")
    bench_mod.write_csv(args.out, rows)
    n_agg = sum(1 for r in rows if r["row_type"] != "trial")
    print(f"wrote {len(rows)} rows ({n_agg} aggregate) to {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _resolve(args)
    from .acceptance_checks import run_all_grad_checks

    reports = run_all_grad_checks(seed=cfg.seed, tolerance=args.tolerance)
    failed = [name for name, rep in reports.items() if not rep.passed]
    for name, rep in reports.items():
        print(f"{name:24s} {rep.summary()}")
    if failed:
        print(f"error: {json.dumps({'failed_checks': failed})}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covplan",
        description="Multi-robot target coverage planning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled scenario dataset")
    _add_common(p)
    p.add_argument("--count", type=int, help="number of records (default from config)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-planner", help="imitation-train the decentralized planner")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_train_planner)

    p = sub.add_parser("train-dmp", help="train the map predictor")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dmp-regime", choices=bench_mod.DMP_REGIMES, default="separate")
    p.add_argument("--planner-weights", help="frozen planner weights (non-joint regimes)")
    p.set_defaults(fn=cmd_train_dmp)

    p = sub.add_parser("eval", help="evaluate one planner over a stored dataset")
    _add_common(p)
    p.add_argument("--planner", required=True, choices=PLANNER_NAMES)
    p.add_argument("--dataset", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="Monte-Carlo benchmark harness")
    _add_common(p)
    p.add_argument("mode", choices=("compare", "sweep", "scaling", "regimes"))
    p.add_argument("--planners", default="expert,dg,random")
    p.add_argument("--weights", help="d2coplan weights file")
    p.add_argument("--variable", choices=("robots", "density"), default="robots")
    p.add_argument("--values", default="4,6,10")
    p.add_argument("--counts", default="5,10,20,40")
    p.add_argument("--dataset", help="training dataset (regimes mode)")
    p.add_argument("--serial-timing", action="store_true",
                   help="force serial trials so latencies are uncontaminated")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("grad-check", help="finite-difference checks of every layer")
    _add_common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {json.dumps({'type': type(exc).__name__, 'message': str(exc)})}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
