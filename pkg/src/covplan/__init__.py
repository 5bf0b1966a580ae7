"""covplan: multi-robot target coverage planning toolkit.

A grid-world simulator with moving targets, classical coverage planners
(centralized greedy expert, decentralized greedy, brute-force oracle,
random), a differentiable decentralized planner trained by imitation, a
differentiable map predictor, and a seeded Monte-Carlo benchmark harness.
"""
from .world import (
    ACTION_NAMES,
    N_ACTIONS,
    CoverageMap,
    DensityField,
    DensityGenConfig,
    RobotState,
    TargetSet,
    WorldParams,
    apply_action,
    footprint,
    generate_density,
    local_coverage_map,
    rasterize_targets,
    sample_robots,
    sample_targets,
    step_targets,
)
from .comms import CommGraph, GraphShift, build_graph, exchange, normalize
from .objective import coverage, marginal_gain, mass_coverage
from .planners import (
    PLANNER_NAMES,
    PlannerInput,
    PlanResult,
    brute_force_plan,
    dg_plan,
    expert_plan,
    get_planner,
    random_plan,
)
from .d2coplan import CoveragePlanner, D2CoPlanConfig, TrainConfig, train_imitation
from .dmp import DmpConfig, MapPredictor, train_dmp_downstream, train_dmp_standalone, train_joint
from .datagen import build_episode, generate_dataset, load_manifest, load_record
from .config import RunConfig, resolve_config

__version__ = "0.1.0"
