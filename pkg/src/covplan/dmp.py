"""Differentiable map predictor: 3 observed coverage maps in, a 2-channel
occupancy prediction out, at the same spatial resolution.

Three training regimes are supported:

* ``separate``  — standalone, weighted pixel cross-entropy against the true
  next-step occupancy (class weights 1:10 for free:occupied);
* ``frozen-downstream`` — the predictor is trained by backpropagating the
  action cross-entropy through a pre-trained, frozen coverage planner;
* ``joint`` — predictor and planner trained together from scratch on the
  action loss.

Inputs are per-robot local (window-masked) observation histories, so the
predictor sees exactly what a decentralized robot would.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .d2coplan import CoveragePlanner, D2CoPlanConfig, TrainConfig


@dataclass(frozen=True)
class DmpConfig:
    grid_size: int = 32
    channels: tuple[int, ...] = (8, 16, 4, 2)
    kernel: int = 3
    history_steps: int = 3
    class_weights: tuple[float, float] = (1.0, 10.0)

    def __post_init__(self):
        if self.channels[-1] != 2:
            raise ValueError("last layer must emit 2 channels (free, occupied)")

    def describe(self) -> dict:
        return {
            "kind": "dmp",
            "grid_size": self.grid_size,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "history_steps": self.history_steps,
        }


@dataclass
class OccupancyPrediction:
    """2-channel logits plus the derived per-cell occupancy probability."""

    logits: np.ndarray    # (2, G, G)
    occupied: np.ndarray  # (G, G), softmax of the occupied channel


class MapPredictor:
    """Same-resolution CNN: (B, 3, G, G) history -> (B, 2, G, G) logits."""

    def __init__(self, config: DmpConfig, init_seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        ss = np.random.SeedSequence(init_seed, spawn_key=(0xD3B,))
        rngs = [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(len(config.channels))]
        ch = (config.history_steps,) + tuple(config.channels)
        layers = []
        for i in range(len(config.channels)):
            layers.append(
                nn.Conv2d(ch[i], ch[i + 1], config.kernel, rng=rngs[i], dtype=dtype,
                          name=f"dmp.conv{i + 1}")
            )
            if i < len(config.channels) - 1:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def tensors(self) -> list[nn.Tensor]:
        return self.net.tensors()

    def forward(self, histories: np.ndarray) -> np.ndarray:
        if histories.ndim != 4 or histories.shape[1] != self.config.history_steps:
            raise ValueError(
                f"expected (B, {self.config.history_steps}, G, G) histories, "
                f"got {histories.shape}"
            )
        return self.net.forward(histories.astype(self.dtype))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        return self.net.backward(dlogits)

    def kink_signature(self) -> bytes:
        return self.net.kink_signature() or b""

    def predict_map(self, history: np.ndarray) -> OccupancyPrediction:
        """One robot's 3-step history (3, G, G) -> occupancy prediction."""
        logits = self.forward(np.asarray(history)[None])
        prob, _ = nn.occupied_probability(logits)
        return OccupancyPrediction(logits=logits[0], occupied=prob[0])

    def arch_hash(self) -> str:
        return nn.architecture_hash(self.config.describe())

    def weight_store(self, **meta) -> nn.WeightStore:
        tensors = {t.name: t.data.copy() for t in self.tensors()}
        return nn.WeightStore(tensors=tensors, manifest={"arch_hash": self.arch_hash(), **meta})

    def save(self, path, **meta) -> None:
        nn.save_weights(self.weight_store(**meta), path)

    @classmethod
    def load(cls, path, config: DmpConfig, dtype=np.float32) -> "MapPredictor":
        model = cls(config, init_seed=0, dtype=dtype)
        store = nn.load_weights(path, expected_arch_hash=model.arch_hash())
        for t in model.tensors():
            t.data[...] = store.tensors[t.name].astype(t.data.dtype)
        return model


@dataclass
class DmpEpochStats:
    epoch: int
    loss: float
    wall_s: float


@dataclass
class DmpTrainingResult:
    predictor: MapPredictor
    planner: CoveragePlanner | None
    history: list[DmpEpochStats] = field(default_factory=list)


def constant_free_loss(labels: np.ndarray, class_weights=(1.0, 10.0), margin: float = 12.0):
    """Closed-form weighted loss of always predicting 'free' with the given
    logit margin; the floor a trained predictor must beat."""
    n_occ = float((labels > 0).sum())
    n = float(labels.size)
    ce_wrong = margin + np.log1p(np.exp(-margin))
    ce_right = np.log1p(np.exp(-margin))
    return (class_weights[1] * n_occ * ce_wrong + class_weights[0] * (n - n_occ) * ce_right) / n


def train_dmp_standalone(
    histories: np.ndarray,
    next_maps: np.ndarray,
    config: DmpConfig,
    train_cfg: TrainConfig,
    log_every: int = 0,
) -> DmpTrainingResult:
    """Standalone regime: weighted pixel cross-entropy against the true
    next-step binary occupancy.  histories (M, 3, G, G), next_maps (M, G, G)."""
    if histories.shape[0] == 0:
        raise ValueError("empty training dataset")
    labels = (next_maps > 0).astype(np.int64)
    model = MapPredictor(config, init_seed=train_cfg.seed)
    optimizer = nn.Adam(model.tensors(), lr=train_cfg.learning_rate)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(train_cfg.seed, spawn_key=(0xD3B1,)))
    )
    history: list[DmpEpochStats] = []
    m = histories.shape[0]
    t0 = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(m)
        losses = []
        for start in range(0, m, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            nn.zero_grad(model.tensors())
            logits = model.forward(histories[idx])
            loss, dlogits = nn.weighted_pixel_cross_entropy(
                logits, labels[idx], weights=config.class_weights
            )
            model.backward(dlogits)
            optimizer.step()
            losses.append(loss)
        history.append(DmpEpochStats(epoch, float(np.mean(losses)), time.perf_counter() - t0))
        if log_every and epoch % log_every == 0:
            print(f"dmp epoch {epoch:4d}  loss {history[-1].loss:.4f}")
    return DmpTrainingResult(predictor=model, planner=None, history=history)


def _planner_inputs_from_predictions(prob: np.ndarray, window_masks: np.ndarray, shape):
    """Mask predicted occupancy to each robot's window: the planner's input."""
    b, n, g = shape
    return (prob.reshape(b, n, g, g) * window_masks).astype(prob.dtype)


def _action_loss_through_planner(
    predictor: MapPredictor,
    planner: CoveragePlanner,
    histories: np.ndarray,   # (b, N, 3, G, G)
    window_masks: np.ndarray,  # (b, N, G, G)
    shifts: np.ndarray,      # (b, K+1, N, N)
    labels: np.ndarray,      # (b, N)
):
    """Forward + backward of the composed chain; returns the action loss.

    Gradients are accumulated into both models' tensors; the caller decides
    which parameters actually step.
    """
    b, n = labels.shape
    g = predictor.config.grid_size
    logits_map = predictor.forward(histories.reshape(b * n, -1, g, g))
    prob, cache = nn.occupied_probability(logits_map)
    maps = _planner_inputs_from_predictions(prob, window_masks, (b, n, g))
    logits = planner.forward(maps, shifts)
    loss, dlogits = nn.softmax_cross_entropy(logits.reshape(b * n, -1), labels.reshape(b * n))
    dmaps = planner.backward(dlogits.reshape(b, n, -1))
    dprob = (dmaps * window_masks).reshape(b * n, g, g)
    dlogits_map = nn.occupied_probability_backward(dprob, cache)
    predictor.backward(dlogits_map)
    return loss


def _forward_action_loss(predictor, planner, histories, window_masks, shifts, labels):
    """Forward-only version; returns (loss, kink signature) for grad checks."""
    b, n = labels.shape
    g = predictor.config.grid_size
    logits_map = predictor.forward(histories.reshape(b * n, -1, g, g))
    prob, _ = nn.occupied_probability(logits_map)
    maps = _planner_inputs_from_predictions(prob, window_masks, (b, n, g))
    logits = planner.forward(maps, shifts)
    loss, _ = nn.softmax_cross_entropy(logits.reshape(b * n, -1), labels.reshape(b * n))
    sig = predictor.kink_signature() + planner.kink_signature()
    return loss, sig


def train_dmp_downstream(
    arrays: dict,
    planner: CoveragePlanner,
    config: DmpConfig,
    train_cfg: TrainConfig,
    log_every: int = 0,
) -> DmpTrainingResult:
    """Frozen-downstream regime: unweighted action cross-entropy flows
    through the frozen planner into the predictor only.

    ``arrays`` needs 'histories' (B, N, 3, G, G), 'window_masks'
    (B, N, G, G), 'shifts' (B, K+1, N, N) and 'labels' (B, N).
    """
    if arrays["histories"].shape[0] == 0:
        raise ValueError("empty training dataset")
    frozen_before = {t.name: t.data.copy() for t in planner.tensors()}
    model = MapPredictor(config, init_seed=train_cfg.seed)
    optimizer = nn.Adam(model.tensors(), lr=train_cfg.learning_rate)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(train_cfg.seed, spawn_key=(0xD3B2,)))
    )
    planner.set_train(False)
    history: list[DmpEpochStats] = []
    m = arrays["histories"].shape[0]
    t0 = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(m)
        losses = []
        for start in range(0, m, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            nn.zero_grad(model.tensors())
            nn.zero_grad(planner.tensors())
            loss = _action_loss_through_planner(
                model, planner,
                arrays["histories"][idx], arrays["window_masks"][idx],
                arrays["shifts"][idx], arrays["labels"][idx],
            )
            optimizer.step()  # predictor parameters only; planner stays frozen
            losses.append(loss)
        history.append(DmpEpochStats(epoch, float(np.mean(losses)), time.perf_counter() - t0))
        if log_every and epoch % log_every == 0:
            print(f"dmp-downstream epoch {epoch:4d}  loss {history[-1].loss:.4f}")
    for t in planner.tensors():
        if not np.array_equal(t.data, frozen_before[t.name]):
            raise AssertionError(f"frozen planner parameter {t.name} changed during training")
    return DmpTrainingResult(predictor=model, planner=planner, history=history)


def train_joint(
    arrays: dict,
    planner_config: D2CoPlanConfig,
    dmp_config: DmpConfig,
    train_cfg: TrainConfig,
    log_every: int = 0,
) -> DmpTrainingResult:
    """Joint regime: predictor and planner optimized together from scratch."""
    if arrays["histories"].shape[0] == 0:
        raise ValueError("empty training dataset")
    predictor = MapPredictor(dmp_config, init_seed=train_cfg.seed)
    planner = CoveragePlanner(planner_config, init_seed=train_cfg.seed + 1)
    planner.set_train(True, seed=train_cfg.seed)
    all_tensors = predictor.tensors() + planner.tensors()
    optimizer = nn.Adam(all_tensors, lr=train_cfg.learning_rate)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(train_cfg.seed, spawn_key=(0xD3B3,)))
    )
    history: list[DmpEpochStats] = []
    m = arrays["histories"].shape[0]
    t0 = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(m)
        losses = []
        for start in range(0, m, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            nn.zero_grad(all_tensors)
            loss = _action_loss_through_planner(
                predictor, planner,
                arrays["histories"][idx], arrays["window_masks"][idx],
                arrays["shifts"][idx], arrays["labels"][idx],
            )
            optimizer.step()
            losses.append(loss)
        history.append(DmpEpochStats(epoch, float(np.mean(losses)), time.perf_counter() - t0))
        if log_every and epoch % log_every == 0:
            print(f"dmp-joint epoch {epoch:4d}  loss {history[-1].loss:.4f}")
    planner.set_train(False)
    return DmpTrainingResult(predictor=predictor, planner=planner, history=history)
