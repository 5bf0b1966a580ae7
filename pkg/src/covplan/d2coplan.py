"""The differentiable decentralized coverage planner (``d2coplan``).

Three stages, all differentiable:

1. map encoder: CNN that compresses a robot's local coverage map into a
   short feature vector (the payload a robot would transmit);
2. distributed feature generator: two polynomial graph-filter layers that
   aggregate the encodings over the communication graph, one synchronous
   1-hop exchange per layer;
3. local action selector: a single dense layer producing one logit per
   motion primitive.

Training imitates the centralized greedy expert (cross-entropy on its
action labels); execution is fully decentralized.  The architecture has no
parameter that depends on the number of robots, so one trained model plans
for any team size.

:meth:`CoveragePlanner.plan` runs the decentralized execution path: each
robot's computation is performed (and timed) separately, using only its own
map and its neighbors' transmitted features.  Neighbor features are
accumulated in position-sorted order with 64-bit arithmetic, which makes
the result bit-identical under any relabeling of the robots.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .comms import CommGraph, normalize
from .planners import PlannerInput, PlanResult
from .world import CoverageMap, N_ACTIONS


@dataclass(frozen=True)
class D2CoPlanConfig:
    """Architecture hyperparameters.

    Defaults are the desk-scale configuration (CPU-trainable in minutes);
    :func:`covplan.config.paper_profile` carries the full-scale one.
    """

    grid_size: int = 32
    encoder_channels: tuple[int, ...] = (4, 8, 16)
    conv_kernel: int = 3
    pool_kernel: int = 2
    gnn_widths: tuple[int, ...] = (64, 32)
    hops: int = 1
    n_actions: int = N_ACTIONS
    dropout: float = 0.2

    def __post_init__(self):
        if self.hops < 0:
            raise ValueError("hops must be >= 0")
        if any(w <= 0 for w in self.encoder_channels + self.gnn_widths):
            raise ValueError("all layer widths must be positive")
        if self.n_actions != N_ACTIONS:
            raise ValueError(f"action count must be {N_ACTIONS}")

    @property
    def feature_length(self) -> int:
        """Flattened encoder output length for this grid size."""
        side = self.grid_size
        for _ in self.encoder_channels:
            side //= self.pool_kernel
        if side == 0:
            raise ValueError(f"grid {self.grid_size} too small for the pooling schedule")
        return side * side * self.encoder_channels[-1]

    def describe(self) -> dict:
        return {
            "kind": "d2coplan",
            "grid_size": self.grid_size,
            "encoder_channels": list(self.encoder_channels),
            "conv_kernel": self.conv_kernel,
            "pool_kernel": self.pool_kernel,
            "gnn_widths": list(self.gnn_widths),
            "hops": self.hops,
            "n_actions": self.n_actions,
            "dropout": self.dropout,
        }


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


class CoveragePlanner:
    """The d2coplan network with both execution paths.

    The batched path (forward/backward over many instances) is used for
    training; :meth:`plan` is the decentralized per-robot path used for
    planning and timing.
    """

    def __init__(self, config: D2CoPlanConfig, init_seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        ss = np.random.SeedSequence(init_seed, spawn_key=(0xD2C0,))
        rngs = [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(8)]
        ch = (1,) + tuple(config.encoder_channels)
        blocks = []
        for i in range(len(config.encoder_channels)):
            blocks += [
                nn.Conv2d(ch[i], ch[i + 1], config.conv_kernel, rng=rngs[i], dtype=dtype,
                          name=f"encoder.conv{i + 1}"),
                nn.ReLU(),
                nn.MaxPool2d(config.pool_kernel),
                nn.Dropout(config.dropout),
            ]
        blocks.append(nn.Flatten())
        self.encoder = nn.Sequential(*blocks)
        h = config.feature_length
        w1, w2 = config.gnn_widths
        self.gc1 = nn.GraphConv(h, w1, config.hops, rng=rngs[3], dtype=dtype, name="gnn.layer1")
        self.gc1_act = nn.ReLU()
        self.gc2 = nn.GraphConv(w1, w2, config.hops, rng=rngs[4], dtype=dtype, name="gnn.layer2")
        self.gc2_act = nn.ReLU()
        self.gnn_dropout = nn.Dropout(config.dropout)
        self.selector = nn.Dense(w2, config.n_actions, rng=rngs[5], dtype=dtype, name="selector")
        self._train_mode = False

    # -- parameter plumbing -------------------------------------------------

    def tensors(self) -> list[nn.Tensor]:
        return (
            self.encoder.tensors()
            + self.gc1.tensors()
            + self.gc2.tensors()
            + self.selector.tensors()
        )

    def _dropouts(self):
        for layer in self.encoder.layers:
            if isinstance(layer, nn.Dropout):
                yield layer
        yield self.gnn_dropout

    def set_train(self, train: bool, seed: int | None = None) -> None:
        self._train_mode = train
        if train and seed is not None:
            ss = np.random.SeedSequence(seed, spawn_key=(0xD809,))
            children = ss.spawn(len(list(self._dropouts())))
            for layer, child in zip(self._dropouts(), children):
                layer.rng = np.random.Generator(np.random.PCG64(child))
        for layer in self._dropouts():
            layer.train_mode = train

    def arch_hash(self) -> str:
        return nn.architecture_hash(self.config.describe())

    def weight_store(self, **meta) -> nn.WeightStore:
        tensors = {t.name: t.data.copy() for t in self.tensors()}
        return nn.WeightStore(tensors=tensors, manifest={"arch_hash": self.arch_hash(), **meta})

    def load_store(self, store: nn.WeightStore) -> None:
        if store.arch_hash and store.arch_hash != self.arch_hash():
            raise ValueError("weight store does not match this architecture")
        for t in self.tensors():
            t.data[...] = store.tensors[t.name].astype(t.data.dtype)

    def save(self, path, **meta) -> None:
        nn.save_weights(self.weight_store(**meta), path)

    @classmethod
    def load(cls, path, config: D2CoPlanConfig, dtype=np.float32) -> "CoveragePlanner":
        model = cls(config, init_seed=0, dtype=dtype)
        store = nn.load_weights(path, expected_arch_hash=model.arch_hash())
        model.load_store(store)
        return model

    # -- batched path (training) --------------------------------------------

    def forward(self, maps: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        """maps (B, N, G, G) + shift powers (B, K+1, N, N) -> logits (B, N, A)."""
        b, n, g, _ = maps.shape
        if g != self.config.grid_size:
            raise ValueError(f"expected {self.config.grid_size}x{self.config.grid_size} maps, got {g}")
        feats = self.encoder.forward(maps.reshape(b * n, 1, g, g).astype(self.dtype))
        x = feats.reshape(b, n, -1)
        z = self.gc1_act.forward(self.gc1.forward(x, shifts))
        z = self.gc2_act.forward(self.gc2.forward(z, shifts))
        z = self.gnn_dropout.forward(z)
        logits = self.selector.forward(z.reshape(b * n, -1))
        self._batch_shape = (b, n, g)
        return logits.reshape(b, n, -1)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the input maps, shape (B, N, G, G)."""
        b, n, g = self._batch_shape
        dz = self.selector.backward(dlogits.reshape(b * n, -1)).reshape(b, n, -1)
        dz = self.gnn_dropout.backward(dz)
        dz = self.gc2.backward(self.gc2_act.backward(dz))
        dz = self.gc1.backward(self.gc1_act.backward(dz))
        dmaps = self.encoder.backward(dz.reshape(b * n, -1))
        return dmaps.reshape(b, n, g, g)

    def kink_signature(self) -> bytes:
        parts = [self.encoder.kink_signature() or b""]
        for layer in (self.gc1_act, self.gc2_act, self.gnn_dropout):
            parts.append(layer.kink_signature() or b"")
        return b"".join(parts)

    # -- decentralized path (execution) --------------------------------------

    def encode_map(self, local_map) -> np.ndarray:
        """Feature vector one robot computes from (and would transmit for)
        its local coverage map; length is config.feature_length."""
        grid = local_map.grid if isinstance(local_map, CoverageMap) else np.asarray(local_map)
        if grid.shape != (self.config.grid_size, self.config.grid_size):
            raise ValueError(
                f"expected a {self.config.grid_size}x{self.config.grid_size} map, got {grid.shape}"
            )
        was_training = self._train_mode
        self.set_train(False)
        feats = self.encoder.forward(grid[None, None].astype(self.dtype))[0]
        if was_training:
            self.set_train(True)
        return feats

    @staticmethod
    def _ordered_neighbor_sum(row: np.ndarray, feats: np.ndarray, order: np.ndarray) -> np.ndarray:
        """sum_j S_ij * f_j accumulated in canonical (position-sorted) order.

        The order depends only on robot positions, never on index labels, so
        permuting the team permutes the result bit-exactly.
        """
        out = np.zeros(feats.shape[1], dtype=np.float64)
        for j in order:
            w = row[j]
            if w != 0.0:
                out += w * feats[j]
        return out

    def _gnn_row(self, layer: nn.GraphConv, i: int, feats: np.ndarray,
                 srow: np.ndarray, order: np.ndarray) -> np.ndarray:
        if self.config.hops > 1:
            raise NotImplementedError("decentralized path supports K <= 1")
        taps = layer.taps.data.astype(np.float64)
        acc = feats[i] @ taps[0]
        if self.config.hops >= 1:
            acc = acc + self._ordered_neighbor_sum(srow, feats, order) @ taps[1]
        return acc + layer.bias.data.astype(np.float64)

    def plan(self, local_maps: list, graph: CommGraph) -> PlanResult:
        """Decentralized planning: encode locally, exchange once per GNN
        layer, select locally.  Deterministic in eval mode."""
        n = graph.n_robots
        if len(local_maps) != n:
            raise ValueError(f"need {n} local maps, got {len(local_maps)}")
        self.set_train(False)
        shift = normalize(graph)
        s = shift.matrix
        order = np.lexsort((graph.positions[:, 1], graph.positions[:, 0]))
        per_robot = [0.0] * n
        t_all = time.perf_counter()

        feats = np.empty((n, self.config.feature_length), dtype=np.float64)
        for i in range(n):
            t0 = time.perf_counter()
            feats[i] = self.encode_map(local_maps[i]).astype(np.float64)
            per_robot[i] += time.perf_counter() - t0
        # first exchange happens here; each robot now holds neighbors' features
        z1 = np.empty((n, self.config.gnn_widths[0]), dtype=np.float64)
        for i in range(n):
            t0 = time.perf_counter()
            z1[i] = np.maximum(self._gnn_row(self.gc1, i, feats, s[i], order), 0.0)
            per_robot[i] += time.perf_counter() - t0
        # second exchange
        actions = [0] * n
        wsel = self.selector.weight.data.astype(np.float64)
        bsel = self.selector.bias.data.astype(np.float64)
        for i in range(n):
            t0 = time.perf_counter()
            z2 = np.maximum(self._gnn_row(self.gc2, i, z1, s[i], order), 0.0)
            logits = z2 @ wsel + bsel
            actions[i] = int(np.argmax(logits))
            per_robot[i] += time.perf_counter() - t0
        total = time.perf_counter() - t_all
        return PlanResult(actions=actions, per_robot_s=per_robot, total_s=total,
                          planner="d2coplan")

    def plan_input(self, inp: PlannerInput) -> PlanResult:
        return self.plan(inp.local_maps, inp.graph)

    def select_action(self, aggregated: np.ndarray) -> np.ndarray:
        """Raw logits for one robot's aggregated feature row."""
        w = self.selector.weight.data.astype(np.float64)
        return np.asarray(aggregated, dtype=np.float64) @ w + self.selector.bias.data

    def aggregate(self, features: np.ndarray, graph: CommGraph) -> np.ndarray:
        """Both GNN layers over already-encoded features (N, H) -> (N, w2)."""
        shift = normalize(graph)
        s = shift.matrix
        order = np.lexsort((graph.positions[:, 1], graph.positions[:, 0]))
        feats = np.asarray(features, dtype=np.float64)
        z1 = np.stack(
            [np.maximum(self._gnn_row(self.gc1, i, feats, s[i], order), 0.0)
             for i in range(graph.n_robots)]
        )
        return np.stack(
            [np.maximum(self._gnn_row(self.gc2, i, z1, s[i], order), 0.0)
             for i in range(graph.n_robots)]
        )


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    wall_s: float


@dataclass
class TrainingResult:
    model: CoveragePlanner
    best_epoch: int
    best_val_loss: float
    history: list[EpochStats] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_imitation(
    train_arrays: dict,
    val_arrays: dict,
    config: D2CoPlanConfig,
    train_cfg: TrainConfig,
    out_dir=None,
    log_every: int = 0,
) -> TrainingResult:
    """Imitation training against expert action labels.

    ``*_arrays`` carry 'maps' (B, N, G, G), 'shifts' (B, K+1, N, N) and
    'labels' (B, N) as produced by :func:`covplan.datagen.load_training_arrays`.
    Returns the weights with minimum validation loss; a training-curve CSV
    and per-epoch checkpoints are written under out_dir when given.
    """
    if train_arrays["maps"].shape[0] == 0:
        raise ValueError("empty training dataset")
    model = CoveragePlanner(config, init_seed=train_cfg.seed)
    optimizer = nn.Adam(model.tensors(), lr=train_cfg.learning_rate)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(train_cfg.seed, spawn_key=(0xBA7C,))))
    model.set_train(True, seed=train_cfg.seed)

    history: list[EpochStats] = []
    best_val = np.inf
    best_epoch = -1
    best_weights = None
    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    n_train = train_arrays["maps"].shape[0]
    for epoch in range(train_cfg.epochs):
        model.set_train(True)
        losses = []
        for idx in _batches(n_train, train_cfg.batch_size, rng):
            maps = train_arrays["maps"][idx]
            shifts = train_arrays["shifts"][idx]
            labels = train_arrays["labels"][idx]
            b, n = labels.shape
            nn.zero_grad(model.tensors())
            logits = model.forward(maps, shifts)
            loss, dlogits = nn.softmax_cross_entropy(
                logits.reshape(b * n, -1), labels.reshape(b * n)
            )
            model.backward(dlogits.reshape(b, n, -1))
            optimizer.step()
            losses.append(loss)
        val_loss, val_acc = evaluate_imitation(model, val_arrays)
        stats = EpochStats(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_loss=val_loss,
            val_accuracy=val_acc,
            wall_s=time.perf_counter() - t_start,
        )
        history.append(stats)
        if log_every and epoch % log_every == 0:
            print(
                f"epoch {epoch:4d}  train {stats.train_loss:.4f}  "
                f"val {stats.val_loss:.4f}  acc {stats.val_accuracy:.3f}"
            )
        if ckpt_dir is not None:
            model.save(ckpt_dir / f"epoch_{epoch:04d}.cpw", epoch=epoch, val_loss=val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_weights = {t.name: t.data.copy() for t in model.tensors()}
    for t in model.tensors():
        t.data[...] = best_weights[t.name]
    model.set_train(False)
    if out_dir is not None:
        log_path = Path(out_dir) / "training_log.csv"
        with open(log_path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,val_accuracy,wall_s\n")
            for s in history:
                fh.write(
                    f"{s.epoch},{s.train_loss:.6f},{s.val_loss:.6f},"
                    f"{s.val_accuracy:.6f},{s.wall_s:.3f}\n"
                )
        model.save(Path(out_dir) / "model.cpw", best_epoch=best_epoch,
                   val_loss=best_val, seed=train_cfg.seed)
    return TrainingResult(model=model, best_epoch=best_epoch, best_val_loss=best_val,
                          history=history)


def evaluate_imitation(model: CoveragePlanner, arrays: dict) -> tuple[float, float]:
    """(mean action cross-entropy, action accuracy) against expert labels."""
    model.set_train(False)
    maps, shifts, labels = arrays["maps"], arrays["shifts"], arrays["labels"]
    b, n = labels.shape
    logits = model.forward(maps, shifts).reshape(b * n, -1)
    loss, _ = nn.softmax_cross_entropy(logits, labels.reshape(b * n))
    acc = float((logits.argmax(axis=1) == labels.reshape(b * n)).mean())
    return loss, acc
