"""Finite-difference gradient-check battery over every layer type and the
composed predictor -> planner chain, all at 64-bit precision.

Used by both the ``grad-check`` CLI subcommand and the acceptance suite.
"""
from __future__ import annotations

import numpy as np

from . import nn
from .d2coplan import CoveragePlanner, D2CoPlanConfig
from .dmp import DmpConfig, MapPredictor, _action_loss_through_planner, _forward_action_loss


def _projection_check(layer_forward, layer_backward, tensors, signature, out_shape, rng,
                      tolerance):
    """Check a layer through the scalar loss L = sum(out * R) for fixed R."""
    r = rng.standard_normal(out_shape)

    def loss_and_grad():
        out = layer_forward()
        nn.zero_grad(tensors)
        layer_backward(r)
        return float((out * r).sum())

    def loss_only():
        out = layer_forward()
        return float((out * r).sum()), signature()

    return nn.grad_check(loss_and_grad, loss_only, tensors, tolerance=tolerance)


def check_dense_linear(seed=0, tolerance=1e-6):
    """Single linear layer: gradients are exact up to roundoff."""
    rng = np.random.default_rng(seed)
    layer = nn.Dense(7, 5, rng=rng, dtype=np.float64)
    x = rng.standard_normal((4, 7))
    return _projection_check(
        lambda: layer.forward(x), layer.backward, layer.tensors(),
        lambda: None, (4, 5), rng, tolerance,
    )


def check_conv2d(seed=0, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    layer = nn.Conv2d(2, 3, 3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 8, 8))
    return _projection_check(
        lambda: layer.forward(x), layer.backward, layer.tensors(),
        lambda: None, (2, 3, 8, 8), rng, tolerance,
    )


def check_conv_relu_pool(seed=0, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    net = nn.Sequential(
        nn.Conv2d(1, 4, 3, rng=rng, dtype=np.float64),
        nn.ReLU(),
        nn.MaxPool2d(2),
    )
    x = rng.standard_normal((2, 1, 8, 8))
    return _projection_check(
        lambda: net.forward(x), net.backward, net.tensors(),
        net.kink_signature, (2, 4, 4, 4), rng, tolerance,
    )


def check_graphconv(seed=0, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    layer = nn.GraphConv(6, 4, hops=1, rng=rng, dtype=np.float64)
    n = 5
    adj = (rng.random((n, n)) < 0.4).astype(np.float64)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    shifts = np.stack([np.eye(n), adj / 2.0])[None]
    x = rng.standard_normal((1, n, 6))
    return _projection_check(
        lambda: layer.forward(x, shifts), layer.backward, layer.tensors(),
        lambda: None, (1, n, 4), rng, tolerance,
    )


def check_softmax_ce(seed=0, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    layer = nn.Dense(6, 5, rng=rng, dtype=np.float64)
    x = rng.standard_normal((8, 6))
    labels = rng.integers(0, 5, size=8)

    def loss_and_grad():
        logits = layer.forward(x)
        nn.zero_grad(layer.tensors())
        loss, dlogits = nn.softmax_cross_entropy(logits, labels)
        layer.backward(dlogits)
        return loss

    def loss_only():
        loss, _ = nn.softmax_cross_entropy(layer.forward(x), labels)
        return loss, None

    return nn.grad_check(loss_and_grad, loss_only, layer.tensors(), tolerance=tolerance)


def check_weighted_pixel_ce(seed=0, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    layer = nn.Conv2d(3, 2, 3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 3, 6, 6))
    labels = (rng.random((2, 6, 6)) < 0.2).astype(np.int64)

    def loss_and_grad():
        logits = layer.forward(x)
        nn.zero_grad(layer.tensors())
        loss, dlogits = nn.weighted_pixel_cross_entropy(logits, labels)
        layer.backward(dlogits)
        return loss

    def loss_only():
        loss, _ = nn.weighted_pixel_cross_entropy(layer.forward(x), labels)
        return loss, None

    return nn.grad_check(loss_and_grad, loss_only, layer.tensors(), tolerance=tolerance)


def _small_chain(seed: int):
    """A small predictor -> planner pair at 64-bit with a random batch."""
    rng = np.random.default_rng(seed)
    g, n_robots, batch = 16, 3, 2
    planner_cfg = D2CoPlanConfig(grid_size=g, encoder_channels=(2, 4, 8), gnn_widths=(16, 8))
    dmp_cfg = DmpConfig(grid_size=g, channels=(4, 8, 4, 2))
    planner = CoveragePlanner(planner_cfg, init_seed=seed, dtype=np.float64)
    planner.set_train(False)
    predictor = MapPredictor(dmp_cfg, init_seed=seed, dtype=np.float64)
    histories = rng.random((batch, n_robots, 3, g, g))
    masks = np.ones((batch, n_robots, g, g))
    for b in range(batch):
        for i in range(n_robots):
            x0, y0 = rng.integers(0, g // 2, size=2)
            masks[b, i, :x0], masks[b, i, :, :y0] = 0.0, 0.0
    adj = np.zeros((n_robots, n_robots))
    adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = 1.0
    shifts = np.stack([np.eye(n_robots), adj / 1.5])
    shifts = np.broadcast_to(shifts, (batch, 2, n_robots, n_robots)).copy()
    labels = rng.integers(0, 5, size=(batch, n_robots))
    return predictor, planner, histories, masks, shifts, labels


def check_composed_chain(seed=0, tolerance=1e-4):
    """Action loss through predictor, channel softmax, window mask, and the
    full planner; gradients w.r.t. every parameter on both sides."""
    predictor, planner, histories, masks, shifts, labels = _small_chain(seed)
    tensors = predictor.tensors() + planner.tensors()

    def loss_and_grad():
        nn.zero_grad(tensors)
        return _action_loss_through_planner(predictor, planner, histories, masks,
                                            shifts, labels)

    def loss_only():
        return _forward_action_loss(predictor, planner, histories, masks, shifts, labels)

    return nn.grad_check(loss_and_grad, loss_only, tensors, tolerance=tolerance,
                         samples_per_tensor=12)


ALL_CHECKS = {
    "dense_linear": check_dense_linear,
    "conv2d": check_conv2d,
    "conv_relu_pool": check_conv_relu_pool,
    "graphconv": check_graphconv,
    "softmax_ce": check_softmax_ce,
    "weighted_pixel_ce": check_weighted_pixel_ce,
    "composed_dmp_planner": check_composed_chain,
}


def run_all_grad_checks(seed: int = 0, tolerance: float = 1e-4) -> dict:
    """Run the whole battery; the linear check keeps its tighter tolerance."""
    reports = {}
    for name, fn in ALL_CHECKS.items():
        if name == "dense_linear":
            reports[name] = fn(seed=seed)
        else:
            reports[name] = fn(seed=seed, tolerance=tolerance)
    return reports
