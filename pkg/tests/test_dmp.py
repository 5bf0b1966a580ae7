import numpy as np
import numpy.testing as npt
import pytest

import covplan as cp
from covplan import datagen, nn
from covplan.d2coplan import CoveragePlanner, D2CoPlanConfig, TrainConfig
from covplan.dmp import (
    DmpConfig,
    MapPredictor,
    constant_free_loss,
    train_dmp_downstream,
    train_dmp_standalone,
    train_joint,
)

DESK = cp.WorldParams(grid_size=32, sensing_range=3, step_distance=8, comm_range=12.0)
GEN = cp.DensityGenConfig().scaled_to(32)
DMP_CFG = DmpConfig()
PLANNER_CFG = D2CoPlanConfig()


@pytest.fixture(scope="module")
def small_arrays():
    recs = [datagen.build_episode(DESK, 4, seed=30, index=i, gen_cfg=GEN) for i in range(8)]
    return datagen.arrays_from_records(recs)


class TestPredictMap:
    def test_shape_preserved_various_grids(self):
        for g in (16, 32, 48):
            model = MapPredictor(DmpConfig(grid_size=g), init_seed=0)
            hist = np.random.default_rng(0).random((3, g, g)).astype(np.float32)
            pred = model.predict_map(hist)
            assert pred.logits.shape == (2, g, g)
            assert pred.occupied.shape == (g, g)

    def test_softmax_channels_sum_to_one(self):
        model = MapPredictor(DMP_CFG, init_seed=1)
        hist = np.random.default_rng(1).random((3, 32, 32)).astype(np.float32)
        logits = model.forward(hist[None])
        p, cache = nn.occupied_probability(logits)
        npt.assert_allclose(cache.sum(axis=1), 1.0, atol=1e-6)
        assert ((p >= 0) & (p <= 1)).all()

    def test_wrong_channel_count_rejected(self):
        model = MapPredictor(DMP_CFG, init_seed=0)
        with pytest.raises(ValueError):
            model.forward(np.zeros((1, 4, 32, 32), dtype=np.float32))

    def test_config_requires_two_output_channels(self):
        with pytest.raises(ValueError):
            DmpConfig(channels=(8, 16, 4, 3))


class TestStandaloneTraining:
    def test_loss_decreases(self, small_arrays):
        b, n = small_arrays["labels"].shape
        hist = small_arrays["histories"].reshape(b * n, 3, 32, 32)
        nxt = small_arrays["next_maps"].reshape(b * n, 32, 32)
        res = train_dmp_standalone(hist, nxt, DMP_CFG,
                                   TrainConfig(epochs=30, seed=0, learning_rate=3e-3))
        assert res.history[-1].loss < res.history[0].loss

    def test_beats_constant_free_prediction(self, small_arrays):
        b, n = small_arrays["labels"].shape
        hist = small_arrays["histories"].reshape(b * n, 3, 32, 32)
        nxt = small_arrays["next_maps"].reshape(b * n, 32, 32)
        res = train_dmp_standalone(hist, nxt, DMP_CFG,
                                   TrainConfig(epochs=60, seed=0, learning_rate=3e-3))
        floor = constant_free_loss(nxt)
        logits = res.predictor.forward(hist)
        loss, _ = nn.weighted_pixel_cross_entropy(logits, (nxt > 0).astype(np.int64))
        assert loss < floor

    def test_class_weights_change_training(self, small_arrays):
        b, n = small_arrays["labels"].shape
        hist = small_arrays["histories"].reshape(b * n, 3, 32, 32)
        nxt = small_arrays["next_maps"].reshape(b * n, 32, 32)
        tc = TrainConfig(epochs=3, seed=0)
        r10 = train_dmp_standalone(hist, nxt, DMP_CFG, tc)
        r11 = train_dmp_standalone(hist, nxt, DmpConfig(class_weights=(1.0, 1.0)), tc)
        diff = any(
            not np.array_equal(a.data, b.data)
            for a, b in zip(r10.predictor.tensors(), r11.predictor.tensors())
        )
        assert diff

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_dmp_standalone(np.zeros((0, 3, 32, 32)), np.zeros((0, 32, 32)),
                                 DMP_CFG, TrainConfig(epochs=1))


class TestDownstreamTraining:
    def test_planner_frozen_bit_exact(self, small_arrays):
        planner = CoveragePlanner(PLANNER_CFG, init_seed=5)
        before = {t.name: t.data.copy() for t in planner.tensors()}
        res = train_dmp_downstream(small_arrays, planner, DMP_CFG,
                                   TrainConfig(epochs=2, seed=0))
        for t in res.planner.tensors():
            npt.assert_array_equal(t.data, before[t.name])

    def test_predictor_gradient_live(self, small_arrays):
        from covplan.dmp import _action_loss_through_planner

        planner = CoveragePlanner(PLANNER_CFG, init_seed=6)
        planner.set_train(False)
        predictor = MapPredictor(DMP_CFG, init_seed=6)
        nn.zero_grad(predictor.tensors() + planner.tensors())
        _action_loss_through_planner(
            predictor, planner,
            small_arrays["histories"][:2], small_arrays["window_masks"][:2],
            small_arrays["shifts"][:2], small_arrays["labels"][:2],
        )
        grad_mag = sum(float(np.abs(t.grad).sum()) for t in predictor.tensors())
        assert grad_mag > 0.0

    def test_loss_decreases(self, small_arrays):
        planner = CoveragePlanner(PLANNER_CFG, init_seed=7)
        res = train_dmp_downstream(small_arrays, planner, DMP_CFG,
                                   TrainConfig(epochs=25, seed=0, learning_rate=3e-3))
        assert res.history[-1].loss < res.history[0].loss


class TestJointTraining:
    def test_both_parameter_sets_change(self, small_arrays):
        res = train_joint(small_arrays, PLANNER_CFG, DMP_CFG,
                          TrainConfig(epochs=2, seed=0))
        fresh_dmp = MapPredictor(DMP_CFG, init_seed=0)
        fresh_planner = CoveragePlanner(PLANNER_CFG, init_seed=1)
        dmp_changed = any(
            not np.array_equal(a.data, b.data)
            for a, b in zip(res.predictor.tensors(), fresh_dmp.tensors())
        )
        planner_changed = any(
            not np.array_equal(a.data, b.data)
            for a, b in zip(res.planner.tensors(), fresh_planner.tensors())
        )
        assert dmp_changed and planner_changed

    def test_action_loss_decreases(self, small_arrays):
        res = train_joint(small_arrays, PLANNER_CFG, DMP_CFG,
                          TrainConfig(epochs=20, seed=1, learning_rate=3e-3))
        assert res.history[-1].loss < res.history[0].loss


def test_label_rasterization_marks_occupied_cells(small_arrays):
    # the standalone label marks exactly the cells holding >= 1 target,
    # inside each robot's window
    rec = datagen.build_episode(DESK, 4, seed=31, gen_cfg=GEN)
    arrays = datagen.arrays_from_records([rec])
    binary = (rec.global_maps[datagen.HISTORY_STEPS] > 0).astype(np.float32)
    for i in range(4):
        mask = arrays["window_masks"][0, i]
        npt.assert_array_equal(arrays["next_maps"][0, i], binary * mask)


def test_predicted_maps_feed_planners():
    from covplan.bench import predicted_local_maps

    rec = datagen.build_episode(DESK, 4, seed=32, gen_cfg=GEN)
    predictor = MapPredictor(DMP_CFG, init_seed=8)
    maps = predicted_local_maps(rec, predictor)
    assert len(maps) == 4
    for i, m in enumerate(maps):
        assert m.grid.shape == (32, 32)
        x0, x1, y0, y1 = m.window
        outside = m.grid.copy()
        outside[x0 : x1 + 1, y0 : y1 + 1] = 0
        assert not outside.any()
