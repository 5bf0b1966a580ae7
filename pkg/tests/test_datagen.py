import hashlib
import json
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

import covplan as cp
from covplan import datagen

PARAMS = cp.WorldParams(grid_size=20, sensing_range=2, step_distance=4, comm_range=8.0,
                        fill_fraction=0.15)
GEN = cp.DensityGenConfig().scaled_to(20)


def _dir_hash(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def _gen(tmp, name, count=6, seed=7, jobs=1):
    out = tmp / name
    datagen.generate_dataset(out, count=count, params=PARAMS, n_robots=3, seed=seed,
                             gen_cfg=GEN, jobs=jobs)
    return out


class TestBuildEpisode:
    def test_deterministic(self):
        a = datagen.build_episode(PARAMS, 3, seed=1, index=2, gen_cfg=GEN)
        b = datagen.build_episode(PARAMS, 3, seed=1, index=2, gen_cfg=GEN)
        npt.assert_array_equal(a.local_maps, b.local_maps)
        npt.assert_array_equal(a.label_actions, b.label_actions)
        npt.assert_array_equal(a.targets_final.positions, b.targets_final.positions)

    def test_records_four_steps(self):
        rec = datagen.build_episode(PARAMS, 3, seed=2, gen_cfg=GEN)
        assert rec.global_maps.shape == (4, 20, 20)
        assert rec.local_maps.shape == (4, 3, 20, 20)

    def test_history_aligned_with_motion(self):
        rec = datagen.build_episode(PARAMS, 3, seed=3, gen_cfg=GEN)
        targets = rec.targets_initial
        for k in range(datagen.HISTORY_STEPS):
            npt.assert_array_equal(rec.global_maps[k], cp.rasterize_targets(targets, 20))
            targets = cp.step_targets(targets, PARAMS)
        npt.assert_array_equal(rec.global_maps[3], cp.rasterize_targets(targets, 20))
        npt.assert_array_equal(targets.positions, rec.targets_final.positions)

    def test_label_matches_expert_recomputation(self):
        rec = datagen.build_episode(PARAMS, 3, seed=4, gen_cfg=GEN)
        result = cp.expert_plan(rec.planner_input())
        assert result.actions == rec.label_actions.tolist()


class TestSplits:
    def test_paper_scale_split_counts(self):
        assert datagen.split_counts(40000, (0.6, 0.2, 0.2)) == (24000, 8000, 8000)

    def test_exact_partition_various_sizes(self):
        for n in (1, 2, 3, 7, 10, 123):
            tr, va, te = datagen.split_counts(n, (0.6, 0.2, 0.2))
            assert tr + va + te == n
            assert tr >= 0 and va >= 0 and te >= 0

    def test_splits_disjoint_and_exhaustive(self, tmp_path):
        out = _gen(tmp_path, "d", count=10)
        manifest = datagen.load_manifest(out)
        all_indices = sorted(
            manifest.splits["train"] + manifest.splits["val"] + manifest.splits["test"]
        )
        assert all_indices == list(range(10))


class TestDiskFormat:
    def test_double_run_byte_identical(self, tmp_path):
        a = _gen(tmp_path, "a")
        b = _gen(tmp_path, "b")
        assert _dir_hash(a) == _dir_hash(b)

    def test_parallel_matches_serial(self, tmp_path):
        a = _gen(tmp_path, "serial", jobs=1)
        b = _gen(tmp_path, "parallel", jobs=2)
        assert _dir_hash(a) == _dir_hash(b)

    def test_missing_manifest_invalid(self, tmp_path):
        out = _gen(tmp_path, "c")
        (out / "manifest.json").unlink()
        with pytest.raises(FileNotFoundError, match="manifest"):
            datagen.load_manifest(out)

    def test_round_trip(self, tmp_path):
        out = _gen(tmp_path, "d")
        rec0 = datagen.build_episode(PARAMS, 3, seed=7, index=0, gen_cfg=GEN)
        loaded = datagen.load_record(out, 0)
        npt.assert_array_equal(loaded.local_maps, rec0.local_maps)
        npt.assert_array_equal(loaded.global_maps, rec0.global_maps)
        npt.assert_array_equal(loaded.label_actions, rec0.label_actions)
        npt.assert_array_equal(loaded.targets_final.positions, rec0.targets_final.positions)
        npt.assert_array_equal(loaded.robots.positions, rec0.robots.positions)
        assert loaded.expert_coverage == rec0.expert_coverage

    def test_checksums_match_content(self, tmp_path):
        out = _gen(tmp_path, "e")
        manifest = datagen.load_manifest(out)
        rdir = out / "records" / "rec_000000"
        assert datagen._record_checksum(rdir) == manifest.checksums[0]

    def test_manifest_has_version_field(self, tmp_path):
        out = _gen(tmp_path, "f")
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["format"] == datagen.DATASET_FORMAT


class TestRelabelOracle:
    def test_sample_relabel_passes(self, tmp_path):
        out = _gen(tmp_path, "g", count=8)
        assert datagen.verify_labels(out, sample_fraction=0.5, seed=0) == 4

    def test_detects_corrupted_label(self, tmp_path):
        out = _gen(tmp_path, "h", count=4)
        meta_path = out / "records" / "rec_000001" / "meta.json"
        meta = json.loads(meta_path.read_text())
        meta["label_actions"] = [(a + 1) % 5 for a in meta["label_actions"]]
        meta_path.write_text(json.dumps(meta))
        with pytest.raises(AssertionError, match="label"):
            datagen.verify_labels(out, sample_fraction=1.0, seed=0)


class TestTrainingArrays:
    def test_shapes(self, tmp_path):
        out = _gen(tmp_path, "i", count=10)
        arrays = datagen.load_training_arrays(out, "train")
        n_train = len(datagen.load_manifest(out).splits["train"])
        assert arrays["maps"].shape == (n_train, 3, 20, 20)
        assert arrays["shifts"].shape == (n_train, 2, 3, 3)
        assert arrays["labels"].shape == (n_train, 3)
        assert arrays["histories"].shape == (n_train, 3, 3, 20, 20)
        assert arrays["next_maps"].shape == (n_train, 3, 20, 20)
        assert arrays["window_masks"].shape == (n_train, 3, 20, 20)

    def test_planner_map_is_masked_label_step(self, tmp_path):
        out = _gen(tmp_path, "j", count=3)
        rec = datagen.load_record(out, 0)
        arrays = datagen.arrays_from_records([rec])
        npt.assert_array_equal(arrays["maps"][0], rec.local_maps[datagen.HISTORY_STEPS])
