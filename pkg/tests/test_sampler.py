import math
import os

import numpy as np
import pytest

from servobench.geometry import Pose, compose, inverse, quat_to_euler, relative_label
from servobench.sampler import (
    LIFT_HEIGHT,
    DatasetManifest,
    SamplingRanges,
    base_placements,
    d2e_from_world,
    generate_dataset,
    insertion_pose_for,
    load_manifest,
    load_samples,
    make_default_pose,
    pair_stream,
    placement_scene,
    sample_pose,
    split_indices,
    world_from_d2e,
)
from servobench.scene import default_connectors


def small_manifest(**kw):
    defaults = dict(connectors=["A1"], samples_per_placement=2, val_size=5,
                    test_size=5, seed=3)
    defaults.update(kw)
    return DatasetManifest(**defaults)


class TestDefaultPose:
    def test_lift_15cm(self):
        p = make_default_pose(Pose.identity())
        assert p.translation == pytest.approx((0.0, 0.0, 0.15))
        assert LIFT_HEIGHT == 0.15

    def test_applying_twice_adds(self):
        p = make_default_pose(make_default_pose(Pose.identity()))
        assert p.translation[2] == pytest.approx(0.30)

    def test_rotation_unchanged(self):
        ins = insertion_pose_for(default_connectors()["B2"], (0.01, -0.02, 30.0))
        d = make_default_pose(ins)
        q, p = d.rotation, ins.rotation
        assert (q.w, q.x, q.y, q.z) == (p.w, p.x, p.y, p.z)
        assert d.translation[:2] == ins.translation[:2]


class TestSamplePose:
    def test_bounds_10k(self):
        r = SamplingRanges()
        default = make_default_pose(Pose.identity())
        rng = np.random.default_rng(0)
        dz_sum = 0.0
        for _ in range(10_000):
            p = sample_pose(rng, default, r)
            dx = p.translation[0] - default.translation[0]
            dy = p.translation[1] - default.translation[1]
            dz = p.translation[2] - default.translation[2]
            assert math.hypot(dx, dy) <= r.cylinder_radius + 1e-12
            assert 0.0 <= dz <= r.cylinder_height
            rel = compose(inverse(default), p)
            e = quat_to_euler(rel.rotation)
            assert abs(e.roll) <= r.roll_pitch_limit + 1e-9
            assert abs(e.pitch) <= r.roll_pitch_limit + 1e-9
            assert abs(e.yaw) <= r.yaw_limit + 1e-9
            dz_sum += dz
        # uniform on [0, 10 mm] has mean 5 mm
        assert dz_sum / 10_000 * 1000 == pytest.approx(5.0, abs=0.3)

    def test_degenerate_ranges(self):
        r = SamplingRanges(1e-300, 1e-300, 1e-300, 1e-300)
        default = make_default_pose(Pose.identity())
        p = sample_pose(np.random.default_rng(1), default, r)
        assert np.allclose(p.to_list(), default.to_list(), atol=1e-12)

    def test_area_uniform_disk(self):
        # area-uniform sampling puts ~25% of draws inside half the radius
        r = SamplingRanges()
        default = make_default_pose(Pose.identity())
        rng = np.random.default_rng(2)
        inner = 0
        n = 20_000
        for _ in range(n):
            p = sample_pose(rng, default, r)
            if math.hypot(p.translation[0], p.translation[1]) <= r.cylinder_radius / 2:
                inner += 1
        assert inner / n == pytest.approx(0.25, abs=0.02)

    def test_rejects_nonpositive_ranges(self):
        with pytest.raises(ValueError):
            SamplingRanges(cylinder_radius=0.0)


class TestPlacements:
    def test_twenty(self):
        assert len(base_placements()) == 20

    def test_vertex_spacing_5cm(self):
        pts = {(x, y) for x, y, _ in base_placements()}
        xs = sorted({x for x, _ in pts if x != 0.0})
        ys = sorted({y for _, y in pts if y != 0.0})
        assert xs[1] - xs[0] == pytest.approx(0.05)
        assert ys[1] - ys[0] == pytest.approx(0.05)

    def test_center_is_centroid(self):
        pts = [(x, y) for x, y, _ in base_placements()]
        vertices = [p for p in pts if p != (0.0, 0.0)]
        cx = sum(x for x, _ in vertices) / len(vertices)
        cy = sum(y for _, y in vertices) / len(vertices)
        assert (cx, cy) == pytest.approx((0.0, 0.0))
        assert (0.0, 0.0) in pts

    def test_yaw_grid(self):
        for x, y in {(x, y) for x, y, _ in base_placements()}:
            yaws = sorted(yaw for px, py, yaw in base_placements() if (px, py) == (x, y))
            assert yaws == [0.0, 30.0, 60.0, 90.0]

    def test_lighting_varies_per_placement(self):
        c = default_connectors()["A1"]
        s0 = placement_scene(c, (0, 0, 0.0), 3, 0, 0)
        s1 = placement_scene(c, (0, 0, 30.0), 3, 0, 1)
        assert s0.light_direction != s1.light_direction or s0.ambient != s1.ambient


class TestD2E:
    def test_roundtrip(self):
        rng = np.random.default_rng(4)
        r = SamplingRanges()
        default = make_default_pose(insertion_pose_for(default_connectors()["A1"],
                                                       (0.025, -0.025, 60.0)))
        for _ in range(100):
            world = sample_pose(rng, default, r)
            t = d2e_from_world(default, world)
            back = world_from_d2e(default, t)
            assert np.abs(np.array(back.to_list()) - np.array(world.to_list())).max() <= 1e-9

    def test_labels_within_ranges(self):
        # the d2e convention keeps labels inside the sampling bounds
        rng = np.random.default_rng(5)
        r = SamplingRanges()
        default = make_default_pose(insertion_pose_for(default_connectors()["C2"],
                                                       (-0.025, 0.025, 90.0)))
        for _ in range(200):
            t = d2e_from_world(default, sample_pose(rng, default, r))
            tx, ty, tz = t.translation
            assert math.hypot(tx, ty) <= r.cylinder_radius + 1e-9
            # the default frame looks down, so the upward world offset is
            # negative local z; the magnitude stays within the cylinder height
            assert abs(tz) <= r.cylinder_height + 1e-9


class TestDataset:
    def test_generate_counts_and_layout(self, tmp_path):
        man = small_manifest()
        out = str(tmp_path / "ds")
        generate_dataset(man, out)
        assert os.path.exists(os.path.join(out, "manifest.json"))
        samples = load_samples(out, "A1")
        assert len(samples) == 2 * 20
        assert all(s.image.width == 64 and s.image.height == 64 for s in samples)

    def test_manifest_roundtrip(self, tmp_path):
        man = small_manifest()
        out = str(tmp_path / "ds")
        generate_dataset(man, out)
        back = load_manifest(out)
        assert back.to_json() == man.to_json()

    def test_labels_reload_valid(self, tmp_path):
        man = small_manifest()
        out = str(tmp_path / "ds")
        generate_dataset(man, out)
        r = man.ranges
        for s in load_samples(out, "A1"):
            assert abs(s.t_d2e.rotation.norm() - 1.0) <= 1e-9
            tx, ty, tz = s.t_d2e.translation
            assert math.hypot(tx, ty) <= r.cylinder_radius + 1e-9
            assert abs(tz) <= r.cylinder_height + 1e-9

    def test_byte_identical_reruns(self, tmp_path):
        man = small_manifest()
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        generate_dataset(man, out_a)
        generate_dataset(man, out_b)
        with open(os.path.join(out_a, "A1", "labels.jsonl"), "rb") as f:
            la = f.read()
        with open(os.path.join(out_b, "A1", "labels.jsonl"), "rb") as f:
            lb = f.read()
        assert la == lb
        with open(os.path.join(out_a, "A1", "0.pgm"), "rb") as f:
            pa = f.read()
        with open(os.path.join(out_b, "A1", "0.pgm"), "rb") as f:
            pb = f.read()
        assert pa == pb

    def test_invalid_manifest_rejected_before_write(self, tmp_path):
        man = small_manifest(connectors=["nope"])
        out = str(tmp_path / "ds")
        with pytest.raises(ValueError, match="unknown connector"):
            generate_dataset(man, out)
        assert not os.path.exists(out)

    def test_split_sizes_validated(self):
        with pytest.raises(ValueError, match="split"):
            small_manifest(val_size=30, test_size=30, samples_per_placement=2).validate()

    def test_placement_recorded(self, tmp_path):
        man = small_manifest()
        out = str(tmp_path / "ds")
        generate_dataset(man, out)
        samples = load_samples(out, "A1")
        assert [s.placement for s in samples] == [p for p in range(20) for _ in range(2)]


class TestSplits:
    def test_partition(self):
        man = small_manifest(samples_per_placement=5)
        train, val, test = split_indices(man, "A1")
        n = man.samples_per_connector
        assert len(val) == 5 and len(test) == 5
        assert sorted(train + val + test) == list(range(n))
        assert not (set(train) & set(val)) and not (set(val) & set(test))
        assert not (set(train) & set(test))

    def test_deterministic(self):
        man = small_manifest(samples_per_placement=5)
        assert split_indices(man, "A1") == split_indices(man, "A1")

    def test_differs_per_connector(self):
        man = small_manifest(connectors=["A1", "B1"], samples_per_placement=5)
        assert split_indices(man, "A1") != split_indices(man, "B1")


class TestPairStream:
    def _samples(self, n=6):
        rng = np.random.default_rng(8)
        r = SamplingRanges()
        default = make_default_pose(Pose.identity())
        from servobench.sampler import Sample
        from servobench.scene import Image

        out = []
        for _ in range(n):
            world = sample_pose(rng, default, r)
            out.append(Sample(Image(rng.random((4, 4))), d2e_from_world(default, world)))
        return out

    def test_count_and_label_consistency(self):
        samples = self._samples()
        pairs = list(pair_stream(samples, 50, np.random.default_rng(0)))
        assert len(pairs) == 50
        by_img = {id(s.image.pixels.tobytes()): s for s in samples}
        for p in pairs:
            a = next(s for s in samples if s.image == p.image_a)
            b = next(s for s in samples if s.image == p.image_b)
            want = relative_label(a.t_d2e, b.t_d2e)
            assert np.allclose(p.label.to_list(), want.to_list(), atol=1e-12)

    def test_self_pair_identity(self):
        samples = self._samples(1)
        pair = next(pair_stream(samples, 1, np.random.default_rng(0)))
        assert np.abs(np.array(pair.label.to_list())
                      - np.array(Pose.identity().to_list())).max() <= 1e-9

    def test_antisymmetry(self):
        samples = self._samples()
        for i in range(len(samples)):
            for j in range(len(samples)):
                lij = relative_label(samples[i].t_d2e, samples[j].t_d2e)
                lji = relative_label(samples[j].t_d2e, samples[i].t_d2e)
                diff = np.array(lij.to_list()) - np.array(inverse(lji).to_list())
                assert np.abs(diff).max() <= 1e-9

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            next(pair_stream([], 1, np.random.default_rng(0)))

    def test_deterministic(self):
        samples = self._samples()
        a = [p.label.to_list() for p in pair_stream(samples, 20, np.random.default_rng(5))]
        b = [p.label.to_list() for p in pair_stream(samples, 20, np.random.default_rng(5))]
        assert a == b
