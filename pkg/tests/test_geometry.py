import math

import numpy as np
import pytest

from servobench.geometry import (
    EulerAngles,
    Pose,
    Quat,
    apply_estimate,
    compose,
    euler_to_quat,
    inverse,
    pose_error,
    quat_to_euler,
    relative_label,
)


def random_pose(rng):
    axis = rng.normal(size=3)
    angle = rng.uniform(-math.pi, math.pi)
    t = rng.uniform(-0.5, 0.5, size=3)
    return Pose(Quat.from_axis_angle(axis, angle), tuple(t))


def rot_yaw(deg):
    return Pose(Quat.from_axis_angle((0, 0, 1), math.radians(deg)), (0, 0, 0))


class TestCompose:
    def test_identity(self):
        rng = np.random.default_rng(1)
        p = random_pose(rng)
        q = compose(Pose.identity(), p)
        assert np.allclose(q.to_matrix(), p.to_matrix(), atol=1e-12)

    def test_inverse_case(self):
        rng = np.random.default_rng(2)
        p = random_pose(rng)
        q = compose(p, inverse(p))
        assert np.allclose(q.to_matrix(), np.eye(4), atol=1e-9)

    def test_matrix_oracle(self):
        a = Pose.from_translation(0.01, 0, 0)
        b = rot_yaw(90)
        got = compose(a, b).to_matrix()
        want = a.to_matrix() @ b.to_matrix()
        assert np.abs(got - want).max() <= 1e-12

    def test_matrix_oracle_random(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            got = compose(a, b).to_matrix()
            want = a.to_matrix() @ b.to_matrix()
            assert np.abs(got - want).max() <= 1e-12

    def test_associativity(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.abs(np.array(left.to_list()) - np.array(right.to_list())).max() <= 1e-9

    def test_double_cover(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            qa = a.rotation
            neg = Pose(Quat(-qa.w, -qa.x, -qa.y, -qa.z), a.translation)
            assert compose(neg, b).to_list() == pytest.approx(compose(a, b).to_list(), abs=1e-12)

    def test_norm_preserved(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            p = compose(random_pose(rng), random_pose(rng))
            assert abs(p.rotation.norm() - 1.0) <= 1e-9
            assert p.rotation.w >= 0.0


class TestInverse:
    def test_identity(self):
        assert inverse(Pose.identity()).to_list() == pytest.approx(Pose.identity().to_list())

    def test_pure_translation(self):
        p = Pose.from_translation(0.1, -0.2, 0.3)
        assert inverse(p).translation == pytest.approx((-0.1, 0.2, -0.3))

    def test_matrix_inverse_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = random_pose(rng)
            got = inverse(p).to_matrix()
            want = np.linalg.inv(p.to_matrix())
            assert np.abs(got - want).max() <= 1e-12

    def test_roundtrip_seven_params(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            p = random_pose(rng)
            ident = compose(p, inverse(p))
            assert np.abs(np.array(ident.to_list())
                          - np.array(Pose.identity().to_list())).max() <= 1e-9


class TestRelativeLabel:
    def test_same_pose(self):
        rng = np.random.default_rng(9)
        p = random_pose(rng)
        lbl = relative_label(p, p)
        assert np.abs(np.array(lbl.to_list()) - np.array(Pose.identity().to_list())).max() <= 1e-9

    def test_against_identity(self):
        lbl = relative_label(Pose.from_translation(0.01, 0, 0), Pose.identity())
        want = Pose.from_translation(0.01, 0, 0).to_matrix()
        assert np.abs(lbl.to_matrix() - want).max() <= 1e-12

    def test_composes_back(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            back = compose(relative_label(a, b), b)
            assert np.abs(np.array(back.to_list()) - np.array(a.to_list())).max() <= 1e-9


class TestApplyEstimate:
    def test_identity_delta(self):
        rng = np.random.default_rng(11)
        p = random_pose(rng)
        assert apply_estimate(Pose.identity(), p).to_list() == pytest.approx(p.to_list())

    def test_label_correction_identity(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            ref, test = random_pose(rng), random_pose(rng)
            est = apply_estimate(relative_label(ref, test), test)
            assert np.abs(np.array(est.to_list()) - np.array(ref.to_list())).max() <= 1e-9

    def test_matrix_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            d, t = random_pose(rng), random_pose(rng)
            got = apply_estimate(d, t).to_matrix()
            assert np.abs(got - d.to_matrix() @ t.to_matrix()).max() <= 1e-12


class TestEuler:
    def test_identity(self):
        e = quat_to_euler(Quat.identity())
        assert (e.roll, e.pitch, e.yaw) == pytest.approx((0, 0, 0))

    def test_yaw_90(self):
        q = euler_to_quat(EulerAngles(0, 0, 90))
        assert (q.w, q.z) == pytest.approx((math.sqrt(2) / 2, math.sqrt(2) / 2))
        assert (q.x, q.y) == pytest.approx((0, 0))

    def test_roundtrip_small(self):
        q = euler_to_quat(EulerAngles(5, -5, 10))
        e = quat_to_euler(q)
        assert (e.roll, e.pitch, e.yaw) == pytest.approx((5, -5, 10), abs=1e-9)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(14)
        for _ in range(1000):
            axis = rng.normal(size=3)
            q = Quat.from_axis_angle(axis, rng.uniform(-math.pi, math.pi))
            q2 = euler_to_quat(quat_to_euler(q))
            diff = min(
                max(abs(q.w - q2.w), abs(q.x - q2.x), abs(q.y - q2.y), abs(q.z - q2.z)),
                max(abs(q.w + q2.w), abs(q.x + q2.x), abs(q.y + q2.y), abs(q.z + q2.z)),
            )
            assert diff <= 1e-9

    def test_pitch_range(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            q = Quat.from_axis_angle(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
            assert -90.0 <= quat_to_euler(q).pitch <= 90.0

    def test_gimbal_flagged(self):
        q = euler_to_quat(EulerAngles(0, 90, 30))
        e = quat_to_euler(q)
        assert e.gimbal_lock
        assert e.roll == 0.0
        # the quaternion itself still round-trips
        q2 = euler_to_quat(e)
        assert abs(abs(q.w * q2.w + q.x * q2.x + q.y * q2.y + q.z * q2.z) - 1) <= 1e-9


class TestPoseError:
    def test_zero(self):
        rng = np.random.default_rng(16)
        p = random_pose(rng)
        e = pose_error(p, p)
        assert max(e.translation_mm()) <= 1e-9
        assert max(e.rotation_deg()) <= 1e-9

    def test_x_offset(self):
        p = Pose.identity()
        q = Pose.from_translation(0.003, 0, 0)
        e = pose_error(q, p)
        assert e.e_x == pytest.approx(3.0)
        assert (e.e_y, e.e_z) == pytest.approx((0, 0))
        assert max(e.rotation_deg()) == pytest.approx(0)

    def test_oracle_random(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            truth, est = random_pose(rng), random_pose(rng)
            e = pose_error(truth, est)
            # independent oracle: matrix algebra + direct Euler extraction
            dt = (np.array(truth.translation) - np.array(est.translation)) * 1000.0
            rel = np.linalg.inv(est.rotation.to_matrix()) @ truth.rotation.to_matrix()
            pitch = math.degrees(math.asin(max(-1, min(1, -rel[2, 0]))))
            roll = math.degrees(math.atan2(rel[2, 1], rel[2, 2]))
            yaw = math.degrees(math.atan2(rel[1, 0], rel[0, 0]))
            want = np.abs([dt[0], dt[1], dt[2], roll, pitch, yaw])
            got = np.array([e.e_x, e.e_y, e.e_z, e.e_roll, e.e_pitch, e.e_yaw])
            assert np.abs(got - want).max() <= 1e-9

    def test_all_nonnegative(self):
        rng = np.random.default_rng(18)
        for _ in range(100):
            e = pose_error(random_pose(rng), random_pose(rng))
            assert min(*e.translation_mm(), *e.rotation_deg()) >= 0


class TestSerialization:
    def test_wire_roundtrip(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            p = random_pose(rng)
            q = Pose.from_list(p.to_list())
            assert q.to_list() == pytest.approx(p.to_list(), abs=1e-12)

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            Pose.from_list([1, 2, 3])
