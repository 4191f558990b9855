import numpy as np
import pytest

from conftest import random_rotation_vector
from puppetmap.errors import NonConvergence, Unobservable
from puppetmap.geometry import RigidTransform, pose_to_transform
from puppetmap.kinematics import BONES, bone_point_to_base, forward
from puppetmap.joints import LimbCorrespondences, lift_to_limb_frame, solve_joints
from puppetmap.model import part_id
from puppetmap.registration import RobustConfig
from puppetmap.silhouette import MatchedPair, SilhouetteSample


def bone_points(rng, limb, n_per_bone):
    bones, pts = [], []
    for b in BONES:
        v = limb.meshes[b].vertices
        lo, hi = v.min(axis=0), v.max(axis=0)
        pts.append(rng.uniform(lo, hi, (n_per_bone, 3)))
        bones += [b] * n_per_bone
    return np.array(bones, dtype=object), np.concatenate(pts)


def synthetic(chain, bones, pts, q):
    tgt = np.array([bone_point_to_base(chain, q, b, p) for b, p in zip(bones, pts)])
    return tgt


def interior_q(rng, chain, margin):
    return rng.uniform(chain.lower + margin, chain.upper - margin)


def test_fk_targets_give_zero_update(model):
    rng = np.random.default_rng(0)
    limb = model.limbs[0]
    bones, pts = bone_points(rng, limb, 10)
    q0 = np.array([0.2, -0.3, 0.4])
    c = LimbCorrespondences(0, bones, pts, synthetic(limb.chain, bones, pts, q0))
    q, w, stats = solve_joints(c, limb.chain, q0)
    assert np.array_equal(q, q0)
    assert stats.iterations == 1 and stats.converged
    assert np.all(w == 1.0)


def test_known_offset_recovered(model):
    rng = np.random.default_rng(1)
    limb = model.limbs[1]
    bones, pts = bone_points(rng, limb, 10)
    q0 = np.array([0.1, 0.2, -0.1])
    q_true = q0 + [0.1, -0.05, 0.2]
    c = LimbCorrespondences(1, bones, pts, synthetic(limb.chain, bones, pts, q_true))
    q, _, stats = solve_joints(c, limb.chain, q0)
    assert np.abs(q - q_true).max() < 1e-3
    assert stats.converged


def test_only_q3_moves_when_only_q3_perturbed(model):
    rng = np.random.default_rng(2)
    limb = model.limbs[2]
    bones, pts = bone_points(rng, limb, 10)
    q0 = np.array([0.3, 0.1, 0.2])
    q_true = q0 + [0.0, 0.0, 0.25]
    c = LimbCorrespondences(2, bones, pts, synthetic(limb.chain, bones, pts, q_true))
    q, _, _ = solve_joints(c, limb.chain, q0)
    assert np.abs(q[:2] - q0[:2]).max() < 1e-3
    assert abs(q[2] - q_true[2]) < 1e-3


def test_noise_free_recovery_all_trials(model):
    # perturbations up to 0.3 rad per joint, 100 seeded trials, all must pass
    rng = np.random.default_rng(3)
    for trial in range(100):
        m = trial % 4
        limb = model.limbs[m]
        bones, pts = bone_points(rng, limb, 10)
        q_true = interior_q(rng, limb.chain, 0.35)
        q0 = q_true + rng.uniform(-0.3, 0.3, 3)
        c = LimbCorrespondences(m, bones, pts, synthetic(limb.chain, bones, pts, q_true))
        q, _, stats = solve_joints(c, limb.chain, q0)
        assert np.abs(q - q_true).max() < 1e-3, (trial, q, q_true)
        assert np.all(np.diff(stats.objective) <= 1e-15)


def test_outlier_targets_within_clean_solution(model):
    passed = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        m = seed % 4
        limb = model.limbs[m]
        bones, pts = bone_points(rng, limb, 15)
        q_true = interior_q(rng, limb.chain, 0.35)
        q0 = q_true + rng.uniform(-0.2, 0.2, 3)
        tgt = synthetic(limb.chain, bones, pts, q_true)
        clean_q, _, _ = solve_joints(LimbCorrespondences(m, bones, pts, tgt), limb.chain, q0)
        bad = rng.choice(len(pts), len(pts) // 5, replace=False)
        d = rng.normal(size=(len(bad), 3))
        tgt[bad] += 0.2 * d / np.linalg.norm(d, axis=1, keepdims=True)
        q, _, _ = solve_joints(LimbCorrespondences(m, bones, pts, tgt), limb.chain, q0)
        passed += np.abs(q - clean_q).max() < 0.02
    assert passed >= 95


def test_unobservable_cases(model):
    chain = model.limbs[0].chain
    few = LimbCorrespondences(0, ["B1", "B2"], np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(Unobservable):
        solve_joints(few, chain, np.zeros(3))
    no_b2 = LimbCorrespondences(0, ["B1"] * 5, np.random.default_rng(0).normal(size=(5, 3)), np.zeros((5, 3)))
    with pytest.raises(Unobservable):
        solve_joints(no_b2, chain, np.zeros(3))
    q, _, stats = solve_joints(no_b2, chain, [0.0, 0.0, 0.3], solve_q3=False)
    assert q[2] == 0.3 and not stats.solved_q3


def test_targets_beyond_limits_are_clamped(model):
    rng = np.random.default_rng(4)
    limb = model.limbs[0]
    chain = limb.chain
    bones, pts = bone_points(rng, limb, 10)
    # generate with a raw DH product past the upper limit of joint 2
    q_far = np.array([0.0, chain.upper[1] + 0.3, 0.0])
    T = [r.matrix(qi) for r, qi in zip(chain.rows, q_far)]
    ends = {"B1": T[0] @ T[1], "B2": T[0] @ T[1] @ T[2]}
    tgt = np.array([ends[b][:3, :3] @ p + ends[b][:3, 3] for b, p in zip(bones, pts)])
    q, _, stats = solve_joints(LimbCorrespondences(0, bones, pts, tgt), chain, [0.0, chain.upper[1] - 0.1, 0.0])
    assert q[1] == chain.upper[1]
    assert stats.clamp_events >= 1
    assert np.all(q >= chain.lower) and np.all(q <= chain.upper)


def test_iteration_cap(model):
    rng = np.random.default_rng(5)
    limb = model.limbs[0]
    bones, pts = bone_points(rng, limb, 10)
    tgt = synthetic(limb.chain, bones, pts, [0.3, -0.3, 0.5])
    c = LimbCorrespondences(0, bones, pts, tgt)
    _, _, stats = solve_joints(c, limb.chain, np.zeros(3), max_iterations=1, tol=0.0)
    assert not stats.converged
    with pytest.raises(NonConvergence):
        solve_joints(c, limb.chain, np.zeros(3), max_iterations=1, tol=0.0, strict=True)


def make_pair(point_virtual, point_real, bone):
    s = SilhouetteSample(
        index=0, pixel_virtual=np.zeros(2), pixel_inner=np.zeros(2), step_out=np.array([1.0, 0.0]), offset=0.5,
        orientation=0.0, inward=np.array([-1.0, 0.0]), bone=bone, depth_virtual=point_virtual[2],
        point3_virtual=np.asarray(point_virtual, float),
    )
    return MatchedPair(s, np.zeros(2), np.asarray(point_real, float), 1.0)


def test_lift_identity_is_unchanged(model):
    limb = model.limbs[0]
    # with identity pose and a chain whose base and q give identity, points pass through
    p = np.array([0.1, 0.2, 0.3])
    pairs = [make_pair(p, p, part_id(0, "B1"))]
    pose = limb.chain.base_in_object.inverse()
    c = lift_to_limb_frame(pairs, 0, pose, limb.chain, np.zeros(3))
    B1 = forward(limb.chain, np.zeros(3))[0]
    assert np.allclose(c.targets_in_base[0], p, atol=1e-15)
    assert np.allclose(c.points_in_bone[0], B1.inverse().apply(p), atol=1e-15)


def test_lift_round_trip_and_oracle(model):
    rng = np.random.default_rng(6)
    for m, limb in enumerate(model.limbs):
        pose = pose_to_transform(np.concatenate([rng.normal(scale=0.2, size=3) + [0, 0, 2], random_rotation_vector(rng, 0.5)]))
        q0 = interior_q(rng, limb.chain, 0.2)
        pairs = []
        for b in BONES:
            for _ in range(4):
                pv, pr = rng.normal(scale=0.2, size=3) + [0, 0, 2], rng.normal(scale=0.2, size=3) + [0, 0, 2]
                pairs.append(make_pair(pv, pr, part_id(m, b)))
        pairs.append(make_pair([0, 0, 2.0], [0, 0, 2.0], part_id((m + 1) % 4, "B1")))  # other limb, ignored
        c = lift_to_limb_frame(pairs, m, pose, limb.chain, q0)
        assert len(c) == 8
        base = pose.matrix @ limb.chain.base_in_object.matrix
        T = [r.matrix(qi) for r, qi in zip(limb.chain.rows, q0)]
        ends = {"B1": T[0] @ T[1], "B2": T[0] @ T[1] @ T[2]}
        for b, pb, tgt, pr in zip(c.bones, c.points_in_bone, c.targets_in_base, pairs):
            # virtual: explicit matrix chain oracle
            world = base @ ends[b] @ np.append(pb, 1.0)
            assert np.allclose(world[:3], pr.sample.point3_virtual, atol=1e-12)
            # real: explicit inverse of the base chain
            assert np.allclose(np.linalg.solve(base, np.append(pr.point3_real, 1.0))[:3], tgt, atol=1e-12)
            # round trip through bone_point_to_base at q_init
            assert np.allclose(
                bone_point_to_base(limb.chain, q0, b, pb),
                RigidTransform.from_matrix(base).inverse().apply(pr.sample.point3_virtual),
                atol=1e-12,
            )


def test_lift_uses_render_pose_for_virtual_points(model):
    limb = model.limbs[3]
    pose = pose_to_transform([0, 0, 2, 0, 0, 0])
    render = pose_to_transform([0.05, 0, 2, 0, 0.1, 0])
    p = np.array([0.1, 0.1, 1.9])
    c1 = lift_to_limb_frame([make_pair(p, p, part_id(3, "B2"))], 3, pose, limb.chain, np.zeros(3), render_pose=render)
    c2 = lift_to_limb_frame([make_pair(p, p, part_id(3, "B2"))], 3, render, limb.chain, np.zeros(3))
    assert np.allclose(c1.points_in_bone, c2.points_in_bone, atol=1e-15)
    assert not np.allclose(c1.targets_in_base, c2.targets_in_base)


def test_correspondence_validation():
    with pytest.raises(ValueError):
        LimbCorrespondences(0, ["B3"], np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        LimbCorrespondences(0, ["B1", "B2"], np.zeros((1, 3)), np.zeros((1, 3)))
