"""Per-limb joint-angle estimation from bone-labelled 3D correspondences.

Virtual silhouette points are frozen in their bone frame, real points are
expressed in the limb base frame, and q is refined by Huber-weighted,
Levenberg-damped Gauss-Newton on ``m_M_Bb(q) @ X_bone - X_target``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import JointLimitViolation, NonConvergence, Unobservable
from .geometry import RigidTransform
from .kinematics import BONES, LimbChain, bone_matrices, chain_derivatives, forward, jacobian
from .model import part_id
from .registration import RobustConfig, huber_objective, huber_weights, robust_scale

LM_LAMBDA = 1e-6
MAX_ITERATIONS = 20
TOLERANCE = 1e-6


@dataclass(frozen=True)
class LimbCorrespondences:
    limb: int
    bones: np.ndarray  # (N,) of "B1" / "B2"
    points_in_bone: np.ndarray  # (N, 3), bone frame
    targets_in_base: np.ndarray  # (N, 3), limb base frame F_m

    def __post_init__(self):
        bones = np.asarray(self.bones, dtype=object).reshape(-1)
        pts = np.asarray(self.points_in_bone, dtype=float).reshape(-1, 3)
        tgt = np.asarray(self.targets_in_base, dtype=float).reshape(-1, 3)
        if not (len(bones) == len(pts) == len(tgt)):
            raise ValueError("bones, points_in_bone and targets_in_base must have the same length")
        bad = set(bones.tolist()) - set(BONES)
        if bad:
            raise ValueError(f"unknown bone label(s) {sorted(bad)}")
        object.__setattr__(self, "bones", bones)
        object.__setattr__(self, "points_in_bone", pts)
        object.__setattr__(self, "targets_in_base", tgt)

    def __len__(self) -> int:
        return len(self.bones)

    def count(self, bone: str) -> int:
        return int(np.sum(self.bones == bone))


@dataclass
class JointStats:
    iterations: int
    converged: bool
    objective: list = field(default_factory=list)
    rms: float = 0.0
    clamp_events: int = 0
    solved_q3: bool = True


def lift_to_limb_frame(
    pairs,
    limb: int,
    pose: RigidTransform,
    chain: LimbChain,
    q_init,
    render_pose: RigidTransform | None = None,
) -> LimbCorrespondences:
    """Express matched pairs of limb ``limb`` for the joint solve.

    Virtual points go to their bone frame through the pose they were rendered at
    (``render_pose``, defaults to ``pose``) and ``forward(q_init)``. Real points go
    to F_m through the updated object pose ``pose``.
    """
    render_pose = render_pose or pose
    q_init = np.asarray(q_init, dtype=float)
    MB = dict(zip(BONES, forward(chain, q_init)))
    real_base = (pose @ chain.base_in_object).inverse()
    bones, pts, tgts = [], [], []
    for b in BONES:
        sel = [p for p in pairs if p.sample.bone == part_id(limb, b)]
        if not sel:
            continue
        to_bone = (render_pose @ chain.base_in_object @ MB[b]).inverse()
        pts.append(to_bone.apply(np.array([p.sample.point3_virtual for p in sel])))
        tgts.append(real_base.apply(np.array([p.point3_real for p in sel])))
        bones.extend([b] * len(sel))
    if not bones:
        return LimbCorrespondences(limb, np.empty(0, dtype=object), np.empty((0, 3)), np.empty((0, 3)))
    return LimbCorrespondences(limb, np.array(bones, dtype=object), np.concatenate(pts), np.concatenate(tgts))


def _bone_masks(c: LimbCorrespondences) -> dict:
    return {b: m for b in BONES if (m := c.bones == b).any()}


def _model_points(c: LimbCorrespondences, chain: LimbChain, q, masks: dict | None = None) -> np.ndarray:
    MB = dict(zip(BONES, bone_matrices(chain, q)))
    out = np.empty_like(c.points_in_bone)
    for b, sel in (masks or _bone_masks(c)).items():
        out[sel] = c.points_in_bone[sel] @ MB[b][:3, :3].T + MB[b][:3, 3]
    return out


def _jacobian(c: LimbCorrespondences, chain: LimbChain, q, masks: dict | None = None) -> np.ndarray:
    J = np.empty((len(c), 3, 3))
    dM = chain_derivatives(chain, q)
    for b, sel in (masks or _bone_masks(c)).items():
        J[sel] = jacobian(chain, q, b, c.points_in_bone[sel], dM)
    return J.reshape(-1, 3)


def solve_joints(
    c: LimbCorrespondences,
    chain: LimbChain,
    q_init,
    cfg: RobustConfig | None = None,
    solve_q3: bool = True,
    max_iterations: int = MAX_ITERATIONS,
    tol: float = TOLERANCE,
    strict: bool = False,
) -> tuple[np.ndarray, np.ndarray, JointStats]:
    """Robust damped Gauss-Newton over the three joint angles of one limb.

    Steps that raise the Huber objective are rejected and the damping is raised
    tenfold; accepted steps lower it tenfold. Every iterate is clamped to the
    joint limits. With ``solve_q3=False`` the third joint is held at its initial
    value (used when no forearm/shin sample was matched).
    """
    cfg = cfg or RobustConfig()
    if len(c) < 3:
        raise Unobservable(f"limb {c.limb}: {len(c)} correspondences, need at least 3")
    if solve_q3 and c.count("B2") == 0:
        raise Unobservable(f"limb {c.limb}: no B2 correspondence, q3 cannot be observed")
    q = np.asarray(q_init, dtype=float).reshape(3)
    try:
        chain.check_limits(q)
    except JointLimitViolation:
        q = chain.clamp(q)
    active = np.array([True, True, solve_q3])
    k = cfg.huber_threshold_factor

    masks = _bone_masks(c)
    e = (_model_points(c, chain, q, masks) - c.targets_in_base).ravel()
    sigma = robust_scale(e, cfg.sigma_estimator)
    obj = huber_objective(e, k * sigma)
    history = [obj]
    lam = LM_LAMBDA
    clamps = 0
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        thr = k * sigma
        w = huber_weights(e, thr)
        J = _jacobian(c, chain, q, masks)[:, active]
        JW = J * w[:, None]
        H = JW.T @ J
        g = JW.T @ e
        accepted = False
        for _ in range(12):
            A = H + lam * (np.eye(len(H)) + np.diag(np.diag(H)))
            step = np.zeros(3)
            step[active] = -np.linalg.solve(A, g)
            q_new = q + step
            clamped = chain.clamp(q_new)
            hit = not np.array_equal(clamped, q_new)
            e_new = (_model_points(c, chain, clamped, masks) - c.targets_in_base).ravel()
            obj_new = huber_objective(e_new, thr)
            if obj_new <= obj:
                accepted = True
                clamps += int(hit)
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no descent direction left at this damping range
            break
        moved = np.abs(clamped - q).max()
        q, e = clamped, e_new
        sigma = min(sigma, robust_scale(e, cfg.sigma_estimator))
        new_obj = huber_objective(e, k * sigma)
        change = abs(obj - new_obj)
        obj = new_obj
        history.append(obj)
        if moved < tol or change <= tol or obj == 0.0:
            converged = True
            break
    if not converged and strict:
        raise NonConvergence(f"limb {c.limb}: joint solve did not converge in {max_iterations} iterations")
    w = huber_weights(e, k * sigma).reshape(-1, 3).mean(axis=1)
    stats = JointStats(
        iterations=it,
        converged=converged,
        objective=history,
        rms=float(np.sqrt(np.mean(e**2))) if e.size else 0.0,
        clamp_events=clamps,
        solved_q3=solve_q3,
    )
    return q, w, stats
