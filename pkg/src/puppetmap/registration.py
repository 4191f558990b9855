"""Rigid 3D-3D pose estimation between matched silhouette points.

A closed-form SVD solution seeds an IRLS Gauss-Newton refinement with Huber
weights on every scalar residual component ``e = M @ source - target``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, NonConvergence
from .geometry import RigidTransform, rotation_from_vector, skew_many

MAD_SCALE = 1.4826
# below this, residual scale is treated as exact data (meters)
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired points: ``target[j]`` should equal ``M @ source[j]``."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.source, dtype=float).reshape(-1, 3)
        t = np.asarray(self.target, dtype=float).reshape(-1, 3)
        if s.shape != t.shape:
            raise ValueError(f"source/target shapes differ: {s.shape} vs {t.shape}")
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "target", t)

    def __len__(self) -> int:
        return len(self.source)


@dataclass(frozen=True)
class RobustConfig:
    huber_threshold_factor: float = 1.345
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    sigma_estimator: str = "mad"

    def __post_init__(self):
        if not self.huber_threshold_factor > 0:
            raise ValueError("huber_threshold_factor must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sigma_estimator not in ("mad", "stddev"):
            raise ValueError(f"sigma_estimator must be 'mad' or 'stddev', got {self.sigma_estimator!r}")


@dataclass
class ResidualStats:
    mean: float
    mad: float
    max: float
    inlier_fraction: float
    iterations: int
    converged: bool
    objective: list = field(default_factory=list)  # robust objective after each accepted iteration


def robust_scale(e: np.ndarray, estimator: str = "mad") -> float:
    e = np.asarray(e, dtype=float).ravel()
    if e.size == 0:
        return SIGMA_FLOOR
    if estimator == "stddev":
        s = float(np.std(e))
    else:
        s = MAD_SCALE * float(np.median(np.abs(e - np.median(e))))
    return max(s, SIGMA_FLOOR)


def huber_weights(e: np.ndarray, threshold: float) -> np.ndarray:
    a = np.abs(e)
    return np.where(a <= threshold, 1.0, threshold / np.maximum(a, 1e-300))


def huber_objective(e: np.ndarray, threshold: float) -> float:
    a = np.abs(e)
    return float(np.sum(np.where(a <= threshold, 0.5 * a**2, threshold * a - 0.5 * threshold**2)))


def _check_spread(points: np.ndarray) -> None:
    if len(points) < 3:
        raise DegenerateConfiguration(f"need at least 3 correspondences, got {len(points)}")
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] < 1e-12 or sv[1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfiguration("source points are coincident or collinear")


def estimate_rigid_linear(c: CorrespondenceSet, weights=None) -> RigidTransform:
    """Least-squares rotation and translation (SVD, reflection corrected)."""
    src, tgt = c.source, c.target
    _check_spread(src)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    cs = w @ src
    ct = w @ tgt
    H = (src - cs).T @ ((tgt - ct) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, ct - R @ cs)


def _residual(M: RigidTransform, c: CorrespondenceSet) -> np.ndarray:
    return (c.source @ M.rotation.T + M.translation - c.target).ravel()


def _twist(delta: np.ndarray) -> RigidTransform:
    # first-order exponential: rotation exact, translation taken as-is
    return RigidTransform(rotation_from_vector(delta[3:]), delta[:3])


def estimate_rigid_robust(
    c: CorrespondenceSet,
    init: RigidTransform | None = None,
    cfg: RobustConfig | None = None,
    strict: bool = False,
) -> tuple[RigidTransform, np.ndarray, ResidualStats]:
    """IRLS Gauss-Newton with Huber weights, left-multiplicative pose updates.

    The scale estimate is kept non-increasing across iterations and each step is
    backtracked until the Huber objective does not grow, so the recorded
    objective sequence is monotone. Returns the pose, one weight per pair (mean of
    its three component weights) and residual statistics. Hitting
    ``max_iterations`` without meeting the tolerance flags ``converged=False``,
    or raises :class:`NonConvergence` when ``strict``.
    """
    cfg = cfg or RobustConfig()
    _check_spread(c.source)
    M = init if init is not None else estimate_rigid_linear(c)
    k = cfg.huber_threshold_factor
    e = _residual(M, c)
    sigma = robust_scale(e, cfg.sigma_estimator)
    history = [huber_objective(e, k * sigma)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        thr = k * sigma
        w = huber_weights(e, thr)
        p = c.source @ M.rotation.T + M.translation
        J = np.zeros((len(p), 3, 6))
        J[:, :, :3] = np.eye(3)
        J[:, :, 3:] = -skew_many(p)
        J = J.reshape(-1, 6)
        JW = J * w[:, None]
        H = JW.T @ J
        if np.linalg.cond(H) > 1e12:
            raise DegenerateConfiguration("rigid normal equations are singular")
        delta = -np.linalg.solve(H, JW.T @ e)
        obj = huber_objective(e, thr)
        step = 1.0
        for _ in range(30):
            cand = _twist(step * delta) @ M
            e_new = _residual(cand, c)
            obj_new = huber_objective(e_new, thr)
            if obj_new <= obj:
                break
            step *= 0.5
        else:
            cand, e_new, obj_new = M, e, obj
        move = np.abs((c.source @ cand.rotation.T + cand.translation) - p).max()
        M, e = cand, e_new
        sigma = min(sigma, robust_scale(e, cfg.sigma_estimator))
        history.append(min(obj_new, huber_objective(e, k * sigma)))
        if move < cfg.convergence_tol:
            converged = True
            break
    if not converged and strict:
        raise NonConvergence(f"robust registration did not reach tol in {cfg.max_iterations} iterations")
    w = huber_weights(e, k * sigma).reshape(-1, 3).mean(axis=1)
    norms = np.linalg.norm(e.reshape(-1, 3), axis=1)
    stats = ResidualStats(
        mean=float(norms.mean()),
        mad=float(np.median(np.abs(norms - np.median(norms)))),
        max=float(norms.max()),
        inlier_fraction=float(np.mean(w >= 0.5)),
        iterations=it,
        converged=converged,
        objective=history,
    )
    return M, w, stats


def update_object_pose(prev: RigidTransform, delta: RigidTransform) -> RigidTransform:
    """New object pose after the rigid step: ``delta @ prev``."""
    return delta @ prev
