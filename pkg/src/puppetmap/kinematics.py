"""Three-joint limb chains in standard (distal) Denavit-Hartenberg convention.

Elementary transform of row i, joint angle q_i::

    T_i = Rz(q_i + theta_offset_i) . Tz(d_i) . Tx(a_i) . Rx(alpha_i)

        [ c  -s*ca   s*sa   a*c ]
      = [ s   c*ca  -c*sa   a*s ]
        [ 0   sa     ca     d   ]
        [ 0   0      0      1   ]

Bone B1 (upper arm / thigh) is carried by ``T1 . T2``; bone B2 (forearm / shin)
by ``T1 . T2 . T3``. Row 1 has ``a = d = 0``: both shoulder joints share a center.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import JointLimitViolation, UnknownBone
from .geometry import RigidTransform

BONES = ("B1", "B2")
# number of DH rows that move each bone
_BONE_DEPTH = {"B1": 2, "B2": 3}
DEFAULT_LIMITS = (-np.pi / 2, np.pi / 2)


@dataclass(frozen=True)
class DHRow:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0

    def __post_init__(self):
        vals = (self.a, self.alpha, self.d, self.theta_offset)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite DH row {vals}")
        if self.a < 0:
            raise ValueError("DH link length a must be >= 0")

    def matrix(self, q: float) -> np.ndarray:
        th = q + self.theta_offset
        c, s = np.cos(th), np.sin(th)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        return np.array(
            [
                [c, -s * ca, s * sa, self.a * c],
                [s, c * ca, -c * sa, self.a * s],
                [0.0, sa, ca, self.d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    def dmatrix(self, q: float) -> np.ndarray:
        """Derivative of :meth:`matrix` with respect to the joint angle."""
        th = q + self.theta_offset
        c, s = np.cos(th), np.sin(th)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        return np.array(
            [
                [-s, -c * ca, c * sa, -self.a * s],
                [c, -s * ca, s * sa, self.a * c],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ]
        )


@dataclass(frozen=True, eq=False)
class LimbChain:
    """Arm or leg: base frame in the object frame (o_M_m), 3 DH rows, joint limits."""

    base_in_object: RigidTransform
    rows: tuple
    joint_limits: tuple = field(default=(DEFAULT_LIMITS,) * 3)
    name: str = ""

    def __post_init__(self):
        rows = tuple(self.rows)
        if len(rows) != 3:
            raise ValueError(f"limb joint count must be 3, got {len(rows)}")
        if rows[0].a != 0.0 or rows[0].d != 0.0:
            raise ValueError("first DH row must have a = d = 0 (no segment between joints 1 and 2)")
        limits = tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        if len(limits) != 3 or any(lo >= hi for lo, hi in limits):
            raise ValueError(f"joint limits must be 3 increasing pairs, got {limits}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "joint_limits", limits)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])

    def check_limits(self, q, tol: float = 1e-12) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(3)
        if np.any(q < self.lower - tol) or np.any(q > self.upper + tol):
            raise JointLimitViolation(f"{self.name or 'limb'}: q={q.tolist()} outside {self.joint_limits}")
        return q

    def clamp(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)


def _bone_depth(bone: str) -> int:
    try:
        return _BONE_DEPTH[bone]
    except KeyError:
        raise UnknownBone(bone) from None


def _row_matrices(chain: LimbChain, q) -> list:
    return [row.matrix(qi) for row, qi in zip(chain.rows, q)]


def bone_matrices(chain: LimbChain, q) -> tuple[np.ndarray, np.ndarray]:
    """4x4 homogeneous ``m_M_B1`` and ``m_M_B2`` without limit checks (inner loops)."""
    T1, T2, T3 = _row_matrices(chain, q)
    T12 = T1 @ T2
    return T12, T12 @ T3


def forward(chain: LimbChain, q) -> tuple[RigidTransform, RigidTransform]:
    """Bone frames ``m_M_B1`` and ``m_M_B2`` in the limb base frame."""
    q = chain.check_limits(q)
    T1, T2, T3 = _row_matrices(chain, q)
    T12 = T1 @ T2
    return RigidTransform.from_matrix(T12), RigidTransform.from_matrix(T12 @ T3)


def bone_transform(chain: LimbChain, q, bone: str) -> RigidTransform:
    n = _bone_depth(bone)
    return forward(chain, q)[n - 2]


def bone_point_to_base(chain: LimbChain, q, bone: str, p_in_bone) -> np.ndarray:
    return bone_transform(chain, q, bone).apply(p_in_bone)


def chain_derivatives(chain: LimbChain, q) -> dict:
    """Per bone, the 4x4 derivatives ``d(m_M_B)/dq_k`` for the joints that move it (product rule)."""
    q = np.asarray(q, dtype=float).reshape(3)
    Ts = _row_matrices(chain, q)
    dTs = [row.dmatrix(qi) for row, qi in zip(chain.rows, q)]
    out = {}
    for bone in BONES:
        n = _BONE_DEPTH[bone]
        mats = []
        for k in range(n):
            M = np.eye(4)
            for i in range(n):
                M = M @ (dTs[i] if i == k else Ts[i])
            mats.append(M)
        out[bone] = mats
    return out


def jacobian(chain: LimbChain, q, bone: str, p_in_bone, derivatives: dict | None = None) -> np.ndarray:
    """d(base-frame point)/dq, shape (3, 3) for one point or (N, 3, 3) for N points.

    Column k uses the product rule on the DH chain with ``dT_k`` in place of ``T_k``;
    joints that do not move the bone give an exactly zero column.
    """
    _bone_depth(bone)
    mats = (derivatives or chain_derivatives(chain, q))[bone]
    p = np.asarray(p_in_bone, dtype=float)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    J = np.zeros((p2.shape[0], 3, 3))
    for k, M in enumerate(mats):
        J[:, :, k] = p2 @ M[:3, :3].T + M[:3, 3]
    return J[0] if single else J
