"""Projector-side rendering of the tracked puppet and the pixel-count mapping metric."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .errors import SizeMismatch
from .geometry import CameraIntrinsics, RigidTransform
from .model import PuppetModel, posed_mesh
from .render import render_zbuffer


@dataclass(frozen=True)
class MappingReport:
    puppet_pixels: int
    suit_on_puppet_pixels: int
    suit_outside_pixels: int
    on_ratio: float  # percent of puppet pixels
    outside_ratio: float  # percent of puppet pixels

    @classmethod
    def from_counts(cls, puppet: int, on: int, outside: int) -> "MappingReport":
        if on > puppet:
            raise ValueError("suit-on-puppet count cannot exceed the puppet count")
        on_r = 100.0 * on / puppet if puppet else 0.0
        out_r = 100.0 * outside / puppet if puppet else 0.0
        return cls(int(puppet), int(on), int(outside), on_r, out_r)

    def summary(self) -> str:
        return (
            f"puppet {self.puppet_pixels} px (100.00%)\n"
            f"suit on the puppet {self.suit_on_puppet_pixels} px ({self.on_ratio:.2f}%)\n"
            f"suit outside the puppet {self.suit_outside_pixels} px ({self.outside_ratio:.2f}%)"
        )


REPORT_COLUMNS = ["puppet_pixels", "suit_on_puppet_pixels", "suit_outside_pixels", "on_ratio", "outside_ratio"]


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        wr.writeheader()
        for r in reports:
            row = asdict(r)
            row["on_ratio"] = f"{r.on_ratio:.4f}"
            row["outside_ratio"] = f"{r.outside_ratio:.4f}"
            wr.writerow(row)


def projector_view_transform(d_M_o: RigidTransform, c_M_d: RigidTransform, p_M_c: RigidTransform) -> RigidTransform:
    """Object pose seen from the projector: ``p_M_c @ c_M_d @ d_M_o``."""
    return p_M_c @ (c_M_d @ d_M_o)


def render_projector_image(model: PuppetModel, p_M_o: RigidTransform, q, gamma_p: CameraIntrinsics, size) -> np.ndarray:
    """Boolean suit mask: pixels the projector lights when drawing the posed model."""
    return render_zbuffer(gamma_p, size, posed_mesh(model, p_M_o, q), cull_backfaces=True).valid


def evaluate_mapping(true_puppet_mask, projected_suit_mask) -> MappingReport:
    """Counts of puppet pixels, suit pixels on the puppet and suit pixels off it."""
    puppet = np.asarray(true_puppet_mask, dtype=bool)
    suit = np.asarray(projected_suit_mask, dtype=bool)
    if puppet.shape != suit.shape:
        raise SizeMismatch(f"mask shapes differ: {puppet.shape} vs {suit.shape}")
    return MappingReport.from_counts(
        int(np.count_nonzero(puppet)),
        int(np.count_nonzero(puppet & suit)),
        int(np.count_nonzero(suit & ~puppet)),
    )


def _wall(depth: float, half: float = 50.0) -> np.ndarray:
    """Two triangles of a fronto-parallel wall at ``depth`` in the depth-camera frame, facing the camera."""
    a, b, c, d = ([-half, -half, depth], [half, -half, depth], [half, half, depth], [-half, half, depth])
    return np.array([[a, c, b], [a, d, c]], dtype=float)


def simulate_mapping(
    model: PuppetModel,
    true_pose: RigidTransform,
    true_q,
    est_pose: RigidTransform,
    est_q,
    c_M_d: RigidTransform,
    p_M_c: RigidTransform,
    gamma_p: CameraIntrinsics,
    size,
    viewer: tuple | None = None,
    wall_depth: float = 3.5,
) -> MappingReport:
    """Mapping report for an estimated pose against the ground truth.

    By default the evaluation viewpoint is the projector itself: the puppet mask
    is the noise-free render at the true pose, the suit mask the render at the
    estimate. ``viewer = (v_M_d, gamma_v, size_v)`` photographs the scene from a
    third camera instead: the suit image lights the true puppet and a wall at
    ``wall_depth`` behind it (with projector-side occlusion), and the counts are
    taken over the viewer's pixels.
    """
    p_true = projector_view_transform(true_pose, c_M_d, p_M_c)
    p_est = projector_view_transform(est_pose, c_M_d, p_M_c)
    suit_p = render_projector_image(model, p_est, est_q, gamma_p, size)
    if viewer is None:
        return evaluate_mapping(render_projector_image(model, p_true, true_q, gamma_p, size), suit_p)
    v_M_d, gamma_v, size_v = viewer
    wall = _wall(wall_depth)
    puppet_tris = posed_mesh(model, true_pose, true_q)
    # triangle index as label: puppet first, wall last
    labels = np.arange(len(puppet_tris) + len(wall))
    scene = np.concatenate([puppet_tris, wall])

    def to(M, tris):
        return tris @ M.rotation.T + M.translation

    p_M_d = p_M_c @ c_M_d
    proj_view = render_zbuffer(gamma_p, size, to(p_M_d, scene), labels, cull_backfaces=True)
    view = render_zbuffer(gamma_v, size_v, to(v_M_d, scene), labels, cull_backfaces=True)
    v, u = np.nonzero(view.valid)
    z = view.data[v, u]
    pts_v = np.stack([z * (u - gamma_v.u0) / gamma_v.alpha_u, z * (v - gamma_v.v0) / gamma_v.alpha_v, z], axis=1)
    pts_p = (p_M_d @ v_M_d.inverse()).apply(pts_v)
    lit = np.zeros(len(z), dtype=bool)
    front = pts_p[:, 2] > 0
    pu = np.full(len(z), -1)
    pv = np.full(len(z), -1)
    pu[front] = np.floor(gamma_p.alpha_u * pts_p[front, 0] / pts_p[front, 2] + gamma_p.u0 + 0.5)
    pv[front] = np.floor(gamma_p.alpha_v * pts_p[front, 1] / pts_p[front, 2] + gamma_p.v0 + 0.5)
    ok = front & (pu >= 0) & (pu < size[0]) & (pv >= 0) & (pv < size[1])
    seen = np.zeros(len(z), dtype=bool)
    # visible from the projector: same triangle under the snapped projector pixel, or nothing
    # closer along its ray (1 cm slack for pixel snapping)
    tri = view.labels[v, u]
    seen[ok] = (proj_view.labels[pv[ok], pu[ok]] == tri[ok]) | (proj_view.data[pv[ok], pu[ok]] > pts_p[ok, 2] - 0.01)
    lit[ok] = suit_p[pv[ok], pu[ok]] & seen[ok]
    on_puppet = tri < len(puppet_tris)
    puppet = int(np.count_nonzero(on_puppet))
    return MappingReport.from_counts(puppet, int(np.count_nonzero(lit & on_puppet)), int(np.count_nonzero(lit & ~on_puppet)))
