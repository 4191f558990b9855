"""Projector calibration from 2D-3D correspondences and the color-coded dot pattern.

The projector is treated as an inverse pinhole camera: its intrinsics and the
camera-to-projector transform ``p_M_c`` are refined jointly by Levenberg-Marquardt
on the reprojection error of 3D points measured in the color-camera frame.

Correspondences come from a grid of colored dots in which every 3x3 block of
color indices is unique, so any fully visible block identifies its position.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import AmbiguousBlock, ConfigError, DegenerateGeometry, Infeasible, NonConvergence
from .geometry import CameraIntrinsics, RigidTransform, back_project, pose_from_mm, pose_to_mm, rotation_from_vector, skew_many
from .registration import CorrespondenceSet, estimate_rigid_linear

PALETTE = ("red", "green", "blue", "white")
PROJECTOR_SIZE = (1024, 768)
BLOCK = 3

# Reference setup (Kinect v2 plus ceiling projector), mm and rad in the file format
DEPTH_INTRINSICS = CameraIntrinsics(359.90, 359.21, 239.80, 208.67)
COLOR_INTRINSICS = CameraIntrinsics(1065.92, 1063.69, 944.65, 549.32)
C_M_D_MM = (-55.64, 0.95, 7.04, -0.02, -0.01, -0.00)
PROJECTOR_INTRINSICS = CameraIntrinsics(2145.99, 2138.92, 478.96, -47.94)
P_M_C_MM = (80.19, 1456.58, 2612.01, 0.00, 0.00, -0.00)
COLOR_RESIDUAL = (1.50, 0.88)
# three tilted planes (point, normal) in the color-camera frame for synthetic calibration sets
SYNTHETIC_PLANES = (
    ((0.0, 0.0, 2.5), (0.0, 0.0, -1.0)),
    ((0.0, 0.2, 2.2), (0.3, 0.0, -1.0)),
    ((0.1, 0.0, 2.8), (0.0, 0.4, -1.0)),
)


# --------------------------------------------------------------------------- dot pattern


@dataclass(frozen=True, eq=False)
class DotPattern:
    colors: np.ndarray  # (rows, cols) palette indices
    centers: np.ndarray  # (rows, cols, 2) projector pixel of each dot
    n_colors: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.colors.shape

    def windows(self) -> dict:
        """Map from every 3x3 color block (as a tuple) to its top-left grid index."""
        return {key: pos for pos, key in _iter_windows(self.colors)}


def _iter_windows(colors: np.ndarray):
    rows, cols = colors.shape
    for i in range(rows - BLOCK + 1):
        for j in range(cols - BLOCK + 1):
            yield (i, j), tuple(colors[i : i + BLOCK, j : j + BLOCK].ravel().tolist())


def windows_unique(colors: np.ndarray) -> bool:
    keys = [k for _, k in _iter_windows(np.asarray(colors))]
    return len(keys) == len(set(keys))


def dot_centers(rows: int, cols: int, size=PROJECTOR_SIZE, spacing: float | None = None) -> np.ndarray:
    """Regular grid of dot centers, centered in the projector image."""
    w, h = size
    if spacing is None:
        spacing = min(w / (cols + 1), h / (rows + 1))
    u = (w - 1) / 2 + (np.arange(cols) - (cols - 1) / 2) * spacing
    v = (h - 1) / 2 + (np.arange(rows) - (rows - 1) / 2) * spacing
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def generate_pattern(
    rows: int,
    cols: int,
    colors: int = len(PALETTE),
    seed: int = 0,
    size=PROJECTOR_SIZE,
    spacing: float | None = None,
    restarts: int = 200,
) -> DotPattern:
    """Random grid with pairwise distinct 3x3 blocks.

    Cells are filled in raster order with a random color that does not complete
    an already used block; a dead end restarts from scratch with the next random
    stream. Raises :class:`Infeasible` when the block count exceeds ``colors**9``
    or every restart dead-ends.
    """
    if rows < BLOCK or cols < BLOCK:
        raise Infeasible(f"pattern must be at least {BLOCK}x{BLOCK}, got {rows}x{cols}")
    if colors < 2:
        raise Infeasible("need at least 2 colors")
    n_windows = (rows - BLOCK + 1) * (cols - BLOCK + 1)
    if colors ** (BLOCK * BLOCK) < n_windows:
        raise Infeasible(f"{colors}^9 = {colors ** 9} distinct blocks cannot cover {n_windows} windows")
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        grid = _fill(rows, cols, colors, rng)
        if grid is not None:
            assert windows_unique(grid)
            return DotPattern(grid, dot_centers(rows, cols, size, spacing), colors)
    raise Infeasible(f"no {rows}x{cols} pattern with {colors} colors found in {restarts} restarts")


def _fill(rows: int, cols: int, colors: int, rng) -> np.ndarray | None:
    grid = np.zeros((rows, cols), dtype=int)
    used = set()
    for i in range(rows):
        for j in range(cols):
            options = rng.permutation(colors)
            if i < BLOCK - 1 or j < BLOCK - 1:
                grid[i, j] = options[0]
                continue
            for c in options:
                grid[i, j] = c
                key = tuple(grid[i - 2 : i + 1, j - 2 : j + 1].ravel().tolist())
                if key not in used:
                    used.add(key)
                    break
            else:
                return None
    return grid


@dataclass
class BlockMatches:
    pairs: list  # (projector pixel (2,), observed pixel (2,), pattern index (i, j), observed index (r, c))
    ambiguous: list  # top-left observed indices of blocks with no consistent pattern position
    offset: tuple | None  # pattern index minus observed index


def match_blocks(observed_colors, observed_centers, pattern: DotPattern, strict: bool = False) -> BlockMatches:
    """Match a decoded, possibly partial, sub-grid of dots to the pattern.

    ``observed_colors`` holds palette indices with -1 for undetected dots. Every
    fully visible 3x3 block votes for the grid offset where it occurs in the
    pattern; dots covered by at least one block agreeing with the winning offset
    are matched. Blocks absent from the pattern, or pointing elsewhere, are
    reported as ambiguous (decode corruption); ``strict`` raises on them.
    """
    obs = np.asarray(observed_colors, dtype=int)
    centers = np.asarray(observed_centers, dtype=float)
    lookup = pattern.windows()
    votes: dict = {}
    blocks = []
    for (r, c), key in _iter_windows(obs):
        if min(key) < 0:
            continue
        hit = lookup.get(key)
        off = None if hit is None else (hit[0] - r, hit[1] - c)
        blocks.append(((r, c), off))
        if off is not None:
            votes[off] = votes.get(off, 0) + 1
    offset = max(votes, key=lambda o: (votes[o], -abs(o[0]) - abs(o[1]))) if votes else None
    covered = np.zeros(obs.shape, dtype=bool)
    ambiguous = []
    for (r, c), off in blocks:
        if off == offset and off is not None:
            covered[r : r + BLOCK, c : c + BLOCK] = True
        else:
            ambiguous.append((r, c))
    if ambiguous and strict:
        raise AmbiguousBlock(ambiguous)
    pairs = []
    for r, c in zip(*np.nonzero(covered)):
        i, j = r + offset[0], c + offset[1]
        pairs.append((pattern.centers[i, j].copy(), centers[r, c].copy(), (int(i), int(j)), (int(r), int(c))))
    return BlockMatches(pairs, ambiguous, offset)


# --------------------------------------------------------------------------- observations


@dataclass(frozen=True, eq=False)
class CalibObservation:
    projector_pixels: np.ndarray  # (N, 2) p_u*
    points: np.ndarray  # (N, 3) c_X in the color-camera frame, meters
    plane_id: int = 0

    def __post_init__(self):
        pp = np.asarray(self.projector_pixels, dtype=float).reshape(-1, 2)
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(pp) != len(pts):
            raise ValueError("projector_pixels and points must have the same length")
        object.__setattr__(self, "projector_pixels", pp)
        object.__setattr__(self, "points", pts)


def lift_correspondences(matches, depth_at_dots, gamma_c: CameraIntrinsics, plane_id: int = 0) -> CalibObservation:
    """3D dot positions in the color-camera frame from their pixel and depth."""
    proj = np.array([m[0] for m in matches], dtype=float).reshape(-1, 2)
    cam = np.array([m[1] for m in matches], dtype=float).reshape(-1, 2)
    pts = back_project(gamma_c, cam, np.asarray(depth_at_dots, dtype=float))
    return CalibObservation(proj, pts, plane_id)


def read_observations_csv(path) -> list[CalibObservation]:
    """CSV with columns ``plane_id, u_p, v_p, X, Y, Z`` (projector pixels, camera-frame meters)."""
    groups: dict = {}
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        need = {"plane_id", "u_p", "v_p", "X", "Y", "Z"}
        if rd.fieldnames is None or not need <= set(rd.fieldnames):
            raise ConfigError(f"{path}: expected columns {sorted(need)}, got {rd.fieldnames}")
        for n, row in enumerate(rd, start=2):
            try:
                pid = int(row["plane_id"])
                vals = [float(row[k]) for k in ("u_p", "v_p", "X", "Y", "Z")]
            except ValueError as exc:
                raise ConfigError(f"{path}:{n}: {exc}") from None
            groups.setdefault(pid, []).append(vals)
    return [CalibObservation(np.array(v)[:, :2], np.array(v)[:, 2:], pid) for pid, v in sorted(groups.items())]


def write_observations_csv(path, observations) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["plane_id", "u_p", "v_p", "X", "Y", "Z"])
        for ob in observations:
            for (u, v), (x, y, z) in zip(ob.projector_pixels, ob.points):
                wr.writerow([ob.plane_id, repr(float(u)), repr(float(v)), repr(float(x)), repr(float(y)), repr(float(z))])


# --------------------------------------------------------------------------- solver


@dataclass(frozen=True, eq=False)
class ProjectorCalibration:
    gamma: CameraIntrinsics
    p_M_c: RigidTransform
    residual_mean: float = float("nan")
    residual_std: float = float("nan")
    size: tuple = PROJECTOR_SIZE
    iterations: int = 0
    converged: bool = True


def reprojection_errors(calib: ProjectorCalibration, observations) -> np.ndarray:
    pts = np.concatenate([o.points for o in observations])
    px = np.concatenate([o.projector_pixels for o in observations])
    return np.linalg.norm(_project(calib.gamma, calib.p_M_c, pts) - px, axis=1)


def _project(gamma: CameraIntrinsics, M: RigidTransform, pts: np.ndarray) -> np.ndarray:
    p = M.apply(pts)
    return np.stack([gamma.alpha_u * p[:, 0] / p[:, 2] + gamma.u0, gamma.alpha_v * p[:, 1] / p[:, 2] + gamma.v0], axis=1)


def _check_observability(observations, min_planes: int) -> None:
    pts = np.concatenate([o.points for o in observations]) if observations else np.empty((0, 3))
    if len(pts) < 6:
        raise DegenerateGeometry(f"need at least 6 correspondences, got {len(pts)}")
    normals = []
    for o in observations:
        if len(o.points) < 3:
            continue
        sv, vt = np.linalg.svd(o.points - o.points.mean(axis=0))[1:]
        if sv[1] > 1e-9:
            normals.append(vt[2])
    distinct = []
    for n in normals:
        if all(abs(float(n @ d)) < np.cos(np.radians(1.0)) for d in distinct):
            distinct.append(n)
    if len(distinct) < min_planes:
        raise DegenerateGeometry(f"need {min_planes} non-parallel planes, got {len(distinct)}")
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[2] < 1e-9 * sv[0]:
        raise DegenerateGeometry("all calibration points are coplanar")


def nominal_init(observations, size=PROJECTOR_SIZE) -> ProjectorCalibration:
    """Focal = image width, principal point at the image center, pose by rigid fit.

    Projector pixels are back-projected with the nominal intrinsics at the
    camera-frame depth of their 3D point, then aligned to those points.
    """
    w, h = size
    gamma = CameraIntrinsics(float(w), float(w), (w - 1) / 2, (h - 1) / 2)
    pts = np.concatenate([o.points for o in observations])
    px = np.concatenate([o.projector_pixels for o in observations])
    rays = back_project(gamma, px, np.maximum(pts[:, 2], 1e-3))
    M = estimate_rigid_linear(CorrespondenceSet(pts, rays))
    return ProjectorCalibration(gamma, M, size=tuple(size))


def dlt_init(observations, size=PROJECTOR_SIZE) -> ProjectorCalibration:
    """Direct linear transform with the skew dropped from the decomposed K."""
    pts = np.concatenate([o.points for o in observations])
    px = np.concatenate([o.projector_pixels for o in observations])
    A = []
    for (x, y, z), (u, v) in zip(pts, px):
        A.append([x, y, z, 1, 0, 0, 0, 0, -u * x, -u * y, -u * z, -u])
        A.append([0, 0, 0, 0, x, y, z, 1, -v * x, -v * y, -v * z, -v])
    P = np.linalg.svd(np.array(A))[2][-1].reshape(3, 4)
    if np.linalg.det(P[:, :3]) < 0:
        P = -P
    # RQ decomposition of the left 3x3 block
    Q, Rm = np.linalg.qr(np.flipud(P[:, :3]).T)
    K = np.flipud(np.fliplr(Rm.T))
    R = np.flipud(Q.T)
    S = np.diag(np.sign(np.diag(K)))
    K, R = K @ S, S @ R
    t = np.linalg.solve(K, P[:, 3])
    if np.linalg.det(R) < 0:
        R, t = -R, -t
    K = K / K[2, 2]
    gamma = CameraIntrinsics(abs(K[0, 0]), abs(K[1, 1]), K[0, 2], K[1, 2])
    return ProjectorCalibration(gamma, RigidTransform(R, t), size=tuple(size))


def calibrate_projector(
    observations,
    init: ProjectorCalibration | str = "nominal",
    size=PROJECTOR_SIZE,
    max_iterations: int = 200,
    tol: float = 1e-15,
    min_planes: int = 3,
    strict: bool = False,
) -> ProjectorCalibration:
    """Joint Levenberg-Marquardt over the 4 intrinsics and 6 extrinsics.

    ``init`` is a :class:`ProjectorCalibration`, ``"nominal"`` (see
    :func:`nominal_init`) or ``"dlt"``. The result carries the mean and standard
    deviation of the per-point pixel error.
    """
    observations = list(observations)
    _check_observability(observations, min_planes)
    if isinstance(init, str):
        if init not in ("nominal", "dlt"):
            raise ValueError(f"unknown init policy {init!r}")
        init = nominal_init(observations, size) if init == "nominal" else dlt_init(observations, size)
    pts = np.concatenate([o.points for o in observations])
    px = np.concatenate([o.projector_pixels for o in observations]).ravel()
    g = np.array([init.gamma.alpha_u, init.gamma.alpha_v, init.gamma.u0, init.gamma.v0], dtype=float)
    M = init.p_M_c

    def residual(g, M):
        p = M.apply(pts)
        if np.any(p[:, 2] <= 0):
            return None, p
        uv = np.stack([g[0] * p[:, 0] / p[:, 2] + g[2], g[1] * p[:, 1] / p[:, 2] + g[3]], axis=1)
        return uv.ravel() - px, p

    r, p = residual(g, M)
    if r is None:
        raise DegenerateGeometry("initial guess puts calibration points behind the projector")
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        n = len(p)
        J = np.zeros((n, 2, 10))
        J[:, 0, 0] = x / z
        J[:, 1, 1] = y / z
        J[:, 0, 2] = 1.0
        J[:, 1, 3] = 1.0
        dproj = np.zeros((n, 2, 3))
        dproj[:, 0, 0] = g[0] / z
        dproj[:, 0, 2] = -g[0] * x / z**2
        dproj[:, 1, 1] = g[1] / z
        dproj[:, 1, 2] = -g[1] * y / z**2
        J[:, :, 4:7] = dproj
        J[:, :, 7:] = -np.einsum("nij,njk->nik", dproj, skew_many(p))
        J = J.reshape(-1, 10)
        H = J.T @ J
        grad = J.T @ r
        improved = False
        for _ in range(20):
            step = -np.linalg.solve(H + lam * np.diag(np.diag(H)), grad)
            g_new = g + step[:4]
            if g_new[0] <= 0 or g_new[1] <= 0:
                lam *= 10.0
                continue
            M_new = RigidTransform(rotation_from_vector(step[7:]), step[4:7]) @ M
            r_new, p_new = residual(g_new, M_new)
            if r_new is not None and float(r_new @ r_new) <= cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            converged = True
            break
        new_cost = float(r_new @ r_new)
        change = cost - new_cost
        g, M, r, p, cost = g_new, M_new, r_new, p_new, new_cost
        lam = max(lam / 10.0, 1e-15)
        if change <= tol * max(cost, 1e-30) or cost < 1e-28 or np.abs(step).max() < 1e-14:
            converged = True
            break
    if not converged and strict:
        raise NonConvergence(f"projector calibration did not converge in {max_iterations} iterations")
    err = np.linalg.norm(r.reshape(-1, 2), axis=1)
    return ProjectorCalibration(
        CameraIntrinsics(*g), M, float(err.mean()), float(err.std()), tuple(size), it, converged
    )


def synthetic_observations(
    calib: ProjectorCalibration,
    planes,
    pattern: DotPattern | None = None,
    noise_px: float = 0.0,
    seed: int = 0,
) -> list[CalibObservation]:
    """Projector-pixel / 3D-point pairs for dots cast onto planes in the camera frame.

    Each plane is ``(point, normal)`` in the camera frame. Dots whose ray misses the
    plane (or hits it behind the projector) are skipped.
    """
    pattern = pattern or generate_pattern(10, 10, size=calib.size)
    rng = np.random.default_rng(seed)
    px = pattern.centers.reshape(-1, 2)
    gam = calib.gamma
    rays_p = np.stack([(px[:, 0] - gam.u0) / gam.alpha_u, (px[:, 1] - gam.v0) / gam.alpha_v, np.ones(len(px))], axis=1)
    c_M_p = calib.p_M_c.inverse()
    origin = c_M_p.translation
    dirs = rays_p @ c_M_p.rotation.T
    out = []
    for k, (p0, nrm) in enumerate(planes):
        p0, nrm = np.asarray(p0, float), np.asarray(nrm, float)
        denom = dirs @ nrm
        ok = np.abs(denom) > 1e-12
        s = np.where(ok, ((p0 - origin) @ nrm) / np.where(ok, denom, 1.0), -1.0)
        ok &= s > 0
        pts = origin + s[ok, None] * dirs[ok]
        obs_px = px[ok] + (rng.normal(0.0, noise_px, (int(ok.sum()), 2)) if noise_px > 0 else 0.0)
        out.append(CalibObservation(obs_px, pts, k))
    return out


# --------------------------------------------------------------------------- calibration file


@dataclass(frozen=True, eq=False)
class SetupCalibration:
    """Everything the mapping needs: depth and color intrinsics, c_M_d, projector."""

    depth: CameraIntrinsics
    color: CameraIntrinsics
    c_M_d: RigidTransform
    projector: ProjectorCalibration
    color_residual: tuple = (float("nan"), float("nan"))


def reference_setup() -> SetupCalibration:
    """Calibration of the reference Kinect v2 plus ceiling projector rig."""
    proj = ProjectorCalibration(PROJECTOR_INTRINSICS, pose_from_mm(P_M_C_MM), size=PROJECTOR_SIZE)
    return SetupCalibration(DEPTH_INTRINSICS, COLOR_INTRINSICS, pose_from_mm(C_M_D_MM), proj, COLOR_RESIDUAL)


def _intr(doc, where: str) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(*(float(doc[k]) for k in ("alpha_u", "alpha_v", "u0", "v0")))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad intrinsics ({exc})") from None


def _frame(doc, where: str) -> RigidTransform:
    try:
        vals = [float(x) for x in doc["t_mm"]] + [float(x) for x in doc["theta_w_rad"]]
        if len(vals) != 6:
            raise ValueError("t_mm and theta_w_rad need 3 values each")
        return pose_from_mm(vals)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad frame change ({exc})") from None


def _residual_pair(doc) -> tuple:
    if not doc:
        return (float("nan"), float("nan"))
    return (float(doc.get("mean", "nan")), float(doc.get("stddev", "nan")))


def _frame_doc(M: RigidTransform) -> dict:
    v = pose_to_mm(M)
    return {"t_mm": [round(x, 6) for x in v[:3]], "theta_w_rad": [round(x, 9) for x in v[3:]]}


def _res_doc(pair) -> dict | None:
    if any(np.isnan(pair)):
        return None
    return {"mean": round(float(pair[0]), 6), "stddev": round(float(pair[1]), 6)}


def setup_to_dict(setup: SetupCalibration) -> dict:
    proj = setup.projector
    doc = {
        "depth_camera": {"frame": "F_d", "intrinsics": setup.depth.as_dict()},
        "color_camera": {
            "frame": "F_c",
            "intrinsics": setup.color.as_dict(),
            "c_M_d": _frame_doc(setup.c_M_d),
        },
        "projector": {
            "frame": "F_p",
            "size": list(proj.size),
            "intrinsics": proj.gamma.as_dict(),
            "p_M_c": _frame_doc(proj.p_M_c),
        },
    }
    if _res_doc(setup.color_residual):
        doc["color_camera"]["residual_px"] = _res_doc(setup.color_residual)
    if _res_doc((proj.residual_mean, proj.residual_std)):
        doc["projector"]["residual_px"] = _res_doc((proj.residual_mean, proj.residual_std))
    return doc


def setup_from_dict(doc) -> SetupCalibration:
    if not isinstance(doc, dict):
        raise ConfigError("calibration file must be a mapping")
    try:
        d, c, p = doc["depth_camera"], doc["color_camera"], doc["projector"]
    except KeyError as exc:
        raise ConfigError(f"calibration file: missing section {exc}") from None
    pres = _residual_pair(p.get("residual_px"))
    size = tuple(int(x) for x in p.get("size", PROJECTOR_SIZE))
    proj = ProjectorCalibration(_intr(p.get("intrinsics"), "projector"), _frame(p.get("p_M_c"), "projector.p_M_c"), pres[0], pres[1], size)
    return SetupCalibration(
        _intr(d.get("intrinsics"), "depth_camera"),
        _intr(c.get("intrinsics"), "color_camera"),
        _frame(c.get("c_M_d"), "color_camera.c_M_d"),
        proj,
        _residual_pair(c.get("residual_px")),
    )


def load_setup(path) -> SetupCalibration:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read calibration file {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return setup_from_dict(doc)


def save_setup(setup: SetupCalibration, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(setup_to_dict(setup), fh, sort_keys=False)
