"""Articulated puppet model: trunk mesh, four 3-joint limbs, bone sampling segments.

A ``.puppet`` file is a YAML document::

    name: demo-puppet
    trunk:
      vertices: [[x, y, z], ...]        # meters, object frame F_o
      triangles: [[i, j, k], ...]       # counter-clockwise seen from outside
    trunk_bones:
      - {id: spine, endpoints: [[x, y, z], [x, y, z]]}
    limbs:                              # exactly four
      - name: right_arm
        base_in_object: [tx, ty, tz, twx, twy, twz]   # mm and rad
        dh:                             # exactly three rows
          - {a: 0.0, alpha: 1.5708, d: 0.0, theta_offset: 0.0}
          - ...
        joint_limits: [[lo, hi], [lo, hi], [lo, hi]]  # optional, rad
        bones:
          B1: {segment: [[..], [..]], vertices: [...], triangles: [...]}
          B2: {segment: [[..], [..]], vertices: [...], triangles: [...]}

Bone vertices and segments are expressed in the bone frame (DH frame 2 for B1,
frame 3 for B2).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ModelParseError, ModelValidationError
from .geometry import RigidTransform, pose_from_mm, pose_to_mm
from .kinematics import BONES, DEFAULT_LIMITS, DHRow, LimbChain, forward

N_LIMBS = 4
MIN_TRIANGLE_AREA = 1e-10  # m^2

TRUNK = 0
BACKGROUND = -1


def part_id(limb: int, bone: str) -> int:
    """Integer label for a limb bone; 0 is the trunk, -1 the background."""
    return 1 + 2 * limb + BONES.index(bone)


def part_name(pid: int) -> str:
    if pid == TRUNK:
        return "trunk"
    if pid == BACKGROUND:
        return "background"
    limb, b = divmod(pid - 1, 2)
    return f"limb{limb + 1}.{BONES[b]}"


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (T, 3, 3)."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


@dataclass(frozen=True, eq=False)
class BoneSegment:
    id: str
    endpoints: np.ndarray  # (2, 3) in the owning bone's frame
    part: int  # TRUNK or part_id(limb, bone)

    @property
    def owner(self):
        if self.part == TRUNK:
            return "trunk"
        limb, b = divmod(self.part - 1, 2)
        return (limb, BONES[b])


@dataclass(frozen=True, eq=False)
class Limb:
    chain: LimbChain
    meshes: dict  # bone label -> Mesh


@dataclass(frozen=True, eq=False)
class PuppetModel:
    name: str
    trunk_mesh: Mesh
    limbs: tuple
    bones: tuple

    @property
    def joint_count(self) -> int:
        return 3 * len(self.limbs)

    @property
    def vertex_count(self) -> int:
        return len(self.trunk_mesh.vertices) + sum(
            len(m.vertices) for limb in self.limbs for m in limb.meshes.values()
        )

    @property
    def triangle_labels(self) -> np.ndarray:
        """Part id of every triangle, in :func:`posed_mesh` order."""
        labels = [np.full(len(self.trunk_mesh.triangles), TRUNK)]
        for m, limb in enumerate(self.limbs):
            for b in BONES:
                labels.append(np.full(len(limb.meshes[b].triangles), part_id(m, b)))
        return np.concatenate(labels)

    def zero_q(self) -> np.ndarray:
        return np.zeros((len(self.limbs), 3))

    def part_transforms(self, pose: RigidTransform, q) -> dict:
        """Camera-from-part transform for the trunk and every limb bone."""
        q = np.asarray(q, dtype=float).reshape(len(self.limbs), 3)
        out = {TRUNK: pose}
        for m, limb in enumerate(self.limbs):
            base = pose @ limb.chain.base_in_object
            MB1, MB2 = forward(limb.chain, q[m])
            out[part_id(m, "B1")] = base @ MB1
            out[part_id(m, "B2")] = base @ MB2
        return out


def posed_mesh(model: PuppetModel, pose: RigidTransform, q) -> np.ndarray:
    """Triangle corners of the posed model in the camera frame, shape (T, 3, 3).

    Trunk triangles come first, then B1 and B2 of every limb in order; see
    :attr:`PuppetModel.triangle_labels`.
    """
    tf = model.part_transforms(pose, q)
    chunks = [tf[TRUNK].apply(model.trunk_mesh.corners())]
    for m, limb in enumerate(model.limbs):
        for b in BONES:
            chunks.append(tf[part_id(m, b)].apply(limb.meshes[b].corners()))
    return np.concatenate(chunks, axis=0)


def bone_segments_in_camera(model: PuppetModel, pose: RigidTransform, q) -> list:
    """(BoneSegment, endpoints in camera frame) for every sampling segment."""
    tf = model.part_transforms(pose, q)
    return [(seg, tf[seg.part].apply(seg.endpoints)) for seg in model.bones]


# --------------------------------------------------------------------------- validation


def _fail(what: str, detail: str = ""):
    raise ModelValidationError(f"{what}: {detail}" if detail else what)


def _mesh_from(doc, where: str) -> Mesh:
    try:
        V = np.asarray(doc["vertices"], dtype=float)
        T = np.asarray(doc["triangles"], dtype=int)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"{where}: bad mesh ({exc})") from exc
    if V.ndim != 2 or V.shape[1] != 3 or T.ndim != 2 or T.shape[1] != 3:
        raise ModelParseError(f"{where}: vertices must be Nx3 and triangles Tx3")
    if T.size and (T.min() < 0 or T.max() >= len(V)):
        _fail("triangle index out of range", where)
    mesh = Mesh(V, T)
    if T.size == 0:
        _fail("empty mesh", where)
    bad = np.flatnonzero(mesh.areas() < MIN_TRIANGLE_AREA)
    if bad.size:
        _fail("degenerate triangle", f"{where} triangle {int(bad[0])}")
    return mesh


def _segment_from(raw, where: str) -> np.ndarray:
    try:
        ends = np.asarray(raw, dtype=float).reshape(2, 3)
    except (TypeError, ValueError) as exc:
        raise ModelParseError(f"{where}: segment must be two 3D points") from exc
    if np.linalg.norm(ends[1] - ends[0]) < 1e-9:
        _fail("bone endpoints coincide", where)
    return ends


def model_from_dict(doc) -> PuppetModel:
    if not isinstance(doc, dict):
        raise ModelParseError("model document must be a mapping")
    try:
        name = str(doc.get("name", "puppet"))
        trunk = _mesh_from(doc["trunk"], "trunk")
        bones = [
            BoneSegment(str(b["id"]), _segment_from(b["endpoints"], f"trunk bone {b['id']}"), TRUNK)
            for b in doc.get("trunk_bones", [])
        ]
        raw_limbs = doc["limbs"]
    except (KeyError, TypeError) as exc:
        raise ModelParseError(f"missing or malformed field: {exc}") from exc

    if len(raw_limbs) != N_LIMBS:
        _fail("limb count", f"expected {N_LIMBS}, got {len(raw_limbs)}")
    limbs = []
    for m, raw in enumerate(raw_limbs):
        lname = str(raw.get("name", f"limb{m + 1}"))
        dh = raw.get("dh", [])
        if len(dh) != 3:
            _fail("limb joint count", f"{lname} has {len(dh)} DH rows, expected 3")
        try:
            rows = tuple(DHRow(float(r["a"]), float(r["alpha"]), float(r["d"]), float(r.get("theta_offset", 0.0))) for r in dh)
            base = pose_from_mm(raw["base_in_object"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelParseError(f"{lname}: {exc}") from exc
        limits = raw.get("joint_limits") or [list(DEFAULT_LIMITS)] * 3
        try:
            chain = LimbChain(base, rows, tuple(tuple(x) for x in limits), name=lname)
        except ValueError as exc:
            _fail("limb chain", f"{lname}: {exc}")
        meshes = {}
        for b in BONES:
            braw = raw.get("bones", {}).get(b)
            if braw is None:
                _fail("limb bone count", f"{lname} lacks bone {b}")
            meshes[b] = _mesh_from(braw, f"{lname}.{b}")
            bones.append(BoneSegment(f"{lname}.{b}", _segment_from(braw["segment"], f"{lname}.{b}"), part_id(m, b)))
        limbs.append(Limb(chain, meshes))

    origins = np.array([l.chain.base_in_object.translation for l in limbs])
    for i in range(N_LIMBS):
        for j in range(i + 1, N_LIMBS):
            if np.linalg.norm(origins[i] - origins[j]) < 1e-6:
                _fail("limb base frames coincide", f"limbs {i + 1} and {j + 1}")
    model = PuppetModel(name, trunk, tuple(limbs), tuple(bones))
    if model.joint_count != 12:
        _fail("total joint count", str(model.joint_count))
    return model


def load_model(path) -> PuppetModel:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ModelParseError(f"{path}: {exc}") from exc
    return model_from_dict(doc)


def _mesh_dict(mesh: Mesh) -> dict:
    return {
        "vertices": [[round(float(x), 9) for x in v] for v in mesh.vertices],
        "triangles": [[int(i) for i in t] for t in mesh.triangles],
    }


def model_to_dict(model: PuppetModel) -> dict:
    doc = {
        "name": model.name,
        "trunk": _mesh_dict(model.trunk_mesh),
        "trunk_bones": [
            {"id": s.id, "endpoints": s.endpoints.tolist()} for s in model.bones if s.part == TRUNK
        ],
        "limbs": [],
    }
    segs = {s.part: s for s in model.bones}
    for m, limb in enumerate(model.limbs):
        c = limb.chain
        entry = {
            "name": c.name,
            "base_in_object": [round(x, 9) for x in pose_to_mm(c.base_in_object)],
            "dh": [{"a": r.a, "alpha": r.alpha, "d": r.d, "theta_offset": r.theta_offset} for r in c.rows],
            "joint_limits": [list(l) for l in c.joint_limits],
            "bones": {},
        }
        for b in BONES:
            entry["bones"][b] = {"segment": segs[part_id(m, b)].endpoints.tolist(), **_mesh_dict(limb.meshes[b])}
        doc["limbs"].append(entry)
    return doc


def save_model(model: PuppetModel, path) -> None:
    with open(path, "w") as fh:
        fh.write("# puppet model; meshes in meters, base frames as [tx ty tz (mm), theta_w (rad)]\n")
        yaml.safe_dump(model_to_dict(model), fh, sort_keys=False, default_flow_style=None, width=120)


# --------------------------------------------------------------------------- mesh builders


def box_mesh(half_extents, center=(0.0, 0.0, 0.0)) -> Mesh:
    hx, hy, hz = half_extents
    c = np.asarray(center, dtype=float)
    V = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) + c
    # vertex index = 4*(sx>0) + 2*(sy>0) + (sz>0)
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    T = []
    for a, b, cc, d in quads:
        T += [(a, b, cc), (a, cc, d)]
    return Mesh(V, np.array(T))


def cylinder_mesh(x0: float, x1: float, radius: float, segments: int = 12) -> Mesh:
    """Closed cylinder along the x axis from ``x0`` to ``x1``."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([np.zeros(segments), radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    V = np.concatenate([ring + [x0, 0, 0], ring + [x1, 0, 0], [[x0, 0, 0], [x1, 0, 0]]])
    c0, c1 = 2 * segments, 2 * segments + 1
    T = []
    for i in range(segments):
        j = (i + 1) % segments
        T += [(i, j, segments + j), (i, segments + j, segments + i)]
        T += [(c0, j, i), (c1, segments + i, segments + j)]
    return Mesh(V, np.array(T))


def _limb_frame(origin, direction, twist_axis) -> RigidTransform:
    x = np.asarray(direction, float) / np.linalg.norm(direction)
    z = np.asarray(twist_axis, float)
    z = z - x * np.dot(x, z)
    z /= np.linalg.norm(z)
    y = np.cross(z, x)
    return RigidTransform(np.stack([x, y, z], axis=1), origin)


def build_demo_puppet(segments: int = 12) -> PuppetModel:
    """Headless, handless figure of a box trunk and cylinder limbs.

    Demo constants (not measured from any real puppet): trunk 0.36 x 0.50 x 0.20 m,
    upper arm 0.18 m, forearm 0.16 m, thigh 0.22 m, shin 0.20 m. Object frame:
    x right, y down, z away from a camera facing the puppet's chest.
    """
    trunk = box_mesh((0.18, 0.25, 0.10))
    bones = [
        BoneSegment("spine", np.array([[0.0, -0.2, 0.0], [0.0, 0.2, 0.0]]), TRUNK),
        BoneSegment("shoulders", np.array([[-0.14, -0.2, 0.0], [0.14, -0.2, 0.0]]), TRUNK),
        BoneSegment("hips", np.array([[-0.14, 0.2, 0.0], [0.14, 0.2, 0.0]]), TRUNK),
    ]
    spread = np.deg2rad(25.0)
    specs = [
        # name, origin, hanging direction, (L1, r1), (L2, r2)
        ("right_arm", (0.20, -0.21, 0.0), (np.sin(spread), np.cos(spread), 0.0), (0.18, 0.035), (0.16, 0.03)),
        ("left_arm", (-0.20, -0.21, 0.0), (-np.sin(spread), np.cos(spread), 0.0), (0.18, 0.035), (0.16, 0.03)),
        ("right_leg", (0.10, 0.23, 0.0), (0.0, 1.0, 0.0), (0.22, 0.045), (0.20, 0.04)),
        ("left_leg", (-0.10, 0.23, 0.0), (0.0, 1.0, 0.0), (0.22, 0.045), (0.20, 0.04)),
    ]
    limbs = []
    for m, (name, origin, direction, (L1, r1), (L2, r2)) in enumerate(specs):
        d = np.asarray(direction)
        lateral = np.array([d[1], -d[0], 0.0])  # in the image plane, perpendicular to the limb
        base = _limb_frame(origin, d, lateral)
        rows = (DHRow(0.0, np.pi / 2, 0.0), DHRow(L1, 0.0, 0.0), DHRow(L2, 0.0, 0.0))
        chain = LimbChain(base, rows, name=name)
        meshes = {"B1": cylinder_mesh(-L1, 0.0, r1, segments), "B2": cylinder_mesh(-L2, 0.0, r2, segments)}
        limbs.append(Limb(chain, meshes))
        bones.append(BoneSegment(f"{name}.B1", np.array([[-L1, 0.0, 0.0], [0.0, 0.0, 0.0]]), part_id(m, "B1")))
        bones.append(BoneSegment(f"{name}.B2", np.array([[-L2, 0.0, 0.0], [0.0, 0.0, 0.0]]), part_id(m, "B2")))
    return PuppetModel("demo-puppet", trunk, tuple(limbs), tuple(bones))


def demo_model_path() -> Path:
    return Path(__file__).parent / "data" / "demo.puppet"


def load_demo_model() -> PuppetModel:
    return load_model(demo_model_path())


def read_obj(path) -> Mesh:
    """Minimal Wavefront OBJ reader (``v`` and ``f`` records, polygons fan-triangulated)."""
    V, T = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    V.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    idx = [i - 1 if i > 0 else len(V) + i for i in idx]
                    T += [(idx[0], idx[k], idx[k + 1]) for k in range(1, len(idx) - 1)]
            except ValueError as exc:
                raise ModelParseError(f"{path}:{lineno}: {exc}") from exc
    return Mesh(np.array(V, dtype=float), np.array(T, dtype=int))


def replace_trunk(model: PuppetModel, mesh: Mesh, scale: float = 1.0) -> PuppetModel:
    """Swap the trunk mesh (e.g. one read with :func:`read_obj`), validating it."""
    checked = _mesh_from({"vertices": mesh.vertices * scale, "triangles": mesh.triangles}, "trunk")
    return PuppetModel(model.name, checked, model.limbs, model.bones)


def sphere_mesh(radius: float, center=(0.0, 0.0, 0.0), n_lon: int = 64, n_lat: int = 32) -> Mesh:
    """UV sphere with outward counter-clockwise triangles."""
    lat = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    lon = 2 * np.pi * np.arange(n_lon) / n_lon
    ring = np.stack(
        [np.outer(np.sin(lat), np.cos(lon)), np.outer(np.sin(lat), np.sin(lon)), np.repeat(np.cos(lat)[:, None], n_lon, 1)],
        axis=-1,
    ).reshape(-1, 3)
    V = np.concatenate([ring, [[0, 0, 1], [0, 0, -1]]]) * radius + np.asarray(center, float)
    top, bot = len(ring), len(ring) + 1
    T = []
    for i in range(n_lon):
        j = (i + 1) % n_lon
        T.append((top, i, j))
        last = (n_lat - 2) * n_lon
        T.append((bot, last + j, last + i))
        for r in range(n_lat - 2):
            a, b = r * n_lon + i, r * n_lon + j
            c, d = a + n_lon, b + n_lon
            T += [(a, c, d), (a, d, b)]
    return Mesh(V, np.array(T))
