"""Software Z-buffer rasterizer and synthetic depth sensor.

Pixel (i, j) has its center at continuous coordinates (u, v) = (j, i), the same
convention :func:`puppetmap.geometry.project` uses. Depth is camera-space z;
0.0 marks pixels with no surface (background, dropout, clipped).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import CameraIntrinsics, RigidTransform
from .model import BACKGROUND, PuppetModel, posed_mesh

INVALID = 0.0
NEAR_PLANE = 1e-3
SENSOR_SIZE = (512, 424)
# Kinect v2 depth intrinsics, Table 1 of the reference setup
SENSOR_INTRINSICS = CameraIntrinsics(359.90, 359.21, 239.80, 208.67)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major depth map in meters; ``labels`` holds per-pixel part ids for renders."""

    data: np.ndarray
    labels: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    @property
    def valid(self) -> np.ndarray:
        return self.data > 0.0

    def with_data(self, data: np.ndarray) -> "DepthImage":
        return replace(self, data=data)


@dataclass(frozen=True)
class SensorNoiseModel:
    sigma_depth: float = 0.002
    quantization_step: float = 0.001
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_depth < 0:
            raise ValueError("sigma_depth must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.quantization_step < 0:
            raise ValueError("quantization_step must be >= 0")

    @classmethod
    def noiseless(cls) -> "SensorNoiseModel":
        return cls(0.0, 0.0, 0.0, 0)


def _edge(ax, ay, bx, by, px, py):
    """Edge function of (a -> b) at p, evaluated in a direction-independent order.

    Computing every shared edge with the same operand order makes the value
    exactly antisymmetric, so the fill rule never double-hits or drops a pixel.
    """
    if (ax, ay) > (bx, by):
        return -((ax - bx) * (py - by) - (ay - by) * (px - bx))
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owns(ax, ay, bx, by) -> bool:
    # top-left rule for a y-down image and positive edge-function winding
    dx, dy = bx - ax, by - ay
    return dy < 0 or (dy == 0 and dx > 0)


def render_zbuffer(
    gamma: CameraIntrinsics,
    size,
    triangles,
    labels=None,
    cull_backfaces: bool = False,
) -> DepthImage:
    """Rasterize camera-frame triangles (T, 3, 3) into a depth image of ``size = (w, h)``.

    Each covered pixel keeps the smallest camera-space z; 1/z is interpolated
    linearly in screen space, which is exact for planar triangles. Triangles with
    a vertex closer than the near plane are skipped.
    """
    width, height = int(size[0]), int(size[1])
    zbuf = np.full((height, width), np.inf)
    lab = np.full((height, width), BACKGROUND, dtype=np.int32) if labels is not None else None
    tris = np.asarray(triangles, dtype=float).reshape(-1, 3, 3)
    if len(tris):
        z = tris[:, :, 2]
        keep = np.all(z > NEAR_PLANE, axis=1)
        if cull_backfaces:
            n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
            keep &= np.einsum("ij,ij->i", n, tris[:, 0]) < 0.0
        idx = np.flatnonzero(keep)
        zk = z[idx]
        U = gamma.alpha_u * tris[idx, :, 0] / zk + gamma.u0
        V = gamma.alpha_v * tris[idx, :, 1] / zk + gamma.v0
        IZ = 1.0 / zk
        umin = np.maximum(np.ceil(U.min(axis=1)), 0).astype(int)
        umax = np.minimum(np.floor(U.max(axis=1)), width - 1).astype(int)
        vmin = np.maximum(np.ceil(V.min(axis=1)), 0).astype(int)
        vmax = np.minimum(np.floor(V.max(axis=1)), height - 1).astype(int)
        for k in np.flatnonzero((umin <= umax) & (vmin <= vmax)):
            _raster_one(zbuf, lab, U[k], V[k], IZ[k], umin[k], umax[k], vmin[k], vmax[k],
                        None if labels is None else int(labels[idx[k]]))
    zbuf[np.isinf(zbuf)] = INVALID
    return DepthImage(zbuf, lab)


def _raster_one(zbuf, lab, U, V, IZ, u0, u1, v0, v1, label):
    ax, bx, cx = (float(x) for x in U)
    ay, by, cy = (float(x) for x in V)
    iza, izb, izc = (float(x) for x in IZ)
    area = _edge(ax, ay, bx, by, cx, cy)
    if area == 0.0:
        return
    if area < 0.0:
        bx, by, cx, cy = cx, cy, bx, by
        izb, izc = izc, izb
        area = -area
    pu = np.arange(u0, u1 + 1, dtype=float)[None, :]
    pv = np.arange(v0, v1 + 1, dtype=float)[:, None]
    w0 = _edge(bx, by, cx, cy, pu, pv)
    w1 = _edge(cx, cy, ax, ay, pu, pv)
    w2 = _edge(ax, ay, bx, by, pu, pv)
    inside = (
        ((w0 > 0) | ((w0 == 0) & _owns(bx, by, cx, cy)))
        & ((w1 > 0) | ((w1 == 0) & _owns(cx, cy, ax, ay)))
        & ((w2 > 0) | ((w2 == 0) & _owns(ax, ay, bx, by)))
    )
    if not inside.any():
        return
    iz = iza + (w1 * (izb - iza) + w2 * (izc - iza)) / area
    zz = 1.0 / iz
    region = zbuf[v0 : v1 + 1, u0 : u1 + 1]
    closer = inside & (zz < region)
    region[closer] = zz[closer]
    if lab is not None:
        lab[v0 : v1 + 1, u0 : u1 + 1][closer] = label


def render_model(model: PuppetModel, pose: RigidTransform, q, gamma: CameraIntrinsics, size=SENSOR_SIZE) -> DepthImage:
    """Z-buffer of the posed puppet, with part labels."""
    return render_zbuffer(gamma, size, posed_mesh(model, pose, q), model.triangle_labels, cull_backfaces=True)


def apply_noise(img: DepthImage, noise: SensorNoiseModel) -> DepthImage:
    """Gaussian depth noise, quantization and dropout on valid pixels; seed-deterministic."""
    rng = np.random.default_rng(noise.seed)
    data = img.data.copy()
    valid = data > 0.0
    gauss = rng.standard_normal(data.shape)
    drop = rng.random(data.shape)
    if noise.sigma_depth > 0:
        data[valid] += noise.sigma_depth * gauss[valid]
    if noise.quantization_step > 0:
        data[valid] = np.round(data[valid] / noise.quantization_step) * noise.quantization_step
    data[valid & (data <= 0.0)] = INVALID
    if noise.dropout_rate > 0:
        data[valid & (drop < noise.dropout_rate)] = INVALID
    return img.with_data(data)


def simulate_sensor_frame(
    model: PuppetModel,
    true_pose: RigidTransform,
    true_q,
    gamma_d: CameraIntrinsics = SENSOR_INTRINSICS,
    noise: SensorNoiseModel | None = None,
    size=SENSOR_SIZE,
    backdrop_depth: float | None = None,
) -> DepthImage:
    """Synthetic depth frame: puppet render (plus optional fronto-parallel wall), then noise."""
    img = render_model(model, true_pose, true_q, gamma_d, size)
    if backdrop_depth is not None:
        data = img.data.copy()
        data[data <= 0.0] = backdrop_depth
        img = img.with_data(data)
    return apply_noise(img, noise or SensorNoiseModel.noiseless())


def clip_depth_range(img: DepthImage, z_center: float, margin: float) -> DepthImage:
    """Invalidate depths outside ``[z_center - margin, z_center + margin]``."""
    if margin <= 0:
        raise ValueError("margin must be > 0")
    data = img.data.copy()
    data[(data < z_center - margin) | (data > z_center + margin)] = INVALID
    return img.with_data(data)


# --------------------------------------------------------------------------- file I/O


def write_pfm(path, img: DepthImage) -> None:
    """Grayscale PFM: header ``Pf``, negative scale = little-endian float32, rows bottom-up."""
    h, w = img.data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(img.data).astype("<f4").tobytes())


def read_pfm(path) -> DepthImage:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind != b"Pf":
            raise ValueError(f"{path}: only grayscale PFM (Pf) is supported")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 4), dtype=dtype).reshape(h, w)
    return DepthImage(np.flipud(data).astype(float))


def write_pgm16(path, img: DepthImage) -> None:
    """Binary 16-bit PGM in millimeters (big-endian, as netpbm requires); 0 = invalid."""
    mm = np.clip(np.round(img.data * 1000.0), 0, 65535).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(mm.tobytes())


def read_pgm16(path) -> DepthImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw[pos + 1 :], dtype=dtype, count=w * h).reshape(h, w)
    return DepthImage(data.astype(float) / 1000.0)


def write_pgm8(path, image: np.ndarray) -> None:
    """8-bit PGM for masks and overlays."""
    arr = np.clip(np.asarray(image), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())
