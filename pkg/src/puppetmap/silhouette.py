"""Silhouette samples from the virtual Z-buffer and their match in a real depth frame.

Extraction seeds points regularly along every projected bone and walks along the
image normal of the bone until the owning part gives way to background. The walk
is abandoned when another part of the puppet is hit first, so every sample keeps
the label of the bone that produced it.

Matching scans each sample along its border normal and keeps the position where
an oriented 7x7 step mask correlates best with the valid/invalid map of the real
frame (moving-edges search). Both sides then place the border at the 0.5 level
crossing of a lightly smoothed validity map along the same scan line, so a frame
identical to the render matches every sample onto itself.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoSilhouette
from .geometry import CameraIntrinsics, RigidTransform, back_project
from .model import BACKGROUND, PuppetModel, bone_segments_in_camera, part_name
from .render import DepthImage, write_pgm8

MASK_HALF = 3
N_MASKS = 8
DEFAULT_SPACING = 5.0
DEFAULT_SEARCH = 15
DEFAULT_THRESHOLD = 0.6
DEFAULT_MAX_WALK = 60
ORIENTATION_SIGMA = 4.5
LOCALIZE_SIGMA = 1.0
LIFT_PIXELS = 3


@dataclass(slots=True, eq=False)
class SilhouetteSample:
    index: int
    pixel_virtual: np.ndarray  # sub-pixel border point (u, v)
    pixel_inner: np.ndarray  # scan origin: interior pixel next to the border, integer (u, v)
    step_out: np.ndarray  # outward border normal scaled to one pixel along its major axis
    offset: float  # border position along the scan line, in steps from pixel_inner
    orientation: float  # border tangent angle in [0, pi)
    inward: np.ndarray  # unit normal pointing into the silhouette
    bone: int  # part id
    depth_virtual: float
    point3_virtual: np.ndarray

    @property
    def bone_name(self) -> str:
        return part_name(self.bone)


@dataclass(slots=True, eq=False)
class MatchedPair:
    sample: SilhouetteSample
    pixel_real: np.ndarray
    point3_real: np.ndarray
    match_score: float  # mask response as a fraction of the ideal step response


class _Field:
    """Smoothed validity map restricted to a window around the valid pixels."""

    def __init__(self, valid: np.ndarray, sigma: float):
        h, w = valid.shape
        rows = np.flatnonzero(valid.any(axis=1))
        cols = np.flatnonzero(valid.any(axis=0))
        pad = int(4 * sigma) + 2
        if rows.size:
            self.r0, r1 = max(rows[0] - pad, 0), min(rows[-1] + pad + 1, h)
            self.c0, c1 = max(cols[0] - pad, 0), min(cols[-1] + pad + 1, w)
        else:
            self.r0, r1, self.c0, c1 = 0, 1, 0, 1
        self.value = ndimage.gaussian_filter(valid[self.r0 : r1, self.c0 : c1].astype(float), sigma, mode="nearest")

    def sample(self, uv: np.ndarray, grid=None) -> np.ndarray:
        src = self.value if grid is None else grid
        coords = [uv[..., 1].ravel() - self.r0, uv[..., 0].ravel() - self.c0]
        out = ndimage.map_coordinates(src, coords, order=1, mode="nearest")
        return out.reshape(uv.shape[:-1])

    def gradient(self, uv: np.ndarray) -> np.ndarray:
        gy, gx = np.gradient(self.value)
        return np.stack([self.sample(uv, gx), self.sample(uv, gy)], axis=-1)


def _crossing(field: _Field, origin: np.ndarray, step: np.ndarray, center: np.ndarray, reach: int = 3) -> np.ndarray:
    """Offset t along ``origin + t * step`` where the smoothed validity falls through 0.5.

    Looks within ``center +- reach`` and keeps the downward crossing nearest
    ``center``; falls back to ``center`` when there is none.
    """
    ts = np.round(center)[:, None] + np.arange(-reach, reach + 1)[None, :]
    vals = field.sample(origin[:, None, :] + ts[..., None] * step[:, None, :]) - 0.5
    a, b = vals[:, :-1], vals[:, 1:]
    down = (a >= 0) & (b < 0)
    frac = np.where(down, a / np.where(down, a - b, 1.0), 0.0)
    cand = ts[:, :-1] + frac
    dist = np.where(down, np.abs(cand - center[:, None]), np.inf)
    best = np.argmin(dist, axis=1)
    rows = np.arange(len(origin))
    found = np.isfinite(dist[rows, best])
    return np.where(found, cand[rows, best], center)


def _interior_depth(data: np.ndarray, inner: np.ndarray, step: np.ndarray, labels=None, parts=None) -> np.ndarray:
    """Median depth of up to LIFT_PIXELS pixels walking inward from ``inner``; 0 if none.

    The first pixel (adjacent to the border) must be usable, otherwise the sample
    is not liftable. With ``labels``, only pixels of the sample's own part count.
    """
    h, w = data.shape
    depths = np.full((len(inner), LIFT_PIXELS), np.nan)
    for i in range(LIFT_PIXELS):
        p = np.floor(inner - i * step + 0.5).astype(int)
        ok = (p[:, 0] >= 0) & (p[:, 0] < w) & (p[:, 1] >= 0) & (p[:, 1] < h)
        d = np.zeros(len(inner))
        d[ok] = data[p[ok, 1], p[ok, 0]]
        if labels is not None:
            lab = np.full(len(inner), BACKGROUND)
            lab[ok] = labels[p[ok, 1], p[ok, 0]]
            d[lab != parts] = 0.0
        depths[d > 0, i] = d[d > 0]
    out = np.zeros(len(inner))
    has = ~np.isnan(depths[:, 0])
    if has.any():
        out[has] = np.nanmedian(depths[has], axis=1)
    return out


def extract_silhouette(
    zbuf: DepthImage,
    gamma: CameraIntrinsics,
    model: PuppetModel,
    pose: RigidTransform,
    q,
    spacing: float = DEFAULT_SPACING,
    max_walk: int = DEFAULT_MAX_WALK,
) -> list[SilhouetteSample]:
    """Silhouette samples of a labelled render of ``model`` at ``(pose, q)``."""
    segments = [(seg.part, ends) for seg, ends in bone_segments_in_camera(model, pose, q)]
    return extract_from_segments(zbuf, gamma, segments, spacing, max_walk)


def _seed(gamma: CameraIntrinsics, segments, spacing: float):
    seeds, steps, parts = [], [], []
    for part, ends in segments:
        ends = np.asarray(ends, dtype=float)
        if np.any(ends[:, 2] <= 0):
            continue
        uv = np.stack([gamma.alpha_u * ends[:, 0] / ends[:, 2] + gamma.u0,
                       gamma.alpha_v * ends[:, 1] / ends[:, 2] + gamma.v0], axis=1)
        d = uv[1] - uv[0]
        length = float(np.hypot(*d))
        if length < 1e-9:
            continue
        n = max(1, int(np.floor(length / spacing)))
        pts = uv[0] + ((np.arange(n) + 0.5) / n)[:, None] * d
        normal = np.array([-d[1], d[0]]) / length
        for sign in (1.0, -1.0):
            seeds.append(pts)
            steps.append(np.repeat((sign * normal / np.abs(normal).max())[None], n, axis=0))
            parts.append(np.full(n, part))
    if not seeds:
        raise NoSilhouette("no bone projects in front of the camera")
    return np.concatenate(seeds), np.concatenate(steps), np.concatenate(parts)


def extract_from_segments(
    zbuf: DepthImage,
    gamma: CameraIntrinsics,
    segments,
    spacing: float = DEFAULT_SPACING,
    max_walk: int = DEFAULT_MAX_WALK,
) -> list[SilhouetteSample]:
    """Core of :func:`extract_silhouette` for ``(part id, camera-frame endpoints)`` pairs.

    Without ``zbuf.labels`` every valid pixel counts as belonging to every part.
    """
    valid = zbuf.valid
    if not valid.any():
        raise NoSilhouette("virtual depth image is empty")
    labels = zbuf.labels
    h, w = valid.shape
    seeds, steps, parts = _seed(gamma, segments, spacing)

    k = np.arange(max_walk + 1)
    pix = np.floor(seeds[:, None, :] + k[None, :, None] * steps[:, None, :] + 0.5).astype(int)
    inside = (pix[..., 0] >= 0) & (pix[..., 0] < w) & (pix[..., 1] >= 0) & (pix[..., 1] < h)
    pu = np.clip(pix[..., 0], 0, w - 1)
    pv = np.clip(pix[..., 1], 0, h - 1)
    if labels is not None:
        lab = np.where(inside, labels[pv, pu], -2)
        same = lab == parts[:, None]
    else:
        lab = np.where(inside, np.where(valid[pv, pu], 0, BACKGROUND), -2)
        same = lab == 0
    leave = ~same
    first_out = np.argmax(leave, axis=1)
    ok = leave.any(axis=1) & same[:, 0] & (first_out > 0)
    ok &= lab[np.arange(len(seeds)), first_out] == BACKGROUND
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise NoSilhouette("no bone-to-background transition found")
    fo = first_out[idx]
    inner = pix[idx, fo - 1].astype(float)
    walk_border = 0.5 * (inner + pix[idx, fo])
    parts = parts[idx]

    coarse_field = _Field(valid, ORIENTATION_SIGMA)
    fine_field = _Field(valid, LOCALIZE_SIGMA)
    inward = -steps[idx] / np.linalg.norm(steps[idx], axis=1, keepdims=True)
    border = walk_border
    # second pass re-reads the normal at the refined border point
    for _ in range(2):
        grad = coarse_field.gradient(border)
        norm = np.linalg.norm(grad, axis=1)
        inward = np.where((norm > 1e-9)[:, None], grad / np.maximum(norm, 1e-12)[:, None], inward)
        step = -inward / np.abs(inward).max(axis=1, keepdims=True)
        offset = _crossing(fine_field, inner, step, np.full(len(inner), 0.5))
        border = inner + offset[:, None] * step
    orient = np.mod(np.arctan2(inward[:, 1], inward[:, 0]) + np.pi / 2, np.pi)
    depth = _interior_depth(zbuf.data, inner + (np.round(offset - 0.5))[:, None] * step, step,
                            labels, parts if labels is not None else None)

    keep = np.flatnonzero(depth > 0)
    if keep.size == 0:
        raise NoSilhouette("no liftable silhouette sample")
    pts3 = back_project(gamma, border[keep], depth[keep])
    return [
        SilhouetteSample(
            index=n,
            pixel_virtual=border[i],
            pixel_inner=inner[i],
            step_out=step[i],
            offset=float(offset[i]),
            orientation=float(orient[i]),
            inward=inward[i],
            bone=int(parts[i]),
            depth_virtual=float(depth[i]),
            point3_virtual=pts3[n],
        )
        for n, i in enumerate(keep)
    ]


def oriented_masks(half: int = MASK_HALF, count: int = N_MASKS):
    """Step masks for edge tangents k*pi/count: +1 on the side of normal (-sin, cos), -1 opposite."""
    dy, dx = np.mgrid[-half : half + 1, -half : half + 1]
    masks, normals = [], []
    for k in range(count):
        th = k * np.pi / count
        nrm = np.array([-np.sin(th), np.cos(th)])
        s = dx * nrm[0] + dy * nrm[1]
        masks.append(np.where(np.abs(s) < 1e-9, 0.0, np.sign(s)))
        normals.append(nrm)
    return np.array(masks), np.array(normals)


_MASKS, _MASK_NORMALS = oriented_masks()


def mask_responses(samples: list[SilhouetteSample], real: DepthImage, search_half_length: int = DEFAULT_SEARCH):
    """Normalized oriented-mask response at scan offsets -L..L for every sample, shape (S, 2L+1).

    Offset j is the mask centered on pixel ``pixel_inner + j * step_out``; a response
    of 1 means a perfect step with the silhouette on the inward side.
    """
    half = MASK_HALF
    J = int(search_half_length)
    pad = half + 2 * J + 2
    padded = np.pad(np.where(real.valid, 1.0, -1.0).astype(np.float32), pad, constant_values=-1.0)
    inner = np.array([s.pixel_inner for s in samples])
    step = np.array([s.step_out for s in samples])
    orient = np.array([s.orientation for s in samples])
    inward = np.array([s.inward for s in samples])
    k = np.mod(np.round(orient / (np.pi / N_MASKS)).astype(int), N_MASKS)
    polarity = np.sign(np.einsum("ij,ij->i", inward, _MASK_NORMALS[k]))
    polarity[polarity == 0] = 1.0
    ideal = np.abs(_MASKS).sum(axis=(1, 2))[k]

    j = np.arange(-J, J + 1)
    pix = np.floor(inner[:, None, :] + j[None, :, None] * step[:, None, :] + 0.5).astype(int) + pad
    dy, dx = np.mgrid[-half : half + 1, -half : half + 1]
    hp, wp = padded.shape
    centre = np.clip(pix[..., 1], half, hp - half - 1) * wp + np.clip(pix[..., 0], half, wp - half - 1)
    patches = padded.ravel().take(centre[..., None] + (dy * wp + dx).ravel())
    resp = np.einsum("sjc,sc->sj", patches, _MASKS[k].reshape(len(samples), -1).astype(np.float32)).astype(float) * polarity[:, None]
    step_len = np.linalg.norm(step, axis=1)
    # oblique scans advance more than one pixel per step; keep them inside the search radius
    resp[np.abs(j)[None, :] * step_len[:, None] > J + 1e-9] = -np.inf
    return resp / ideal[:, None], j


def match_samples(
    samples: list[SilhouetteSample],
    real: DepthImage,
    gamma: CameraIntrinsics,
    search_half_length: int = DEFAULT_SEARCH,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[MatchedPair]:
    """Moving-edges search of every sample in ``real`` (already depth-clipped).

    The best-responding run of scan positions is kept; among equally good runs the
    one nearest the virtual border wins. Samples below ``threshold`` times the ideal
    step response, or with no valid depth on the interior side, are dropped.
    Result is ordered by sample index.
    """
    if not samples or not real.valid.any():
        return []
    score, j = mask_responses(samples, real, search_half_length)
    best = score.max(axis=1)
    start = np.array([s.offset for s in samples])
    sel = np.flatnonzero(best >= threshold)
    if sel.size == 0:
        return []
    # runs of best-scoring scan positions; keep the run center nearest the virtual border
    hit = np.pad(score[sel] == best[sel, None], ((0, 0), (1, 1)))
    r0, c0 = np.nonzero(hit[:, 1:-1] & ~hit[:, :-2])
    _, c1 = np.nonzero(hit[:, 1:-1] & ~hit[:, 2:])
    centers = 0.5 * (j[c0] + j[c1])
    dist = np.abs(centers - start[sel][r0])
    order = np.lexsort((dist, r0))
    first = order[np.r_[True, r0[order][1:] != r0[order][:-1]]]
    coarse = np.empty(len(samples))
    coarse[sel[r0[first]]] = centers[first]

    inner = np.array([samples[i].pixel_inner for i in sel])
    step = np.array([samples[i].step_out for i in sel])
    offset = _crossing(_Field(real.valid, LOCALIZE_SIGMA), inner, step, coarse[sel])
    px_real = inner + offset[:, None] * step
    depth = _interior_depth(real.data, inner + np.round(offset - 0.5)[:, None] * step, step)
    good = np.flatnonzero(depth > 0)
    if good.size == 0:
        return []
    pts = back_project(gamma, px_real[good], depth[good])
    return [MatchedPair(samples[sel[g]], px_real[g], pts[n], float(best[sel[g]])) for n, g in enumerate(good)]


# --------------------------------------------------------------------------- debug output


def write_matches_csv(path, samples: list[SilhouetteSample], pairs: list[MatchedPair]) -> None:
    by_index = {p.sample.index: p for p in pairs}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sample_id", "bone", "u_v", "v_v", "phi", "u_r", "v_r", "score"])
        for s in samples:
            p = by_index.get(s.index)
            real = ("", "", "") if p is None else (f"{p.pixel_real[0]:.3f}", f"{p.pixel_real[1]:.3f}", f"{p.match_score:.4f}")
            wr.writerow([s.index, s.bone_name, f"{s.pixel_virtual[0]:.3f}", f"{s.pixel_virtual[1]:.3f}", f"{s.orientation:.5f}", *real])


def overlay_image(real: DepthImage, samples: list[SilhouetteSample], pairs: list[MatchedPair]) -> np.ndarray:
    """Grey depth frame with virtual samples (128) and matched points (255) drawn on it."""
    img = np.zeros(real.data.shape)
    v = real.valid
    if v.any():
        d = real.data[v]
        lo, hi = d.min(), d.max()
        img[v] = 40 + 60 * (hi - real.data[v]) / max(hi - lo, 1e-9)
    h, w = img.shape
    for pts, val in (([s.pixel_virtual for s in samples], 128), ([p.pixel_real for p in pairs], 255)):
        for u, vv in pts:
            c, r = int(round(u)), int(round(vv))
            if 0 <= r < h and 0 <= c < w:
                img[r, c] = val
    return img


def write_overlay_pgm(path, real: DepthImage, samples, pairs) -> None:
    write_pgm8(path, overlay_image(real, samples, pairs))
