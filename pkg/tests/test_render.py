import numpy as np
import pytest

from puppetmap.geometry import CameraIntrinsics, pose_from_mm
from puppetmap.render import (
    DepthImage,
    SensorNoiseModel,
    clip_depth_range,
    read_pfm,
    read_pgm16,
    render_model,
    render_zbuffer,
    simulate_sensor_frame,
    write_pfm,
    write_pgm16,
)

SMALL = CameraIntrinsics(60.0, 60.0, 31.5, 31.5)


def ray_cast(gamma, size, tris):
    """Brute-force oracle: nearest ray/triangle hit (Moller-Trumbore) through every pixel center."""
    w, h = size
    vv, uu = np.mgrid[0:h, 0:w]
    d = np.stack([(uu - gamma.u0) / gamma.alpha_u, (vv - gamma.v0) / gamma.alpha_v, np.ones_like(uu, float)], -1).reshape(-1, 3)
    best = np.full(len(d), np.inf)
    for a, b, c in tris:
        e1, e2 = b - a, c - a
        pv = np.cross(d, e2)
        det = pv @ e1
        ok = np.abs(det) > 1e-15
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = -a
        u = (pv @ tv) * inv
        qv = np.cross(tv, e1)
        v = (d @ qv) * inv
        t = (qv @ e2) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        best = np.where(hit & (t < best), t, best)
    # d has unit z, so the ray parameter is the camera-space depth
    return np.where(np.isinf(best), 0.0, best).reshape(h, w)


def random_scene(rng, n):
    tris = []
    for _ in range(n):
        center = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(1.0, 4.0)])
        tris.append(center + rng.normal(scale=0.35, size=(3, 3)) * [1, 1, 0.5])
    tris = np.array(tris)
    tris[:, :, 2] = np.maximum(tris[:, :, 2], 0.2)
    return tris


def test_rasterizer_matches_ray_cast_oracle():
    rng = np.random.default_rng(0)
    disagree = covered = 0
    worst = 0.0
    for _ in range(50):
        tris = random_scene(rng, rng.integers(1, 12))
        img = render_zbuffer(SMALL, (64, 64), tris).data
        ref = ray_cast(SMALL, (64, 64), tris)
        both = (img > 0) & (ref > 0)
        worst = max(worst, np.abs(img[both] - ref[both]).max(initial=0.0))
        disagree += int(np.count_nonzero((img > 0) != (ref > 0)))
        covered += int(np.count_nonzero((img > 0) | (ref > 0)))
    assert worst < 1e-6
    assert disagree / covered < 0.01


def test_empty_scene_is_all_invalid():
    img = render_zbuffer(SMALL, (64, 48), np.empty((0, 3, 3)))
    assert img.data.shape == (48, 64) and not img.valid.any()


def square(z, half):
    a, b, c, d = [-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]
    return np.array([[a, b, c], [a, c, d]], dtype=float)


def test_frame_filling_plane_is_exact():
    img = render_zbuffer(SMALL, (64, 64), square(2.0, 10.0))
    assert np.all(img.data == 2.0)


def test_overlapping_squares_keep_nearest():
    tris = np.concatenate([square(2.0, 0.5), square(1.0, 0.2)])
    img = render_zbuffer(SMALL, (64, 64), tris).data
    vv, uu = np.mgrid[0:64, 0:64]
    x1, y1 = (uu - SMALL.u0) / SMALL.alpha_u, (vv - SMALL.v0) / SMALL.alpha_v
    in_near = (np.abs(x1) <= 0.2) & (np.abs(y1) <= 0.2)
    in_far = (np.abs(x1 * 2) <= 0.5) & (np.abs(y1 * 2) <= 0.5)
    assert np.all(img[in_near] == 1.0)
    assert np.all(img[in_far & ~in_near] == 2.0)


def test_shared_edge_is_covered_exactly_once():
    rng = np.random.default_rng(1)
    for _ in range(20):
        # convex quad: sorted angles around a center
        ang = np.sort(rng.uniform(0, 2 * np.pi, 4))
        r = rng.uniform(0.2, 0.5, 4)
        quad = np.column_stack([r * np.cos(ang), r * np.sin(ang), np.full(4, 2.0)])
        if np.cross(quad[2] - quad[0], quad[1] - quad[0])[2] * np.cross(quad[3] - quad[0], quad[2] - quad[0])[2] <= 0:
            continue
        t1, t2 = quad[[0, 1, 2]], quad[[0, 2, 3]]
        m1 = render_zbuffer(SMALL, (64, 64), t1[None]).valid
        m2 = render_zbuffer(SMALL, (64, 64), t2[None]).valid
        assert not np.any(m1 & m2)


def test_backface_culling_drops_far_side(model, gamma_d, front_pose, zero_q):
    img = render_model(model, front_pose, zero_q, gamma_d)
    # trunk front face is 0.1 m nearer than the center
    v, u = np.round([gamma_d.v0, gamma_d.u0]).astype(int)
    assert abs(img.data[v, u] - 1.9) < 1e-9
    assert img.labels[v, u] == 0


def test_noiseless_frame_equals_render(model, gamma_d, front_pose, zero_q):
    a = simulate_sensor_frame(model, front_pose, zero_q, gamma_d, SensorNoiseModel.noiseless())
    b = render_model(model, front_pose, zero_q, gamma_d)
    assert np.array_equal(a.data, b.data)


def test_noise_is_seed_deterministic(model, gamma_d, front_pose, zero_q):
    noise = SensorNoiseModel(sigma_depth=0.003, seed=42)
    a = simulate_sensor_frame(model, front_pose, zero_q, gamma_d, noise)
    b = simulate_sensor_frame(model, front_pose, zero_q, gamma_d, noise)
    assert a.data.tobytes() == b.data.tobytes()
    c = simulate_sensor_frame(model, front_pose, zero_q, gamma_d, SensorNoiseModel(sigma_depth=0.003, seed=43))
    assert not np.array_equal(a.data, c.data)


def test_dropout_rate_matches_binomial_expectation(model, gamma_d, zero_q):
    near = pose_from_mm([0, 0, 1000, 0, 0, 0])
    clean = render_model(model, near, zero_q, gamma_d)
    noisy = simulate_sensor_frame(model, near, zero_q, gamma_d, SensorNoiseModel(0.0, 0.0, 0.1, seed=3))
    footprint = clean.valid
    frac = 1.0 - np.count_nonzero(noisy.valid & footprint) / np.count_nonzero(footprint)
    assert abs(frac - 0.1) < 0.01


def test_clip_depth_range():
    data = np.full((10, 10), 4.0)
    data[3:7, 3:7] = 2.0
    img = DepthImage(data)
    assert np.array_equal(clip_depth_range(img, 3.0, 5.0).data, data)
    out = clip_depth_range(img, 2.0, 0.5).data
    assert np.all(out[3:7, 3:7] == 2.0)
    assert np.count_nonzero(out) == 16
    assert not clip_depth_range(img, 10.0, 0.5).valid.any()


def test_pfm_round_trip_is_float32_exact(tmp_path, model, gamma_d, front_pose, zero_q):
    img = simulate_sensor_frame(model, front_pose, zero_q, gamma_d, SensorNoiseModel(0.002, 0.0, 0.0, 1))
    write_pfm(tmp_path / "f.pfm", img)
    back = read_pfm(tmp_path / "f.pfm")
    assert np.array_equal(back.data, img.data.astype(np.float32).astype(float))
    raw = (tmp_path / "f.pfm").read_bytes()
    assert raw.startswith(b"Pf\n512 424\n-1.0\n")


def test_pgm16_round_trip_is_millimeter_exact(tmp_path, model, gamma_d, front_pose, zero_q):
    img = simulate_sensor_frame(model, front_pose, zero_q, gamma_d, SensorNoiseModel(0.002, 0.001, 0.0, 1))
    write_pgm16(tmp_path / "f.pgm", img)
    back = read_pgm16(tmp_path / "f.pgm")
    assert np.abs(back.data - img.data).max() < 1e-9


def test_noise_model_validation():
    with pytest.raises(ValueError):
        SensorNoiseModel(sigma_depth=-1.0)
    with pytest.raises(ValueError):
        SensorNoiseModel(dropout_rate=1.0)
