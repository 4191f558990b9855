from dataclasses import replace

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from puppetmap import calibration as cal
from puppetmap.errors import AmbiguousBlock, ConfigError, DegenerateGeometry, Infeasible, NonPositiveDepth
from puppetmap.geometry import CameraIntrinsics, back_project, pose_from_mm, pose_to_mm


def window_oracle(colors):
    """All 3x3 windows as rows of a 2D array, by stride tricks instead of loops."""
    return sliding_window_view(np.asarray(colors), (3, 3)).reshape(-1, 9)


@pytest.fixture(scope="module")
def truth():
    return cal.reference_setup().projector


def test_single_block_pattern():
    p = cal.generate_pattern(3, 3)
    assert len(window_oracle(p.colors)) == 1 and len(p.windows()) == 1


def test_ten_by_ten_four_colors_all_windows_distinct():
    p = cal.generate_pattern(10, 10, colors=4)
    w = window_oracle(p.colors)
    assert len(w) == 64
    assert len(np.unique(w, axis=0)) == 64
    assert set(np.unique(p.colors)) <= set(range(4))


@pytest.mark.parametrize("seed", range(10))
def test_generated_patterns_pass_oracle(seed):
    rng = np.random.default_rng(seed)
    rows, cols = rng.integers(3, 30, 2)
    p = cal.generate_pattern(int(rows), int(cols), colors=int(rng.integers(3, 5)), seed=seed)
    w = window_oracle(p.colors)
    assert len(np.unique(w, axis=0)) == len(w)


def test_counting_argument_infeasible():
    # 2^9 = 512 < 98 * 98 = 9604 windows
    with pytest.raises(Infeasible):
        cal.generate_pattern(100, 100, colors=2)
    with pytest.raises(Infeasible):
        cal.generate_pattern(2, 5)


def test_dot_centers_fit_in_projector_image():
    p = cal.generate_pattern(10, 10)
    c = p.centers.reshape(-1, 2)
    assert c.min() > 0 and np.all(c.max(axis=0) < cal.PROJECTOR_SIZE)


def test_full_grid_all_matched():
    p = cal.generate_pattern(10, 10, seed=3)
    obs_centers = p.centers * 0.5 + 7.0
    m = cal.match_blocks(p.colors, obs_centers, p)
    assert len(m.pairs) == 100 and not m.ambiguous and m.offset == (0, 0)
    for proj, seen, (i, j), (r, c) in m.pairs:
        assert (i, j) == (r, c)
        assert np.array_equal(proj, p.centers[i, j])


def test_five_by_five_subgrid_matched_by_lookup():
    p = cal.generate_pattern(10, 10, seed=4)
    for r0, c0 in [(0, 0), (2, 3), (5, 5), (4, 1)]:
        sub = p.colors[r0 : r0 + 5, c0 : c0 + 5]
        m = cal.match_blocks(sub, np.zeros((5, 5, 2)), p)
        assert len(m.pairs) == 25 and m.offset == (r0, c0)
        # oracle: every observed window is found at the same offset by a linear scan
        full = window_oracle(p.colors)
        for k, win in enumerate(window_oracle(sub)):
            hits = np.flatnonzero((full == win).all(axis=1))
            assert len(hits) == 1
            i, j = divmod(int(hits[0]), 8)
            assert (i - k // 3, j - k % 3) == (r0, c0)


def test_partially_visible_dots_outside_windows_unmatched():
    p = cal.generate_pattern(10, 10, seed=5)
    obs = p.colors[2:8, 2:8].copy()
    obs[0, :] = -1  # top row undetected
    obs[1:, 0] = -1  # left column undetected
    obs[5, 5] = -1  # a corner dot lost: its only window is incomplete
    m = cal.match_blocks(obs, np.zeros((6, 6, 2)), p)
    matched = {rc for *_, rc in m.pairs}
    assert (5, 5) not in matched and (0, 3) not in matched
    assert len(matched) == 24


def test_corrupted_color_localized():
    p = cal.generate_pattern(10, 10, seed=6)
    obs = p.colors.copy()
    obs[5, 5] = (obs[5, 5] + 1) % 4
    m = cal.match_blocks(obs, np.zeros((10, 10, 2)), p)
    # exactly the windows containing (5, 5) are flagged
    expected = {(r, c) for r in range(3, 6) for c in range(3, 6)}
    assert set(m.ambiguous) == expected
    assert m.offset == (0, 0)
    # the corrupted dot itself is in no agreeing window; every other dot still is
    matched = {rc for *_, rc in m.pairs}
    assert (5, 5) not in matched and len(matched) == 99
    with pytest.raises(AmbiguousBlock):
        cal.match_blocks(obs, np.zeros((10, 10, 2)), p, strict=True)


def test_lift_mirrors_back_project():
    g = cal.COLOR_INTRINSICS
    matches = [(np.array([10.0, 20.0]), np.array([g.u0, g.v0])), (np.array([1.0, 2.0]), np.array([g.u0 + g.alpha_u, g.v0]))]
    ob = cal.lift_correspondences(matches, [2.0, 1.0], g)
    assert np.allclose(ob.points, [[0, 0, 2.0], [1.0, 0, 1.0]], atol=1e-12)
    assert np.array_equal(ob.points, back_project(g, [[g.u0, g.v0], [g.u0 + g.alpha_u, g.v0]], [2.0, 1.0]))
    with pytest.raises(NonPositiveDepth):
        cal.lift_correspondences(matches, [2.0, 0.0], g)


def test_noise_free_recovery(truth):
    obs = cal.synthetic_observations(truth, cal.SYNTHETIC_PLANES)
    assert sum(len(o.points) for o in obs) >= 200
    for init in ("nominal", "dlt"):
        c = cal.calibrate_projector(obs, init=init)
        assert c.residual_mean < 1e-6
        for a, b in zip(c.gamma.as_dict().values(), truth.gamma.as_dict().values()):
            assert abs(a - b) <= 1e-6 * abs(b)
        assert np.abs(np.subtract(pose_to_mm(c.p_M_c)[:3], pose_to_mm(truth.p_M_c)[:3])).max() < 1e-6 * 3000
        assert np.abs(c.p_M_c.rotation - truth.p_M_c.rotation).max() < 1e-9
    # negative v0 survives the solve
    assert c.gamma.v0 < 0


def test_noise_band(truth):
    # 0.5 px is read as 2D rms displacement: per-axis std 0.5/sqrt(2)
    obs = cal.synthetic_observations(truth, cal.SYNTHETIC_PLANES, noise_px=0.5 / np.sqrt(2), seed=1)
    c = cal.calibrate_projector(obs)
    assert 0.4 <= c.residual_mean <= 0.6
    assert abs(c.gamma.alpha_u / truth.gamma.alpha_u - 1.0) < 0.01
    # per-axis std 0.5 gives mean error near 0.5 * sqrt(pi/2)
    obs = cal.synthetic_observations(truth, cal.SYNTHETIC_PLANES, noise_px=0.5, seed=1)
    c = cal.calibrate_projector(obs)
    assert abs(c.residual_mean - 0.5 * np.sqrt(np.pi / 2)) < 0.08
    assert abs(c.gamma.alpha_u / truth.gamma.alpha_u - 1.0) < 0.01


@pytest.mark.parametrize("scale", [0.6, 0.8, 1.25, 1.6])
def test_nominal_init_sensitivity(truth, scale):
    g = truth.gamma
    other = replace(truth, gamma=CameraIntrinsics(g.alpha_u * scale, g.alpha_v * scale, g.u0 + 60, g.v0 + 90))
    obs = cal.synthetic_observations(other, cal.SYNTHETIC_PLANES)
    c = cal.calibrate_projector(obs, init="nominal")
    assert c.residual_mean < 1e-6
    assert abs(c.gamma.alpha_u - other.gamma.alpha_u) < 1e-6 * other.gamma.alpha_u


def test_degenerate_geometry(truth):
    obs = cal.synthetic_observations(truth, cal.SYNTHETIC_PLANES)
    with pytest.raises(DegenerateGeometry):
        cal.calibrate_projector(obs[:1])
    parallel = cal.synthetic_observations(truth, [((0, 0, 2.0), (0, 0, -1)), ((0, 0, 2.5), (0, 0, -1)), ((0, 0, 3.0), (0, 0, -1))])
    with pytest.raises(DegenerateGeometry):
        cal.calibrate_projector(parallel)
    with pytest.raises(DegenerateGeometry):
        cal.calibrate_projector([cal.CalibObservation(np.zeros((4, 2)), np.ones((4, 3)))])
    with pytest.raises(ValueError):
        cal.calibrate_projector(obs, init="magic")


def test_reference_values_load_without_solving():
    s = cal.reference_setup()
    g = s.projector.gamma
    assert (g.alpha_u, g.v0) == (2145.99, -47.94)
    assert np.allclose(pose_to_mm(s.projector.p_M_c)[:3], [80.19, 1456.58, 2612.01])
    assert s.color_residual == (1.50, 0.88)


def test_setup_file_round_trip(tmp_path, truth):
    obs = cal.synthetic_observations(truth, cal.SYNTHETIC_PLANES, noise_px=0.3)
    setup = replace(cal.reference_setup(), projector=cal.calibrate_projector(obs))
    cal.save_setup(setup, tmp_path / "rig.yaml")
    back = cal.load_setup(tmp_path / "rig.yaml")
    assert back.projector.gamma == setup.projector.gamma
    assert back.c_M_d.allclose(setup.c_M_d, atol=1e-9)
    assert back.projector.p_M_c.allclose(setup.projector.p_M_c, atol=1e-9)
    assert abs(back.projector.residual_mean - setup.projector.residual_mean) < 1e-6
    text = (tmp_path / "rig.yaml").read_text()
    assert "p_M_c" in text and "residual_px" in text


def test_bad_setup_files(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("depth_camera: {}\n")
    with pytest.raises(ConfigError):
        cal.load_setup(bad)
    with pytest.raises(ConfigError):
        cal.load_setup(tmp_path / "missing.yaml")


def test_observation_csv_round_trip(tmp_path, truth):
    obs = cal.synthetic_observations(truth, cal.SYNTHETIC_PLANES, noise_px=0.2)
    cal.write_observations_csv(tmp_path / "o.csv", obs)
    back = cal.read_observations_csv(tmp_path / "o.csv")
    assert [o.plane_id for o in back] == [0, 1, 2]
    for a, b in zip(obs, back):
        assert np.array_equal(a.points, b.points) and np.array_equal(a.projector_pixels, b.projector_pixels)
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        cal.read_observations_csv(tmp_path / "x.csv")


def test_config_translation_is_mm():
    M = pose_from_mm(cal.P_M_C_MM)
    assert np.allclose(M.translation, [0.08019, 1.45658, 2.61201])
