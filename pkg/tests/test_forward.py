"""Kernel construction, convolution semantics, calibration arithmetic, and
Poisson sampling statistics."""

import numpy as np
import pytest

from splidar.forward import (
    HistogramCube,
    Kernel,
    ScanConfig,
    calibrate_flux,
    coarsen,
    convolve3d,
    convolve3d_adjoint,
    convolve_separable,
    correlate_separable,
    load_cube,
    make_kernel,
    rayleigh_resolution,
    save_cube,
    sbr_window_bins,
    simulate,
)
from splidar.scene import Scene, make_resolution_chart


def brute_force_conv3d(spatial, temporal, x):
    """Direct triple-loop zero-padded 'same' convolution (test oracle)."""
    A, B, C = spatial.shape[0] // 2, spatial.shape[1] // 2, temporal.size // 2
    H, W, T = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(H):
        for j in range(W):
            for k in range(T):
                acc = 0.0
                for a in range(-A, A + 1):
                    for b in range(-B, B + 1):
                        for c in range(-C, C + 1):
                            ii, jj, kk = i - a, j - b, k - c
                            if 0 <= ii < H and 0 <= jj < W and 0 <= kk < T:
                                acc += (
                                    spatial[a + A, b + B]
                                    * temporal[c + C]
                                    * x[ii, jj, kk]
                                )
                out[i, j, k] = acc
    return out


# --- rayleigh -----------------------------------------------------------


def test_rayleigh_reference_values():
    angle = rayleigh_resolution(1550e-9, 0.279)
    assert angle == pytest.approx(1.355e-5, rel=1e-3)
    assert abs(angle * 1e6 - 13.5) < 0.1  # microradians
    assert abs(angle * 8200 * 100 - 11.1) < 0.1  # centimeters at 8.2 km


def test_rayleigh_unit_ratio_and_errors():
    lam = 2e-6
    assert rayleigh_resolution(lam, 2.44 * lam) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rayleigh_resolution(0, 1)
    with pytest.raises(ValueError):
        rayleigh_resolution(1e-6, -1)


# --- kernel -------------------------------------------------------------


def test_kernel_sizes_follow_n():
    assert make_kernel(ScanConfig(n=1)).spatial.shape == (3, 3)
    assert make_kernel(ScanConfig(n=4)).spatial.shape == (9, 9)


def test_kernel_normalization_and_symmetry():
    k = make_kernel(ScanConfig(n=4))
    assert abs(k.spatial.sum() - 1.0) < 1e-12
    assert abs(k.temporal.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(k.spatial, k.spatial[::-1, ::-1])
    np.testing.assert_allclose(k.temporal, k.temporal[::-1])


def test_temporal_fwhm_measured_on_samples():
    # jitter 1 ns over 100 ps bins -> FWHM near 10 bins on the sampled curve
    k = make_kernel(
        ScanConfig(n=1, jitter_fwhm=1e-9, bin_width=1e-10, sbr_window=20e-9)
    )
    g = k.temporal
    half = g.max() / 2
    above = np.flatnonzero(g >= half)
    # linear interpolation of the half-max crossings on either side
    i0, i1 = above[0], above[-1]
    left = i0 - 1 + (half - g[i0 - 1]) / (g[i0] - g[i0 - 1])
    right = i1 + (g[i1] - half) / (g[i1] - g[i1 + 1])
    fwhm = right - left
    assert abs(fwhm - 10.0) < 0.5


def test_kernel_type_invariants():
    with pytest.raises(ValueError):
        Kernel(spatial=np.ones((3, 3)) / 9, temporal=np.ones(2) / 2, n=1)
    with pytest.raises(ValueError):
        Kernel(spatial=np.ones((4, 4)) / 16, temporal=np.ones(1), n=1)
    asym = np.ones(3) / 3
    bad = asym.copy()
    bad[0] = 0.5
    bad /= bad.sum()
    with pytest.raises(ValueError):
        Kernel(spatial=np.ones((3, 3)) / 9, temporal=bad, n=1)


def test_zero_jitter_gives_temporal_delta():
    k = make_kernel(ScanConfig(n=1, jitter_fwhm=0.0))
    np.testing.assert_array_equal(k.temporal, [1.0])


# --- convolution --------------------------------------------------------


def delta_kernel():
    return Kernel(spatial=np.ones((1, 1)), temporal=np.ones(1), n=0)


def test_delta_kernel_is_identity():
    rng = np.random.default_rng(0)
    x = rng.random((5, 6, 7))
    np.testing.assert_allclose(convolve3d(delta_kernel(), x, 0.0), x)


def test_zero_volume_gives_constant_background():
    out = convolve3d(make_kernel(ScanConfig(n=2)), np.zeros((7, 7, 9)), 0.25)
    np.testing.assert_allclose(out, 0.25)


def test_unit_voxel_reproduces_kernel_oracle():
    cfg = ScanConfig(n=4, jitter_fwhm=1e-9, bin_width=0.5e-9, n_bins=31,
                     sbr_window=15e-9)
    k = make_kernel(cfg)
    x = np.zeros((9, 9, 31))
    x[4, 4, 15] = 1.0
    out = convolve3d(k, x, 0.0)
    oracle = brute_force_conv3d(k.spatial, k.temporal, x)
    np.testing.assert_allclose(out, oracle, atol=1e-14)
    # center neighborhood equals the outer-product kernel itself
    r = k.temporal.size // 2
    np.testing.assert_allclose(
        out[0:9, 0:9, 15 - r : 15 + r + 1],
        k.spatial[:, :, None] * k.temporal[None, None, :],
        atol=1e-14,
    )


def test_convolution_matches_brute_force_on_random_asymmetric_kernels():
    rng = np.random.default_rng(1)
    for _ in range(5):
        spatial = rng.random((3, 3))
        temporal = rng.random(3)
        x = rng.random((6, 5, 7))
        np.testing.assert_allclose(
            convolve_separable(spatial, temporal, x),
            brute_force_conv3d(spatial, temporal, x),
            atol=1e-12,
        )


def test_convolution_linearity():
    rng = np.random.default_rng(2)
    k = make_kernel(ScanConfig(n=2))
    x, y = rng.random((8, 8, 12)), rng.random((8, 8, 12))
    lhs = convolve3d(k, 2.0 * x + 3.0 * y, 0.0)
    rhs = 2.0 * convolve3d(k, x, 0.0) + 3.0 * convolve3d(k, y, 0.0)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10)


def test_mass_conservation_interior_signal():
    k = make_kernel(ScanConfig(n=2))
    x = np.zeros((13, 13, 17))
    rng = np.random.default_rng(3)
    x[4:9, 4:9, 6:11] = rng.random((5, 5, 5))
    out = convolve3d(k, x, 0.0)
    assert abs(out.sum() - x.sum()) <= 1e-10 * x.sum()


def test_adjoint_identity_symmetric_and_asymmetric():
    rng = np.random.default_rng(4)
    k = make_kernel(ScanConfig(n=2))
    u, v = rng.random((8, 7, 9)), rng.random((8, 7, 9))
    lhs = np.vdot(convolve3d(k, u, 0.0), v)
    rhs = np.vdot(u, convolve3d_adjoint(k, v))
    assert abs(lhs - rhs) <= 1e-8 * abs(lhs)
    spatial, temporal = rng.random((5, 3)), rng.random(3)
    lhs = np.vdot(convolve_separable(spatial, temporal, u), v)
    rhs = np.vdot(u, correlate_separable(spatial, temporal, v))
    assert abs(lhs - rhs) <= 1e-8 * abs(lhs)


def test_kernel_larger_than_volume_errors():
    k = make_kernel(ScanConfig(n=4))
    with pytest.raises(ValueError):
        convolve3d(k, np.zeros((5, 5, 4)), 0.0)


# --- calibration --------------------------------------------------------


def test_calibrate_uniform_flux_arithmetic():
    cfg = ScanConfig(n=1, bin_width=0.8e-9, n_bins=128)
    flux = np.zeros((4, 4, 128))
    flux[:, :, 10:20] = 1.0  # sums to 10 per pixel
    alpha, b = calibrate_flux(flux, ppp=5.0, sbr=1.0, config=cfg)
    assert alpha == pytest.approx(0.5)


def test_calibrate_background_reference_value():
    cfg = ScanConfig(n=1, bin_width=0.8e-9, n_bins=128, sbr_window=100e-9)
    assert sbr_window_bins(cfg) == 125
    flux = np.ones((2, 2, 128))
    _, b = calibrate_flux(flux, ppp=1.0, sbr=0.2, config=cfg)
    assert b == pytest.approx(0.04)


def test_calibrate_errors_and_limits():
    cfg = ScanConfig()
    with pytest.raises(ValueError):
        calibrate_flux(np.zeros((2, 2, 4)), 1.0, 0.2, cfg)
    with pytest.raises(ValueError):
        calibrate_flux(np.ones((2, 2, 4)), -1.0, 0.2, cfg)
    _, b = calibrate_flux(np.ones((2, 2, cfg.n_bins)), 1.0, float("inf"), cfg)
    assert b == 0.0


# --- scan config --------------------------------------------------------


def test_scan_config_invariants():
    with pytest.raises(ValueError):
        ScanConfig(n=0)
    with pytest.raises(ValueError):
        ScanConfig(n_bins=4096, bin_width=1e-8, rep_period=1e-5)
    with pytest.raises(ValueError):
        ScanConfig(sbr_window=1.0)
    assert ScanConfig(n=3).fov_fwhm_pixels == 6


# --- simulation ---------------------------------------------------------


def small_scene(h=8, w=8, depth=3.0):
    return Scene(
        reflectivity=np.full((h, w), 0.5), depth=np.full((h, w), depth)
    )


def small_config(**kw):
    base = dict(n=2, jitter_fwhm=1e-9, bin_width=1.6e-9, n_bins=64)
    base.update(kw)
    return ScanConfig(**base)


def test_simulate_deterministic_per_seed():
    scene, cfg = small_scene(), small_config()
    a = simulate(scene, cfg, 5.0, 0.5, seed=42)
    b = simulate(scene, cfg, 5.0, 0.5, seed=42)
    c = simulate(scene, cfg, 5.0, 0.5, seed=43)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert (a.counts != c.counts).any()
    assert a.rng_seed == 42


def test_simulate_zero_scene_with_explicit_background():
    scene = Scene(reflectivity=np.zeros((6, 6)), depth=np.full((6, 6), 1.0))
    cfg = small_config()
    cube = simulate(scene, cfg, 1.0, 0.2, seed=0, background_per_bin=2.0)
    assert cube.background_per_bin == 2.0
    mean_per_bin = cube.counts.mean()
    assert abs(mean_per_bin - 2.0) < 5 * np.sqrt(2.0 / cube.counts.size)
    with pytest.raises(ValueError, match="all-zero"):
        simulate(scene, cfg, 1.0, 0.2, seed=0)


def test_simulate_poisson_moments():
    # mean and variance of per-bin counts both approach the flux
    scene, cfg = small_scene(6, 6), small_config()
    cubes = np.stack(
        [simulate(scene, cfg, 5.0, 1.0, seed=s).counts for s in range(150)]
    )
    mean = cubes.mean(axis=0)
    var = cubes.var(axis=0, ddof=1)
    hot = mean > 0.5  # compare where the flux is appreciable
    rel = np.abs(var[hot] - mean[hot]) / mean[hot]
    # chi-square style: sample variance of Poisson has sd ~ lam*sqrt(2/n)
    assert np.median(rel) < 0.25
    total_mean = cubes.sum(axis=(1, 2, 3)).mean() / 36  # per pixel
    expected = 5.0 + cubes.shape[3] * 5.0 / (1.0 * sbr_window_bins(cfg))
    assert abs(total_mean - expected) < 0.5


def test_coarsen_definition_and_metadata():
    scene, cfg = small_scene(8, 8), small_config(n=2)
    cube = simulate(scene, cfg, 5.0, 0.5, seed=1)
    coarse = coarsen(cube, 4)
    assert coarse.shape == (2, 2, cfg.n_bins)
    np.testing.assert_array_equal(coarse.counts, cube.counts[::4, ::4, :])
    assert coarse.config == cube.config
    np.testing.assert_array_equal(coarsen(cube, 1).counts, cube.counts)
    with pytest.raises(ValueError):
        coarsen(cube, 3)


def test_histogram_cube_validation():
    cfg = small_config()
    with pytest.raises(ValueError):
        HistogramCube(
            counts=np.ones((2, 2, cfg.n_bins)),  # float counts
            config=cfg,
            background_per_bin=0.0,
            rng_seed=0,
        )
    with pytest.raises(ValueError):
        HistogramCube(
            counts=np.ones((2, 2, 5), dtype=np.int64),
            config=cfg,
            background_per_bin=0.0,
            rng_seed=0,
        )


def test_cube_save_load_round_trip(tmp_path):
    scene, cfg = small_scene(), small_config()
    cube = simulate(scene, cfg, 2.0, 0.4, seed=9)
    p = tmp_path / "cube.sph1"
    save_cube(cube, p)
    back = load_cube(p)
    np.testing.assert_array_equal(back.counts, cube.counts)
    assert back.config == cube.config
    assert back.background_per_bin == cube.background_per_bin
    assert back.rng_seed == 9
    assert back.alpha == pytest.approx(cube.alpha)


def test_chart_simulation_shape():
    cube = simulate(
        make_resolution_chart(), small_config(n=4), 10.0, 0.2, seed=0
    )
    assert cube.shape == (120, 128, 64)
