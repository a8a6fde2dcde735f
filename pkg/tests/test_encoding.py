import numpy as np
import pytest

from qmri_adl.encoding import (
    GOLDEN_ANGLE_DEG,
    EncodingError,
    EncodingOperator,
    KSpaceData,
    NormalOperator,
    export_trajectory_csv,
    forward,
    golden_angle_trajectory,
    import_trajectory_csv,
    radial_density_compensation,
    simulate_coil_maps,
)

GA_ORACLE = 111.24611797498107  # 180 * (sqrt(5) - 1) / 2, computed independently


def brute_force_dft(image, coil, kx, ky):
    """Literal double-loop type-2 DFT used as the oracle."""
    nx, ny = image.shape
    px = np.arange(nx) - nx // 2
    py = np.arange(ny) - ny // 2
    out = np.zeros(kx.size, dtype=complex)
    w = coil * image
    for m in range(kx.size):
        phase = np.exp(-2j * np.pi * (kx[m] * px[:, None] + ky[m] * py[None, :]))
        out[m] = np.sum(w * phase)
    return out


def small_setup(nx=16, n_bins=2, lines=3, ns=16, nc=2, seed=0):
    traj = golden_angle_trajectory(n_bins, lines, ns)
    coils = simulate_coil_maps(nx, nx, nc, seed=seed)
    return traj, coils


def test_golden_angle_line_angles():
    traj = golden_angle_trajectory(125, 12, 8)
    assert traj.angles[0, 0] == 0.0
    assert traj.angles[0, 1] == pytest.approx(GA_ORACLE, rel=1e-12)
    # bin 3 holds global lines 36..47
    assert traj.angles[3, 0] == pytest.approx((36 * GOLDEN_ANGLE_DEG) % 180.0)
    assert traj.angles.shape == (125, 12)


def test_golden_angle_quasi_uniform_coverage():
    traj = golden_angle_trajectory(125, 12, 2)
    angles = np.sort(traj.angles.ravel())
    gaps = np.diff(np.concatenate([angles, [angles[0] + 180.0]]))
    assert gaps.max() < 0.5


def test_samples_cover_half_open_interval():
    traj = golden_angle_trajectory(1, 1, 8)
    radii = np.hypot(traj.kx[0], traj.ky[0]) * np.sign(-0.5 + np.arange(8) / 8)
    assert radii.min() == -0.5
    assert radii.max() < 0.5
    assert np.any(radii == 0.0)


def test_density_compensation_ramp():
    traj = golden_angle_trajectory(2, 4, 8)
    w = radial_density_compensation(traj)
    line = w[0, :8]
    assert line.max() == 1.0  # edge sample
    center = np.argmin(np.abs(-0.5 + np.arange(8) / 8))
    assert line[center] == line.min()
    assert line[center] > 0
    # isotropy: every spoke carries identical weights
    assert np.allclose(w[0, :8], w[1, 8:16])


def test_forward_zero_and_delta():
    traj, _ = small_setup()
    coils = np.ones((1, 16, 16), dtype=complex)
    op = EncodingOperator(traj, coils)
    x = np.zeros((2, 16, 16), dtype=complex)
    assert np.all(op.forward(x) == 0)
    x[0, 8, 8] = 1.0  # delta at the image midpoint
    y = op.forward(x)
    assert np.allclose(np.abs(y[0, 0]), 1.0)
    assert np.allclose(y[0, 1], 0.0)


def test_forward_matches_brute_force_dft():
    traj, coils = small_setup()
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 16, 16)) + 1j * rng.standard_normal((2, 16, 16))
    y = EncodingOperator(traj, coils).forward(x)
    for c in range(2):
        for t in range(2):
            oracle = brute_force_dft(x[t], coils[c], traj.kx[t], traj.ky[t])
            rel = np.linalg.norm(y[c, t] - oracle) / np.linalg.norm(oracle)
            assert rel < 1e-10


def test_forward_linearity():
    traj, coils = small_setup()
    op = EncodingOperator(traj, coils)
    rng = np.random.default_rng(6)
    x1, x2 = (rng.standard_normal((2, 16, 16)) + 1j * rng.standard_normal((2, 16, 16))
              for _ in range(2))
    lhs = op.forward(2.0 * x1 - 1.5j * x2)
    rhs = 2.0 * op.forward(x1) - 1.5j * op.forward(x2)
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * np.max(np.abs(rhs))


def test_adjoint_zero_and_inner_product():
    traj, coils = small_setup()
    op = EncodingOperator(traj, coils)
    rng = np.random.default_rng(7)
    assert np.all(op.adjoint(np.zeros((2, 2, 48), dtype=complex)) == 0)
    for _ in range(10):
        x = rng.standard_normal((2, 16, 16)) + 1j * rng.standard_normal((2, 16, 16))
        y = rng.standard_normal((2, 2, 48)) + 1j * rng.standard_normal((2, 2, 48))
        ax = op.forward(x)
        aty = op.adjoint(y)
        lhs = np.vdot(ax, y)
        rhs = np.vdot(x, aty)
        assert abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y)) < 1e-10


def test_adjoint_delta_sample_is_plane_wave():
    traj, coils = small_setup(nc=1)
    op = EncodingOperator(traj, coils)
    y = np.zeros((1, 2, 48), dtype=complex)
    y[0, 0, 5] = 1.0
    img = op.adjoint(y)
    px = np.arange(16) - 8
    wave = np.exp(2j * np.pi * (traj.kx[0, 5] * px[:, None] + traj.ky[0, 5] * px[None, :]))
    assert np.allclose(img[0], np.conj(coils[0]) * wave, atol=1e-12)
    assert np.allclose(img[1], 0.0)


def test_normal_operator_paths_agree():
    traj = golden_angle_trajectory(3, 4, 32)
    coils = simulate_coil_maps(32, 32, 3, seed=1)
    op = EncodingOperator(traj, coils)
    dcw = radial_density_compensation(traj)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((3, 32, 32)) + 1j * rng.standard_normal((3, 32, 32))
    direct = NormalOperator(op, dcw, beta=0.3, method="direct")(x)
    toep = NormalOperator(op, dcw, beta=0.3, method="toeplitz")(x)
    assert np.linalg.norm(direct - toep) / np.linalg.norm(direct) < 1e-8


def test_normal_operator_psd_and_limits():
    traj, coils = small_setup()
    op = EncodingOperator(traj, coils)
    dcw = radial_density_compensation(traj)
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 16, 16)).astype(complex)
    quad = np.vdot(x, NormalOperator(op, dcw, beta=0.0)(x)).real
    assert quad >= 0
    assert np.all(NormalOperator(op, dcw, beta=0.0)(np.zeros_like(x)) == 0)
    # large beta: output approaches beta * x
    big = NormalOperator(op, dcw, beta=1e8)(x)
    assert np.linalg.norm(big - 1e8 * x) / np.linalg.norm(1e8 * x) < 1e-3


def test_kspace_data_validation():
    traj, coils = small_setup()
    with pytest.raises(EncodingError):
        KSpaceData(np.zeros((2, 3, 48), dtype=complex), traj,
                   np.ones((2, 48)))
    with pytest.raises(EncodingError):
        KSpaceData(np.zeros((2, 2, 48), dtype=complex), traj,
                   -np.ones((2, 48)))


def test_coil_maps_rss_is_one():
    coils = simulate_coil_maps(24, 24, 4, seed=3)
    rss = np.sqrt(np.sum(np.abs(coils) ** 2, axis=0))
    assert np.allclose(rss, 1.0, atol=1e-12)


def test_trajectory_csv_round_trip(tmp_path):
    traj = golden_angle_trajectory(2, 3, 8)
    dcw = radial_density_compensation(traj)
    path = tmp_path / "traj.csv"
    export_trajectory_csv(traj, dcw, path)
    traj2, dcw2 = import_trajectory_csv(path)
    assert np.array_equal(traj.kx, traj2.kx)
    assert np.array_equal(traj.ky, traj2.ky)
    assert np.array_equal(dcw, dcw2)
    assert np.allclose(traj.angles, traj2.angles, atol=1e-9)


def test_forward_wrapper_returns_kspace_data():
    traj, coils = small_setup(nc=1)
    x = np.zeros((2, 16, 16), dtype=complex)
    data = forward(x, coils, traj)
    assert isinstance(data, KSpaceData)
    assert data.samples.shape == (1, 2, 48)
    assert data.dcw.shape == (2, 48)
