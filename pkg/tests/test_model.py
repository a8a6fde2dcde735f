import numpy as np
import pytest

from qmri_adl.model import (
    ModelDomainError,
    ParameterMaps,
    TimeGrid,
    fit_objective_grad,
    m0_star,
    r1_star,
    signal,
)

TR = 0.0073

# independently computed with 30-digit arithmetic before implementation
R1STAR_5DEG = 1.5222685602019264  # R1=1, a=5 deg, TR=7.3 ms
Q_HALF_SECOND = -0.11709044922191911  # M0=1, R1=1, a=5 deg, TR=7.3 ms, t=0.5 s
M0STAR_5DEG = 0.6569143094352232


def maps_of(r1, m0, flip, shape=(1, 1)):
    return ParameterMaps(
        np.full(shape, r1), np.full(shape, m0), np.full(shape, flip)
    )


def test_r1_star_zero_flip_limit():
    p = maps_of(1.0, 1.0, 1e-12)
    assert r1_star(p, TR) == pytest.approx(1.0, abs=1e-9)


def test_r1_star_five_degrees():
    p = maps_of(1.0, 1.0, 5.0)
    assert r1_star(p, TR)[0, 0] == pytest.approx(R1STAR_5DEG, rel=1e-12)


def test_r1_star_additive_in_r1():
    base = r1_star(maps_of(0.0, 1.0, 5.0), TR)[0, 0]
    assert base > 0
    assert r1_star(maps_of(1.0, 1.0, 5.0), TR)[0, 0] == pytest.approx(1.0 + base)
    # strictly increasing in R1 at fixed flip
    assert r1_star(maps_of(2.0, 1.0, 5.0), TR)[0, 0] > r1_star(
        maps_of(1.0, 1.0, 5.0), TR
    )[0, 0]


def test_r1_star_uses_degrees():
    # cos must act on radians-converted values: cos(60 deg) = 0.5 exactly
    p = maps_of(0.0, 1.0, 60.0)
    expected = -np.log(0.5) / TR
    assert r1_star(p, TR)[0, 0] == pytest.approx(expected, rel=1e-12)


def test_r1_star_rejects_nonfinite():
    p = ParameterMaps(np.array([[np.nan]]), np.ones((1, 1)), np.full((1, 1), 5.0))
    with pytest.raises(ModelDomainError):
        r1_star(p, TR)


def test_m0_star_cases():
    one = np.ones((1, 1))
    assert m0_star(maps_of(1.0, 1.0, 5.0), one)[0, 0] == 1.0
    assert m0_star(maps_of(1.0, 1.0, 5.0), 2 * one)[0, 0] == 0.5
    assert m0_star(maps_of(3.0, 0.0, 5.0), 2 * one)[0, 0] == 0.0
    with pytest.raises(ModelDomainError):
        m0_star(maps_of(1.0, 1.0, 5.0), np.zeros((1, 1)))


def test_signal_limits_and_value():
    p = maps_of(1.0, 1.0, 5.0)
    grid_late = TimeGrid(times=np.array([200.0]), tr=TR)
    late = signal(p, grid_late)[0, 0, 0]
    assert late.real == pytest.approx(M0STAR_5DEG, rel=1e-10)
    assert late.imag == 0.0

    grid_early = TimeGrid(times=np.array([1e-12]), tr=TR)
    assert signal(p, grid_early)[0, 0, 0].real == pytest.approx(-1.0, abs=1e-9)

    grid = TimeGrid(times=np.array([0.5]), tr=TR)
    assert signal(p, grid)[0, 0, 0].real == pytest.approx(Q_HALF_SECOND, rel=1e-12)


def test_signal_monotone_in_time():
    p = maps_of(0.8, 1.2, 6.0, shape=(2, 2))
    grid = TimeGrid(times=np.linspace(0.05, 3.0, 40), tr=TR)
    curve = signal(p, grid)[:, 0, 0].real
    assert np.all(np.diff(curve) > 0)


def test_time_grid_bin_centers():
    grid = TimeGrid.bin_centers(5, 12, TR)
    assert grid.times[0] == pytest.approx(0.5 * 12 * TR)
    assert grid.times[-1] == pytest.approx(4.5 * 12 * TR)
    assert grid.n_times == 5


def test_fit_objective_minimum_and_quadratic_branch():
    rng = np.random.default_rng(3)
    shape = (4, 4)
    p = ParameterMaps(
        rng.uniform(0.4, 2.0, shape), rng.uniform(0.3, 1.5, shape),
        rng.uniform(2.0, 8.0, shape),
    )
    grid = TimeGrid.bin_centers(8, 12, TR)
    x = signal(p, grid)
    u = ParameterMaps(p.r1.copy(), p.m0.copy(), p.flip.copy())
    val, g = fit_objective_grad(p, x, u, beta=1.0, eta=1.0, grid=grid)
    assert val == pytest.approx(0.0, abs=1e-24)
    for arr in (g.r1, g.m0, g.flip):
        assert np.max(np.abs(arr)) < 1e-12

    # beta = 0 reduces to the quadratic coupling
    u2 = ParameterMaps(p.r1 + 1.0, p.m0, p.flip)
    val2, g2 = fit_objective_grad(p, x, u2, beta=0.0, eta=2.0, grid=grid)
    assert val2 == pytest.approx(0.5 * 2.0 * p.r1.size)
    assert np.allclose(g2.r1, 2.0 * (p.r1 - u2.r1))
    assert np.allclose(g2.m0, 0.0)


def test_fit_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    n = 100
    shape = (n, 1)
    p = ParameterMaps(
        rng.uniform(0.3, 3.0, shape), rng.uniform(0.2, 2.0, shape),
        rng.uniform(1.0, 10.0, shape),
    )
    grid = TimeGrid.bin_centers(12, 12, TR)
    x = signal(
        ParameterMaps(
            p.r1 * rng.uniform(0.8, 1.2, shape),
            p.m0 * rng.uniform(0.8, 1.2, shape),
            p.flip * rng.uniform(0.9, 1.1, shape),
        ),
        grid,
    )
    u = ParameterMaps(
        p.r1 + rng.normal(0, 0.1, shape), p.m0 + rng.normal(0, 0.1, shape),
        p.flip + rng.normal(0, 0.5, shape),
    )
    scales = (5.0, 1.0, 10.0)
    u_norm = ParameterMaps(u.r1 / scales[0], u.m0 / scales[1], u.flip / scales[2])

    def value_at(p_arrs):
        pm = ParameterMaps(*p_arrs)
        return fit_objective_grad(pm, x, u_norm, 1.0, 0.7, grid, scales=scales)[0]

    _, g = fit_objective_grad(p, x, u_norm, 1.0, 0.7, grid, scales=scales)
    h = 1e-5
    for field, gfield in (("r1", g.r1), ("m0", g.m0), ("flip", g.flip)):
        idx = (rng.integers(0, n), 0)
        arrs = {"r1": p.r1.copy(), "m0": p.m0.copy(), "flip": p.flip.copy()}
        scale = dict(zip(("r1", "m0", "flip"), scales))[field]
        arrs[field][idx] += h * scale  # step in normalized units
        f_plus = value_at((arrs["r1"], arrs["m0"], arrs["flip"]))
        arrs[field][idx] -= 2 * h * scale
        f_minus = value_at((arrs["r1"], arrs["m0"], arrs["flip"]))
        fd = (f_plus - f_minus) / (2 * h)
        rel = abs(gfield[idx] - fd) / (abs(fd) + 1e-12)
        assert rel < 1e-4, f"{field} gradient mismatch: {gfield[idx]} vs {fd}"


def test_shape_mismatch_raises():
    with pytest.raises(ModelDomainError):
        ParameterMaps(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))
    p = maps_of(1.0, 1.0, 5.0, shape=(2, 2))
    grid = TimeGrid(times=np.array([0.1, 0.2]), tr=TR)
    with pytest.raises(ModelDomainError):
        fit_objective_grad(p, np.zeros((3, 2, 2), dtype=complex), None, 1.0, 0.0, grid)


def test_validate_rejects_out_of_range():
    with pytest.raises(ModelDomainError):
        maps_of(-0.1, 1.0, 5.0).validate()
    with pytest.raises(ModelDomainError):
        maps_of(1.0, 1.0, 90.0).validate()
    maps_of(1.0, 1.0, 5.0).validate()
