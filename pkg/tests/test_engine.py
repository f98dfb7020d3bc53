"""Grid, driver simulation, and path-transform behavior."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enlargemc.engine import (
    PATH_BLOCK,
    DriverSpec,
    JumpDriver,
    MartingaleSeries,
    PathBundle,
    TimeGrid,
    doleans_exponential,
    levy_transform,
    make_grid,
    simulate_drivers,
    stochastic_integral,
)


# ---------------------------------------------------------------- grid


def test_make_grid_points_and_dt():
    grid = make_grid(2.0, 8)
    assert len(grid) == 9
    assert grid.dt == 0.25
    assert grid.points[0] == 0.0
    assert grid.points[-1] == 2.0
    assert np.allclose(np.diff(grid.points), 0.25)


@pytest.mark.parametrize("horizon", [0.0, -1.0, float("inf"), float("nan")])
def test_make_grid_rejects_bad_horizon(horizon):
    with pytest.raises(ValueError):
        make_grid(horizon, 10)


@pytest.mark.parametrize("n_steps", [0, -3, 2.5])
def test_make_grid_rejects_bad_steps(n_steps):
    with pytest.raises(ValueError):
        make_grid(1.0, n_steps)


@given(st.floats(min_value=0.1, max_value=50.0, allow_nan=False),
       st.integers(min_value=1, max_value=500))
@settings(max_examples=50, deadline=None)
def test_index_of_inverts_points(horizon, n_steps):
    grid = make_grid(horizon, n_steps)
    for i in (0, n_steps // 2, n_steps):
        assert grid.index_of(float(grid.points[i])) == i


def test_index_of_rejects_off_grid():
    grid = make_grid(1.0, 10)
    with pytest.raises(ValueError):
        grid.index_of(0.1234)
    with pytest.raises(ValueError):
        grid.index_of(1.1)


# ---------------------------------------------------------------- series


def test_series_shape_validation():
    grid = make_grid(1.0, 4)
    with pytest.raises(ValueError):
        MartingaleSeries(grid=grid, values=np.zeros((3, 4)), name="bad")
    with pytest.raises(ValueError):
        MartingaleSeries(grid=grid, values=np.zeros(5), name="bad")


def test_series_explicit_increments_validated_and_used():
    grid = make_grid(1.0, 3)
    vals = np.array([[0.0, 1.0, 1.0, 2.0]])
    with pytest.raises(ValueError):
        MartingaleSeries(grid=grid, values=vals, d_values=np.zeros((1, 4)))
    d = np.array([[1.0, 0.0, 1.0]])
    s = MartingaleSeries(grid=grid, values=vals, d_values=d)
    assert s.increments() is d          # carried verbatim, not re-diffed
    s2 = MartingaleSeries(grid=grid, values=vals)
    np.testing.assert_array_equal(s2.increments(), d)


def test_series_values_frozen():
    grid = make_grid(1.0, 2)
    s = MartingaleSeries(grid=grid, values=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        s.values[0, 0] = 1.0


# ---------------------------------------------------------------- drivers


def test_driver_spec_validation():
    with pytest.raises(ValueError):
        DriverSpec(brownian=("W", "W")).validate()
    with pytest.raises(ValueError):
        DriverSpec().validate()
    with pytest.raises(ValueError):
        DriverSpec(jumps=(JumpDriver("N", rate=-1.0, mark=1.0),)).validate()


def test_simulation_is_deterministic():
    grid = make_grid(1.0, 20)
    spec = DriverSpec(brownian=("W",), jumps=(JumpDriver("N", 0.7, 1.0),))
    a = simulate_drivers(grid, 300, spec, seed=5)
    b = simulate_drivers(grid, 300, spec, seed=5)
    for name in spec.names():
        np.testing.assert_array_equal(a.component(name), b.component(name))
    c = simulate_drivers(grid, 300, spec, seed=6)
    assert not np.array_equal(a.component("W"), c.component("W"))


def test_path_range_slices_match_monolithic():
    """Streaming a sub-range of paths reproduces the monolithic rows bitwise,
    including across the internal RNG block boundary."""
    grid = make_grid(1.0, 3)
    spec = DriverSpec(brownian=("W",), jumps=(JumpDriver("N", 1.0, 1.0),))
    n = PATH_BLOCK + 50
    full = simulate_drivers(grid, n, spec, seed=9)
    for lo, hi in [(0, 7), (PATH_BLOCK - 3, PATH_BLOCK + 4), (n - 5, n)]:
        part = simulate_drivers(grid, hi - lo, spec, seed=9, path_range=(lo, hi))
        for name in spec.names():
            np.testing.assert_array_equal(part.component(name),
                                          full.component(name)[lo:hi])


def test_brownian_moments():
    grid = make_grid(2.0, 40)
    bundle = simulate_drivers(grid, 20000, DriverSpec(brownian=("W",)), seed=3)
    w = bundle.component("W")
    assert w[:, 0].max() == 0.0
    incr = np.diff(w, axis=1)
    # per-step variance dt, mean 0 (5 standard errors at this sample size)
    assert abs(incr.mean()) < 5 * np.sqrt(grid.dt / incr.size)
    assert abs(incr.var() - grid.dt) < 5 * np.sqrt(2 * grid.dt**2 / incr.size)


def test_jump_counts_match_rate():
    grid = make_grid(2.0, 50)
    bundle = simulate_drivers(
        grid, 20000, DriverSpec(jumps=(JumpDriver("N", rate=1.5, mark=1.0),)), seed=3)
    n = bundle.component("N")
    assert np.all(np.diff(n, axis=1) >= 0)
    term = n[:, -1]
    lam = 1.5 * 2.0
    assert abs(term.mean() - lam) < 5 * np.sqrt(lam / len(term))


def test_bundle_component_access_and_immutability():
    grid = make_grid(1.0, 5)
    bundle = simulate_drivers(grid, 10, DriverSpec(brownian=("W",)), seed=1)
    with pytest.raises(KeyError):
        bundle.component("missing")
    with pytest.raises(ValueError):
        bundle.component("W")[0, 0] = 9.9
    with pytest.raises(ValueError):
        bundle.with_component("W", np.zeros((10, 6)))


# ---------------------------------------------------------------- transforms


def test_levy_transform_sign_convention():
    """dB = sgn(W at the left endpoint) dW with sgn(0) = -1."""
    grid = make_grid(4.0, 4)
    w = np.array([[0.0, 1.0, -1.0, -2.0, 1.0]])
    bundle = PathBundle(grid=grid, n_paths=1, seed=0, components={"W": w})
    b = levy_transform(bundle, "W").component("B")
    # steps: sgn(0)*1 = -1; sgn(1)*(-2) = -2; sgn(-1)*(-1) = 1; sgn(-2)*3 = -3
    np.testing.assert_array_equal(b, [[0.0, -1.0, -3.0, -2.0, -5.0]])


def test_levy_transform_is_brownian_in_law(small_bundle):
    b = levy_transform(small_bundle, "W").component("B")
    incr = np.diff(b, axis=1)
    dt = small_bundle.grid.dt
    assert abs(incr.mean()) < 5 * np.sqrt(dt / incr.size)
    assert abs(incr.var() - dt) < 5 * np.sqrt(2 * dt**2 / incr.size)


def test_stochastic_integral_left_point():
    grid = make_grid(3.0, 3)
    m = MartingaleSeries(grid=grid, values=np.array([[0.0, 1.0, 3.0, 2.0]]), name="M")
    phi = np.array([[2.0, -1.0, 10.0, 99.0]])   # value at t=3 must never enter
    out = stochastic_integral(phi, m)
    np.testing.assert_array_equal(out.values, [[0.0, 2.0, 0.0, 10.0]])
    with pytest.raises(ValueError):
        stochastic_integral(np.zeros((1, 3)), m)


def test_doleans_exponential_is_exact_discrete_martingale(small_bundle):
    """E[S_t+dt | F_t] = S_t holds exactly for Gaussian steps: the one-step
    ratio exp(vol dB - vol^2 dt/2) has unit conditional mean by the Gaussian
    moment-generating function, so the cross-path mean of the ratio minus one
    is pure sampling noise at every step."""
    s = doleans_exponential(small_bundle.series("W"), vol=0.5).values
    ratios = s[:, 1:] / s[:, :-1]
    dt = small_bundle.grid.dt
    exact_var = np.exp(0.25 * dt) - 1.0    # Var of the one-step ratio
    z = (ratios.mean(axis=0) - 1.0) / np.sqrt(exact_var / ratios.shape[0])
    assert np.abs(z).max() < 5.0


def test_doleans_formula_values():
    grid = make_grid(2.0, 2)
    b = MartingaleSeries(grid=grid, values=np.array([[0.0, 1.0, -1.0]]), name="B")
    s = doleans_exponential(b, vol=2.0).values
    np.testing.assert_allclose(
        s, [[1.0, np.exp(2.0 - 2.0), np.exp(-2.0 - 4.0)]], rtol=1e-15)
