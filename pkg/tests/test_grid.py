import numpy as np
import pytest
from hypothesis import given, strategies as st

from coagflux.errors import ConfigurationError, DomainError
from coagflux.grid import (GridDensity, build_grid, edge_factor, integrate_between, moment, moment_exponents,
                           read_density_csv, refine, resample, window_average, write_density_csv)
from coagflux.kernels import brownian_kernel, constant_kernel, make_kernel


def test_build_grid_examples():
    g = build_grid(1, 16, 4)
    assert np.allclose(g.edges, [1, 2, 4, 8, 16], rtol=1e-14)
    assert build_grid(1e-4, 1e3, 7).ratio == pytest.approx(10.0)
    with pytest.raises(ConfigurationError):
        build_grid(1, 16, 0)
    with pytest.raises(ConfigurationError):
        build_grid(5, 1, 4)


def test_grid_geometry():
    g = build_grid(1e-3, 1e2, 40)
    assert np.allclose(g.centers, np.sqrt(g.edges[:-1] * g.edges[1:]))
    assert np.sum(g.widths) == pytest.approx(1e2 - 1e-3)
    assert refine(g).n_cells == 80
    assert list(g.locate([1e-3, 0.5, 1e2])) == [0, int(np.log(0.5 / 1e-3) / np.log(g.ratio)), 39]


def test_moment_examples():
    one = GridDensity(build_grid(1, 2, 1), [1.0])
    assert moment(one, 0) == pytest.approx(1.0)
    g = build_grid(1, 4, 64)
    f = GridDensity.from_function(g, lambda x: x ** -1.5)
    assert moment(f, 1) == pytest.approx(2.0, rel=1e-2)
    assert moment(GridDensity.zeros(g), 0.7) == 0.0


def test_window_average_examples():
    g = build_grid(1e-3, 10, 120)
    ones = GridDensity(g, np.ones(g.n_cells))
    assert window_average(ones, 0.37, 0.5) == pytest.approx(0.5, rel=1e-12)
    f = GridDensity.from_function(build_grid(1e-3, 10, 400), lambda x: x ** -1.5)
    b = 8 / 9
    for z in (0.01, 0.2, 3.0):
        assert window_average(f, z, b) == pytest.approx(2 * (b ** -0.5 - 1) * z ** -1.5, rel=1e-2)
    z = np.geomspace(0.01, 0.1, 9)
    slope = np.polyfit(np.log(z), np.log(window_average(f, z, b)), 1)[0]
    assert slope == pytest.approx(-1.5, abs=0.01)
    with pytest.raises(DomainError):
        window_average(f, 1e-3)


def test_moment_exponents_examples():
    q, p = moment_exponents(brownian_kernel())
    assert (q, p) == pytest.approx((2 / 3, 1 / 3))
    assert moment_exponents(constant_kernel()) == pytest.approx((1.0, 0.0))
    K = make_kernel("custom", shape=lambda s: np.ones_like(s), gamma=0.5, lam=-0.25)
    assert moment_exponents(K) == pytest.approx((1.0, 0.25))


@given(st.lists(st.floats(0, 1e3), min_size=12, max_size=12))
def test_resample_conserves_number(vals):
    g = build_grid(1e-2, 1e2, 12)
    f = GridDensity(g, vals)
    h = build_grid(1e-2, 1e2, 31)
    assert moment(resample(f, h), 0) == pytest.approx(sum(f.counts), rel=1e-10, abs=1e-9)


def test_integrate_between_matches_cumulative():
    g = build_grid(1e-2, 1e2, 20)
    f = GridDensity(g, np.linspace(1, 2, 20))
    assert integrate_between(f, 0, 1e9) == pytest.approx(moment(f, 0))
    a = integrate_between(f, 0.05, 0.7) + integrate_between(f, 0.7, 30.0)
    assert a == pytest.approx(integrate_between(f, 0.05, 30.0))


def test_edge_factor_exact_for_power_laws():
    g = build_grid(1e-3, 1e2, 50)
    for k in (-1.5, -1.75, 0.5):
        v = g.centers ** k
        e = v * edge_factor(v)
        assert np.allclose(e[1:-1], g.edges[1:-2] ** k, rtol=1e-12)


def test_edge_factor_is_bounded():
    v = np.array([1.0, 1e-30, 5.0, 0.0, 3.0, 1e9, 2.0])
    r = edge_factor(v)
    assert np.all(r >= 0.5) and np.all(r <= 2.0)


def test_density_csv_roundtrip(tmp_path):
    g = build_grid(1e-3, 10, 17)
    f = GridDensity(g, np.geomspace(1, 1e-6, 17))
    write_density_csv(tmp_path / "p.csv", f)
    h = read_density_csv(tmp_path / "p.csv")
    assert h.grid == g
    assert np.array_equal(h.values, f.values)


def test_density_validation():
    g = build_grid(1, 2, 3)
    with pytest.raises(DomainError):
        GridDensity(g, [1.0, 2.0])
    with pytest.raises(DomainError):
        GridDensity(g, [1.0, np.nan, 2.0])
