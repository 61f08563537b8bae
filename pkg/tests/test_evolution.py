import numpy as np
import pytest
from hypothesis import given, strategies as st

from coagflux.coagulation import SourceProfile, build_source
from coagflux.errors import ConfigurationError, DomainError
from coagflux.evolution import (EvolutionState, PhysicalProblem, SelfSimilarProblem, StepControl, TruncationParams,
                                evolve, geometric_checkpoints, rescale_physical, rhs_physical, rhs_selfsimilar,
                                zero_state)
from coagflux.grid import GridDensity, build_grid, moment
from coagflux.kernels import constant_kernel, product_kernel


def small_selfsimilar(spec=None, coag=True, source=True, cpd=12):
    spec = spec or constant_kernel()
    params = TruncationParams(1e-2, 1e3, 10.0)
    g = build_grid(1e-2, 100.0, 4 * cpd)
    src = None if source else SourceProfile(1e-2, GridDensity.zeros(g))
    return SelfSimilarProblem(spec, g, params, source=src, coagulation=coag)


def test_rhs_physical_zero_density_is_source():
    g = build_grid(1e-3, 10, 60)
    p = PhysicalProblem(constant_kernel(), g, build_source(1e-2, g))
    r = rhs_physical(p, zero_state(g, "physical"))
    assert np.array_equal(r.values, p.eta)
    assert moment(r, 1) == pytest.approx(1.0, abs=1e-12)


def test_zero_kernel_is_linear_in_time():
    g = build_grid(1e-3, 10, 60)
    src = build_source(1e-2, g)
    p = PhysicalProblem(None, g, src)
    f0 = GridDensity.from_function(g, lambda x: np.exp(-x))
    traj = evolve(p, EvolutionState(0.0, f0, "physical"), 3.0)
    assert np.allclose(traj.final.density.values, f0.values + 3.0 * src.values, rtol=1e-13)


def test_zero_kernel_zero_source_unchanged():
    g = build_grid(1e-3, 10, 30)
    f0 = GridDensity.from_function(g, lambda x: x ** -1.5)
    traj = evolve(PhysicalProblem(None, g, None), EvolutionState(0.0, f0, "physical"), 2.0)
    assert np.array_equal(traj.final.density.values, f0.values)


def test_physical_mass_ledger():
    g = build_grid(5e-4, 20, 110)
    p = PhysicalProblem(constant_kernel(), g, build_source(1e-3, g))
    traj = evolve(p, zero_state(g, "physical"), 2.0, StepControl(dt_max=0.1), checkpoints=[0.5, 1.0])
    for s in traj.states:
        assert abs(s.mass + s.overflow_mass - s.time) <= 1e-10 * s.time
        assert s.clipped_mass == 0.0
        assert s.density.is_nonnegative()
    assert traj.times == [0.5, 1.0, 2.0]


def test_rhs_selfsimilar_zero_is_source():
    p = small_selfsimilar()
    st0 = zero_state(p.grid, "selfsimilar_truncated", p.params)
    assert np.array_equal(rhs_selfsimilar(p, st0).values, p.eta)
    with pytest.raises(DomainError):
        rhs_selfsimilar(p, zero_state(p.grid, "physical"))


def test_transport_balances_power_law():
    errs = []
    for cpd in (8, 16, 32):
        p = small_selfsimilar(coag=False, source=False, cpd=cpd)
        c = p.grid.centers
        phi = c ** -1.5
        rate = p.rates(phi)[0]
        sel = (c > 0.1) & (c < 5)
        errs.append(np.max(np.abs(rate[sel] / phi[sel])))
    assert errs[0] < 0.01
    assert errs[0] / errs[1] >= 1.9 and errs[1] / errs[2] >= 1.9


@given(vals=st.lists(st.floats(0, 50), min_size=48, max_size=48))
def test_first_moment_inequality(vals):
    p = small_selfsimilar()
    g = p.grid
    phi = np.asarray(vals)
    rate = p.rates(phi)[0]
    M = float(np.sum(g.centers * phi * g.widths))
    dM = float(np.sum(g.centers * rate * g.widths))
    assert dM <= 1.0 - M + 1e-9 * (1 + abs(M) + abs(dM))


def test_selfsimilar_invariant_region():
    p = small_selfsimilar(product_kernel(0.25, 0.25))
    traj = evolve(p, zero_state(p.grid, "selfsimilar_truncated", p.params), 6.0, StepControl(dt_max=0.1),
                  checkpoints=geometric_checkpoints(0.05, 6.0, 12))
    masses = [s.mass for s in traj.states]
    assert max(masses) <= 1 + 1e-6
    assert masses[-1] > 0.9


def test_transport_integrator_order():
    p = small_selfsimilar(coag=False, source=False, cpd=6)
    phi0 = GridDensity.from_function(p.grid, lambda x: np.exp(-x))
    st0 = EvolutionState(0.0, phi0, "selfsimilar_truncated", p.params)
    ref = evolve(p, st0, 0.5, StepControl(dt_max=0.5 / 512)).final.density.values
    errs = [np.max(np.abs(evolve(p, st0, 0.5, StepControl(dt_max=dt)).final.density.values - ref))
            for dt in (0.5 / 16, 0.5 / 32, 0.5 / 64)]
    assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8


def test_rescale_examples():
    g = build_grid(1e-2, 1e2, 40)
    f = GridDensity.from_function(g, lambda x: np.exp(-x))
    same = rescale_physical(f, 1.0, constant_kernel())
    assert same.grid == g and np.array_equal(same.values, f.values)
    r = rescale_physical(f, 4.0, constant_kernel())
    assert r.grid.x_min == pytest.approx(1e-2 / 16) and np.allclose(r.values, 64 * f.values)
    assert moment(r, 1) == pytest.approx(moment(f, 1) / 4.0, rel=1e-12)
    with pytest.raises(DomainError):
        rescale_physical(f, 0.0, constant_kernel())


def test_problem_validation():
    g = build_grid(1e-2, 100.0, 40)
    with pytest.raises(ConfigurationError):
        SelfSimilarProblem(constant_kernel(), g, TruncationParams(1e-3, 1e3, 10.0))   # grid starts above eps
    with pytest.raises(ConfigurationError):
        SelfSimilarProblem(constant_kernel(), g, TruncationParams(1e-2, 1e3, 80.0))   # grid misses 2R
    with pytest.raises(ConfigurationError):
        TruncationParams(1e-2, 0.5, 10.0).validate()
    with pytest.raises(DomainError):
        evolve(PhysicalProblem(None, g, None), zero_state(g, "physical"), 0.0)
    with pytest.raises(ConfigurationError):
        StepControl(safety=2.0)
