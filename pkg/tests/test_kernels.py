import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coagflux.errors import ConfigurationError, DomainError, GellingError
from coagflux.kernels import (check_admissibility, constant_kernel, eval_envelope, eval_kernel, make_kernel,
                              product_kernel, brownian_kernel, free_molecular_kernel, scaling_exponents,
                              shape_of, truncate_kernel, require_profile_admissible, singularity_exponent,
                              smallsize_exponent)

CATALOG = [constant_kernel(), product_kernel(0.25, 0.25), product_kernel(0.4, -0.2), brownian_kernel(),
           free_molecular_kernel()]
sizes = st.floats(1e-6, 1e6)


def test_constant_kernel_is_two():
    K = constant_kernel()
    assert eval_kernel(K, 0.3, 7.0) == 2.0
    assert np.all(eval_kernel(K, np.array([1e-3, 1.0]), np.array([5.0, 1e4])) == 2.0)


def test_product_kernel_at_one():
    assert eval_kernel(product_kernel(0.3, 0.1), 1.0, 1.0) == pytest.approx(2.0)


def test_envelope_examples():
    K = make_kernel("custom", shape=lambda s: np.ones_like(s), gamma=0.0, lam=1.0 / 3.0)
    assert eval_envelope(K, 1.0, 1.0) == pytest.approx(2.0)
    assert eval_envelope(K, 8.0, 1.0) == pytest.approx(2.5)


def test_shape_constant():
    s = np.linspace(0.05, 0.95, 7)
    assert np.allclose(shape_of(constant_kernel(), s), 2.0)
    with pytest.raises(DomainError):
        shape_of(constant_kernel(), 1.2)


def test_nonpositive_size_rejected():
    with pytest.raises(DomainError):
        eval_kernel(constant_kernel(), 0.0, 1.0)
    with pytest.raises(DomainError):
        eval_envelope(brownian_kernel(), 1.0, -2.0)


@pytest.mark.parametrize("spec", CATALOG, ids=lambda s: s.label)
def test_homogeneity(spec):
    x, y = 0.7, 2.3
    for lam in (0.1, 3.0, 40.0):
        assert eval_kernel(spec, lam * x, lam * y) == pytest.approx(lam ** spec.gamma * eval_kernel(spec, x, y),
                                                                    rel=1e-12)


@pytest.mark.parametrize("spec", CATALOG, ids=lambda s: s.label)
@given(x=sizes, y=sizes)
def test_envelope_bounds_kernel(spec, x, y):
    K = eval_kernel(spec, x, y)
    E = eval_envelope(spec, x, y)
    assert spec.c1 * E <= K * (1 + 1e-9)
    assert K <= spec.c2 * E * (1 + 1e-9)


def test_truncated_constant_kernel():
    Ka = truncate_kernel(constant_kernel(), a=50.0, A=3.0, sigma=0.0)
    x = np.array([0.1, 0.5, 0.9])
    assert np.allclose(Ka(x, 1.0 - x), 1 / 50 + 2)


@pytest.mark.parametrize("spec", CATALOG[:4], ids=lambda s: s.label)
def test_truncated_kernel_symmetric_and_bounded_below(spec, rng):
    Ka = truncate_kernel(spec, a=100.0)
    assert Ka(1.0, 2.0) == pytest.approx(Ka(2.0, 1.0), rel=1e-14)
    x = 10 ** rng.uniform(-6, 6, 1000)
    y = 10 ** rng.uniform(-6, 6, 1000)
    v = Ka(x, y)
    assert np.all(v >= 1 / 100)
    assert np.all(v <= Ka.upper_bound * (1 + 1e-12))


def test_truncated_kernel_converges():
    # |K_a - K - 1/a| -> 0 pointwise along a doubling sequence of a
    spec = product_kernel(0.25, 0.25)
    x, y = np.array([0.3, 1.0, 2.0]), np.array([0.7, 0.1, 5.0])
    errs = [np.max(np.abs(truncate_kernel(spec, a)(x, y) - spec(x, y) - 1 / a)) for a in 2.0 ** np.arange(2, 12)]
    assert errs[-1] < 1e-12
    assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))


def test_sigma_rule():
    with pytest.raises(ConfigurationError):
        truncate_kernel(constant_kernel(), a=10.0, A=3.0, sigma=0.5)    # p <= 0 needs sigma = 0
    with pytest.raises(ConfigurationError):
        truncate_kernel(brownian_kernel(), a=10.0, sigma=0.0)          # p > 0, gamma <= 0
    with pytest.raises(ConfigurationError):
        truncate_kernel(constant_kernel(), a=0.5)


def test_admissibility_examples():
    assert check_admissibility(brownian_kernel()).flux_admissible
    fm = check_admissibility(free_molecular_kernel())
    assert not fm.flux_admissible
    assert "|gamma + 2 lambda|" in fm.reason and ">= 1" in fm.reason
    assert check_admissibility(constant_kernel()).flux_admissible
    with pytest.raises(ConfigurationError, match="not flux admissible"):
        require_profile_admissible(free_molecular_kernel())


def test_scaling_exponents_exact():
    assert scaling_exponents(0.0) == (3.0, 2.0)
    assert scaling_exponents(0.5) == (7.0, 4.0)
    a, b = scaling_exponents(1.0 / 6.0)
    assert a == pytest.approx(19 / 5, abs=1e-14) and b == pytest.approx(12 / 5, abs=1e-14)
    with pytest.raises(GellingError, match="gelling"):
        scaling_exponents(1.2)


@given(g=st.floats(-0.9, 0.9))
def test_exponent_relations(g):
    alpha, beta = scaling_exponents(g)
    assert 2 * beta - alpha == pytest.approx(1.0)
    assert smallsize_exponent(g) == pytest.approx(-(3 + g) / 2)


def test_singularity_exponent():
    assert singularity_exponent(0.0, 1 / 3) == pytest.approx(1 / 3)
    assert singularity_exponent(0.5, -0.25) == pytest.approx(-0.25)
    assert math.isclose(singularity_exponent(0.0, 0.0), 0.0, abs_tol=0)
