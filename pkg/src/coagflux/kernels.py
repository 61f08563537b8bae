"""Homogeneous coagulation kernels.

A kernel ``K(x, y)`` is symmetric, homogeneous of degree ``gamma`` and sits
inside the envelope ``c1 w <= K <= c2 w`` with

    w(x, y) = x**(gamma + lam) * y**(-lam) + y**(gamma + lam) * x**(-lam).

Every kernel can be written as ``(x + y)**gamma * F(x / (x + y))``; ``F`` is the
shape function.  :class:`TruncatedKernel` is the bounded kernel
``K_a = 1/a + min((x+y)**gamma, a) * F_a(s)`` used by the truncated
self-similar problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, GellingError

FAMILIES = ("constant", "product", "brownian", "free_molecular", "custom")

# s-samples used to locate envelope/shape constants on the simplex section
_S_SAMPLES = np.concatenate([np.logspace(-12, math.log10(0.25), 3000), np.linspace(0.25, 0.5, 1001)[1:]])
_S_SAMPLES = np.concatenate([_S_SAMPLES, 1.0 - _S_SAMPLES[::-1][1:]])


def _positive(x, name="size"):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} must be strictly positive")
    return x


@dataclass(frozen=True)
class KernelSpec:
    """A homogeneous coagulation kernel.

    Instances are built through :func:`make_kernel` (or the family helpers);
    ``c1`` and ``c2`` are filled in numerically when not given.
    """

    family: str
    gamma: float
    lam: float
    c1: float = float("nan")
    c2: float = float("nan")
    a_exp: Optional[float] = None
    b_exp: Optional[float] = None
    shape: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __call__(self, x, y):
        return eval_kernel(self, x, y)

    def raw(self, x, y):
        """Evaluate without argument validation (hot path)."""
        fam = self.family
        if fam == "constant":
            return np.full(np.broadcast(x, y).shape, 2.0)
        if fam == "product":
            a, b = self.a_exp, self.b_exp
            return x ** a * y ** b + x ** b * y ** a
        if fam == "brownian":
            x3, y3 = np.cbrt(x), np.cbrt(y)
            return (x3 + y3) * (1.0 / x3 + 1.0 / y3)
        if fam == "free_molecular":
            x3, y3 = np.cbrt(x), np.cbrt(y)
            return (x3 + y3) ** 2 * np.sqrt(1.0 / x + 1.0 / y)
        if fam == "custom":
            s = x + y
            return s ** self.gamma * self.shape(x / s)
        raise ConfigurationError(f"unknown kernel family {fam!r}")

    @property
    def label(self) -> str:
        if self.family == "product":
            return f"product(a={self.a_exp:g}, b={self.b_exp:g})"
        return self.family


def eval_kernel(spec: KernelSpec, x, y):
    """Return ``K(x, y)``; raises :class:`DomainError` on non-positive sizes."""
    x = _positive(x)
    y = _positive(y)
    out = spec.raw(x, y)
    return float(out) if np.ndim(out) == 0 else out


def eval_envelope(spec: KernelSpec, x, y):
    """Return ``w(x, y) = x^(g+l) y^(-l) + y^(g+l) x^(-l)``."""
    x = _positive(x)
    y = _positive(y)
    g, lam = spec.gamma, spec.lam
    out = x ** (g + lam) * y ** (-lam) + y ** (g + lam) * x ** (-lam)
    return float(out) if np.ndim(out) == 0 else out


def shape_of(spec: KernelSpec, s):
    """Shape function ``F(s) = K(s, 1 - s)`` for ``0 < s < 1``."""
    s = np.asarray(s, dtype=float)
    if np.any(~((s > 0) & (s < 1))):
        raise DomainError("shape argument must lie in (0, 1)")
    out = spec.raw(s, 1.0 - s)
    return float(out) if np.ndim(out) == 0 else out


def singularity_exponent(gamma: float, lam: float) -> float:
    """``p = max(lam, -(gamma + lam))``: blow-up order of ``F`` at the simplex ends."""
    return max(lam, -(gamma + lam))


@dataclass(frozen=True)
class ShapeFunction:
    evaluator: Callable
    p: float
    C1s: float
    C2s: float

    def __call__(self, s):
        return self.evaluator(s)


def shape_function(spec: KernelSpec) -> ShapeFunction:
    """Shape function of ``spec`` with its envelope constants.

    ``C1s``/``C2s`` bound ``F(s) s^p (1-s)^p`` on the sampled simplex.
    """
    p = singularity_exponent(spec.gamma, spec.lam)
    s = _S_SAMPLES
    ratio = spec.raw(s, 1.0 - s) * (s * (1.0 - s)) ** p
    return ShapeFunction(lambda t: shape_of(spec, t), p, float(ratio.min()), float(ratio.max()))


def envelope_constants(spec: KernelSpec) -> tuple[float, float]:
    """Numerical ``(c1, c2)``: extreme values of ``K / w`` on the simplex section.

    Homogeneity makes ``K / w`` depend on ``x / (x + y)`` only, so the search is
    one-dimensional; the sample reaches ``s = 1e-12``.
    """
    s = _S_SAMPLES
    t = 1.0 - s
    g, lam = spec.gamma, spec.lam
    w = s ** (g + lam) * t ** (-lam) + t ** (g + lam) * s ** (-lam)
    r = spec.raw(s, t) / w
    return float(r.min()), float(r.max())


@lru_cache(maxsize=64)
def _cached_envelope(family, gamma, lam, a_exp, b_exp):
    tmp = KernelSpec(family, gamma, lam, a_exp=a_exp, b_exp=b_exp)
    return envelope_constants(tmp)


def make_kernel(family: str, a_exp: float | None = None, b_exp: float | None = None, *,
                shape: Callable | None = None, gamma: float | None = None,
                lam: float | None = None) -> KernelSpec:
    """Build a catalog kernel.

    ``constant``        K = 2                                   (gamma, lam) = (0, 0)
    ``product``         K = x^a y^b + x^b y^a, b <= a           (a + b, -b)
    ``brownian``        K = (x^1/3 + y^1/3)(x^-1/3 + y^-1/3)    (0, 1/3)
    ``free_molecular``  K = (x^1/3 + y^1/3)^2 (1/x + 1/y)^1/2   (1/6, 1/2)
    ``custom``          K = (x+y)^gamma shape(x/(x+y)); gamma, lam and shape required
    """
    if family == "constant":
        spec = KernelSpec("constant", 0.0, 0.0)
    elif family == "product":
        if a_exp is None or b_exp is None:
            raise ConfigurationError("product kernel needs a_exp and b_exp")
        a, b = max(a_exp, b_exp), min(a_exp, b_exp)
        spec = KernelSpec("product", a + b, -b, a_exp=float(a), b_exp=float(b))
    elif family == "brownian":
        spec = KernelSpec("brownian", 0.0, 1.0 / 3.0)
    elif family == "free_molecular":
        spec = KernelSpec("free_molecular", 1.0 / 6.0, 0.5)
    elif family == "custom":
        if shape is None or gamma is None or lam is None:
            raise ConfigurationError("custom kernel needs shape, gamma and lam")
        spec = KernelSpec("custom", float(gamma), float(lam), shape=shape)
        c1, c2 = envelope_constants(spec)
        return KernelSpec("custom", float(gamma), float(lam), c1, c2, shape=shape)
    else:
        raise ConfigurationError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
    c1, c2 = _cached_envelope(spec.family, spec.gamma, spec.lam, spec.a_exp, spec.b_exp)
    return KernelSpec(spec.family, spec.gamma, spec.lam, c1, c2, spec.a_exp, spec.b_exp)


def constant_kernel() -> KernelSpec:
    return make_kernel("constant")


def product_kernel(a: float, b: float) -> KernelSpec:
    return make_kernel("product", a, b)


def brownian_kernel() -> KernelSpec:
    return make_kernel("brownian")


def free_molecular_kernel() -> KernelSpec:
    return make_kernel("free_molecular")


@dataclass(frozen=True)
class Admissibility:
    gelling: bool
    flux_admissible: bool
    gamma: float
    lam: float

    @property
    def reason(self) -> str:
        if self.gelling:
            return f"gelling regime: gamma = {self.gamma:g} >= 1"
        if not self.flux_admissible:
            return (f"not flux admissible: |gamma + 2 lambda| = "
                    f"{abs(self.gamma + 2 * self.lam):g} >= 1")
        return "admissible"

    @property
    def ok(self) -> bool:
        return not self.gelling and self.flux_admissible


def check_admissibility(spec: KernelSpec) -> Admissibility:
    return Admissibility(
        gelling=spec.gamma >= 1.0,
        flux_admissible=abs(spec.gamma + 2.0 * spec.lam) < 1.0,
        gamma=spec.gamma,
        lam=spec.lam,
    )


def require_profile_admissible(spec: KernelSpec) -> None:
    """Raise unless a constant-flux self-similar profile can be computed for ``spec``."""
    from .errors import AdmissibilityError

    adm = check_admissibility(spec)
    if adm.gelling:
        raise GellingError(adm.reason)
    if not adm.flux_admissible:
        raise AdmissibilityError(adm.reason)


def scaling_exponents(spec_or_gamma) -> tuple[float, float]:
    """Return ``(alpha, beta) = ((3 + g) / (1 - g), 2 / (1 - g))``.

    ``f(t, x) = t^-alpha phi(x t^-beta)``; raises :class:`GellingError` for g >= 1.
    """
    g = spec_or_gamma.gamma if isinstance(spec_or_gamma, KernelSpec) else float(spec_or_gamma)
    if g >= 1.0:
        raise GellingError(f"gelling regime: gamma = {g:g} >= 1")
    return (3.0 + g) / (1.0 - g), 2.0 / (1.0 - g)


def smallsize_exponent(spec_or_gamma) -> float:
    """Exponent ``-(3 + g) / 2`` of the profile near the origin."""
    g = spec_or_gamma.gamma if isinstance(spec_or_gamma, KernelSpec) else float(spec_or_gamma)
    return -(3.0 + g) / 2.0


def default_truncation_constants(spec: KernelSpec) -> tuple[float, float]:
    """Mid-range legal ``(A, sigma)`` for the bounded kernel."""
    s = np.linspace(0.25, 0.75, 201)
    A = 2.0 * float(np.max(spec.raw(s, 1.0 - s)))
    p = singularity_exponent(spec.gamma, spec.lam)
    if p <= 0:
        sigma = 0.0
    elif spec.gamma > 0:
        sigma = p / (2.0 * spec.gamma)
    else:
        sigma = 1.0
    return A, sigma


def check_sigma_rule(p: float, gamma: float, sigma: float) -> None:
    if p <= 0:
        if sigma != 0:
            raise ConfigurationError(f"sigma must be 0 when p = {p:g} <= 0 (got {sigma:g})")
    elif gamma <= 0:
        if not sigma > 0:
            raise ConfigurationError(f"sigma must be > 0 when p > 0 and gamma <= 0 (got {sigma:g})")
    elif not 0 < sigma < p / gamma:
        raise ConfigurationError(f"sigma must lie in (0, p/gamma) = (0, {p / gamma:g}) (got {sigma:g})")


def _cosine_taper(u):
    """1 for u <= 0, 0 for u >= 1, smooth monotone in between."""
    u = np.clip(u, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * u))


@dataclass(frozen=True)
class TruncatedKernel:
    """Bounded kernel ``K_a`` built from ``base``.

    ``F_a`` equals ``F`` below the level ``A a^sigma`` and vanishes above it;
    the cut is a cosine taper over the relative band ``band`` centred on the
    level.  ``K_a >= 1/a`` everywhere.
    """

    base: KernelSpec
    a: float
    A: float
    sigma: float
    band: float = 0.1

    @property
    def gamma(self) -> float:
        return self.base.gamma

    @property
    def level(self) -> float:
        return self.A * self.a ** self.sigma

    @property
    def upper_bound(self) -> float:
        return 1.0 / self.a + self.a * self.level * (1.0 + self.band / 2.0)

    def shape_cut(self, F):
        lo = self.level * (1.0 - self.band / 2.0)
        hi = self.level * (1.0 + self.band / 2.0)
        if hi == lo:
            return np.where(F <= lo, F, 0.0)
        return F * _cosine_taper((F - lo) / (hi - lo))

    def raw(self, x, y):
        s = x + y
        sg = s ** self.gamma
        F = self.base.raw(x, y) / sg
        return 1.0 / self.a + np.minimum(sg, self.a) * self.shape_cut(F)

    def __call__(self, x, y):
        x = _positive(x)
        y = _positive(y)
        out = self.raw(x, y)
        return float(out) if np.ndim(out) == 0 else out


def truncate_kernel(spec: KernelSpec, a: float, A: float | None = None,
                    sigma: float | None = None, band: float = 0.1) -> TruncatedKernel:
    """Bounded kernel of bound ``a``; ``A``/``sigma`` default to mid-range legal values."""
    if not a > 1:
        raise ConfigurationError(f"truncation bound a must exceed 1 (got {a:g})")
    if not 0 <= band < 1:
        raise ConfigurationError("taper band must lie in [0, 1)")
    A0, s0 = default_truncation_constants(spec)
    A = A0 if A is None else float(A)
    sigma = s0 if sigma is None else float(sigma)
    if not A > 0:
        raise ConfigurationError("A must be positive")
    check_sigma_rule(singularity_exponent(spec.gamma, spec.lam), spec.gamma, sigma)
    return TruncatedKernel(spec, float(a), A, sigma, float(band))
