"""Characteristics of the truncated transport term.

The self-similar transport ``beta (1/xi) d/dxi (xi^2 Xi_eps phi)`` moves mass
along

    dX/dtau = -beta X Xi_eps(X),    X(0) = x.

Above ``2 eps`` the flow is ``x e^{-beta tau}``; below ``eps`` it is frozen;
in the band ``[eps, 2 eps]`` it is integrated with classical RK4 at a fixed
step.  Every function accepts scalars or arrays and broadcasts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .coagulation import CutoffXi, SourceProfile, bump_density
from .errors import ConfigurationError, DomainError, NumericalError
from .kernels import KernelSpec, scaling_exponents


@dataclass(frozen=True)
class FlowContext:
    beta: float
    epsilon: float
    xi: CutoffXi

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")

    @property
    def step(self) -> float:
        """RK4 step in ``tau``: moves a band trajectory by at most ``eps / 100``."""
        return 1.0 / (200.0 * self.beta)


def flow_context(spec_or_gamma: Union[KernelSpec, float], epsilon: float) -> FlowContext:
    _, beta = scaling_exponents(spec_or_gamma)
    return FlowContext(beta, float(epsilon), CutoffXi(float(epsilon)))


def _band_rhs(ctx: FlowContext, X):
    return -ctx.beta * X * ctx.xi(X)


def _integrate_band(ctx: FlowContext, X, g, duration):
    """RK4 for ``(X, g)`` over per-element ``duration``; the last step is fractional."""
    X = X.copy()
    g = g.copy()
    left = duration.copy()
    h0 = ctx.step
    beta = ctx.beta
    while True:
        act = left > 0
        if not np.any(act):
            return X, g
        h = np.minimum(h0, left[act])
        x = X[act]
        k1 = _band_rhs(ctx, x)
        x2 = x + 0.5 * h * k1
        k2 = _band_rhs(ctx, x2)
        x3 = x + 0.5 * h * k2
        k3 = _band_rhs(ctx, x3)
        x4 = x + h * k3
        k4 = _band_rhs(ctx, x4)
        # g' = beta Xi(X) evaluated at the same RK4 stages
        q = beta * (ctx.xi(x) + 2 * ctx.xi(x2) + 2 * ctx.xi(x3) + ctx.xi(x4)) / 6.0
        X[act] = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        g[act] = g[act] + h * q
        left[act] = left[act] - h
        left[np.abs(left) < 1e-15 * np.maximum(duration, 1.0)] = 0.0


def _flow(ctx: FlowContext, tau, x):
    tau = np.asarray(tau, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(tau < 0):
        raise DomainError("tau must be non-negative")
    if np.any(x <= 0):
        raise DomainError("x must be positive")
    tau, x = np.broadcast_arrays(tau, x)
    shape = x.shape
    tau = tau.ravel().astype(float)
    x = x.ravel().astype(float)
    eps2 = 2.0 * ctx.epsilon
    X = x.copy()
    g = np.zeros_like(x)
    above = x >= eps2
    # time needed to reach the band from above
    t_hit = np.where(above, np.log(np.where(above, x, eps2) / eps2) / ctx.beta, 0.0)
    stays = above & (tau <= t_hit)
    X[stays] = x[stays] * np.exp(-ctx.beta * tau[stays])
    g[stays] = ctx.beta * tau[stays]
    enters = above & ~stays
    X[enters] = eps2
    g[enters] = ctx.beta * t_hit[enters]
    band = ~stays & (X > ctx.epsilon)
    rem = np.where(enters, tau - t_hit, tau)
    rem = np.where(band, rem, 0.0)
    if np.any(band):
        Xb, gb = _integrate_band(ctx, X[band], g[band], rem[band])
        X[band] = Xb
        g[band] = gb
    return X.reshape(shape), g.reshape(shape)


def _out(a):
    return float(a) if np.ndim(a) == 0 else a


def flow_X(ctx: FlowContext, tau, x):
    """Position ``X(tau, x)`` of the characteristic started at ``x``."""
    return _out(_flow(ctx, tau, x)[0])


def damping_g(ctx: FlowContext, tau, x):
    """``g(tau, x) = beta int_0^tau Xi_eps(X(s, x)) ds``, integrated alongside the flow."""
    return _out(_flow(ctx, tau, x)[1])


def merge_l(ctx: FlowContext, tau, x, y, rtol: float = 1e-10):
    """``l`` with ``X(tau, l) = X(tau, x) + X(tau, y)``, by bisection on the monotone map.

    When both trajectories stay above the band the flow is linear and
    ``l = x + y`` is returned directly.
    """
    tau, x, y = np.broadcast_arrays(np.asarray(tau, float), np.asarray(x, float), np.asarray(y, float))
    shape = x.shape
    tau, x, y = tau.ravel(), x.ravel(), y.ravel()
    Xx, _ = _flow(ctx, tau, x)
    Xy, _ = _flow(ctx, tau, y)
    target = Xx + Xy
    out = x + y
    eps2 = 2.0 * ctx.epsilon
    linear = (Xx >= eps2) & (Xy >= eps2)
    todo = ~linear
    if np.any(todo):
        t, tg = tau[todo], target[todo]
        lo = np.maximum(x[todo], y[todo])
        hi = x[todo] + y[todo]
        # widen the upper end until it brackets the target
        for _ in range(200):
            Xh, _ = _flow(ctx, t, hi)
            short = Xh < tg
            if not np.any(short):
                break
            hi = np.where(short, 2.0 * hi, hi)
        else:
            raise NumericalError("merge_l: could not bracket the merged size")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            Xm, _ = _flow(ctx, t, mid)
            below = Xm < tg
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-3 * rtol * tg):
                break
        ell = 0.5 * (lo + hi)
        Xe, _ = _flow(ctx, t, ell)
        if np.any(np.abs(Xe - tg) > rtol * tg):
            raise NumericalError("merge_l: bisection did not meet the residual tolerance")
        out[todo] = ell
    return _out(out.reshape(shape))


def dX_dx(ctx: FlowContext, tau, x, rel_step: float = 1e-6):
    """Central-difference derivative of ``X(tau, .)``."""
    x = np.asarray(x, float)
    h = rel_step * x
    return _out((np.asarray(flow_X(ctx, tau, x + h)) - np.asarray(flow_X(ctx, tau, x - h))) / (2 * h))


def transformed_source(ctx: FlowContext, eta: Union[SourceProfile, Callable], t, x):
    """``e^{-g(ln t, x)} dX/dx eta(X(ln t, x))`` for ``t >= 1``.

    ``eta`` may be a :class:`SourceProfile`, whose smooth bump is then
    evaluated pointwise, or any vectorised callable.
    """
    t = np.asarray(t, float)
    if np.any(t < 1):
        raise DomainError("transformed_source needs t >= 1")
    fn = (lambda z: bump_density(eta.epsilon, z)) if isinstance(eta, SourceProfile) else eta
    tau = np.log(t)
    X, g = _flow(ctx, tau, x)
    return _out(np.exp(-g) * np.asarray(dX_dx(ctx, tau, x)) * fn(X))


def _gauss_panels(a: float, b: float, panels: int = 24, order: int = 12, graded: bool = False):
    """Composite Gauss-Legendre rule; ``graded`` adds panels spaced geometrically in ``x - a``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    if graded:
        edges = np.union1d(edges, a + np.geomspace(1e-10 * (b - a), b - a, panels))
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (hi - lo) * (x[None, :] + 1) + lo
    weights = 0.5 * (hi - lo) * w[None, :]
    return nodes.ravel(), weights.ravel()


def change_of_variables_gap(ctx: FlowContext, tau: float, test: Optional[Callable] = None) -> float:
    """Relative gap between the two sides of the source change of variables.

    ``int phi(xi) eta(xi) dxi`` is compared with
    ``int phi(X(tau, x)) e^{g(tau, x)} eta_tilde(e^tau, x) dx`` over the
    preimage ``[eps, l(tau, eps, eps)]`` of the source support ``[eps, 2 eps]``.
    """
    eps = ctx.epsilon
    if test is None:
        def test(z):
            return np.cos(3.0 * z / eps) + (z / eps) ** 2

    def eta(z):
        return bump_density(eps, z)

    xs, ws = _gauss_panels(eps, 2 * eps)
    lhs = float(np.sum(ws * test(xs) * eta(xs)))
    top = merge_l(ctx, tau, eps, eps)            # X(tau, top) = 2 eps
    # trajectories starting just above eps crowd towards eps: grade the panels there
    xr, wr = _gauss_panels(eps, top, panels=32, graded=True)
    X, g = _flow(ctx, tau, xr)
    rhs = float(np.sum(wr * test(X) * np.exp(g) * transformed_source(ctx, eta, math.exp(tau), xr)))
    return abs(lhs - rhs) / abs(lhs)


def verify_characteristics(ctx: FlowContext, rng: np.random.Generator, samples: int = 64,
                           tau_max: float = 3.0) -> dict:
    """Sampled checks of the flow: semigroup, closed form, merge residual, change of variables.

    Sizes are drawn log-uniformly over ``[eps/2, 1000 eps]`` so that frozen,
    band and exponential starts all occur.
    """
    eps = ctx.epsilon
    x = eps * 10 ** rng.uniform(math.log10(0.5), 3.0, samples)
    y = eps * 10 ** rng.uniform(math.log10(0.5), 3.0, samples)
    t1 = rng.uniform(0.0, tau_max, samples)
    t2 = rng.uniform(0.0, tau_max, samples)
    a = np.asarray(flow_X(ctx, t1 + t2, x))
    b = np.asarray(flow_X(ctx, t2, flow_X(ctx, t1, x)))
    semigroup = float(np.max(np.abs(a - b) / a))
    # closed form wherever the trajectory stays above the band
    Xc = np.asarray(flow_X(ctx, t1, x))
    above = x * np.exp(-ctx.beta * t1) >= 2 * eps
    closed = float(np.max(np.abs(Xc[above] - x[above] * np.exp(-ctx.beta * t1[above])) / Xc[above])) \
        if np.any(above) else 0.0
    ell = np.asarray(merge_l(ctx, t1, x, y))
    Xx, Xy = np.asarray(flow_X(ctx, t1, x)), np.asarray(flow_X(ctx, t1, y))
    merge = float(np.max(np.abs(np.asarray(flow_X(ctx, t1, ell)) - Xx - Xy) / (Xx + Xy)))
    cov = max(change_of_variables_gap(ctx, tau) for tau in (0.3, 1.0, 2.5))
    return {"samples": int(samples), "semigroup": semigroup, "closed_form": closed,
            "merge": merge, "change_of_variables": cov}
