"""Quantitative checks on computed profiles.

Fits (small-size power law, exponential tail), the constant ``c0`` of the
small-size asymptotics, weak and strong residuals of the self-similar
equation, the self-similar collapse of physical-mode runs, and an exact
constant-kernel profile used as an oracle.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .coagulation import FluxProfile
from .errors import DomainError, NumericalError
from .evolution import rescale_physical
from .grid import GridDensity, window_average
from .kernels import KernelSpec, require_profile_admissible, scaling_exponents, singularity_exponent, \
    smallsize_exponent

WINDOW_RATIO = 8.0 / 9.0


# --------------------------------------------------------------------------- exact oracle

def exact_constant_profile(x, tol: float = 1e-16):
    """Flux-one self-similar profile for ``K = 2``.

    Its Laplace transform is ``sqrt(q) tanh(sqrt(q))``, which gives

        phi(x) = sum_k 2 L_k exp(-L_k x),   L_k = (k + 1/2)^2 pi^2.

    The series is summed directly for ``x >= 0.1``; below that the Poisson
    dual (a theta series in ``1/x``) converges faster.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("x must be positive")
    out = np.empty_like(x)
    big = x >= 0.1
    if np.any(big):
        xb = x[big]
        acc = np.zeros_like(xb)
        for k in range(200):
            L = (k + 0.5) ** 2 * math.pi ** 2
            term = 2 * L * np.exp(-L * xb)
            acc += term
            if np.all(term <= tol * acc):
                break
        out[big] = acc
    if np.any(~big):
        xs = x[~big]
        # S(x) = sum_k exp(-L_k x) = (theta / 2) / sqrt(pi x), theta = 1 + 2 sum (-1)^n exp(-n^2/x)
        theta = np.ones_like(xs)
        dtheta = np.zeros_like(xs)
        for n in range(1, 20):
            e = (-1) ** n * 2 * np.exp(-n * n / xs)
            theta += e
            dtheta += e * n * n / xs ** 2
        dS = -0.25 / math.sqrt(math.pi) * xs ** -1.5 * theta + 0.5 / np.sqrt(math.pi * xs) * dtheta
        out[~big] = -2 * dS
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------- power law

@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    stderr: float
    r2: float
    window: tuple
    expected: Optional[float] = None

    def within(self, tol: float) -> bool:
        return self.expected is not None and abs(self.slope - self.expected) <= tol


def fit_smallz_powerlaw(profile: GridDensity, spec: Optional[KernelSpec], window: Sequence[float],
                        points_per_decade: int = 8, b: float = WINDOW_RATIO) -> PowerLawFit:
    """Least-squares slope of ``ln window_average(z)`` against ``ln z`` on ``window``."""
    lo, hi = float(window[0]), float(window[1])
    if not (0 < lo < hi):
        raise DomainError("window must satisfy 0 < z_lo < z_hi")
    if hi / lo < 10 * (1 - 1e-9):
        raise DomainError("power-law window must span at least one decade")
    n = max(int(round(points_per_decade * math.log10(hi / lo))) + 1, 3)
    z = np.geomspace(lo, hi, n)
    wa = np.asarray(window_average(profile, z, b))
    if np.any(wa <= 0):
        raise NumericalError("power-law fit failed: the window contains zero density")
    res = stats.linregress(np.log(z), np.log(wa))
    expected = None if spec is None else smallsize_exponent(spec)
    return PowerLawFit(float(res.slope), float(res.stderr), float(res.rvalue ** 2), (lo, hi), expected)


# --------------------------------------------------------------------------- exponential tail

@dataclass(frozen=True)
class TailFit:
    L: float
    c: float
    r2: float
    window: tuple
    n_points: int
    powerlaw_r2: float

    @property
    def exponential(self) -> bool:
        """False when a pure power law explains the same window at least as well."""
        return self.L > 0 and self.r2 > self.powerlaw_r2


def _linfit(x, y):
    res = stats.linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.rvalue ** 2)


def fit_exponential_tail(profile: GridDensity, spec: KernelSpec, window: Optional[Sequence[float]] = None,
                         floor: float = 1e-12, min_span: float = 3.0,
                         xi_min: Optional[float] = None) -> TailFit:
    """Fit ``ln(phi xi^gamma) = ln c - L xi`` on the tail.

    Without ``window`` the tail is chosen automatically.  Candidate windows
    end at the last cell with ``phi > floor * max(phi)``; the topmost grid
    cell is excluded because it absorbs boundary effects.  They start at or
    above ``xi_min`` (default: the peak of ``xi^2 phi``) and span at least
    ``min_span``.  The window with the largest r^2 wins; among near-ties the
    widest is kept.
    """
    g = profile.grid
    xi, phi = g.centers, profile.values
    gamma = spec.gamma
    if window is not None:
        sel = np.flatnonzero((xi >= window[0]) & (xi <= window[1]) & (phi > 0))
        if sel.size < 3 or xi[sel[-1]] / xi[sel[0]] < min_span * (1 - 1e-9):
            raise NumericalError(f"tail window {tuple(window)} has too few positive points")
        cands = [sel]
    else:
        pos = phi > floor * float(np.max(phi))
        if not np.any(pos):
            raise NumericalError("tail fit failed: profile is identically zero")
        end = int(np.flatnonzero(pos)[-1])
        if end == g.n_cells - 1:
            end -= 1
        # contiguous positive run ending at ``end``
        start0 = end
        while start0 > 0 and pos[start0 - 1]:
            start0 -= 1
        if xi_min is None:
            xi_min = float(xi[np.argmax(xi ** 2 * phi)])
        starts = [s for s in range(start0, end - 1)
                  if xi[s] >= xi_min and xi[end] / xi[s] >= min_span * (1 - 1e-9)]
        if not starts:
            raise NumericalError("tail fit failed: no positive window spans the required factor")
        cands = [np.arange(s, end + 1) for s in starts]
    best = None
    for sel in cands:
        slope, icpt, r2 = _linfit(xi[sel], np.log(phi[sel] * xi[sel] ** gamma))
        if best is None or r2 > best[2] + 1e-4:
            best = (slope, icpt, r2, sel)
    slope, icpt, r2, sel = best
    _, _, r2_pow = _linfit(np.log(xi[sel]), np.log(phi[sel]))
    return TailFit(-slope, math.exp(icpt), r2, (float(xi[sel[0]]), float(xi[sel[-1]])), int(sel.size), r2_pow)


def _quad(fn, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, a, b, limit=200, **kw)
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"quadrature did not converge: {exc}") from exc
    return val


def shape_integral(spec: KernelSpec) -> float:
    """``int_0^1 K(y, 1-y) (y (1-y))^-gamma dy``."""
    g = spec.gamma
    return _quad(lambda y: float(spec.raw(y, 1.0 - y)) * (y * (1.0 - y)) ** (-g), 0.0, 1.0)


def tail_prefactor_prediction(spec: KernelSpec, L: float) -> float:
    """Prefactor ``c = 4L / ((1-gamma) int_0^1 K(y,1-y)(y(1-y))^-gamma dy)`` of the asymptotic tail.

    Balancing ``(2/(1-g)) xi phi'`` against the gain term ``(c^2/2) xi^{1-g} e^{-L xi} int ...``
    of ``c xi^-g e^{-L xi}``; the exact constant-kernel profile has ``c = 2L``.
    """
    return 4.0 * L / ((1.0 - spec.gamma) * shape_integral(spec))


def prefactor_mismatch(fit: TailFit, spec: KernelSpec) -> float:
    """``|c - c_predicted| / c`` for a tail fit."""
    return abs(fit.c - tail_prefactor_prediction(spec, fit.L)) / fit.c


def tail_rho_bound(profile: GridDensity, fit: TailFit) -> float:
    """Largest ``rho`` with ``phi(z) e^{rho z} <= phi(z0) e^{rho z0}`` on the tail window.

    This is the decay rate certified by the data on the window; a consistent
    fit has ``rho`` close to, and not far above, ``L``.
    """
    g = profile.grid
    sel = np.flatnonzero((g.centers >= fit.window[0]) & (g.centers <= fit.window[1]))
    z, phi = g.centers[sel], profile.values[sel]
    z0, p0 = z[0], phi[0]
    return float(np.min(np.log(p0 / phi[1:]) / (z[1:] - z0)))


# --------------------------------------------------------------------------- c0

def compute_c0(spec: KernelSpec, kernel: Optional[Callable] = None) -> float:
    """``c0 = (int_0^1 int_1^inf K(y,z) z^{-(g+3)/2} y^{-(g+1)/2} dz dy)^{-1/2}``.

    ``kernel`` overrides ``spec`` for evaluation (its exponents still come
    from ``spec``).  The ``y``-integral is regularised by ``y = u^m`` so that
    the endpoint singularity disappears; the ``z``-integral runs to infinity.
    """
    require_profile_admissible(spec)
    g = spec.gamma
    K = kernel if kernel is not None else spec.raw
    s = (g + 1.0) / 2.0 + max(singularity_exponent(g, spec.lam), 0.0)
    m = 1.0 / (1.0 - s) if s < 1 else 1.0

    def inner(y):
        return _quad(lambda z: float(K(y, z)) * z ** (-(g + 3.0) / 2.0), 1.0, np.inf)

    def outer(u):
        if u == 0.0:
            return 0.0
        y = u ** m
        return inner(y) * y ** (-(g + 1.0) / 2.0) * m * u ** (m - 1.0)

    total = _quad(outer, 0.0, 1.0)
    if not total > 0:
        raise NumericalError("c0 integral is not positive")
    return total ** -0.5


# --------------------------------------------------------------------------- weak residual

@dataclass(frozen=True)
class BumpTest:
    """Test function ``p(s) b(xi)`` with ``b = ((1 + cos(pi (xi - c)/w)) / 2)^2`` on ``|xi - c| < w``.

    ``center = 0`` gives a function that equals ``p(s)`` at the origin (and
    so sees the incoming flux); ``poly`` holds the coefficients of ``p``
    in increasing degree.
    """

    center: float
    width: float
    poly: tuple = (1.0,)

    def p(self, s):
        return np.polynomial.polynomial.polyval(s, self.poly)

    def dp(self, s):
        return np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.poly))

    def b(self, xi):
        u = (np.asarray(xi, float) - self.center) / self.width
        return np.where(np.abs(u) < 1, ((1 + np.cos(np.pi * u)) / 2) ** 2, 0.0)


DEFAULT_TESTS = (
    BumpTest(0.0, 1.0, (1.0,)),
    BumpTest(0.0, 4.0, (1.0, 0.5)),
    BumpTest(0.6, 0.5, (1.0, -0.25)),
    BumpTest(2.0, 1.5, (0.5, 0.0, 0.25)),
    BumpTest(5.0, 4.0, (2.0, -0.5)),
)


@dataclass(frozen=True)
class WeakTerms:
    lhs: float
    time_term: float
    source_term: float
    coag_term: float

    @property
    def residual(self) -> float:
        return self.lhs - self.time_term - self.source_term - self.coag_term

    @property
    def scale(self) -> float:
        return max(abs(self.lhs), abs(self.time_term), abs(self.source_term), abs(self.coag_term))


def _with_ghosts(profile: GridDensity, gamma: float, decades: float):
    """Cell centres and counts, continued below the grid by the small-size power law."""
    g = profile.grid
    z, N = g.centers, profile.counts
    ng = int(math.ceil(decades * math.log(10) / math.log(g.ratio))) if decades > 0 else 0
    if ng == 0 or profile.values[0] <= 0:
        return z, N
    r = g.ratio
    zg = g.centers[0] * r ** -np.arange(ng, 0, -1, dtype=float)
    wg = zg * (math.sqrt(r) - 1 / math.sqrt(r))
    k = smallsize_exponent(gamma)
    Ng = profile.values[0] * (zg / z[0]) ** k * wg
    return np.concatenate([zg, z]), np.concatenate([Ng, N])


def weak_form_terms(profile: GridDensity, spec: KernelSpec, test: BumpTest, t: float,
                    n_time: int = 32, include_source: bool = True,
                    ghost_decades: float = 6.0) -> WeakTerms:
    """Both sides of the constant-flux weak formulation for ``F(s, xi) = s^-alpha phi(xi s^-beta)``.

    With ``xi = s^beta z`` the first moment carries a factor ``s`` and the
    coagulation integral is independent of ``s`` apart from the test
    function, so every term reduces to sums over the profile cells.  The
    profile is continued ``ghost_decades`` below the grid by its small-size
    power law; otherwise the mass missing below ``x_min`` shows up as a
    residual of order ``sqrt(x_min)``.
    """
    _, beta = scaling_exponents(spec)
    z, N = _with_ghosts(profile, spec.gamma, ghost_decades)
    zN = z * N
    nodes, weights = np.polynomial.legendre.leggauss(n_time)
    s = 0.5 * t * (nodes + 1.0)
    ws = 0.5 * t * weights
    Kzz = spec.raw(z[:, None], z[None, :]) * np.outer(N, N)
    zsum = z[:, None] + z[None, :]
    lhs = t * test.p(t) * float(np.sum(zN * test.b(t ** beta * z)))
    time_term = 0.0
    coag = 0.0
    for si, wi in zip(s, ws):
        sb = si ** beta
        bz = z * test.b(sb * z)
        time_term += wi * si * test.dp(si) * float(np.sum(N * bz))
        bracket = zsum * test.b(sb * zsum) - bz[:, None] - bz[None, :]
        coag += wi * test.p(si) * 0.5 * float(np.sum(Kzz * bracket))
    source = 0.0
    if include_source:
        source = float(np.sum(ws * test.p(s))) * float(test.b(0.0))
    return WeakTerms(lhs, time_term, source, coag)


def weak_residual_constant_flux(profile: GridDensity, spec: KernelSpec,
                                testfns: Iterable[BumpTest] = DEFAULT_TESTS, T: float = 2.0,
                                times: Optional[Sequence[float]] = None,
                                include_source: bool = True, ghost_decades: float = 6.0) -> float:
    """Largest normalised weak-form residual over ``testfns`` and evaluation times in ``(0, T]``."""
    if times is None:
        times = (0.25 * T, 0.5 * T, T)
    worst = 0.0
    for test in testfns:
        for t in times:
            terms = weak_form_terms(profile, spec, test, t, include_source=include_source,
                                    ghost_decades=ghost_decades)
            if terms.scale > 0:
                worst = max(worst, abs(terms.residual) / terms.scale)
    return worst


# --------------------------------------------------------------------------- strong residual

def _loglog_interp(profile: GridDensity, small_exponent: Optional[float] = None):
    """Log-log interpolant through the cell centres.

    Below the first centre it continues as ``phi_0 (y / x_0)^small_exponent``
    when an exponent is given (and vanishes below ``x_min`` otherwise); above
    the grid it vanishes.
    """
    g = profile.grid
    lx = np.log(g.centers)
    v = profile.values
    pos = v > 0
    lv = np.log(np.where(pos, v, 1.0))

    def phi(y):
        y = np.asarray(y, float)
        ly = np.log(y)
        out = np.exp(np.interp(ly, lx, lv)) * np.interp(ly, lx, pos.astype(float))
        low = y < g.centers[0]
        if small_exponent is not None:
            out = np.where(low, v[0] * np.exp(small_exponent * (ly - lx[0])), out)
        else:
            out = np.where(y < g.x_min, 0.0, out)
        return np.where(y > g.x_max, 0.0, out)

    return phi


def _log_nodes(a, b, per_decade: int = 8, order: int = 8):
    """Composite Gauss-Legendre nodes/weights for ``int_a^b f(y) dy`` in ``ln y`` (vectorised in ``a, b``)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    span = np.log(b / a)
    nseg = max(int(math.ceil(float(np.max(span)) / math.log(10) * per_decade)), 1)
    x, w = np.polynomial.legendre.leggauss(order)
    k = np.arange(nseg)
    # segment k of each row: [ln a + k h, ln a + (k+1) h], h = span / nseg
    h = span[..., None, None] / nseg
    u = np.log(a)[..., None, None] + (k[:, None] + 0.5 * (x[None, :] + 1.0)) * h
    y = np.exp(u)
    wy = 0.5 * w[None, :] * h * y
    shape = a.shape + (nseg * order,)
    return y.reshape(shape), wy.reshape(shape)


def strong_residual_pointwise(profile: GridDensity, spec: Optional[KernelSpec], x,
                              gamma: Optional[float] = None):
    """Residual of the smooth self-similar equation at the sizes ``x`` (cell centres)."""
    g = profile.grid
    if gamma is None:
        gamma = spec.gamma
    phi = _loglog_interp(profile, smallsize_exponent(gamma))
    x = np.asarray(x, float)
    lc = np.log(g.centers)
    v = profile.values
    pos = v > 0
    # x phi' = phi d(ln phi)/d(ln x); differencing ln phi stays accurate in the exponential tail
    dlog = np.gradient(np.log(np.where(pos, v, 1.0)), lc)
    px = phi(x)
    xdphi = px * np.interp(np.log(x), lc, np.where(pos, dlog, 0.0))
    res = (3 + gamma) / (1 - gamma) * px + 2 / (1 - gamma) * xdphi
    if spec is None:
        return res
    # the part of the profile below the grid is continued by its power law
    half = x / 2
    y, wy = _log_nodes(np.full_like(x, g.x_min * 1e-12), half)
    xm = x[:, None]
    gain_loss = (spec.raw(xm - y, y) * phi(xm - y) - spec.raw(xm, y) * px[:, None]) * phi(y)
    A = np.sum(gain_loss * wy, axis=1)
    y2, w2 = _log_nodes(half, np.full_like(x, g.x_max))
    B = px * np.sum(spec.raw(xm, y2) * phi(y2) * w2, axis=1)
    return res + A - B


def strong_residual(profile: GridDensity, spec: Optional[KernelSpec], window: Optional[Sequence[float]] = None,
                    gamma: Optional[float] = None) -> float:
    """Mass-weighted L1 norm ``sum x |r(x)| w`` of the pointwise residual over ``window``.

    ``spec=None`` drops the coagulation operator (transport-only balance);
    ``gamma`` must then be given.
    """
    g = profile.grid
    if window is None:
        window = (10 * g.x_min, min(3.0, g.x_max / 4))
    sel = (g.centers >= window[0]) & (g.centers <= window[1])
    sel[0] = sel[-1] = False
    if not np.any(sel):
        raise DomainError("strong-residual window contains no interior cells")
    r = strong_residual_pointwise(profile, spec, g.centers[sel], gamma)
    return float(np.sum(g.centers[sel] * np.abs(r) * g.widths[sel]))


# --------------------------------------------------------------------------- collapse

@dataclass(frozen=True)
class CollapseResult:
    distance: float
    times: tuple
    window: tuple
    pair_distances: tuple

    @property
    def has_signal(self) -> bool:
        return math.isfinite(self.distance)


def collapse_test(states, spec: KernelSpec, window: Sequence[float] = (0.05, 5.0),
                  n_points: int = 41, times: Optional[Sequence[float]] = None,
                  b: float = WINDOW_RATIO) -> CollapseResult:
    """Sup-distance between rescaled window averages of physical-mode checkpoints.

    ``states`` is a trajectory or a list of ``EvolutionState``; ``times``
    selects a subset.  For each pair the distance is
    ``max |a - b| / max(max a, max b)`` over ``n_points`` log-spaced sizes of
    ``window``; the largest pair distance is returned.  Profiles that vanish
    on the window give ``inf``.
    """
    states = list(getattr(states, "states", states))
    if times is not None:
        picked = []
        for t in times:
            match = [s for s in states if abs(s.time - t) <= 1e-9 * max(1.0, t)]
            if not match:
                raise DomainError(f"no checkpoint at t={t:g}")
            picked.append(match[0])
        states = picked
    if len(states) < 3:
        raise DomainError("collapse test needs at least three checkpoints")
    z = np.geomspace(window[0], window[1], n_points)
    curves = []
    for s in states:
        if s.mode != "physical":
            raise DomainError("collapse test needs physical-mode states")
        curves.append(np.asarray(window_average(rescale_physical(s.density, s.time, spec), z, b)))
    pairs = []
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            top = max(float(np.max(curves[i])), float(np.max(curves[j])))
            pairs.append(math.inf if top <= 0 else float(np.max(np.abs(curves[i] - curves[j]))) / top)
    return CollapseResult(max(pairs), tuple(s.time for s in states), tuple(window), tuple(pairs))


# --------------------------------------------------------------------------- report

@dataclass
class DiagnosticsReport:
    smallz_slope: Optional[float] = None
    smallz_stderr: Optional[float] = None
    smallz_window: Optional[tuple] = None
    plateau_mean: Optional[float] = None
    plateau_dev: Optional[float] = None
    tail_L: Optional[float] = None
    tail_c: Optional[float] = None
    tail_window: Optional[tuple] = None
    tail_rho_bound: Optional[float] = None
    tail_fit_r2: Optional[float] = None
    tail_prefactor_mismatch: Optional[float] = None
    c0: Optional[float] = None
    weak_residual: Optional[float] = None
    strong_residual: Optional[float] = None
    collapse_distance: Optional[float] = None
    overflow_fraction: Optional[float] = None
    status: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready dictionary; non-finite numbers become ``null`` with a status note."""
        out = {}
        status = dict(self.status)
        for k, v in asdict(self).items():
            if k == "status":
                continue
            if isinstance(v, (tuple, list)):
                v = [float(u) for u in v]
                if not all(math.isfinite(u) for u in v):
                    status.setdefault(k, "non-finite value")
                    v = None
            elif isinstance(v, float) and not math.isfinite(v):
                status.setdefault(k, "non-finite value")
                v = None
            elif v is None:
                status.setdefault(k, "not computed")
            out[k] = v
        out["status"] = dict(sorted(status.items()))
        return out

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")


def diagnose(profile: GridDensity, spec: KernelSpec, *, flux: Optional[FluxProfile] = None,
             smallz_window: Optional[Sequence[float]] = None, plateau_window: Optional[Sequence[float]] = None,
             weak: bool = True, strong: bool = True, trajectory=None, collapse_times=None,
             overflow_fraction: Optional[float] = None) -> DiagnosticsReport:
    """Run every applicable diagnostic, recording failures in ``status`` instead of raising."""
    rep = DiagnosticsReport(overflow_fraction=overflow_fraction)
    g = profile.grid

    def attempt(name, fn):
        try:
            fn()
        except (NumericalError, DomainError, ValueError) as exc:
            rep.status[name] = f"failed: {exc}"

    def smallz():
        w = smallz_window or (10 * g.x_min, 0.1)
        fit = fit_smallz_powerlaw(profile, spec, w)
        rep.smallz_slope, rep.smallz_stderr, rep.smallz_window = fit.slope, fit.stderr, fit.window

    def tail():
        fit = fit_exponential_tail(profile, spec)
        rep.tail_L, rep.tail_c, rep.tail_fit_r2, rep.tail_window = fit.L, fit.c, fit.r2, fit.window
        rep.tail_rho_bound = tail_rho_bound(profile, fit)
        rep.tail_prefactor_mismatch = prefactor_mismatch(fit, spec)
        if not fit.exponential:
            rep.status["tail_L"] = "tail is not exponential on the fitted window"

    def plateau():
        if flux is None:
            raise DomainError("no flux profile supplied")
        lo, hi = plateau_window or (10 * g.x_min, 0.1)
        z = flux.z
        sel = (z >= lo) & (z <= hi)
        if not np.any(sel):
            raise DomainError("plateau window holds no edges")
        rep.plateau_mean = float(np.mean(flux.values[sel]))
        rep.plateau_dev = float(np.max(np.abs(flux.values[sel] - 1.0)))

    def c0():
        rep.c0 = compute_c0(spec)

    def weak_res():
        rep.weak_residual = weak_residual_constant_flux(profile, spec)

    def strong_res():
        rep.strong_residual = strong_residual(profile, spec)

    def coll():
        rep.collapse_distance = collapse_test(trajectory, spec, times=collapse_times).distance

    attempt("smallz_slope", smallz)
    attempt("tail_L", tail)
    attempt("plateau_mean", plateau)
    attempt("c0", c0)
    if weak:
        attempt("weak_residual", weak_res)
    if strong:
        attempt("strong_residual", strong_res)
    if trajectory is not None:
        attempt("collapse_distance", coll)
    return rep


def write_plot_csv(path, profile: GridDensity, spec: KernelSpec, flux: Optional[FluxProfile] = None,
                   tail: Optional[TailFit] = None, powerlaw: Optional[PowerLawFit] = None,
                   b: float = WINDOW_RATIO) -> None:
    """Per-cell table: ``z, phi, J, window_average`` and the fitted curves (blank where undefined)."""
    g = profile.grid
    z = g.centers
    ok = b * z >= g.x_min
    wa = np.full(z.shape, np.nan)
    wa[ok] = window_average(profile, z[ok], b)
    J = np.interp(z, flux.z, flux.values) if flux is not None else None

    def fmt(v):
        return "" if v is None or not math.isfinite(v) else repr(float(v))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z", "phi", "J", "window_average", "tail_fit", "powerlaw_fit"])
        for i, zi in enumerate(z):
            tf = tail.c * math.exp(-tail.L * zi) * zi ** (-spec.gamma) if tail is not None else None
            pf = None
            if powerlaw is not None and ok[i]:
                z0 = powerlaw.window[0]
                pf = float(window_average(profile, z0, b)) * (zi / z0) ** powerlaw.slope
            w.writerow([fmt(zi), fmt(profile.values[i]), fmt(None if J is None else J[i]), fmt(wa[i]),
                        fmt(tf), fmt(pf)])
