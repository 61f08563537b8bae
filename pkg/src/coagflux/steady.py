"""Steady states: truncated pseudo-time relaxation, cascades, and the flux identity.

Two independent routes lead to a self-similar profile:

* :func:`run_cascade` relaxes the truncated self-similar evolution to a
  steady state for a sequence of cut-offs ``(eps, a, R)`` and normalises the
  last one;
* :func:`profile_picard` solves the profile identity

      J_phi(z) = 1 - int_0^z x phi(x) dx + beta z^2 phi(z)

  directly, with no source, no kernel bound and no gain cutoff.

Differencing the identity across one cell gives the cell balance

      gain_k + beta e_{k+1}^2 r_{k+1} phi_{k+1} = phi_k (x_k w_k (1 + nu_k) + beta e_k^2 r_k),

with ``nu_k`` the loss frequency of cell ``k`` and ``r_k phi_k`` the value
reconstructed at the lower edge of cell ``k`` (the factors ``r`` are lagged
one sweep).  :func:`profile_picard` iterates
this balance from the top cell downwards (the direction in which the
transport term carries information), so every update is positive and the
iteration does not amplify errors near the origin.  The literal rearrangement
``phi = (J - 1 + M) / (beta z^2)`` is kept as :func:`identity_target` for
checking, but iterating it diverges: its sensitivity to ``phi`` grows like
``z^{-1/2}`` towards the origin.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .coagulation import FluxProfile, PairTable, SourceProfile, build_source
from .errors import ConfigurationError, DomainError, NumericalError
from .evolution import EvolutionState, SelfSimilarProblem, StepControl, TruncationParams, evolve
from .grid import GridDensity, SizeGrid, build_grid, edge_factor, resample, window_average
from .kernels import KernelSpec, require_profile_admissible, scaling_exponents, smallsize_exponent

logger = logging.getLogger(__name__)

_TINY = 1e-300


@dataclass(frozen=True)
class SteadyReport:
    """Result of a steady-state computation.

    ``residual_norm`` is the stopping quantity of the method that produced the
    report: the mass-weighted L1 norm of the rate for pseudo-time solves, the
    sup-relative change of one sweep for :func:`profile_picard`.
    """

    profile: GridDensity
    residual_norm: float
    mass: float
    flux: FluxProfile
    iterations: int
    stage_history: tuple = ()
    converged: bool = True
    method: str = "pseudo_time"
    params: Optional[TruncationParams] = None
    overflow_mass: float = 0.0
    truncated_mass: float = 0.0
    max_mass: float = 0.0
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        g = self.profile.grid
        out = {
            "method": self.method,
            "converged": bool(self.converged),
            "residual_norm": float(self.residual_norm),
            "mass": float(self.mass),
            "max_mass": float(self.max_mass),
            "iterations": int(self.iterations),
            "overflow_mass": float(self.overflow_mass),
            "truncated_mass": float(self.truncated_mass),
            "grid": {"x_min": g.x_min, "x_max": g.x_max, "n_cells": g.n_cells},
            "stage_history": [dict(h) for h in self.stage_history],
        }
        if self.params is not None:
            p = self.params
            out["params"] = {"epsilon": p.epsilon, "a": p.a, "R": p.R, "A": p.A,
                             "sigma": p.sigma, "band": p.band}
        out.update({k: v for k, v in self.extras.items()})
        return out


# ---------------------------------------------------------------------------
# truncated steady states
# ---------------------------------------------------------------------------

def stage_grid(params: TruncationParams, cells_per_decade: float = 24.0,
               x_max_factor: float = 10.0) -> SizeGrid:
    """Grid ``[eps, x_max_factor * R]`` with roughly ``cells_per_decade`` cells per decade."""
    if x_max_factor < 2:
        raise ConfigurationError("x_max_factor must be at least 2 so the grid reaches 2R")
    x_max = x_max_factor * params.R
    n = int(math.ceil(math.log10(x_max / params.epsilon) * cells_per_decade))
    return build_grid(params.epsilon, x_max, max(n, 8))


def mass_weighted_l1(grid: SizeGrid, rate: np.ndarray) -> float:
    return float(np.sum(grid.centers * np.abs(rate) * grid.widths))


def find_truncated_steady(spec: KernelSpec, params: TruncationParams,
                          init: Optional[GridDensity] = None, tol: float = 1e-8, *,
                          grid: Optional[SizeGrid] = None,
                          control: StepControl = StepControl(dt_max=0.1),
                          max_steps: int = 500_000, workers: int = 1,
                          source: Optional[SourceProfile] = None) -> SteadyReport:
    """Relax the truncated self-similar evolution until the rate is below ``tol``.

    The run starts from ``init`` (resampled onto ``grid`` when both are given)
    or from zero, which lies inside the invariant region ``int xi phi <= 1``.
    The largest first moment seen along the way is stored in ``max_mass``.
    ``source`` replaces the default sin^2 bump.
    """
    require_profile_admissible(spec)
    params.validate(spec)
    if grid is None:
        grid = init.grid if init is not None else stage_grid(params)
    start = GridDensity.zeros(grid) if init is None else resample(init, grid)
    problem = SelfSimilarProblem(spec, grid, params, workers=workers, source=source)
    state = EvolutionState(0.0, start, problem.mode, params)
    trace = []
    info = {"steps": 0, "res": math.inf, "max_mass": state.mass}

    def monitor(cur, k1):
        res = mass_weighted_l1(grid, k1[0])
        info["res"] = res
        info["max_mass"] = max(info["max_mass"], cur.mass)
        info["steps"] += 1
        if info["steps"] % 500 == 1:
            trace.append((cur.time, res, cur.mass))
        return res < tol or info["steps"] > max_steps

    # the horizon is a safety net only; the monitor decides when to stop
    traj = evolve(problem, state, 1e6, control, callback=monitor)
    final = traj.final
    if not info["res"] < tol:
        raise NumericalError(
            f"truncated steady state not reached in {max_steps} steps "
            f"(residual {info['res']:.3e} > {tol:.1e})", trace=trace)
    phi = final.density
    return SteadyReport(
        profile=phi, residual_norm=info["res"], mass=phi.moment(1.0),
        flux=problem.pairs.flux(phi), iterations=traj.steps, converged=True,
        method="pseudo_time", params=params, overflow_mass=final.overflow_mass,
        truncated_mass=final.truncated_mass, max_mass=info["max_mass"],
        extras={"pseudo_time": final.time, "clipped_mass": final.clipped_mass})


def flux_inequality_excess(report: SteadyReport, spec: KernelSpec) -> float:
    """``max_z [J(z) - int_0^z x eta - beta z^2 phi(z)]`` over the interior edges.

    Non-positive (up to round-off) for truncated steady states.  ``phi(z)`` is
    the edge value reconstructed from the cell above, as in the transport
    discretisation.
    """
    if report.params is None:
        raise DomainError("flux inequality needs a truncated-stage report")
    _, beta = scaling_exponents(spec)
    g = report.profile.grid
    src = build_source(report.params.epsilon, g)
    z = g.interior_edges
    v = report.profile.values
    rhs = src.mass_below(z) + beta * z ** 2 * (v * edge_factor(v))[1:]
    return float(np.max(report.flux.values - rhs))


# ---------------------------------------------------------------------------
# normalisation and cascades
# ---------------------------------------------------------------------------

def normalize_profile(f: GridDensity, spec: KernelSpec, mass: Optional[float] = None):
    """Rescale ``phi`` to unit first moment using the scaling invariance of the profile equation.

    If ``phi`` carries flux constant ``F`` (and total mass ``F``), then
    ``A phi(B .)`` with ``B = F^{1/(1-g)}``, ``A = F^{(1+g)/(1-g)}`` carries
    flux constant 1.  The grid is rescaled by ``1/B`` so no interpolation is
    involved.  Returns ``(profile, B)``.
    """
    gam = spec.gamma
    F = f.moment(1.0) if mass is None else mass
    if not F > 0:
        raise DomainError("cannot normalise a profile with zero mass")
    B = F ** (1.0 / (1.0 - gam))
    A = F ** ((1.0 + gam) / (1.0 - gam))
    g = f.grid
    ng = build_grid(g.x_min / B, g.x_max / B, g.n_cells)
    return GridDensity(ng, A * f.values), B


@dataclass(frozen=True)
class CascadeSchedule:
    """Sequence of truncation stages with shrinking ``eps`` and growing ``a``, ``R``.

    Consecutive stages may repeat a value (for instance a fixed ``R`` while
    ``eps`` shrinks) but never move it the wrong way.
    """

    spec: KernelSpec
    stages: tuple
    tol: tuple
    cells_per_decade: float = 24.0
    x_max_factor: float = 10.0
    grids: Optional[tuple] = None

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise ConfigurationError("cascade schedule needs at least one stage")
        tol = self.tol
        tol = tuple([float(tol)] * len(stages)) if np.isscalar(tol) else tuple(float(t) for t in tol)
        if len(tol) != len(stages):
            raise ConfigurationError("one tolerance per stage is required")
        if any(not t > 0 for t in tol):
            raise ConfigurationError("stage tolerances must be positive")
        errs = []
        for k, (p, q) in enumerate(zip(stages, stages[1:]), start=1):
            if q.epsilon > p.epsilon:
                errs.append(f"stage {k}: epsilon increases ({p.epsilon:g} -> {q.epsilon:g})")
            if q.a < p.a:
                errs.append(f"stage {k}: a decreases ({p.a:g} -> {q.a:g})")
            if q.R < p.R:
                errs.append(f"stage {k}: R decreases ({p.R:g} -> {q.R:g})")
        for p in stages:
            try:
                p.validate(self.spec)
            except ConfigurationError as exc:
                errs.append(str(exc))
        if self.grids is not None and len(self.grids) != len(stages):
            errs.append("one grid per stage is required")
        if errs:
            raise ConfigurationError("; ".join(errs))
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "tol", tol)

    def grid(self, k: int) -> SizeGrid:
        if self.grids is not None:
            return self.grids[k]
        return stage_grid(self.stages[k], self.cells_per_decade, self.x_max_factor)


def _drift(prev: GridDensity, cur: GridDensity, z_lo=0.1, z_hi=1.0, n=9) -> float:
    z = np.geomspace(z_lo, z_hi, n)
    ok = (z * 8 / 9 >= max(prev.grid.x_min, cur.grid.x_min)) & (z <= min(prev.grid.x_max, cur.grid.x_max))
    if not np.any(ok):
        return math.nan
    a = window_average(prev, z[ok])
    b = window_average(cur, z[ok])
    return float(np.max(np.abs(b - a) / np.maximum(np.abs(b), _TINY)))


def run_cascade(schedule: CascadeSchedule, tol: Optional[float] = None, *,
                control: StepControl = StepControl(dt_max=0.1), workers: int = 1,
                on_stage=None) -> SteadyReport:
    """Warm-started sequence of truncated solves; the last profile is normalised.

    ``stage_history`` holds one record per stage, including the relative drift
    of window averages on ``[0.1, 1]`` against the previous stage.  A failing
    stage raises :class:`NumericalError` whose ``trace`` carries the history so
    far.  ``on_stage(k, report)`` is called after every stage.
    """
    spec = schedule.spec
    history = []
    prev = None
    rep = None
    for k, params in enumerate(schedule.stages):
        stol = schedule.tol[k] if tol is None else tol
        grid = schedule.grid(k)
        try:
            rep = find_truncated_steady(spec, params, prev, stol, grid=grid, control=control,
                                        workers=workers)
        except NumericalError as exc:
            raise NumericalError(f"cascade stage {k} failed: {exc}", trace=history + [exc.trace]) from exc
        drift = math.nan if prev is None else _drift(prev, rep.profile)
        history.append({
            "stage": k, "epsilon": params.epsilon, "a": params.a, "R": params.R,
            "n_cells": grid.n_cells, "residual": rep.residual_norm, "mass": rep.mass,
            "max_mass": rep.max_mass, "steps": rep.iterations, "drift": drift,
            "overflow_mass": rep.overflow_mass, "truncated_mass": rep.truncated_mass,
        })
        logger.info("cascade stage %d: eps=%g a=%g R=%g mass=%.8f drift=%s",
                    k, params.epsilon, params.a, params.R, rep.mass, drift)
        if on_stage is not None:
            on_stage(k, rep)
        prev = rep.profile
    phi, B = normalize_profile(rep.profile, spec)
    flux = PairTable(spec, phi.grid).flux(phi)
    extras = dict(rep.extras)
    extras.update({"normalization_scale": B, "stage_mass": rep.mass})
    return SteadyReport(
        profile=phi, residual_norm=rep.residual_norm, mass=phi.moment(1.0), flux=flux,
        iterations=sum(h["steps"] for h in history), stage_history=tuple(history),
        converged=True, method="cascade", params=schedule.stages[-1],
        overflow_mass=rep.overflow_mass, truncated_mass=rep.truncated_mass,
        max_mass=max(h["max_mass"] for h in history), extras=extras)


# ---------------------------------------------------------------------------
# flux boundary condition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlateauStat:
    mean: float
    deviation: float
    window: tuple
    band: float
    passed: bool

    def as_dict(self) -> dict:
        return {"mean": self.mean, "deviation": self.deviation, "window": list(self.window),
                "band": self.band, "passed": self.passed}


def check_flux_boundary(report: SteadyReport, band: float = 0.15, z_lo: Optional[float] = None,
                        z_hi: float = 0.1) -> PlateauStat:
    """Mean and spread of ``J`` over ``[z_lo, z_hi]``; passes iff ``|mean - 1| <= band``.

    ``z_lo`` defaults to ``10 eps`` for truncated reports and to ``10 x_min``
    otherwise.
    """
    g = report.profile.grid
    if z_lo is None:
        z_lo = 10 * (report.params.epsilon if report.params is not None else g.x_min)
    z = report.flux.z
    sel = (z >= z_lo * (1 - 1e-12)) & (z <= z_hi * (1 + 1e-12))
    if not np.any(sel):
        raise DomainError(f"no grid edges in the plateau window [{z_lo:g}, {z_hi:g}]")
    J = report.flux.values[sel]
    mean = float(np.mean(J))
    dev = float(np.max(np.abs(J - mean)))
    return PlateauStat(mean, dev, (float(z_lo), float(z_hi)), band, bool(abs(mean - 1.0) <= band))


# ---------------------------------------------------------------------------
# the profile identity
# ---------------------------------------------------------------------------

def identity_target(J, M, z, gamma: float):
    """Literal rearrangement ``(1-g)/(2 z^2) max(0, J - 1 + M)`` of the identity."""
    z = np.asarray(z, float)
    return (1.0 - gamma) / (2.0 * z ** 2) * np.maximum(0.0, np.asarray(J) - 1.0 + np.asarray(M))


def identity_residual(J, M, z, phi, gamma: float):
    """``J - 1 + M - beta z^2 phi`` pointwise."""
    beta = 2.0 / (1.0 - gamma)
    z = np.asarray(z, float)
    return np.asarray(J) - 1.0 + np.asarray(M) - beta * z ** 2 * np.asarray(phi)


class _GhostedIdentity:
    """The cell-balance map on ``grid`` extended downwards by frozen power-law cells."""

    def __init__(self, spec: KernelSpec, grid: SizeGrid, ghost_decades: float, workers: int):
        self.spec = spec
        self.grid = grid
        self.k = -smallsize_exponent(spec.gamma)         # phi ~ c x^{-k}
        _, self.beta = scaling_exponents(spec)
        r = grid.ratio
        ng = int(math.ceil(ghost_decades * math.log(10) / math.log(r)))
        self.ng = ng
        self.ext = build_grid(grid.x_min / r ** ng, grid.x_max, grid.n_cells + ng)
        self.pairs = PairTable(spec, self.ext, workers=workers)
        x, w, e = self.ext.centers, self.ext.widths, self.ext.edges
        self.x, self.w, self.e = x, w, e
        self.ghost_shape = x[:ng] ** (-self.k)
        # Deposits that land back in one of the two colliding cells.  Moving
        # them to the left-hand side keeps the map well conditioned: a large
        # particle hit by a tiny one mostly stays in its own cell.  A
        # participant of mass x_k can only land at lo == k (the merged mass
        # exceeds x_k).  Below the top cell a fraction n_hi of it then leaves;
        # the top cell keeps the mass-exact count m / x_top, a net count gain
        # of x_j / x_top.  Both fractions are formed directly, so no large
        # frequencies are subtracted.
        pt = self.pairs
        m = self.ext.n_cells
        rows = np.repeat(np.arange(m), m)
        cols = np.tile(np.arange(m), m)
        self.w_lo = pt.n_lo * ~((pt.lo == rows) | (pt.lo == cols))
        self.w_hi = pt.n_hi * ~((pt.hi == rows) | (pt.hi == cols))
        lands = (pt.lo == rows) & pt.inside.ravel()
        leave = np.where(rows == m - 1, -x[cols] / x[m - 1], pt.n_hi)
        self.K_net = pt.K * np.where(lands, leave, 1.0).reshape(m, m)
        n = grid.n_cells
        self.diag_transport = self.beta * e[ng:-1] ** 2
        self.upper = np.zeros(n)
        self.upper[1:] = -self.beta * e[ng + 1:-1] ** 2

    def full(self, amp: float, free: np.ndarray) -> np.ndarray:
        return np.concatenate([amp * self.ghost_shape, free])

    def target(self, amp: float, free: np.ndarray) -> np.ndarray:
        """Exact top-down solve of the cell balances with coagulation terms from ``free``."""
        ng = self.ng
        phi = self.full(amp, free)
        N = phi * self.w
        pt = self.pairs
        m = self.ext.n_cells
        ev = (0.5 * pt.K * np.outer(N, N)).ravel()
        gain = (np.bincount(pt.lo, weights=ev * self.w_lo, minlength=m)
                + np.bincount(pt.hi, weights=ev * self.w_hi, minlength=m))
        net = self.K_net @ N                             # loss frequency net of self-return
        gain = (gain * self.x)[ng:]
        # edge reconstruction is lagged: its factors come from the current iterate
        rho = edge_factor(phi)[ng:]
        diag = (self.x * self.w * (1.0 + net))[ng:] + self.diag_transport * rho
        if np.any(diag <= 0):
            raise NumericalError("non-positive removal coefficient in the cell-balance map")
        upper = self.upper.copy()
        upper[1:] *= rho[1:]
        ab = np.vstack([upper, diag])
        out = solve_banded((0, 1), ab, gain)
        return np.maximum(out, _TINY)

    def below_mass(self, amp: float) -> float:
        """Mass of the power law below the lowest ghost edge."""
        x0 = self.ext.x_min
        return amp * x0 ** (2.0 - self.k) / (2.0 - self.k)

    def identity_terms(self, amp: float, free: np.ndarray):
        """``(z, J, M, phi_edge)`` at the interior edges of the user grid."""
        ng = self.ng
        phi = self.full(amp, free)
        f = GridDensity(self.ext, phi)
        J = self.pairs.flux(f).values                   # interior edges of the extended grid
        M = np.cumsum(self.x * phi * self.w)[:-1] + self.below_mass(amp)
        z = self.e[1:-1]
        up = (phi * edge_factor(phi))[1:]            # edge value above each interior edge
        sl = slice(ng, None)
        return z[sl], J[sl], M[sl], up[sl]


def flux_power_law_constant(spec: KernelSpec) -> float:
    """Amplitude ``c`` for which ``c x^{-(3+g)/2}`` carries unit flux on a fine grid.

    Evaluated as ``int_0^1 int_{1-x}^inf x K(x, y) x^{-k} y^{-k} dy dx`` by
    adaptive quadrature.
    """
    from scipy.integrate import quad

    k = -smallsize_exponent(spec.gamma)

    def inner(x):
        val, _ = quad(lambda y: float(spec.raw(x, y)) * y ** (-k), 1.0 - x, np.inf, limit=200)
        return x ** (1.0 - k) * val

    total, _ = quad(inner, 0.0, 1.0, limit=200)
    return total ** -0.5


def profile_picard(spec: KernelSpec, grid: SizeGrid, damping: float = 0.3, tol: float = 1e-10,
                   init: Optional[GridDensity] = None, *, ghost_amplitude: Optional[float] = None,
                   ghost_decades: float = 6.0, max_sweeps: int = 20_000, max_rounds: int = 40,
                   workers: int = 1) -> SteadyReport:
    """Solve the profile identity with unit flux on ``grid``.

    Below ``grid.x_min`` the profile is represented by ``ghost_decades``
    decades of cells holding ``c x^{-(3+g)/2}``; they supply the flux coming
    from the origin.  Each round

    1. sweeps ``phi <- (1 - damping) phi + damping T(phi)`` at fixed ``c``
       until one undamped sweep changes ``phi`` by less than ``tol``
       (sup-relative);
    2. measures ``F = J + M - beta z^2 phi``, which the cell balances make
       constant along the grid (it equals total mass plus overflow rate);
    3. rescales ``c`` and ``phi`` by ``F^{-1/2}``, the amplitude part of the
       scaling invariance of the identity.

    Rounds stop once ``|F - 1| <= 10 tol``.  ``ghost_amplitude`` restarts
    from a previous run's value.
    """
    require_profile_admissible(spec)
    if not 0 < damping <= 1:
        raise ConfigurationError("damping must lie in (0, 1]")
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    sys_ = _GhostedIdentity(spec, grid, ghost_decades, workers)
    x = grid.centers
    if init is not None:
        if init.grid != grid:
            init = resample(init, grid)
        free = np.maximum(init.values, _TINY)
        amp = ghost_amplitude if ghost_amplitude is not None else float(free[0] * x[0] ** sys_.k)
    else:
        amp = ghost_amplitude if ghost_amplitude is not None else flux_power_law_constant(spec)
        free = amp * x ** (-sys_.k) * np.exp(-x)
    if not amp > 0:
        raise DomainError("ghost amplitude must be positive")

    history = []
    iterations = 0
    oscillating = False
    F = math.nan
    change = math.inf
    for rnd in range(max_rounds):
        recent = []
        while True:
            tgt = sys_.target(amp, free)
            change = float(np.max(np.abs(tgt - free) / free))
            iterations += 1
            recent.append(change)
            if change < tol:
                break
            if len(recent) > max_sweeps:
                raise NumericalError(
                    f"picard sweeps did not converge (change {change:.3e})"
                    + ("; sweeps were non-monotone, try a smaller damping" if oscillating else ""),
                    trace=history + [recent[-20:]])
            # the change ripples by a factor of a few from sweep to sweep; only a best
            # value that stops improving over a hundred sweeps counts as stalling
            if (len(recent) >= 300 and min(recent[-100:]) > 0.5 * min(recent[:-100])
                    and recent[-1] > 1e3 * tol and not oscillating):
                oscillating = True
                logger.warning("picard sweeps are not contracting; consider a smaller damping")
            free = (1.0 - damping) * free + damping * tgt
        z, J, M, up = sys_.identity_terms(amp, free)
        F = float(np.median(J + M - sys_.beta * z ** 2 * up))
        history.append({"round": rnd, "amplitude": amp, "flux_constant": F,
                        "sweeps": len(recent), "change": change})
        logger.info("picard round %d: amplitude=%.12g F=%.12g sweeps=%d", rnd, amp, F, len(recent))
        if abs(F - 1.0) <= 10 * tol:
            break
        amp /= math.sqrt(F)
        free = free / math.sqrt(F)
    else:
        raise NumericalError(f"flux constant not calibrated (F={F:.6g})", trace=history)

    z, J, M, up = sys_.identity_terms(amp, free)
    resid = identity_residual(J, M, z, up, spec.gamma)
    phi = GridDensity(grid, free)
    mass_total = float(M[-1] + x[-1] * free[-1] * grid.widths[-1])
    extras = {
        "identity_residual": float(np.max(np.abs(resid))),
        "ghost_amplitude": amp,
        "ghost_decades": ghost_decades,
        "flux_constant": F,
        "damping": damping,
    }
    return SteadyReport(profile=phi, residual_norm=change, mass=mass_total, flux=FluxProfile(grid, J),
                        iterations=iterations, stage_history=tuple(history), converged=True,
                        method="picard", params=None, max_mass=mass_total, extras=extras)
