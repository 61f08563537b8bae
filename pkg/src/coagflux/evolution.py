"""Explicit time integration of the coagulation equations.

Two right-hand sides share one integrator:

* ``physical``: ``df/dt = K[f] + eta_eps`` in size/time variables;
* ``selfsimilar_truncated``: the truncated problem in self-similar variables,

      dphi/dtau = -phi + beta (1/xi) d/dxi (xi^2 Xi_eps phi) + K_{a,R}[phi] + eta_eps,

  with ``beta = 2 / (1 - gamma)``.

The transport term is discretised in mass-conservative form.  Multiplying by
``xi`` turns it into ``beta d/dxi (xi^2 Xi phi)``, a flux ``G = beta e^2 Xi(e) phi(e)``
through each edge ``e``.  Characteristics move towards the origin, so ``phi(e)``
is reconstructed from the cell above the edge, using a minmod-limited slope
of ``ln phi`` (see :func:`grid.edge_factor`).  Pure upwinding smears the
exponential tail badly; the limited reconstruction keeps power laws exact and
is second order elsewhere.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .coagulation import PairTable, SourceProfile, build_source, cutoff_xi, cutoff_zeta
from .errors import ConfigurationError, DomainError, NumericalError
from .grid import GridDensity, SizeGrid, build_grid, edge_factor, resample
from .kernels import KernelSpec, check_sigma_rule, scaling_exponents, \
    singularity_exponent, truncate_kernel

logger = logging.getLogger(__name__)

MODES = ("physical", "selfsimilar_truncated")


@dataclass(frozen=True)
class TruncationParams:
    """Cut-off triple ``(eps, a, R)`` plus the bounded-kernel constants ``(A, sigma)``.

    ``A``/``sigma`` set to ``None`` pick the kernel defaults; ``a = inf``
    disables the kernel bound (``K`` itself is used).
    """

    epsilon: float
    a: float
    R: float
    A: Optional[float] = None
    sigma: Optional[float] = None
    band: float = 0.1

    def validate(self, spec: Optional[KernelSpec] = None) -> None:
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not 2 * self.epsilon < self.R:
            raise ConfigurationError(f"need 2 eps < R (eps={self.epsilon:g}, R={self.R:g})")
        if not self.a > 1:
            raise ConfigurationError(f"kernel bound a must exceed 1 (got {self.a:g})")
        if spec is not None and self.sigma is not None:
            check_sigma_rule(singularity_exponent(spec.gamma, spec.lam), spec.gamma, self.sigma)


@dataclass(frozen=True)
class StepControl:
    dt_max: float = 0.05
    safety: float = 0.5
    tol_positivity: float = 1e-14
    dt_min: float = 1e-12

    def __post_init__(self):
        if not 0 < self.safety <= 1:
            raise ConfigurationError("safety must lie in (0, 1]")
        if not self.dt_max > 0:
            raise ConfigurationError("dt_max must be positive")


@dataclass
class EvolutionState:
    time: float
    density: GridDensity
    mode: str
    params: Optional[TruncationParams] = None
    overflow_mass: float = 0.0
    truncated_mass: float = 0.0
    clipped_mass: float = 0.0

    @property
    def mass(self) -> float:
        return self.density.moment(1.0)

    def snapshot(self) -> "EvolutionState":
        return replace(self, density=self.density.copy())


class PhysicalProblem:
    """``df/dt = K[f] + eta`` on a fixed grid.

    ``kernel=None`` gives the pure-source problem (zero kernel).
    """

    mode = "physical"

    def __init__(self, kernel: Optional[Callable], grid: SizeGrid, source: Optional[SourceProfile],
                 workers: int = 1):
        self.grid = grid
        self.kernel = kernel
        self.source = source
        self.pairs = None if kernel is None else PairTable(kernel, grid, workers=workers)
        self.eta = np.zeros(grid.n_cells) if source is None else source.values.copy()

    def rates(self, values: np.ndarray):
        """Return ``(density rate, loss frequency, overflow rate, truncated rate)``."""
        g = self.grid
        if self.pairs is None:
            return self.eta.copy(), np.zeros(g.n_cells), 0.0, 0.0
        N = values * g.widths
        dN, ov, tr = self.pairs.count_rates(N)
        freq = self.pairs.K @ N
        return dN / g.widths + self.eta, freq, ov, tr


class SelfSimilarProblem:
    """Truncated self-similar problem for one kernel, one grid, one ``(eps, a, R)``."""

    mode = "selfsimilar_truncated"

    def __init__(self, spec: KernelSpec, grid: SizeGrid, params: TruncationParams,
                 workers: int = 1, kernel: Optional[Callable] = None,
                 source: Optional[SourceProfile] = None, coagulation: bool = True):
        params.validate(spec)
        if grid.x_min > params.epsilon:
            raise ConfigurationError(
                f"grid must start at or below eps (x_min={grid.x_min:g}, eps={params.epsilon:g})")
        if grid.x_max < 2 * params.R:
            raise ConfigurationError(
                f"grid must reach 2R (x_max={grid.x_max:g}, R={params.R:g})")
        self.spec = spec
        self.grid = grid
        self.params = params
        _, self.beta = scaling_exponents(spec)
        if kernel is None:
            kernel = spec if math.isinf(params.a) else truncate_kernel(
                spec, params.a, params.A, params.sigma, params.band)
        self.kernel = kernel
        zeta = None if math.isinf(params.R) else (lambda m: cutoff_zeta(params.R, m))
        self.pairs = PairTable(kernel, grid, zeta=zeta, workers=workers) if coagulation else None
        self.source = source if source is not None else build_source(params.epsilon, grid)
        self.eta = self.source.values.copy()
        e = grid.edges
        self.xi_edges = cutoff_xi(params.epsilon, e)
        # edge transport coefficient: mass flux through edge k is coef[k] * phi[k]
        self.edge_coef = self.beta * e ** 2 * self.xi_edges
        self.cell_mass_unit = grid.centers * grid.widths

    def transport(self, values: np.ndarray, rho: Optional[np.ndarray] = None) -> np.ndarray:
        n = self.grid.n_cells
        if rho is None:
            rho = edge_factor(values)
        G = np.zeros(n + 1)
        G[:n] = self.edge_coef[:n] * rho * values    # value reconstructed from the cell above edge k
        return (G[1:] - G[:-1]) / self.cell_mass_unit

    def transport_outflow(self, rho: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-cell outflow frequency of the transport term."""
        out = self.edge_coef[:-1] / self.cell_mass_unit
        return out if rho is None else out * rho

    def rates(self, values: np.ndarray):
        g = self.grid
        rho = edge_factor(values)
        rate = -values + self.transport(values, rho) + self.eta
        freq = 1.0 + self.transport_outflow(rho)
        ov = tr = 0.0
        if self.pairs is not None:
            N = values * g.widths
            dN, ov, tr = self.pairs.count_rates(N)
            rate = rate + dN / g.widths
            freq = freq + self.pairs.K @ N
        return rate, freq, ov, tr


def rhs_physical(problem: PhysicalProblem, state: EvolutionState) -> GridDensity:
    if state.mode != "physical":
        raise DomainError("rhs_physical needs a physical-mode state")
    return GridDensity(problem.grid, problem.rates(state.density.values)[0])


def rhs_selfsimilar(problem: SelfSimilarProblem, state: EvolutionState) -> GridDensity:
    if state.mode != "selfsimilar_truncated":
        raise DomainError("rhs_selfsimilar needs a selfsimilar_truncated state")
    return GridDensity(problem.grid, problem.rates(state.density.values)[0])


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    steps: int = 0
    rejected: int = 0
    dt_min_used: float = math.inf
    dt_max_used: float = 0.0

    @property
    def times(self):
        return [s.time for s in self.states]

    @property
    def final(self) -> EvolutionState:
        return self.states[-1]


def heun_step(problem, values: np.ndarray, dt: float, k1=None):
    """One Heun step.  Returns ``(new values, overflow mass, truncated mass, clipped mass)``."""
    g = problem.grid
    if k1 is None:
        k1 = problem.rates(values)
    r1, _, ov1, tr1 = k1
    pred = values + dt * r1
    np.maximum(pred, 0.0, out=pred)
    r2, _, ov2, tr2 = problem.rates(pred)
    new = values + 0.5 * dt * (r1 + r2)
    neg = new < 0
    clipped = 0.0
    if np.any(neg):
        clipped = float(-np.sum(new[neg] * g.centers[neg] * g.widths[neg]))
        new[neg] = 0.0
    return new, 0.5 * dt * (ov1 + ov2), 0.5 * dt * (tr1 + tr2), clipped


def stable_dt(problem, values, k1, control: StepControl, t_left: float) -> float:
    freq = k1[1]
    fmax = float(np.max(freq)) if freq.size else 0.0
    dt = control.dt_max if fmax <= 0 else min(control.dt_max, control.safety / fmax)
    return min(dt, t_left)


def evolve(problem, state: EvolutionState, t_end: float, control: StepControl = StepControl(),
           checkpoints: Optional[Sequence[float]] = None, callback=None) -> Trajectory:
    """Integrate ``state`` to ``t_end``; record states at ``checkpoints`` (and at ``t_end``).

    The step keeps every cell's removal below ``safety`` of its content per
    step.  A step whose corrector goes negative by more than
    ``tol_positivity`` (relative to the mass) is halved and retried; what is
    left is round-off, clipped and booked in ``clipped_mass``.  ``callback(state, k1)`` may return ``True`` to
    stop early.
    """
    if not t_end > state.time:
        raise DomainError("t_end must exceed the current time")
    if state.mode != problem.mode:
        raise DomainError(f"state mode {state.mode!r} does not match problem mode {problem.mode!r}")
    cps = sorted(t for t in (checkpoints or []) if state.time < t < t_end) + [t_end]
    traj = Trajectory()
    cur = state.snapshot()
    vals = cur.density.values
    grid = problem.grid
    mass = cur.mass
    for target in cps:
        while cur.time < target * (1 - 1e-15):
            k1 = problem.rates(vals)
            if callback is not None:
                cur.density = GridDensity(grid, vals)
                if callback(cur, k1):
                    traj.states.append(cur.snapshot())
                    return traj
            dt = stable_dt(problem, vals, k1, control, target - cur.time)
            if dt < control.dt_min and target - cur.time > control.dt_min:
                raise NumericalError(f"time step underflow at t={cur.time:g} (dt={dt:g})")
            while True:
                new, ov, tr, cl = heun_step(problem, vals, dt, k1)
                # the corrector overshot below zero: retry with a shorter step
                if cl <= control.tol_positivity * max(mass, 1.0) or dt <= control.dt_min:
                    break
                dt *= 0.5
                traj.rejected += 1
            vals = new
            mass = float(np.sum(vals * grid.centers * grid.widths))
            cur.time = target if target - (cur.time + dt) < 1e-14 * max(1.0, target) else cur.time + dt
            cur.overflow_mass += ov
            cur.truncated_mass += tr
            cur.clipped_mass += cl
            traj.steps += 1
            traj.dt_min_used = min(traj.dt_min_used, dt)
            traj.dt_max_used = max(traj.dt_max_used, dt)
        cur.density = GridDensity(grid, vals)
        traj.states.append(cur.snapshot())
    return traj


def geometric_checkpoints(t0: float, t1: float, n: int) -> list:
    """``n`` geometrically spaced times in ``(t0, t1]`` (``t0 > 0``)."""
    return list(np.geomspace(t0, t1, n + 1)[1:])


def rescale_physical(f: GridDensity, t: float, spec: KernelSpec,
                     grid: Optional[SizeGrid] = None) -> GridDensity:
    """Self-similar rescaling ``phi(xi) = t^alpha f(xi t^beta)``.

    Without ``grid`` the physical grid is mapped onto ``edges / t^beta`` (exact,
    no interpolation); otherwise the result is conservatively resampled.
    """
    if not t > 0:
        raise DomainError("rescaling time must be positive")
    alpha, beta = scaling_exponents(spec)
    g = f.grid
    sg = build_grid(g.x_min / t ** beta, g.x_max / t ** beta, g.n_cells)
    phi = GridDensity(sg, f.values * t ** alpha)
    return phi if grid is None else resample(phi, grid)


def zero_state(grid: SizeGrid, mode: str, params: Optional[TruncationParams] = None) -> EvolutionState:
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return EvolutionState(0.0, GridDensity.zeros(grid), mode, params)
