"""Forward solver for the trapping initial-boundary-value problem.

One step of `advance` composes, in this order:

1. semi-Lagrangian transport of the interior density along
   (cos th, sin th), conservative fractional-cell translation per angular
   slice; mass crossing the wall is collected per (x1, theta), mass
   leaving through the top is recorded as escape;
2. absorption of the collected wall flux into the trapped line densities
   (downward-right arc into rho+, downward-left arc into rho-, the node
   exactly at -pi/2 split evenly);
3. implicit Euler angular diffusion with a periodic cyclic-tridiagonal
   operator (exact column-mass conservation, positivity via the M-matrix
   inverse);
4. free transport of rho+/rho- at speed +-1 (exact circular translation).

The x1 window is periodic; experiments size it so nothing wraps.  Total
(interior + trapped + escaped) mass is conserved to rounding at every
step, and interior mass is non-increasing by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import _kernels
from .core import (BoundaryDensityPair, GridSpec, MassLedger, PhaseField,
                   PhasePoint, ReducedField, integrate_field, make_ledger,
                   wrap_angle)


@dataclass
class KineticState:
    f: PhaseField
    boundary: BoundaryDensityPair
    time: float = 0.0
    escaped: float = 0.0
    ledger: MassLedger = field(init=False)

    def __post_init__(self):
        self.ledger = make_ledger(self.f, self.boundary, self.escaped)


@dataclass
class ReducedState:
    rho1: ReducedField
    trapped_plus: float = 0.0
    trapped_minus: float = 0.0
    time: float = 0.0
    escaped: float = 0.0

    @property
    def interior_mass(self) -> float:
        return integrate_field(self.rho1)

    @property
    def total(self) -> float:
        return (self.interior_mass + self.trapped_plus + self.trapped_minus
                + self.escaped)


# ----------------------------------------------------------------------
# initial data
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class InitialCondition:
    """Smoothed point mass / product Gaussian / explicit table."""

    kind: str = "point"
    center: PhasePoint = PhasePoint(0.0, 1.0, -math.pi / 2)
    widths: tuple = (0.25, 0.25, 0.5)
    table: np.ndarray | None = None
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "table"):
            raise ValueError(f"unknown initial-condition kind {self.kind!r}")


def _wrapped_gauss(dist: np.ndarray, width: float, period: float) -> np.ndarray:
    """Gaussian bump on a circle (3 images suffice for width << period)."""
    out = np.zeros_like(dist)
    for shift in (-period, 0.0, period):
        out += np.exp(-0.5 * ((dist + shift) / width) ** 2)
    return out


def _gauss_cell_avg(dist: np.ndarray, width: float, delta: float,
                    period: float | None = None) -> np.ndarray:
    """Cell average of a (possibly wrapped) unit-height Gaussian over
    cells of size delta centered at the given distances from the peak."""
    from scipy.special import erf
    shifts = (0.0,) if period is None else (-period, 0.0, period)
    out = np.zeros_like(dist)
    root2w = math.sqrt(2.0) * width
    for s in shifts:
        a = (dist + s - delta / 2.0) / root2w
        b = (dist + s + delta / 2.0) / root2w
        out += (erf(b) - erf(a)) * width * math.sqrt(math.pi / 2.0) / delta
    return out


def init_state(ic: InitialCondition, grid: GridSpec) -> KineticState:
    """Build the starting state; unit total mass unless normalize=False."""
    rho_p = np.zeros(grid.n_x1)
    rho_m = np.zeros(grid.n_x1)

    if ic.kind == "table":
        if ic.table is None:
            raise ValueError("table initial condition needs a table")
        values = np.array(ic.table, dtype=float)  # negativity checked below
        if np.any(values < 0.0):
            raise ValueError("initial table has negative entries")
    else:
        c = ic.center
        w1, w2, wth = ic.widths
        if ic.kind == "point":
            # narrow bump regardless of configured widths
            w1 = min(w1, 2.0 * grid.dx1)
            w2 = min(w2, 2.0 * grid.dx2)
            wth = min(wth, 2.0 * grid.dtheta)
        if c.x2 == 0.0:
            # a wall start is admissible only along the wall, and the mass
            # belongs to the trapped densities from the outset
            if not (abs(c.theta) < 1e-12
                    or abs(wrap_angle(c.theta + math.pi)) < 1e-12):
                raise ValueError("a point mass on the wall must point along "
                                 "theta = 0 or theta = -pi")
            span = grid.x1_max - grid.x1_min
            bump = _wrapped_gauss(grid.x1 - c.x1, w1, span)
            bump /= bump.sum() * grid.dx1
            if abs(c.theta) < 1e-12:
                rho_p = bump
            else:
                rho_m = bump
            f = PhaseField(np.zeros((grid.n_x1, grid.n_x2, grid.n_theta)),
                           grid)
            return KineticState(f, BoundaryDensityPair(rho_p, rho_m, grid))
        span = grid.x1_max - grid.x1_min
        g1 = _gauss_cell_avg(grid.x1 - c.x1, w1, grid.dx1, span)
        g2 = _gauss_cell_avg(grid.x2 - c.x2, w2, grid.dx2)
        gth = _gauss_cell_avg(wrap_angle(grid.theta - c.theta), wth,
                              grid.dtheta, 2.0 * math.pi)
        values = g1[:, None, None] * g2[None, :, None] * gth[None, None, :]

    values[:, 0, :] = 0.0  # the wall row never carries standing mass
    f = PhaseField(values, grid)
    total = integrate_field(f)
    if ic.normalize:
        if total <= 0.0:
            raise ValueError("initial condition has no interior mass")
        f = PhaseField(values / total, grid)
    return KineticState(f, BoundaryDensityPair(rho_p, rho_m, grid))


# ----------------------------------------------------------------------
# substeps
# ----------------------------------------------------------------------

def transport_substep(f: PhaseField, dt: float):
    """Translate each angular slice by dt (cos th, sin th).

    Returns (new field, wall outflow mass per (x1, theta), escape mass per
    (x1, theta)).  field + outflow + escape add up to the input mass.
    """
    grid = f.grid
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if dt > min(grid.dx1, grid.dx2) + 1e-12:
        raise ValueError(f"dt={dt} exceeds the one-cell transport bound "
                         f"{min(grid.dx1, grid.dx2)}")
    s1 = dt * grid.cos_theta / grid.dx1
    s2 = dt * grid.sin_theta / grid.dx2
    out, bottom, top = _kernels.transport_shift(f.values, s1, s2)
    measure = grid.cell_measure
    return PhaseField(out, grid), bottom * measure, top * measure


def absorb_boundary(outflow: np.ndarray, boundary: BoundaryDensityPair,
                    dt: float) -> BoundaryDensityPair:
    """Deposit the wall outflow into rho+/rho-: angles in (-pi/2, 0) feed
    rho+, angles in (-pi, -pi/2) feed rho-, the -pi/2 node splits evenly."""
    grid = boundary.grid
    k_half = grid.k_theta_minus_half_pi
    k_zero = grid.k_theta_zero
    plus_mass = outflow[:, k_half + 1:k_zero].sum(axis=1) \
        + 0.5 * outflow[:, k_half]
    minus_mass = outflow[:, 1:k_half].sum(axis=1) \
        + 0.5 * outflow[:, k_half]
    # nodes at theta = 0 and -pi have sin=0 and never emit outflow; any
    # residual mass there would indicate a bookkeeping bug
    leftover = outflow[:, 0].sum() + outflow[:, k_zero:].sum()
    if leftover > 0.0:
        raise AssertionError("outflow recorded at non-incoming angles")
    return BoundaryDensityPair(boundary.rho_plus + plus_mass / grid.dx1,
                               boundary.rho_minus + minus_mass / grid.dx1,
                               grid)


@lru_cache(maxsize=16)
def _diffusion_matrix(n_theta: int, coef: float) -> np.ndarray:
    """Inverse of the implicit periodic heat operator I - coef * C, with C
    the cyclic second difference; entries are nonnegative and columns sum
    to one, so applying it conserves column mass and positivity."""
    mat = np.eye(n_theta) * (1.0 + 2.0 * coef)
    idx = np.arange(n_theta)
    mat[idx, (idx + 1) % n_theta] -= coef
    mat[idx, (idx - 1) % n_theta] -= coef
    inv = np.linalg.inv(mat)
    # the M-matrix inverse is strictly positive; clip roundoff dust
    np.maximum(inv, 0.0, out=inv)
    inv /= inv.sum(axis=0, keepdims=True)
    return inv


def theta_diffusion_substep(f: PhaseField, dt: float,
                            D: float | None = None) -> PhaseField:
    """One implicit Euler step of d_t u = D d_theta^2 u per space column."""
    grid = f.grid
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    D = grid.D if D is None else D
    coef = D * dt / grid.dtheta ** 2
    B = _diffusion_matrix(grid.n_theta, coef)
    flat = f.values.reshape(-1, grid.n_theta)
    return PhaseField((flat @ B.T).reshape(f.values.shape), grid)


def transport_rho_pm(boundary: BoundaryDensityPair,
                     dt: float) -> BoundaryDensityPair:
    """Shift rho+ by +dt and rho- by -dt along the periodic x1 window."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    grid = boundary.grid
    shift = dt / grid.dx1

    def circ(arr, s):
        m = int(math.floor(s))
        r = s - m
        rolled = np.roll(arr, m)
        if r == 0.0:
            return rolled
        return (1.0 - r) * rolled + r * np.roll(rolled, 1)

    return BoundaryDensityPair(circ(boundary.rho_plus, shift),
                               circ(boundary.rho_minus, -shift), grid)


# ----------------------------------------------------------------------
# full step
# ----------------------------------------------------------------------

def advance(state: KineticState, dt: float | None = None) -> KineticState:
    """Transport -> absorb -> angular diffusion -> boundary transport."""
    grid = state.f.grid
    dt = grid.dt if dt is None else dt
    f, outflow, top = transport_substep(state.f, dt)
    boundary = absorb_boundary(outflow, state.boundary, dt)
    f = theta_diffusion_substep(f, dt)
    boundary = transport_rho_pm(boundary, dt)
    return KineticState(f, boundary, state.time + dt,
                        state.escaped + float(top.sum()))


def advance_reduced(state: ReducedState, dt: float | None = None
                    ) -> ReducedState:
    """The x1-integrated system: same substeps, trapped masses scalar."""
    grid = state.rho1.grid
    dt = grid.dt if dt is None else dt
    if dt > grid.dx2 + 1e-12:
        raise ValueError(f"dt={dt} exceeds the one-cell transport bound")
    s2 = dt * grid.sin_theta / grid.dx2
    vals = state.rho1.values[None, :, :]
    out, bottom, top = _kernels.transport_shift(vals, np.zeros(grid.n_theta),
                                                s2)
    measure = grid.reduced_cell_measure
    outflow = bottom[0] * measure
    k_half = grid.k_theta_minus_half_pi
    k_zero = grid.k_theta_zero
    plus = float(outflow[k_half + 1:k_zero].sum() + 0.5 * outflow[k_half])
    minus = float(outflow[1:k_half].sum() + 0.5 * outflow[k_half])
    coef = grid.D * dt / grid.dtheta ** 2
    B = _diffusion_matrix(grid.n_theta, coef)
    new_vals = out[0] @ B.T
    return ReducedState(ReducedField(new_vals, grid),
                        state.trapped_plus + plus,
                        state.trapped_minus + minus,
                        state.time + dt,
                        state.escaped + float(top.sum() * measure))


def reduce_state(state: KineticState) -> ReducedState:
    """x1-marginal of a full state."""
    grid = state.f.grid
    rho1 = state.f.values.sum(axis=0) * grid.dx1
    return ReducedState(ReducedField(rho1, grid),
                        state.boundary.mass_plus(),
                        state.boundary.mass_minus(),
                        state.time, state.escaped)


def run(state: KineticState, t_final: float, dt: float | None = None,
        snap_every: int = 0):
    """Advance to t_final; optionally collect every `snap_every`-th state.

    Returns (final state, snapshots) where snapshots always includes the
    initial and final states when snap_every > 0.
    """
    grid = state.f.grid
    dt = grid.dt if dt is None else dt
    n_steps = int(round((t_final - state.time) / dt))
    snaps = [state] if snap_every else []
    for m in range(n_steps):
        state = advance(state, dt)
        if snap_every and ((m + 1) % snap_every == 0 or m == n_steps - 1):
            snaps.append(state)
    return state, snaps


# ----------------------------------------------------------------------
# weak-form residual
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceTimeTestFunction:
    """Smooth test function phi(t, x1, x2, theta) with the analytic
    derivatives the weak form needs.  Callables must broadcast over numpy
    arrays.  The wall trace must satisfy the trapping compatibility
    (constant in theta on each wall arc)."""

    phi: Callable
    d_t: Callable
    d_x1: Callable
    d_x2: Callable
    d_thth: Callable


def _pair(state: KineticState, tf: SpaceTimeTestFunction, t: float) -> float:
    """< f(t), phi(t) > including the trapped line densities."""
    grid = state.f.grid
    X1, X2, TH = np.meshgrid(grid.x1, grid.x2, grid.theta, indexing="ij")
    inner = float((state.f.values * tf.phi(t, X1, X2, TH)).sum()
                  * grid.cell_measure)
    plus = float((state.boundary.rho_plus
                  * tf.phi(t, grid.x1, 0.0, 0.0)).sum() * grid.dx1)
    minus = float((state.boundary.rho_minus
                   * tf.phi(t, grid.x1, 0.0, -math.pi)).sum() * grid.dx1)
    return inner + plus + minus


def weak_residual(states: list[KineticState],
                  tf: SpaceTimeTestFunction) -> float:
    """Absolute defect of the weak-form identity over a trajectory.

    The trajectory must be uniformly sampled in time; the time integral is
    a trapezoid over the snapshots.
    """
    if len(states) < 2:
        raise ValueError("need at least two snapshots")
    grid = states[0].f.grid
    times = np.array([s.time for s in states])
    if np.ptp(np.diff(times)) > 1e-9 * times[-1]:
        raise ValueError("snapshots must be uniformly spaced in time")
    X1, X2, TH = np.meshgrid(grid.x1, grid.x2, grid.theta, indexing="ij")
    cos_t, sin_t = np.cos(TH), np.sin(TH)

    integrand = []
    for s in states:
        op = (tf.d_t(s.time, X1, X2, TH)
              + cos_t * tf.d_x1(s.time, X1, X2, TH)
              + sin_t * tf.d_x2(s.time, X1, X2, TH)
              + tf.d_thth(s.time, X1, X2, TH))
        interior = float((s.f.values * op).sum() * grid.cell_measure)
        bplus = float((s.boundary.rho_plus
                       * (tf.d_t(s.time, grid.x1, 0.0, 0.0)
                          + tf.d_x1(s.time, grid.x1, 0.0, 0.0))).sum()
                      * grid.dx1)
        bminus = float((s.boundary.rho_minus
                        * (tf.d_t(s.time, grid.x1, 0.0, -math.pi)
                           - tf.d_x1(s.time, grid.x1, 0.0, -math.pi))).sum()
                       * grid.dx1)
        integrand.append(interior + bplus + bminus)
    left = float(np.trapezoid(integrand, times))
    right = _pair(states[-1], tf, times[-1]) - _pair(states[0], tf, times[0])
    return abs(left - right)
