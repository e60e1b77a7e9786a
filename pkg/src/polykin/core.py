"""Phase-space geometry, grids, fields, and mass accounting.

Conventions shared by every solver in the package:

* the orientation angle lives in the half-open interval [-pi, pi), with
  -pi and pi identified (periodic);
* the wall is at x2 = 0, the half-plane is x2 >= 0;
* the x1 window is periodic (a truncation of the unbounded line, sized
  per experiment so nothing wraps around);
* the x2 axis is node-centered and includes the wall row x2 = 0, which
  never holds standing interior mass between steps;
* all mass integrals are plain cell sums (value times cell measure), so
  the flux accounting of the kinetic solver is exactly compatible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Angles are plain floats in [-pi, pi); the alias marks intent in signatures.
Angle = float


def wrap_angle(theta: float) -> float:
    """Reduce an angle to the canonical interval [-pi, pi)."""
    if not np.all(np.isfinite(theta)):
        raise ValueError("angle must be finite")
    wrapped = (np.asarray(theta) + math.pi) % TWO_PI - math.pi
    # float roundoff in the modulo can return +pi itself; fold it back
    wrapped = np.where(wrapped >= math.pi, -math.pi, wrapped)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


def _snap_trig(values: np.ndarray) -> np.ndarray:
    """Clean sin/cos of grid angles: exact zeros and +-1 at the axes."""
    out = values.copy()
    out[np.abs(out) < 1e-13] = 0.0
    out[np.abs(out - 1.0) < 1e-13] = 1.0
    out[np.abs(out + 1.0) < 1e-13] = -1.0
    return out


@dataclass(frozen=True)
class PhasePoint:
    x1: float
    x2: float
    theta: Angle

    def __post_init__(self):
        if self.x2 < 0.0:
            raise ValueError(f"x2 must be >= 0, got {self.x2}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid over the periodic x1 window, the wall-bounded x2 axis,
    and the periodic angle, plus the time step and angular diffusion
    coefficient used by the kinetic solver.

    n_theta must be a multiple of 4 so that theta = -pi, -pi/2 and 0 are
    grid nodes exactly; the trapping split at -pi/2 then falls on a node.
    """

    x1_min: float
    x1_max: float
    n_x1: int
    x2_max: float
    n_x2: int
    n_theta: int
    dt: float
    D: float = 1.0

    def __post_init__(self):
        if self.n_x1 < 4 or self.n_x2 < 4 or self.n_theta < 4:
            raise ValueError("all grid counts must be >= 4")
        if self.n_theta % 4 != 0:
            raise ValueError("n_theta must be a multiple of 4 so that "
                             "0, -pi/2 and -pi are exact nodes")
        if self.x1_max <= self.x1_min:
            raise ValueError("x1_max must exceed x1_min")
        if self.x2_max <= 0.0:
            raise ValueError("x2_max must be positive")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if self.D <= 0.0:
            raise ValueError("D must be positive")

    # -- derived geometry ------------------------------------------------
    @property
    def dx1(self) -> float:
        return (self.x1_max - self.x1_min) / self.n_x1

    @property
    def dx2(self) -> float:
        return self.x2_max / (self.n_x2 - 1)

    @property
    def dtheta(self) -> float:
        return TWO_PI / self.n_theta

    @property
    def x1(self) -> np.ndarray:
        return self.x1_min + self.dx1 * np.arange(self.n_x1)

    @property
    def x2(self) -> np.ndarray:
        return self.dx2 * np.arange(self.n_x2)

    @property
    def theta(self) -> np.ndarray:
        return -math.pi + self.dtheta * np.arange(self.n_theta)

    @property
    def sin_theta(self) -> np.ndarray:
        return _snap_trig(np.sin(self.theta))

    @property
    def cos_theta(self) -> np.ndarray:
        return _snap_trig(np.cos(self.theta))

    @property
    def cell_measure(self) -> float:
        return self.dx1 * self.dx2 * self.dtheta

    @property
    def reduced_cell_measure(self) -> float:
        return self.dx2 * self.dtheta

    # -- special angle indices --------------------------------------------
    @property
    def k_theta_zero(self) -> int:
        return self.n_theta // 2

    @property
    def k_theta_minus_pi(self) -> int:
        return 0

    @property
    def k_theta_minus_half_pi(self) -> int:
        return self.n_theta // 4

    def theta_index(self, theta: float) -> int:
        """Index of the grid node nearest to the wrapped angle."""
        k = int(round((wrap_angle(theta) + math.pi) / self.dtheta))
        return k % self.n_theta


@dataclass
class PhaseField:
    """Cell-averaged interior density f_r on (x1, x2, theta) nodes.

    The wall row (x2 index 0) carries no standing mass between steps: the
    trapping boundary absorbs anything transported onto it.
    """

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expect = (self.grid.n_x1, self.grid.n_x2, self.grid.n_theta)
        if self.values.shape != expect:
            raise ValueError(f"field shape {self.values.shape} does not "
                             f"match grid {expect}")
        if np.any(self.values < 0.0):
            raise ValueError("phase-space density must be nonnegative")

    def copy(self) -> "PhaseField":
        return PhaseField(self.values.copy(), self.grid)


@dataclass
class ReducedField:
    """x1-integrated density rho1 on (x2, theta) nodes."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expect = (self.grid.n_x2, self.grid.n_theta)
        if self.values.shape != expect:
            raise ValueError(f"field shape {self.values.shape} does not "
                             f"match grid {expect}")
        if np.any(self.values < 0.0):
            raise ValueError("reduced density must be nonnegative")

    def copy(self) -> "ReducedField":
        return ReducedField(self.values.copy(), self.grid)


@dataclass
class BoundaryDensityPair:
    """Trapped line densities rho+(x1), rho-(x1), transported at speed +-1."""

    rho_plus: np.ndarray
    rho_minus: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.rho_plus = np.asarray(self.rho_plus, dtype=float)
        self.rho_minus = np.asarray(self.rho_minus, dtype=float)
        if self.rho_plus.shape != (self.grid.n_x1,) or \
           self.rho_minus.shape != (self.grid.n_x1,):
            raise ValueError("boundary density shape must be (n_x1,)")
        if np.any(self.rho_plus < 0.0) or np.any(self.rho_minus < 0.0):
            raise ValueError("boundary densities must be nonnegative")

    @classmethod
    def zeros(cls, grid: GridSpec) -> "BoundaryDensityPair":
        return cls(np.zeros(grid.n_x1), np.zeros(grid.n_x1), grid)

    def copy(self) -> "BoundaryDensityPair":
        return BoundaryDensityPair(self.rho_plus.copy(),
                                   self.rho_minus.copy(), self.grid)

    def mass_plus(self) -> float:
        return float(self.rho_plus.sum() * self.grid.dx1)

    def mass_minus(self) -> float:
        return float(self.rho_minus.sum() * self.grid.dx1)


@dataclass(frozen=True)
class MassLedger:
    """Conservation audit record: interior + trapped + escaped = total.

    `total` is the literal floating-point sum of the other four fields, so
    ledger additivity is an exact arithmetic identity; conservation claims
    compare totals across time.
    """

    interior: float
    trapped_plus: float
    trapped_minus: float
    escaped_top: float
    total: float = field(init=False)

    def __post_init__(self):
        for name in ("interior", "trapped_plus", "trapped_minus"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.escaped_top < 0.0:
            raise ValueError("escaped mass cannot be negative")
        object.__setattr__(
            self, "total",
            self.interior + self.trapped_plus + self.trapped_minus
            + self.escaped_top)


def integrate_field(f: PhaseField | ReducedField) -> float:
    """Cell-measure-weighted sum of a field (its total mass)."""
    if isinstance(f, PhaseField):
        return float(f.values.sum() * f.grid.cell_measure)
    if isinstance(f, ReducedField):
        return float(f.values.sum() * f.grid.reduced_cell_measure)
    raise TypeError(f"cannot integrate {type(f).__name__}")


def make_ledger(f: PhaseField, b: BoundaryDensityPair,
                escaped: float) -> MassLedger:
    """Assemble the mass ledger from the interior field and the trapped
    line densities; `escaped` is the cumulative mass advected past x2_max."""
    if f.grid is not b.grid and f.grid != b.grid:
        raise ValueError("field and boundary densities use different grids")
    if escaped < 0.0:
        raise ValueError("escaped mass cannot be negative")
    return MassLedger(integrate_field(f), b.mass_plus(), b.mass_minus(),
                      float(escaped))
