"""Confluent hypergeometric functions and analytic comparison profiles.

The profile zoo used for verification:

* ``lambda_profile``      -- positive solution L(z) of L'' + 3 z^2 L' - 9 a z L = 0,
                             power-law at both ends; built from the Tricomi
                             function with a real branch across z = 0;
* ``fstar0``              -- singular steady profile x2^as * M(-as; 2/3; -th^3/(9 x2))
                             of the grazing-corner equation th*d_x2 f = d_th^2 f;
* ``f0_selfsim``          -- power-law self-similar profile F0(y, z) = y^a L(z/(9y)^{1/3});
* ``hat_f0``              -- supersolution F0(x2/t^{3/2}, th/t^{1/2}) (+ small
                             correction) of the kinetic operator near the corner;
* ``stationary_supersol_F`` / ``parabolic_subsol_V`` -- closed-form barrier
                             functions for the steady-state comparison arguments.

All evaluators are pure; the correction profile is solved once per parameter
set and cached.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import integrate as _integrate
from scipy import special as _sp
from scipy.interpolate import CubicSpline

from .core import PhasePoint, wrap_angle

_SERIES_MAX_TERMS = 600
_SERIES_TOL = 1e-16
# below this the Kummer-transformed series is used for z < 0; beyond it the
# algebraic large-|z| expansion avoids overflow of the intermediate e^{|z|}
_Z_ALGEBRAIC = 400.0
# connection formula for U at small z; Laplace integral beyond
_Z_LAPLACE = 8.0


def _is_nonpositive_int(x: float, tol: float = 1e-12) -> bool:
    return x < tol and abs(x - round(x)) < tol


# ----------------------------------------------------------------------
# Kummer function M(a; b; z)
# ----------------------------------------------------------------------

def _kummer_series(a: float, b: float, z: np.ndarray) -> np.ndarray:
    """Plain power series; intended for z >= 0 where all terms share a sign
    pattern without catastrophic cancellation."""
    z = np.asarray(z, dtype=float)
    total = np.ones_like(z)
    term = np.ones_like(z)
    for k in range(_SERIES_MAX_TERMS):
        term = term * ((a + k) / ((b + k) * (k + 1.0))) * z
        total = total + term
        if np.all(np.abs(term) <= _SERIES_TOL * np.abs(total)):
            break
    else:
        raise RuntimeError(f"Kummer series did not converge for a={a}, b={b}")
    return total


def _kummer_large_negative(a: float, b: float, z: np.ndarray) -> np.ndarray:
    """Algebraic expansion of M(a;b;z) for z -> -inf (the e^z part is
    exponentially small): Gamma(b)/Gamma(b-a) x^{-a} sum_s (a)_s (a-b+1)_s/(s! x^s)
    with x = -z."""
    x = -np.asarray(z, dtype=float)
    total = np.ones_like(x)
    term = np.ones_like(x)
    prev = np.full_like(x, np.inf)
    for s in range(_SERIES_MAX_TERMS):
        term = term * ((a + s) * (a - b + 1.0 + s) / (s + 1.0)) / x
        if np.any(np.abs(term) > np.abs(prev)):
            break  # asymptotic series: stop at the smallest term
        total = total + term
        prev = term
        if np.all(np.abs(term) <= _SERIES_TOL * np.abs(total)):
            break
    return _sp.gamma(b) / _sp.gamma(b - a) * x ** (-a) * total


def kummer_m(a: float, b: float, z):
    """Confluent hypergeometric function of the first kind M(a; b; z).

    Negative arguments go through the transformation M(a;b;z) =
    e^z M(b-a;b;-z) so every series has nonnegative terms; very negative
    arguments use the algebraic large-argument expansion.
    """
    if _is_nonpositive_int(b):
        raise ValueError(f"M(a;b;z) has a pole at nonpositive integer b={b}")
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(z > 700.0):
        raise OverflowError("M(a;b;z) overflows double precision for z > 700")
    out = np.empty_like(z)
    pos = z >= 0.0
    mid = (~pos) & (z >= -_Z_ALGEBRAIC)
    far = z < -_Z_ALGEBRAIC
    if np.any(pos):
        out[pos] = _kummer_series(a, b, z[pos])
    if np.any(mid):
        out[mid] = np.exp(z[mid]) * _kummer_series(b - a, b, -z[mid])
    if np.any(far):
        out[far] = _kummer_large_negative(a, b, z[far])
    return float(out[0]) if scalar else out


def kummer_m_dz(a: float, b: float, z, n: int = 1):
    """n-th derivative of M in z: (a)_n/(b)_n * M(a+n; b+n; z)."""
    coef = _sp.poch(a, n) / _sp.poch(b, n)
    return coef * kummer_m(a + n, b + n, z)


# ----------------------------------------------------------------------
# Tricomi function U(a, b, z)
# ----------------------------------------------------------------------

def _real_power(z: float, e: float) -> float:
    """z**e for negative z via the real branch, when e is (close to) a
    rational with odd denominator; raises otherwise."""
    if z >= 0.0:
        return z ** e
    frac = Fraction(e).limit_denominator(12)
    if abs(float(frac) - e) > 1e-12 or frac.denominator % 2 == 0:
        raise ValueError(
            f"U(a,b,z) for z<0 needs a real odd-root branch for z^{e}; "
            f"exponent {e} has no such branch")
    sign = -1.0 if frac.numerator % 2 else 1.0
    return sign * abs(z) ** e


def _u_connection(a: float, b: float, z) -> np.ndarray:
    """Two-solution connection formula through M; valid for moderate |z|
    (cancellation grows like e^{|z|} for z > 0).  For z < 0 the power
    z^{1-b} is taken on the real branch."""
    if abs(b - round(b)) < 1e-9:
        raise NotImplementedError(
            f"connection formula degenerates at integer b={b}; "
            "no limit handling implemented")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    A = _sp.gamma(1.0 - b) / _sp.gamma(a + 1.0 - b)
    B = _sp.gamma(b - 1.0) / _sp.gamma(a)
    zp = np.array([_real_power(v, 1.0 - b) for v in z])
    return (A * kummer_m(a, b, z)
            + B * zp * kummer_m(1.0 + a - b, 2.0 - b, z))


def _u_laplace(a: float, b: float, z: float) -> float:
    """Laplace integral for U(a,b,z), z > 0, a > 0, scaled so that the
    quadrature stays well conditioned for large z:
    U = z^{-a}/Gamma(a) * int_0^inf e^{-u} u^{a-1} (1+u/z)^{b-a-1} du."""
    p = b - a - 1.0

    def tail(u):
        return np.exp(-u) * u ** (a - 1.0) * (1.0 + u / z) ** p

    # [0, 1]: algebraic endpoint weight u^{a-1}; [1, inf): plain decay
    head, _ = _integrate.quad(
        lambda u: np.exp(-u) * (1.0 + u / z) ** p, 0.0, 1.0,
        weight="alg", wvar=(a - 1.0, 0.0), limit=200)
    rest, _ = _integrate.quad(tail, 1.0, np.inf, limit=200)
    return z ** (-a) / _sp.gamma(a) * (head + rest)


def _u_large_negative(a: float, b: float, z: float) -> float:
    """Real-branch U for z << 0 assembled from the algebraic expansions of
    both Kummer terms (the exponentially growing parts cancel exactly)."""
    x = -z
    A = _sp.gamma(1.0 - b) / _sp.gamma(a + 1.0 - b)
    B = _sp.gamma(b - 1.0) / _sp.gamma(a)
    sign = _real_power(-1.0, 1.0 - b)
    t1 = A * _kummer_large_negative(a, b, z)
    t2 = B * sign * x ** (1.0 - b) * _kummer_large_negative(1.0 + a - b,
                                                            2.0 - b, z)
    return float(t1 + t2)


def _u_positive(a: float, b: float, z: float) -> float:
    if a > 0.0:
        return _u_laplace(a, b, z)
    if z < _Z_LAPLACE and abs(b - round(b)) > 1e-9:
        return float(_u_connection(a, b, z)[0])
    # shift (a,b) -> (a+1-b, 2-b); the map is an involution, so one try
    a2, b2 = a + 1.0 - b, 2.0 - b
    if a2 > 0.0:
        return z ** (1.0 - b) * _u_laplace(a2, b2, z)
    if abs(b - round(b)) < 1e-9:
        raise NotImplementedError(
            f"U(a,b,z) with a <= 0 and integer b={b} not supported")
    # raise a into the integrable region and recur down (U grows as a
    # decreases, so downward recurrence is stable)
    n = int(math.ceil(-a)) + 1
    u_hi = _u_positive(a + n, b, z)
    u_hi1 = _u_positive(a + n + 1.0, b, z)
    ak = a + n
    for _ in range(n):
        # U(a-1) = (z + 2a - b) U(a) - a (a - b + 1) U(a+1)
        u_lo = (z + 2.0 * ak - b) * u_hi - ak * (ak - b + 1.0) * u_hi1
        u_hi1, u_hi = u_hi, u_lo
        ak -= 1.0
    return u_hi


def tricomi_u(a: float, b: float, z: float) -> float:
    """Tricomi confluent hypergeometric function U(a, b, z).

    z > 0 uses the connection formula (small z) or the Laplace integral
    (large z); z < 0 is the real-branch continuation through the Kummer
    pair, which requires z^{1-b} to possess a real odd root.
    """
    if a == 0.0:
        return 1.0
    if z == 0.0:
        if b >= 1.0:
            raise ValueError(f"U(a,b,0) diverges for b >= 1 (b={b})")
        return float(_sp.gamma(1.0 - b) / _sp.gamma(a + 1.0 - b))
    if z > 0.0:
        return _u_positive(a, b, float(z))
    if z < -_Z_ALGEBRAIC:
        return _u_large_negative(a, b, float(z))
    return float(_u_connection(a, b, float(z))[0])


def tricomi_u_dz(a: float, b: float, z: float, n: int = 1) -> float:
    """n-th derivative of U in z: (-1)^n (a)_n U(a+n, b+n, z)."""
    return (-1.0) ** n * _sp.poch(a, n) * tricomi_u(a + n, b + n, z)


# ----------------------------------------------------------------------
# Profile parameters
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class HolderParams:
    """Exponents of the corner profiles: `alpha` in (0, 1/6) for the
    power-law supersolution family, `alpha_sing` < 0 (small) for the
    blowing-up steady profile."""

    alpha: float = 0.15
    alpha_sing: float = -0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0 / 6.0:
            raise ValueError(f"alpha must lie in (0, 1/6), got {self.alpha}")
        if not -0.5 < self.alpha_sing < 0.0:
            raise ValueError("alpha_sing must be negative and small, "
                             f"got {self.alpha_sing}")


@dataclass(frozen=True)
class SupersolutionParams:
    """Parameters of the steady-state comparison barriers.

    `lam` is validated at construction: the closed-form residual of the
    exponential barrier must be <= 0 everywhere, which holds for lam <= 0.2.
    sigma is tied to the bump radius R by sigma = (2 pi / R)^4.
    """

    lam: float = 0.05
    eta: float = 0.1
    delta: float = 0.05
    R: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.lam <= 0.2:
            raise ValueError(f"lam must lie in (0, 0.2], got {self.lam}")
        if self.eta <= 0.0 or self.delta <= 0.0 or self.R <= 0.0:
            raise ValueError("eta, delta, R must be positive")
        # numerical residual-sign check on a dense angle sample
        th = np.linspace(-math.pi, math.pi, 721)
        if np.any(stationary_supersol_residual(0.0, th, self) > 0.0):
            raise ValueError(f"lam={self.lam} fails the residual sign check")

    @property
    def sigma(self) -> float:
        return (2.0 * math.pi / self.R) ** 4


# ----------------------------------------------------------------------
# The Lambda-type profile family
# ----------------------------------------------------------------------

def _lambda_family(zeta, beta: float, deriv: int = 0):
    """The real-branch profile U(-beta, 2/3, -zeta^3) and its first two
    zeta-derivatives, valid for all real zeta.

    In the Kummer-pair window the derivatives are taken analytically on the
    combination A M(a,b,-z^3) - B z M(a+1/3, 4/3, -z^3) so that zeta = 0 is
    regular; outside the window the parameter-shift relations of U apply
    (no grid point sits at zeta = 0 there).
    """
    a = -beta
    b = 2.0 / 3.0
    zeta = np.asarray(zeta, dtype=float)
    scalar = zeta.ndim == 0
    zeta = np.atleast_1d(zeta).astype(float)
    z = -zeta ** 3
    out = np.empty_like(zeta)
    # Kummer-pair window: cancellation is ~e^{z} for z > 0, so a tight cap
    # there; for z < 0 the transformed series stay benign much longer.
    combo = (z <= _Z_LAPLACE) & (z >= -_Z_ALGEBRAIC)
    if np.any(combo):
        zc = z[combo]
        zet = zeta[combo]
        A = _sp.gamma(1.0 - b) / _sp.gamma(a + 1.0 - b)
        B = _sp.gamma(b - 1.0) / _sp.gamma(a)
        if deriv == 0:
            out[combo] = (A * kummer_m(a, b, zc)
                          - B * zet * kummer_m(a + 1.0 / 3.0, 4.0 / 3.0, zc))
        else:
            m1 = kummer_m_dz(a, b, zc, 1)
            h0 = kummer_m(a + 1.0 / 3.0, 4.0 / 3.0, zc)
            h1 = kummer_m_dz(a + 1.0 / 3.0, 4.0 / 3.0, zc, 1)
            if deriv == 1:
                out[combo] = (-3.0 * A * zet ** 2 * m1
                              - B * (h0 - 3.0 * zet ** 3 * h1))
            else:
                m2 = kummer_m_dz(a, b, zc, 2)
                h2 = kummer_m_dz(a + 1.0 / 3.0, 4.0 / 3.0, zc, 2)
                out[combo] = (-6.0 * A * zet * m1 + 9.0 * A * zet ** 4 * m2
                              + 12.0 * B * zet ** 2 * h1
                              - 9.0 * B * zet ** 5 * h2)
    for i in np.nonzero(~combo)[0]:
        zi = float(z[i])
        if deriv == 0:
            out[i] = tricomi_u(a, b, zi)
        elif deriv == 1:
            out[i] = 3.0 * a * zeta[i] ** 2 * tricomi_u(a + 1.0, b + 1.0, zi)
        else:
            out[i] = (6.0 * a * zeta[i] * tricomi_u(a + 1.0, b + 1.0, zi)
                      + 9.0 * a * (a + 1.0) * zeta[i] ** 4
                      * tricomi_u(a + 2.0, b + 2.0, zi))
    return float(out[0]) if scalar else out


def lambda_profile(zeta, p: HolderParams):
    """Positive solution L of L'' + 3 z^2 L' - 9 alpha z L = 0 that grows
    like |z|^{3 alpha} in both directions (with unit constant at -inf)."""
    return _lambda_family(zeta, p.alpha)


def lambda_profile_d1(zeta, p: HolderParams):
    """dL/dz through analytic derivative relations (no finite differences)."""
    return _lambda_family(zeta, p.alpha, deriv=1)


def lambda_profile_d2(zeta, p: HolderParams):
    """d2L/dz2 through analytic derivative relations, independent of the
    defining ODE (so the ODE residual is a genuine check)."""
    return _lambda_family(zeta, p.alpha, deriv=2)


# ----------------------------------------------------------------------
# Singular steady profile f*_0 and its corrected version
# ----------------------------------------------------------------------

def fstar0(x2, theta, p: HolderParams):
    """Singular steady profile x2^as M(-as; 2/3; -th^3/(9 x2)), as < 0.

    Blows up at the corner (x2, th) -> (0, 0); x2 must be positive.
    """
    x2 = np.asarray(x2, dtype=float)
    if np.any(x2 <= 0.0):
        raise ValueError("fstar0 requires x2 > 0 (profile blows up at 0)")
    theta = wrap_angle(theta)
    a = p.alpha_sing
    s = -np.asarray(theta) ** 3 / (9.0 * x2)
    return x2 ** a * kummer_m(-a, 2.0 / 3.0, s)


def fstar0_residual(x2, theta, p: HolderParams):
    """th d_x2 f*0 - d_th^2 f*0 from analytic parameter-shift derivatives;
    vanishes identically up to evaluation roundoff."""
    x2 = np.asarray(x2, dtype=float)
    theta = np.asarray(wrap_angle(theta), dtype=float)
    a = p.alpha_sing
    b = 2.0 / 3.0
    s = -theta ** 3 / (9.0 * x2)
    m0 = kummer_m(-a, b, s)
    m1 = kummer_m_dz(-a, b, s, 1)
    m2 = kummer_m_dz(-a, b, s, 2)
    fx2 = x2 ** (a - 1.0) * (a * m0 - s * m1)
    fthth = x2 ** (a - 1.0) * (-(2.0 * theta / 3.0) * m1
                               + (theta ** 4 / (9.0 * x2)) * m2)
    return theta * fx2 - fthth


def fstar0_correction(x2, theta, p: HolderParams, scale: float = 1.0):
    """Small additive correction x2^{as+2/3} Q(th/x2^{1/3}) turning f*0 into
    an approximate steady profile of the full sin-theta transport; Q solves
    the same profile ODE family with exponent (as + 2/3)/3."""
    x2 = np.asarray(x2, dtype=float)
    if np.any(x2 <= 0.0):
        raise ValueError("correction requires x2 > 0")
    theta = np.asarray(wrap_angle(theta), dtype=float)
    a = p.alpha_sing
    beta_q = (a + 2.0 / 3.0) / 3.0
    w = theta / x2 ** (1.0 / 3.0)
    q = _lambda_family(3.0 ** (-1.0 / 3.0) * w, beta_q)
    return scale * x2 ** (a + 2.0 / 3.0) * q


# ----------------------------------------------------------------------
# Self-similar profile F0 and the supersolution hat f0
# ----------------------------------------------------------------------

def f0_selfsim(y, zeta, p: HolderParams):
    """Power-law self-similar profile F0(y, z) = y^alpha L(z / (9y)^{1/3})."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0):
        raise ValueError("f0_selfsim requires y > 0")
    w = np.asarray(zeta, dtype=float) / (9.0 * y) ** (1.0 / 3.0)
    return y ** p.alpha * lambda_profile(w, p)


def f0_selfsim_grad(y, zeta, p: HolderParams):
    """(F0, dF0/dy, dF0/dz, d2F0/dz2) from analytic profile derivatives."""
    y = np.asarray(y, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    a = p.alpha
    w = zeta / (9.0 * y) ** (1.0 / 3.0)
    lam = lambda_profile(w, p)
    lam1 = lambda_profile_d1(w, p)
    lam2 = lambda_profile_d2(w, p)
    f0 = y ** a * lam
    fy = y ** (a - 1.0) * (a * lam - (w / 3.0) * lam1)
    fz = y ** a * lam1 / (9.0 * y) ** (1.0 / 3.0)
    fzz = y ** a * lam2 / (9.0 * y) ** (2.0 / 3.0)
    return f0, fy, fz, fzz


# ----------------------------------------------------------------------
# Tabulated profile for grid-scale evaluation
# ----------------------------------------------------------------------
# Sampled evaluation of the profile and its slope on a wide window, with
# power-law tails matched at the edges; accurate to ~1e-9 inside the window
# and ~4e-5 relative in the tails, which is ample for profile comparisons
# on solver grids.  The exact evaluators above stay quadrature-based.

_TABLE_WMAX = 30.0


@lru_cache(maxsize=8)
def _lambda_table(alpha: float):
    w = np.linspace(-_TABLE_WMAX, _TABLE_WMAX, 6001)
    lam = _lambda_family(w, alpha, deriv=0)
    lam1 = _lambda_family(w, alpha, deriv=1)
    return CubicSpline(w, lam), CubicSpline(w, lam1), lam[0], lam[-1]


def _lam_fast(w, alpha: float):
    """(L, L') from the cached table; tails follow c |w|^{3 alpha}."""
    spl, spl1, left, right = _lambda_table(alpha)
    w = np.asarray(w, dtype=float)
    wc = np.clip(w, -_TABLE_WMAX, _TABLE_WMAX)
    lam = spl(wc)
    lam1 = spl1(wc)
    out = np.abs(w) > _TABLE_WMAX
    if np.any(out):
        edge = np.where(w > 0, right, left)
        ratio = (np.abs(w) / _TABLE_WMAX) ** (3.0 * alpha)
        lam = np.where(out, edge * ratio, lam)
        lam1 = np.where(out, 3.0 * alpha * edge * ratio
                        / np.where(w == 0, 1.0, w), lam1)
    return lam, lam1


# correction profile: R0 = y^{alpha+2/3} G(w) with
#   G'' + 3 w^2 G' - 9 (alpha+2/3) w G = -margin * (3/2) * 9^{2/3} alpha L(w);
# the margin (>1) of the source strength is what makes the corrected profile
# a genuine supersolution on the sampled region, not just up to O(y^{1/3}).
_CORRECTION_MARGIN = 13.0
_CORRECTION_WMAX = 12.0


@lru_cache(maxsize=8)
def _correction_spline(alpha: float):
    beta = alpha + 2.0 / 3.0
    wmax = _CORRECTION_WMAX
    w_start = -20.0  # start on the left asymptote, beyond the spline window
    coef = _CORRECTION_MARGIN * 1.5 * 9.0 ** (2.0 / 3.0) * alpha

    def rhs(w, state):
        g, dg = state
        lam, _ = _lam_fast(w, alpha)
        return [dg, -coef * lam - 3.0 * w ** 2 * dg + 9.0 * beta * w * g]

    # Left asymptote of the bounded particular solution: balancing the
    # first-order terms against the source gives G ~ g0 |w|^{3 alpha - 1}
    # with g0 = -coef/9.  Integrating rightward from there is stable: the
    # explosive homogeneous mode e^{|w|^3} decays in this direction and the
    # other one grows only polynomially.
    g0 = -coef / 9.0
    aw = abs(w_start)
    y0 = [g0 * aw ** (3 * alpha - 1.0),
          -g0 * (3 * alpha - 1.0) * aw ** (3 * alpha - 2.0)]
    sol = _integrate.solve_ivp(rhs, (w_start, wmax), y0, method="Radau",
                               rtol=1e-11, atol=1e-13, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"correction profile solve failed: {sol.message}")
    grid = np.linspace(-wmax, wmax, 4001)
    g, dg = sol.sol(grid)
    # The sweep picks up a multiple of the polynomially growing homogeneous
    # solution (the profile with exponent beta); subtract it so the right
    # tail relaxes onto the bounded particular branch g0+ w^{3 alpha - 1},
    # whose amplitude is set by the K+ constant of the source profile.
    lam_edge, _ = _lam_fast(wmax, alpha)
    kplus = lam_edge / wmax ** (3.0 * alpha)
    target = coef * kplus / 9.0 * wmax ** (3.0 * alpha - 1.0)
    hom = _lambda_family(grid, beta)
    hom_d = _lambda_family(grid, beta, deriv=1)
    c = (g[-1] - target) / hom[-1]
    g = g - c * hom
    dg = dg - c * hom_d
    return CubicSpline(grid, g), CubicSpline(grid, dg)


def _correction_G(w, alpha: float):
    """G and G' with power-law extension outside the solved window."""
    gs, dgs = _correction_spline(alpha)
    w = np.asarray(w, dtype=float)
    inside = np.abs(w) <= _CORRECTION_WMAX
    g = np.where(inside, gs(np.clip(w, -_CORRECTION_WMAX, _CORRECTION_WMAX)), 0.0)
    dg = np.where(inside, dgs(np.clip(w, -_CORRECTION_WMAX, _CORRECTION_WMAX)), 0.0)
    if np.any(~inside):
        wm = np.where(w >= 0, _CORRECTION_WMAX, -_CORRECTION_WMAX)
        edge = gs(wm)
        expo = 3.0 * alpha - 1.0
        wsafe = np.where(inside, _CORRECTION_WMAX, w)
        ratio = np.abs(wsafe / _CORRECTION_WMAX) ** expo
        g = np.where(inside, g, edge * ratio)
        dg = np.where(inside, dg, edge * ratio * expo / wsafe)
    return g, dg


def hat_f0_correction(t, x2, theta, p: HolderParams):
    """The additive correction R0(y, z) = y^{alpha+2/3} G(z/(9y)^{1/3})."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(x2, dtype=float) / t ** 1.5
    zeta = np.asarray(wrap_angle(theta), dtype=float) / np.sqrt(t)
    w = zeta / (9.0 * y) ** (1.0 / 3.0)
    g, _ = _correction_G(w, p.alpha)
    return y ** (p.alpha + 2.0 / 3.0) * g


def _f0_fast(y, zeta, alpha: float):
    """Table-backed F0 for grid-scale evaluation."""
    w = np.asarray(zeta, dtype=float) / (9.0 * np.asarray(y)) ** (1.0 / 3.0)
    lam, _ = _lam_fast(w, alpha)
    return np.asarray(y) ** alpha * lam


def hat_f0_in_validity(t, x2, theta, c_valid: float = 0.05):
    """Mask of points with |theta|^3 + x2 <= c_valid * t^{3/2}."""
    t = np.asarray(t, dtype=float)
    th = np.abs(np.asarray(wrap_angle(theta), dtype=float))
    return th ** 3 + np.asarray(x2, dtype=float) <= c_valid * t ** 1.5


def hat_f0(t, x2, theta, p: HolderParams, correction: bool = True,
           c_valid: float = 0.05, warn_outside: bool = True):
    """Supersolution profile F0(x2/t^{3/2}, th/t^{1/2}) (+ correction).

    Values outside the validity region are still returned but are not
    claimed to dominate anything; a warning flags such evaluations.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("hat_f0 requires t > 0")
    x2a = np.asarray(x2, dtype=float)
    if np.any(x2a < 0.0):
        raise ValueError("hat_f0 requires x2 >= 0")
    if warn_outside and not np.all(hat_f0_in_validity(t, x2, theta, c_valid)):
        warnings.warn("hat_f0 evaluated outside its validity region "
                      "|theta|^3 + x2 << t^{3/2}; values unreliable there",
                      stacklevel=2)
    y = np.maximum(x2a, 1e-300) / t ** 1.5
    zeta = np.asarray(wrap_angle(theta), dtype=float) / np.sqrt(t)
    val = _f0_fast(y, zeta, p.alpha)
    if correction:
        val = val + hat_f0_correction(t, x2, theta, p)
    return val


def hat_f0_residual(t, x2, theta, p: HolderParams, correction: bool = True):
    """(d_t + sin th d_x2 - d_th^2) hat_f0, evaluated through the exact
    self-similar reduction (all derivatives analytic, no differencing)."""
    t = np.asarray(t, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    theta = np.asarray(wrap_angle(theta), dtype=float)
    a = p.alpha
    y = x2 / t ** 1.5
    zeta = theta / np.sqrt(t)
    w = zeta / (9.0 * y) ** (1.0 / 3.0)
    s_over_th = np.where(np.abs(theta) < 1e-8,
                         1.0 - theta ** 2 / 6.0,
                         np.sin(theta) / np.where(theta == 0, 1.0, theta))
    lam, lam1 = _lam_fast(w, a)
    nine23 = 9.0 ** (2.0 / 3.0)
    # L0[y^a L] = (3/2) a y^a L + (s/th - 1) 9^{-2/3} y^{a-2/3} (3w^2 L' - 9 a w L)
    bracket = 1.5 * a * y ** a * lam
    bracket = bracket + (s_over_th - 1.0) / nine23 * y ** (a - 2.0 / 3.0) \
        * (3.0 * w ** 2 * lam1 - 9.0 * a * w * lam)
    if correction:
        beta = a + 2.0 / 3.0
        g, dg = _correction_G(w, a)
        src = -_CORRECTION_MARGIN * 1.5 * nine23 * a * lam
        d2g = src - 3.0 * w ** 2 * dg + 9.0 * beta * w * g
        bracket = bracket + y ** a / nine23 * (
            d2g + s_over_th * (3.0 * w ** 2 * dg - 9.0 * beta * w * g))
        bracket = bracket + 1.5 * beta * y ** beta * g
    return -bracket / t


def hat_f0_residual_scale(t, x2, theta, p: HolderParams,
                          correction: bool = True):
    """Natural magnitude of the operator terms entering the residual
    (used to express the sign check as a relative statement)."""
    t = np.asarray(t, dtype=float)
    a = p.alpha
    y = np.asarray(x2, dtype=float) / t ** 1.5
    zeta = np.asarray(wrap_angle(theta), dtype=float) / np.sqrt(t)
    w = zeta / (9.0 * y) ** (1.0 / 3.0)
    lam, lam1 = _lam_fast(w, a)
    lam2 = -3.0 * w ** 2 * lam1 + 9.0 * a * w * lam  # profile ODE
    f0 = y ** a * lam
    fy = y ** (a - 1.0) * (a * lam - (w / 3.0) * lam1)
    fz = y ** a * lam1 / (9.0 * y) ** (1.0 / 3.0)
    fzz = y ** a * lam2 / (9.0 * y) ** (2.0 / 3.0)
    dt_term = np.abs(-(1.5 * y * fy + 0.5 * zeta * fz) / t)
    dx2_term = np.abs(fy) * t ** -1.5
    dthth_term = np.abs(fzz) / t
    return dt_term + dx2_term + dthth_term + np.abs(f0)


# ----------------------------------------------------------------------
# Closed-form steady-state barriers
# ----------------------------------------------------------------------

def stationary_supersol_F(x2, theta, s: SupersolutionParams):
    """Exponential barrier e^{-lam x2} (1 - lam sin th - lam^2/8 cos 2th)."""
    lam = s.lam
    x2 = np.asarray(x2, dtype=float)
    th = np.asarray(wrap_angle(theta), dtype=float)
    return np.exp(-lam * x2) * (1.0 - lam * np.sin(th)
                                - lam ** 2 / 8.0 * np.cos(2.0 * th))


def stationary_supersol_residual(x2, theta, s: SupersolutionParams):
    """Closed form of -sin th d_x2 F - d_th^2 F:
    e^{-lam x2} (-lam^2/2 - lam^3/8 sin th cos 2th); <= 0 for valid lam."""
    lam = s.lam if isinstance(s, SupersolutionParams) else s
    x2 = np.asarray(x2, dtype=float)
    th = np.asarray(wrap_angle(theta), dtype=float)
    return np.exp(-lam * x2) * (-lam ** 2 / 2.0
                                - lam ** 3 / 8.0 * np.sin(th) * np.cos(2.0 * th))


def supersolution_envelope(x2, theta, s: SupersolutionParams):
    """Shifted dominating envelope 1 + eta - e^{-lam (x2-delta)} (...) used
    to squeeze the zero-boundary steady state."""
    x2 = np.asarray(x2, dtype=float)
    return 1.0 + s.eta - stationary_supersol_F(x2 - s.delta, theta, s)


def parabolic_subsol_V(t, x2, theta, s: SupersolutionParams,
                       center: PhasePoint):
    """Decaying cosine-bump subsolution e^{-sigma t} V around `center`,
    V = cos(s^{1/4} dth) cos(s^{1/4} dx2)/2 + 1/2; evaluation is restricted
    to the ball of radius 2R around the center."""
    sig = s.sigma
    x2 = np.asarray(x2, dtype=float)
    th = np.asarray(wrap_angle(theta), dtype=float)
    dx2 = x2 - center.x2
    dth = wrap_angle(th - center.theta)
    if np.any(np.hypot(dx2, dth) > 2.0 * s.R + 1e-12):
        raise ValueError(f"evaluation outside the ball of radius {2*s.R} "
                         "around the bump center")
    q = sig ** 0.25
    v = 0.5 * np.cos(q * dth) * np.cos(q * dx2) + 0.5
    return np.exp(-sig * np.asarray(t, dtype=float)) * v


def parabolic_subsol_residual(t, x2, theta, s: SupersolutionParams,
                              center: PhasePoint):
    """(d_t - sin th d_x2 - d_th^2) of the bump subsolution, closed form."""
    sig = s.sigma
    q = sig ** 0.25
    x2 = np.asarray(x2, dtype=float)
    th = np.asarray(wrap_angle(theta), dtype=float)
    dx2 = x2 - center.x2
    dth = wrap_angle(th - center.theta)
    cc = np.cos(q * dth) * np.cos(q * dx2)
    v = 0.5 * cc + 0.5
    dv_dx2 = -0.5 * q * np.cos(q * dth) * np.sin(q * dx2)
    dv_dthth = -0.5 * math.sqrt(sig) * cc
    env = np.exp(-sig * np.asarray(t, dtype=float))
    return env * (-sig * v - np.sin(th) * dv_dx2 - dv_dthth)


def subsolution_t_star(s: SupersolutionParams, center: PhasePoint,
                       t_max: float = 10.0, n_t: int = 41,
                       n_ball: int = 33) -> float:
    """Largest time (on a sampled grid, up to t_max) for which the bump
    residual stays <= 0 everywhere on the ball of radius 2R; dense-sampling
    search, since only existence is guaranteed analytically."""
    r = np.linspace(0.0, 2.0 * s.R, n_ball)
    phi = np.linspace(0.0, 2.0 * math.pi, n_ball, endpoint=False)
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    x2 = np.maximum(center.x2 + rr * np.cos(pp), 0.0)
    th = center.theta + rr * np.sin(pp)
    t_ok = 0.0
    for t in np.linspace(0.0, t_max, n_t):
        res = parabolic_subsol_residual(t, x2, th, s, center)
        if np.max(res) > 1e-12:
            break
        t_ok = t
    return t_ok
