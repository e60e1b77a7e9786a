"""Hot numeric kernels: numba-accelerated with a pure-numpy fallback.

The numba path is used when available; setting the environment variable
``POLYKIN_NO_NUMBA=1`` (before import) forces the numpy path.  Both paths
implement identical arithmetic; the benchmark script compares them.

Kernels:

* ``chain_sweep``      -- one Gibbs step of the whole chain ensemble,
                          including the energy-minimizing wall rule;
* ``transport_shift``  -- fractional-cell translation of every angular
                          slice of the phase-space field, with bottom
                          (trapping) and top (escape) flux accounting.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = os.environ.get("POLYKIN_NO_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ----------------------------------------------------------------------
# chain sweep
# ----------------------------------------------------------------------
# State arrays are updated in place; `u` holds one uniform draw per chain.
# The angular increment comes from linear interpolation of `inv_cdf`, an
# inverse-CDF table sampled at uniform quantiles.  A proposal that would
# dive below the wall is clamped to the admissible grazing direction on
# the side nearer the proposal; the clamp lands the chain exactly on the
# wall and records the trapping direction (+1 right, -1 left).

def _chain_sweep_py(x1, x2, th, trapped, max_dev, u, eps, inv_cdf):
    n_tab = inv_cdf.shape[0]
    pos = u * (n_tab - 1)
    idx = np.minimum(pos.astype(np.int64), n_tab - 2)
    frac = pos - idx
    dth = inv_cdf[idx] * (1.0 - frac) + inv_cdf[idx + 1] * frac

    thp = th + dth
    thp = np.where(thp >= math.pi, thp - 2.0 * math.pi, thp)
    thp = np.where(thp < -math.pi, thp + 2.0 * math.pi, thp)

    sin_p = np.sin(thp)
    below = x2 + eps * sin_p < 0.0
    g = np.arcsin(np.minimum(x2 / eps, 1.0))
    clamp_right = below & (thp >= -0.5 * math.pi)
    clamp_left = below & (thp < -0.5 * math.pi)
    new_th = np.where(clamp_right, -g, np.where(clamp_left, -math.pi + g, thp))

    trapped[clamp_right] = 1
    trapped[clamp_left] = -1

    x1 += eps * np.cos(new_th)
    x2_new = x2 + eps * np.sin(new_th)
    np.maximum(x2_new, 0.0, out=x2_new)
    x2[:] = x2_new
    th[:] = new_th
    seen = trapped != 0
    np.maximum(max_dev, np.where(seen, x2, max_dev), out=max_dev)


if HAVE_NUMBA:

    @njit(cache=True, fastmath=False)
    def _chain_sweep_nb(x1, x2, th, trapped, max_dev, u, eps, inv_cdf):  # pragma: no cover - jitted
        n = x1.shape[0]
        n_tab = inv_cdf.shape[0]
        pi = math.pi
        for i in range(n):
            pos = u[i] * (n_tab - 1)
            idx = int(pos)
            if idx > n_tab - 2:
                idx = n_tab - 2
            frac = pos - idx
            dth = inv_cdf[idx] * (1.0 - frac) + inv_cdf[idx + 1] * frac

            thp = th[i] + dth
            if thp >= pi:
                thp -= 2.0 * pi
            elif thp < -pi:
                thp += 2.0 * pi

            if x2[i] + eps * math.sin(thp) < 0.0:
                ratio = x2[i] / eps
                if ratio > 1.0:
                    ratio = 1.0
                g = math.asin(ratio)
                if thp >= -0.5 * pi:
                    thp = -g
                    trapped[i] = 1
                else:
                    thp = -pi + g
                    trapped[i] = -1

            x1[i] += eps * math.cos(thp)
            x2n = x2[i] + eps * math.sin(thp)
            if x2n < 0.0:
                x2n = 0.0
            x2[i] = x2n
            th[i] = thp
            if trapped[i] != 0 and x2n > max_dev[i]:
                max_dev[i] = x2n


def chain_sweep(x1, x2, th, trapped, max_dev, u, eps, inv_cdf):
    """Advance every chain by one monomer (in place)."""
    if USE_NUMBA:
        _chain_sweep_nb(x1, x2, th, trapped, max_dev, u, eps, inv_cdf)
    else:
        _chain_sweep_py(x1, x2, th, trapped, max_dev, u, eps, inv_cdf)


# ----------------------------------------------------------------------
# phase-space transport
# ----------------------------------------------------------------------
# Per angular slice k the field translates by (s1[k], s2[k]) cells,
# circular in x1 and absorbing in x2 (|s2| <= 1 enforced upstream).  The
# translation redistributes each cell's content between the two straddling
# target cells, which is simultaneously conservative, positivity-preserving
# and identical to bilinear back-interpolation for a uniform shift.
# Mass reaching the wall row (x2 index 0) or below it is returned in
# `bottom`; mass pushed past the top row is returned in `top`.

def _transport_shift_py(f, s1, s2):
    n1, n2, nk = f.shape
    out = np.empty_like(f)
    bottom = np.zeros((n1, nk))
    top = np.zeros((n1, nk))
    for k in range(nk):
        m1 = int(math.floor(s1[k]))
        r1 = s1[k] - m1
        sl = np.roll(f[:, :, k], m1, axis=0)
        if r1 != 0.0:
            sl = (1.0 - r1) * sl + r1 * np.roll(sl, 1, axis=0)
        m2 = int(math.floor(s2[k]))
        r2 = s2[k] - m2
        if m2 == 0 and r2 == 0.0:
            out[:, :, k] = sl
            continue
        shifted = np.zeros_like(sl)
        lo = np.zeros(n1)   # mass landing at rows <= 0
        hi = np.zeros(n1)   # mass landing at rows > n2-1
        for (mm, ww) in ((m2, 1.0 - r2), (m2 + 1, r2)):
            if ww == 0.0:
                continue
            if mm >= 0:
                shifted[:, mm:] += ww * sl[:, :n2 - mm]
                if mm > 0:
                    hi += ww * sl[:, n2 - mm:].sum(axis=1)
            else:
                shifted[:, :mm] += ww * sl[:, -mm:]
                lo += ww * sl[:, :-mm].sum(axis=1)
        # arrivals on the wall row itself are trapped, not standing mass
        if s2[k] < 0.0:
            lo += shifted[:, 0]
            shifted[:, 0] = 0.0
        out[:, :, k] = shifted
        bottom[:, k] = lo
        top[:, k] = hi
    return out, bottom, top


if HAVE_NUMBA:

    @njit(cache=True, fastmath=False)
    def _transport_shift_nb(f, s1, s2):  # pragma: no cover - jitted
        n1, n2, nk = f.shape
        out = np.zeros_like(f)
        bottom = np.zeros((n1, nk))
        top = np.zeros((n1, nk))
        for k in range(nk):
            m1 = int(math.floor(s1[k]))
            r1 = s1[k] - m1
            m2 = int(math.floor(s2[k]))
            r2 = s2[k] - m2
            down = s2[k] < 0.0
            for i in range(n1):
                src_a = (i - m1) % n1
                src_b = (i - m1 - 1) % n1
                for j in range(n2):
                    va = f[src_a, j, k]
                    vb = f[src_b, j, k]
                    v = va if r1 == 0.0 else (1.0 - r1) * va + r1 * vb
                    if v == 0.0:
                        continue
                    ja = j + m2
                    jb = j + m2 + 1
                    wa = (1.0 - r2) * v
                    wb = r2 * v
                    if wa != 0.0:
                        if ja <= 0:
                            if down:
                                bottom[i, k] += wa
                            elif ja == 0:
                                out[i, 0, k] += wa
                        elif ja > n2 - 1:
                            top[i, k] += wa
                        else:
                            out[i, ja, k] += wa
                    if wb != 0.0:
                        if jb <= 0:
                            if down:
                                bottom[i, k] += wb
                            elif jb == 0:
                                out[i, 0, k] += wb
                        elif jb > n2 - 1:
                            top[i, k] += wb
                        else:
                            out[i, jb, k] += wb
        return out, bottom, top


def transport_shift(f, s1, s2):
    """Translate each angular slice of `f` by (s1[k], s2[k]) cells.

    Returns (shifted field, bottom outflow per (x1, theta), top escape per
    (x1, theta)); the three parts sum to the input mass exactly (up to
    float rounding of the weight split).
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if np.any(np.abs(s2) > 1.0 + 1e-12):
        raise ValueError("x2 shift exceeds one cell per step; reduce dt")
    if USE_NUMBA:
        return _transport_shift_nb(np.ascontiguousarray(f), s1, s2)
    return _transport_shift_py(f, s1, s2)
