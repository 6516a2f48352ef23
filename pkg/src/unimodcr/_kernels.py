"""Compiled pointwise kernel for the flow bracket.

Evaluates ``2B`` with the same fourth-order central stencils as
:mod:`unimodcr.grid` at the points selected by a mask.  As in the array
code, mixed derivatives differentiate the computed ``F_u``.  Periodic data
is handled by wrap-padding; otherwise the caller guarantees a two-point
margin around every selected point.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_C1 = 1.0 / 12.0


@njit(cache=True, fastmath=False)
def _bracket_kernel(F, hx, hy, hu, core, out):
    nu, ny, nx = F.shape
    Fu = np.full(F.shape, np.nan)
    for k in range(2, nu - 2):
        for j in range(ny):
            for i in range(nx):
                Fu[k, j, i] = (F[k - 2, j, i] - 8.0 * F[k - 1, j, i] + 8.0 * F[k + 1, j, i]
                               - F[k + 2, j, i]) * _C1 / hu
    for k in range(nu):
        for j in range(ny):
            for i in range(nx):
                if not core[k, j, i]:
                    out[k, j, i] = np.nan
                    continue
                f0 = F[k, j, i]
                xm2 = F[k, j, i - 2]
                xm1 = F[k, j, i - 1]
                xp1 = F[k, j, i + 1]
                xp2 = F[k, j, i + 2]
                ym2 = F[k, j - 2, i]
                ym1 = F[k, j - 1, i]
                yp1 = F[k, j + 1, i]
                yp2 = F[k, j + 2, i]
                um2 = F[k - 2, j, i]
                um1 = F[k - 1, j, i]
                up1 = F[k + 1, j, i]
                up2 = F[k + 2, j, i]
                fx = (xm2 - 8.0 * xm1 + 8.0 * xp1 - xp2) * _C1 / hx
                fy = (ym2 - 8.0 * ym1 + 8.0 * yp1 - yp2) * _C1 / hy
                fu = Fu[k, j, i]
                fxx = (-xm2 + 16.0 * xm1 - 30.0 * f0 + 16.0 * xp1 - xp2) * _C1 / (hx * hx)
                fyy = (-ym2 + 16.0 * ym1 - 30.0 * f0 + 16.0 * yp1 - yp2) * _C1 / (hy * hy)
                fuu = (-um2 + 16.0 * um1 - 30.0 * f0 + 16.0 * up1 - up2) * _C1 / (hu * hu)
                fux = (Fu[k, j, i - 2] - 8.0 * Fu[k, j, i - 1] + 8.0 * Fu[k, j, i + 1]
                       - Fu[k, j, i + 2]) * _C1 / hx
                fuy = (Fu[k, j - 2, i] - 8.0 * Fu[k, j - 1, i] + 8.0 * Fu[k, j + 1, i]
                       - Fu[k, j + 2, i]) * _C1 / hy
                P = fx * fux + fy * fuy
                Q = fx * fuy - fy * fux
                B = ((1.0 + fu * fu) * (fxx + fyy) * 0.25 + (fx * fx + fy * fy) * fuu * 0.25
                     - 0.5 * (fu * P + Q))
                out[k, j, i] = 2.0 * B


@njit(cache=True)
def _screen_bracket(twoB, core, eps, sign0):
    """Zero ``twoB`` off ``core`` in place and screen the core values.

    Returns ``(status, k, j, i)`` for the first offending point: status 1 for
    a non-finite bracket, 2 for ``|2B| < eps``, 3 for a sign opposite to
    ``sign0``; status 0 when all points are fine.  Non-finite values are
    zeroed as well.
    """
    nu, ny, nx = twoB.shape
    status, bk, bj, bi = 0, -1, -1, -1
    for k in range(nu):
        for j in range(ny):
            for i in range(nx):
                if not core[k, j, i]:
                    twoB[k, j, i] = 0.0
                    continue
                v = twoB[k, j, i]
                if not np.isfinite(v):
                    if status != 1:
                        status, bk, bj, bi = 1, k, j, i
                    twoB[k, j, i] = 0.0
                elif abs(v) < eps:
                    if status == 0 or status == 3:
                        status, bk, bj, bi = 2, k, j, i
                elif v * sign0 < 0 and status == 0:
                    status, bk, bj, bi = 3, k, j, i
    return status, bk, bj, bi


def flow_rhs_masked(F, hx, hy, hu, core, periodic, eps, sign0, direction):
    """``(rhs, status, index)`` with ``rhs = direction·cbrt(2B)`` on ``core``, zero elsewhere."""
    twoB = bracket2(F, hx, hy, hu, core, periodic)
    status, k, j, i = _screen_bracket(twoB, core, float(eps), float(sign0))
    out = np.cbrt(twoB, out=twoB)
    if direction < 0:
        np.negative(out, out=out)
    return out, int(status), (int(k), int(j), int(i))


def bracket2(F: np.ndarray, hx: float, hy: float, hu: float, core: np.ndarray,
             periodic: bool) -> np.ndarray:
    """``2B`` at ``core`` points, ``nan`` elsewhere."""
    F = np.asarray(F, dtype=np.float64)
    if periodic:
        Fp = np.pad(F, 2, mode="wrap")
        cp = np.pad(core, 2, mode="constant", constant_values=False)
        out = np.empty(Fp.shape)
        _bracket_kernel(Fp, float(hx), float(hy), float(hu), cp, out)
        return out[2:-2, 2:-2, 2:-2].copy()
    core = core.copy()
    core[:2] = core[-2:] = False
    core[:, :2] = core[:, -2:] = False
    core[:, :, :2] = core[:, :, -2:] = False
    out = np.empty(F.shape)
    _bracket_kernel(np.ascontiguousarray(F), float(hx), float(hy), float(hu), core, out)
    return out
