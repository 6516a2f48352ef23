"""Structured 3-D grids over the chart (x, y, u), fields, and exterior calculus.

Points are stored in row-major order with ``u`` slowest, so every array has
shape ``(nu, ny, nx)``.  Complex coordinate ``z = x + i y``.  One-forms are
kept in the basis ``(du, dz, dz̄)`` and two-forms in
``(du∧dz, du∧dz̄, dz∧dz̄)``.

Derivatives are fourth-order central differences.  The boundary mode of the
grid decides what happens within two points of an edge:

``periodic``     wrap around;
``trim-margin``  the point is dropped from the validity mask;
``dirichlet``    one-sided fourth-order stencils, mask unchanged.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache
from numbers import Number

import numpy as np

from .errors import DegenerateFrame, GridTooSmall

AXES = {"u": 0, "y": 1, "x": 2}
BOUNDARY_MODES = ("periodic", "trim-margin", "dirichlet")
STENCIL_WIDTH = 5
FRAME_TOL = 1e-10


@dataclass(frozen=True)
class Grid3:
    nx: int
    ny: int
    nu: int
    hx: float
    hy: float
    hu: float
    origin: tuple = (0.0, 0.0, 0.0)  # (x0, y0, u0)
    boundary_mode: str = "trim-margin"

    def __post_init__(self):
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")
        for n in (self.nx, self.ny, self.nu):
            if n < STENCIL_WIDTH:
                raise GridTooSmall(f"{n} points per axis; need at least {STENCIL_WIDTH}")
        if min(self.hx, self.hy, self.hu) <= 0:
            raise ValueError("grid spacings must be positive")
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))

    @classmethod
    def centered(cls, n, half_width, *, nu=None, half_width_u=None,
                 boundary_mode="trim-margin"):
        """Cube ``[-w, w]^3`` (or a box when the u-extent differs) with ``n`` points per axis."""
        nu = n if nu is None else nu
        wu = half_width if half_width_u is None else half_width_u
        h = 2.0 * half_width / (n - 1)
        hu = 2.0 * wu / (nu - 1)
        return cls(n, n, nu, h, h, hu, (-half_width, -half_width, -wu), boundary_mode)

    @classmethod
    def from_spacing(cls, h, half_points, *, boundary_mode="trim-margin"):
        """Odd grid with the origin as its middle node: ``2*half_points + 1`` points of spacing ``h``."""
        n = 2 * half_points + 1
        w = h * half_points
        return cls(n, n, n, h, h, h, (-w, -w, -w), boundary_mode)

    @classmethod
    def periodic(cls, n, length=2 * math.pi, *, origin=(0.0, 0.0, 0.0)):
        h = length / n
        return cls(n, n, n, h, h, h, origin, "periodic")

    @property
    def shape(self):
        return (self.nu, self.ny, self.nx)

    @property
    def size(self):
        return self.nu * self.ny * self.nx

    def spacing(self, axis):
        return {"x": self.hx, "y": self.hy, "u": self.hu}[axis]

    def count(self, axis):
        return {"x": self.nx, "y": self.ny, "u": self.nu}[axis]

    @property
    def min_spacing(self):
        return min(self.hx, self.hy, self.hu)

    def with_mode(self, mode):
        return dataclasses.replace(self, boundary_mode=mode)

    def subgrid(self, index):
        """Grid of the block ``values[index]`` for a tuple of unit-step slices ``(u, y, x)``."""
        su, sy, sx = (s.indices(n) for s, n in zip(index, self.shape))
        return dataclasses.replace(
            self, nx=sx[1] - sx[0], ny=sy[1] - sy[0], nu=su[1] - su[0],
            origin=(self.origin[0] + sx[0] * self.hx, self.origin[1] + sy[0] * self.hy,
                    self.origin[2] + su[0] * self.hu))

    def axis_coords(self, axis):
        i = "xyu".index(axis)
        return self.origin[i] + self.spacing(axis) * np.arange(self.count(axis))

    def coords(self):
        """Broadcastable ``(x, y, u)`` coordinate arrays."""
        x = self.axis_coords("x")[None, None, :]
        y = self.axis_coords("y")[None, :, None]
        u = self.axis_coords("u")[:, None, None]
        return x, y, u

    def mesh(self):
        x, y, u = self.coords()
        return tuple(np.broadcast_to(c, self.shape) for c in (x, y, u))

    def point(self, index):
        iu, iy, ix = index
        return (self.origin[0] + ix * self.hx, self.origin[1] + iy * self.hy,
                self.origin[2] + iu * self.hu)

    def contains_node(self, point, tol=1e-9):
        idx = self.nearest_index(point)
        return idx is not None and np.allclose(self.point(idx), point, atol=tol * self.min_spacing)

    def nearest_index(self, point):
        x, y, u = point
        ix = round((x - self.origin[0]) / self.hx)
        iy = round((y - self.origin[1]) / self.hy)
        iu = round((u - self.origin[2]) / self.hu)
        if 0 <= ix < self.nx and 0 <= iy < self.ny and 0 <= iu < self.nu:
            return (iu, iy, ix)
        return None


class ScalarField:
    """Samples of a real or complex function on a :class:`Grid3` plus a validity mask."""

    __array_priority__ = 1000

    def __init__(self, grid: Grid3, values, mask=None):
        values = np.asarray(values)
        if values.shape != grid.shape:
            values = np.broadcast_to(values, grid.shape).copy()
        if mask is None:
            mask = np.ones(grid.shape, dtype=bool)
        else:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), grid.shape)
        self.grid = grid
        self.values = values
        self.mask = mask

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, value))

    @classmethod
    def from_function(cls, grid, func):
        """Evaluate ``func(x, y, u)`` on broadcast coordinate arrays."""
        x, y, u = grid.coords()
        return cls(grid, np.broadcast_to(func(x, y, u), grid.shape).copy())

    @property
    def is_real(self):
        return not np.iscomplexobj(self.values)

    def with_values(self, values, mask=None):
        return ScalarField(self.grid, values, self.mask if mask is None else mask)

    def with_mask(self, mask):
        return ScalarField(self.grid, self.values, mask)

    def __repr__(self):
        kind = "real" if self.is_real else "complex"
        return f"ScalarField({kind}, shape={self.grid.shape}, valid={int(self.mask.sum())})"

    # arithmetic ------------------------------------------------------------

    def _split(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values, self.mask & other.mask
        if isinstance(other, (Number, np.number)) or np.ndim(other) == 0:
            return other, self.mask
        return NotImplemented, None

    def _binary(self, other, op):
        v, m = self._split(other)
        if v is NotImplemented:
            return NotImplemented
        with np.errstate(all="ignore"):
            return ScalarField(self.grid, op(self.values, v), m)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, lambda a, b: b + a)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __rmul__(self, other):
        return self._binary(other, lambda a, b: b * a)

    def __truediv__(self, other):
        return self._binary(other, np.true_divide)

    def __rtruediv__(self, other):
        return self._binary(other, lambda a, b: b / a)

    def __pow__(self, p):
        return self._binary(p, np.power)

    def __neg__(self):
        return ScalarField(self.grid, -self.values, self.mask)

    def conj(self):
        if self.is_real:
            return self
        return ScalarField(self.grid, np.conj(self.values), self.mask)

    @property
    def real(self):
        return ScalarField(self.grid, np.real(self.values).copy(), self.mask)

    @property
    def imag(self):
        return ScalarField(self.grid, np.imag(self.values).copy(), self.mask)

    def __abs__(self):
        return ScalarField(self.grid, np.abs(self.values), self.mask)

    def apply(self, func):
        with np.errstate(all="ignore"):
            return ScalarField(self.grid, func(self.values), self.mask)

    # reductions over the valid points -----------------------------------------

    def valid(self):
        return self.values[self.mask]

    def max_abs(self):
        v = self.valid()
        return float(np.max(np.abs(v))) if v.size else 0.0

    def mean(self):
        v = self.valid()
        return v.mean() if v.size else np.nan

    def at(self, index):
        return self.values[index]


def _as_field(grid, c):
    if isinstance(c, ScalarField):
        return c
    return ScalarField(grid, np.full(grid.shape, c))


# ---------------------------------------------------------------------------
# finite differences

_CENTRAL = {
    1: (np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0),
    2: (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0),
}


@lru_cache(maxsize=None)
def fd_weights(offsets, order):
    """Weights ``w`` with ``sum w_j f(x + o_j h) = h**order f^(order)(x) + O(h^len)``."""
    o = np.asarray(offsets, dtype=float)
    n = len(o)
    A = np.vander(o, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return tuple(np.linalg.solve(A, rhs))


def _one_sided_offsets(order):
    width = 5 if order == 1 else 6
    return (tuple(range(0, width)), tuple(range(-1, width - 1)))


def _diff_values(v, axis_index, order, h, mode):
    v = np.moveaxis(v, axis_index, 0)
    n = v.shape[0]
    w = _CENTRAL[order]
    scale = h ** order
    if mode == "periodic":
        out = sum(w[k] * np.roll(v, 2 - k, axis=0) for k in range(5) if w[k] != 0.0)
        return np.moveaxis(out / scale, 0, axis_index)
    out = np.empty(v.shape, dtype=np.result_type(v.dtype, float))
    acc = w[0] * v[:-4]
    for k in range(1, 5):
        if w[k] != 0.0:
            acc = acc + w[k] * v[k:n - 4 + k]
    out[2:-2] = acc / scale
    if mode == "trim-margin":
        out[:2] = np.nan
        out[-2:] = np.nan
    else:
        if n < len(_one_sided_offsets(order)[0]):
            raise GridTooSmall(f"one-sided stencil needs {len(_one_sided_offsets(order)[0])} points")
        for i, offs in enumerate(_one_sided_offsets(order)):
            wts = fd_weights(offs, order)
            out[i] = sum(c * v[i + o] for c, o in zip(wts, offs)) / scale
            j = n - 1 - i
            out[j] = sum(c * ((-1) ** order) * v[j - o] for c, o in zip(wts, offs)) / scale
    return np.moveaxis(out, 0, axis_index)


def _erode(mask, axis_index, mode, order):
    if mask.all() and mode != "trim-margin":
        return mask
    m = np.moveaxis(mask, axis_index, 0)
    if mode == "periodic":
        out = m.copy()
        for s in (-2, -1, 1, 2):
            out &= np.roll(m, s, axis=0)
        return np.moveaxis(out, 0, axis_index)
    n = m.shape[0]
    out = np.zeros_like(m)
    out[2:-2] = m[:-4] & m[1:-3] & m[2:-2] & m[3:-1] & m[4:]
    if mode == "dirichlet":
        for i, offs in enumerate(_one_sided_offsets(order)):
            out[i] = np.logical_and.reduce([m[i + o] for o in offs])
            out[n - 1 - i] = np.logical_and.reduce([m[n - 1 - i - o] for o in offs])
    return np.moveaxis(out, 0, axis_index)


def partial(field: ScalarField, axis: str, order: int = 1, mode: str | None = None) -> ScalarField:
    """Fourth-order derivative of ``field`` along ``axis`` (``'x'``, ``'y'`` or ``'u'``)."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, u (got {axis!r})")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    grid = field.grid
    mode = grid.boundary_mode if mode is None else mode
    if grid.count(axis) < STENCIL_WIDTH:
        raise GridTooSmall(f"axis {axis} has {grid.count(axis)} points")
    k = AXES[axis]
    with np.errstate(invalid="ignore"):
        values = _diff_values(field.values, k, order, grid.spacing(axis), mode)
    return ScalarField(grid, values, _erode(field.mask, k, mode, order))


def wirtinger(field: ScalarField, which: str) -> ScalarField:
    """``∂/∂z = (∂x - i∂y)/2`` or ``∂/∂z̄ = (∂x + i∂y)/2``."""
    fx = partial(field, "x")
    fy = partial(field, "y")
    if which == "z":
        return 0.5 * (fx - 1j * fy)
    if which in ("zbar", "zb"):
        return 0.5 * (fx + 1j * fy)
    raise ValueError("which must be 'z' or 'zbar'")


# ---------------------------------------------------------------------------
# forms


@dataclass
class OneForm:
    """``c_u du + c_z dz + c_zb dz̄``."""

    c_u: ScalarField
    c_z: ScalarField
    c_zb: ScalarField

    @classmethod
    def from_coefficients(cls, grid, c_u, c_z, c_zb):
        return cls(_as_field(grid, c_u), _as_field(grid, c_z), _as_field(grid, c_zb))

    @property
    def grid(self):
        return self.c_u.grid

    @property
    def mask(self):
        return self.c_u.mask & self.c_z.mask & self.c_zb.mask

    def components(self):
        return (self.c_u, self.c_z, self.c_zb)

    def conj(self):
        # conj(dz) = dz̄, so the dz and dz̄ slots trade places
        return OneForm(self.c_u.conj(), self.c_zb.conj(), self.c_z.conj())

    def __add__(self, other):
        return OneForm(self.c_u + other.c_u, self.c_z + other.c_z, self.c_zb + other.c_zb)

    def __sub__(self, other):
        return OneForm(self.c_u - other.c_u, self.c_z - other.c_z, self.c_zb - other.c_zb)

    def __mul__(self, f):
        return OneForm(self.c_u * f, self.c_z * f, self.c_zb * f)

    __rmul__ = __mul__

    def __neg__(self):
        return OneForm(-self.c_u, -self.c_z, -self.c_zb)

    def wedge(self, other: "OneForm") -> "TwoForm":
        a, b = self, other
        return TwoForm(a.c_u * b.c_z - a.c_z * b.c_u,
                       a.c_u * b.c_zb - a.c_zb * b.c_u,
                       a.c_z * b.c_zb - a.c_zb * b.c_z)

    def __call__(self, vec) -> ScalarField:
        v_u, v_z, v_zb = vec
        return self.c_u * v_u + self.c_z * v_z + self.c_zb * v_zb

    def reality_defect(self) -> float:
        """Largest violation of ``c_u`` real and ``c_zb = conj(c_z)``."""
        d1 = np.abs(np.imag(self.c_u.values))[self.mask]
        d2 = np.abs(self.c_zb.values - np.conj(self.c_z.values))[self.mask]
        return float(max(d1.max(initial=0.0), d2.max(initial=0.0)))


@dataclass
class TwoForm:
    """``c_uz du∧dz + c_uzb du∧dz̄ + c_zzb dz∧dz̄``."""

    c_uz: ScalarField
    c_uzb: ScalarField
    c_zzb: ScalarField

    @property
    def grid(self):
        return self.c_uz.grid

    @property
    def mask(self):
        return self.c_uz.mask & self.c_uzb.mask & self.c_zzb.mask

    def components(self):
        return (self.c_uz, self.c_uzb, self.c_zzb)

    def __add__(self, other):
        return TwoForm(self.c_uz + other.c_uz, self.c_uzb + other.c_uzb, self.c_zzb + other.c_zzb)

    def __sub__(self, other):
        return TwoForm(self.c_uz - other.c_uz, self.c_uzb - other.c_uzb, self.c_zzb - other.c_zzb)

    def __mul__(self, f):
        return TwoForm(self.c_uz * f, self.c_uzb * f, self.c_zzb * f)

    __rmul__ = __mul__

    def __neg__(self):
        return TwoForm(-self.c_uz, -self.c_uzb, -self.c_zzb)

    def __call__(self, X, Y) -> ScalarField:
        return self.contract(X)(Y)

    def contract(self, X) -> OneForm:
        """Interior product ``ι_X Ω``."""
        x_u, x_z, x_zb = X
        return OneForm(-self.c_uz * x_z - self.c_uzb * x_zb,
                       self.c_uz * x_u - self.c_zzb * x_zb,
                       self.c_uzb * x_u + self.c_zzb * x_z)

    def max_abs(self) -> float:
        return max(c.max_abs() for c in self.components())


def gradient(f: ScalarField) -> OneForm:
    """``df`` in the basis ``(du, dz, dz̄)``."""
    fx = partial(f, "x")
    fy = partial(f, "y")
    return OneForm(partial(f, "u"), 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy))


def exterior_d(omega: OneForm) -> TwoForm:
    d_u = lambda f: partial(f, "u")
    d_z = lambda f: wirtinger(f, "z")
    d_zb = lambda f: wirtinger(f, "zbar")
    return TwoForm(d_u(omega.c_z) - d_z(omega.c_u),
                   d_u(omega.c_zb) - d_zb(omega.c_u),
                   d_z(omega.c_zb) - d_zb(omega.c_z))


# ---------------------------------------------------------------------------
# frames


@dataclass
class DualFrame:
    """Vector fields ``T, E, Ē`` dual to the coframe ``(θ, η, η̄)``.

    ``det`` is the coefficient of ``du∧dz∧dz̄`` in ``θ∧η∧η̄``.
    """

    det: ScalarField
    T: tuple
    E: tuple
    Eb: tuple


def dual_frame(theta: OneForm, eta: OneForm, tol: float = FRAME_TOL) -> DualFrame:
    rows = [theta.components(), eta.components(), eta.conj().components()]
    m = [[c.values for c in row] for row in rows]
    mask = theta.mask & eta.mask
    with np.errstate(all="ignore"):
        cof = [[m[(i + 1) % 3][(j + 1) % 3] * m[(i + 2) % 3][(j + 2) % 3]
                - m[(i + 1) % 3][(j + 2) % 3] * m[(i + 2) % 3][(j + 1) % 3]
                for j in range(3)] for i in range(3)]
        det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2]
        bad = mask & ~(np.abs(det) >= tol)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DegenerateFrame(f"frame determinant below {tol:g} at index {idx}")
        # inverse[j][i] = cof[i][j] / det; column i is the vector dual to row i
        grid = theta.grid
        vec = [tuple(ScalarField(grid, cof[i][j] / det, mask) for j in range(3)) for i in range(3)]
    return DualFrame(ScalarField(grid, det, mask), vec[0], vec[1], vec[2])


def frame_expand_1form(omega: OneForm, theta: OneForm, eta: OneForm, tol: float = FRAME_TOL,
                       frame: DualFrame | None = None):
    """Coefficients ``(f_t, f_e, f_eb)`` with ``ω = f_t θ + f_e η + f_eb η̄``."""
    fr = dual_frame(theta, eta, tol) if frame is None else frame
    return omega(fr.T), omega(fr.E), omega(fr.Eb)


def frame_expand_2form(Omega: TwoForm, theta: OneForm, eta: OneForm, tol: float = FRAME_TOL,
                       frame: DualFrame | None = None):
    """Coefficients ``(c_te, c_teb, c_eeb)`` with ``Ω = c_te θ∧η + c_teb θ∧η̄ + c_eeb η∧η̄``."""
    fr = dual_frame(theta, eta, tol) if frame is None else frame
    return Omega(fr.T, fr.E), Omega(fr.T, fr.Eb), Omega(fr.E, fr.Eb)


def reassemble_2form(coeffs, theta: OneForm, eta: OneForm) -> TwoForm:
    c_te, c_teb, c_eeb = coeffs
    etab = eta.conj()
    return theta.wedge(eta) * c_te + theta.wedge(etab) * c_teb + eta.wedge(etab) * c_eeb


# ---------------------------------------------------------------------------
# point sampling


def sample_at(field: ScalarField, point, width: int = 6):
    """Value at an arbitrary point by tensor-product Lagrange interpolation.

    Uses ``width`` nodes per axis around the point; exact for polynomials of
    degree below ``width`` in each variable.  Nodes must be valid.
    """
    grid = field.grid
    weights = []
    starts = []
    for axis, c in zip("xyu", point):
        i = "xyu".index(axis)
        s = (c - grid.origin[i]) / grid.spacing(axis)
        n = grid.count(axis)
        lo = int(math.floor(s)) - (width // 2 - 1)
        lo = min(max(lo, 0), n - width)
        nodes = np.arange(lo, lo + width, dtype=float)
        w = np.ones(width)
        for j in range(width):
            for k in range(width):
                if k != j:
                    w[j] *= (s - nodes[k]) / (nodes[j] - nodes[k])
        weights.append(w)
        starts.append(lo)
    wx, wy, wu = weights
    sx, sy, su = starts
    block = field.values[su:su + width, sy:sy + width, sx:sx + width]
    mblock = field.mask[su:su + width, sy:sy + width, sx:sx + width]
    if not mblock.all():
        raise ValueError(f"interpolation stencil around {point} touches invalid points")
    return np.einsum("k,j,i,kji->", wu, wy, wx, block)
