"""Closed-form and synthetic hypersurfaces used as oracles.

Kinds:

``heisenberg``      ``F = ½ z z̄``; flat invariants, flows by translation.
``normal-form``     ``F = ½ z z̄ (1 + b₀ z² + 3/2 a₀ z z̄ + b̄₀ z̄²)``.
``sphere-patch``    upper (or lower) graph of ``|z|² + u² + v² = r₀``.
``random-smooth``   ``½ z z̄`` plus a seeded trigonometric perturbation.
``custom-file``     ``F`` read from a snapshot file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .coframe import DEFAULT_TOL, GraphHypersurface, compute_L0
from .errors import (Collapse, ConfigError, DomainExceeded,
                     UnknownInvariants)
from .grid import Grid3, ScalarField

KINDS = ("heisenberg", "normal-form", "sphere-patch", "random-smooth", "custom-file")
RANDOM_MODES = 6


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    a0: float = 0.0
    b0: complex = 0j
    r0: float = 1.0
    lower: bool = False
    seed: int = 0
    amp: float = 0.05
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "sphere-patch" and not self.r0 > 0:
            raise ConfigError("sphere radius must be positive")
        if self.kind == "custom-file" and not self.path:
            raise ConfigError("custom-file model needs a path")

    @property
    def name(self) -> str:
        if self.kind == "heisenberg":
            return "heisenberg"
        if self.kind == "normal-form":
            return f"normalform:a={self.a0!r},b={_fmt_complex(self.b0)}"
        if self.kind == "sphere-patch":
            return f"sphere:r={self.r0!r}" + (",lower" if self.lower else "")
        if self.kind == "random-smooth":
            return f"random:seed={self.seed},amp={self.amp!r}"
        return f"file:{self.path}"


def _fmt_complex(b):
    b = complex(b)
    return f"{b.real!r}{'+' if b.imag >= 0 else '-'}{abs(b.imag)!r}i"


def heisenberg():
    return ModelSpec("heisenberg")


def normal_form(a0, b0):
    return ModelSpec("normal-form", a0=float(a0), b0=complex(b0))


def sphere_patch(r0=1.0, lower=False):
    return ModelSpec("sphere-patch", r0=float(r0), lower=lower)


def random_smooth(seed, amp=0.05):
    return ModelSpec("random-smooth", seed=int(seed), amp=float(amp))


def custom_file(path):
    return ModelSpec("custom-file", path=str(path))


# ---------------------------------------------------------------------------
# closed forms


def heisenberg_F(x, y, u):
    return 0.5 * (x * x + y * y) + 0.0 * u


def normal_form_F(a0, b0):
    b0 = complex(b0)

    def F(x, y, u):
        z = x + 1j * y
        zz = x * x + y * y
        return np.real(0.5 * zz * (1 + b0 * z * z + 1.5 * a0 * zz + np.conj(b0) * np.conj(z) ** 2)) + 0.0 * u

    return F


def sphere_radius_sq(r0, t):
    """``R(t) = (r₀^{2/3} - 4t/3)^{3/2}``, the squared radius after time ``t``."""
    base = r0 ** (2.0 / 3.0) - 4.0 * t / 3.0
    return base ** 1.5 if base > 0 else 0.0


def sphere_collapse_time(r0):
    return 0.75 * r0 ** (2.0 / 3.0)


def random_modes(seed, n_modes=RANDOM_MODES):
    """Wave vectors, amplitudes and phases from a PCG64 stream seeded with ``seed``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    k = rng.integers(-2, 3, size=(n_modes, 3))
    k[np.all(k == 0, axis=1)] = (1, 0, 0)
    c = rng.standard_normal(n_modes) / n_modes
    phase = rng.uniform(0.0, 2 * np.pi, n_modes)
    return k, c, phase


def random_smooth_F(seed, amp):
    k, c, phase = random_modes(seed)

    def F(x, y, u):
        out = 0.5 * (x * x + y * y) + 0.0 * u
        for j in range(len(c)):
            out = out + amp * c[j] * np.cos(k[j, 0] * x + k[j, 1] * y + k[j, 2] * u + phase[j])
        return out

    return F


# ---------------------------------------------------------------------------
# building


@lru_cache(maxsize=16)
def _rho_sq(grid: Grid3):
    x, y, u = grid.coords()
    return np.broadcast_to(x * x + y * y + u * u, grid.shape).copy()


def build(spec: ModelSpec, grid: Grid3, margin: float = 0.05) -> GraphHypersurface:
    """Sample the model on ``grid``.

    Sphere patches must stay inside ``|p|² ≤ (1 - margin) r₀``; normal forms
    must be nondegenerate over the whole grid.
    """
    if spec.kind == "heisenberg":
        F = ScalarField.from_function(grid, heisenberg_F)
    elif spec.kind == "normal-form":
        F = ScalarField.from_function(grid, normal_form_F(spec.a0, spec.b0))
        # the bracket must stay positive at every node; one-sided stencils reach the edges
        L0 = compute_L0(GraphHypersurface(ScalarField(grid.with_mode("dirichlet"), F.values)),
                        check=False)
        low = float(np.min(L0.values))
        if not low >= DEFAULT_TOL.degen:
            raise ConfigError(f"normal form {spec.name} degenerates on this grid (min L0 = {low:.3g})")
    elif spec.kind == "sphere-patch":
        rho = _rho_sq(grid)
        if rho.max() >= (1.0 - margin) * spec.r0:
            raise DomainExceeded(
                f"grid reaches |p|² = {rho.max():.4g}, beyond the patch of r0 = {spec.r0}")
        sgn = -1.0 if spec.lower else 1.0
        F = ScalarField(grid, sgn * np.sqrt(spec.r0 - rho))
    elif spec.kind == "random-smooth":
        F = ScalarField.from_function(grid, random_smooth_F(spec.seed, spec.amp))
    else:
        from .snapshot import read_snapshot
        snap = read_snapshot(spec.path)
        if "F" not in snap.fields:
            raise ConfigError(f"{spec.path} has no field named F")
        F = snap.fields["F"]
    return GraphHypersurface(F)


@dataclass
class SphereExact:
    """Concentric-sphere solution restricted to one graph patch.

    The evolved core is the ball ``|p| ≤ β √R(t)`` intersected with the
    points whose 5×5×5 stencil neighbourhood lies where the graph exists.
    """

    r0: float = 1.0
    lower: bool = False
    beta: float = 0.3

    @property
    def name(self):
        return f"sphere:r={self.r0!r}" + (",lower" if self.lower else "")

    def radius_sq(self, t):
        return sphere_radius_sq(self.r0, t)

    def values(self, grid, t):
        R = self.radius_sq(t)
        rho = _rho_sq(grid)
        with np.errstate(invalid="ignore"):
            v = np.sqrt(R - rho)
        v[rho >= R] = np.nan
        return -v if self.lower else v

    def core(self, grid, t):
        # the stencil of p (axis offsets 2h, mixed u-x and u-y offsets) stays
        # in the ball once |p| + reach < √R
        r = math.sqrt(self.radius_sq(t))
        reach = 2.0 * math.sqrt(max(grid.hx, grid.hy) ** 2 + grid.hu ** 2)
        lim = min(self.beta * r, r - reach)
        if lim <= 0:
            return np.zeros(grid.shape, bool)
        return _rho_sq(grid) <= lim * lim

    def center_height(self, t):
        h = math.sqrt(self.radius_sq(t))
        return -h if self.lower else h


@dataclass
class HeisenbergExact:
    name: str = "heisenberg"

    def values(self, grid, t):
        x, y, u = grid.coords()
        return np.broadcast_to(heisenberg_F(x, y, u) + t, grid.shape).copy()

    def core(self, grid, t):
        return np.ones(grid.shape, bool)

    def center_height(self, t):
        return float(t)


def exact_solution(spec: ModelSpec, **kw):
    """Flow solution object for the ``dirichlet-exact`` boundary mode."""
    if spec.kind == "heisenberg":
        return HeisenbergExact()
    if spec.kind == "sphere-patch":
        return SphereExact(spec.r0, spec.lower, **kw)
    raise UnknownInvariants(f"no closed-form flow for {spec.kind}")


def exact_flow(spec: ModelSpec, grid: Grid3, t: float) -> GraphHypersurface:
    """Closed-form time-``t`` hypersurface; raises :class:`Collapse` once the sphere is gone."""
    if spec.kind == "sphere-patch":
        tc = sphere_collapse_time(spec.r0)
        if t >= tc:
            raise Collapse(f"sphere of r0 = {spec.r0} collapses at t = {tc:g}", tc, (0.0, 0.0, 0.0))
    ex = exact_solution(spec)
    v = ex.values(grid, t)
    mask = np.isfinite(v)
    return GraphHypersurface(ScalarField(grid, v, mask))


def exact_invariants(spec: ModelSpec):
    """``(a, b)`` at the chart origin.

    For the normal form the ``b``-slot comes out conjugated: with the chart
    conventions used here, ``b₀ z²`` in ``F`` produces ``b = conj(b₀)``.
    """
    if spec.kind == "heisenberg":
        return 0.0, 0j
    if spec.kind == "normal-form":
        return spec.a0, complex(np.conj(spec.b0))
    if spec.kind == "sphere-patch":
        return spec.r0 ** (-2.0 / 3.0), 0j
    raise UnknownInvariants(f"no closed-form invariants for {spec.kind}")


def rescaled(F, lam: complex):
    """Defining function of the same hypersurface after ``Υ ↦ λΥ``.

    The unimodular chart ``(w', z') = (|λ| w, e^{iφ} z)`` with
    ``λ = |λ| e^{iφ}`` satisfies ``dw'∧dz' = λ dw∧dz``, so the hypersurface
    ``v = F(z, u)`` becomes ``v' = |λ| F(e^{-iφ} z', u'/|λ|)``.
    """
    r, phi = abs(lam), np.angle(lam)
    c, s = math.cos(phi), math.sin(phi)

    def G(x, y, u):
        # e^{-iφ}(x + i y)
        return r * F(c * x + s * y, -s * x + c * y, u / r)

    return G


# ---------------------------------------------------------------------------
# --model grammar

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def parse_complex(text: str) -> complex:
    t = text.strip().replace(" ", "")
    if t.endswith("i"):
        t = t[:-1] + "j"
    try:
        return complex(t)
    except ValueError as exc:
        raise ConfigError(f"cannot parse complex number {text!r}") from exc


def _params(body: str) -> dict:
    out = {}
    for part in filter(None, body.split(",")):
        if "=" not in part:
            out[part.strip()] = True
            continue
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_model(text: str) -> ModelSpec:
    """Parse ``heisenberg``, ``normalform:a=..,b=..``, ``sphere:r=..``, ``random:seed=..,amp=..``
    or ``file:<path>``."""
    text = text.strip()
    head, _, body = text.partition(":")
    try:
        if head == "heisenberg" and not body:
            return heisenberg()
        if head == "file" and body:
            return custom_file(body)
        p = _params(body)
        if head == "normalform":
            return normal_form(float(p.get("a", 0.0)), parse_complex(p.get("b", "0")))
        if head == "sphere":
            return sphere_patch(float(p.get("r", 1.0)), lower=bool(p.get("lower", False)))
        if head == "random":
            return random_smooth(int(p.get("seed", 0)), float(p.get("amp", 0.05)))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad model description {text!r}: {exc}") from exc
    raise ConfigError(f"unknown model {text!r}")
