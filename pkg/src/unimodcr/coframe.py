"""Canonical coframing and invariants of a graph hypersurface ``Im w = F(z, z̄, u)``.

The pipeline is

    F  ->  (θ₀, η₀, L₀)  ->  canonical (θ, η)  ->  (a, b)  ->  secondary  ->  s

with every derivative taken numerically on the grid.  Higher frame
derivatives differentiate already computed fields, so each stage loses a
little accuracy and (in trim-margin mode) two more grid points of margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateHypersurface, FrameResidualExceeded, IdentityViolation,
                     NonRealA, ZeroScale)
from .grid import (FRAME_TOL, DualFrame, OneForm, ScalarField, TwoForm, dual_frame,
                   exterior_d, frame_expand_1form, frame_expand_2form, gradient, partial,
                   wirtinger)


@dataclass(frozen=True)
class Tolerances:
    """Thresholds used by the checks in this module.

    ``imag_a`` and ``identity`` gate discretization quality and should be
    loosened on coarse grids; ``normalization`` is off unless set.
    """

    phi: float = 1e-8
    degen: float = 1e-6
    frame: float = FRAME_TOL
    imag_a: float = 1e-4
    identity: float = 1e-3
    normalization: float = math.inf


DEFAULT_TOL = Tolerances()


@dataclass
class GraphHypersurface:
    """The hypersurface ``Im w = F`` with ``w = u + i v`` in a unimodular chart ``(w, z)``."""

    F: ScalarField
    w_name: str = "w"
    z_name: str = "z"

    def __post_init__(self):
        if not self.F.is_real:
            imag = np.abs(np.imag(self.F.values))[self.F.mask]
            if imag.size and imag.max() > 0.0:
                raise ValueError("defining function F must be real")
            self.F = self.F.real

    @property
    def grid(self):
        return self.F.grid


@dataclass
class GraphDerivatives:
    F_u: ScalarField
    F_z: ScalarField
    F_zb: ScalarField
    F_uu: ScalarField
    F_zzb: ScalarField
    F_uz: ScalarField
    F_uzb: ScalarField


def graph_derivatives(M: GraphHypersurface) -> GraphDerivatives:
    F = M.F
    F_u = partial(F, "u")
    F_xx = partial(F, "x", 2)
    F_yy = partial(F, "y", 2)
    return GraphDerivatives(
        F_u=F_u,
        F_z=wirtinger(F, "z"),
        F_zb=wirtinger(F, "zbar"),
        F_uu=partial(F, "u", 2),
        F_zzb=0.25 * (F_xx + F_yy),
        F_uz=wirtinger(F_u, "z"),
        F_uzb=wirtinger(F_u, "zbar"),
    )


def raw_coframe(M: GraphHypersurface, derivs: GraphDerivatives | None = None):
    """``θ₀ = du - iF_z/(1-iF_u) dz + iF_z̄/(1+iF_u) dz̄`` and ``η₀ = (1+iF_u) dz``."""
    d = graph_derivatives(M) if derivs is None else derivs
    one = ScalarField.constant(M.grid, 1.0).with_mask(d.F_u.mask)
    zero = ScalarField.constant(M.grid, 0.0).with_mask(d.F_u.mask)
    theta0 = OneForm(one * 1.0 + 0j, -1j * d.F_z / (1 - 1j * d.F_u), 1j * d.F_zb / (1 + 1j * d.F_u))
    eta0 = OneForm(zero + 0j, 1 + 1j * d.F_u, zero + 0j)
    return theta0, eta0


def torsion_density(M: GraphHypersurface, derivs: GraphDerivatives | None = None) -> ScalarField:
    """``C = (1+F_u²)³ L₀``, i.e. twice the bracket of the flow equation."""
    d = graph_derivatives(M) if derivs is None else derivs
    X = (1 - 1j * d.F_u) * d.F_zb * d.F_uz
    bracket = (1 + d.F_u * d.F_u) * d.F_zzb + (d.F_z * d.F_zb).real * d.F_uu + 2.0 * X.imag
    return 2.0 * bracket


def _first_bad(mask_bad, grid):
    idx = tuple(int(i) for i in np.argwhere(mask_bad)[0])
    return {"index": idx, "point": grid.point(idx)}


def compute_L0(M: GraphHypersurface, derivs: GraphDerivatives | None = None,
               tol: Tolerances = DEFAULT_TOL, check: bool = True) -> ScalarField:
    d = graph_derivatives(M) if derivs is None else derivs
    # complex evaluation of the displayed formula, then reality check
    bracket = ((1 + d.F_u * d.F_u) * d.F_zzb + d.F_z * d.F_zb * d.F_uu
               - 1j * (1 - 1j * d.F_u) * d.F_zb * d.F_uz
               + 1j * (1 + 1j * d.F_u) * d.F_z * d.F_uzb)
    L0c = 2.0 * bracket / (1 + d.F_u * d.F_u) ** 3
    m = L0c.mask
    scale = np.maximum(1.0, np.abs(L0c.values))
    if np.any((np.abs(np.imag(L0c.values)) / scale)[m] > 1e-8):
        raise ArithmeticError("L0 has a non-negligible imaginary part")
    L0 = L0c.real
    if check:
        bad = m & ~(np.abs(L0.values) >= tol.degen)
        if bad.any():
            loc = _first_bad(bad, M.grid)
            raise DegenerateHypersurface(
                f"|L0| < {tol.degen:g} at {loc['point']}", location=loc)
    return L0


@dataclass
class CoframeField:
    theta: OneForm
    eta: OneForm
    L0: ScalarField
    lam: ScalarField
    residuals: dict = field(default_factory=dict)
    _frame: DualFrame | None = field(default=None, repr=False)

    @property
    def grid(self):
        return self.theta.grid

    @property
    def mask(self):
        return self.theta.mask & self.eta.mask

    @property
    def orientation(self) -> int:
        """+1 when L₀ > 0 on the valid set, -1 when L₀ < 0, 0 if mixed."""
        v = self.L0.valid()
        if v.size and np.all(v > 0):
            return 1
        if v.size and np.all(v < 0):
            return -1
        return 0

    @property
    def frame(self) -> DualFrame:
        if self._frame is None:
            self._frame = dual_frame(self.theta, self.eta)
        return self._frame


def _lambda(L0: ScalarField) -> ScalarField:
    # signed real cube root: λ = L₀^{-1/3}
    return L0.apply(lambda v: np.sign(v) * np.abs(v) ** (-1.0 / 3.0))


def canonical_coframe(M: GraphHypersurface, tol: Tolerances = DEFAULT_TOL) -> CoframeField:
    d = graph_derivatives(M)
    theta0, eta0 = raw_coframe(M, d)
    L0 = compute_L0(M, d, tol)
    lam = _lambda(L0)
    theta = theta0 * lam
    eta_p = eta0 * (1.0 / lam)
    dtheta = exterior_d(theta)
    c_te, _, _ = frame_expand_2form(dtheta, theta, eta_p, tol.frame)
    P = 1j * c_te
    eta = eta_p + theta * P.conj()
    C = CoframeField(theta, eta, L0, lam)

    phi = theta.wedge(eta)
    phi_ref = theta0.wedge(eta0)
    rel = max(_relmax(a, b) for a, b in zip(phi.components(), phi_ref.components()))
    resid = (dtheta - eta.wedge(eta.conj()) * 1j).max_abs()
    C.residuals.update(phi=rel, normalization=resid, theta_reality=theta.reality_defect())
    if rel > tol.phi:
        raise FrameResidualExceeded(f"theta^eta deviates from the pulled-back 2-form by {rel:.3g}")
    if resid > tol.normalization:
        raise FrameResidualExceeded(f"|dθ - iη∧η̄| = {resid:.3g} exceeds {tol.normalization:g}")
    return C


def _relmax(f: ScalarField, g: ScalarField) -> float:
    m = f.mask & g.mask
    diff = np.abs(f.values - g.values)[m]
    if not diff.size:
        return 0.0
    return float(diff.max() / max(1.0, np.abs(g.values[m]).max()))


def pullback_form(M: GraphHypersurface, derivs: GraphDerivatives | None = None) -> TwoForm:
    """``(1+iF_u) du∧dz + iF_z̄ dz̄∧dz`` as a :class:`TwoForm`."""
    d = graph_derivatives(M) if derivs is None else derivs
    zero = 0.0 * d.F_u + 0j
    return TwoForm(1 + 1j * d.F_u, zero, -1j * d.F_zb)


def normalization_residual(C: CoframeField) -> TwoForm:
    return exterior_d(C.theta) - C.eta.wedge(C.eta.conj()) * 1j


@dataclass
class InvariantField:
    L0: ScalarField
    a: ScalarField
    b: ScalarField
    a_t: ScalarField | None = None
    a_e: ScalarField | None = None
    a_eb: ScalarField | None = None
    b_t: ScalarField | None = None
    b_e: ScalarField | None = None
    b_eb: ScalarField | None = None
    s: ScalarField | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def has_secondary(self):
        return self.a_t is not None


def primary_invariants(C: CoframeField, tol: Tolerances = DEFAULT_TOL) -> InvariantField:
    """Read ``a, b`` off ``dη = 2iθ∧(aη + bη̄)``."""
    deta = exterior_d(C.eta)
    c_te, c_teb, c_eeb = frame_expand_2form(deta, C.theta, C.eta, frame=C.frame)
    a_c = c_te / 2j
    b = c_teb / 2j
    imag_a = a_c.imag.max_abs()
    if imag_a > tol.imag_a:
        raise NonRealA(f"max |Im a| = {imag_a:.3g} exceeds {tol.imag_a:g}")
    inv = InvariantField(L0=C.L0, a=a_c.real, b=b)
    inv.residuals.update(imag_a=imag_a, eta_eta_bar=c_eeb.max_abs())
    return inv


def reeb(C: CoframeField):
    """Components ``(T_u, T_z, T_z̄)`` of the Reeb field."""
    return C.frame.T


def frame_derivative(f: ScalarField, C: CoframeField):
    """``(f_θ, f_η, f_η̄)`` with ``df = f_θ θ + f_η η + f_η̄ η̄``."""
    return frame_expand_1form(gradient(f), C.theta, C.eta, frame=C.frame)


def secondary_invariants(inv: InvariantField, C: CoframeField,
                         tol: Tolerances = DEFAULT_TOL) -> InvariantField:
    a_t, a_e, a_eb = frame_derivative(inv.a, C)
    b_t, b_e, b_eb = frame_derivative(inv.b, C)
    defect = (b_e - a_e.conj()).max_abs()
    out = InvariantField(inv.L0, inv.a, inv.b, a_t, a_e, a_eb, b_t, b_e, b_eb, inv.s,
                         dict(inv.residuals))
    out.residuals["b_e_minus_conj_a_e"] = defect
    if defect > tol.identity:
        raise IdentityViolation(f"|b_η - conj(a_η)| = {defect:.3g} exceeds {tol.identity:g}")
    return out


def sub_laplacian(f: ScalarField, C: CoframeField) -> ScalarField:
    """``Lf = f_ηη̄ + f_η̄η``."""
    _, f_e, f_eb = frame_derivative(f, C)
    _, _, f_e_eb = frame_derivative(f_e, C)
    _, f_eb_e, _ = frame_derivative(f_eb, C)
    return f_e_eb + f_eb_e


def compute_invariants(M: GraphHypersurface, tol: Tolerances = DEFAULT_TOL,
                       secondary: bool = True, flatness: bool = False):
    """Convenience driver returning ``(coframe, invariants)``."""
    C = canonical_coframe(M, tol)
    inv = primary_invariants(C, tol)
    if secondary or flatness:
        inv = secondary_invariants(inv, C, tol)
    if flatness:
        inv.s = cr_flatness(inv, C)
    return C, inv


def cr_flatness(inv: InvariantField, C: CoframeField) -> ScalarField:
    """``s = a_η̄η̄ + 2i b_θ + 6ab``."""
    if not inv.has_secondary:
        raise ValueError("secondary invariants must be computed first")
    _, _, a_ebeb = frame_derivative(inv.a_eb, C)
    return a_ebeb + 2j * inv.b_t + 6.0 * inv.a * inv.b


@dataclass
class CartanForms:
    alpha: OneForm
    beta: OneForm
    sigma: OneForm


def cartan_forms(inv: InvariantField, C: CoframeField) -> CartanForms:
    """The forms ``α, β, σ`` with the free function set to zero."""
    theta, eta = C.theta, C.eta
    etab = eta.conj()
    _, a_e_e, a_e_eb = frame_derivative(inv.a_e, C)
    _, a_eb_e, _ = frame_derivative(inv.a_eb, C)
    a, b = inv.a, inv.b
    alpha = theta * (-1.5j * a)
    beta = eta * (0.5j * a) + etab * (2j * b) - theta * inv.a_eb
    coef = 0.25 * a * a - 4.0 * (b * b.conj()) - 0.5 * a_e_eb - 0.5 * a_eb_e
    sigma = eta * (-0.5j * inv.a_e) + etab * (0.5j * inv.a_eb) + theta * coef
    return CartanForms(alpha, beta, sigma)


def structure_residuals(inv: InvariantField, C: CoframeField, forms: CartanForms | None = None):
    """Residuals of the structure equations and the independent estimate of ``s``.

    Returns ``(residuals, s_from_forms)`` where ``s_from_forms`` is the
    ``θ∧η̄`` coefficient of ``dβ + σ∧η - ᾱ∧β``.
    """
    f = cartan_forms(inv, C) if forms is None else forms
    theta, eta = C.theta, C.eta
    etab = eta.conj()
    alpha_b = f.alpha.conj()
    r_theta = exterior_d(theta) + (f.alpha + alpha_b).wedge(theta) - eta.wedge(etab) * 1j
    r_eta = exterior_d(eta) + f.beta.wedge(theta) + f.alpha.wedge(eta)
    r_alpha = (exterior_d(f.alpha) + f.sigma.wedge(theta) + f.beta.wedge(etab) * 1j
               + f.beta.conj().wedge(eta) * 2j)
    rest = exterior_d(f.beta) + f.sigma.wedge(eta) - alpha_b.wedge(f.beta)
    c_te, c_teb, c_eeb = frame_expand_2form(rest, theta, eta, frame=C.frame)
    res = {
        "dtheta": r_theta.max_abs(),
        "deta": r_eta.max_abs(),
        "dalpha": r_alpha.max_abs(),
        "dbeta_theta_eta": c_te.max_abs(),
        "dbeta_eta_etabar": c_eeb.max_abs(),
    }
    return res, c_teb


def rescale_invariants(a, b, lam: complex):
    """Invariants after the holomorphic volume form is multiplied by ``lam``."""
    if lam == 0:
        raise ZeroScale("scale factor must be nonzero")
    r = abs(lam)
    return a * r ** (-2.0 / 3.0), b * lam ** (-2) * r ** (4.0 / 3.0)


def conjugate_structure(a, b):
    """Invariants of the conjugate complex structure."""
    return a, np.conj(b)


def rotate_b_real(a, b):
    """Phase-rescale so that ``b`` is real and nonnegative; returns ``(a, |b|, λ)``."""
    if b == 0:
        return a, 0.0, 1.0
    phi = 0.5 * np.angle(b)
    lam = np.exp(1j * phi)
    a2, b2 = rescale_invariants(a, b, lam)
    return a2, float(np.real(b2)), lam
