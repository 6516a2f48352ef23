"""Canonical coframe, primary and secondary invariants, Reeb field, flatness scalar."""

import math

import numpy as np
import pytest

from unimodcr.coframe import (
    GraphHypersurface, InvariantField, Tolerances, canonical_coframe, compute_L0,
    compute_invariants, conjugate_structure, cr_flatness, frame_derivative, graph_derivatives,
    normalization_residual, primary_invariants, pullback_form, raw_coframe, reeb,
    rescale_invariants, rotate_b_real, secondary_invariants, structure_residuals, sub_laplacian,
)
from unimodcr.errors import (DegenerateHypersurface, FrameResidualExceeded, IdentityViolation,
                             NonRealA, ZeroScale)
from unimodcr.grid import Grid3, ScalarField, exterior_d
from unimodcr.models import normal_form_F, random_smooth_F, rescaled

EXACT_TOL = 1e-12
PULLBACK_TOL = 1e-10
REEB_TOL = 1e-8
REAL_TOL = 1e-8
PLANTED_TOL = 1e-3
SPHERE_TOL = 1e-3
ORACLE_TOL = 1e-6
ORDER4_MIN = 3.5
ORDER_MIN = 3.0
COMMUTANT_ORDER_MIN = 2.0
HEIS_S_TOL = 1e-3
SCALING_TOL = 1e-6
CAUCHY_RATIO_MIN = 12.0

A0, B0 = 0.3, 0.1 + 0.2j
NF = normal_form_F(A0, B0)
ORIGIN = (0.0, 0.0, 0.0)

# Independent autodiff evaluation (tests/oracles/jax_invariants.py) of the
# coframe construction for the planted normal form at an off-origin point.
ORACLE_POINT = (0.1, -0.07, 0.05)
ORACLE_A = 0.24197866
ORACLE_B = 0.07709415 - 0.15284242j
ORACLE_L0 = 1.04668


def heisenberg(x, y, u):
    return 0.5 * (x * x + y * y) + 0 * u


def sphere(r0, sign=1.0):
    return lambda x, y, u: sign * np.sqrt(r0 - x * x - y * y - u * u)


def surface(grid, f):
    return GraphHypersurface(ScalarField.from_function(grid, f))


def at(field, grid, point=ORIGIN):
    return field.values[grid.nearest_index(point)]


def order(e1, e2):
    return math.log2(e1 / e2)


@pytest.fixture(scope="module")
def heis():
    g = Grid3.centered(21, 1.0)
    C, inv = compute_invariants(surface(g, heisenberg), flatness=True)
    return g, C, inv


@pytest.fixture(scope="module")
def nf_runs():
    out = {}
    for h in (0.04, 0.02, 0.01):
        g = Grid3.from_spacing(h, 16)
        out[h] = (g,) + compute_invariants(surface(g, NF), flatness=True)
    return out


# -- raw coframe and L0 ------------------------------------------------------


def test_raw_coframe_heisenberg():
    g = Grid3.centered(13, 1.0)
    theta0, eta0 = raw_coframe(surface(g, heisenberg))
    z = ScalarField.from_function(g, lambda x, y, u: x + 1j * y + 0 * u)
    assert (theta0.c_u - 1).max_abs() <= EXACT_TOL
    assert (theta0.c_z + 0.5j * z.conj()).max_abs() <= EXACT_TOL
    assert (theta0.c_zb - 0.5j * z).max_abs() <= EXACT_TOL
    assert (eta0.c_z - 1).max_abs() <= EXACT_TOL
    assert eta0.c_u.max_abs() <= EXACT_TOL and eta0.c_zb.max_abs() <= EXACT_TOL


def test_raw_coframe_flat_plane():
    g = Grid3.centered(9, 1.0)
    theta0, eta0 = raw_coframe(surface(g, lambda x, y, u: 0 * x * y * u))
    assert (theta0.c_u - 1).max_abs() <= EXACT_TOL
    assert theta0.c_z.max_abs() <= EXACT_TOL and theta0.c_zb.max_abs() <= EXACT_TOL
    assert (eta0.c_z - 1).max_abs() <= EXACT_TOL


def test_raw_coframe_re_z():
    g = Grid3.centered(9, 1.0)
    theta0, eta0 = raw_coframe(surface(g, lambda x, y, u: x + 0 * y * u))
    assert (theta0.c_z + 0.5j).max_abs() <= EXACT_TOL
    assert (theta0.c_zb - 0.5j).max_abs() <= EXACT_TOL
    assert (eta0.c_z - 1).max_abs() <= EXACT_TOL
    assert theta0.reality_defect() <= EXACT_TOL


@pytest.mark.parametrize("seed", range(5))
def test_pullback_identity(seed):
    g = Grid3.centered(13, 1.0)
    M = surface(g, random_smooth_F(seed, 0.2))
    theta0, eta0 = raw_coframe(M)
    diff = theta0.wedge(eta0) - pullback_form(M)
    assert diff.max_abs() <= PULLBACK_TOL


def test_L0_heisenberg_is_one(heis):
    _, C, _ = heis
    assert (C.L0 - 1).max_abs() <= EXACT_TOL


def test_L0_plane_degenerate():
    g = Grid3.centered(9, 1.0)
    with pytest.raises(DegenerateHypersurface):
        compute_L0(surface(g, lambda x, y, u: 0 * x * y * u))


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_L0_sphere_origin(sign):
    g = Grid3.from_spacing(0.02, 8)
    L0 = compute_L0(surface(g, sphere(1.0, sign)))
    assert abs(at(L0, g)) == pytest.approx(1.0, abs=1e-6)


def test_torsion_density_matches_L0():
    g = Grid3.centered(13, 0.5)
    M = surface(g, random_smooth_F(3, 0.2))
    from unimodcr.coframe import torsion_density
    d = graph_derivatives(M)
    C = torsion_density(M, d)
    L0 = compute_L0(M, d)
    assert (C - (1 + d.F_u * d.F_u) ** 3 * L0).max_abs() <= PULLBACK_TOL


# -- canonical coframe -------------------------------------------------------


def test_canonical_coframe_heisenberg(heis):
    g, C, _ = heis
    theta0, eta0 = raw_coframe(surface(g, heisenberg))
    for c, c0 in zip(C.theta.components() + C.eta.components(),
                     theta0.components() + eta0.components()):
        assert (c - c0).max_abs() <= EXACT_TOL
    assert C.orientation == 1


def _sphere_residuals(h):
    g = Grid3.from_spacing(h, 10)
    C = canonical_coframe(surface(g, sphere(1.0)))
    inv = primary_invariants(C)
    return C.residuals["normalization"], inv.residuals["eta_eta_bar"], inv.residuals["imag_a"]


def test_canonicity_fourth_order_sphere():
    coarse, fine = _sphere_residuals(0.04), _sphere_residuals(0.02)
    for e1, e2 in zip(coarse, fine):
        assert order(e1, e2) >= ORDER4_MIN


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_sphere_patch_orientation(sign):
    # the upper patch has L0 < 0 (the ball lies below the graph), the lower one L0 > 0
    g = Grid3.from_spacing(0.02, 8)
    C = canonical_coframe(surface(g, sphere(1.0, sign)))
    assert C.orientation == -int(sign)
    assert C.residuals["normalization"] <= 1e-5


def test_normalization_bound_enforced():
    g = Grid3.from_spacing(0.04, 8)
    with pytest.raises(FrameResidualExceeded):
        canonical_coframe(surface(g, NF), Tolerances(normalization=1e-14))


# -- primary invariants ------------------------------------------------------


def test_heisenberg_invariants_vanish(heis):
    _, _, inv = heis
    assert inv.a.max_abs() <= 1e-10 and inv.b.max_abs() <= 1e-10


def test_normal_form_planted_values(nf_runs):
    # as stated: origin invariants equal the planted (a0, b0)
    g, _, inv = nf_runs[0.02]
    assert abs(at(inv.a, g) - A0) <= PLANTED_TOL
    assert abs(at(inv.b, g) - B0) <= PLANTED_TOL


def test_normal_form_b_is_conjugate_of_planted(nf_runs):
    g, _, inv = nf_runs[0.02]
    assert abs(at(inv.b, g) - np.conj(B0)) <= PLANTED_TOL


def test_normal_form_convergence(nf_runs):
    errs = []
    for h in (0.04, 0.02, 0.01):
        g, _, inv = nf_runs[h]
        errs.append(abs(at(inv.a, g) - A0) + abs(at(inv.b, g) - np.conj(B0)))
    assert order(errs[0], errs[1]) >= ORDER_MIN
    assert order(errs[1], errs[2]) >= ORDER_MIN


def test_normal_form_matches_autodiff_oracle():
    g = Grid3.from_spacing(0.01, 20)
    C, inv = compute_invariants(surface(g, NF), secondary=False)
    assert at(C.L0, g, ORACLE_POINT) == pytest.approx(ORACLE_L0, abs=1e-5)
    assert abs(at(inv.a, g, ORACLE_POINT) - ORACLE_A) <= ORACLE_TOL
    assert abs(at(inv.b, g, ORACLE_POINT) - ORACLE_B) <= ORACLE_TOL


@pytest.mark.parametrize("r0", [1.0, 8.0])
@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_sphere_invariants(r0, sign):
    g = Grid3.from_spacing(0.02, 12)
    _, inv = compute_invariants(surface(g, sphere(r0, sign)))
    assert abs(at(inv.a, g) - r0 ** (-2.0 / 3.0)) <= SPHERE_TOL
    assert abs(at(inv.b, g)) <= SPHERE_TOL


def test_nonreal_a_raised():
    g = Grid3.from_spacing(0.04, 8)
    with pytest.raises(NonRealA):
        compute_invariants(surface(g, NF), Tolerances(imag_a=1e-15), secondary=False)


def test_identity_violation_raised():
    g = Grid3.from_spacing(0.04, 8)
    with pytest.raises(IdentityViolation):
        compute_invariants(surface(g, NF), Tolerances(identity=1e-15))


# -- Reeb field and frame derivatives ----------------------------------------


def test_reeb_heisenberg(heis):
    _, C, _ = heis
    T_u, T_z, T_zb = reeb(C)
    assert (T_u - 1).max_abs() <= EXACT_TOL
    assert T_z.max_abs() <= EXACT_TOL and T_zb.max_abs() <= EXACT_TOL


@pytest.mark.parametrize("f", [NF, sphere(1.0)])
def test_reeb_defining_properties(f):
    g = Grid3.from_spacing(0.02, 8)
    C = canonical_coframe(surface(g, f))
    T = reeb(C)
    assert (C.theta(T) - 1).max_abs() <= REEB_TOL
    assert C.eta(T).max_abs() <= REEB_TOL
    # ι_T dθ = 0 up to the normalization residual
    iota = normalization_residual(C).contract(T)
    dtheta_T = exterior_d(C.theta).contract(T)
    for c, r in zip(dtheta_T.components(), iota.components()):
        assert (c - r).max_abs() <= REEB_TOL


def test_frame_derivative_constant(heis):
    g, C, _ = heis
    for c in frame_derivative(ScalarField.constant(g, 3.0), C):
        assert c.max_abs() <= EXACT_TOL


def test_frame_derivative_of_u_heisenberg(heis):
    g, C, _ = heis
    ft, fe, feb = frame_derivative(ScalarField.from_function(g, lambda x, y, u: u + 0 * x * y), C)
    z = ScalarField.from_function(g, lambda x, y, u: x + 1j * y + 0 * u)
    assert (ft - 1).max_abs() <= EXACT_TOL
    assert (fe - 0.5j * z.conj()).max_abs() <= EXACT_TOL
    assert (feb + 0.5j * z).max_abs() <= EXACT_TOL


def _test_function(x, y, u):
    return np.sin(x + 2 * y) * np.cos(u) + x * u


def _commutants(h):
    g = Grid3.from_spacing(h, 14)
    C, inv = compute_invariants(surface(g, NF))
    f = ScalarField.from_function(g, _test_function)
    ft, fe, feb = frame_derivative(f, C)
    fte, fteb = frame_derivative(ft, C)[1:]
    fet, _, feeb = frame_derivative(fe, C)
    febt, febe, _ = frame_derivative(feb, C)
    a, b = inv.a, inv.b
    c1 = feeb - febe - 1j * ft
    c2 = fte - fet - 2j * a * fe + 2j * b.conj() * feb
    c3 = fteb - febt + 2j * a * feb - 2j * b * fe
    return [c.max_abs() for c in (c1, c2, c3)]


def test_commutant_identities():
    coarse, fine = _commutants(0.04), _commutants(0.02)
    for e1, e2 in zip(coarse, fine):
        assert e2 < 1e-4
        assert order(e1, e2) >= COMMUTANT_ORDER_MIN


# -- secondary invariants ----------------------------------------------------


def test_secondary_of_constant_invariants(heis):
    g, C, _ = heis
    inv = InvariantField(C.L0, ScalarField.constant(g, 0.5), ScalarField.constant(g, -0.25 + 0j))
    out = secondary_invariants(inv, C)
    for f in (out.a_t, out.a_e, out.a_eb, out.b_t, out.b_e, out.b_eb):
        assert f.max_abs() <= EXACT_TOL


def test_secondary_normal_form_cauchy(nf_runs):
    # a_e vanishes at the origin by symmetry of the planted form, so the
    # refinement study runs at an off-origin node
    for h in (0.04, 0.02, 0.01):
        assert abs(at(nf_runs[h][2].a_e, nf_runs[h][0])) <= 1e-9
    p = (0.08, -0.08, 0.0)  # a valid node of all three grids
    vals = [at(nf_runs[h][2].a_e, nf_runs[h][0], p) for h in (0.04, 0.02, 0.01)]
    ratio = abs(vals[0] - vals[1]) / abs(vals[1] - vals[2])
    assert ratio >= CAUCHY_RATIO_MIN
    assert np.isfinite(vals[2])


def test_b_eta_equals_conj_a_etabar(nf_runs):
    g, _, inv = nf_runs[0.01]
    assert (inv.b_e - inv.a_e.conj()).max_abs() <= 1e-6


def test_b_zero_means_constant_a():
    g = Grid3.from_spacing(0.02, 12)
    _, inv = compute_invariants(surface(g, sphere(1.0)))
    for f in (inv.a_t, inv.a_e, inv.a_eb):
        assert f.max_abs() <= 1e-5


# -- sub-Laplacian -----------------------------------------------------------


def test_sub_laplacian_constant(heis):
    g, C, _ = heis
    assert sub_laplacian(ScalarField.constant(g, 2.0), C).max_abs() <= EXACT_TOL


def test_sub_laplacian_heisenberg_zzbar(heis):
    g, C, _ = heis
    L = sub_laplacian(ScalarField.from_function(g, lambda x, y, u: x * x + y * y + 0 * u), C)
    assert (L - 2).max_abs() <= 1e-10


def test_sub_laplacian_real_for_real_input(nf_runs):
    g, C, _ = nf_runs[0.02][:2] + (None,)
    L = sub_laplacian(ScalarField.from_function(g, _test_function), C)
    assert L.imag.max_abs() <= REAL_TOL


# -- CR flatness -------------------------------------------------------------


@pytest.mark.parametrize("a, b", [(0.5, -0.25), (0.3, 0.1 + 0.2j), (0.0, 1.0), (1.0, 0.0)])
def test_flatness_of_constant_invariants(heis, a, b):
    g, C, _ = heis
    inv = secondary_invariants(
        InvariantField(C.L0, ScalarField.constant(g, a), ScalarField.constant(g, complex(b))), C)
    s = cr_flatness(inv, C)
    assert (s - 6 * a * b).max_abs() <= 1e-8


def test_flatness_mhq_state(heis):
    g, C, _ = heis
    inv = secondary_invariants(
        InvariantField(C.L0, ScalarField.constant(g, 0.5), ScalarField.constant(g, -0.25 + 0j)), C)
    assert cr_flatness(inv, C).mean() == pytest.approx(-0.75)


def test_flatness_heisenberg(heis):
    _, _, inv = heis
    assert inv.s.max_abs() <= HEIS_S_TOL


def test_flatness_requires_secondary(heis):
    g, C, inv = heis
    with pytest.raises(ValueError):
        cr_flatness(InvariantField(C.L0, inv.a, inv.b), C)


def test_flatness_dual_route(nf_runs):
    # s from its definition against the θ∧η̄ coefficient of dβ + σ∧η - ᾱ∧β
    diffs = []
    for h in (0.04, 0.02, 0.01):
        g, C, inv = nf_runs[h]
        res, s2 = structure_residuals(inv, C)
        diffs.append(abs(at(inv.s, g) - at(s2, g)))
    assert diffs[2] <= 1e-6
    assert order(diffs[0], diffs[2]) / 2 >= COMMUTANT_ORDER_MIN


def test_structure_residuals_converge(nf_runs):
    r = [structure_residuals(nf_runs[h][2], nf_runs[h][1])[0] for h in (0.04, 0.01)]
    for key in r[0]:
        assert r[1][key] <= 1e-5
        assert order(r[0][key], r[1][key]) / 2 >= COMMUTANT_ORDER_MIN


# -- scaling -----------------------------------------------------------------


def test_rescale_identity():
    assert rescale_invariants(0.3, 0.1 + 0.2j, 1.0) == (0.3, 0.1 + 0.2j)


def test_rescale_example():
    a, b = rescale_invariants(4.0, 2.0, 8.0)
    assert a == pytest.approx(1.0) and b == pytest.approx(0.5)


def test_rescale_phase_only():
    phi = 0.4
    a, b = rescale_invariants(0.3, 0.1 + 0.2j, np.exp(1j * phi))
    assert a == pytest.approx(0.3)
    assert b == pytest.approx(np.exp(-2j * phi) * (0.1 + 0.2j))


def test_rescale_zero_raises():
    with pytest.raises(ZeroScale):
        rescale_invariants(1.0, 1.0, 0.0)


def test_conjugate_structure_and_rotation():
    assert conjugate_structure(0.3, 0.1 + 0.2j) == (0.3, 0.1 - 0.2j)
    a, b, lam = rotate_b_real(0.3, 0.1 + 0.2j)
    assert a == pytest.approx(0.3)
    assert b == pytest.approx(abs(0.1 + 0.2j))
    assert abs(lam) == pytest.approx(1.0)


def _origin_invariants(f, h=0.01):
    g = Grid3.from_spacing(h, 12)
    _, inv = compute_invariants(surface(g, f), secondary=False)
    return at(inv.a, g), at(inv.b, g)


@pytest.fixture(scope="module")
def nf_origin():
    return _origin_invariants(NF)


@pytest.mark.parametrize("lam", [8.0, 0.5j, 2.0 * np.exp(0.7j)])
def test_scaling_covariance(nf_origin, lam):
    a, b = nf_origin
    a2, b2 = _origin_invariants(rescaled(NF, lam))
    ea, eb = rescale_invariants(a, b, lam)
    assert abs(a2 - ea) <= SCALING_TOL
    assert abs(b2 - eb) <= SCALING_TOL


@pytest.mark.parametrize("lam", [8.0, 0.5j, 2.0 * np.exp(0.7j)])
def test_scaling_covariance_in_structure_equation_convention(nf_origin, lam):
    # direct substitution of (|λ|^{2/3}θ, λ|λ|^{-2/3}η) into dη = 2iθ∧(aη + bη̄)
    a, b = nf_origin
    a2, b2 = _origin_invariants(rescaled(NF, lam))
    r = abs(lam)
    assert abs(a2 - a * r ** (-2 / 3)) <= SCALING_TOL
    assert abs(b2 - b * (lam / np.conj(lam)) * r ** (-2 / 3)) <= SCALING_TOL


def test_coframe_scaling_real_lambda():
    lam = 8.0
    g = Grid3.from_spacing(0.01, 8)
    C = canonical_coframe(surface(g, NF))
    C2 = canonical_coframe(surface(g, rescaled(NF, lam)))
    # w' = λw, z' = z: θ' = λ^{2/3}θ and η' = λ^{1/3}η, with du = du'/λ
    th, th2 = [at(c, g) for c in C.theta.components()], [at(c, g) for c in C2.theta.components()]
    et, et2 = [at(c, g) for c in C.eta.components()], [at(c, g) for c in C2.eta.components()]
    assert th2[0] == pytest.approx(lam ** (2 / 3) * th[0] / lam, abs=1e-8)
    assert th2[1] == pytest.approx(lam ** (2 / 3) * th[1], abs=1e-8)
    assert et2[1] == pytest.approx(lam ** (1 / 3) * et[1], abs=1e-8)
