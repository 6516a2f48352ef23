"""Homogeneous and cohomogeneity-one models at the level of invariants.

Under the normal flow a homogeneous structure with constant invariants
``(a, b)`` stays homogeneous and the invariants solve

    a' = 4/3 a² + 4|b|²,     b' = 16/3 a b.

The companion matrix ``F(t)`` (initially the identity) tracks the coframe:
``F' = -2 [[a/3, b], [b̄, a/3]] F``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .coframe import rotate_b_real
from .errors import BlowUp, Collapse, NonpositiveRadius, SingularLocus, ZeroB

BLOWUP_THRESHOLD = 1e8
CLASS_EPS = 1e-10


@dataclass(frozen=True)
class HomogeneousState:
    a: float
    b: complex
    t: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("state must be finite")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", complex(self.b))


def ab_rhs(a, b):
    """Right-hand side ``(a', b')`` of the invariant ODE."""
    return 4.0 / 3.0 * a * a + 4.0 * abs(b) ** 2, 16.0 / 3.0 * a * b


def _rhs_vec(y):
    # y = [a, b, F11, F12, F21, F22]
    a, b = y[0].real, y[1]
    da, db = ab_rhs(a, b)
    F = y[2:].reshape(2, 2)
    A = -2.0 * np.array([[a / 3.0, b], [np.conj(b), a / 3.0]])
    return np.concatenate(([da, db], (A @ F).ravel()))


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class ABTrajectory:
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    F: np.ndarray  # shape (n, 2, 2)
    event: BlowUp | None = None

    @property
    def det_F(self):
        return np.linalg.det(self.F)

    def final(self) -> HomogeneousState:
        return HomogeneousState(self.a[-1], self.b[-1], self.t[-1])

    def first_integral(self):
        """First integral at each sample (``nan`` where ``b = 0``)."""
        out = np.full(len(self.t), np.nan)
        for i, (a, b) in enumerate(zip(self.a, self.b)):
            if b != 0:
                out[i] = first_integral(a, b)
        return out

    def det_defect(self):
        """``det F · (b/b₀)^{1/4} - 1`` along the path; ``nan`` if ``b₀ = 0``."""
        b0 = self.b[0]
        if b0 == 0:
            return np.full(len(self.t), np.nan)
        ratio = np.real(self.b / b0)
        return np.real(self.det_F) * ratio ** 0.25 - 1.0


def _substeps(y, h, f, rel=0.05):
    """Largest ``h / 2^k`` keeping the relative change of ``(a, b)`` per step below ``rel``."""
    k = f(y)
    size = max(1.0, abs(y[0]), abs(y[1]))
    rate = max(abs(k[0]), abs(k[1])) / size
    n = 1
    while rate * h / n > rel:
        n *= 2
    return n


def integrate_ab(state0, t_end: float, dt: float, blowup_threshold: float = BLOWUP_THRESHOLD,
                 raise_on_blowup: bool = False) -> ABTrajectory:
    """Classical RK4 for ``(a, b, F)`` sampled every ``dt``.

    Steps are subdivided automatically as the solution steepens.  When ``|a|``
    passes ``blowup_threshold`` the crossing inside the last step is located
    by bisection and reported as a :class:`BlowUp` event on the trajectory.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    s0 = state0 if isinstance(state0, HomogeneousState) else HomogeneousState(*state0)
    y = np.array([s0.a, s0.b, 1, 0, 0, 1], dtype=complex)
    t = s0.t
    ts, ys = [t], [y]
    n_out = int(math.ceil(t_end / dt - 1e-12))
    event = None
    for i in range(n_out):
        t_next = s0.t + min((i + 1) * dt, t_end)
        while t < t_next and event is None:
            h = t_next - t
            h /= _substeps(y, h, _rhs_vec)
            y_new = _rk4(_rhs_vec, y, h)
            if not np.all(np.isfinite(y_new)) or abs(y_new[0]) > blowup_threshold:
                event = _locate_blowup(y, t, h, blowup_threshold)
                break
            y, t = y_new, t + h
        if event is not None:
            break
        t = t_next
        ts.append(t)
        ys.append(y)
    Y = np.array(ys)
    traj = ABTrajectory(np.array(ts), Y[:, 0].real.copy(), Y[:, 1].copy(),
                        Y[:, 2:].reshape(-1, 2, 2), event)
    if event is not None and raise_on_blowup:
        raise event
    return traj


def _locate_blowup(y, t, h, threshold):
    lo, hi = 0.0, h
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        ym = _rk4(_rhs_vec, y, mid)
        if np.all(np.isfinite(ym)) and abs(ym[0]) <= threshold:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, t):
            break
    ev = BlowUp(f"|a| exceeded {threshold:g} near t = {t + hi:.10g}", t + hi)
    ev.bracket = (t + lo, t + hi)
    return ev


def blowup_time_closed_form(a0: float) -> float:
    """Pole ``3/(4 a₀)`` of the ``b ≡ 0`` solution; ``inf`` for ``a₀ ≤ 0``."""
    return 3.0 / (4.0 * a0) if a0 > 0 else math.inf


def closed_form_b0(a0: float, t):
    """``a(t) = a₀ / (1 - 4/3 a₀ t)`` for ``b ≡ 0``."""
    return a0 / (1.0 - 4.0 / 3.0 * a0 * np.asarray(t))


def first_integral(a, b) -> float:
    """``(a² - b²)² / b`` after rotating ``b`` onto the positive real axis."""
    if b == 0:
        raise ZeroB("first integral needs b != 0")
    a, br, _ = rotate_b_real(a, b)
    return (a * a - br * br) ** 2 / br


def scaling_matrix(traj: ABTrajectory) -> np.ndarray:
    return traj.F


# ---------------------------------------------------------------------------
# (h, q) models


def _cbrt_sq(x):
    # x^{2/3} taken as (x²)^{1/3} >= 0
    return np.cbrt(x * x)


@dataclass(frozen=True)
class HQState:
    h: float
    q: complex


def ab_from_hq(h, q, eps: float = 0.0):
    D = h * h - abs(q) ** 2
    if abs(D) <= eps or D == 0:
        raise SingularLocus(f"h² = |q|² at (h, q) = ({h}, {q})")
    den = 2.0 * _cbrt_sq(D)
    return h / den, -q / den


def hq_from_ab(a, b):
    E = a * a - abs(b) ** 2
    if E == 0:
        raise SingularLocus("a² = |b|²")
    den = 8.0 * E * E
    return a / den, -b / den


def h_rhs(h, q):
    return 2.0 * np.cbrt(abs(q) ** 2 - h * h)


def dab_dh(h, q):
    """Derivative of :func:`ab_from_hq` with respect to ``h`` at fixed ``q``."""
    D = h * h - abs(q) ** 2
    g = _cbrt_sq(D)            # D^{2/3}
    dg = (4.0 / 3.0) * h * D / np.cbrt(D ** 4)  # d/dh (D²)^{1/3}
    da = 0.5 / g - 0.5 * h * dg / g ** 2
    db = 0.5 * q * dg / g ** 2
    return da, db


@dataclass
class HPath:
    t: np.ndarray
    h: np.ndarray
    q: complex
    event: Collapse | None = None


def _h_chart(h0, m):
    """Regularizing variable for the branch of ``h₀``: ``(to_v, to_h, v_rhs, collapses)``.

    Near ``h = m`` the slope of ``h`` blows up, but ``v = |h - m|^{2/3}``
    (or ``h^{1/3}`` when ``m = 0``) moves with bounded, smooth speed and
    reaches zero linearly.  Below ``-m`` no collapse occurs and ``h`` is used
    directly.
    """
    if h0 > m and m == 0.0:
        return (np.cbrt, lambda v: v ** 3, lambda v: -2.0 / 3.0, True)
    if h0 > m:
        return (lambda h: np.cbrt((h - m) ** 2),
                lambda v: m + max(v, 0.0) ** 1.5,
                lambda v: -4.0 / 3.0 * np.cbrt(max(v, 0.0) ** 1.5 + 2.0 * m), True)
    if h0 > -m:
        return (lambda h: np.cbrt((m - h) ** 2),
                lambda v: m - max(v, 0.0) ** 1.5,
                lambda v: -4.0 / 3.0 * np.cbrt(2.0 * m - max(v, 0.0) ** 1.5), True)
    return (lambda h: h, lambda v: v, lambda v: 2.0 * np.cbrt(m * m - v * v), False)


def integrate_h(h0: float, q: complex, t_end: float, dt: float,
                raise_on_collapse: bool = False) -> HPath:
    """Integrate ``h' = 2 (|q|² - h²)^{1/3}`` up to ``t_end`` or collapse onto ``|h| = |q|``.

    RK4 runs in the regularizing variable of :func:`_h_chart`; the collapse
    time is where that variable reaches zero, located by bisection inside the
    last step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = complex(q)
    m = abs(q)
    ts, hs = [0.0], [float(h0)]
    event = None
    if h0 * h0 == m * m:
        event = Collapse("initial point lies on |h| = |q|", 0.0)
        event.bracket = (0.0, 0.0)
    else:
        to_v, to_h, g, collapses = _h_chart(float(h0), m)
        v, t = to_v(float(h0)), 0.0
        n = int(math.ceil(t_end / dt - 1e-12))
        for i in range(n):
            step = min((i + 1) * dt, t_end) - t
            v_new = _rk4(g, v, step)
            if not math.isfinite(v_new):
                raise ArithmeticError(f"h-integration produced a non-finite value at t = {t}")
            if collapses and v_new <= 0.0:
                lo, hi = 0.0, step
                while hi - lo > 1e-15 * max(1.0, t):
                    mid = 0.5 * (lo + hi)
                    if _rk4(g, v, mid) > 0.0:
                        lo = mid
                    else:
                        hi = mid
                event = Collapse(f"|h| reached |q| near t = {t + hi:.10g}", t + hi)
                event.bracket = (t + lo, t + hi)
                break
            v, t = v_new, t + step
            ts.append(t)
            hs.append(to_h(v))
    path = HPath(np.array(ts), np.array(hs), q, event)
    if event is not None and raise_on_collapse:
        raise event
    return path


def collapse_time(h0: float, q: complex) -> float:
    """Time for ``h`` to reach ``|q|`` by quadrature of ``dh / h'``.

    Returns ``inf`` when the trajectory moves away from the locus
    (``h₀ < -|q|``).
    """
    m = abs(q)
    if h0 < -m:
        return math.inf
    if h0 == m:
        return 0.0
    if m == 0:
        return 1.5 * np.cbrt(h0)
    if h0 > m:
        # ∫_m^{h0} dh / (2 (h-m)^{1/3} (h+m)^{1/3})
        val, _ = integrate.quad(lambda h: 0.5 / np.cbrt(h + m), m, h0,
                                weight="alg", wvar=(-1.0 / 3.0, 0.0))
        return val
    # -m < h0 < m: h increases to m
    val, _ = integrate.quad(lambda h: 0.5 / np.cbrt(h + m), h0, m,
                            weight="alg", wvar=(0.0, -1.0 / 3.0))
    return val


# ---------------------------------------------------------------------------
# classification


class GroupClass(str, enum.Enum):
    SU2 = "SU2"
    Heisenberg = "Heisenberg"
    SemidirectR_R2 = "SemidirectR_R2"
    SL2R_cover = "SL2R_cover"


@dataclass(frozen=True)
class Classification:
    group: GroupClass
    cr_flat: bool


def classify_group(a: float, b: complex, eps: float = CLASS_EPS) -> Classification:
    """Symmetry group of the homogeneous model with invariants ``(a, b)``.

    Near-equalities within ``eps`` resolve toward the degenerate class.
    """
    if not (math.isfinite(a) and np.isfinite(b)):
        raise ValueError("invariants must be finite")
    mb = abs(b)
    flat = abs(a) <= eps or mb <= eps
    if abs(a) <= eps and mb <= eps:
        g = GroupClass.Heisenberg
    elif abs(abs(a) - mb) <= eps:
        g = GroupClass.SemidirectR_R2
    elif a > mb:
        g = GroupClass.SU2
    else:
        g = GroupClass.SL2R_cover
    return Classification(g, flat)


# ---------------------------------------------------------------------------
# disk bundle


def disk_bundle_invariants(r: float):
    if r <= 0:
        raise NonpositiveRadius(f"radius must be positive (got {r})")
    return -0.5 * r ** (-2.0 / 3.0), 0.0


def disk_bundle_radius(r0: float, t):
    if r0 <= 0:
        raise NonpositiveRadius(f"radius must be positive (got {r0})")
    return (r0 ** (2.0 / 3.0) + 2.0 * np.asarray(t) / 3.0) ** 1.5


# ---------------------------------------------------------------------------
# cohomogeneity one


@dataclass(frozen=True)
class CohomOneState:
    a: float
    v: float
    s: float
    phi: float

    @property
    def b(self) -> complex:
        return derived_b(self.a, self.v, self.s, self.phi)


def derived_b(a, v, s, phi):
    return np.exp(-2j * phi) * (a + s * s + 1j * v)


def cohom1_rhs(y, r):
    a, v, s, phi = y
    return np.array([r, 2.0 * s * (a + s * s), -v, s])


@dataclass
class CohomOnePath:
    tau: np.ndarray
    y: np.ndarray  # columns a, v, s, phi
    r: np.ndarray

    @property
    def a(self):
        return self.y[:, 0]

    @property
    def v(self):
        return self.y[:, 1]

    @property
    def s(self):
        return self.y[:, 2]

    @property
    def phi(self):
        return self.y[:, 3]

    @property
    def b(self):
        return derived_b(self.a, self.v, self.s, self.phi)

    def conserved(self):
        """``v² + 2as² + s⁴``; constant when ``r ≡ 0``."""
        return self.v ** 2 + 2 * self.a * self.s ** 2 + self.s ** 4

    def db_dtau(self):
        """Derivative of the derived ``b`` by the chain rule through the state equations."""
        a, v, s, phi = self.a, self.v, self.s, self.phi
        da, dv, ds, dphi = self.r, 2 * s * (a + s * s), -v, s
        e = np.exp(-2j * phi)
        return e * (da + 2 * s * ds + 1j * dv) - 2j * dphi * self.b

    def derivative_matrices(self):
        """Covariant-derivative matrices of ``(a, b, b̄)`` at each sample.

        Entries follow the pattern of the ``(da, db, db̄)`` system with
        ``a_η = r e^{iφ}`` and the ``b``-row read from ``db/dτ``.
        """
        s, phi, r = self.s, self.phi, self.r
        db = self.db_dtau()
        a_t, a_e = 2 * r * s, r * np.exp(1j * phi)
        b_t, b_eb = 2 * s * db, db * np.exp(-1j * phi)
        out = np.empty((len(s), 3, 3), dtype=complex)
        out[:, 0] = np.stack([a_t, a_e, np.conj(a_e)], axis=-1)
        out[:, 1] = np.stack([b_t, np.conj(a_e), b_eb], axis=-1)
        out[:, 2] = np.stack([np.conj(b_t), np.conj(b_eb), a_e], axis=-1)
        return out

    def second_singular_values(self):
        return np.linalg.svd(self.derivative_matrices(), compute_uv=False)[:, 1]


def integrate_cohom1(state0: CohomOneState, r_profile: Callable[[float], float],
                     tau_end: float, dtau: float) -> CohomOnePath:
    """RK4 for the cohomogeneity-one system along the leaf parameter ``τ``."""
    if dtau <= 0:
        raise ValueError("dtau must be positive")
    y = np.array([state0.a, state0.v, state0.s, state0.phi], dtype=float)
    tau = 0.0
    taus, ys = [tau], [y]
    n = int(math.ceil(tau_end / dtau - 1e-12))
    for _ in range(n):
        h = min(dtau, tau_end - tau)
        k1 = cohom1_rhs(y, r_profile(tau))
        k2 = cohom1_rhs(y + 0.5 * h * k1, r_profile(tau + 0.5 * h))
        k3 = cohom1_rhs(y + 0.5 * h * k2, r_profile(tau + 0.5 * h))
        k4 = cohom1_rhs(y + h * k3, r_profile(tau + h))
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        tau += h
        taus.append(tau)
        ys.append(y)
    taus = np.array(taus)
    return CohomOnePath(taus, np.array(ys), np.array([r_profile(t) for t in taus], dtype=float))
