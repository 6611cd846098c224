"""Travelling fronts of the bistable reaction, their linearization spectrum,
and distance to the front orbit.

The reaction is the cubic f(u) = u(1 - u)(u - a) with 0 < a < 1.  Its front

    vhat(x) = 1 / (1 + exp(-x / sqrt(2 nu)))

solves nu vhat'' + c vhat' + f(vhat) = 0 with speed c = sqrt(2 nu)(a - 1/2),
connecting 0 at -infinity to 1 at +infinity.  Because the profile is closed
form, translates vhat(. - phi) are evaluated analytically at shifted
arguments; a spectral shift of the grid samples would be badly wrong here
since the front is not periodic.

The linearization at the standing front (a = 1/2) is a Schrödinger operator
with a sech^2 well whose spectrum is known exactly: eigenvalues 0 (the
translation mode vhat') and -3/8, with essential spectrum below -1/2.  The
tests pin those values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dataclass_field
from functools import cached_property

import numpy as np
from scipy.special import expit

from .operators import Field, Grid, OperatorSpec

__all__ = [
    "WaveProfile",
    "SpectralGapReport",
    "nagumo_front",
    "spectral_gap",
    "distance_to_orbit",
    "polish_phase",
]

DENSE_EIG_LIMIT = 1 << 10


@dataclass(frozen=True)
class WaveProfile:
    """Closed-form bistable front sampled on a grid.

    ``values``/``deriv`` hold vhat and vhat' at the grid points; ``poly``
    holds the cubic's coefficients (u^3, u^2, u, 1), whose negative leading
    coefficient is what makes the reaction dissipative at large amplitude.
    """

    a: float
    nu: float
    grid: Grid
    speed: float
    values: np.ndarray
    deriv: np.ndarray
    poly: tuple
    residual: float = 0.0
    meta: dict = dataclass_field(default_factory=dict)

    def f(self, u: np.ndarray) -> np.ndarray:
        return u * (1.0 - u) * (u - self.a)

    def fprime(self, u: np.ndarray) -> np.ndarray:
        return -3.0 * u ** 2 + 2.0 * (1.0 + self.a) * u - self.a

    @property
    def _width(self) -> float:
        return np.sqrt(2.0 * self.nu)

    def value_at(self, y: np.ndarray) -> np.ndarray:
        """vhat at arguments y (use y = x - phi for translates)."""
        return expit(np.asarray(y, float) / self._width)

    def deriv_at(self, y: np.ndarray) -> np.ndarray:
        v = self.value_at(y)
        return v * (1.0 - v) / self._width

    def second_at(self, y: np.ndarray) -> np.ndarray:
        v = self.value_at(y)
        return v * (1.0 - v) * (1.0 - 2.0 * v) / (2.0 * self.nu)

    def translate(self, phi: float) -> np.ndarray:
        return self.value_at(self.grid.x - phi)

    def translate_deriv(self, phi: float) -> np.ndarray:
        return self.deriv_at(self.grid.x - phi)

    @cached_property
    def deriv_norm_sq(self) -> float:
        """Exact integral of vhat'^2 over the line: 1 / (6 sqrt(2 nu))."""
        return 1.0 / (6.0 * self._width)


@dataclass(frozen=True)
class SpectralGapReport:
    """Spectrum diagnostics of the linearization at the front."""

    kappa_star: float
    C_star: float
    m: float
    eigenvalues: tuple        # leading eigenvalues, sorted descending
    defect: float             # ||L vhat'|| / ||vhat'|| (0 for the standing front)
    kappa_saturation: float
    meta: dict = dataclass_field(default_factory=dict)


def _fd4_second(v: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order second derivative on interior points (index 2..n-3)."""
    return (-v[:-4] + 16.0 * v[1:-3] - 30.0 * v[2:-2]
            + 16.0 * v[3:-1] - v[4:]) / (12.0 * dx ** 2)


def nagumo_front(a: float, nu: float, grid: Grid, tail_tol: float = 1e-8) -> WaveProfile:
    """Closed-form front profile on the grid.

    Raises if the domain is too narrow for the front tails to flatten below
    ``tail_tol`` at the edges, since the periodic truncation would then leak.
    """
    if not 0.0 < a < 1.0:
        raise ValueError(f"bistability parameter must be in (0, 1), got {a}")
    if nu <= 0:
        raise ValueError(f"diffusivity must be positive, got {nu}")
    width = np.sqrt(2.0 * nu)
    x = grid.x
    values = expit(x / width)
    deriv = values * (1.0 - values) / width
    left_tail = float(values[0])
    right_tail = float(1.0 - values[-1])
    if max(left_tail, right_tail) > tail_tol:
        raise ValueError(
            f"front tails {max(left_tail, right_tail):.3g} exceed {tail_tol:g}: "
            f"domain [-{grid.L}, {grid.L}] too small for this front width"
        )
    speed = width * (a - 0.5)
    poly = (-1.0, 1.0 + a, -a, 0.0)
    prof = WaveProfile(a=a, nu=nu, grid=grid, speed=speed, values=values,
                       deriv=deriv, poly=poly)
    res = ode_residual(prof)
    return WaveProfile(a=a, nu=nu, grid=grid, speed=speed, values=values,
                       deriv=deriv, poly=poly, residual=res,
                       meta={"tail": max(left_tail, right_tail)})


def ode_residual(profile: WaveProfile) -> float:
    """L2 norm of nu v'' + c v' + f(v) on interior points, v'' by 4th-order FD.

    The profile is not periodic, so the residual deliberately avoids spectral
    differentiation and skips the wrap-around stencil points.
    """
    g = profile.grid
    v = profile.values
    vxx = _fd4_second(v, g.dx)
    r = profile.nu * vxx + profile.speed * profile.deriv[2:-2] + profile.f(v[2:-2])
    return float(np.sqrt(np.sum(r ** 2) * g.dx))


def _assemble_linearization(profile: WaveProfile, op: OperatorSpec) -> np.ndarray:
    """Dense symmetric matrix of A + f'(vhat) in the collocation basis."""
    g = profile.grid
    mu = op.symbol(g)
    eye_hat = np.fft.rfft(np.eye(g.n), axis=0)
    A = np.fft.irfft(mu[:, None] * eye_hat, n=g.n, axis=0)
    L = A + np.diag(profile.fprime(profile.values))
    return 0.5 * (L + L.T)


def _rank_one_top(w: np.ndarray, z_sq: np.ndarray, rho: float) -> float:
    """Largest eigenvalue of diag(w) - rho z z^T (w ascending, rho >= 0).

    Interlacing puts it in [w[-2], w[-1]]; the secular function
    s(x) = 1 - rho sum z_i^2 / (w_i - x) crosses zero there, found by
    bisection.
    """
    if rho == 0.0 or z_sq[-1] < 1e-30:
        return float(w[-1])
    lo = float(w[-2]) + 1e-14
    hi = float(w[-1]) - 1e-14
    if hi <= lo:
        return float(w[-1])

    def secular(x: float) -> float:
        return 1.0 - rho * float(np.sum(z_sq / (w - x)))

    s_lo, s_hi = secular(lo), secular(hi)
    if s_lo <= 0.0:        # root lies at or below w[-2]; top is pinned there
        return float(w[-2])
    if s_hi >= 0.0:
        return float(w[-1])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if secular(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def spectral_gap(
    profile: WaveProfile,
    m_trial: float | None = None,
    op: OperatorSpec | None = None,
) -> SpectralGapReport:
    """Spectrum of the linearization and of its rank-one projected version.

    The projected operator subtracts m <., q> q with q = vhat'.  kappa_star
    is minus its top eigenvalue at the working gain m; C_star is the smallest
    gain whose projected spectrum already reaches half the saturation gap
    (the gap of the operator compressed to the complement of q).  When
    ``m_trial`` is omitted the working gain defaults to 2 C_star.
    """
    g = profile.grid
    if g.n > DENSE_EIG_LIMIT:
        raise ValueError(
            f"dense eigensolve limited to n <= {DENSE_EIG_LIMIT}, got {g.n}"
        )
    if op is None:
        op = OperatorSpec(kind="laplacian", nu=profile.nu)
    L = _assemble_linearization(profile, op)
    q = profile.deriv
    w, vec = np.linalg.eigh(L)

    defect = float(np.linalg.norm(L @ q) / np.linalg.norm(q))
    z_sq = (vec.T @ q) ** 2
    dx = g.dx

    def kappa_of(m: float) -> float:
        return -_rank_one_top(w, z_sq, m * dx)

    # Saturation: compress to the complement of q (the m -> infinity limit).
    qn = q / np.linalg.norm(q)
    P = np.eye(g.n) - np.outer(qn, qn)
    shift = 2.0 * float(np.max(np.abs(w))) + 1.0
    w_def = np.linalg.eigvalsh(P @ L @ P - shift * np.outer(qn, qn))
    kappa_sat = -float(w_def[-1])

    target = 0.5 * kappa_sat
    if target <= 0:
        raise ArithmeticError(
            "no spectral gap: the projected operator stays nonnegative for "
            "every gain"
        )
    m_hi = 1.0
    while kappa_of(m_hi) < target:
        m_hi *= 2.0
        if m_hi > 1e8:
            raise ArithmeticError(
                "no spectral gap: projected spectrum never reaches half the "
                "saturation gap"
            )
    m_lo = 0.0
    for _ in range(60):
        mid = 0.5 * (m_lo + m_hi)
        if kappa_of(mid) >= target:
            m_hi = mid
        else:
            m_lo = mid
    C_star = m_hi

    m_work = 2.0 * C_star if m_trial is None else float(m_trial)
    kappa_star = kappa_of(m_work)
    if kappa_star <= 0:
        raise ArithmeticError(
            f"projected operator has a nonnegative eigenvalue at gain {m_work:g}"
        )
    return SpectralGapReport(
        kappa_star=kappa_star,
        C_star=C_star,
        m=m_work,
        eigenvalues=tuple(float(v) for v in w[::-1][:10]),
        defect=defect,
        kappa_saturation=kappa_sat,
        meta={"L": g.L, "n": g.n, "a": profile.a, "nu": profile.nu},
    )


def _distance_at(values: np.ndarray, profile: WaveProfile, phi: np.ndarray) -> np.ndarray:
    """||V - vhat(. - phi)||_{L2} for a vector of phases."""
    g = profile.grid
    shifted = profile.value_at(g.x[None, :] - np.asarray(phi, float)[:, None])
    diff = values[None, :] - shifted
    return np.sqrt(np.sum(diff ** 2, axis=1) * g.dx)


def distance_to_orbit(
    V: Field | np.ndarray,
    profile: WaveProfile,
    phi_guess: float | None = None,
) -> tuple[float, float]:
    """Distance from V to the set of front translates, with the minimizer.

    Coarse scan at grid resolution over phases in [-L/2, L/2] (or a local
    window around ``phi_guess``), then golden-section refinement of the
    bracketing cell down to a phase resolution of dx * 1e-3.
    """
    values = V.values if isinstance(V, Field) else np.asarray(V, float)
    g = profile.grid
    dx = g.dx
    if phi_guess is None:
        phis = np.arange(-0.5 * g.L, 0.5 * g.L + 0.5 * dx, dx)
    else:
        phis = phi_guess + np.arange(-8, 9) * dx
    d = _distance_at(values, profile, phis)
    k = int(np.argmin(d))
    if phi_guess is None and k in (0, len(phis) - 1):
        warnings.warn(
            "distance minimizer at the scan boundary: the front has escaped "
            "the tracked window", RuntimeWarning)

    lo = phis[max(k - 1, 0)]
    hi = phis[min(k + 1, len(phis) - 1)]
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    a_, b_ = lo, hi
    c_ = b_ - inv * (b_ - a_)
    d_ = a_ + inv * (b_ - a_)
    fc = _distance_at(values, profile, np.array([c_]))[0]
    fd = _distance_at(values, profile, np.array([d_]))[0]
    while b_ - a_ > 1e-3 * dx:
        if fc < fd:
            b_, d_, fd = d_, c_, fc
            c_ = b_ - inv * (b_ - a_)
            fc = _distance_at(values, profile, np.array([c_]))[0]
        else:
            a_, c_, fc = c_, d_, fd
            d_ = a_ + inv * (b_ - a_)
            fd = _distance_at(values, profile, np.array([d_]))[0]
    phi = 0.5 * (a_ + b_)
    # Newton polish: quadratic convergence pushes an exact translate to
    # machine-level distance, well inside the golden-section tolerance.
    phi_n, ok = polish_phase(values, profile, phi)
    if ok and abs(phi_n - phi) <= 2.0 * dx:
        cand = _distance_at(values, profile, np.array([phi_n]))[0]
        base = _distance_at(values, profile, np.array([phi]))[0]
        if cand <= base:
            return float(cand), float(phi_n)
    dist = _distance_at(values, profile, np.array([phi]))[0]
    return float(dist), float(phi)


def polish_phase(
    values: np.ndarray,
    profile: WaveProfile,
    phi0: float,
    max_iter: int = 8,
) -> tuple[float, bool]:
    """Newton refinement of the distance minimizer from a warm start.

    Solves <V - vhat(. - phi), vhat'(. - phi)> = 0.  Returns (phi, ok);
    ok=False means the iteration left its basin (caller should rescan).
    """
    g = profile.grid
    dx = g.dx
    phi = float(phi0)
    for _ in range(max_iter):
        y = g.x - phi
        vt = profile.value_at(y)
        qt = profile.deriv_at(y)
        resid = values - vt
        G = float(np.dot(resid, qt)) * dx
        Gp = float(np.dot(qt, qt)) * dx - float(np.dot(resid, profile.second_at(y))) * dx
        if Gp <= 1e-12:
            return phi, False
        step = -G / Gp
        phi += step
        if abs(step) > 2.0:
            return phi, False
        if abs(step) < 1e-12:
            return phi, True
    return phi, abs(step) < 1e-6
