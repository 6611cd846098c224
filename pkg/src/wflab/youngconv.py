"""Pathwise convolution of rough paths against semigroups.

The driving paths are band-limited fields (see :class:`wflab.noise.FieldPath`),
and the damped semigroup e^{t(A - lambda)} acts diagonally on their modes, so
every convolution reduces to per-mode scalar recursions that are evaluated
with IIR filters.  All recursions multiply by e^{(mu - lambda) dt} <= 1 only,
so nothing can overflow regardless of horizon or stiffness.

Three routes are provided and cross-validated:

* ``convolve_riemann``: the left-endpoint sum
  sum_k e^{(A-lam)(t - t_k)} (N(t_{k+1}) - N(t_k)) on the path's own grid,
  evaluated exactly by the recursion Y <- e^{a dt} (Y + dN).
* ``convolve_ibp``: the integration-by-parts form
  int_0^t (A-lam) S_lam(t-s) (N(s) - N(t)) ds + S_lam(t) N(t), with a
  trapezoid over the path grid away from s = t and a geometrically graded
  mesh on the final cell where the integrand concentrates.
* ``duhamel_residual``: the damping identity
  N_{A-lam}(t) = N_A(t) - lam int_0^t S(t-s) N_{A-lam}(s) ds, reported as a
  residual to be driven to zero under refinement.

``convolve_evolution`` extends the semigroup to the nonautonomous linearized
operator A + b(t,x) - (rank-one projector), stepping
dz/dt = A(t) z + B_lam(t) N_{A-lam}(t) with an exponential Euler scheme; its
output is provably independent of lambda, which the tests exercise.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import lfilter
from scipy.special import gamma as gamma_fn

from .holder import holder_seminorm, state_norms
from .noise import FieldPath
from .operators import Grid, GridPath, OperatorSpec, eigenvalue

__all__ = [
    "ConvolutionResult",
    "RankOneProjector",
    "mode_symbols",
    "phi1",
    "convolve_riemann",
    "convolve_ibp",
    "duhamel_residual",
    "damping_constant",
    "maximal_bound_check",
    "convolve_evolution",
]

GRADED_CELLS = 40
GRADED_RATIO = 0.7


@dataclass(frozen=True)
class ConvolutionResult:
    """A convolved path plus how it was computed."""

    path: FieldPath
    scheme: str          # 'riemann' | 'ibp'
    mesh: float
    lam: float
    meta: dict = dataclass_field(default_factory=dict)


@dataclass(frozen=True)
class RankOneProjector:
    """Time-dependent projector u -> m <u, q(t)> q(t) on grid values.

    ``fields`` is either the stacked rows q(t_j) or a callable j -> q(t_j)
    (so long histories never need materializing).
    """

    m: float
    fields: np.ndarray | Callable[[int], np.ndarray]


def mode_symbols(N: FieldPath, op: OperatorSpec) -> np.ndarray:
    """Operator eigenvalues on the path's modes (sin/cos share the symbol)."""
    return np.array([eigenvalue(op, N.L, k) for _, k in N.mode_map])


def phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z with the removable singularity filled at z = 0."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-12
    out[big] = np.expm1(z[big]) / z[big]
    small = ~big
    out[small] = 1.0 + 0.5 * z[small]
    return out


def _uniform_dt(times: np.ndarray) -> float:
    dts = np.diff(times)
    dt = float(dts[0])
    if not np.allclose(dts, dt, rtol=1e-9):
        raise ValueError("convolutions require a uniform time grid")
    return dt


def _result_path(N: FieldPath, coeffs: np.ndarray, scheme: str, lam: float) -> FieldPath:
    meta = dict(N.meta)
    meta.update({"convolution": scheme, "lambda": lam})
    return FieldPath(times=N.times, coeffs=coeffs, lambdas=N.lambdas,
                     mode_map=N.mode_map, L=N.L, meta=meta)


def convolve_riemann(N: FieldPath, op: OperatorSpec, lam: float = 0.0) -> ConvolutionResult:
    """Left-endpoint semigroup convolution on the path's own grid.

    The returned values are exactly the defining sums: the recursion
    Y_{j+1} = e^{a dt}(Y_j + dN_j) telescopes to them with no further error.
    """
    if lam < 0:
        raise ValueError(f"damping must be >= 0, got {lam}")
    dt = _uniform_dt(N.times)
    dec = np.exp((mode_symbols(N, op) - lam) * dt)
    dN = np.diff(N.coeffs, axis=0)
    out = np.zeros_like(N.coeffs)
    for i in range(N.n_modes):
        out[1:, i] = lfilter([dec[i]], [1.0, -dec[i]], dN[:, i])
    return ConvolutionResult(path=_result_path(N, out, "riemann", lam),
                             scheme="riemann", mesh=dt, lam=lam)


def _graded_edges(dt: float) -> np.ndarray:
    """Cell edges on [0, dt] shrinking geometrically toward 0."""
    lengths = GRADED_RATIO ** np.arange(GRADED_CELLS)
    lengths = lengths[::-1] * (dt * (1.0 - GRADED_RATIO)
                               / (1.0 - GRADED_RATIO ** GRADED_CELLS))
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    edges[-1] = dt
    return edges


def _graded_kernel_weight(a: np.ndarray, dt: float) -> np.ndarray:
    """Graded-trapezoid value of (1/dt) int_0^dt a d e^{a d} dd per mode."""
    d = _graded_edges(dt)
    g = a[:, None] * d[None, :] * np.exp(a[:, None] * d[None, :])
    return trapezoid(g, d, axis=1) / dt


def convolve_ibp(N: FieldPath, op: OperatorSpec, lam: float = 0.0) -> ConvolutionResult:
    """Integration-by-parts route to the same convolution.

    Bulk region [0, t_{j-1}] by trapezoid on the path grid via stable
    recursions; the final cell [t_{j-1}, t_j], where the kernel concentrates
    for stiff modes, by a geometrically graded trapezoid with the path
    interpolated linearly.
    """
    if lam < 0:
        raise ValueError(f"damping must be >= 0, got {lam}")
    dt = _uniform_dt(N.times)
    X = N.coeffs
    n_t = len(N.times) - 1
    a = mode_symbols(N, op) - lam
    dec = np.exp(a * dt)

    # P_j = sum_{k<j} e^{a(t_j - t_k)} X_k and Q_j likewise with X = 1.
    P = np.zeros_like(X)
    Q = np.zeros((n_t + 1, N.n_modes))
    ones = np.ones(n_t)
    for i in range(N.n_modes):
        P[1:, i] = lfilter([dec[i]], [1.0, -dec[i]], X[:-1, i])
        Q[1:, i] = lfilter([dec[i]], [1.0, -dec[i]], ones)
    E = np.power(dec[None, :], np.arange(n_t + 1)[:, None])   # e^{a t_j} <= 1

    bulk = a * dt * (P[1:] - X[1:] * Q[1:]
                     - 0.5 * E[1:] * (X[0] - X[1:])
                     - 0.5 * dec * (X[:-1] - X[1:]))
    near = (X[:-1] - X[1:]) * _graded_kernel_weight(a, dt)
    out = np.zeros_like(X)
    out[1:] = bulk + near + E[1:] * X[1:]
    return ConvolutionResult(path=_result_path(N, out, "ibp", lam),
                             scheme="ibp", mesh=dt, lam=lam)


def duhamel_residual(N: FieldPath, op: OperatorSpec, lam: float) -> float:
    """Max-over-time L2 defect in the damping identity.

    Evaluates N_{A-lam}(t) - N_A(t) + lam int_0^t S(t-s) N_{A-lam}(s) ds with
    the undamped semigroup S and a trapezoid over the path grid; exact zero
    at lam = 0, O(dt) otherwise.
    """
    if lam < 0:
        raise ValueError(f"damping must be >= 0, got {lam}")
    dt = _uniform_dt(N.times)
    Y = convolve_riemann(N, op, lam).path.coeffs
    NA = convolve_riemann(N, op, 0.0).path.coeffs
    decmu = np.exp(mode_symbols(N, op) * dt)
    U = np.zeros_like(Y)
    for i in range(N.n_modes):
        U[:, i] = lfilter([1.0], [1.0, -decmu[i]], Y[:, i])
    integral = dt * (U - 0.5 * Y)       # trapezoid; the s=0 term is zero
    res = Y - NA + lam * integral
    return float(np.max(np.sqrt(np.sum(res ** 2, axis=1))))


def damping_constant(x: float) -> float:
    """K(x) = Gamma(x) + Gamma(1 + x) + x^{-x} in the damped maximal bound."""
    if not 0.0 < x <= 1.0:
        raise ValueError(f"argument must be in (0, 1], got {x}")
    return float(gamma_fn(x) + gamma_fn(1.0 + x) + x ** (-x))


def _prefix(N: FieldPath, m: int) -> FieldPath:
    return FieldPath(times=N.times[:m + 1], coeffs=N.coeffs[:m + 1],
                     lambdas=N.lambdas, mode_map=N.mode_map, L=N.L, meta=N.meta)


def maximal_bound_check(
    N: FieldPath,
    op: OperatorSpec,
    eta: float,
    gamma: float = 0.0,
    lam: float = 0.0,
    T_list: Sequence[float] | None = None,
) -> dict:
    """Ratios of convolution sup-norms to their theoretical envelopes.

    For each horizon T (prefix of the path):

    * undamped: sup_t ||(-A)^gamma N_A(t)|| / (T^{eta-gamma} ||N||_{C^eta}),
      expected bounded but with no universal constant;
    * damped (lam > 0): sup_t ||(-A)^gamma N_{A-lam}(t)|| divided by
      lam^{-(eta-gamma)} K(eta-gamma) ||N||_{C^eta}, which a proven bound
      keeps at or below 1 path by path.

    ``passed`` reports the damped inequality only (the undamped ratio is
    recorded, not asserted).
    """
    if not 0.0 <= gamma < eta:
        raise ValueError(f"need 0 <= gamma < eta, got gamma={gamma}, eta={eta}")
    if lam < 0:
        raise ValueError(f"damping must be >= 0, got {lam}")
    if T_list is None:
        T_list = [N.T]
    K = damping_constant(eta - gamma)
    lift = np.abs(mode_symbols(N, op)) ** gamma if gamma > 0 else None

    NA = convolve_riemann(N, op, 0.0).path.coeffs
    Y = convolve_riemann(N, op, lam).path.coeffs if lam > 0 else None

    per_T: dict = {}
    passed = True
    for T in T_list:
        m = int(np.searchsorted(N.times, T * (1 + 1e-12), side="right")) - 1
        if m < 1 or N.times[m] < T * (1 - 1e-9):
            raise ValueError(f"horizon {T} is not on the path grid")
        pre = _prefix(N, m)
        hol = holder_seminorm(pre, eta).value
        if hol == 0.0:
            raise ValueError("path has zero Hölder seminorm; ratios undefined")

        def lifted_sup(rows: np.ndarray) -> float:
            r = rows[:m + 1] if lift is None else rows[:m + 1] * lift
            return float(np.max(state_norms(pre, r)))

        und = lifted_sup(NA) / (T ** (eta - gamma) * hol)
        entry = {"ratio_undamped": und, "ratio_damped": None}
        if lam > 0:
            dmp = lifted_sup(Y) / (lam ** (-(eta - gamma)) * K * hol)
            entry["ratio_damped"] = dmp
            passed = passed and dmp <= 1.0 + 1e-12
        per_T[float(T)] = entry
    return {"K": K, "eta": eta, "gamma": gamma, "lambda": lam,
            "per_T": per_T, "passed": bool(passed)}


def convolve_evolution(
    N: FieldPath,
    op: OperatorSpec,
    coeff: GridPath | Callable[[int], np.ndarray] | None = None,
    proj: RankOneProjector | None = None,
    lam: float = 0.0,
    grid: Grid | None = None,
    record_stride: int = 1,
) -> GridPath:
    """Convolution against the nonautonomous linearized evolution system.

    Computes Z(t) = int_0^t E(t,s) B_lam(s) N_{A-lam}(s) ds + N_{A-lam}(t)
    where E is generated by A(t) = A + b(t,x) - proj and
    B_lam(t) = b(t,x) - proj + lam, by exponential-Euler stepping of
    dz/dt = A(t) z + B_lam(t) N_{A-lam}(t), z(0) = 0, and returning
    z + N_{A-lam} on the grid.  The result does not depend on lam up to
    discretization error.

    ``coeff`` is a grid path sharing the noise time grid, or a callable
    j -> coefficient row (a grid is then required).  The recursion always
    steps at full resolution; ``record_stride`` only thins the returned
    values, keeping memory bounded on long fine-step runs.
    """
    if lam < 0:
        raise ValueError(f"damping must be >= 0, got {lam}")
    n_t = len(N.times) - 1
    if record_stride < 1 or n_t % record_stride:
        raise ValueError(
            f"record stride {record_stride} must divide the {n_t} steps")
    crow = None
    if isinstance(coeff, GridPath):
        grid = coeff.grid
        if coeff.values.shape[0] != len(N.times) or not np.allclose(
                coeff.times, N.times, rtol=1e-9):
            raise ValueError("coefficient path must share the noise time grid")
        crow = coeff.values.__getitem__
    elif coeff is not None:
        crow = coeff
    if grid is None:
        raise ValueError("a grid is required when no coefficient path is given")
    qrow = None
    if proj is not None:
        if callable(proj.fields):
            qrow = proj.fields
        elif proj.fields.shape != (len(N.times), grid.n):
            raise ValueError("projector fields must be (n_times, grid.n)")
        else:
            qrow = proj.fields.__getitem__

    dt = _uniform_dt(N.times)
    conv = convolve_riemann(N, op, lam)
    ncoef = conv.path.coeffs
    basis = conv.path.basis_matrix(grid.x)

    mu = op.symbol(grid)
    step_exp = np.exp(mu * dt)
    step_phi = dt * phi1(mu * dt)
    # Instability guard scale: a cheap upper bound on max |N_{A-lam}|.
    scale = 1.0 + float(np.max(np.abs(ncoef) @ np.max(np.abs(basis), axis=1)))

    z = np.zeros(grid.n)
    out = np.empty((n_t // record_stride + 1, grid.n))
    Nj = ncoef[0] @ basis
    out[0] = Nj
    for j in range(n_t):
        g = lam * Nj
        tot = z + Nj
        if crow is not None:
            g = g + crow(j) * tot
        if qrow is not None:
            q = qrow(j)
            g = g - proj.m * grid.dx * float(np.dot(tot, q)) * q
        z = np.fft.irfft(step_exp * np.fft.rfft(z) + step_phi * np.fft.rfft(g),
                         n=grid.n)
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > 1e6 * scale:
            raise ArithmeticError(
                f"evolution convolution became unstable at step {j + 1} "
                f"(amplitude above 1e6 of the forcing scale); reduce the "
                f"time step"
            )
        Nj = ncoef[j + 1] @ basis
        if (j + 1) % record_stride == 0:
            out[(j + 1) // record_stride] = z + Nj
    meta = {"convolution": "evolution", "lambda": lam}
    return GridPath(times=N.times[::record_stride].copy(), values=out,
                    grid=grid, meta=meta)
