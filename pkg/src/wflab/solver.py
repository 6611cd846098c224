"""Front-tracking simulation of the noisy bistable equation.

Solves dV = (A V + f(V)) dt + eps dN with V(0) near a travelling front,
tracks the front phase by a gradient-descent ODE, and splits the front-frame
deviation into a noise-driven linear part and a smoother remainder:

    V(t) = vhat(. - C(t)) + Utilde(t),      Utilde = eps Z + y.

Z solves the linearization along the tracked front driven by the noise
convolution (computed in ``youngconv``) and is independent of the damping
shift used to build it; y collects the quadratic remainder and decays one
power of eps faster.

The stiff linear part integrates exactly: V is represented as
w + eps N_A + vhat(. - c t) where the travelling-wave term is evaluated in
closed form (it is not periodic, so it must stay out of the FFT), N_A is the
stochastic convolution, and the periodic remainder w steps by exponential
Euler.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .holder import holder_seminorm
from .noise import FieldPath, StableSpec, sample_field_noise
from .operators import Grid, GridPath, OperatorSpec, boundary_amplitude
from .rng import derive_seed
from .wave import WaveProfile, distance_to_orbit, nagumo_front, polish_phase
from .youngconv import (
    RankOneProjector,
    convolve_evolution,
    convolve_ibp,
    convolve_riemann,
    phi1,
)

__all__ = [
    "SimConfig",
    "Trajectory",
    "Decomposition",
    "default_damping",
    "solve",
    "phase_track",
    "decompose",
    "diagnostics",
    "eps_sweep",
]

BLOWUP_LIMIT = 1e6
ESCAPE_BOUNDARY_AMPLITUDE = 0.25


def default_damping(eta: float, gamma: float = 0.0) -> float:
    """Damping shift x/(1-x) at x = eta - gamma, balancing the two error
    sources of the damped-convolution route."""
    x = eta - gamma
    if not 0.0 < x < 1.0:
        raise ValueError(f"need 0 < eta - gamma < 1, got {x}")
    return x / (1.0 - x)


@dataclass(frozen=True)
class SimConfig:
    """Everything one simulation needs; validated at construction."""

    grid: Grid
    T: float
    dt: float
    a: float = 0.25
    nu: float = 1.0
    eps: float = 0.0
    m: float = 3.0
    n_modes: int = 8
    hurst: float = 0.75
    decay_exp: float = 2.0
    noise_kind: str = "fbm"
    stable: StableSpec | None = None
    eta: float = 0.65
    gamma: float = 0.0
    lam: float | None = None
    conv_scheme: str = "riemann"
    operator_kind: str = "laplacian"
    frac_order: float = 1.0
    seed: int = 0
    store_fields: bool = True
    store_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        n_steps = round(self.T / self.dt)
        if n_steps < 1 or abs(n_steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(
                f"horizon T={self.T} is not a whole number of steps dt={self.dt}"
            )
        if (not isinstance(self.store_stride, int) or self.store_stride < 1
                or n_steps % self.store_stride):
            raise ValueError(
                f"store stride {self.store_stride!r} must be a positive "
                f"integer dividing the {n_steps} steps"
            )
        # Explicit reaction stepping is only stable when dt resolves the
        # stiffest slope of f over the working range of field values.
        cap = max(5.0 + 3.0 * self.a, 8.0 - 3.0 * self.a)
        if self.dt * cap >= 0.5:
            raise ValueError(
                f"dt={self.dt} too large for the reaction: dt * max|f'| = "
                f"{self.dt * cap:.3f} must stay below 0.5"
            )
        if self.eps < 0:
            raise ValueError(f"noise amplitude must be >= 0, got {self.eps}")
        if self.m < 0:
            raise ValueError(f"tracking gain must be >= 0, got {self.m}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"Holder exponent must be in (0, 1), got {self.eta}")
        if not 0.0 <= self.gamma < self.eta:
            raise ValueError(
                f"need 0 <= gamma < eta, got gamma={self.gamma}, eta={self.eta}"
            )
        if self.lam is not None and self.lam <= 0:
            raise ValueError(f"damping shift must be positive, got {self.lam}")
        if self.conv_scheme not in ("riemann", "ibp"):
            raise ValueError(f"unknown convolution scheme {self.conv_scheme!r}")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def op(self) -> OperatorSpec:
        return OperatorSpec(kind=self.operator_kind, nu=self.nu, s=self.frac_order)

    @property
    def lam_effective(self) -> float:
        return self.lam if self.lam is not None else default_damping(self.eta, self.gamma)


@dataclass(frozen=True)
class Trajectory:
    """One simulated path with its tracked front frame.

    Scalar series (``C``, ``phi_star``, ``d``, ``norm_U``) cover every step;
    ``fields`` holds V at every ``field_stride``-th step when the config
    stores fields (the decomposition needs them).  ``phi_star`` is the
    distance-minimizing phase, ``C`` the ODE-tracked one, and by construction
    d <= ||Utilde|| pointwise in time.
    """

    cfg: SimConfig
    profile: WaveProfile
    times: np.ndarray
    C: np.ndarray
    phi_star: np.ndarray
    d: np.ndarray
    norm_U: np.ndarray
    fields: np.ndarray | None
    noise: FieldPath | None
    field_stride: int = 1
    meta: dict = dataclass_field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def field_times(self) -> np.ndarray:
        """Times of the stored field snapshots."""
        return self.times[::self.field_stride]

    def front_frame(self, j: int) -> np.ndarray:
        return self.profile.value_at(self.cfg.grid.x - self.C[j])

    def utilde(self) -> np.ndarray:
        """Deviation V - vhat(. - C) at the stored-field steps."""
        if self.fields is None:
            raise ValueError("trajectory was run without stored fields")
        x = self.cfg.grid.x
        C = self.C[::self.field_stride]
        shifted = self.profile.value_at(x[None, :] - C[:, None])
        return self.fields - shifted


@dataclass(frozen=True)
class Decomposition:
    """Split Utilde = eps Z + y along a trajectory, with per-time norms.

    All series live on the trajectory's stored-field time grid (every
    ``field_stride``-th step of the underlying recursion).
    """

    times: np.ndarray
    lam: float
    eps: float
    Z: GridPath
    y: np.ndarray
    utilde: np.ndarray
    norms: dict

    def identity_defect(self) -> float:
        return float(np.max(np.abs(self.utilde - self.eps * self.Z.values - self.y)))


def _phase_rhs(profile: WaveProfile, V: np.ndarray, C: float, m: float,
               x: np.ndarray, dx: float) -> float:
    """Descent phase velocity c - m <V - vhat(.-C), vhat'(.-C)>."""
    y = x - C
    q = profile.deriv_at(y)
    return profile.speed - m * dx * float(np.dot(V - profile.value_at(y), q))


def _l2(values: np.ndarray, dx: float) -> float:
    return float(np.sqrt(np.sum(values ** 2) * dx))


def solve(cfg: SimConfig, N: FieldPath | None = None,
          V0: np.ndarray | None = None) -> Trajectory:
    """Integrate one path and track its front.

    The reaction difference f(V) - f(vhat(.-ct)) steps by exponential Euler
    on the periodic remainder; the phase ODE steps by Heun using the field
    at both endpoints.  Raises on blowup, on the tracked phase leaving
    [-L/2, L/2], and on front mass reaching the domain boundary.
    """
    grid = cfg.grid
    profile = nagumo_front(cfg.a, cfg.nu, grid)
    times = cfg.times
    n_steps = cfg.n_steps
    x, dx = grid.x, grid.dx
    c = profile.speed

    na_coeffs = na_basis = None
    if cfg.eps > 0:
        if N is None:
            N = sample_field_noise(
                n_steps, M=cfg.n_modes, kind=cfg.noise_kind, H=cfg.hurst,
                T=cfg.T, seed=derive_seed(cfg.seed, 0x501), stable=cfg.stable,
                decay_exp=cfg.decay_exp, L=grid.L)
        else:
            if len(N.times) != len(times) or not np.allclose(N.times, times,
                                                             rtol=1e-9, atol=1e-12):
                raise ValueError("noise path must live on the config time grid")
            if N.L != grid.L:
                raise ValueError("noise and grid domain lengths differ")
        conv = (convolve_ibp if cfg.conv_scheme == "ibp" else convolve_riemann)(N, cfg.op)
        # Realized row by row in the loop: the full (n_steps, n) realization
        # would dominate memory on fine-step runs.
        na_coeffs = conv.path.coeffs
        na_basis = conv.path.basis_matrix(x)
    else:
        N = None

    mu = cfg.op.symbol(grid)
    step_exp = np.exp(mu * cfg.dt)
    step_phi = cfg.dt * phi1(mu * cfg.dt)

    w = np.zeros(grid.n)
    if V0 is not None:
        V0 = np.asarray(V0, float)
        if V0.shape != (grid.n,):
            raise ValueError("initial field must match the grid")
        w = V0 - profile.values
    wh = np.fft.rfft(w)

    stride = cfg.store_stride
    C = np.empty(n_steps + 1)
    phi_star = np.empty(n_steps + 1)
    d = np.empty(n_steps + 1)
    norm_U = np.empty(n_steps + 1)
    fields = (np.empty((n_steps // stride + 1, grid.n))
              if cfg.store_fields else None)
    C[0] = 0.0
    boundary_max = 0.0
    phi_prev = 0.0

    vtw = profile.values
    V = w + vtw if na_coeffs is None else w + cfg.eps * (na_coeffs[0] @ na_basis) + vtw

    for j in range(n_steps + 1):
        if fields is not None and j % stride == 0:
            fields[j // stride] = V

        frame = profile.value_at(x - C[j])
        Ut = V - frame
        norm_U[j] = _l2(Ut, dx)
        bamp = boundary_amplitude(Ut)
        boundary_max = max(boundary_max, bamp)
        if bamp > ESCAPE_BOUNDARY_AMPLITUDE:
            raise RuntimeError(
                f"front escaped: deviation amplitude {bamp:.3g} at the domain "
                f"boundary at t={times[j]:.4g}"
            )

        phi, ok = polish_phase(V, profile, phi_prev)
        if not ok:
            d_j, phi = distance_to_orbit(V, profile)
        else:
            d_j = _l2(V - profile.value_at(x - phi), dx)
        # The tracked frame is itself on the orbit, so it caps the distance.
        if norm_U[j] < d_j:
            d_j, phi = norm_U[j], C[j]
        phi_star[j] = phi
        d[j] = d_j
        phi_prev = phi

        if j == n_steps:
            break

        F = profile.f(V) - profile.f(vtw)
        wh = step_exp * wh + step_phi * np.fft.rfft(F)
        w = np.fft.irfft(wh, n=grid.n)
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > BLOWUP_LIMIT:
            raise ArithmeticError(
                f"instability: remainder amplitude exceeded {BLOWUP_LIMIT:g} "
                f"at t={times[j + 1]:.4g}; reduce dt"
            )

        vtw = profile.value_at(x - c * times[j + 1])
        V_next = (w + vtw if na_coeffs is None
                  else w + cfg.eps * (na_coeffs[j + 1] @ na_basis) + vtw)

        k1 = _phase_rhs(profile, V, C[j], cfg.m, x, dx)
        pred = C[j] + cfg.dt * k1
        k2 = _phase_rhs(profile, V_next, pred, cfg.m, x, dx)
        C[j + 1] = C[j] + 0.5 * cfg.dt * (k1 + k2)
        if abs(C[j + 1]) > 0.5 * grid.L:
            raise RuntimeError(
                f"front escaped: tracked phase {C[j + 1]:.3g} left "
                f"[-L/2, L/2] at t={times[j + 1]:.4g}"
            )
        V = V_next

    meta = {"boundary_amp_max": boundary_max, "scheme": cfg.conv_scheme}
    return Trajectory(cfg=cfg, profile=profile, times=times, C=C,
                      phi_star=phi_star, d=d, norm_U=norm_U, fields=fields,
                      noise=N, field_stride=stride, meta=meta)


def phase_track(fields: GridPath | np.ndarray, profile: WaveProfile, m: float,
                times: np.ndarray | None = None, C0: float = 0.0) -> np.ndarray:
    """Replay the Heun phase recursion over a stored field history.

    With m = 0 the recursion is exact: C(t) = C0 + c t.  Raises when the
    phase leaves [-L/2, L/2].
    """
    if isinstance(fields, GridPath):
        times = fields.times
        values = fields.values
    else:
        values = np.asarray(fields, float)
        if times is None:
            raise ValueError("times are required with a bare field array")
    if values.shape[0] != len(times):
        raise ValueError("field history and times disagree")
    g = profile.grid
    x, dx = g.x, g.dx
    dts = np.diff(times)
    C = np.empty(len(times))
    C[0] = C0
    for j, dt in enumerate(dts):
        k1 = _phase_rhs(profile, values[j], C[j], m, x, dx)
        pred = C[j] + dt * k1
        k2 = _phase_rhs(profile, values[j + 1], pred, m, x, dx)
        C[j + 1] = C[j] + 0.5 * dt * (k1 + k2)
        if abs(C[j + 1]) > 0.5 * g.L:
            raise RuntimeError(
                f"front escaped: tracked phase {C[j + 1]:.3g} left [-L/2, L/2]"
            )
    return C


def _batched_norms(values: np.ndarray, dx: float) -> dict:
    l2 = np.sqrt(np.sum(values ** 2, axis=1) * dx)
    l4 = (np.sum(values ** 4, axis=1) * dx) ** 0.25
    return {"L2": l2, "L4": l4, "U": np.maximum(l2, l4)}


def decompose(traj: Trajectory, lam: float | None = None) -> Decomposition:
    """Split the front-frame deviation into eps Z + y.

    Z is the noise convolution against the linearization along the tracked
    front, built with damping shift lam (default from the config); the split
    does not depend on lam up to discretization error.  With eps = 0 the
    noise part vanishes identically and y is the whole deviation.  The
    underlying recursions run at full resolution; the returned series live
    on the trajectory's stored-field time grid.
    """
    cfg = traj.cfg
    if traj.fields is None:
        raise ValueError("decomposition needs stored fields; rerun with "
                         "store_fields=True")
    lam_eff = cfg.lam_effective if lam is None else float(lam)
    if lam_eff <= 0:
        raise ValueError(f"damping shift must be positive, got {lam_eff}")
    grid = cfg.grid
    utilde = traj.utilde()

    if cfg.eps == 0 or traj.noise is None:
        Z = GridPath(times=traj.field_times.copy(),
                     values=np.zeros_like(traj.fields),
                     grid=grid, meta={"convolution": "evolution", "lambda": lam_eff})
        y = utilde.copy()
    else:
        x = grid.x
        profile, C = traj.profile, traj.C

        def coeff_row(j: int) -> np.ndarray:
            return profile.fprime(profile.value_at(x - C[j]))

        proj = RankOneProjector(m=cfg.m,
                                fields=lambda j: profile.deriv_at(x - C[j]))
        Z = convolve_evolution(traj.noise, cfg.op, coeff=coeff_row, proj=proj,
                               lam=lam_eff, grid=grid,
                               record_stride=traj.field_stride)
        y = utilde - cfg.eps * Z.values

    norms = {
        "U": _batched_norms(utilde, grid.dx),
        "Z": _batched_norms(Z.values, grid.dx),
        "y": _batched_norms(y, grid.dx),
    }
    return Decomposition(times=traj.field_times.copy(), lam=lam_eff,
                         eps=cfg.eps, Z=Z, y=y, utilde=utilde, norms=norms)


def diagnostics(traj: Trajectory, decomp: Decomposition | None = None) -> dict:
    """Scalar summary of a run: sup distances and norms, and when a
    decomposition is supplied its component sizes as well."""
    out = {
        "sup_d": float(np.max(traj.d)),
        "sup_norm_U": float(np.max(traj.norm_U)),
        "final_d": float(traj.d[-1]),
        "final_C": float(traj.C[-1]),
        "phase_gap": float(np.max(np.abs(traj.C - traj.phi_star))),
        "boundary_amp_max": float(traj.meta.get("boundary_amp_max", 0.0)),
        "speed": float(traj.profile.speed),
    }
    if traj.noise is not None:
        out["noise_holder"] = float(holder_seminorm(traj.noise, traj.cfg.eta).value)
    if decomp is not None:
        out.update({
            "lam": decomp.lam,
            "sup_norm_Z_U": float(np.max(decomp.norms["Z"]["U"])),
            "sup_norm_y_L2": float(np.max(decomp.norms["y"]["L2"])),
            "sup_norm_y_U": float(np.max(decomp.norms["y"]["U"])),
            "identity_defect": decomp.identity_defect(),
        })
    return out


def eps_sweep(cfg: SimConfig, eps_list=(1e-3, 2e-3, 4e-3),
              N: FieldPath | None = None) -> dict:
    """Scaling probe of the remainder: rerun the same noise path at several
    amplitudes and report log2 ratios of sup ||y|| between consecutive
    doublings (the remainder should gain about 1.5 powers per doubling)."""
    eps_list = sorted(float(e) for e in eps_list)
    if len(eps_list) < 2 or eps_list[0] <= 0:
        raise ValueError("need at least two positive amplitudes")
    if N is None:
        N = sample_field_noise(
            cfg.n_steps, M=cfg.n_modes, kind=cfg.noise_kind, H=cfg.hurst,
            T=cfg.T, seed=derive_seed(cfg.seed, 0x501), stable=cfg.stable,
            decay_exp=cfg.decay_exp, L=cfg.grid.L)
    sup_y = []
    for eps in eps_list:
        traj = solve(replace(cfg, eps=eps, store_fields=True), N=N)
        dec = decompose(traj)
        sup_y.append(float(np.max(dec.norms["y"]["L2"])))
    ratios = [float(np.log2(b / a)) for a, b in zip(sup_y, sup_y[1:])]
    return {"eps": eps_list, "sup_y": sup_y, "log2_ratios": ratios}
