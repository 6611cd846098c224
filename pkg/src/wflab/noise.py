"""Rough noise generators: fBm, symmetric alpha-stable increments, LFSM, and
mode-expanded field noise.

Every sampler returns a path on a uniform time grid including t = 0, with
``values[0] = 0``.  Paths are plain containers; norms and analysis live in
:mod:`wflab.holder`.

fBm uses exact circulant embedding of the fractional Gaussian noise
covariance, so the sampled increments have the exact target law (no
approximation beyond floating point).  Linear fractional stable motion is a
Riemann discretization of its moving-average representation

    Z(t) = int_{-inf}^{t} [ (t-s)_+^{H-1/alpha} - (-s)_+^{H-1/alpha} ] dL(s),

truncated to a burn-in history window of ``burn_factor * n`` steps before
t = 0.  Field noise expands M independent scalar paths on the lowest M
nonconstant sine/cosine modes of the periodic domain, weighted by a decaying
sequence ``lambda_i = (1 + i)^(-decay_exp)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.signal import fftconvolve

from .rng import derive_seed, make_generator

__all__ = [
    "ScalarPath",
    "FieldPath",
    "StableSpec",
    "sample_fbm",
    "sample_stable_increments",
    "sample_lfsm",
    "sample_field_noise",
]


@dataclass(frozen=True)
class StableSpec:
    """Parameters of a symmetric alpha-stable driver."""

    alpha: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if self.scale <= 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class ScalarPath:
    """A scalar path sampled on a uniform grid over [0, T], values[0] = 0."""

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True)
class FieldPath:
    """A field-valued path stored as spectral coefficients over time.

    ``coeffs[j, i]`` is the coefficient of basis function ``e_i`` at time
    ``times[j]``, with the decay weight lambda_i already folded in.  The basis
    functions are L2-orthonormal sines/cosines on [-L, L]:

        ('sin', k) -> sin(k pi x / L) / sqrt(L)
        ('cos', k) -> cos(k pi x / L) / sqrt(L)

    so Parseval gives ||N(t)||_{L2}^2 = sum_i coeffs[t, i]^2.
    """

    times: np.ndarray
    coeffs: np.ndarray
    lambdas: np.ndarray
    mode_map: tuple
    L: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n_t, m = self.coeffs.shape
        if len(self.times) != n_t:
            raise ValueError("coeffs must have one row per time point")
        if len(self.lambdas) != m or len(self.mode_map) != m:
            raise ValueError("lambdas and mode_map must have one entry per mode")
        if self.L <= 0:
            raise ValueError(f"domain half-length L must be positive, got {self.L}")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[1]

    def basis_matrix(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the orthonormal mode functions at points ``x``, shape (M, len(x))."""
        rows = []
        for kind, k in self.mode_map:
            arg = k * np.pi * x / self.L
            if kind == "sin":
                rows.append(np.sin(arg) / np.sqrt(self.L))
            elif kind == "cos":
                rows.append(np.cos(arg) / np.sqrt(self.L))
            else:
                raise ValueError(f"unknown mode kind {kind!r}")
        return np.array(rows)

    def values_at(self, j: int, x: np.ndarray) -> np.ndarray:
        """Spatial values of the field at time index ``j``."""
        return self.coeffs[j] @ self.basis_matrix(x)


def _check_time_grid(n: int, T: float) -> np.ndarray:
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"n must be a power of two >= 2, got {n}")
    if T <= 0.0:
        raise ValueError(f"T must be positive, got {T}")
    return np.linspace(0.0, T, n + 1)


def _fgn_unit_increments(n: int, H: float, rng: np.random.Generator) -> np.ndarray:
    """Exact fractional Gaussian noise of unit step via circulant embedding.

    Embeds the fGn autocovariance gamma(k) = 0.5 (|k+1|^{2H} - 2|k|^{2H}
    + |k-1|^{2H}) in a circulant of size 2n whose eigenvalues are provably
    nonnegative for fBm, then colors a Hermitian complex-Gaussian spectrum.
    """
    k = np.arange(n + 1, dtype=float)
    gamma = 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))
    row = np.concatenate([gamma[:n], [gamma[n]], gamma[n - 1:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -1e-10 * max(eig.max(), 1.0):
        raise ArithmeticError(
            f"circulant embedding produced negative eigenvalue {eig.min():g} "
            f"(n={n}, H={H})"
        )
    eig = np.clip(eig, 0.0, None)

    m = 2 * n
    z = rng.standard_normal(m)
    # Hermitian spectrum: real entries at j = 0 and j = n, conjugate pairs elsewhere.
    spec = np.empty(m, dtype=complex)
    spec[0] = np.sqrt(eig[0]) * z[0]
    spec[n] = np.sqrt(eig[n]) * z[1]
    a = z[2:n + 1]
    b = z[n + 1:]
    half = np.sqrt(eig[1:n] / 2.0) * (a + 1j * b)
    spec[1:n] = half
    spec[n + 1:] = np.conj(half[::-1])
    return np.fft.fft(spec).real[:n] / np.sqrt(m)


def sample_fbm(n: int, H: float, T: float = 1.0, seed: int = 0) -> ScalarPath:
    """Sample fractional Brownian motion on n+1 uniform points of [0, T].

    Parameters
    ----------
    n : number of steps, a power of two (circulant embedding size 2n).
    H : Hurst index, 0 < H < 1.
    T : horizon, > 0.
    seed : integer seed of the counter-based generator.

    Returns a :class:`ScalarPath` with B(0) = 0 and exact covariance
    E[B(s) B(t)] = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2.
    """
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst index must satisfy 0 < H < 1, got {H}")
    times = _check_time_grid(n, T)
    rng = make_generator(seed)
    dt = T / n
    increments = _fgn_unit_increments(n, H, rng) * dt ** H
    values = np.concatenate([[0.0], np.cumsum(increments)])
    meta = {"generator": "fbm", "H": H, "seed": seed}
    return ScalarPath(times=times, values=values, meta=meta)


def sample_stable_increments(
    n: int, spec: StableSpec, dt: float = 1.0, seed: int = 0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Increments of a symmetric alpha-stable Levy motion over steps of size dt.

    Uses the Chambers-Mallows-Stuck transform.  Each increment is
    ``dt^{1/alpha} * scale * S`` with S standard symmetric alpha-stable; at
    alpha = 2 this reduces to a centered Gaussian of variance 2 scale^2 dt.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if rng is None:
        rng = make_generator(seed)
    alpha = spec.alpha
    theta = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=n)
    w = rng.exponential(1.0, size=n)
    if abs(alpha - 1.0) < 1e-12:
        s = np.tan(theta)
    else:
        s = (np.sin(alpha * theta) / np.cos(theta) ** (1.0 / alpha)
             * (np.cos((1.0 - alpha) * theta) / w) ** ((1.0 - alpha) / alpha))
    return spec.scale * dt ** (1.0 / alpha) * s


def sample_lfsm(
    n: int,
    H: float,
    spec: StableSpec,
    T: float = 1.0,
    seed: int = 0,
    burn_factor: int = 4,
) -> ScalarPath:
    """Sample linear fractional stable motion on [0, T].

    Riemann discretization of the moving-average kernel against stable
    increments, with a history window of ``burn_factor * n`` steps before
    t = 0 standing in for the integral from -infinity.  Requires
    1/alpha < H < 1 (so alpha > 1); the kernel exponent is H - 1/alpha.
    """
    if spec.alpha <= 1.0:
        raise ValueError(
            f"LFSM needs alpha > 1 so that 1/alpha < H < 1 is possible, got alpha={spec.alpha}"
        )
    if not (1.0 / spec.alpha) < H < 1.0:
        raise ValueError(
            f"LFSM requires 1/alpha < H < 1, got H={H} with 1/alpha={1.0 / spec.alpha:.4f}"
        )
    if burn_factor < 1:
        raise ValueError(f"burn_factor must be >= 1, got {burn_factor}")
    times = _check_time_grid(n, T)
    dt = T / n
    burn = burn_factor * n
    rng = make_generator(seed)
    dl = sample_stable_increments(burn + n, spec, dt=dt, rng=rng)

    d = H - 1.0 / spec.alpha
    # Increment k lives on [s_k, s_k + dt) with s_k = (k - burn) dt.  For the
    # output time t_j = j dt,
    #   X_j = sum_{k < burn + j} (t_j - s_k)^d dL_k  -  sum_{k < burn} (-s_k)^d dL_k,
    # and the first sum is a discrete convolution with kernel g_m = (m dt)^d.
    kernel = (dt * np.arange(1, burn + n + 1, dtype=float)) ** d
    conv = fftconvolve(dl, kernel)
    # conv[i] = sum_k dl[k] g_{i - k + 1}; X_j's first sum is conv[burn + j - 1]
    # for j >= 1, while at j = 0 it cancels the history sum exactly.
    hist = float(np.dot(dl[:burn], kernel[:burn][::-1]))
    values = np.concatenate([[hist], conv[burn:burn + n]]) - hist
    values[0] = 0.0
    meta = {
        "generator": "lfsm", "H": H, "alpha": spec.alpha, "scale": spec.scale,
        "seed": seed, "burn_factor": burn_factor,
    }
    return ScalarPath(times=times, values=values, meta=meta)


def default_mode_map(M: int) -> tuple:
    """Lowest M nonconstant modes, alternating sin/cos with increasing wavenumber."""
    modes = []
    for i in range(1, M + 1):
        k = (i + 1) // 2
        kind = "sin" if i % 2 == 1 else "cos"
        modes.append((kind, k))
    return tuple(modes)


def sample_field_noise(
    n: int,
    M: int = 16,
    kind: Literal["fbm", "lfsm"] = "fbm",
    H: float = 0.75,
    T: float = 1.0,
    seed: int = 0,
    stable: StableSpec | None = None,
    decay_exp: float = 2.0,
    L: float = 40.0,
    burn_factor: int = 4,
    n_grid: int | None = None,
) -> FieldPath:
    """Sample infinite-dimensional noise truncated to M spatial modes.

    The field is N(t) = sum_{i=1..M} lambda_i X_i(t) e_i with independent
    scalar paths X_i (all fBm or all LFSM with common parameters), weights
    lambda_i = (1 + i)^(-decay_exp), and e_i the lowest M nonconstant
    sine/cosine modes on [-L, L].  Component seeds derive from ``seed`` by
    the package seed-splitting rule, so the field is reproducible and
    components are independent.

    ``n_grid``, when given, is the spatial grid size the field will be
    realized on; M must fit below its Nyquist wavenumber.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if decay_exp <= 0.5:
        raise ValueError(
            f"decay_exp must exceed 0.5 so the weights are square-summable, got {decay_exp}"
        )
    mode_map = default_mode_map(M)
    k_max = max(k for _, k in mode_map)
    if n_grid is not None and k_max >= n_grid // 2:
        raise ValueError(
            f"mode wavenumber {k_max} exceeds Nyquist capacity of an n={n_grid} grid"
        )
    lambdas = (1.0 + np.arange(1, M + 1, dtype=float)) ** (-decay_exp)
    coeffs = np.empty((n + 1, M))
    times = None
    for i in range(M):
        comp_seed = derive_seed(seed, i + 1)
        if kind == "fbm":
            path = sample_fbm(n, H, T=T, seed=comp_seed)
        elif kind == "lfsm":
            if stable is None:
                raise ValueError("kind='lfsm' requires a StableSpec")
            path = sample_lfsm(n, H, stable, T=T, seed=comp_seed,
                               burn_factor=burn_factor)
        else:
            raise ValueError(f"unknown noise kind {kind!r}")
        coeffs[:, i] = lambdas[i] * path.values
        times = path.times
    meta = {
        "generator": f"field_{kind}", "H": H, "seed": seed,
        "decay_exp": decay_exp,
        "alpha": None if stable is None else stable.alpha,
    }
    return FieldPath(times=times, coeffs=coeffs, lambdas=lambdas,
                     mode_map=mode_map, L=L, meta=meta)
