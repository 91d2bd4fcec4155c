"""Stochastic oscillator model with tunable transition mechanisms.

The model is a planar normal-form oscillator with a quintic saturation
term, an amplitude-dependent frequency (shear) term, and additive white
noise on both components:

    dx/dt = gamma*(mu*x + s*(x^2+y^2)*(x - sigma*y) - omega*y - (x^2+y^2)^2*x) + nu*eta_x
    dy/dt = gamma*(mu*y + s*(x^2+y^2)*(y + sigma*x) + omega*x - (x^2+y^2)^2*y) + nu*eta_y

Depending on (mu, s) the noise-free system has a stable equilibrium at
the origin (the low-amplitude "NS" state), a stable limit cycle (the
high-amplitude "S" state), or both.  Ramping mu upward through zero at
s < 0 produces bifurcation-induced transitions; holding (mu, s) in the
bistable wedge produces noise-induced ones; ramping at s > 0 mixes the
two mechanisms.

Integration is Euler-Maruyama with a fixed step, seeded noise from
:mod:`ctclass.rng`, and mu evaluated at the left endpoint of each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from .errors import NumericError, ValidationError
from .rng import normal_pair, seed_state

__all__ = [
    "ModelParams",
    "ParameterPath",
    "SimConfig",
    "Trajectory",
    "Region",
    "drift",
    "simulate",
    "limit_cycle_radii",
    "classify_region",
    "mu_ramp",
    "regime_setup",
    "REGIMES",
]


@dataclass(frozen=True)
class ModelParams:
    """Model coefficients.

    s, sigma : bifurcation and shear parameters; whenever both are
        nonzero they must share a sign.
    nu : additive noise level (standard deviation of the white noise).
    omega : small-amplitude oscillation frequency.
    gamma : timescale factor, > 0.
    b : quintic coefficient, fixed at 1.
    """

    s: float
    sigma: float
    nu: float
    omega: float
    gamma: float
    b: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if self.b != 1.0:
            raise ValidationError("quintic coefficient b is fixed at 1")
        if self.nu < 0:
            raise ValidationError(f"noise level nu must be >= 0, got {self.nu}")
        if self.s != 0 and self.sigma != 0 and (self.s > 0) != (self.sigma > 0):
            raise ValidationError(
                f"s and sigma must share a sign when both are nonzero "
                f"(got s={self.s}, sigma={self.sigma})"
            )


@dataclass(frozen=True)
class ParameterPath:
    """Time course of the bifurcation parameter mu.

    Either constant (rate == 0) or a linear ramp mu(t) = mu0 + rate*t
    for t in [0, t_end].
    """

    kind: str
    mu0: float
    rate: float
    t_end: float

    def __post_init__(self):
        if self.kind not in ("constant", "linear-ramp"):
            raise ValidationError(f"unknown path kind {self.kind!r}")
        if self.kind == "constant" and self.rate != 0.0:
            raise ValidationError("constant path must have rate 0")
        if self.t_end <= 0:
            raise ValidationError("path t_end must be positive")

    def mu(self, t: float) -> float:
        return self.mu0 + self.rate * t

    @staticmethod
    def constant(mu: float, t_end: float) -> "ParameterPath":
        return ParameterPath("constant", mu, 0.0, t_end)

    @staticmethod
    def ramp(mu0: float = -2.0, rate: float = 0.05, t_end: float = 60.0) -> "ParameterPath":
        return ParameterPath("linear-ramp", mu0, rate, t_end)


def mu_ramp(t: float) -> float:
    """Standard upward ramp mu(t) = -2 + t/20 used for the drift regimes."""
    if t < 0:
        raise ValidationError("mu_ramp requires t >= 0")
    return -2.0 + t / 20.0


@dataclass(frozen=True)
class SimConfig:
    """Integration settings: step, horizon, initial condition, seed."""

    dt: float = 0.001
    t_end: float = 60.0
    x0: float = 0.1
    y0: float = 0.1
    seed: int = 0
    max_radius: float = 1.0e6

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if self.t_end < self.dt:
            raise ValidationError("t_end must be >= dt")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")
        if not self.max_radius > 0:
            raise ValidationError("max_radius must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def _all_finite(a: np.ndarray) -> bool:
    # chunked so validation of very long series does not allocate a
    # full-size temporary
    step = 1 << 24
    for lo in range(0, a.size, step):
        if not np.all(np.isfinite(a[lo : lo + step])):
            return False
    return True


@dataclass
class Trajectory:
    """Uniformly sampled series: x samples, optional y channel."""

    t0: float
    dt: float
    x: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 1 or self.x.size == 0:
            raise ValidationError("trajectory needs a non-empty 1-d x channel")
        if not self.dt > 0:
            raise ValidationError("trajectory dt must be positive")
        if not _all_finite(self.x):
            raise ValidationError("trajectory contains non-finite x samples")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.shape != self.x.shape:
                raise ValidationError("y channel length must match x")
            if not _all_finite(self.y):
                raise ValidationError("trajectory contains non-finite y samples")

    def __len__(self) -> int:
        return self.x.size

    @property
    def t_end(self) -> float:
        return self.time_at(self.x.size - 1)

    @property
    def duration(self) -> float:
        return (self.x.size - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.x.size) * self.dt

    def time_at(self, i: int) -> float:
        return self.t0 + i * self.dt

    def index_of(self, t: float, tol: float = 1e-6) -> int:
        """Index of the sample at time t; t must lie on the grid."""
        k = (t - self.t0) / self.dt
        ki = int(round(k))
        if abs(k - ki) > tol or not 0 <= ki < self.x.size:
            raise ValidationError(f"time {t} is not on the sample grid")
        return ki

    def segment(self, t_lo: float, t_hi: float) -> "Trajectory":
        i0 = self.index_of(t_lo)
        i1 = self.index_of(t_hi)
        if i1 <= i0:
            raise ValidationError("segment end must be after its start")
        y = None if self.y is None else self.y[i0 : i1 + 1].copy()
        return Trajectory(self.time_at(i0), self.dt, self.x[i0 : i1 + 1].copy(), y)


class Region(Enum):
    """Stability region of the noise-free system in the (mu, s) plane."""

    NS_ONLY = "ns-only"
    S_ONLY = "s-only"
    BISTABLE = "bistable"
    BOUNDARY = "boundary"


def drift(x: float, y: float, mu: float, p: ModelParams) -> tuple[float, float]:
    """Deterministic vector field at (x, y).

    Pure function; extreme inputs overflow to inf rather than raising.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        r2 = x * x + y * y
        dx = p.gamma * (mu * x + p.s * r2 * (x - p.sigma * y) - p.omega * y - r2 * r2 * x)
        dy = p.gamma * (mu * y + p.s * r2 * (y + p.sigma * x) + p.omega * x - r2 * r2 * y)
    return float(dx), float(dy)


def limit_cycle_radii(mu: float, s: float) -> tuple[float, float | None] | None:
    """Radii of the limit cycles of the noise-free system.

    Returns (r_plus, r_minus) where r_minus is None when the inner
    (unstable) cycle does not exist, or None when no cycle exists at
    all.  The fold at mu = -s^2/4 (s > 0) is included: there both radii
    coincide at sqrt(s/2).
    """
    disc = s * s + 4.0 * mu
    if s > 0:
        if disc < 0:
            return None
        root = math.sqrt(disc)
        r_plus = math.sqrt((s + root) / 2.0)
        if mu < 0:
            r_minus = math.sqrt(max(s - root, 0.0) / 2.0)
            return r_plus, r_minus
        return r_plus, None
    if mu > 0:
        root = math.sqrt(disc)
        return math.sqrt((s + root) / 2.0), None
    return None


def classify_region(mu: float, s: float) -> Region:
    """Which attractors the noise-free system has at (mu, s)."""
    if mu == 0.0:
        return Region.BOUNDARY
    if s > 0 and mu == -s * s / 4.0:
        return Region.BOUNDARY
    if s > 0 and -s * s / 4.0 < mu < 0.0:
        return Region.BISTABLE
    if mu > 0.0:
        return Region.S_ONLY
    return Region.NS_ONLY


@njit(cache=True)
def _euler_maruyama(n_steps, dt, x0, y0, mu0, mu_rate, s, sigma, nu, omega, gamma,
                    seed, max_r2, keep_y):
    """Core integrator; returns (x, y, status).

    status >= 0 is the step index where |z| exceeded the divergence
    bound; -1 means the run completed.  The per-step noise draws are one
    Box-Muller pair: the cosine branch drives x, the sine branch y.
    """
    x = np.empty(n_steps + 1, dtype=np.float64)
    ny = n_steps + 1 if keep_y else 1
    y = np.empty(ny, dtype=np.float64)
    state = seed_state(seed)
    xx = x0
    yy = y0
    x[0] = xx
    if keep_y:
        y[0] = yy
    sq = nu * np.sqrt(dt)
    for k in range(n_steps):
        mu = mu0 + mu_rate * (k * dt)
        r2 = xx * xx + yy * yy
        fx = gamma * (mu * xx + s * r2 * (xx - sigma * yy) - omega * yy - r2 * r2 * xx)
        fy = gamma * (mu * yy + s * r2 * (yy + sigma * xx) + omega * xx - r2 * r2 * yy)
        if nu > 0.0:
            z0, z1 = normal_pair(state)
            xx = xx + dt * fx + sq * z0
            yy = yy + dt * fy + sq * z1
        else:
            xx = xx + dt * fx
            yy = yy + dt * fy
        r2n = xx * xx + yy * yy
        if not np.isfinite(r2n) or r2n > max_r2:
            x[k + 1] = 0.0
            if keep_y:
                y[k + 1] = 0.0
            return x, y, k
        x[k + 1] = xx
        if keep_y:
            y[k + 1] = yy
    if not keep_y:
        y[0] = yy
    return x, y, -1


def _run_kernel(p: ModelParams, path: ParameterPath, cfg: SimConfig, keep_y: bool):
    n_steps = cfg.n_steps
    if path.t_end < cfg.t_end - 1e-9:
        raise ValidationError(
            f"parameter path ends at t={path.t_end} before the simulation horizon {cfg.t_end}"
        )
    x, y, status = _euler_maruyama(
        n_steps, cfg.dt, cfg.x0, cfg.y0, path.mu0, path.rate,
        p.s, p.sigma, p.nu, p.omega, p.gamma,
        np.uint64(cfg.seed), cfg.max_radius**2, keep_y,
    )
    if status >= 0:
        raise NumericError(
            f"trajectory diverged at t={status * cfg.dt:.6g} "
            f"(|z| exceeded {cfg.max_radius:g}); reduce dt or check parameters"
        )
    return x, y


def simulate(p: ModelParams, path: ParameterPath, cfg: SimConfig) -> Trajectory:
    """Integrate the model; deterministic for a fixed (p, path, cfg)."""
    x, y, = _run_kernel(p, path, cfg, keep_y=True)
    return Trajectory(0.0, cfg.dt, x, y)


def simulate_x(p: ModelParams, path: ParameterPath, cfg: SimConfig
               ) -> tuple[np.ndarray, tuple[float, float]]:
    """x channel only, plus the final (x, y) state for chained runs.

    Memory-lean variant used by long harvesting loops; sample values are
    identical to :func:`simulate` for the same seed.
    """
    x, y, = _run_kernel(p, path, cfg, keep_y=False)
    return x, (float(x[-1]), float(y[0]))


@dataclass(frozen=True)
class RegimeSetup:
    """Parameter bundle that produces one transition mechanism."""

    params: ModelParams
    path: ParameterPath
    label: str
    default_t_end: float = field(default=60.0)


REGIMES = {
    "bct": RegimeSetup(
        ModelParams(s=-1.0, sigma=-1.0, nu=0.18, omega=1.3, gamma=10.0),
        ParameterPath.ramp(),
        "BCT",
    ),
    "bnct": RegimeSetup(
        ModelParams(s=1.0, sigma=1.0, nu=0.18, omega=1.3, gamma=10.0),
        ParameterPath.ramp(),
        "BNCT",
    ),
    "nct": RegimeSetup(
        ModelParams(s=1.0, sigma=1.0, nu=0.18, omega=1.3, gamma=10.0),
        ParameterPath.constant(-0.22, t_end=1.0e9),
        "NCT",
        default_t_end=200.0,
    ),
}


def regime_setup(name: str) -> RegimeSetup:
    try:
        return REGIMES[name.lower()]
    except KeyError:
        raise ValidationError(
            f"unknown regime {name!r}; expected one of {sorted(REGIMES)}"
        ) from None
