"""Time integration of the deterministic, colored-noise and white-noise equations.

All solvers share one semi-implicit Euler loop on the Galerkin coefficients:
the nonlocal coefficient ``a(l(u))`` is frozen at the start of each step,
diffusion is implicit and everything else is explicit,

    w^{n+1}_k = (w^n_k + dt * r_k(t_n, w^n)) / (1 + dt * a_n * lambda_k).

The integrated unknown ``w`` is ``u`` itself for the deterministic and
colored-noise equations, ``p = u - x*`` for white additive noise and
``q = exp(-y) u`` for white multiplicative noise.  An explicit Heun variant
of the same right-hand side is available as a cross-check.

Noise enters each step through its mean over the step, computed by the
trapezoid rule at path resolution (``noise_sampling="average"``), or
through the value at the left end point (``"point"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import conjugate
from .galerkin import Field, Grid, grid_for
from .model import ModelSpec
from .noise import NoiseKind
from .wiener import GridError, WienerPath, grid_steps

__all__ = [
    "DivergenceError",
    "SolveConfig",
    "Trajectory",
    "GapRow",
    "EnergyReport",
    "step",
    "solve_deterministic",
    "solve_stationary",
    "solve_white_additive",
    "solve_white_multiplicative",
    "solve_white",
    "evolve",
    "converge_solutions",
    "energy_inequality",
    "path_window",
]

SCHEMES = ("imex-euler", "explicit-heun")
WHITE = "white"


class DivergenceError(RuntimeError):
    def __init__(self, t: float, norm: float):
        super().__init__(f"solution diverged at t={t:.6g} (|u|={norm:.3g})")
        self.t = t
        self.norm = norm


@dataclass(frozen=True)
class SolveConfig:
    dt: float = 1e-3
    t_start: float = 0.0
    t_end: float = 1.0
    scheme: str = "imex-euler"
    n_modes: int = 16
    n_grid: int | None = None
    noise_sampling: str = "average"
    blowup: float = 1e6

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_start < self.t_end:
            raise ValueError("t_start must precede t_end")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.noise_sampling not in ("average", "point"):
            raise ValueError("noise_sampling must be 'average' or 'point'")
        self.n_steps  # validates alignment of the horizon

    @property
    def n_steps(self) -> int:
        return grid_steps(self.t_end - self.t_start, self.dt)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    @property
    def grid(self) -> Grid:
        return grid_for(self.n_modes, self.n_grid)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def fields(self) -> list[Field]:
        return [Field(s) for s in self.states]

    def final(self) -> Field:
        return Field(self.states[-1])


def _as_batch(u_init, n_modes: int) -> tuple[np.ndarray, bool]:
    if isinstance(u_init, Field):
        u_init = u_init.coeffs
    u = np.array(u_init, dtype=np.float64)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != n_modes:
        raise ValueError(f"initial state has {u.shape[1]} modes, config expects {n_modes}")
    return u, single


def path_window(noise, spec: ModelSpec, t_lo: float, t_hi: float) -> tuple[float, float]:
    """Smallest path window needed to drive a solve over ``[t_lo, t_hi]``."""
    if noise is None:
        return min(t_lo, 0.0), max(t_hi, 0.0)
    if noise == WHITE:
        proc = conjugate.process_for(spec.with_(epsilon=1.0), None, 1)
        back, fwd = conjugate.history_needed(proc)
    else:
        back, fwd = noise.reach()
    return min(t_lo - back, 0.0), max(t_hi + fwd, 0.0)


# -- per-step noise and auxiliary inputs ------------------------------------------


def _node_range(path: WienerPath, cfg: SolveConfig) -> tuple[int, int, int]:
    try:
        stride = grid_steps(cfg.dt, path.dt_grid)
        i_lo, i_hi = path.index(cfg.t_start), path.index(cfg.t_end)
    except GridError as exc:
        raise GridError(f"solver grid is not aligned with the path: {exc}") from exc
    return i_lo, i_hi, stride


def _step_inputs(values: np.ndarray, stride: int, h: float, dt: float, how: str) -> np.ndarray:
    """Per-step input from node values: left end point or trapezoid mean."""
    if how == "point":
        return values[:-1:stride].copy()
    cum = integrate.cumulative_trapezoid(values, dx=h, initial=0.0)[::stride]
    return np.diff(cum) / dt


def _noise_inputs(kind: NoiseKind, path: WienerPath, cfg: SolveConfig) -> np.ndarray:
    i_lo, i_hi, stride = _node_range(path, cfg)
    z = kind.series(path, i_lo, i_hi)
    return _step_inputs(z, stride, path.dt_grid, cfg.dt, cfg.noise_sampling)


def _aux_inputs(proc, path: WienerPath, cfg: SolveConfig) -> tuple[np.ndarray, np.ndarray]:
    """Aux amplitude at the step times and its per-step input."""
    i_lo, i_hi, stride = _node_range(path, cfg)
    a = conjugate.aux_series(proc, path, i_lo, i_hi)
    return a[::stride].copy(), _step_inputs(a, stride, path.dt_grid, cfg.dt, cfg.noise_sampling)


# -- the shared loop -----------------------------------------------------------------

AFn = Callable[[int, np.ndarray], np.ndarray]
RFn = Callable[[int, np.ndarray, float], np.ndarray]
UFn = Callable[[int, np.ndarray], np.ndarray]


def _run(cfg: SolveConfig, w0: np.ndarray, a_of: AFn, rhs_of: RFn, to_u: UFn, store: bool, lam: np.ndarray,
         keep_w: bool = False):
    """Time loop shared by every solver.

    Returns the final ``u`` batch, or the stored ``u`` history when ``store``
    is set; with ``keep_w`` the history of the integrated unknown comes back too.
    """
    dt = cfg.dt
    n = cfg.n_steps
    t = cfg.times
    w = w0.copy()
    u = to_u(0, w)
    out = np.empty((n + 1,) + u.shape) if store else None
    w_out = np.empty((n + 1,) + w.shape) if store and keep_w else None
    if store:
        out[0] = u
        if keep_w:
            w_out[0] = w
    for k in range(n):
        a = a_of(k, w)[:, None]
        if cfg.scheme == "imex-euler":
            w = (w + dt * rhs_of(k, w, t[k])) / (1.0 + dt * a * lam)
        else:
            k1 = rhs_of(k, w, t[k]) - a * lam * w
            w1 = w + dt * k1
            a1 = a_of(k, w1)[:, None]
            k2 = rhs_of(k, w1, t[k + 1]) - a1 * lam * w1
            w = w + 0.5 * dt * (k1 + k2)
        u = to_u(k + 1, w)
        norm = np.sqrt(np.max(np.sum(u * u, axis=-1)))
        if not np.isfinite(norm) or norm > cfg.blowup:
            raise DivergenceError(float(t[k + 1]), float(norm))
        if store:
            out[k + 1] = u
            if keep_w:
                w_out[k + 1] = w
    if not store:
        return u
    return (out, w_out) if keep_w else out


def _identity(k, w):
    return w


def _finish(cfg, result, single, store, meta):
    if not store:
        return result[0] if single else result
    states = result[:, 0, :] if single else result
    return Trajectory(cfg.times, states, meta)


def _meta(spec, path, noise, cfg):
    return {
        "spec": spec.digest(),
        "seed": None if path is None else path.seed,
        "noise": "none" if noise is None else (noise if isinstance(noise, str) else f"{noise.variant}:{noise.delta!r}"),
        "scheme": cfg.scheme,
    }


def _base_terms(spec: ModelSpec, grid: Grid):
    n = grid.n_modes
    ell = spec.ell_coeffs(n)

    def reaction(w):
        return grid.apply(spec.f, w)

    def forcing(t):
        return spec.h(t, n) if spec.has_forcing else None

    return ell, reaction, forcing


def step(spec: ModelSpec, field: Field, t: float, dt: float, noise_sample: float | None = None,
         n_grid: int | None = None) -> Field:
    """One semi-implicit Euler step; ``noise_sample=None`` drops the noise term."""
    grid = grid_for(field.n_modes, n_grid)
    ell, reaction, forcing = _base_terms(spec, grid)
    u = field.coeffs[None, :]
    r = reaction(u)
    h = forcing(t)
    if h is not None:
        r = r + h
    if noise_sample is not None and spec.epsilon != 0.0:
        r = r + spec.epsilon * noise_sample * _coupling(spec, grid, t, u)
    a = spec.a(u @ ell)[:, None]
    return Field(((u + dt * r) / (1.0 + dt * a * grid.lam))[0])


def _coupling(spec: ModelSpec, grid: Grid, t: float, u: np.ndarray) -> np.ndarray:
    if spec.coupling == "additive":
        return spec.phi(grid.n_modes)[None, :]
    if spec.coupling == "multiplicative":
        return u
    return grid.apply(lambda s: spec.g(t, s), u)


def _direct(spec, cfg, u_init, zbar, store, meta):
    """Deterministic (``zbar=None``) or colored-noise solve for ``u`` itself."""
    grid = cfg.grid
    ell, reaction, forcing = _base_terms(spec, grid)
    w0, single = _as_batch(u_init, cfg.n_modes)
    eps = spec.epsilon
    noisy = zbar is not None and eps != 0.0

    def a_of(k, w):
        return spec.a(w @ ell)

    def rhs_of(k, w, t):
        r = reaction(w)
        h = forcing(t)
        if h is not None:
            r = r + h
        if noisy:
            r = r + eps * zbar[k] * _coupling(spec, grid, t, w)
        return r

    res = _run(cfg, w0, a_of, rhs_of, _identity, store, grid.lam)
    return _finish(cfg, res, single, store, meta)


def solve_deterministic(spec: ModelSpec, cfg: SolveConfig, u_init, store: bool = True):
    return _direct(spec, cfg, u_init, None, store, _meta(spec, None, None, cfg))


def solve_stationary(spec: ModelSpec, path: WienerPath, kind: NoiseKind, cfg: SolveConfig, u_init,
                     store: bool = True):
    """Pathwise solve of the equation driven by ``eps g zeta_delta``."""
    zbar = _noise_inputs(kind, path, cfg) if spec.epsilon != 0.0 else None
    return _direct(spec, cfg, u_init, zbar, store, _meta(spec, path, kind, cfg))


def _conjugated(spec, path, cfg, u_init, kind, store):
    """Solve through the change of variables for additive or multiplicative noise.

    ``kind=None`` gives the white-noise solution; a NoiseKind gives the same
    transformed equation driven by the corresponding stationary process.
    """
    grid = cfg.grid
    n = cfg.n_modes
    ell, reaction, forcing = _base_terms(spec, grid)
    proc = conjugate.process_for(spec, kind, n)
    aux_t, aux_bar = _aux_inputs(proc, path, cfg)
    u0, single = _as_batch(u_init, n)
    lam = grid.lam
    if proc.flavor == "additive":
        phi = proc.phi
        rate = proc.rate
        w0 = u0 - aux_t[0] * phi

        def a_of(k, w):
            return spec.a((w + aux_t[k] * phi) @ ell)

        def rhs_of(k, w, t):
            xb = aux_bar[k] * phi
            r = reaction(w + xb)
            h = forcing(t)
            if h is not None:
                r = r + h
            return r + (rate * xb - a_of(k, w)[:, None] * lam * xb)

        def to_u(k, w):
            return w + aux_t[k] * phi

    else:
        w0 = np.exp(-aux_t[0]) * u0

        def a_of(k, w):
            return spec.a((w @ ell) * np.exp(aux_t[k]))

        def rhs_of(k, w, t):
            yb = aux_bar[k]
            e = np.exp(yb)
            r = reaction(w * e)
            h = forcing(t)
            if h is not None:
                r = r + h
            return r / e + w * yb

        def to_u(k, w):
            return np.exp(aux_t[k]) * w

    res = _run(cfg, w0, a_of, rhs_of, to_u, store, lam, keep_w=True)
    meta = _meta(spec, path, WHITE if kind is None else kind, cfg)
    if not store:
        return _finish(cfg, res, single, store, meta)
    states, transformed = res
    out = _finish(cfg, states, single, store, meta)
    out.meta["aux"] = aux_t
    out.meta["transformed"] = transformed[:, 0, :] if single else transformed
    return out


def solve_white_additive(spec: ModelSpec, path: WienerPath, cfg: SolveConfig, u_init, store: bool = True):
    if spec.coupling != "additive":
        raise ValueError("solve_white_additive needs the additive coupling")
    return _conjugated(spec, path, cfg, u_init, None, store)


def solve_white_multiplicative(spec: ModelSpec, path: WienerPath, cfg: SolveConfig, u_init, store: bool = True):
    if spec.coupling != "multiplicative":
        raise ValueError("solve_white_multiplicative needs the multiplicative coupling")
    return _conjugated(spec, path, cfg, u_init, None, store)


def solve_white(spec: ModelSpec, path: WienerPath, cfg: SolveConfig, u_init, store: bool = True):
    if spec.coupling == "additive":
        return solve_white_additive(spec, path, cfg, u_init, store)
    return solve_white_multiplicative(spec, path, cfg, u_init, store)


def solve_conjugated_stationary(spec: ModelSpec, path: WienerPath, kind: NoiseKind, cfg: SolveConfig, u_init,
                                store: bool = True):
    """Colored-noise solution computed through the change of variables."""
    return _conjugated(spec, path, cfg, u_init, kind, store)


def evolve(spec: ModelSpec, path: WienerPath | None, noise, cfg: SolveConfig, u_init, store: bool = False):
    """Dispatch on ``noise``: None (deterministic), ``"white"`` or a NoiseKind."""
    if noise is None or spec.epsilon == 0.0 and noise != WHITE:
        return solve_deterministic(spec, cfg, u_init, store)
    if noise == WHITE:
        return solve_white(spec, path, cfg, u_init, store)
    return solve_stationary(spec, path, noise, cfg, u_init, store)


# -- convergence tables ------------------------------------------------------------


@dataclass(frozen=True)
class GapRow:
    delta: float
    epsilon: float
    sup_gap_vs_deterministic: float
    sup_gap_vs_white: float


def _sup_sq(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.max(np.sum(d * d, axis=-1)))


def converge_solutions(
    spec: ModelSpec,
    path: WienerPath,
    deltas: Sequence[float],
    epsilons: Sequence[float],
    cfg: SolveConfig,
    u_init,
    variant: str = "ou",
    paired: bool = False,
) -> list[GapRow]:
    """``sup_t |u_{delta,eps} - u|^2`` and ``sup_t |u_{delta,eps} - u_{0,eps}|^2``.

    Rows cover the product ``deltas x epsilons``, or the zipped pairs when
    ``paired`` is set.
    """
    if len(deltas) == 0 or len(epsilons) == 0:
        raise ValueError("empty delta or epsilon list")
    pairs = list(zip(deltas, epsilons)) if paired else [(d, e) for d in deltas for e in epsilons]
    det = solve_deterministic(spec, cfg, u_init).states
    white: dict[float, np.ndarray] = {}
    rows = []
    for d, e in pairs:
        s = spec.with_(epsilon=float(e))
        if e not in white:
            white[e] = det if e == 0 else solve_white(s, path, cfg, u_init).states
        ud = solve_stationary(s, path, NoiseKind(variant, float(d)), cfg, u_init).states
        rows.append(GapRow(float(d), float(e), _sup_sq(ud, det), _sup_sq(ud, white[e])))
    return rows


# -- energy balance ------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    residuals: np.ndarray
    dt: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))

    @property
    def violation(self) -> float:
        return max(0.0, self.max_residual)

    @property
    def constant(self) -> float:
        """Smallest C with ``violation <= C dt``."""
        return self.violation / self.dt

    @property
    def margin(self) -> float:
        return float(-np.max(self.residuals))


def energy_inequality(spec: ModelSpec, path: WienerPath, kind: NoiseKind, traj: Trajectory,
                      n_grid: int | None = None) -> EnergyReport:
    """Per-step residual of the discrete energy inequality for the general coupling.

    LHS: ``(|u^{n+1}|^2 - |u^n|^2)/dt + m lambda_1 |u^n|^2 + (m/2)||u^n||^2 + alpha2 |u^n|_p^p``.
    RHS: ``(2/m)||h||_*^2 + (2 kappa + eps c |zeta|^(p/(p-q))) + eps c |zeta|^p1 |psi1|^p1``
    at ``t_n`` (domain measure 1).  Positive residuals are violations.
    """
    states = traj.states
    times = traj.times
    dt = float(times[1] - times[0])
    n_modes = states.shape[1]
    grid = grid_for(n_modes, n_grid)
    lam = grid.lam
    l2 = np.sum(states**2, axis=1)
    h1 = np.sum(lam * states**2, axis=1)
    lpp = grid.h * np.sum(np.abs(grid.samples(states)) ** spec.p, axis=1)
    m = spec.m
    lhs = (l2[1:] - l2[:-1]) / dt + m * lam[0] * l2[:-1] + 0.5 * m * h1[:-1] + spec.alpha2 * lpp[:-1]
    idx = [path.index(t) for t in times[:-1]]
    z = np.abs(kind.series(path, idx[0], idx[-1]))[:: grid_steps(dt, path.dt_grid)]
    c = spec.young_constant()
    eps = spec.epsilon
    p, q = spec.p, spec.q
    psi = np.abs(spec.psi1(times[:-1]))
    rhs = (
        (2.0 / m) * spec.h_dual_norm_sq(times[:-1])
        + (2.0 * spec.kappa + eps * c * z ** (p / (p - q)))
        + eps * c * z**spec.p1 * psi**spec.p1
    )
    return EnergyReport(lhs - rhs, dt)
