"""Absorbing radii, pullback attractor clouds and Hausdorff semidistances.

Radii are evaluated at the path's t = 0 node by quadrature over the past;
improper integrals are truncated after ``T_TRUNC`` decay constants of their
exponential weight.  Integrands of the form ``exp(k s) g(s)`` use weights
that integrate the exponential exactly against the piecewise-linear
interpolant of ``g``, so noise-free radii reduce to their closed forms to
rounding error.

Attractors are approximated by pulling an ensemble of initial states back
from successively earlier times and keeping the terminal states once they
stop moving (a Cauchy criterion on matched initial states).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.random import Generator, Philox
from scipy.spatial.distance import cdist

from . import conjugate, solver
from .galerkin import Field, eigenvalues
from .model import LAMBDA_1, ModelSpec
from .noise import T_TRUNC, NoiseKind
from .wiener import WienerPath, grid_steps

__all__ = [
    "FORMULAS",
    "RegimeError",
    "NonCauchyError",
    "RadiusReport",
    "AbsorbReport",
    "PointCloud",
    "SemiRow",
    "exp_weighted_integral",
    "absorbing_radius",
    "radius_window",
    "formula_for",
    "absorbing_check",
    "ic_ensemble",
    "pullback_attractor_sample",
    "hausdorff_semidistance",
    "semicontinuity_experiment",
]

FORMULAS = ("cor33", "thm46-additive", "thm58-multiplicative")
DOMAIN_MEASURE = 1.0


class RegimeError(ValueError):
    """The requested radius formula does not apply to the model."""


class NonCauchyError(RuntimeError):
    def __init__(self, displacements: Sequence[float]):
        super().__init__(f"pullback states did not settle; displacements {list(displacements)}")
        self.displacements = list(displacements)


# -- quadrature -----------------------------------------------------------------------


def _phi_weights(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A = int_0^1 e^{x t}(1-t) dt`` and ``B = int_0^1 e^{x t} t dt``."""
    x = np.asarray(x, dtype=np.float64)
    a = np.empty_like(x)
    b = np.empty_like(x)
    small = np.abs(x) < 0.1
    xs = x[small]
    term = np.ones_like(xs)
    sa = np.zeros_like(xs)
    sb = np.zeros_like(xs)
    for n in range(16):
        sa += term / ((n + 1) * (n + 2))
        sb += term / (n + 2)
        term = term * xs / (n + 1)
    a[small], b[small] = sa, sb
    xl = x[~small]
    e = np.exp(xl)
    b[~small] = (e * (xl - 1.0) + 1.0) / xl**2
    a[~small] = (e - 1.0) / xl - b[~small]
    return a, b


def exp_weighted_integral(g: np.ndarray, s0: float, h: float, k: float) -> float:
    """``int_{s0}^{s0 + (n-1) h} exp(k s) g(s) ds`` for g given on n uniform nodes.

    Exact for piecewise-linear g.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.size < 2:
        return 0.0
    a, b = _phi_weights(np.array([k * h]))
    left = s0 + h * np.arange(g.size - 1)
    return float(h * np.sum(np.exp(k * left) * (a[0] * g[:-1] + b[0] * g[1:])))


def _trapezoid(g: np.ndarray, h: float) -> float:
    return float(h * (np.sum(g) - 0.5 * (g[0] + g[-1])))


# -- radii ------------------------------------------------------------------------------


@dataclass(frozen=True)
class RadiusReport:
    r_squared: float
    formula_id: str
    r_squared_white: float | None = None
    truncation: float = T_TRUNC
    quadrature: str = "exponential-fitted trapezoid at path resolution"
    meta: dict = field(default_factory=dict)

    def ball(self, lambda_1: float = LAMBDA_1) -> float:
        """Squared L2 radius ``R / lambda_1`` of the absorbing ball."""
        return self.r_squared / lambda_1


def _history_nodes(path: WienerPath, span: float) -> tuple[int, int]:
    n = int(np.ceil(span / path.dt_grid - 1e-9))
    i0 = path.zero_index
    if i0 - n < 0:
        raise conjugate_window_error(span)
    return i0 - n, n


def conjugate_window_error(span: float):
    from .noise import WindowError

    return WindowError(f"the radius needs {span:.6g} time units of path history before t = 0")


def _aux_past(spec: ModelSpec, path: WienerPath, noise: NoiseKind | None, span: float) -> tuple[np.ndarray, int]:
    proc = conjugate.process_for(spec, noise, 1)
    lo, n = _history_nodes(path, span)
    return conjugate.aux_series(proc, path, lo, path.zero_index), n


def _check_tail(full: float, half: float, formula: str) -> None:
    if not np.isfinite(full) or abs(full - half) > 1e-6 * max(1.0, abs(full)):
        raise ArithmeticError(f"{formula}: integrand not negligible at the truncation point")


def _thm46(spec: ModelSpec, path: WienerPath, noise: NoiseKind | None, t_trunc: float) -> float:
    m, mt, cf, lam = spec.m, spec.m_tilde, spec.c_f, LAMBDA_1
    gap = m * lam - 4.0 * cf
    if not gap > 0:
        raise RegimeError("the additive radius needs m lambda_1 > 4 C_f")
    O = DOMAIN_MEASURE
    h = path.dt_grid
    span = _span(spec, "thm46-additive", t_trunc)
    amp, n = _aux_past(spec, path, noise, span)
    phi_sq = float(np.sum(spec.phi(spec.phi_mode) ** 2))
    X = amp**2 * phi_sq
    s0 = -n * h
    const = (
        2.0 * X[-1]
        + 8.0 * cf * O / (m * gap)
        + 4.0 * lam * cf**2 * O / gap**2
        + (4.0 + 2.0 * lam * cf * m + m * lam - 4.0 * cf + 2.0 * cf * O) / (m * gap)
    )
    g1 = X / (lam * cf) + 2.0 * cf * X / lam + 2.0 * mt**2 / m
    i1 = exp_weighted_integral(g1, s0, h, gap)
    i1_half = exp_weighted_integral(g1[n // 2 :], s0 + (n // 2) * h, h, gap)
    _check_tail(i1, i1_half, "thm46-additive")
    n1 = grid_steps(1.0, h)
    g2 = lam * cf * O + (cf * lam + lam / cf) * X[-(n1 + 1) :] + mt**2 / m
    i2 = exp_weighted_integral(g2, -1.0, h, gap)
    return const + (4.0 / m + 2.0 * lam * cf) * i1 + 2.0 * i2


def _thm58(spec: ModelSpec, path: WienerPath, noise: NoiseKind | None, t_trunc: float) -> float:
    m, cf, lam = spec.m, spec.c_f, LAMBDA_1
    g3 = m * lam - 3.0 * cf
    if not g3 > 0:
        raise RegimeError("the multiplicative radius needs m lambda_1 > 3 C_f")
    O = DOMAIN_MEASURE
    h = path.dt_grid
    span = _span(spec, "thm58-multiplicative", t_trunc)
    y, n = _aux_past(spec, path, noise, span)
    n1 = grid_steps(1.0, h)
    y_last = y[-(n1 + 1) :]  # s in [-1, 0]
    iy = _trapezoid(2.0 * y_last, h)
    y0 = y[-1]
    pre = np.exp(iy + 2.0 * y0) / m
    far = np.exp(-2.0 * y[: n - n1 + 1] + iy)  # s in [-span, -1]
    s0 = -n * h
    j1 = exp_weighted_integral(far, s0, h, g3)
    half = (n - n1) // 2
    _check_tail(j1, exp_weighted_integral(far[half:], s0 + half * h, h, g3), "thm58-multiplicative")
    # int_s^0 2 y(r) dr for s on [-1, 0], accumulated from the right end
    seg = 2.0 * y_last
    tail = np.concatenate([np.cumsum((0.5 * h * (seg[1:] + seg[:-1]))[::-1])[::-1], [0.0]])
    near = np.exp(-2.0 * y_last + 2.0 * y0 + tail)
    j2 = exp_weighted_integral(near, -1.0, h, g3)
    return float(pre * (1.0 + cf * O * j1) + (cf * O / m + 2.0 * cf**2 * O / m) * j2)


def _cor33(spec: ModelSpec, path: WienerPath, noise: NoiseKind, t_trunc: float) -> float:
    m, lam = spec.m, LAMBDA_1
    k = m * lam
    h = path.dt_grid
    lo, n = _history_nodes(path, _span(spec, "cor33", t_trunc))
    z = np.abs(noise.series(path, lo, path.zero_index))
    s = -h * np.arange(n, -1, -1)
    c = spec.young_constant()
    eps = spec.epsilon
    p, q = spec.p, spec.q
    g = (
        (2.0 / m) * spec.h_dual_norm_sq(s)
        + (2.0 * spec.kappa + eps * c * z ** (p / (p - q))) * DOMAIN_MEASURE
        + eps * c * z**spec.p1 * np.abs(spec.psi1(s)) ** spec.p1
    )
    full = exp_weighted_integral(g, s[0], h, k)
    _check_tail(full, exp_weighted_integral(g[n // 2 :], s[n // 2], h, k), "cor33")
    return 1.0 + full


def _span(spec: ModelSpec, formula_id: str, t_trunc: float) -> float:
    lam = LAMBDA_1
    if formula_id == "cor33":
        return t_trunc / (spec.m * lam)
    if formula_id == "thm46-additive":
        return max(t_trunc / (spec.m * lam - 4.0 * spec.c_f), 1.0)
    return 1.0 + t_trunc / (spec.m * lam - 3.0 * spec.c_f)


def radius_window(spec: ModelSpec, noise: NoiseKind | None, formula_id: str,
                  t_trunc: float = T_TRUNC) -> tuple[float, float]:
    """Path window ``(t_min, t_max)`` that ``absorbing_radius`` reads, rounded out to whole time units."""
    span = _span(spec, formula_id, t_trunc)
    if formula_id == "cor33":
        back, fwd = noise.reach() if noise is not None else (0.0, 0.0)
        return -float(np.ceil(span + back)), float(np.ceil(fwd))
    proc = conjugate.process_for(spec.with_(epsilon=1.0), noise, 1)
    back, fwd = conjugate.history_needed(proc)
    white_back, _ = conjugate.history_needed(conjugate.process_for(spec.with_(epsilon=1.0), None, 1))
    return -float(np.ceil(span + max(back, white_back))), float(np.ceil(fwd))


def absorbing_radius(spec: ModelSpec, path: WienerPath, noise: NoiseKind | None, formula_id: str,
                     t_trunc: float = T_TRUNC) -> RadiusReport:
    """Explicit absorbing radius ``R(omega)`` for the chosen formula.

    ``noise=None`` evaluates the white-noise radius directly.  For the
    additive and multiplicative formulas the white radius is always reported
    alongside for comparison.
    """
    if formula_id not in FORMULAS:
        raise ValueError(f"formula_id must be one of {FORMULAS}")
    if formula_id == "cor33":
        if spec.p <= 2 or spec.coupling != "general":
            raise RegimeError("cor33 applies to the p > 2 regime with the general coupling")
        if noise is None:
            raise RegimeError("cor33 needs a stationary noise")
        return RadiusReport(_cor33(spec, path, noise, t_trunc), formula_id, None, t_trunc)
    want = "additive" if formula_id == "thm46-additive" else "multiplicative"
    if spec.p != 2 or spec.coupling != want:
        raise RegimeError(f"{formula_id} applies to the p = 2 regime with the {want} coupling")
    fn = _thm46 if want == "additive" else _thm58
    white = fn(spec, path, None, t_trunc)
    value = white if noise is None else fn(spec, path, noise, t_trunc)
    return RadiusReport(float(value), formula_id, float(white), t_trunc)


def formula_for(spec: ModelSpec) -> str:
    if spec.coupling == "general":
        return "cor33"
    return "thm46-additive" if spec.coupling == "additive" else "thm58-multiplicative"


# -- absorption -------------------------------------------------------------------------


def ic_ensemble(n_modes: int, n_ics: int = 32, radius: float = 2.0, seed: int = 0) -> np.ndarray:
    """Half scaled basis modes ``+-radius e_k``, half seeded random fields of norm <= radius."""
    n_basis = n_ics // 2
    out = np.zeros((n_ics, n_modes))
    for i in range(n_basis):
        k = (i // 2) % n_modes
        out[i, k] = radius if i % 2 == 0 else -radius
    rng = Generator(Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, 2], dtype=np.uint64)))
    for i in range(n_basis, n_ics):
        v = rng.standard_normal(n_modes)
        out[i] = v / np.linalg.norm(v) * radius * rng.uniform(0.5, 1.0)
    return out


@dataclass(frozen=True)
class AbsorbReport:
    max_u0_sq: float
    bound: float
    slack: float
    n_ics: int
    pullback_time: float

    @property
    def passed(self) -> bool:
        return self.max_u0_sq <= self.bound * (1.0 + self.slack)


def _pull_cfg(t_back: float, dt: float, n_modes: int) -> solver.SolveConfig:
    return solver.SolveConfig(dt=dt, t_start=-t_back, t_end=0.0, n_modes=n_modes)


def absorbing_check(spec: ModelSpec, path: WienerPath, noise, radius: RadiusReport, ball_radius: float,
                    pullback_time: float, n_ics: int, slack: float = 0.05, dt: float = 1e-3,
                    n_modes: int = 16, seed: int = 0) -> AbsorbReport:
    """Evolve initial states of norm <= ``ball_radius`` from ``-pullback_time`` to 0."""
    if not pullback_time > 0:
        raise ValueError("pullback_time must be positive")
    ics = ic_ensemble(n_modes, n_ics, ball_radius, seed)
    end = solver.evolve(spec, path, noise, _pull_cfg(pullback_time, dt, n_modes), ics)
    max_sq = float(np.max(np.sum(end**2, axis=1)))
    return AbsorbReport(max_sq, radius.ball(), slack, n_ics, pullback_time)


# -- attractor clouds -------------------------------------------------------------------


@dataclass
class PointCloud:
    members: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.members = np.atleast_2d(np.asarray(self.members, dtype=np.float64))
        if self.members.shape[0] == 0:
            raise ValueError("empty point cloud")

    @property
    def n_modes(self) -> int:
        return self.members.shape[1]

    def fields(self) -> list[Field]:
        return [Field(m) for m in self.members]

    def diameter(self) -> float:
        return float(np.max(cdist(self.members, self.members))) if len(self.members) > 1 else 0.0


def pullback_attractor_sample(spec: ModelSpec, path: WienerPath | None, noise, pullback_times: Sequence[float],
                              ic_cloud, tol: float = 1e-6, dt: float = 1e-3) -> PointCloud:
    """Terminal states at t = 0 of the ensemble pulled back from ``-max(pullback_times)``."""
    times = list(pullback_times)
    if not times or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("pullback_times must be a nonempty increasing sequence")
    ics = np.atleast_2d(np.asarray(ic_cloud.members if isinstance(ic_cloud, PointCloud) else ic_cloud, dtype=np.float64))
    n_modes = ics.shape[1]
    previous = None
    disp = []
    for tb in times:
        end = solver.evolve(spec, path, noise, _pull_cfg(tb, dt, n_modes), ics)
        if previous is not None:
            disp.append(float(np.max(np.linalg.norm(end - previous, axis=1))))
        previous = end
    if disp and disp[-1] > tol:
        raise NonCauchyError(disp)
    label = "none" if noise is None else (noise if isinstance(noise, str) else f"{noise.variant}:{noise.delta!r}")
    meta = {
        "noise": label,
        "epsilon": spec.epsilon,
        "seed": None if path is None else path.seed,
        "pullback_time": times[-1],
        "displacements": disp,
    }
    return PointCloud(previous, meta)


def _members(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.members
    if isinstance(x, Field):
        return x.coeffs[None, :]
    arr = np.atleast_2d(np.asarray([f.coeffs if isinstance(f, Field) else f for f in x], dtype=np.float64))
    if arr.size == 0:
        raise ValueError("empty point cloud")
    return arr


def hausdorff_semidistance(a, b, norm: str = "l2") -> float:
    """``max_{x in a} min_{y in b} |x - y|`` by brute force over all pairs."""
    xa, xb = _members(a), _members(b)
    if xa.shape[0] == 0 or xb.shape[0] == 0:
        raise ValueError("empty point cloud")
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("clouds have different numbers of modes")
    if norm == "h1":
        w = np.sqrt(eigenvalues(xa.shape[1]))
        xa, xb = xa * w, xb * w
    elif norm != "l2":
        raise ValueError("norm must be 'l2' or 'h1'")
    return float(np.max(np.min(cdist(xa, xb), axis=1)))


@dataclass(frozen=True)
class SemiRow:
    delta: float
    epsilon: float
    dist_total: float
    dist_split1: float
    dist_split2: float


def semicontinuity_experiment(spec: ModelSpec, path: WienerPath, schedule: Sequence[tuple[float, float]],
                              variant: str = "ou", pullback_times: Sequence[float] = (2.0, 4.0),
                              ic_cloud=None, tol: float = 1e-6, dt: float = 1e-3,
                              n_modes: int = 32) -> list[SemiRow]:
    """Distances from ``A_{delta,eps}`` to the deterministic attractor A.

    ``dist_split1`` is ``dist(A_{delta,eps}, A_{0,eps})`` and ``dist_split2``
    is ``dist(A_{0,eps}, A)``; their sum bounds ``dist_total``.
    """
    if spec.p != 2:
        raise RegimeError("the semicontinuity experiment runs in the p = 2 regime")
    ics = ic_ensemble(n_modes) if ic_cloud is None else ic_cloud

    def sample(eps: float, noise):
        return pullback_attractor_sample(spec.with_(epsilon=eps), path, noise, pullback_times, ics, tol, dt)

    base = sample(0.0, None)
    white: dict[float, PointCloud] = {0.0: base}
    rows = []
    for d, e in schedule:
        d, e = float(d), float(e)
        if e not in white:
            white[e] = sample(e, solver.WHITE)
        approx = white[e] if d == 0.0 else (base if e == 0.0 else sample(e, NoiseKind(variant, d)))
        rows.append(
            SemiRow(d, e, hausdorff_semidistance(approx, base), hausdorff_semidistance(approx, white[e]),
                    hausdorff_semidistance(white[e], base))
        )
    return rows
