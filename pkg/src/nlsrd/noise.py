"""Stationary approximations of white noise driven by a Wiener path.

Three families are provided, each a linear functional of the shifted path
``theta_t omega``:

* ``ou``: the stationary Ornstein-Uhlenbeck (colored) noise
  ``-(1/delta^2) int_{-inf}^0 exp(s/delta) theta_t omega(s) ds``;
* ``mollifier``: derivative of a bump-mollified path,
  ``-(1/delta^2) int_0^delta phi'(s/delta) theta_t omega(s) ds``;
* ``diffq``: the forward difference quotient
  ``(omega(t + delta) - omega(t)) / delta``.

All integrals use the trapezoid rule at path resolution; improper integrals
are truncated after ``T_TRUNC`` time constants.  Every quantity has a scalar
entry point taking a time and a vectorised ``*_series`` entry point taking a
range of node indices, which is what the solvers consume.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import integrate, signal

from .wiener import GridError, WienerPath, grid_steps, growth_constant

__all__ = [
    "T_TRUNC",
    "VARIANTS",
    "NoiseKind",
    "NoiseLike",
    "HypothesisReport",
    "WindowError",
    "bump",
    "bump_derivative",
    "eval_noise",
    "noise_series",
    "integrate_noise",
    "integral_series",
    "stationary_x",
    "x_series",
    "white_x_series",
    "certify_hypotheses",
    "ou_recursion",
    "history_integral",
    "history_steps",
]

T_TRUNC = 40.0
VARIANTS = ("ou", "mollifier", "diffq")


class WindowError(GridError):
    """The support of a formula does not fit inside the path window."""


@lru_cache(maxsize=None)
def _bump_norm() -> float:
    val, _ = integrate.quad(
        lambda u: np.exp(-1.0 / (u * (1.0 - u))), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200
    )
    return 1.0 / val


def bump(u: np.ndarray) -> np.ndarray:
    """Normalised bump ``c exp(-1/(u(1-u)))`` on (0, 1), zero elsewhere."""
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    inside = (u > 0.0) & (u < 1.0)
    ui = u[inside]
    out[inside] = _bump_norm() * np.exp(-1.0 / (ui * (1.0 - ui)))
    return out


def bump_derivative(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    inside = (u > 0.0) & (u < 1.0)
    ui = u[inside]
    out[inside] = bump(ui) * (1.0 - 2.0 * ui) / (ui * (1.0 - ui)) ** 2
    return out


def _trapezoid_weights(n_intervals: int) -> np.ndarray:
    w = np.ones(n_intervals + 1)
    w[0] = w[-1] = 0.5
    return w


def _conv_valid(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """``out[m] = sum_j kernel[j] * a[m + len(kernel) - 1 - j]``."""
    n_out = len(a) - len(kernel) + 1
    if n_out <= 0:
        raise WindowError("window too short for the convolution kernel")
    if n_out * len(kernel) <= 4_000_000:
        return np.convolve(a, kernel, mode="valid")
    return signal.fftconvolve(a, kernel, mode="valid")


def history_integral(values: np.ndarray, h: float, rate: float, n_hist: int) -> tuple[np.ndarray, float]:
    """Trapezoid values of ``int_{-n_hist h}^0 exp(rate s) g(t_i + s) ds``.

    ``values`` holds g on consecutive nodes; the result covers the nodes from
    index ``n_hist`` onward.  Also returns the kernel mass (the same
    quadrature applied to g = 1) so callers can subtract anchored terms.
    """
    kernel = _trapezoid_weights(n_hist) * np.exp(-rate * h * np.arange(n_hist + 1)) * h
    return _conv_valid(values, kernel), float(kernel.sum())


class NoiseLike(Protocol):
    """What the hypothesis certifier needs from a noise family."""

    delta: float

    @property
    def label(self) -> str: ...

    def reach(self) -> tuple[float, float]: ...

    def series(self, path: WienerPath, i_lo: int, i_hi: int) -> np.ndarray: ...


@dataclass(frozen=True)
class NoiseKind:
    """One of the built-in families at smoothing scale ``delta``."""

    variant: str
    delta: float
    bump_c: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown noise variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "bump_c", _bump_norm() if self.variant == "mollifier" else 1.0)

    @property
    def label(self) -> str:
        return self.variant

    def reach(self) -> tuple[float, float]:
        """Time extent needed before and after the evaluation point."""
        if self.variant == "ou":
            return T_TRUNC * self.delta, 0.0
        return 0.0, self.delta

    def steps(self, dt_grid: float) -> int:
        try:
            return grid_steps(self.delta, dt_grid)
        except GridError as exc:
            raise GridError(f"delta={self.delta} is not aligned with dt_grid={dt_grid}") from exc

    def series(self, path: WienerPath, i_lo: int, i_hi: int) -> np.ndarray:
        return noise_series(self, path, i_lo, i_hi)


def noise_series(kind: NoiseKind, path: WienerPath, i_lo: int, i_hi: int) -> np.ndarray:
    """zeta_delta(theta_t omega) at the nodes ``i_lo..i_hi`` (inclusive)."""
    h = path.dt_grid
    k = kind.steps(h)
    w = path.values
    d = kind.delta
    if kind.variant == "ou":
        n_hist = int(round(T_TRUNC)) * k
        if i_lo - n_hist < 0 or i_hi >= path.n_nodes:
            raise WindowError("OU history does not fit in the path window")
        conv, mass = history_integral(w[i_lo - n_hist : i_hi + 1], h, 1.0 / d, n_hist)
        return -(conv - w[i_lo : i_hi + 1] * mass) / d**2
    if i_lo < 0 or i_hi + k >= path.n_nodes:
        raise WindowError("forward support does not fit in the path window")
    if kind.variant == "diffq":
        return (w[i_lo + k : i_hi + k + 1] - w[i_lo : i_hi + 1]) / d
    kernel = _trapezoid_weights(k) * bump_derivative(np.arange(k + 1) / k) * h
    conv = _conv_valid(w[i_lo : i_hi + k + 1], kernel[::-1])
    return -(conv - w[i_lo : i_hi + 1] * kernel.sum()) / d**2


def _interp_scalar(series_at: Callable[[int, int], np.ndarray], path: WienerPath, t: float) -> float:
    x = t / path.dt_grid + path.zero_index
    n = int(round(x))
    if abs(x - n) <= 1e-9 * max(1.0, abs(x)):
        return float(series_at(n, n)[0])
    i = int(np.floor(x))
    pair = series_at(i, i + 1)
    w = x - i
    return float((1.0 - w) * pair[0] + w * pair[1])


def eval_noise(kind: NoiseKind, path: WienerPath, t: float) -> float:
    """zeta_delta(theta_t omega); linear interpolation between grid nodes."""
    return _interp_scalar(lambda a, b: noise_series(kind, path, a, b), path, t)


def integral_series(kind: NoiseLike, path: WienerPath, n_steps: int) -> np.ndarray:
    """``int_0^t zeta`` for ``t = j dt_grid``, ``j = -n_steps..n_steps``."""
    i0 = path.zero_index
    z = kind.series(path, i0 - n_steps, i0 + n_steps)
    h = path.dt_grid
    fwd = integrate.cumulative_trapezoid(z[n_steps:], dx=h, initial=0.0)
    bwd = -integrate.cumulative_trapezoid(z[n_steps::-1], dx=h, initial=0.0)
    return np.concatenate([bwd[::-1], fwd[1:]])


def integrate_noise(kind: NoiseKind, path: WienerPath, t: float) -> float:
    """``int_0^t zeta_delta(theta_r omega) dr`` by the trapezoid rule."""
    n = grid_steps(t, path.dt_grid)
    if n == 0:
        return 0.0
    i0 = path.zero_index
    lo, hi = (i0, i0 + n) if n > 0 else (i0 + n, i0)
    z = kind.series(path, lo, hi)
    val = path.dt_grid * (z.sum() - 0.5 * (z[0] + z[-1]))
    return float(val if n > 0 else -val)


def x_series(kind: NoiseLike | None, path: WienerPath, i_lo: int, i_hi: int, rate: float = 1.0) -> np.ndarray:
    """Stationary solution of ``x' = -rate x + zeta`` at nodes ``i_lo..i_hi``.

    ``kind=None`` gives the white-noise limit
    ``-rate int_{-inf}^0 exp(rate r) theta_t omega(r) dr``, which equals the
    stochastic integral ``int_{-inf}^t exp(-rate (t - s)) d omega(s)``.
    For ``rate = 1`` these are x_delta and x_0.
    """
    h = path.dt_grid
    n_hist = history_steps(rate, h)
    if kind is None:
        return rate * white_x_series(path, i_lo, i_hi, rate, n_hist)
    if i_lo - n_hist < 0:
        raise WindowError("history of the stationary variable does not fit in the path window")
    z = kind.series(path, i_lo - n_hist, i_hi)
    conv, _ = history_integral(z, h, rate, n_hist)
    return conv


def white_x_series(path: WienerPath, i_lo: int, i_hi: int, rate: float, n_hist: int | None = None) -> np.ndarray:
    """``-int_{-inf}^0 exp(rate r) theta_t omega(r) dr`` at nodes ``i_lo..i_hi``."""
    h = path.dt_grid
    if n_hist is None:
        n_hist = history_steps(rate, h)
    if i_lo - n_hist < 0 or i_hi >= path.n_nodes:
        raise WindowError("history of the stationary variable does not fit in the path window")
    w = path.values
    conv, mass = history_integral(w[i_lo - n_hist : i_hi + 1], h, rate, n_hist)
    return -(conv - w[i_lo : i_hi + 1] * mass)


def history_steps(rate: float, h: float) -> int:
    """Grid steps covering ``T_TRUNC`` time constants of decay at ``rate``."""
    return int(np.ceil(T_TRUNC / (rate * h) - 1e-9))


def stationary_x(kind: NoiseKind | None, path: WienerPath, t: float) -> float:
    """x_delta(theta_t omega), or x_0(theta_t omega) when ``kind`` is None."""
    return _interp_scalar(lambda a, b: x_series(kind, path, a, b), path, t)


def ou_recursion(path: WienerPath, delta: float, i_lo: int, i_hi: int, xi0: float) -> np.ndarray:
    """Exact Langevin recursion for the OU noise along the interpolated path.

    Cross-check only: starting from ``xi0`` at node ``i_lo`` it propagates
    ``xi' = -xi/delta + omega'/delta`` exactly for a piecewise-linear omega.
    """
    h = path.dt_grid
    decay = np.exp(-h / delta)
    dw = np.diff(path.values[i_lo : i_hi + 1])
    out = np.empty(i_hi - i_lo + 1)
    out[0] = xi0
    gain = -np.expm1(-h / delta) / h
    for n, inc in enumerate(dw):
        out[n + 1] = decay * out[n] + gain * inc
    return out


@dataclass
class HypothesisReport:
    """Finite-window evidence for the convergence hypotheses of a noise family."""

    kind: str
    T: float
    delta: list[float]
    k_delta: list[float]
    eq19_gap: list[float]
    eq112_gap: list[float]
    slack: float
    pass_eq19: bool
    pass_eq112: bool

    @property
    def passed(self) -> bool:
        return self.pass_eq19 and self.pass_eq112

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _monotone(gaps: Sequence[float], slack: float) -> bool:
    return all(b <= slack * a for a, b in zip(gaps, gaps[1:]))


def certify_hypotheses(
    kind: str | Callable[[float], NoiseLike],
    path: WienerPath,
    T: float,
    deltas: Sequence[float],
    slack: float = 1.1,
) -> HypothesisReport:
    """Estimate K_delta and the two convergence gaps on ``[-T, T]``.

    ``kind`` is either a built-in variant name or a factory mapping delta to
    any object implementing :class:`NoiseLike`.
    """
    if len(deltas) == 0:
        raise ValueError("empty delta sequence")
    factory = (lambda d: NoiseKind(kind, d)) if isinstance(kind, str) else kind
    h = path.dt_grid
    n = grid_steps(T, h)
    i0 = path.zero_index
    times = np.arange(-n, n + 1) * h
    omega = path.values[i0 - n : i0 + n + 1]
    c_omega = growth_constant(path).c_omega
    x0 = x_series(None, path, i0 - n, i0 + n)
    k_est, g19, g112 = [], [], []
    label = kind if isinstance(kind, str) else None
    for d in deltas:
        nk = factory(d)
        label = label or nk.label
        z = nk.series(path, i0 - n, i0 + n)
        if c_omega > 0:
            k_est.append(float(np.max(np.abs(z) / (c_omega * (np.abs(times) + 1.0)))))
        else:
            k_est.append(0.0)
        g19.append(float(np.max(np.abs(integral_series(nk, path, n) - omega))))
        g112.append(float(np.max(np.abs(x_series(nk, path, i0 - n, i0 + n) - x0))))
    return HypothesisReport(
        kind=str(label),
        T=float(T),
        delta=[float(d) for d in deltas],
        k_delta=k_est,
        eq19_gap=g19,
        eq112_gap=g112,
        slack=slack,
        pass_eq19=_monotone(g19, slack),
        pass_eq112=_monotone(g112, slack),
    )
