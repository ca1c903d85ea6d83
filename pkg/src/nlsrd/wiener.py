"""Seeded Brownian sample paths on a uniform grid anchored at t = 0.

A path is stored as the grid values together with the index of the node
sitting at t = 0, so every window, shift and restriction stays exactly
representable.  Increments are drawn from a Philox4x64 counter-based
generator: the increment of node ``+i`` (resp. ``-i``) is the ``i``-th raw
64-bit word of the stream keyed by ``(seed, 0)`` (resp. ``(seed, 1)``),
mapped to a standard normal through the inverse CDF.  Each node therefore
owns one counter slot, and a longer window extends a shorter one without
changing the shared values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

__all__ = [
    "GridError",
    "WienerPath",
    "GrowthReport",
    "sample_path",
    "zero_path",
    "linear_path",
    "from_function",
    "shift",
    "eval",
    "growth_constant",
    "dump_csv",
    "grid_steps",
]

_ALIGN_TOL = 1e-9


class GridError(ValueError):
    """A time or window that is not representable on the path grid."""


def grid_steps(t: float, dt_grid: float) -> int:
    """Return ``t / dt_grid`` as an integer, or raise if it is not one."""
    ratio = t / dt_grid
    n = int(round(ratio))
    if abs(ratio - n) > _ALIGN_TOL * max(1.0, abs(ratio)):
        raise GridError(f"{t!r} is not an integer multiple of dt_grid={dt_grid!r}")
    return n


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Values of omega on the nodes ``(i - zero_index) * dt_grid``.

    ``seed`` is ``None`` for synthetic (deterministic) paths.
    """

    seed: int | None
    dt_grid: float
    values: np.ndarray
    zero_index: int

    def __post_init__(self) -> None:
        if not self.dt_grid > 0:
            raise GridError("dt_grid must be positive")
        if not 0 <= self.zero_index < len(self.values):
            raise GridError("t = 0 must lie inside the window")
        if self.values[self.zero_index] != 0.0:
            raise ValueError("a Wiener path must vanish at t = 0")
        self.values.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.values)

    @property
    def t_min(self) -> float:
        return -self.zero_index * self.dt_grid

    @property
    def t_max(self) -> float:
        return (self.n_nodes - 1 - self.zero_index) * self.dt_grid

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_nodes) - self.zero_index) * self.dt_grid

    def index(self, t: float) -> int:
        """Array index of the grid node at time ``t``."""
        i = grid_steps(t, self.dt_grid) + self.zero_index
        if not 0 <= i < self.n_nodes:
            raise GridError(f"t={t!r} lies outside [{self.t_min}, {self.t_max}]")
        return i

    def covers(self, t_lo: float, t_hi: float) -> bool:
        eps = _ALIGN_TOL * self.dt_grid
        return self.t_min - eps <= t_lo and t_hi <= self.t_max + eps


@dataclass(frozen=True)
class GrowthReport:
    c_omega: float
    worst_t: float


def _normals(seed: int, stream: int, n: int) -> np.ndarray:
    if n == 0:
        return np.empty(0)
    raw = Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, stream], dtype=np.uint64)).random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def _window(t_min: float, t_max: float, dt_grid: float) -> tuple[int, int]:
    if not dt_grid > 0:
        raise GridError("dt_grid must be positive")
    if t_min > t_max:
        raise GridError("t_min must not exceed t_max")
    if t_min > 0 or t_max < 0:
        raise GridError("the window must contain t = 0")
    return -grid_steps(t_min, dt_grid), grid_steps(t_max, dt_grid)


def sample_path(seed: int, t_min: float, t_max: float, dt_grid: float) -> WienerPath:
    """Brownian path on ``[t_min, t_max]`` built outward from ``omega(0) = 0``."""
    n_neg, n_pos = _window(t_min, t_max, dt_grid)
    scale = np.sqrt(dt_grid)
    fwd = np.cumsum(_normals(seed, 0, n_pos) * scale)
    bwd = np.cumsum(_normals(seed, 1, n_neg) * scale)
    values = np.concatenate([bwd[::-1], [0.0], fwd])
    return WienerPath(int(seed), float(dt_grid), values, n_neg)


def from_function(fn, t_min: float, t_max: float, dt_grid: float) -> WienerPath:
    """Synthetic path from a callable with ``fn(0) == 0``."""
    n_neg, n_pos = _window(t_min, t_max, dt_grid)
    t = np.arange(-n_neg, n_pos + 1) * dt_grid
    values = np.asarray(fn(t), dtype=np.float64) * np.ones_like(t)
    values[n_neg] = 0.0
    return WienerPath(None, float(dt_grid), values, n_neg)


def zero_path(t_min: float, t_max: float, dt_grid: float) -> WienerPath:
    return from_function(lambda t: np.zeros_like(t), t_min, t_max, dt_grid)


def linear_path(c: float, t_min: float, t_max: float, dt_grid: float) -> WienerPath:
    """The path ``omega(t) = c * t``."""
    return from_function(lambda t: c * t, t_min, t_max, dt_grid)


def shift(path: WienerPath, t: float) -> WienerPath:
    """The shifted path ``s -> omega(t + s) - omega(t)`` on the whole window."""
    i = path.index(t)
    values = path.values - path.values[i]
    return WienerPath(path.seed, path.dt_grid, values, i)


def eval(path: WienerPath, t: float) -> float:  # noqa: A001 - mirrors the domain name
    """omega(t), linearly interpolated between grid nodes."""
    x = t / path.dt_grid + path.zero_index
    n = int(round(x))
    if abs(x - n) <= _ALIGN_TOL * max(1.0, abs(x)):
        if not 0 <= n < path.n_nodes:
            raise GridError(f"t={t!r} lies outside the path window")
        return float(path.values[n])
    i = int(np.floor(x))
    if i < 0 or i + 1 >= path.n_nodes:
        raise GridError(f"t={t!r} lies outside the path window")
    w = x - i
    return float((1.0 - w) * path.values[i] + w * path.values[i + 1])


def growth_constant(path: WienerPath) -> GrowthReport:
    """Grid supremum of ``|omega(s)| / (|s| + 1)``.

    The quotient is rounded, so the returned constant is raised by a few ulps
    when needed to make ``|omega(s)| <= c (|s| + 1)`` hold exactly at every node.
    """
    scale = np.abs(path.times) + 1.0
    mag = np.abs(path.values)
    ratio = mag / scale
    k = int(np.argmax(ratio))
    c = float(ratio[k])
    while np.any(mag > c * scale):
        c = float(np.nextafter(c, np.inf))
    return GrowthReport(c, float(path.times[k]))


def dump_csv(path: WienerPath, target: str | Path, header: str | None = None) -> None:
    with open(target, "w", newline="") as fh:
        if header is not None:
            fh.write(header + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "omega"])
        for t, w in zip(path.times, path.values):
            writer.writerow([f"{t:.17g}", f"{w:.17g}"])
