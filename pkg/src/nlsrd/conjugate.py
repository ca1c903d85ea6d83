"""Stationary auxiliary processes and the changes of variables they induce.

Additive coupling ``g = phi``: ``x*(t) = s(t) phi`` where the scalar ``s``
is the stationary solution of ``s' = -rate s + eps zeta(t)`` (or its white
limit ``ds = -rate s dt + eps d omega``), and the unknown ``p = u - x*``
solves a random PDE without noise.

Multiplicative coupling ``g = u``: ``y`` is the stationary solution of
``y' = -y + eps zeta(t)`` (or ``dy = -y dt + eps d omega``) and the unknown
``q = exp(-y) u`` again solves a random PDE.

White limits are evaluated through integration by parts, so no stochastic
integral is ever discretised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .galerkin import Field
from .model import ModelSpec
from .noise import T_TRUNC, NoiseKind, x_series
from .wiener import WienerPath, grid_steps

__all__ = [
    "AuxiliaryProcess",
    "LimitRow",
    "process_for",
    "aux_series",
    "eval_aux",
    "aux_on_times",
    "history_needed",
    "limit_check",
    "to_transformed",
    "from_transformed",
    "to_transformed_batch",
    "from_transformed_batch",
]

FLAVORS = ("additive", "multiplicative")


@dataclass(frozen=True, eq=False)
class AuxiliaryProcess:
    flavor: str
    noise: NoiseKind | None
    epsilon: float
    phi: np.ndarray | None = None
    rate: float = 1.0

    def __post_init__(self) -> None:
        if self.flavor not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.flavor == "additive" and self.phi is None:
            raise ValueError("the additive process needs phi")
        if self.flavor == "multiplicative" and self.rate != 1.0:
            raise ValueError("the multiplicative process decays at rate 1")

    @property
    def phi_norm(self) -> float:
        return float(np.linalg.norm(self.phi)) if self.phi is not None else 1.0


def process_for(spec: ModelSpec, noise: NoiseKind | None, n_modes: int) -> AuxiliaryProcess:
    if spec.coupling == "additive":
        return AuxiliaryProcess("additive", noise, spec.epsilon, spec.phi(n_modes), spec.eta_damp)
    if spec.coupling == "multiplicative":
        return AuxiliaryProcess("multiplicative", noise, spec.epsilon)
    raise ValueError("conjugation is defined for additive and multiplicative couplings only")


def history_needed(proc: AuxiliaryProcess) -> tuple[float, float]:
    """Path time needed before and after an evaluation point."""
    back, fwd = (0.0, 0.0) if proc.noise is None else proc.noise.reach()
    return T_TRUNC / proc.rate + back, fwd


def aux_series(proc: AuxiliaryProcess, path: WienerPath, i_lo: int, i_hi: int) -> np.ndarray:
    """Scalar amplitude (``s`` or ``y``) at path nodes ``i_lo..i_hi``."""
    if proc.epsilon == 0.0:
        return np.zeros(i_hi - i_lo + 1)
    return proc.epsilon * x_series(proc.noise, path, i_lo, i_hi, rate=proc.rate)


def eval_aux(proc: AuxiliaryProcess, path: WienerPath, t: float) -> Field | float:
    """``x*(theta_t omega)`` as a Field, or ``y(theta_t omega)`` as a float."""
    i = path.index(t)
    val = float(aux_series(proc, path, i, i)[0])
    if proc.flavor == "additive":
        return Field(val * proc.phi)
    return val


def aux_on_times(proc: AuxiliaryProcess, path: WienerPath, times: np.ndarray) -> np.ndarray:
    """Scalar amplitude at grid-aligned ``times`` (increasing, uniform)."""
    idx = np.array([path.index(t) for t in (times[0], times[-1])])
    full = aux_series(proc, path, idx[0], idx[1])
    if len(times) == 1:
        return full[:1]
    stride = grid_steps(times[1] - times[0], path.dt_grid)
    return full[::stride]


def to_transformed(u: Field, aux_value: Field | float) -> Field:
    """``p = u - x*`` (Field aux) or ``q = exp(-y) u`` (scalar aux)."""
    if isinstance(aux_value, Field):
        return Field(u.coeffs - aux_value.coeffs)
    return Field(np.exp(-aux_value) * u.coeffs)


def from_transformed(v: Field, aux_value: Field | float) -> Field:
    if isinstance(aux_value, Field):
        return Field(v.coeffs + aux_value.coeffs)
    return Field(np.exp(aux_value) * v.coeffs)


def to_transformed_batch(proc: AuxiliaryProcess, states: np.ndarray, aux: np.ndarray) -> np.ndarray:
    """Transform a time series of states (leading axis = time)."""
    shape = (-1,) + (1,) * (states.ndim - 1)
    if proc.flavor == "additive":
        return states - aux.reshape(shape) * proc.phi
    return np.exp(-aux).reshape(shape) * states


def from_transformed_batch(proc: AuxiliaryProcess, states: np.ndarray, aux: np.ndarray) -> np.ndarray:
    shape = (-1,) + (1,) * (states.ndim - 1)
    if proc.flavor == "additive":
        return states + aux.reshape(shape) * proc.phi
    return np.exp(aux).reshape(shape) * states


@dataclass(frozen=True)
class LimitRow:
    delta: float
    epsilon: float
    gap: float
    sup_white: float


def limit_check(procs: Sequence[AuxiliaryProcess], path: WienerPath, T: float) -> list[LimitRow]:
    """Distance between each approximate process and its white limit.

    The additive gap is taken over ``-T <= t <= 0`` and the multiplicative gap
    over ``|t| <= T``; the norm of ``x*`` is ``|s| |phi|``.
    """
    if len(procs) == 0:
        raise ValueError("empty process list")
    n = grid_steps(T, path.dt_grid)
    i0 = path.zero_index
    rows = []
    for proc in procs:
        if proc.noise is None:
            raise ValueError("limit_check compares approximate processes with their white limit")
        lo, hi = (i0 - n, i0) if proc.flavor == "additive" else (i0 - n, i0 + n)
        white = AuxiliaryProcess(proc.flavor, None, proc.epsilon, proc.phi, proc.rate)
        a0 = aux_series(white, path, lo, hi)
        ad = aux_series(proc, path, lo, hi)
        scale = proc.phi_norm if proc.flavor == "additive" else 1.0
        rows.append(
            LimitRow(proc.noise.delta, proc.epsilon, float(np.max(np.abs(ad - a0))) * scale,
                     float(np.max(np.abs(a0))) * scale)
        )
    return rows
