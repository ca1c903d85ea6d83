"""Sine-spectral fields on (0, 1) with homogeneous Dirichlet conditions.

A field is a vector of coefficients against ``e_k(x) = sqrt(2) sin(k pi x)``,
``k = 1..N``.  Samples live on the interior nodes ``x_j = j / (n_grid + 1)``;
with the zero boundary values included, the trapezoid rule on this grid is
exactly the type-I discrete sine transform, so sampling followed by
projection is an exact inverse pair whenever ``n_grid >= N``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .model import ModelSpec

__all__ = [
    "Field",
    "Grid",
    "eigenvalues",
    "to_samples",
    "from_samples",
    "nonlocal_value",
    "lp_norm",
    "dump_field",
]


def eigenvalues(n_modes: int) -> np.ndarray:
    """Dirichlet Laplacian eigenvalues ``lambda_k = k^2 pi^2``."""
    k = np.arange(1, n_modes + 1, dtype=np.float64)
    return (k * np.pi) ** 2


@dataclass(frozen=True, eq=False)
class Field:
    """Sine-series coefficients of a spatial state."""

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("a field needs a non-empty 1-D coefficient vector")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, n_modes: int) -> "Field":
        return cls(np.zeros(n_modes))

    @classmethod
    def mode(cls, k: int, n_modes: int, amplitude: float = 1.0) -> "Field":
        c = np.zeros(n_modes)
        c[k - 1] = amplitude
        return cls(c)

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    def l2(self) -> float:
        return float(np.sqrt(np.dot(self.coeffs, self.coeffs)))

    def h1(self) -> float:
        return float(np.sqrt(np.dot(eigenvalues(self.n_modes) * self.coeffs, self.coeffs)))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.coeffs + other.coeffs)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "Field":
        return Field(self.coeffs * s)

    __rmul__ = __mul__


class Grid:
    """Sampling and projection matrices for ``n_modes`` modes on ``n_grid`` nodes."""

    def __init__(self, n_modes: int, n_grid: int | None = None):
        n_grid = 4 * n_modes if n_grid is None else n_grid
        if n_grid < 2 * n_modes:
            raise ValueError(f"n_grid={n_grid} is below the anti-aliasing floor 2*n_modes={2 * n_modes}")
        self.n_modes = n_modes
        self.n_grid = n_grid
        self.h = 1.0 / (n_grid + 1)
        self.x = np.arange(1, n_grid + 1) * self.h
        k = np.arange(1, n_modes + 1)
        self.basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(self.x, k))  # (n_grid, n_modes)
        self.project = self.h * self.basis.T  # (n_modes, n_grid)
        self.lam = eigenvalues(n_modes)

    def samples(self, coeffs: np.ndarray) -> np.ndarray:
        """Samples of one field (1-D) or a batch of fields (rows)."""
        return coeffs @ self.basis.T

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return values @ self.project.T

    def apply(self, fn, coeffs: np.ndarray) -> np.ndarray:
        """Pseudo-spectral Galerkin projection of ``fn(u(x))``."""
        return self.coefficients(fn(self.samples(coeffs)))


@lru_cache(maxsize=32)
def grid_for(n_modes: int, n_grid: int | None = None) -> Grid:
    return Grid(n_modes, n_grid)


def to_samples(field: Field, n_grid: int) -> np.ndarray:
    return grid_for(field.n_modes, n_grid).samples(field.coeffs)


def from_samples(values: np.ndarray, n_modes: int) -> Field:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("expected a 1-D sample vector")
    return Field(grid_for(n_modes, values.size).coefficients(values))


def nonlocal_value(spec: "ModelSpec", field: Field) -> float:
    """``a(l(u))`` for the model's weight and diffusion profile."""
    return float(spec.a(spec.ell(field.coeffs)))


def lp_norm(field: Field, p: float, n_grid: int | None = None) -> float:
    """``(int_0^1 |u|^p)^(1/p)`` by the trapezoid rule, zero boundary values included."""
    if p < 1:
        raise ValueError("p must be at least 1")
    g = grid_for(field.n_modes, n_grid)
    u = g.samples(field.coeffs)
    return float((g.h * np.sum(np.abs(u) ** p)) ** (1.0 / p))


def dump_field(field: Field, target: str | Path, samples_target: str | Path | None = None,
               n_grid: int | None = None, header: str | None = None) -> None:
    """Write ``k,coeff`` and optionally ``x,u`` CSV files."""
    with open(target, "w", newline="") as fh:
        if header is not None:
            fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "coeff"])
        for k, c in enumerate(field.coeffs, start=1):
            w.writerow([k, f"{c:.17g}"])
    if samples_target is not None:
        g = grid_for(field.n_modes, n_grid)
        u = g.samples(field.coeffs)
        with open(samples_target, "w", newline="") as fh:
            if header is not None:
                fh.write(header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "u"])
            for x, v in zip(np.concatenate([[0.0], g.x, [1.0]]), np.concatenate([[0.0], u, [0.0]])):
                w.writerow([f"{x:.17g}", f"{v:.17g}"])
