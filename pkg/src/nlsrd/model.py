"""Problem data of the nonlocal reaction-diffusion equation

    du/dt = a(l(u)) u_xx + f(u) + h(t) + eps g(t, u) zeta(t)   on (0, 1),

together with sampled checks of the structural assumptions.

Two reaction regimes are supported and treated as alternatives:

* ``p = 2``: f globally Lipschitz (constant ``eta``) with linear growth
  ``|f(s)| <= C_f (1 + |s|)``;
* ``p > 2``: f only locally Lipschitz, with the polynomial sign condition
  ``-kappa - alpha1 |s|^p <= f(s) s <= kappa - alpha2 |s|^p``.

Default constant ``c_const`` for the general coupling
------------------------------------------------------
With ``|g(t, s)| <= d1 |s|^(q-1) + psi1(t)`` the noise contribution to the
energy balance is bounded pointwise by Young's inequality,
``max_s (B s^r - A s^p) = (p - r)/p * B^(p/(p-r)) * (r/(p A))^(r/(p-r))``.
Taking ``B = 2 eps |zeta| d1`` with ``r = q`` and ``B = 2 eps |zeta| psi1``
with ``r = 1``, and ``A = alpha2`` (or ``alpha2/2`` when a nonzero psi1 has
to share the absorption), and using ``eps^k <= eps`` for ``eps <= 1``, gives
``c = max(c1, c2)`` with

    c1 = (p-q)/p * (2 d1)^(p/(p-q)) * (q/(p A))^(q/(p-q))
    c2 = (p-1)/p * 2^p1 * (1/(p A))^(1/(p-1)),    p1 = p/(p-1).

For ``g = d1 s`` (q = 2), p = 4 this is ``c = d1^2 / alpha2``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "ModelSpec",
    "Condition",
    "Diagnostics",
    "default_additive",
    "default_multiplicative",
    "default_general",
    "load_spec",
    "dump_spec",
    "validate",
    "alpha_bound",
    "LAMBDA_1",
]

LAMBDA_1 = float(np.pi**2)

A_PROFILES = ("rational", "constant")
ELL_PROFILES = ("constant", "mode1")
F_PROFILES = ("damped-sine", "cubic", "linear")
COUPLINGS = ("additive", "multiplicative", "general")
TIME_PROFILES = ("zero", "constant", "decaying")


class ConfigError(ValueError):
    """Malformed or inconsistent model configuration."""


def _time_profile(kind: str, value: float, rate: float, t):
    t = np.asarray(t, dtype=np.float64)
    if kind == "zero":
        return np.zeros_like(t)
    if kind == "constant":
        return np.full_like(t, value)
    return value * np.exp(-rate * t)


@lru_cache(maxsize=64)
def _ell_coeffs(profile: str, scale: float, n_modes: int) -> np.ndarray:
    if profile == "mode1":
        c = np.zeros(n_modes)
        c[0] = scale
        return c
    out = np.empty(n_modes)
    for k in range(1, n_modes + 1):
        out[k - 1], _ = integrate.quad(
            lambda x: scale * np.sqrt(2.0), 0.0, 1.0, weight="sin", wvar=k * np.pi, epsabs=1e-15
        )
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModelSpec:
    """All problem data.  Units are dimensionless; times in the path's units."""

    # diffusion coefficient a, with m <= a <= m_tilde
    m: float = 1.0
    m_tilde: float = 2.0
    a_profile: str = "rational"
    # weight of the nonlocal functional l(u) = int ell u
    ell_profile: str = "constant"
    ell_scale: float = 1.0
    # reaction
    f_profile: str = "damped-sine"
    f_rate: float = 1.0
    eta: float = 1.5
    c_f: float = 1.5
    kappa: float = 0.0
    alpha1: float = 1.5
    alpha2: float = 0.5
    p: float = 2.0
    # noise coupling
    coupling: str = "additive"
    phi_mode: int = 1
    phi_amplitude: float = 1.0
    d1: float = 1.0
    d2: float = 1.0
    q: float = 2.0
    psi1_profile: str = "zero"
    psi1_value: float = 0.0
    psi1_rate: float = 0.0
    psi2_profile: str = "zero"
    psi2_value: float = 0.0
    psi2_rate: float = 0.0
    # deterministic forcing h(t) = h_value * profile(t) * e_{h_mode}
    h_profile: str = "zero"
    h_value: float = 0.0
    h_mode: int = 1
    h_rate: float = 0.0
    # noise amplitude, damping rate of the additive auxiliary process,
    # and the Young constant of the energy estimate (None: derived)
    epsilon: float = 0.1
    eta_damp: float = 1.0
    c_const: float | None = None

    def __post_init__(self) -> None:
        for name, allowed in (
            ("a_profile", A_PROFILES),
            ("ell_profile", ELL_PROFILES),
            ("f_profile", F_PROFILES),
            ("coupling", COUPLINGS),
            ("psi1_profile", TIME_PROFILES),
            ("psi2_profile", TIME_PROFILES),
            ("h_profile", TIME_PROFILES),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r}; expected one of {allowed}")
        if not 0 < self.m <= self.m_tilde:
            raise ConfigError("need 0 < m <= m_tilde")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if not self.eta_damp > 0:
            raise ConfigError("eta_damp must be positive")
        if self.p < 2:
            raise ConfigError("p must be at least 2")
        if self.phi_mode < 1 or self.h_mode < 1:
            raise ConfigError("mode indices start at 1")

    # -- coefficient functions -------------------------------------------------
    def a(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.a_profile == "constant":
            return np.full_like(s, self.m)
        return self.m + (self.m_tilde - self.m) / (1.0 + s * s)

    def a_lipschitz_analytic(self) -> float:
        if self.a_profile == "constant":
            return 0.0
        return (self.m_tilde - self.m) * 3.0 * np.sqrt(3.0) / 8.0

    def ell_coeffs(self, n_modes: int) -> np.ndarray:
        return _ell_coeffs(self.ell_profile, float(self.ell_scale), n_modes)

    def ell(self, coeffs: np.ndarray):
        """l(u) for one coefficient vector or a batch (rows)."""
        return coeffs @ self.ell_coeffs(coeffs.shape[-1])

    @property
    def ell_norm(self) -> float:
        return abs(self.ell_scale)

    def f(self, s):
        if self.f_profile == "damped-sine":
            return -s + 0.5 * np.sin(s)
        if self.f_profile == "cubic":
            return s - s**3
        return -self.f_rate * s

    def g(self, t, s):
        """General coupling ``d1 |s|^(q-2) s + psi1(t)``."""
        core = self.d1 * s if self.q == 2 else self.d1 * np.abs(s) ** (self.q - 2) * s
        return core + self.psi1(t)

    def dg_ds(self, t, s):
        return self.d1 * (self.q - 1) * np.abs(s) ** (self.q - 2) + 0.0 * np.asarray(t)

    def psi1(self, t):
        return _time_profile(self.psi1_profile, self.psi1_value, self.psi1_rate, t)

    def psi2(self, t):
        return _time_profile(self.psi2_profile, self.psi2_value, self.psi2_rate, t)

    def phi(self, n_modes: int) -> np.ndarray:
        c = np.zeros(n_modes)
        if self.phi_mode <= n_modes:
            c[self.phi_mode - 1] = self.phi_amplitude
        return c

    def h(self, t: float, n_modes: int) -> np.ndarray:
        c = np.zeros(n_modes)
        if self.h_profile != "zero" and self.h_mode <= n_modes:
            c[self.h_mode - 1] = float(_time_profile(self.h_profile, self.h_value, self.h_rate, t))
        return c

    def h_dual_norm_sq(self, t, n_modes: int = 1):
        """``||h(t)||_*^2 = sum_k h_k^2 / lambda_k``."""
        amp = _time_profile(self.h_profile, self.h_value, self.h_rate, t)
        return amp**2 / (self.h_mode * np.pi) ** 2

    @property
    def has_forcing(self) -> bool:
        return self.h_profile != "zero" and self.h_value != 0.0

    @property
    def p1(self) -> float:
        return self.p / (self.p - 1.0)

    def young_constant(self) -> float:
        if self.c_const is not None:
            return float(self.c_const)
        p, q = self.p, self.q
        if not p > q:
            raise ConfigError("the Young constant needs q < p")
        with_psi = self.psi1_profile != "zero" and self.psi1_value != 0.0
        a_share = self.alpha2 / 2.0 if with_psi else self.alpha2
        c1 = (p - q) / p * (2.0 * self.d1) ** (p / (p - q)) * (q / (p * a_share)) ** (q / (p - q))
        c2 = (p - 1) / p * 2.0**self.p1 * (1.0 / (p * a_share)) ** (1.0 / (p - 1)) if with_psi else 0.0
        return float(max(c1, c2))

    def with_(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_additive() -> ModelSpec:
    return ModelSpec()


def default_multiplicative() -> ModelSpec:
    return ModelSpec(coupling="multiplicative")


def default_general() -> ModelSpec:
    """Cubic reaction ``s - s^3`` (p = 4) with coupling ``g = s`` (q = 2)."""
    return ModelSpec(
        f_profile="cubic", p=4.0, kappa=0.5, alpha1=1.0, alpha2=0.5, eta=float("nan"), c_f=float("nan"),
        coupling="general", d1=1.0, d2=1.0, q=2.0,
    )


_FIELD_NAMES = {f.name for f in fields(ModelSpec)}


def load_spec(path: str | Path, base: ModelSpec | None = None) -> ModelSpec:
    """Read a TOML config whose top-level keys are ModelSpec fields."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    unknown = sorted(set(data) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    return dataclasses.replace(base or ModelSpec(), **data)


def dump_spec(spec: ModelSpec) -> str:
    lines = []
    for f in fields(ModelSpec):
        v = getattr(spec, f.name)
        if v is None:
            continue
        if isinstance(v, str):
            lines.append(f'{f.name} = "{v}"')
        elif isinstance(v, float) and not np.isfinite(v):
            lines.append(f"{f.name} = {'nan' if np.isnan(v) else ('inf' if v > 0 else '-inf')}")
        else:
            lines.append(f"{f.name} = {v!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    relation: str
    rhs: float
    passed: bool
    gating: bool = True


@dataclass
class Diagnostics:
    conditions: list[Condition] = field(default_factory=list)
    lipschitz_a: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions if c.gating)

    @property
    def failures(self) -> list[Condition]:
        return [c for c in self.conditions if not c.passed]

    def table(self) -> str:
        rows = [("condition", "lhs", "rel", "rhs", "pass")]
        for c in self.conditions:
            tag = "yes" if c.passed else ("NO" if c.gating else "no (advisory)")
            rows.append((c.name, f"{c.lhs:.6g}", c.relation, f"{c.rhs:.6g}", tag))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows)


def _le(name, lhs, rhs, gating=True):
    ok = bool(lhs <= rhs + 1e-9 * max(1.0, abs(rhs)))
    return Condition(name, float(lhs), "<=", float(rhs), ok, gating)


def _ge(name, lhs, rhs, gating=True):
    ok = bool(lhs >= rhs - 1e-9 * max(1.0, abs(rhs)))
    return Condition(name, float(lhs), ">=", float(rhs), ok, gating)


def _gt(name, lhs, rhs, gating=True):
    return Condition(name, float(lhs), ">", float(rhs), bool(lhs > rhs), gating)


def _sample_range(spec: ModelSpec) -> float:
    if spec.p > 2 and spec.alpha2 > 0:
        return max(10.0, 10.0 * (max(spec.kappa, 1e-300) / spec.alpha2) ** (1.0 / spec.p))
    return 50.0


def validate(spec: ModelSpec, lambda_1: float = LAMBDA_1, alpha: float = 0.0, n_samples: int = 200_001) -> Diagnostics:
    """Sampled checks of the standing assumptions and the theorem conditions.

    Conditions marked non-gating are the sufficient smallness conditions used
    by the convergence lemmas; they are reported but do not fail validation.
    """
    if not lambda_1 > 0:
        raise ValueError("lambda_1 must be positive")
    diag = Diagnostics()
    out = diag.conditions
    s_max = _sample_range(spec)
    s = np.linspace(-s_max, s_max, n_samples)
    a = spec.a(s)
    out.append(_ge("a_lower_bound", a.min(), spec.m))
    out.append(_le("a_upper_bound", a.max(), spec.m_tilde))
    a_fine = spec.a(np.linspace(-10.0, 10.0, 400_001))
    lip_a = float(np.max(np.abs(np.diff(a_fine))) / (20.0 / 400_000))
    diag.lipschitz_a = lip_a
    fs = spec.f(s)
    if spec.p == 2:
        slope = np.max(np.abs(np.diff(fs) / np.diff(s)))
        out.append(_le("f_lipschitz", slope, spec.eta))
        out.append(_le("f_linear_growth", np.max(np.abs(fs) / (1.0 + np.abs(s))), spec.c_f))
        out.append(_gt("spectral_gap m*lambda1 > 4*C_f", spec.m * lambda_1, 4.0 * spec.c_f))
    else:
        sp = np.abs(s) ** spec.p
        out.append(_le("f_sign_upper f*s + alpha2|s|^p", np.max(fs * s + spec.alpha2 * sp), spec.kappa))
        out.append(_ge("f_sign_lower f*s + alpha1|s|^p", np.min(fs * s + spec.alpha1 * sp), -spec.kappa))
    if spec.coupling == "general":
        out.append(_ge("coupling_q >= 2", spec.q, 2.0))
        out.append(_gt("coupling_p > q", spec.p, spec.q))
        t = np.linspace(0.0, 10.0, 101)[:, None]
        sg = np.linspace(-s_max, s_max, 2001)[None, :]
        g_excess = np.abs(spec.g(t, sg)) - spec.d1 * np.abs(sg) ** (spec.q - 1) - spec.psi1(t)
        dg_excess = np.abs(spec.dg_ds(t, sg)) - spec.d2 * np.abs(sg) ** (spec.q - 2) - spec.psi2(t)
        out.append(_le("coupling_growth", g_excess.max(), 0.0))
        out.append(_le("coupling_slope_growth", dg_excess.max(), 0.0))
    if spec.p == 2 and spec.coupling in ("additive", "multiplicative"):
        la, l_norm, eta = lip_a, spec.ell_norm, spec.eta
        if spec.coupling == "additive":
            rhs = alpha * la * l_norm / lambda_1 + 2 * la * l_norm + 2 * eta / lambda_1
            out.append(_gt("additive_smallness", spec.m, rhs, gating=False))
        else:
            rhs = (alpha + 2) * la * l_norm / lambda_1 + la * l_norm * (alpha + 2) + 4 * eta / lambda_1
            out.append(_gt("multiplicative_smallness", spec.m, rhs, gating=False))
    return diag


def alpha_bound(
    spec: ModelSpec,
    paths,
    noise,
    horizon: tuple[float, float],
    ic_radius: float,
    ics: Sequence[np.ndarray] | None = None,
    n_modes: int = 16,
    dt: float = 1e-3,
) -> float:
    """Empirical a-priori H^1 bound over an ensemble of paths and initial data.

    Takes the largest ``sup_t ||w(t)||^2`` where w runs over the deterministic
    solution and the solver's transformed unknowns (``p = u - x*`` for the
    additive coupling, ``q = exp(-y) u`` for the multiplicative one), for the
    white-noise limit and, when ``noise`` is a NoiseKind, its approximation.
    """
    from . import conjugate, solver
    from .galerkin import eigenvalues

    if ics is None:
        ics = [ic_radius * np.eye(n_modes)[0]]
    if not isinstance(paths, (list, tuple)):
        paths = [paths]
    lam = eigenvalues(n_modes)
    cfg = solver.SolveConfig(dt=dt, t_start=horizon[0], t_end=horizon[1], n_modes=n_modes)
    best = 0.0

    def h1sq(states):
        return float(np.max(np.sum(lam * states**2, axis=-1)))

    for u0 in ics:
        u0 = np.asarray(u0, dtype=np.float64)
        det = solver.solve_deterministic(spec, cfg, u0)
        best = max(best, h1sq(det.states))
        if spec.coupling not in ("additive", "multiplicative") or spec.epsilon == 0:
            continue
        for path in paths:
            runs = [(None, solver.solve_white(spec, path, cfg, u0))]
            if noise is not None:
                runs.append((noise, solver.solve_stationary(spec, path, noise, cfg, u0)))
            for kind, traj in runs:
                proc = conjugate.process_for(spec, kind, n_modes)
                aux = conjugate.aux_on_times(proc, path, traj.times)
                w = conjugate.to_transformed_batch(proc, traj.states, aux)
                best = max(best, h1sq(w))
    return best
