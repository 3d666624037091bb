"""Steady states in physical variables: radius, enclosed mass, potential.

The equilibrium satisfies

    dm/dr = 4 pi r^2 rho(r, omega),      domega/dr = -m / r^2,

integrated outward from a series start near the centre.  The relative
potential omega decreases monotonically; if it reaches zero at finite radius
the state is a compact ball (FiniteRadius), otherwise the integration runs
to a large cutoff and the mass growth over the final decade of radius
decides between a finite-mass halo and an undetermined (possibly infinite
mass) extended state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .distmodels import (
    DistributionModel,
    EvaluationError,
    density,
    density_prefactor,
    eval_dg,
    eval_g,
    radial_pressure,
)

FINITE_RADIUS = "FiniteRadius"
INFINITE_FINITE_MASS = "InfiniteFiniteMass"
INFINITE_UNDETERMINED = "InfiniteUndetermined"

# fractional mass growth over the last decade of radius below which an
# unbounded state is declared to have converged total mass
MASS_DECADE_THRESHOLD = 1e-3

_STARTUP_FRACTION = 1e-6      # startup radius in units of the natural length
_CUTOFF_FRACTION = 1e6        # default outer radius in the same units
_FLOOR_FRACTION = 1e-12       # omega floor in units of the central value


@dataclass(frozen=True)
class PhysicalState:
    """One point (r, m, omega) along a solution."""

    r: float
    m: float
    omega: float

    def __post_init__(self):
        if not self.r > 0.0:
            raise ValueError(f"radius must be positive, got {self.r}")
        if self.m < 0.0:
            raise ValueError(f"enclosed mass must be non-negative, got {self.m}")


@dataclass(frozen=True)
class SolveSettings:
    """Integration controls; None fields are resolved from the model scale."""

    rel_tol: float = 1e-10
    abs_tol: float = 1e-30
    r_max: float | None = None
    omega_floor: float | None = None
    startup_radius: float | None = None

    def resolved(self, model: DistributionModel, omega_c: float) -> "SolveSettings":
        """Fill the scale-dependent fields for a concrete (model, omega_c)."""
        if not omega_c > 0.0:
            raise ValueError(f"central potential must be positive, got {omega_c}")
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ValueError("tolerances must be positive")
        length = natural_length(model, omega_c)
        r_max = self.r_max if self.r_max is not None else _CUTOFF_FRACTION * length
        floor = (self.omega_floor if self.omega_floor is not None
                 else _FLOOR_FRACTION * omega_c)
        start = (self.startup_radius if self.startup_radius is not None
                 else _STARTUP_FRACTION * length)
        if not 0.0 < floor < omega_c:
            raise ValueError(f"omega floor {floor:g} must lie in (0, omega_c)")
        if not 0.0 < start < r_max:
            raise ValueError("startup radius must lie inside (0, r_max)")
        return replace(self, r_max=r_max, omega_floor=floor, startup_radius=start)


def natural_length(model: DistributionModel, omega_c: float) -> float:
    """Length scale on which the potential varies near the centre."""
    g = eval_g(model, model.l + 0.5, omega_c).value
    rho_scale = 4.0 * math.pi * density_prefactor(model.l) * g
    return (omega_c / rho_scale) ** (1.0 / (2.0 + 2.0 * model.l))


def center_series(model: DistributionModel, omega_c: float, r):
    """Two-term expansion of (m, omega) about the regular centre.

    Valid while the second-order correction is small; used only to step off
    the coordinate singularity at r = 0.
    """
    l = model.l
    c_l = density_prefactor(l)
    m_exp = l + 0.5
    g0 = c_l * eval_g(model, m_exp, omega_c).value
    g1 = c_l * eval_dg(model, m_exp, omega_c)
    four_pi = 4.0 * math.pi
    a, b = 3.0 + 2.0 * l, 2.0 + 2.0 * l
    r = np.asarray(r, dtype=float)
    m = (four_pi * g0 * r ** a / a
         - four_pi ** 2 * g0 * g1 * r ** (a + b) / (a * b * (a + b)))
    omega = (omega_c - four_pi * g0 * r ** b / (a * b)
             + four_pi ** 2 * g0 * g1 * r ** (2.0 * b) / (a * b * (a + b) * 2.0 * b))
    if r.ndim == 0:
        return float(m), float(omega)
    return m, omega


def rhs_physical(model: DistributionModel, r: float, state, rel_tol: float = 1e-10):
    """Right-hand side (dm/dr, domega/dr); omega is clamped at the vacuum."""
    m, omega = float(state[0]), float(state[1])
    rho = density(model, r, max(omega, 0.0), rel_tol=rel_tol) if omega > 0.0 else 0.0
    return 4.0 * math.pi * r * r * rho, -m / (r * r)


@dataclass
class SolutionProfile:
    """An integrated equilibrium with its classification and diagnostics."""

    model: DistributionModel
    omega_c: float
    r: np.ndarray
    m: np.ndarray
    omega: np.ndarray
    radius: float
    total_mass: float
    classification: str
    settings: SolveSettings
    diagnostics: dict = field(default_factory=dict)
    _dense: Callable = None
    _samples: dict | None = None

    def dense(self, r: float):
        """Interpolated (m, omega) anywhere on the integrated range."""
        lo, hi = self.r[0], self.r[-1]
        if not lo * (1.0 - 1e-12) <= r <= hi * (1.0 + 1e-12):
            raise ValueError(f"r={r:g} outside the integrated range [{lo:g}, {hi:g}]")
        m, omega = self._dense(min(max(r, lo), hi))
        return float(m), float(omega)

    @property
    def samples(self) -> dict:
        """Step-point arrays including density and radial pressure."""
        if self._samples is None:
            rho = np.empty_like(self.r)
            p = np.empty_like(self.r)
            for i, (ri, wi) in enumerate(zip(self.r, self.omega)):
                w = max(float(wi), 0.0)
                rho[i] = density(self.model, float(ri), w)
                p[i] = radial_pressure(self.model, float(ri), w)
            self._samples = {"r": self.r, "m": self.m, "omega": self.omega,
                             "rho": rho, "p_rad": p}
        return self._samples


def integrate_physical(model: DistributionModel, omega_c: float,
                       settings: SolveSettings | None = None) -> SolutionProfile:
    """Construct the equilibrium with central potential depth omega_c."""
    st = (settings or SolveSettings()).resolved(model, omega_c)
    r0 = st.startup_radius
    m0, w0 = center_series(model, omega_c, r0)
    if not w0 > st.omega_floor:
        raise ValueError("startup radius too large: the series already crossed the floor")

    def rhs(r, y):
        return rhs_physical(model, r, y, rel_tol=st.rel_tol)

    def hit_floor(r, y):
        return y[1] - st.omega_floor

    hit_floor.terminal = True
    hit_floor.direction = -1

    sol = solve_ivp(rhs, (r0, st.r_max), [m0, w0], method="DOP853",
                    rtol=st.rel_tol, atol=st.abs_tol, dense_output=True,
                    events=[hit_floor])
    if sol.status < 0:
        raise EvaluationError(f"integration failed at omega_c={omega_c:g}: {sol.message}")

    r_arr, m_arr, w_arr = sol.t, sol.y[0], sol.y[1]
    diagnostics = {
        "n_steps": int(len(sol.t) - 1),
        "n_rhs_evals": int(sol.nfev),
        "omega_last": float(w_arr[-1]),
        "r_last": float(r_arr[-1]),
    }

    if sol.status == 1:   # surface: the potential ran out at finite radius
        radius = float(sol.t_events[0][0])
        total_mass = float(sol.y_events[0][0][0])
        classification = FINITE_RADIUS
        diagnostics["termination"] = "surface"
        diagnostics["decade_mass_ratio"] = None
    else:
        m_end = float(m_arr[-1])
        m_decade = float(sol.sol(r_arr[-1] / 10.0)[0])
        ratio = (m_end - m_decade) / m_end
        diagnostics["termination"] = "r_max"
        diagnostics["decade_mass_ratio"] = ratio
        radius = math.inf
        if ratio < MASS_DECADE_THRESHOLD:
            total_mass = m_end
            classification = INFINITE_FINITE_MASS
        else:
            total_mass = math.inf
            classification = INFINITE_UNDETERMINED
            diagnostics["mass_at_cutoff"] = m_end

    def dense(r):
        y = sol.sol(r)
        return y[0], y[1]

    return SolutionProfile(model=model, omega_c=omega_c,
                           r=r_arr.copy(), m=m_arr.copy(), omega=w_arr.copy(),
                           radius=radius, total_mass=total_mass,
                           classification=classification, settings=st,
                           diagnostics=diagnostics, _dense=dense)


def write_profile_csv(profile: SolutionProfile, path) -> None:
    """Deterministic five-column CSV of the step points."""
    s = profile.samples
    with open(path, "w", newline="\n") as fh:
        fh.write("r,m,omega,rho,p_rad\n")
        for i in range(len(s["r"])):
            fh.write(",".join("%.17g" % s[c][i]
                              for c in ("r", "m", "omega", "rho", "p_rad")) + "\n")
