"""Compactified autonomous formulation of the equilibrium equations.

The homology variables u = 4 pi r^3 rho / m and q = m / (r omega), together
with the potential omega, close into an autonomous cubic system once each is
mapped to (0,1) by x -> x/(1+x).  In the compact variables (U, Q, Omega) the
flow in the logarithmic time lambda is polynomial apart from the local
polytropic index n(omega) entering one coefficient, every face of the cube
is invariant, and the equilibria form four lines parametrised by Omega whose
transverse eigenvalues decide where solutions can begin and end.  Finiteness
of radius and mass translate into which invariant corner an orbit reaches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline

from .distmodels import (
    DistributionModel,
    EvaluationError,
    Polytrope,
    density,
    density_prefactor,
    eval_g,
    eval_n,
)
from .physical import PhysicalState, SolutionProfile

TRANSVERSELY_HYPERBOLIC_SOURCE = "TransverselyHyperbolicSource"
TRANSVERSELY_HYPERBOLIC_SADDLE = "TransverselyHyperbolicSaddle"
DEGENERATE_TRIPLE_ZERO = "DegenerateTripleZero"

VACUUM_CORNER = (0.0, 1.0, 0.0)      # finite-radius terminus
SINGULAR_CORNER = (1.0, 1.0, 0.0)    # self-similar singular terminus


@dataclass(frozen=True)
class CompactState:
    """A point of the open cube; U, Q may sit on their faces, Omega may not."""

    U: float
    Q: float
    Omega: float

    def __post_init__(self):
        if not 0.0 <= self.U <= 1.0:
            raise ValueError(f"U must lie in [0, 1], got {self.U}")
        if not 0.0 <= self.Q <= 1.0:
            raise ValueError(f"Q must lie in [0, 1], got {self.Q}")
        if not 0.0 < self.Omega < 1.0:
            raise ValueError(f"Omega must lie strictly inside (0, 1), got {self.Omega}")

    @property
    def omega(self) -> float:
        return self.Omega / (1.0 - self.Omega)


@dataclass(frozen=True)
class CompactSettings:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-30
    lambda_max: float = 200.0
    omega_floor: float = 1e-12
    omega_ceiling: float = 1e12    # backward runs can blow the potential up
    attraction_eps: float = 1e-4


@dataclass(frozen=True)
class FixedLine:
    """One line of equilibria with its transverse eigenvalues."""

    name: str
    U: float
    Q: float
    eigenvalues: tuple
    kind: str


def _triple(state):
    if isinstance(state, CompactState):
        return state.U, state.Q, state.Omega
    return float(state[0]), float(state[1]), float(state[2])


# ------------------------------------------------------------- coordinates

def to_dimensionless(model: DistributionModel, state: PhysicalState):
    """Homology variables (u, q, omega) of a physical point."""
    if not state.omega > 0.0:
        raise ValueError("homology variables need omega > 0")
    rho = density(model, state.r, state.omega)
    u = 4.0 * math.pi * state.r ** 3 * rho / state.m
    q = state.m / (state.r * state.omega)
    return u, q, state.omega


def compactify(u: float, q: float, omega: float) -> CompactState:
    return CompactState(U=u / (1.0 + u), Q=q / (1.0 + q), Omega=omega / (1.0 + omega))


def from_compact(model: DistributionModel, state: CompactState) -> PhysicalState:
    """Invert the homology map; well defined off the faces."""
    u = state.U / (1.0 - state.U)
    q = state.Q / (1.0 - state.Q)
    omega = state.omega
    g = eval_g(model, model.l + 0.5, omega).value
    denom = 4.0 * math.pi * density_prefactor(model.l) * g
    r = (u * q * omega / denom) ** (1.0 / (2.0 + 2.0 * model.l))
    return PhysicalState(r=r, m=q * r * omega, omega=omega)


def map_profile(model: DistributionModel, profile: SolutionProfile):
    """Compact coordinates of every step point of a physical profile."""
    s = profile.samples
    with np.errstate(divide="ignore"):
        u = 4.0 * math.pi * s["r"] ** 3 * s["rho"] / s["m"]
        q = s["m"] / (s["r"] * s["omega"])
    return u / (1.0 + u), q / (1.0 + q), s["omega"] / (1.0 + s["omega"])


# ------------------------------------------------------------ vector field

def rhs_compact(model: DistributionModel, state, index_table=None):
    """Compact flow (dU, dQ, dOmega)/dlambda.

    Accepts U, Q slightly off the faces (the field is polynomial in them),
    which finite-difference Jacobians rely on; Omega must stay interior.
    """
    U, Q, Om = float(state[0]), float(state[1]), float(state[2])
    if not 0.0 < Om < 1.0:
        raise ValueError(f"Omega must lie strictly inside (0, 1), got {Om}")
    l = model.l
    if Q != 0.0:
        omega = Om / (1.0 - Om)
        n = index_table(omega) if index_table is not None else eval_n(model, omega)
    else:
        n = 0.0   # multiplied by Q = 0 below
    du = U * (1.0 - U) * ((1.0 - Q) * (3.0 + 2.0 * l - (4.0 + 2.0 * l) * U)
                          - (n + l) * Q * (1.0 - U))
    dq = Q * (1.0 - Q) * ((2.0 * U - 1.0) * (1.0 - Q) + Q * (1.0 - U))
    dom = -Om * (1.0 - Om) * Q * (1.0 - U)
    return np.array([du, dq, dom])


def fixed_lines(l: float):
    """The four lines of equilibria with closed-form transverse spectra."""
    if not l > -1.0:
        raise ValueError(f"anisotropy exponent l must exceed -1, got {l}")
    u2 = (3.0 + 2.0 * l) / (4.0 + 2.0 * l)
    return [
        FixedLine("L1", 1.0, 0.0, (1.0, 1.0, 0.0), TRANSVERSELY_HYPERBOLIC_SOURCE),
        FixedLine("L2", u2, 0.0, (-u2, (1.0 + l) / (2.0 + l), 0.0),
                  TRANSVERSELY_HYPERBOLIC_SADDLE),
        FixedLine("L3", 0.0, 0.0, (3.0 + 2.0 * l, -1.0, 0.0),
                  TRANSVERSELY_HYPERBOLIC_SADDLE),
        FixedLine("L4", 1.0, 1.0, (0.0, 0.0, 0.0), DEGENERATE_TRIPLE_ZERO),
    ]


def jacobian_eigenvalues(model: DistributionModel, state, step: float = 1e-6,
                         index_table=None):
    """Eigenvalues of the linearised flow by central differences."""
    base = np.array(_triple(state))
    jac = np.empty((3, 3))
    for j in range(3):
        offset = np.zeros(3)
        offset[j] = step
        hi = rhs_compact(model, base + offset, index_table=index_table)
        lo = rhs_compact(model, base - offset, index_table=index_table)
        jac[:, j] = (hi - lo) / (2.0 * step)
    return np.linalg.eigvals(jac)


# ----------------------------------------------------------------- monitors

def _log_ratio(x):
    """log(x/(1-x)), elementwise, -inf at 0 and +inf at 1."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(x) - np.log1p(-x)


def monitor_log_Z(state, l: float) -> float:
    U, Q, _ = _triple(state)
    return float(_log_ratio(U) + (3.0 + 2.0 * l) * _log_ratio(Q))


def monitor_Z(state, l: float) -> float:
    """Z = u q^(3+2l); strictly increasing wherever the flow expands mass."""
    U, Q, _ = _triple(state)
    u = U / (1.0 - U)
    q = Q / (1.0 - Q)
    return u * q ** (3.0 + 2.0 * l)


def monitor_dZ(model: DistributionModel, state, index_table=None) -> float:
    """Exact lambda-derivative of Z along the flow."""
    U, Q, Om = _triple(state)
    l = model.l
    omega = Om / (1.0 - Om)
    n = index_table(omega) if index_table is not None else eval_n(model, omega)
    factor = 2.0 * (l + 1.0) * U * (1.0 - Q) + (3.0 + l - n) * Q * (1.0 - U)
    return factor * monitor_Z(state, l)


def monitor_Phi(state, l: float) -> float:
    """First integral of the flow when n(omega) is identically 5 + 3l."""
    U, Q, _ = _triple(state)
    u = U / (1.0 - U)
    q = Q / (1.0 - Q)
    e = 2.0 * (1.0 + l)
    return -0.5 * u ** (1.0 / e) * q ** ((3.0 + 2.0 * l) / e) \
        * (1.0 - q - u / (3.0 + 2.0 * l))


# -------------------------------------------------------------- trapped sets

def in_S1(state) -> bool:
    """Region where Q is expanding; future invariant."""
    U, Q, _ = _triple(state)
    return (2.0 * U - 1.0) * (1.0 - Q) + Q * (1.0 - U) > 0.0


def in_S2(model: DistributionModel, state, omega_0: float | None = None,
          index_table=None) -> bool:
    """Q above every mass-shedding threshold reachable below omega_0."""
    U, Q, Om = _triple(state)
    l = model.l
    omega0 = omega_0 if omega_0 is not None else Om / (1.0 - Om)
    a = 3.0 + 2.0 * l
    if isinstance(model.family, Polytrope):
        sup_bound = a / (a + l + model.family.n)
    else:
        grid = np.geomspace(omega0 * 1e-10, omega0, 129)
        if index_table is not None:
            ns = np.array([index_table(w) for w in grid])
        else:
            ns = np.array([eval_n(model, w) for w in grid])
        sup_bound = float(np.max(a / (a + l + ns)))
    return Q > max(0.5, sup_bound)


def in_S3(state, l: float, eps: float, delta: float) -> bool:
    """Deep-potential wedge {u + eps q > 3 + 2l} inside {Q > 1 - delta}."""
    if not 0.0 < delta <= 0.5:
        raise ValueError(f"delta must lie in (0, 1/2], got {delta}")
    if not eps >= 0.0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    U, Q, _ = _triple(state)
    if not Q > 1.0 - delta:
        return False
    u = math.inf if U == 1.0 else U / (1.0 - U)
    q = math.inf if Q == 1.0 else Q / (1.0 - Q)
    return u + eps * q > 3.0 + 2.0 * l


# ---------------------------------------------------------- index memoisation

class PolytropicIndexTable:
    """Certified spline memo of n(omega) on a log grid.

    The grid is refined dyadically until the spline built on the coarser
    level matches direct evaluation at all midpoints to `tol`; the final
    spline keeps the midpoints as extra nodes.  Queries off the range fall
    back to direct evaluation, and power-law families collapse to a constant.
    """

    def __init__(self, model: DistributionModel, omega_lo: float, omega_hi: float,
                 tol: float = 1e-9, max_nodes: int = 4097):
        if not 0.0 < omega_lo < omega_hi:
            raise ValueError("need 0 < omega_lo < omega_hi")
        self.model = model
        self.omega_lo = omega_lo
        self.omega_hi = omega_hi
        self.tol = tol
        if isinstance(model.family, Polytrope):
            self._const = float(model.family.n)
            self._spline = None
            self.certified_error = 0.0
            self.n_nodes = 0
            return
        self._const = None
        x = np.linspace(math.log(omega_lo), math.log(omega_hi), 65)
        v = np.array([eval_n(model, math.exp(t)) for t in x])
        while True:
            mids = 0.5 * (x[:-1] + x[1:])
            mv = np.array([eval_n(model, math.exp(t)) for t in mids])
            err = float(np.max(np.abs(make_interp_spline(x, v, k=5)(mids) - mv)))
            merged_x = np.empty(x.size + mids.size)
            merged_x[0::2], merged_x[1::2] = x, mids
            merged_v = np.empty_like(merged_x)
            merged_v[0::2], merged_v[1::2] = v, mv
            x, v = merged_x, merged_v
            if err <= tol or x.size >= max_nodes:
                break
        self._spline = make_interp_spline(x, v, k=5)
        self.certified_error = err
        self.n_nodes = int(x.size)

    def __call__(self, omega: float) -> float:
        if self._const is not None:
            return self._const
        if self.omega_lo <= omega <= self.omega_hi:
            return float(self._spline(math.log(omega)))
        return eval_n(self.model, omega)


_TABLE_CACHE: dict = {}


def _table_for(model: DistributionModel, omega0: float, floor: float) -> PolytropicIndexTable:
    if isinstance(model.family, Polytrope):
        return PolytropicIndexTable(model, 1e-13, 1.0)
    lo = min(1e-13, 0.5 * floor)
    hi = 2.0 ** math.ceil(math.log2(max(4.0 * omega0, 4.0)))
    key = (id(model), lo, hi)
    cached = _TABLE_CACHE.get(key)
    if cached is None or cached.model is not model:
        cached = PolytropicIndexTable(model, lo, hi)
        _TABLE_CACHE[key] = cached
    return cached


# ------------------------------------------------------------------- orbits

@dataclass
class CompactOrbit:
    """One integrated orbit with monitors and its asymptotic label."""

    model: DistributionModel
    initial: CompactState
    lam: np.ndarray
    U: np.ndarray
    Q: np.ndarray
    Omega: np.ndarray
    xi: np.ndarray
    termination: str
    limit_label: str
    settings: CompactSettings
    diagnostics: dict = field(default_factory=dict)
    _dense: Callable = None

    def dense(self, lam: float) -> np.ndarray:
        """(U, Q, Omega, xi) anywhere on the integrated lambda range."""
        lo = min(self.lam[0], self.lam[-1])
        hi = max(self.lam[0], self.lam[-1])
        if not lo <= lam <= hi:
            raise ValueError(f"lambda={lam:g} outside the integrated range [{lo:g}, {hi:g}]")
        return np.asarray(self._dense(lam))

    @property
    def log_Z(self) -> np.ndarray:
        l = self.model.l
        return _log_ratio(self.U) + (3.0 + 2.0 * l) * _log_ratio(self.Q)

    @property
    def Phi(self) -> np.ndarray:
        l = self.model.l
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.U / (1.0 - self.U)
            q = self.Q / (1.0 - self.Q)
            e = 2.0 * (1.0 + l)
            return -0.5 * u ** (1.0 / e) * q ** ((3.0 + 2.0 * l) / e) \
                * (1.0 - q - u / (3.0 + 2.0 * l))

    @property
    def S1(self) -> np.ndarray:
        return (2.0 * self.U - 1.0) * (1.0 - self.Q) + self.Q * (1.0 - self.U) > 0.0


def integrate_compact(model: DistributionModel, state0, settings: CompactSettings | None = None,
                      backward: bool = False, index_table=None) -> CompactOrbit:
    """Follow the compact flow from state0 until a corner, the potential
    floor, or the lambda budget; xi accumulates the logarithmic radius."""
    st = settings or CompactSettings()
    if not st.lambda_max > 0.0:
        raise ValueError("lambda_max must be positive")
    if not 0.0 < st.attraction_eps <= 0.5:
        raise ValueError("attraction_eps must lie in (0, 1/2]")
    if not (st.omega_floor > 0.0 and st.rel_tol > 0.0 and st.abs_tol > 0.0):
        raise ValueError("omega_floor and tolerances must be positive")
    if not st.omega_ceiling > st.omega_floor:
        raise ValueError("omega_ceiling must exceed omega_floor")
    s0 = state0 if isinstance(state0, CompactState) else CompactState(*_triple(state0))
    if not st.omega_floor < s0.omega < st.omega_ceiling:
        raise ValueError("initial state outside the (floor, ceiling) potential window")
    table = index_table if index_table is not None else _table_for(model, s0.omega, st.omega_floor)
    floor_c = st.omega_floor / (1.0 + st.omega_floor)
    roof_c = st.omega_ceiling / (1.0 + st.omega_ceiling)
    eps = st.attraction_eps

    # Runge-Kutta stages may probe slightly past Omega = 1 (or 0) before the
    # terminal events truncate the step; clamp only the stage argument
    om_hi = math.nextafter(1.0, 0.0)

    def rhs(lam, y):
        om_safe = min(max(y[2], 1e-300), om_hi)
        du, dq, dom = rhs_compact(model, (y[0], y[1], om_safe), index_table=table)
        return [du, dq, dom, (1.0 - y[0]) * (1.0 - y[1])]

    def ev_floor(lam, y):
        return y[2] - floor_c

    def ev_roof(lam, y):
        return y[2] - roof_c

    def ev_vacuum(lam, y):
        return math.hypot(y[0], y[1] - 1.0, y[2]) - eps

    def ev_singular(lam, y):
        return math.hypot(y[0] - 1.0, y[1] - 1.0, y[2]) - eps

    for ev in (ev_floor, ev_vacuum, ev_singular):
        ev.terminal = True
        ev.direction = -1
    ev_roof.terminal = True
    ev_roof.direction = 1

    lam_end = -st.lambda_max if backward else st.lambda_max
    # xi starts at exactly 0, where purely relative control would stall the
    # first steps; it is an O(1) log radius, so give it a real absolute floor
    atol = [st.abs_tol, st.abs_tol, st.abs_tol, max(st.abs_tol, 1e-14)]
    sol = solve_ivp(rhs, (0.0, lam_end), [s0.U, s0.Q, s0.Omega, 0.0],
                    method="DOP853", rtol=st.rel_tol, atol=atol,
                    dense_output=True,
                    events=[ev_floor, ev_vacuum, ev_singular, ev_roof])
    if sol.status < 0:
        raise EvaluationError(f"compact integration failed: {sol.message}")

    if sol.status == 1:
        if sol.t_events[1].size:
            termination, label = "corner-(0,1,0)", "(0,1,0)"
        elif sol.t_events[2].size:
            termination, label = "corner-(1,1,0)", "(1,1,0)"
        elif sol.t_events[3].size:
            termination, label = "omega-ceiling", "unresolved"
        else:
            termination, label = "omega-floor", "unresolved"
    else:
        termination, label = "lambda-max", "unresolved"

    diagnostics = {
        "n_steps": int(len(sol.t) - 1),
        "n_rhs_evals": int(sol.nfev),
        "index_table_nodes": getattr(table, "n_nodes", None),
        "index_table_error": getattr(table, "certified_error", None),
    }
    return CompactOrbit(model=model, initial=s0, lam=sol.t.copy(),
                        U=sol.y[0].copy(), Q=sol.y[1].copy(),
                        Omega=sol.y[2].copy(), xi=sol.y[3].copy(),
                        termination=termination, limit_label=label,
                        settings=st, diagnostics=diagnostics, _dense=sol.sol)
