"""Finiteness criteria, critical amplitudes, and parameter sweeps.

Two sufficient conditions tie the polytropic index ``n(omega)`` to the
global behaviour of an equilibrium:

* T1 — if ``n(omega) <= 3 + l`` for all potentials up to the central value,
  the solution has finite radius and finite mass.
* T2 — if the central value stays below the critical amplitude where
  ``n(omega)`` first exceeds ``5 + 3l`` (and the index is not identically
  critical near zero), the same conclusion holds.

Both checks are numerical verifications on refining grids, not proofs: a
``Guaranteed`` verdict means every sampled value passed with slack and the
observed cell-to-cell variation bounds the possible excursion between
samples.  Anything else is reported as ``Inconclusive``, never as a
refutation.

The sweep driver maps a grid of central amplitudes to radii and masses,
flags finite/infinite transitions and isolated radius spikes, and refines
each candidate critical amplitude by bisection.
"""

from __future__ import annotations

import math
import statistics
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .compactsys import (
    CompactSettings,
    compactify,
    integrate_compact,
    map_profile,
    to_dimensionless,
)
from .distmodels import (
    DistributionModel,
    EvaluationError,
    Polytrope,
    eval_n,
)
from .physical import (
    FINITE_RADIUS,
    INFINITE_FINITE_MASS,
    PhysicalState,
    SolutionProfile,
    SolveSettings,
    integrate_physical,
)

GUARANTEED = "Guaranteed"
INCONCLUSIVE = "Inconclusive"

# a sampled index value must clear the bound by at least this margin
_SLACK = 1e-9
# grid sizes tried while the per-cell variation bound still fails
_GRID_LEVELS = (65, 129, 257, 513, 1025)
# the checked interval reaches down ten decades below its top
_SPAN_DECADES = 1e-10


@dataclass(frozen=True)
class TheoremVerdict:
    """Outcome of a finiteness check.

    ``holds`` is ``"Guaranteed"`` only when the hypothesis was verified on
    the sampled interval including the variation bound; ``"Inconclusive"``
    covers every other outcome.  ``witness`` records what was checked.
    """

    theorem: str
    holds: str
    witness: dict


@dataclass(frozen=True)
class SolutionLabels:
    classification: str
    forward_label: str
    backward_label: str
    mass_convergent: bool


@dataclass(frozen=True)
class SweepEntry:
    omega_c: float
    radius: float
    total_mass: float
    classification: str
    limit_label: str


@dataclass
class SweepResult:
    entries: list = field(default_factory=list)
    critical_values: list = field(default_factory=list)
    failures: list = field(default_factory=list)


# ------------------------------------------------------------ index grids

def _index_fn(model: DistributionModel, n_fn):
    if n_fn is not None:
        return n_fn
    return lambda w: eval_n(model, w)


def _grid_check(n_of, omega_hi: float, bound: float) -> dict:
    """Sample n(omega) on refining log grids over ten decades below omega_hi.

    The hypothesis counts as verified when every node clears the bound by
    the slack, the per-cell excursion bound max(v_i, v_{i+1}) + |dv| does
    too, and the linear low-omega extrapolation confirms the trend.
    """
    lo = omega_hi * _SPAN_DECADES
    vals = None
    for level in _GRID_LEVELS:
        omegas = np.geomspace(lo, omega_hi, level)
        vals = np.array([float(n_of(w)) for w in omegas])
        nodes_ok = bool(np.all(vals <= bound - _SLACK))
        cell_bound = np.maximum(vals[:-1], vals[1:]) + np.abs(np.diff(vals))
        cells_ok = bool(np.all(cell_bound <= bound - _SLACK))
        if not nodes_ok or cells_ok:
            break
    low_estimate = float(vals[0] - (vals[1] - vals[0]))
    trend_ok = low_estimate <= bound - _SLACK
    return {
        "omega_interval": (lo, omega_hi),
        "sup_excess": float(np.max(vals) - bound),
        "grid_nodes": int(len(vals)),
        "low_omega_estimate": low_estimate,
        "identically_critical": bool(np.max(np.abs(vals - bound)) < 1e-9),
        "verified": nodes_ok and cells_ok and trend_ok,
    }


def check_theorem1(model: DistributionModel, omega_0: float,
                   n_fn=None) -> TheoremVerdict:
    """Finite radius and mass when n(omega) <= 3 + l up to omega_0."""
    if not omega_0 > 0.0:
        raise ValueError(f"omega_0 must be positive, got {omega_0!r}")
    bound = 3.0 + model.l
    report = _grid_check(_index_fn(model, n_fn), omega_0, bound)
    holds = GUARANTEED if report.pop("verified") else INCONCLUSIVE
    report["bound"] = bound
    return TheoremVerdict(theorem="T1", holds=holds, witness=report)


# ------------------------------------------------------- critical amplitude

def omega_crit(model: DistributionModel, n_fn=None) -> float:
    """Largest amplitude below which n(omega) stays under 5 + 3l.

    Returns ``math.inf`` when the index never exceeds the bound anywhere
    the scan can reach, and ``0.0`` when it exceeds the bound for every
    positive amplitude, so no nontrivial range exists.  A multi-crossing
    index triggers a RuntimeWarning and the largest crossing is returned.
    """
    bound = 5.0 + 3.0 * model.l
    if n_fn is None and isinstance(model.family, Polytrope):
        return math.inf if model.family.n <= bound else 0.0

    n_of = _index_fn(model, n_fn)
    omegas, excess = [], []
    w = 1e-10
    while w <= 1e12:
        # the scan deliberately probes until evaluation overflows
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    val = float(n_of(w))
        except (EvaluationError, OverflowError, ValueError):
            break
        if not math.isfinite(val):
            break
        omegas.append(w)
        excess.append(val - bound)
        w *= 2.0
    if len(omegas) < 2:
        raise EvaluationError("polytropic index could not be scanned")

    ups = [i for i in range(len(excess) - 1)
           if excess[i] <= 0.0 < excess[i + 1]]
    if not ups:
        if excess[-1] <= 0.0:
            return math.inf
        return 0.0
    if len(ups) > 1:
        warnings.warn("index crosses the critical bound more than once; "
                      "returning the largest crossing", RuntimeWarning,
                      stacklevel=2)
    i = ups[-1]
    oc = brentq(lambda x: float(n_of(x)) - bound, omegas[i], omegas[i + 1])
    if abs(float(n_of(oc)) - bound) > 1e-8:
        raise EvaluationError("root refinement of the critical amplitude "
                              "did not converge")
    return float(oc)


def check_theorem2(model: DistributionModel, omega_c: float,
                   n_fn=None) -> TheoremVerdict:
    """Finite radius and mass when omega_c <= omega_crit and the index
    stays strictly below 5 + 3l at small amplitudes."""
    if not omega_c > 0.0:
        raise ValueError(f"omega_c must be positive, got {omega_c!r}")
    bound = 5.0 + 3.0 * model.l
    oc = omega_crit(model, n_fn=n_fn)
    witness = {"omega_c": omega_c, "omega_crit": oc, "bound": bound}
    if not omega_c <= oc:
        return TheoremVerdict(theorem="T2", holds=INCONCLUSIVE, witness=witness)
    report = _grid_check(_index_fn(model, n_fn), omega_c, bound)
    verified = report.pop("verified") and not report["identically_critical"]
    witness.update(report)
    holds = GUARANTEED if verified else INCONCLUSIVE
    return TheoremVerdict(theorem="T2", holds=holds, witness=witness)


# ------------------------------------------------------------ classification

_CORNERS = (((0.0, 1.0, 0.0), "(0,1,0)"), ((1.0, 1.0, 0.0), "(1,1,0)"))
_CORNER_RADIUS = 0.05


def _forward_label(model: DistributionModel, profile) -> str:
    U, Q, Om = map_profile(model, profile)
    end = np.array([U[-1], Q[-1], Om[-1]])
    for corner, label in _CORNERS:
        if np.linalg.norm(end - np.asarray(corner)) < _CORNER_RADIUS:
            return label
    return "unresolved"


def _safe_forward_label(model: DistributionModel, profile) -> str:
    try:
        return _forward_label(model, profile)
    except Exception:  # noqa: BLE001 — labels are advisory, never fatal
        return "unresolved"


def classify_solution(model: DistributionModel, profile: SolutionProfile,
                      orbit=None) -> SolutionLabels:
    """Label a solved profile by its end behaviour.

    The forward label names the limit point of the compact representation
    (from an explicitly integrated orbit when one is supplied, otherwise
    from the final profile sample); the backward label is ``"L2"`` when the
    startup point sits on the attracting line of regular centres.
    """
    classification = profile.classification
    forward = None
    if orbit is not None:
        label = getattr(orbit, "limit_label", None)
        if label not in (None, "unresolved"):
            forward = label
    U, Q, _ = map_profile(model, profile)
    if forward is None:
        forward = _safe_forward_label(model, profile)
    u_center = (3.0 + 2.0 * model.l) / (4.0 + 2.0 * model.l)
    backward = ("L2" if abs(float(U[0]) - u_center) < _CORNER_RADIUS
                and float(Q[0]) < _CORNER_RADIUS else "unresolved")
    return SolutionLabels(
        classification=classification,
        forward_label=forward,
        backward_label=backward,
        mass_convergent=classification in (FINITE_RADIUS, INFINITE_FINITE_MASS),
    )


# ------------------------------------------------------------------- sweeps

_SPIKE_FACTOR = 1e3


def _bisect_transition(model, lo, hi, lo_is_finite, settings, solve,
                       failures, rel_tol):
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if hi - lo <= rel_tol * mid:
            break
        try:
            prof = solve(model, mid, settings)
        except Exception as exc:  # noqa: BLE001
            failures.append((mid, f"{type(exc).__name__}: {exc}"))
            return None
        if (prof.classification == FINITE_RADIUS) == lo_is_finite:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _refine_spike(model, a, b, settings, solve, failures, rel_tol, threshold):
    """Golden-section style maximisation of R(omega_c) between the grid
    neighbours of a spike; the spike counts as critical only when the
    refined radius keeps growing past the detection threshold."""
    best = -math.inf

    def radius_at(w):
        nonlocal best
        prof = solve(model, w, settings)
        r = float(prof.radius)
        if prof.classification != FINITE_RADIUS:
            r = math.inf
        best = max(best, r)
        return r

    try:
        while b - a > rel_tol * 0.5 * (a + b):
            m1 = a + (b - a) / 3.0
            m2 = b - (b - a) / 3.0
            if radius_at(m1) < radius_at(m2):
                a = m1
            else:
                b = m2
    except Exception as exc:  # noqa: BLE001
        failures.append((0.5 * (a + b), f"{type(exc).__name__}: {exc}"))
        return None
    if best > threshold:
        return 0.5 * (a + b)
    return None


def _find_critical_values(model, entries, settings, solve, failures, rel_tol):
    candidates = []
    for a, b in zip(entries, entries[1:]):
        fa = a.classification == FINITE_RADIUS
        fb = b.classification == FINITE_RADIUS
        if fa == fb:
            continue
        value = _bisect_transition(model, a.omega_c, b.omega_c, fa,
                                   settings, solve, failures, rel_tol)
        if value is not None:
            candidates.append(value)

    for i in range(1, len(entries) - 1):
        e = entries[i]
        if e.classification != FINITE_RADIUS or not math.isfinite(e.radius):
            continue
        window = entries[max(0, i - 2):i] + entries[i + 1:i + 3]
        neighbours = [x.radius for x in window
                      if x.classification == FINITE_RADIUS
                      and math.isfinite(x.radius)]
        if len(neighbours) < 2:
            continue
        med = statistics.median(neighbours)
        if not e.radius > _SPIKE_FACTOR * med:
            continue
        value = _refine_spike(model, entries[i - 1].omega_c,
                              entries[i + 1].omega_c, settings, solve,
                              failures, rel_tol,
                              threshold=_SPIKE_FACTOR * med)
        if value is not None:
            candidates.append(value)

    candidates.sort()
    merged = []
    for v in candidates:
        if merged and abs(v - merged[-1]) <= 1e-4 * v:
            continue
        merged.append(v)
    return merged


def sweep_omega_c(model: DistributionModel, omega_grid,
                  settings: SolveSettings | None = None, threads: int = 1,
                  solve_fn=None, bisect_rel_tol: float = 1e-6) -> SweepResult:
    """Solve the equilibrium over a grid of central amplitudes.

    Individual failures are recorded and skipped, never fatal.  Adjacent
    finite/infinite pairs and confirmed radius spikes are refined into
    critical amplitude estimates by bisection with relative tolerance
    ``bisect_rel_tol``.  ``solve_fn(model, omega_c, settings)`` may replace
    the default solver (used by the refinement probes as well).
    """
    grid = [float(w) for w in omega_grid]
    if not grid:
        raise ValueError("omega_c grid is empty")
    if any(w <= 0.0 for w in grid):
        raise ValueError("omega_c values must be positive")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("omega_c grid must be strictly increasing")
    solve = solve_fn or (lambda mdl, w, st: integrate_physical(mdl, w, settings=st))

    def run_one(w):
        try:
            prof = solve(model, w, settings)
        except Exception as exc:  # noqa: BLE001
            return None, (w, f"{type(exc).__name__}: {exc}")
        entry = SweepEntry(omega_c=w, radius=float(prof.radius),
                           total_mass=float(prof.total_mass),
                           classification=prof.classification,
                           limit_label=_safe_forward_label(model, prof))
        return entry, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, grid))
    else:
        outcomes = [run_one(w) for w in grid]

    entries = [e for e, _ in outcomes if e is not None]
    failures = [f for _, f in outcomes if f is not None]
    criticals = _find_critical_values(model, entries, settings, solve,
                                      failures, bisect_rel_tol)
    return SweepResult(entries=entries, critical_values=criticals,
                       failures=failures)


def write_sweep_csv(result: SweepResult, path) -> None:
    """Deterministic five-column CSV of the sweep entries."""
    with open(path, "w", newline="\n") as fh:
        fh.write("omega_c,R,M,class,label\n")
        for e in result.entries:
            fh.write(f"{e.omega_c:.17g},{e.radius:.17g},{e.total_mass:.17g},"
                     f"{e.classification},{e.limit_label}\n")


# ------------------------------------------------- representation matching

def compare_representations(model: DistributionModel, profile: SolutionProfile,
                            n_points: int = 100,
                            settings: CompactSettings | None = None,
                            index_table=None) -> dict:
    """Componentwise mismatch between the solved profile and one compact
    orbit started from it, at log-spaced radii inside the solved window.

    Matching uses the carried logarithmic radius: each target radius is
    located on the orbit by root finding, and the orbit point is compared
    with the compactified profile point.
    """
    if profile is None:
        raise ValueError("a solved profile is required")
    r0 = float(profile.r[0])
    r_end = profile.radius if math.isfinite(profile.radius) else float(profile.r[-1])
    r_lo = 1.5 * r0
    r_hi = 0.99 * r_end
    if not r_hi > r_lo:
        raise ValueError("profile window too narrow to compare")
    radii = np.geomspace(r_lo, r_hi, n_points)

    m_lo, w_lo = profile.dense(r_lo)
    start = compactify(*to_dimensionless(
        model, PhysicalState(r=r_lo, m=m_lo, omega=w_lo)))
    orbit = integrate_compact(model, start, settings or CompactSettings(),
                              index_table=index_table)
    lam_a, lam_b = float(orbit.lam[0]), float(orbit.lam[-1])
    targets = np.log(radii / r_lo)
    if targets[-1] > float(orbit.xi[-1]) + 1e-12:
        raise EvaluationError("compact orbit terminated before covering the "
                              "comparison window")

    errors = np.empty(n_points)
    for i, (r, xi_t) in enumerate(zip(radii, targets)):
        if xi_t <= float(orbit.xi[0]):
            lam_t = lam_a
        else:
            lam_t = brentq(lambda s: orbit.dense(s)[3] - xi_t, lam_a, lam_b)
        point = orbit.dense(lam_t)
        m_r, w_r = profile.dense(float(r))
        cp = compactify(*to_dimensionless(
            model, PhysicalState(r=float(r), m=m_r, omega=w_r)))
        errors[i] = max(abs(point[0] - cp.U), abs(point[1] - cp.Q),
                        abs(point[2] - cp.Omega))
    return {"n_points": int(n_points), "radii": radii, "errors": errors,
            "max_abs_error": float(errors.max())}
