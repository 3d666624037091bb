"""Tests for the compactified three-dimensional flow.

Oracle strategy: the compact vector field is checked against finite
differences of homology variables computed along an independently
integrated physical profile; the fixed-line eigenvalues are checked
against their closed forms; the conserved quantity on the critical-index
family and the algebraic monitors are exercised along real orbits.
"""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from vpequil.compactsys import (
    DEGENERATE_TRIPLE_ZERO,
    TRANSVERSELY_HYPERBOLIC_SADDLE,
    TRANSVERSELY_HYPERBOLIC_SOURCE,
    CompactSettings,
    CompactState,
    PolytropicIndexTable,
    compactify,
    fixed_lines,
    from_compact,
    in_S1,
    in_S2,
    in_S3,
    integrate_compact,
    jacobian_eigenvalues,
    map_profile,
    monitor_Phi,
    monitor_Z,
    monitor_dZ,
    monitor_log_Z,
    rhs_compact,
    to_dimensionless,
)
from vpequil.distmodels import eval_n, polytrope, truncated_exponential
from vpequil.physical import PhysicalState, integrate_physical


@pytest.fixture(scope="module")
def king_model():
    return truncated_exponential(0)


@pytest.fixture(scope="module")
def king_profile(king_model):
    return integrate_physical(king_model, omega_c=0.5)


@pytest.fixture(scope="module")
def king_table(king_model):
    return PolytropicIndexTable(king_model, 1e-13, 1.0)


def state_at(model, profile, r):
    m, omega = profile.dense(r)
    u, q, w = to_dimensionless(model, PhysicalState(r=r, m=m, omega=omega))
    return compactify(u, q, w)


# ------------------------------------------------------------ coordinates

def test_compactify_roundtrip_scalars():
    st = compactify(3.0, 0.4, 0.8)
    assert st.U == pytest.approx(0.75, rel=1e-15)
    assert st.Q == pytest.approx(0.4 / 1.4, rel=1e-15)
    assert st.Omega == pytest.approx(0.8 / 1.8, rel=1e-15)
    assert st.omega == pytest.approx(0.8, rel=1e-14)


def test_from_compact_inverts_profile_mapping(king_model, king_profile):
    r = 0.4 * king_profile.radius
    m, omega = king_profile.dense(r)
    st = state_at(king_model, king_profile, r)
    back = from_compact(king_model, st)
    assert back.r == pytest.approx(r, rel=1e-12)
    assert back.m == pytest.approx(m, rel=1e-12)
    assert back.omega == pytest.approx(omega, rel=1e-12)


def test_compact_state_validation():
    with pytest.raises(ValueError):
        CompactState(U=-0.1, Q=0.5, Omega=0.5)
    with pytest.raises(ValueError):
        CompactState(U=0.5, Q=1.2, Omega=0.5)
    with pytest.raises(ValueError):
        CompactState(U=0.5, Q=0.5, Omega=0.0)
    with pytest.raises(ValueError):
        CompactState(U=0.5, Q=0.5, Omega=1.0)


# ------------------------------------------------------------ fixed lines

def analytic_line_data(l):
    return {
        "L1": (1.0, 0.0, [0.0, 1.0, 1.0], TRANSVERSELY_HYPERBOLIC_SOURCE),
        "L2": ((3 + 2 * l) / (4 + 2 * l), 0.0,
               sorted([-(3 + 2 * l) / (4 + 2 * l), (1 + l) / (2 + l), 0.0]),
               TRANSVERSELY_HYPERBOLIC_SADDLE),
        "L3": (0.0, 0.0, sorted([3 + 2 * l, -1.0, 0.0]),
               TRANSVERSELY_HYPERBOLIC_SADDLE),
        "L4": (1.0, 1.0, [0.0, 0.0, 0.0], DEGENERATE_TRIPLE_ZERO),
    }


@pytest.mark.parametrize("l", [0.0, 0.5, -0.4])
def test_fixed_lines_metadata(l):
    lines = {fl.name: fl for fl in fixed_lines(l)}
    assert set(lines) == {"L1", "L2", "L3", "L4"}
    for name, (u_star, q_star, eigs, kind) in analytic_line_data(l).items():
        fl = lines[name]
        assert fl.U == pytest.approx(u_star, abs=1e-15)
        assert fl.Q == pytest.approx(q_star, abs=1e-15)
        assert sorted(fl.eigenvalues) == pytest.approx(eigs, abs=1e-14)
        assert fl.kind == kind


@pytest.mark.parametrize("l", [0.0, 0.7])
def test_rhs_vanishes_on_fixed_lines(l):
    model = polytrope(n=3, l=l)
    for fl in fixed_lines(l):
        for omega0 in (0.25, 0.6):
            rhs = rhs_compact(model, (fl.U, fl.Q, omega0 / (1 + omega0)))
            assert np.max(np.abs(rhs)) < 1e-14


@pytest.mark.parametrize("l", [0.0, 0.5, -0.4])
@pytest.mark.parametrize("omega0", [0.25, 0.6])
def test_jacobian_eigenvalues_match_closed_forms(l, omega0):
    model = polytrope(n=2.5, l=l)
    lines = {fl.name: fl for fl in fixed_lines(l)}
    for name in ("L1", "L2", "L3"):
        fl = lines[name]
        state = (fl.U, fl.Q, omega0 / (1 + omega0))
        got = np.sort(jacobian_eigenvalues(model, state).real)
        assert got == pytest.approx(sorted(fl.eigenvalues), abs=1e-8)
    fl = lines["L4"]
    got = np.sort(jacobian_eigenvalues(model, (fl.U, fl.Q, omega0 / (1 + omega0))).real)
    assert got == pytest.approx([0.0, 0.0, 0.0], abs=1e-6)


# ----------------------------------------------- vector field vs profiles

@pytest.mark.parametrize("make,omega_c", [
    (lambda: truncated_exponential(0), 0.5),
    (lambda: polytrope(n=2, l=1.0), 1.0),
])
def test_rhs_matches_physical_finite_differences(make, omega_c):
    """d(U,Q,Omega)/d(ln r) from the profile equals rhs/((1-U)(1-Q))."""
    model = make()
    profile = integrate_physical(model, omega_c)
    for frac in (0.2, 0.5, 0.8):
        r = frac * profile.radius
        h = 1e-4
        hi = state_at(model, profile, r * math.exp(h))
        lo = state_at(model, profile, r * math.exp(-h))
        fd = (np.array([hi.U, hi.Q, hi.Omega]) - np.array([lo.U, lo.Q, lo.Omega])) / (2 * h)
        st = state_at(model, profile, r)
        rhs = rhs_compact(model, (st.U, st.Q, st.Omega))
        predicted = rhs / ((1.0 - st.U) * (1.0 - st.Q))
        for a, b in zip(fd, predicted):
            assert a == pytest.approx(b, rel=1e-6, abs=1e-12)


def test_representations_agree_along_king(king_model, king_profile, king_table):
    """Integrating the compact flow reproduces the mapped physical curve."""
    r_lo = 0.05 * king_profile.radius
    r_hi = 0.90 * king_profile.radius
    start = state_at(king_model, king_profile, r_lo)
    orbit = integrate_compact(king_model, start, index_table=king_table)
    lam_hi = orbit.lam[-1]
    worst = 0.0
    for r in np.geomspace(r_lo * 1.0001, r_hi, 20):
        target = math.log(r / r_lo)
        lam = brentq(lambda s: orbit.dense(s)[3] - target, 0.0, lam_hi, xtol=1e-13)
        got = orbit.dense(lam)[:3]
        want = state_at(king_model, king_profile, r)
        worst = max(worst, np.max(np.abs(got - np.array([want.U, want.Q, want.Omega]))))
    assert worst < 1e-6


# ------------------------------------------------------------ integration

def test_king_orbit_terminates_at_vacuum_corner(king_model, king_profile, king_table):
    start = state_at(king_model, king_profile, 0.05 * king_profile.radius)
    orbit = integrate_compact(king_model, start, index_table=king_table)
    assert orbit.limit_label == "(0,1,0)"
    assert orbit.termination == "corner-(0,1,0)"
    end = np.array([orbit.U[-1], orbit.Q[-1] - 1.0, orbit.Omega[-1]])
    assert np.linalg.norm(end) == pytest.approx(1e-4, rel=1e-3)
    assert orbit.xi[0] == 0.0
    assert np.all(np.diff(orbit.xi) > 0)


def test_halo_orbit_exhausts_potential_without_corner():
    # finite-mass infinite-extent family: q -> 1, so neither corner is
    # reached and the orbit rides the stable manifold of the halo rest
    # point (0, 1/2, 0); being a saddle, it sheds the orbit late, once
    # amplified roundoff overtakes the shrinking true deviation
    model = polytrope(n=5)
    profile = integrate_physical(model, omega_c=1.0)
    start = state_at(model, profile, 0.1)
    orbit = integrate_compact(model, start)
    assert orbit.termination == "omega-floor"
    assert orbit.limit_label == "unresolved"
    mid = int(np.argmax(orbit.Omega < 1e-4))
    assert abs(orbit.Q[mid] - 0.5) < 1e-3
    assert orbit.U[mid] < 1e-3
    assert np.min(np.abs(orbit.Q - 0.5)) < 1e-6


def test_backward_orbit_shadows_regular_center_line(king_model, king_profile, king_table):
    # the regular solution runs backward into the saddle line at
    # U = (3+2l)/(4+2l); the connection can only be shadowed for a
    # window ~ ln(1/rtol) before the transverse instability takes over
    start = state_at(king_model, king_profile, 0.3 * king_profile.radius)
    orbit = integrate_compact(king_model, start, CompactSettings(lambda_max=10.0),
                              backward=True, index_table=king_table)
    assert orbit.termination == "lambda-max"
    assert orbit.lam[-1] == pytest.approx(-10.0)
    assert abs(orbit.U[-1] - 0.75) < 1e-3                    # (3+2l)/(4+2l), l=0
    assert orbit.Q[-1] < 0.05 * orbit.Q[0]
    assert abs(orbit.Omega[-1] - 0.5 / 1.5) < 5e-3
    assert np.all(np.diff(orbit.xi) < 0)


def test_backward_orbit_generic_history_blows_up_potential():
    # off the regular-centre connection, histories deepen the potential
    # without bound: the run must stop at the ceiling, not cross Omega = 1
    orbit = integrate_compact(polytrope(n=3), CompactState(0.5, 0.3, 0.4),
                              CompactSettings(lambda_max=80.0), backward=True)
    assert orbit.termination == "omega-ceiling"
    assert orbit.limit_label == "unresolved"
    assert orbit.Omega[-1] > 1.0 - 1e-11
    assert np.all(orbit.Omega < 1.0)


def test_orbit_dense_matches_nodes(king_model, king_profile, king_table):
    start = state_at(king_model, king_profile, 0.1 * king_profile.radius)
    orbit = integrate_compact(king_model, start, index_table=king_table)
    i = len(orbit.lam) // 2
    y = orbit.dense(orbit.lam[i])
    assert y[0] == pytest.approx(orbit.U[i], rel=1e-12)
    assert y[1] == pytest.approx(orbit.Q[i], rel=1e-12)
    assert y[2] == pytest.approx(orbit.Omega[i], rel=1e-12)
    assert y[3] == pytest.approx(orbit.xi[i], rel=1e-12, abs=1e-15)
    with pytest.raises(ValueError):
        orbit.dense(orbit.lam[-1] + 1.0)


def test_settings_validation(king_model):
    with pytest.raises(ValueError):
        integrate_compact(king_model, CompactState(0.5, 0.2, 0.3),
                          CompactSettings(lambda_max=-1.0))
    with pytest.raises(ValueError):
        integrate_compact(king_model, CompactState(0.5, 0.2, 0.3),
                          CompactSettings(attraction_eps=0.7))


# --------------------------------------------------------------- monitors

def test_monitor_algebra():
    st = CompactState(U=0.75, Q=2.0 / 3.0, Omega=0.5)
    # u = 3, q = 2: Z = u q^(3+2l)
    assert monitor_Z(st, 0.0) == pytest.approx(24.0, rel=1e-13)
    assert monitor_log_Z(st, 0.0) == pytest.approx(math.log(24.0), rel=1e-13)
    assert monitor_Z(st, 0.5) == pytest.approx(3.0 * 2.0 ** 4, rel=1e-13)
    # Phi = -(1/2) u^(1/(2+2l)) q^((3+2l)/(2+2l)) (1 - q - u/(3+2l))
    want = -0.5 * 3.0 ** 0.5 * 2.0 ** 1.5 * (1.0 - 2.0 - 1.0)
    assert monitor_Phi(st, 0.0) == pytest.approx(want, rel=1e-13)


def test_dZ_matches_flow_derivative(king_model, king_profile, king_table):
    start = state_at(king_model, king_profile, 0.1 * king_profile.radius)
    orbit = integrate_compact(king_model, start, index_table=king_table)
    for lam in (0.5, 1.5, 2.5):
        h = 1e-3
        z_hi = monitor_Z(orbit.dense(lam + h)[:3], 0.0)
        z_lo = monitor_Z(orbit.dense(lam - h)[:3], 0.0)
        fd = (z_hi - z_lo) / (2 * h)
        got = monitor_dZ(king_model, orbit.dense(lam)[:3], index_table=king_table)
        assert got == pytest.approx(fd, rel=1e-5)


def test_log_Z_strictly_increasing_along_king(king_model, king_profile, king_table):
    # every term of dZ is positive while n(omega) < 3 + l, as here
    start = state_at(king_model, king_profile, 0.05 * king_profile.radius)
    orbit = integrate_compact(king_model, start, index_table=king_table)
    z = orbit.log_Z
    assert np.all(np.isfinite(z))
    assert np.all(np.diff(z) > 0)


@pytest.mark.parametrize("l", [0.0, 0.5])
def test_Phi_conserved_on_critical_index_family(l):
    model = polytrope(n=5 + 3 * l, l=l)
    orbit = integrate_compact(model, CompactState(0.6, 0.2, 0.4),
                              CompactSettings(lambda_max=12.0))
    phi = orbit.Phi
    drift = np.max(np.abs(phi - phi[0])) / abs(phi[0])
    assert drift < 1e-8


def test_Phi_varies_off_critical_index():
    orbit = integrate_compact(polytrope(n=3), CompactState(0.6, 0.2, 0.4),
                              CompactSettings(lambda_max=12.0))
    phi = orbit.Phi
    assert np.max(np.abs(phi - phi[0])) / abs(phi[0]) > 1e-2


# ---------------------------------------------------------- trapping sets

def test_in_S1_hand_values():
    assert in_S1(CompactState(0.9, 0.5, 0.3))       # 0.8*0.5 + 0.5*0.1 > 0
    assert not in_S1(CompactState(0.2, 0.1, 0.3))   # -0.6*0.9 + 0.1*0.8 < 0


def test_in_S2_polytrope_bounds():
    # constant index: threshold is max(1/2, (3+2l)/(3+3l+n))
    assert not in_S2(polytrope(n=2), CompactState(0.5, 0.55, 0.4))   # needs Q > 0.6
    assert in_S2(polytrope(n=2), CompactState(0.5, 0.65, 0.4))
    assert in_S2(polytrope(n=4), CompactState(0.5, 0.55, 0.4))       # needs Q > 0.5


def test_in_S3_set_algebra():
    st = CompactState(U=0.8, Q=0.9, Omega=0.2)          # u = 4, q = 9
    assert in_S3(st, l=0.0, eps=0.5, delta=0.5)
    low_q = CompactState(U=0.8, Q=0.4, Omega=0.2)
    assert not in_S3(low_q, l=0.0, eps=0.5, delta=0.5)  # fails Q > 1 - delta
    shallow = CompactState(U=0.7, Q=0.9, Omega=0.2)     # u = 7/3, q = 9
    assert in_S3(shallow, l=0.0, eps=0.1, delta=0.5)    # 3 - 0.9 < 7/3
    assert not in_S3(shallow, l=0.0, eps=0.01, delta=0.5)


def test_trapping_sets_future_invariant_along_king(king_model, king_profile, king_table):
    start = state_at(king_model, king_profile, 0.05 * king_profile.radius)
    orbit = integrate_compact(king_model, start, index_table=king_table)
    states = [CompactState(u, q, o) for u, q, o
              in zip(orbit.U, orbit.Q, orbit.Omega)]
    omega0 = orbit.initial.omega
    flag_sets = {
        "S1": [in_S1(s) for s in states],
        "S2": [in_S2(king_model, s, omega_0=omega0, index_table=king_table)
               for s in states],
        "S3": [in_S3(s, l=0.0, eps=0.5, delta=0.49) for s in states],
    }
    for name, flags in flag_sets.items():
        assert any(flags), name
        first = flags.index(True)
        assert all(flags[first:]), f"{name} exited after entry"
    assert orbit.S1.tolist() == flag_sets["S1"]


# ------------------------------------------------------------ index table

def test_index_table_certifies_accuracy():
    model = truncated_exponential(1)
    table = PolytropicIndexTable(model, 1e-8, 5.0)
    assert table.certified_error < 1e-9
    rng = np.random.default_rng(42)
    for omega in np.exp(rng.uniform(math.log(1e-8), math.log(5.0), size=15)):
        assert table(omega) == pytest.approx(eval_n(model, omega), abs=1e-8)


def test_index_table_falls_back_outside_range():
    model = truncated_exponential(1)
    table = PolytropicIndexTable(model, 1e-4, 1.0)
    assert table(50.0) == pytest.approx(eval_n(model, 50.0), rel=1e-12)


def test_index_table_constant_for_polytropes():
    table = PolytropicIndexTable(polytrope(n=3, l=0.5), 1e-10, 10.0)
    assert table(1e-9) == 3.0
    assert table(5.0) == 3.0
    assert table.certified_error == 0.0


# -------------------------------------------------------------- profiles

def test_map_profile_consistency(king_model, king_profile):
    U, Q, Om = map_profile(king_model, king_profile)
    assert len(U) == len(king_profile.r)
    i = len(U) // 2
    st = state_at(king_model, king_profile, king_profile.r[i])
    assert U[i] == pytest.approx(st.U, rel=1e-12)
    assert Q[i] == pytest.approx(st.Q, rel=1e-12)
    assert Om[i] == pytest.approx(st.Omega, rel=1e-12)
    # a regular centre launches from the L2 line
    assert U[0] == pytest.approx(0.75, abs=1e-9)
    assert Q[0] < 1e-10
