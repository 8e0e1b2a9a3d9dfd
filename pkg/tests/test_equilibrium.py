import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from droopgrid.case_io import builtin_case, random_case
from droopgrid.dynamics import build_model, force_jacobian_blocks, linearize_network
from droopgrid.equilibrium import (CalibrationError, Equilibrium, EquilibriumError, calibrate_references,
                                   equilibrium_residual, max_line_angle_diff, reference_bus,
                                   solve_equilibrium)
from droopgrid.netgraph import Line

from .conftest import solved, two_bus

# Half a unit in the last printed digit of each builtin bus-data entry (None: calibrated, exact).
REF_ROUNDING_P = [0, 5e-5, 5e-3, 0, 5e-3, 0, 5e-3, 0, 5e-3]
REF_ROUNDING_Q = [0, 0, 0, 0, 5e-3, 0, 5e-3, 0, 5e-3]


def test_symmetric_two_bus_flat_start():
    eq = solve_equilibrium(two_bus(r=0.0, x=0.5), alpha="traditional")
    np.testing.assert_allclose(eq.theta_s, 0.0, atol=1e-12)
    np.testing.assert_allclose(eq.V_s, 1.0, atol=1e-12)
    assert eq.omega_s == pytest.approx(0.0, abs=1e-12)
    assert eq.iterations <= 1


def test_two_bus_power_transfer():
    # p = (0.2, -0.2) on a lossless line: frequencies agree and flow runs toward bus 2
    eq = solve_equilibrium(two_bus(r=0.0, x=0.5, p=(0.2, -0.2)), alpha="traditional")
    assert eq.theta_s[0] == 0.0 and eq.theta_s[1] < 0.0
    assert eq.residual_norm <= 1e-8


def test_reproduces_table4(ieee9, table4):
    eq = ieee9.eq
    assert eq.residual_norm <= 1e-8
    assert np.max(np.abs(eq.V_s - table4.V)) <= 1e-3
    assert np.max(np.abs(np.degrees(eq.theta_s - table4.theta))) <= 0.05
    assert abs(eq.omega_s) < 1e-5
    assert eq.theta_s[0] == 0.0


def test_table4_residual_within_rounding_bound(table4):
    case = calibrate_references(builtin_case(), table4)
    m = build_model(case)
    r = equilibrium_residual(m, table4.theta, table4.V, 0.0)
    blocks = force_jacobian_blocks(m, linearize_network(m, table4.theta, table4.V), table4.V)
    J = np.block([[blocks[0], blocks[1]], [blocks[2], blocks[3]]])
    # printed to 1e-4 degrees and 1e-4 p.u.; bus 1 angle is the exact reference
    d = np.concatenate([np.full(9, math.radians(5e-5)), np.full(9, 5e-5)])
    d[0] = 0.0
    sa, ca = np.abs(np.sin(m.alpha)), np.abs(np.cos(m.alpha))
    dp, dq = np.array(REF_ROUNDING_P), np.array(REF_ROUNDING_Q)
    bound = np.abs(J) @ d + np.concatenate([sa * dp + ca * dq, ca * dp + sa * dq])
    # bus 2 P carries the specified 0.3260, which is about 2e-4 off the printed state
    inside = np.ones(18, dtype=bool)
    inside[1] = False
    assert np.all(np.abs(r[inside]) <= bound[inside])
    assert bound[1] < abs(r[1]) < 3e-4
    assert np.max(np.abs(r)) < 2e-3


def test_heavy_load_fails_with_trace(table4):
    case = calibrate_references(builtin_case(), table4)
    buses = tuple(replace(b, p0_net=50 * b.p0_net, q0_net=50 * b.q0_net) if not b.is_inverter else b
                  for b in case.buses)
    with pytest.raises(EquilibriumError) as info:
        solve_equilibrium(replace(case, buses=buses), max_iter=30)
    assert info.value.trace


def test_perturbed_start_converges_back(ieee9, table4):
    guess = Equilibrium(table4.theta, table4.V + np.eye(9)[3] * 0.1, 0.0, math.nan)
    eq = solve_equilibrium(ieee9.case, model=ieee9.model, guess=guess)
    np.testing.assert_allclose(eq.V_s, ieee9.eq.V_s, atol=1e-9)
    np.testing.assert_allclose(eq.theta_s, ieee9.eq.theta_s, atol=1e-9)


def test_translated_guess_gives_same_answer(ieee9, table4):
    guess = Equilibrium(table4.theta + 0.7, table4.V, 0.0, math.nan)
    eq = solve_equilibrium(ieee9.case, model=ieee9.model, guess=guess)
    np.testing.assert_allclose(eq.theta_s, ieee9.eq.theta_s, atol=1e-10)


def test_fd_newton_agrees(ieee9, table4):
    eq = solve_equilibrium(ieee9.case, model=ieee9.model, guess=table4, fd_jacobian=True)
    np.testing.assert_allclose(eq.V_s, ieee9.eq.V_s, atol=1e-9)
    np.testing.assert_allclose(eq.theta_s, ieee9.eq.theta_s, atol=1e-9)


def test_json_round_trip(ieee9):
    back = Equilibrium.from_json(ieee9.eq.to_json())
    np.testing.assert_allclose(back.theta_s, ieee9.eq.theta_s, rtol=1e-11, atol=1e-15)
    np.testing.assert_allclose(back.V_s, ieee9.eq.V_s, rtol=1e-11)
    assert back.to_json() == ieee9.eq.to_json()


def test_from_dict_rejects_mismatch():
    with pytest.raises(ValueError):
        Equilibrium.from_dict({"theta_deg": [0, 1], "v": [1.0]})
    with pytest.raises(ValueError):
        Equilibrium.from_dict({"v": [1.0]})


def test_calibration_idempotent(table4):
    once = calibrate_references(builtin_case(), table4)
    twice = calibrate_references(once, table4)
    assert once == twice
    assert once.calibrated


def test_calibration_keeps_specified_entries(table4):
    case = calibrate_references(builtin_case(), table4)
    assert case.buses[1].p0_net == 0.3260
    assert case.buses[4].q0_net == -0.12


def test_calibration_flags_inconsistent_reference(table4):
    raw = builtin_case()
    buses = list(raw.buses)
    buses[1] = replace(buses[1], p0_net=0.5)
    with pytest.raises(CalibrationError, match="bus 2"):
        calibrate_references(replace(raw, buses=tuple(buses)), table4)


def test_calibration_rejects_wrong_length(table4):
    with pytest.raises(CalibrationError):
        calibrate_references(builtin_case(), type(table4)(table4.theta[:3], table4.V[:3]))


def test_traditional_alpha_equilibrium_matches_auto(ieee9, ieee9_traditional):
    # calibration to the same target: both place the published operating point
    np.testing.assert_allclose(ieee9_traditional.eq.V_s, ieee9.eq.V_s, atol=2e-3)


def test_max_line_angle_diff():
    lines = [Line(0, 1, 0.1, 0.1), Line(1, 2, 0.1, 0.1)]
    eq = Equilibrium(np.radians([0.0, 3.0, -2.0]), np.ones(3), 0.0, 0.0)
    best, line = max_line_angle_diff(eq, lines)
    assert best == pytest.approx(5.0) and line == (2, 3)


def test_ieee9_max_line_angle(ieee9, table4):
    best, line = max_line_angle_diff(table4, ieee9.case.lines)
    # sin of this is the 0.0563 small-angle figure
    assert best == pytest.approx(3.2265, abs=1e-9)
    assert line == (8, 9)


@settings(max_examples=30)
@given(st.integers(2, 8), st.integers(0, 5000))
def test_random_uncalibrated_cases_recover_target(n, seed):
    case, target = random_case(n, seed)
    s = solved(case, target)
    assert s.eq.omega_s == pytest.approx(0.0, abs=1e-8)
    np.testing.assert_allclose(s.eq.V_s, target.V, atol=1e-7)
    ref = reference_bus(s.case)
    np.testing.assert_allclose(s.eq.theta_s, target.theta - target.theta[ref], atol=1e-7)
