import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from droopgrid.case_io import builtin_case
from droopgrid.netgraph import Line, NetworkError, build_ybus, directed_edges, incidence, phi_stats

# Oracle values from an mpmath (30 digit) evaluation of -1/(R + jX) on the
# builtin ieee9 line impedances, independent of this package.
LINE14_OFFDIAG = complex(-8.03663209046, 11.9614989253)
LINE14_Y = 14.4105833296
LINE14_PHI = 2.16239603713
IEEE9_PHI0 = 2.17950614215
IEEE9_SPREAD = 0.0171101050191


def test_lossless_line_angle_is_right_angle():
    yb = build_ybus(2, [Line(0, 1, 0.0, 0.5)])
    assert yb.G[0, 1] == 0.0
    assert yb.B[0, 1] == pytest.approx(2.0)
    np.testing.assert_allclose(yb.phi, math.pi / 2)
    np.testing.assert_allclose(yb.Y, 2.0)


def test_table3_line_14_admittance():
    yb = build_ybus(9, builtin_case("ieee9").lines)
    assert complex(yb.G[0, 3], yb.B[0, 3]) == pytest.approx(LINE14_OFFDIAG, abs=1e-9)
    m = yb.edges.index((0, 3))
    assert yb.Y[m] == pytest.approx(LINE14_Y, abs=1e-9)
    assert yb.phi[m] == pytest.approx(LINE14_PHI, abs=1e-10)


def test_resistive_limit_angle_tends_to_pi():
    yb = build_ybus(2, [Line(0, 1, 1.0, 1e-9)])
    assert yb.phi[0] == pytest.approx(math.pi, abs=1e-8)


@pytest.mark.parametrize("bad", [dict(r=-0.1, x=0.1), dict(r=0.1, x=0.0), dict(r=0.1, x=-1.0)])
def test_line_rejects_invalid_impedance(bad):
    with pytest.raises(NetworkError):
        Line(0, 1, **bad)


def test_line_rejects_self_loop():
    with pytest.raises(NetworkError, match="self-loop"):
        Line(2, 2, 0.1, 0.1)


def test_duplicate_line_rejected():
    with pytest.raises(NetworkError, match="duplicate"):
        build_ybus(2, [Line(0, 1, 0.1, 0.2), Line(1, 0, 0.1, 0.3)])


def test_single_line_incidence():
    inc = incidence([Line(0, 1, 0.1, 0.2)], 2)
    np.testing.assert_array_equal(inc.E, [[1, -1], [-1, 1]])
    np.testing.assert_array_equal(inc.C, [[1, 0], [0, 1]])
    assert inc.edge_order == ((0, 1), (1, 0))


def test_ieee9_dimensions():
    case = builtin_case("ieee9")
    inc = incidence(case.lines, 9)
    assert inc.E.shape == (9, 16)
    assert inc.E_u.shape == (9, 8)
    restored = list(case.lines) + [Line(4, 5, 0.0, 0.1)]
    assert incidence(restored, 9).E.shape == (9, 18)


def test_disconnected_network_rejected():
    with pytest.raises(NetworkError, match="not connected"):
        incidence([Line(0, 1, 0.1, 0.2), Line(2, 3, 0.1, 0.2)], 4)


def test_edge_order_is_canonical():
    lines = [Line(3, 1, 0.1, 0.2), Line(0, 1, 0.1, 0.2)]
    assert directed_edges(lines) == ((0, 1), (1, 0), (1, 3), (3, 1))


def test_phi_stats_uniform_ratio():
    lines = [Line(0, 1, 0.07, 0.1), Line(1, 2, 0.14, 0.2), Line(0, 2, 0.035, 0.05)]
    stats = phi_stats(build_ybus(3, lines))
    assert stats["spread"] == pytest.approx(0.0, abs=1e-12)
    assert stats["phi0"] == pytest.approx(math.pi - math.atan(1 / 0.7), abs=1e-12)


def test_phi_stats_ieee9():
    stats = phi_stats(build_ybus(9, builtin_case("ieee9").lines))
    assert stats["phi0"] == pytest.approx(IEEE9_PHI0, abs=1e-10)
    assert stats["spread"] == pytest.approx(IEEE9_SPREAD, abs=1e-10)
    assert stats["spread"] < 0.02


def test_phi_stats_single_line():
    assert phi_stats(build_ybus(2, [Line(0, 1, 0.3, 0.4)]))["spread"] == 0.0


@st.composite
def networks(draw):
    n = draw(st.integers(2, 7))
    lines = {}
    for k in range(1, n):
        i = draw(st.integers(0, k - 1))
        lines[(i, k)] = None
    for _ in range(draw(st.integers(0, 3))):
        i, k = sorted(draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True)))
        lines[(i, k)] = None
    imp = st.tuples(st.floats(0.0, 2.0), st.floats(0.01, 2.0))
    return n, [Line(i, k, *draw(imp)) for i, k in lines]


@given(networks())
def test_ybus_structure(net):
    n, lines = net
    yb = build_ybus(n, lines)
    np.testing.assert_array_equal(yb.G, yb.G.T)
    np.testing.assert_array_equal(yb.B, yb.B.T)
    off = ~np.eye(n, dtype=bool)
    np.testing.assert_allclose(np.diag(yb.G), -np.where(off, yb.G, 0).sum(axis=1), atol=1e-9)
    np.testing.assert_allclose(np.diag(yb.B), -np.where(off, yb.B, 0).sum(axis=1), atol=1e-9)
    assert np.all(yb.phi >= math.pi / 2 - 1e-12) and np.all(yb.phi <= math.pi + 1e-12)
    for m, (i, k) in enumerate(yb.edges):
        assert yb.Y[m] * np.exp(1j * yb.phi[m]) == pytest.approx(complex(yb.G[i, k], yb.B[i, k]))
    inc = incidence(lines, n)
    np.testing.assert_array_equal(inc.E.T @ np.ones(n), 0.0)
    np.testing.assert_array_equal(inc.C, (inc.E == 1).astype(float))


@given(st.floats(0.1, 3.0), st.lists(st.floats(0.05, 1.0), min_size=2, max_size=5))
def test_uniform_ratio_diagonal_ratio(ratio, xs):
    lines = [Line(k, k + 1, ratio * x, x) for k, x in enumerate(xs)]
    yb = build_ybus(len(xs) + 1, lines)
    phi0 = phi_stats(yb)["phi0"]
    np.testing.assert_allclose(np.diag(yb.B) / np.diag(yb.G), math.tan(phi0), rtol=1e-9)
