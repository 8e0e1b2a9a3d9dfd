from typing import NamedTuple

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from droopgrid.case_io import Bus, Case, builtin_case, builtin_reference_state
from droopgrid.dynamics import ModelMatrices, build_model
from droopgrid.equilibrium import Equilibrium, calibrate_references, solve_equilibrium
from droopgrid.netgraph import Line

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class Setup(NamedTuple):
    case: Case
    model: ModelMatrices
    eq: Equilibrium
    target: object


def solved(case, target=None, alpha="auto") -> Setup:
    if target is not None:
        case = calibrate_references(case, target, alpha=alpha)
    model = build_model(case, alpha=alpha)
    return Setup(case, model, solve_equilibrium(case, model=model, guess=target), target)


@pytest.fixture(scope="session")
def table4():
    return builtin_reference_state()


@pytest.fixture(scope="session")
def ieee9(table4) -> Setup:
    return solved(builtin_case("ieee9"), table4)


@pytest.fixture(scope="session")
def ieee9_traditional(table4) -> Setup:
    return solved(builtin_case("ieee9"), table4, alpha="traditional")


def two_bus(r=0.0, x=0.5, p=(0.0, 0.0), q=(0.0, 0.0), kinds=("inverter", "inverter"), **kw) -> Case:
    """Two buses joined by one line; inverters use D1 = 5, D2 = 10, T1 = 0.1, T2 = 1, V0 = 1."""
    buses = []
    for k, kind in enumerate(kinds):
        if kind == "inverter":
            buses.append(Bus(k + 1, kind, p[k], q[k], d1=5.0, d2=10.0, t1=0.1, t2=1.0, v0=1.0))
        else:
            buses.append(Bus(k + 1, kind, p[k], q[k]))
    return Case(tuple(buses), (Line(0, 1, r, x),), **kw)


def random_state(rng, n, spread=0.3):
    return (rng.uniform(-spread, spread, n), rng.uniform(-0.5, 0.5, n), rng.uniform(0.8, 1.2, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def heavy_reactive_case(q_load=1.0) -> Case:
    """One inverter feeding a reactive-heavy load over a lossy line."""
    buses = (Bus(1, "inverter", 0.0, 0.0, d1=5.0, d2=10.0, t1=0.01, t2=10.0, v0=1.0),
             Bus(2, "load", -0.2, -q_load))
    return Case(buses, (Line(0, 1, 0.07, 0.1),))
