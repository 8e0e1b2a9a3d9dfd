import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from droopgrid.case_io import (IEEE9_PRINTED_Q_NET, CaseError, builtin_case, builtin_reference_state,
                               case_to_dict, gen_lossy_variant, load_case, parse_case, random_case,
                               serialize_case, truncation_probability)


@pytest.fixture
def doc():
    return case_to_dict(builtin_case("ieee9"))


def test_builtin_round_trip():
    case = builtin_case("ieee9")
    assert parse_case(serialize_case(case)) == case


def test_builtin_table_entries():
    case = builtin_case("ieee9")
    assert case.n == 9 and len(case.lines) == 8
    bus2 = case.buses[1]
    assert bus2.is_inverter and bus2.p0_net == 0.3260 and (bus2.d1, bus2.d2) == (5.0, 10.0)
    bus5 = case.buses[4]
    assert not bus5.is_inverter and (bus5.p0_net, bus5.q0_net) == (-0.18, -0.12)
    line89 = next(ln for ln in case.lines if ln.pair == (7, 8))
    assert (line89.r, line89.x) == (0.1100, 0.1610)
    assert [b.id for b in case.buses if b.is_inverter] == [1, 2, 3]
    assert (case.buses[0].t1, case.buses[0].t2) == (0.01, 10.0)


def test_builtin_uncalibrated_entries():
    case = builtin_case("ieee9")
    assert case.buses[0].p0_net is None
    assert all(case.buses[k].q0_net is None for k in range(3))
    assert not case.calibrated


def test_printed_reactive_loads_kept_for_reference():
    case = builtin_case("ieee9")
    assert IEEE9_PRINTED_Q_NET == {7: -0.4, 9: -0.6}
    assert case.buses[6].q0_net == pytest.approx(IEEE9_PRINTED_Q_NET[7] / 10)
    assert case.buses[8].q0_net == pytest.approx(IEEE9_PRINTED_Q_NET[9] / 10)


def test_bundled_equilibrium():
    ref = builtin_reference_state()
    assert ref.V[3] == 0.9780
    assert math.degrees(ref.theta[1]) == pytest.approx(5.1802, abs=1e-12)
    assert ref.theta[0] == 0.0


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin_case("ieee14")


def test_load_case_by_alias_and_path(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(serialize_case(builtin_case()))
    assert load_case("ieee9") == load_case("ieee9-lossy-radial") == load_case(path)


def test_negative_droop_gain_names_bus_and_field(doc):
    doc["buses"][1]["d1"] = -5
    with pytest.raises(CaseError, match=r"buses\[1\]\.d1 \(bus 2\)"):
        parse_case(json.dumps(doc))


def test_duplicate_bus_id(doc):
    doc["buses"][3]["id"] = 3
    with pytest.raises(CaseError, match=r"buses\[2\]\.id.*duplicate"):
        parse_case(json.dumps(doc))


def test_load_with_droop_params(doc):
    doc["buses"][4]["d1"] = 1.0
    with pytest.raises(CaseError, match=r"buses\[4\]\.d1.*load buses"):
        parse_case(json.dumps(doc))


def test_non_contiguous_ids(doc):
    doc["buses"][8]["id"] = 12
    with pytest.raises(CaseError, match="contiguous"):
        parse_case(json.dumps(doc))


def test_missing_lines_list():
    with pytest.raises(CaseError, match="lines"):
        parse_case('{"buses": []}')


def test_invalid_json():
    with pytest.raises(CaseError, match="invalid JSON"):
        parse_case("{")


def test_zero_eps_is_rejected_not_defaulted(doc):
    doc["eps"]["e2"] = 0
    with pytest.raises(CaseError, match="eps.e2"):
        parse_case(json.dumps(doc))


def test_no_inverter(doc):
    for b in doc["buses"][:3]:
        b["kind"] = "load"
        for k in ("d1", "d2", "t1", "t2", "v0"):
            b.pop(k)
    with pytest.raises(CaseError, match="inverter"):
        parse_case(json.dumps(doc))


def test_line_to_missing_bus(doc):
    doc["lines"].append({"from": 9, "to": 10, "r": 0.1, "x": 0.1})
    with pytest.raises(CaseError, match=r"lines\[8\]"):
        parse_case(json.dumps(doc))


def test_duplicate_line(doc):
    doc["lines"].append({"from": 4, "to": 1, "r": 0.1, "x": 0.1})
    with pytest.raises(CaseError, match="duplicate line"):
        parse_case(json.dumps(doc))


def test_disconnected_case(doc):
    doc["lines"] = doc["lines"][:-1]
    with pytest.raises(CaseError, match="not connected"):
        parse_case(json.dumps(doc))


def test_alpha_deg_in_file(doc):
    doc["buses"][0]["alpha_deg"] = 45.0
    case = parse_case(json.dumps(doc))
    assert case.buses[0].alpha_override == pytest.approx(math.pi / 4)
    assert parse_case(serialize_case(case)).buses[0].alpha_override == pytest.approx(math.pi / 4)


def test_with_params_overrides_inverters_only():
    case = builtin_case().with_params(t1=0.5, d2=[1.0, 2.0, 3.0])
    assert [b.t1 for b in case.buses[:3]] == [0.5] * 3
    assert [b.d2 for b in case.buses[:3]] == [1.0, 2.0, 3.0]
    assert case.buses[5].t1 is None
    with pytest.raises(CaseError):
        builtin_case().with_params(t2=0.0)


def test_lossy_variant_zero_std():
    out = gen_lossy_variant(builtin_case(), 0.7, 0.0, seed=3)
    for ln in out.lines:
        assert ln.r / ln.x == pytest.approx(0.7, rel=1e-15)


def test_lossy_variant_determinism():
    base = builtin_case()
    assert gen_lossy_variant(base, 0.7, 0.02, 11) == gen_lossy_variant(base, 0.7, 0.02, 11)
    assert gen_lossy_variant(base, 0.7, 0.02, 11) != gen_lossy_variant(base, 0.7, 0.02, 12)


def test_lossy_variant_keeps_reactance():
    base = builtin_case()
    out = gen_lossy_variant(base, 0.7, 0.02, 0)
    assert [ln.x for ln in out.lines] == [ln.x for ln in base.lines]


def test_lossy_variant_monte_carlo_range():
    base = builtin_case()
    ratios = np.array([[ln.r / ln.x for ln in gen_lossy_variant(base, 0.7, 0.02, s).lines] for s in range(1000)])
    assert ratios.min() >= 0.6 and ratios.max() <= 0.8
    assert ratios.mean() == pytest.approx(0.7, abs=2e-3)
    assert ratios.std() == pytest.approx(0.02, rel=0.05)


def test_lossy_variant_truncation_warning():
    assert "warnings" not in gen_lossy_variant(builtin_case(), 0.7, 0.02, 0).meta
    out = gen_lossy_variant(builtin_case(), 0.1, 0.1, 0)
    assert truncation_probability(0.1, 0.1) > 0.01
    assert "truncation" in out.meta["warnings"][0]
    assert all(ln.r > 0 for ln in out.lines)


@pytest.mark.parametrize("bad", [dict(rx_mean=0.0), dict(rx_std=-0.1)])
def test_lossy_variant_bad_arguments(bad):
    args = dict(rx_mean=0.7, rx_std=0.02) | bad
    with pytest.raises(ValueError):
        gen_lossy_variant(builtin_case(), **args)


@given(st.integers(2, 10), st.integers(0, 10_000))
def test_random_case_round_trip(n, seed):
    case, target = random_case(n, seed)
    text = serialize_case(case)
    assert serialize_case(parse_case(text)) == text
    again = parse_case(text)
    for a, b in zip(again.buses, case.buses):
        assert a.d1 == pytest.approx(b.d1, rel=1e-11) and a.v0 == pytest.approx(b.v0, rel=1e-11)
    assert target.theta.shape == (n,) and target.V.shape == (n,)
    assert not case.calibrated
