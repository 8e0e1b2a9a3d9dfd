"""Case data model, JSON case files, the builtin 9-bus case and case generators.

Case file schema (UTF-8 JSON)::

    {
      "meta":   {"name": str, "base_mva": float (optional)},
      "omega0": float,                       # nominal frequency offset, rad/s
      "eps":    {"e1": float, "e2": float, "e3": float},
      "buses":  [{"id": int, "kind": "inverter" | "load",
                  "p0_net": float | null, "q0_net": float | null,
                  "d1": float, "d2": float, "t1": float, "t2": float,
                  "v0": float, "alpha_deg": float (optional)}],
      "lines":  [{"from": int, "to": int, "r": float, "x": float}]
    }

Bus ids are one-based and contiguous.  ``null`` injections mark references
that still have to be back-solved with
:func:`droopgrid.equilibrium.calibrate_references`.  Load buses carry no droop
parameters (``d1``..``t2`` omitted or ``null``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .netgraph import Line, NetworkError, incidence

INVERTER = "inverter"
LOAD = "load"

DEFAULT_EPS = (1e-4, 1e-2, 1e-2)
SIG_DIGITS = 12


class CaseError(ValueError):
    """Case document violates the schema; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p0_net: float | None = None
    q0_net: float | None = None
    d1: float | None = None
    d2: float | None = None
    t1: float | None = None
    t2: float | None = None
    v0: float | None = None
    alpha_override: float | None = None

    @property
    def is_inverter(self) -> bool:
        return self.kind == INVERTER

    @property
    def calibrated(self) -> bool:
        return self.p0_net is not None and self.q0_net is not None


@dataclass(frozen=True)
class Case:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    omega0: float = 0.0
    eps1: float = DEFAULT_EPS[0]
    eps2: float = DEFAULT_EPS[1]
    eps3: float = DEFAULT_EPS[2]
    name: str = "case"
    base_mva: float | None = None
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def inverter_mask(self) -> np.ndarray:
        return np.array([b.is_inverter for b in self.buses])

    @property
    def calibrated(self) -> bool:
        return all(b.calibrated for b in self.buses)

    def with_buses(self, buses) -> "Case":
        return replace(self, buses=tuple(buses))

    def with_params(self, **overrides) -> "Case":
        """Copy with droop/filter parameters overridden on every inverter bus.

        Keyword values may be scalars or per-bus sequences over the inverters.
        """
        inv = [k for k, b in enumerate(self.buses) if b.is_inverter]
        buses = list(self.buses)
        for key, value in overrides.items():
            if key not in ("d1", "d2", "t1", "t2", "v0"):
                raise KeyError(key)
            vals = np.broadcast_to(np.asarray(value, dtype=float), (len(inv),))
            for j, k in enumerate(inv):
                buses[k] = replace(buses[k], **{key: float(vals[j])})
        out = self.with_buses(buses)
        validate(out)
        return out


class ReferenceState(NamedTuple):
    """Published operating point bundled with a builtin case (radians, p.u.)."""

    theta: np.ndarray
    V: np.ndarray


def _positive(path, value):
    if value is None or not isinstance(value, (int, float)) or isinstance(value, bool):
        raise CaseError(path, "required positive number")
    if not (math.isfinite(value) and value > 0):
        raise CaseError(path, f"must be > 0, got {value}")
    return float(value)


def validate(case: Case) -> Case:
    """Enforce all :class:`Case` invariants, raising :class:`CaseError`."""
    if case.n == 0:
        raise CaseError("buses", "at least one bus required")
    for k, b in enumerate(case.buses):
        path = f"buses[{k}]"
        if b.id != k + 1:
            raise CaseError(f"{path}.id", f"bus ids must be contiguous 1..n, expected {k + 1}, got {b.id}")
        if b.kind == INVERTER:
            for name in ("d1", "d2", "t1", "t2", "v0"):
                _positive(f"{path}.{name} (bus {b.id})", getattr(b, name))
        elif b.kind == LOAD:
            for name in ("d1", "d2", "t1", "t2"):
                if getattr(b, name) is not None:
                    raise CaseError(f"{path}.{name} (bus {b.id})", "load buses carry no droop/filter parameters")
        else:
            raise CaseError(f"{path}.kind", f"unknown bus kind {b.kind!r}")
        if b.alpha_override is not None and not (0.0 <= b.alpha_override <= math.pi / 2):
            raise CaseError(f"{path}.alpha_deg (bus {b.id})", "alpha must lie in [0, 90] degrees")
    if not any(b.is_inverter for b in case.buses):
        raise CaseError("buses", "at least one inverter bus required")
    for name in ("eps1", "eps2", "eps3"):
        _positive(f"eps.e{name[-1]}", getattr(case, name))
    if not math.isfinite(case.omega0):
        raise CaseError("omega0", "must be finite")
    for j, ln in enumerate(case.lines):
        if max(ln.from_bus, ln.to_bus) >= case.n:
            raise CaseError(f"lines[{j}]", f"references bus {max(ln.from_bus, ln.to_bus) + 1} outside 1..{case.n}")
    try:
        incidence(case.lines, case.n)
    except NetworkError as exc:
        raise CaseError("lines", str(exc)) from None
    return case


def _num(doc, key, path, optional=False):
    value = doc.get(key)
    if value is None:
        if optional:
            return None
        raise CaseError(f"{path}.{key}", "required number")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"{path}.{key}", f"expected a number, got {type(value).__name__}")
    return float(value)


def _default(value, fallback):
    return fallback if value is None else value


def case_from_dict(doc: dict) -> Case:
    if not isinstance(doc, dict):
        raise CaseError("$", "top level must be an object")
    meta = doc.get("meta") or {}
    eps = doc.get("eps") or {}
    buses_doc = doc.get("buses")
    lines_doc = doc.get("lines")
    if not isinstance(buses_doc, list):
        raise CaseError("buses", "required list")
    if not isinstance(lines_doc, list):
        raise CaseError("lines", "required list")

    ids = [b.get("id") if isinstance(b, dict) else None for b in buses_doc]
    for k, bid in enumerate(ids):
        if ids.count(bid) > 1:
            raise CaseError(f"buses[{k}].id", f"duplicate bus id {bid}")

    buses = []
    for k, bd in enumerate(buses_doc):
        path = f"buses[{k}]"
        if not isinstance(bd, dict):
            raise CaseError(path, "expected an object")
        bid = bd.get("id")
        if isinstance(bid, bool) or not isinstance(bid, int):
            raise CaseError(f"{path}.id", "required integer")
        kind = bd.get("kind")
        if kind not in (INVERTER, LOAD):
            raise CaseError(f"{path}.kind", f"must be 'inverter' or 'load', got {kind!r}")
        alpha_deg = _num(bd, "alpha_deg", path, optional=True)
        buses.append(Bus(
            id=bid,
            kind=kind,
            p0_net=_num(bd, "p0_net", path, optional=True),
            q0_net=_num(bd, "q0_net", path, optional=True),
            d1=_num(bd, "d1", path, optional=True),
            d2=_num(bd, "d2", path, optional=True),
            t1=_num(bd, "t1", path, optional=True),
            t2=_num(bd, "t2", path, optional=True),
            v0=_num(bd, "v0", path, optional=True),
            alpha_override=None if alpha_deg is None else math.radians(alpha_deg),
        ))

    lines = []
    for j, ld in enumerate(lines_doc):
        path = f"lines[{j}]"
        if not isinstance(ld, dict):
            raise CaseError(path, "expected an object")
        a, b = ld.get("from"), ld.get("to")
        if not isinstance(a, int) or not isinstance(b, int) or isinstance(a, bool) or isinstance(b, bool):
            raise CaseError(path, "'from' and 'to' must be integer bus ids")
        try:
            lines.append(Line(a - 1, b - 1, _num(ld, "r", path), _num(ld, "x", path)))
        except NetworkError as exc:
            raise CaseError(path, str(exc)) from None
    pairs = [ln.pair for ln in lines]
    for j, p in enumerate(pairs):
        if pairs.index(p) != j:
            raise CaseError(f"lines[{j}]", f"duplicate line between buses {p[0] + 1} and {p[1] + 1}")

    case = Case(
        buses=tuple(buses),
        lines=tuple(lines),
        omega0=_default(_num(doc, "omega0", "$", optional=True), 0.0),
        eps1=_default(_num(eps, "e1", "eps", optional=True), DEFAULT_EPS[0]),
        eps2=_default(_num(eps, "e2", "eps", optional=True), DEFAULT_EPS[1]),
        eps3=_default(_num(eps, "e3", "eps", optional=True), DEFAULT_EPS[2]),
        name=str(meta.get("name", "case")),
        base_mva=meta.get("base_mva"),
    )
    return validate(case)


def parse_case(text: str) -> Case:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError("$", f"invalid JSON: {exc}") from None
    return case_from_dict(doc)


def _fmt(x):
    if x is None:
        return None
    return float(f"{x:.{SIG_DIGITS}g}")


def case_to_dict(case: Case) -> dict:
    meta = {"name": case.name}
    if case.base_mva is not None:
        meta["base_mva"] = case.base_mva
    buses = []
    for b in case.buses:
        d = {"id": b.id, "kind": b.kind, "p0_net": _fmt(b.p0_net), "q0_net": _fmt(b.q0_net)}
        if b.is_inverter:
            d.update(d1=_fmt(b.d1), d2=_fmt(b.d2), t1=_fmt(b.t1), t2=_fmt(b.t2), v0=_fmt(b.v0))
        elif b.v0 is not None:
            d["v0"] = _fmt(b.v0)
        if b.alpha_override is not None:
            d["alpha_deg"] = _fmt(math.degrees(b.alpha_override))
        buses.append(d)
    return {
        "meta": meta,
        "omega0": _fmt(case.omega0),
        "eps": {"e1": _fmt(case.eps1), "e2": _fmt(case.eps2), "e3": _fmt(case.eps3)},
        "buses": buses,
        "lines": [{"from": ln.from_bus + 1, "to": ln.to_bus + 1, "r": _fmt(ln.r), "x": _fmt(ln.x)}
                  for ln in case.lines],
    }


def serialize_case(case: Case) -> str:
    return json.dumps(case_to_dict(case), indent=2) + "\n"


def load_case(source: str | Path) -> Case:
    """Load a case by builtin name or from a JSON file path."""
    key = str(source)
    if key in BUILTIN_ALIASES:
        return builtin_case(BUILTIN_ALIASES[key])
    return parse_case(Path(source).read_text(encoding="utf-8"))


# Modified IEEE 9-bus lossy radial microgrid (line 5-6 removed).
# Net injections (P0_G - P0_L, Q0_G - Q0_L); None = back-solved from the
# published equilibrium.
_IEEE9_INJECTIONS = {
    1: (None, None),
    2: (0.3260, None),
    3: (0.1700, None),
    4: (0.0, 0.0),
    5: (-0.18, -0.12),
    6: (0.0, 0.0),
    7: (-0.2, -0.04),
    8: (0.0, 0.0),
    9: (-0.25, -0.06),
}
# As printed in the source table.  The printed Q at buses 7 and 9 is ten times
# what the published equilibrium supports (the network draws -0.039 and -0.059
# there), so the builtin case uses -0.04 and -0.06.
IEEE9_PRINTED_Q_NET = {7: -0.4, 9: -0.6}

_IEEE9_LINES = (
    (1, 4, 0.0387, 0.0576),
    (4, 5, 0.0648, 0.0920),
    (3, 6, 0.0412, 0.0586),
    (6, 7, 0.0703, 0.1008),
    (7, 8, 0.0517, 0.0720),
    (8, 2, 0.0433, 0.0625),
    (8, 9, 0.1100, 0.1610),
    (9, 4, 0.0600, 0.0850),
)

# Equilibrium A: V (p.u.), theta (deg)
_IEEE9_EQ_A = (
    (1.0, 0.0),
    (1.0, 5.1802),
    (1.0, 5.5607),
    (0.9780, 0.0791),
    (0.9542, -0.4604),
    (0.9932, 4.9809),
    (0.9818, 3.9652),
    (0.9869, 3.9639),
    (0.9673, 0.7374),
)

IEEE9 = "ieee9-lossy-radial"
BUILTIN_ALIASES = {IEEE9: IEEE9, "ieee9": IEEE9}


def builtin_case(name: str = IEEE9, *, t1: float = 0.01, t2: float = 10.0) -> Case:
    """Return a builtin case by name.

    Inverters (buses 1-3) use D1 = 5, D2 = 10, V0 = 1 and the filter
    constants ``t1``/``t2``.
    """
    if BUILTIN_ALIASES.get(name) != IEEE9:
        raise KeyError(f"unknown builtin case {name!r}; available: {sorted(BUILTIN_ALIASES)}")
    buses = []
    for bid, (p, q) in _IEEE9_INJECTIONS.items():
        if bid <= 3:
            buses.append(Bus(bid, INVERTER, p, q, d1=5.0, d2=10.0, t1=t1, t2=t2, v0=1.0))
        else:
            buses.append(Bus(bid, LOAD, p, q))
    lines = tuple(Line(a - 1, b - 1, r, x) for a, b, r, x in _IEEE9_LINES)
    return validate(Case(buses=tuple(buses), lines=lines, name=IEEE9))


def builtin_reference_state(name: str = IEEE9) -> ReferenceState:
    """Published equilibrium bundled with a builtin case."""
    if BUILTIN_ALIASES.get(name) != IEEE9:
        raise KeyError(f"unknown builtin case {name!r}")
    V = np.array([v for v, _ in _IEEE9_EQ_A])
    theta = np.radians([t for _, t in _IEEE9_EQ_A])
    return ReferenceState(theta=theta, V=V)


def truncation_probability(rx_mean: float, rx_std: float) -> float:
    if rx_std == 0:
        return 0.0
    return float(norm.cdf(-rx_mean / rx_std))


def gen_lossy_variant(base: Case, rx_mean: float = 0.7, rx_std: float = 0.02, seed: int = 0) -> Case:
    """Keep each line's X and redraw R = X * r with r ~ N(rx_mean, rx_std^2), r > 0.

    Draws come from numpy's PCG64 bit generator seeded with ``seed``
    (``numpy.random.default_rng``), one normal per line in line order;
    non-positive draws are rejected and redrawn.
    """
    if not rx_mean > 0:
        raise ValueError("rx_mean must be > 0")
    if not rx_std >= 0:
        raise ValueError("rx_std must be >= 0")
    rng = np.random.default_rng(seed)
    lines = []
    for ln in base.lines:
        r = rx_mean
        if rx_std > 0:
            r = rng.normal(rx_mean, rx_std)
            while r <= 0:
                r = rng.normal(rx_mean, rx_std)
        lines.append(replace(ln, r=ln.x * float(r)))
    meta = {"generator": {"rx_mean": rx_mean, "rx_std": rx_std, "seed": seed, "prng": "numpy PCG64"}}
    p_trunc = truncation_probability(rx_mean, rx_std)
    if p_trunc > 0.01:
        meta["warnings"] = [f"truncation probability {p_trunc:.3g} exceeds 1%; R/X draws are biased"]
    return replace(base, lines=tuple(lines), name=f"{base.name}-rx{rx_mean:g}-s{seed}", meta=meta)


def random_case(n: int, seed: int, *, n_inverters: int | None = None, extra_lines: int = 1,
                rx_range=(0.4, 1.2), max_angle_deg: float = 4.0):
    """Random connected case with all references left uncalibrated.

    Returns ``(case, target)`` where ``target`` is a :class:`ReferenceState`
    against which the references can be calibrated, so that the target is an
    equilibrium of the calibrated case.
    """
    rng = np.random.default_rng(seed)
    if n_inverters is None:
        n_inverters = int(rng.integers(1, max(2, n // 2) + 1))
    inv = set(rng.choice(n, size=n_inverters, replace=False).tolist())
    pairs = {(int(rng.integers(0, k)), k) for k in range(1, n)}
    for _ in range(extra_lines):
        i, k = sorted(rng.choice(n, size=2, replace=False).tolist())
        pairs.add((i, k))
    lines = []
    for i, k in sorted(pairs):
        x = rng.uniform(0.05, 0.2)
        lines.append(Line(i, k, x * rng.uniform(*rx_range), x))
    V = rng.uniform(0.96, 1.04, size=n)
    theta = np.radians(rng.uniform(-max_angle_deg, max_angle_deg, size=n))
    buses = []
    for k in range(n):
        if k in inv:
            buses.append(Bus(k + 1, INVERTER, d1=rng.uniform(1, 20), d2=rng.uniform(1, 20),
                             t1=rng.uniform(0.01, 1.0), t2=rng.uniform(0.1, 10.0), v0=float(V[k])))
        else:
            buses.append(Bus(k + 1, LOAD))
    case = validate(Case(buses=tuple(buses), lines=tuple(lines), name=f"random-{n}-{seed}"))
    return case, ReferenceState(theta=theta - theta[min(inv)], V=V)
