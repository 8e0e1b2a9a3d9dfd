"""Spectra, operating-point assumption checks and the structural stability certificates."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .case_io import Case
from .dynamics import ModelMatrices, build_model, resolve_alpha
from .equilibrium import Equilibrium, max_line_angle_diff
from .netgraph import IncidenceSet, build_ybus, phi_stats
from .smallsignal import SmallSignal, assemble_jacobian, coupling_measure

ZERO_REL_TOL = 1e-8


class SpectrumError(RuntimeError):
    pass


def spectrum(M) -> np.ndarray:
    """All eigenvalues of a square matrix, sorted by real part (descending), then imaginary part.

    Every eigenpair is checked: ``||M v - lam v|| <= 1e-8 ||M||_F`` for unit ``v``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spectrum needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0:
        return np.zeros(0, dtype=complex)
    try:
        w, v = scipy.linalg.eig(M)
    except scipy.linalg.LinAlgError as exc:
        raise SpectrumError(f"eigenvalue routine did not converge: {exc}") from None
    scale = max(np.linalg.norm(M), np.finfo(float).tiny)
    res = np.linalg.norm(M @ v - v * w[None, :], axis=0)
    if np.any(res > 1e-8 * scale) or not np.all(np.isfinite(w)):
        raise SpectrumError(f"eigenpair residual {np.max(res):.3e} exceeds 1e-8 * ||M|| = {1e-8 * scale:.3e}")
    order = np.lexsort((-w.imag, -w.real))
    return w[order]


def _zero_split(eigs, tol):
    zero = np.abs(eigs) <= tol
    return int(zero.sum()), eigs[~zero]


def _cplx(eigs) -> list:
    return [[float(f"{z.real:.12g}"), float(f"{z.imag:.12g}")] for z in eigs]


@dataclass(frozen=True)
class AssumptionThresholds:
    max_angle_deg: float = 15.0
    phi_spread_rad: float = 0.05
    alpha_tol: float = 1e-6


def check_assumptions(case: Case, eq, alpha="auto", thresholds: AssumptionThresholds | None = None) -> dict:
    """Small line angles, near-uniform impedance angles and ``alpha = pi - phi0``.

    Reports values, thresholds and pass flags; never raises on a violation.
    """
    th = thresholds or AssumptionThresholds()
    ybus = build_ybus(case.n, case.lines)
    stats = phi_stats(ybus)
    alpha = alpha.alpha if isinstance(alpha, ModelMatrices) else resolve_alpha(case, ybus, alpha)
    target = math.pi - stats["phi0"]
    conformity = float(np.max(np.abs(alpha - target)))
    angle, line = max_line_angle_diff(eq, case.lines)
    out = {
        "max_angle_diff_deg": angle,
        "max_angle_line": list(line) if line else None,
        "phi0_rad": stats["phi0"],
        "phi_spread_rad": stats["spread"],
        "alpha_conformity": conformity,
        "thresholds": {"max_angle_deg": th.max_angle_deg, "phi_spread_rad": th.phi_spread_rad,
                       "alpha_tol": th.alpha_tol},
        "angle_ok": angle <= th.max_angle_deg,
        "phi_spread_ok": stats["spread"] <= th.phi_spread_rad,
        "alpha_ok": conformity <= th.alpha_tol,
    }
    out["all_ok"] = out["angle_ok"] and out["phi_spread_ok"] and out["alpha_ok"]
    if not out["all_ok"]:
        out["note"] = "decoupled angle/voltage form not justified at this operating point"
    return out


@dataclass
class StabilityReport:
    theorem1: dict
    theorem2: dict
    full_spectrum: np.ndarray
    coupling: dict
    full: dict
    assumptions: dict | None = None
    disagreements: list = field(default_factory=list)

    @property
    def stable(self) -> bool:
        """Full-model spectral verdict."""
        return bool(self.full["stable"])

    @property
    def certified(self) -> bool:
        return self.theorem1["verdict"] == "stable" and self.theorem2["verdict"] == "stable"

    def to_dict(self) -> dict:
        t1 = dict(self.theorem1, J_A_spectrum=_cplx(self.theorem1["J_A_spectrum"]))
        t2 = dict(self.theorem2, J_V_spectrum=_cplx(self.theorem2["J_V_spectrum"]))
        return {
            "assumptions": self.assumptions,
            "theorem1": t1,
            "theorem2": t2,
            "full": self.full,
            "full_spectrum": _cplx(self.full_spectrum),
            "coupling": self.coupling,
            "disagreements": list(self.disagreements),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def render_table(self) -> str:
        rows = []
        a = self.assumptions
        if a is not None:
            rows += [
                ("max line angle diff (deg)", f"{a['max_angle_diff_deg']:.4f}", _ok(a["angle_ok"])),
                ("phi spread (rad)", f"{a['phi_spread_rad']:.4g}", _ok(a["phi_spread_ok"])),
                ("alpha conformity (rad)", f"{a['alpha_conformity']:.3g}", _ok(a["alpha_ok"])),
            ]
        t1, t2 = self.theorem1, self.theorem2
        rows += [
            ("angle: edge weights positive", str(t1["edge_weights_positive"]).lower(), ""),
            ("angle: graph connected", str(t1["connected"]).lower(), ""),
            ("angle: L1 psd, simple zero", str(t1["L1_psd_simple_zero"]).lower(), ""),
            ("angle: certificate", t1["verdict"], f"spectral {t1['spectral_verdict']}"),
            ("voltage: min eig L_lp (sym)", f"{t2['L_lp_min_eig']:.6g}", ""),
            ("voltage: certificate", t2["verdict"], f"spectral {t2['spectral_verdict']}"),
            ("full J: max Re (nonzero)", f"{self.full['max_real_nonzero']:.6g}",
             f"{self.full['zero_count']} zero mode(s)"),
            ("full J: verdict", "stable" if self.full["stable"] else "unstable", ""),
            ("coupling: w2_max", f"{self.coupling['w2_max']:.4g}", ""),
            ("coupling: offblock ratio", f"{self.coupling['offblock_ratio']:.4g}", ""),
        ]
        w = max(len(r[0]) for r in rows)
        lines = [f"{k:<{w}}  {v:<14} {note}".rstrip() for k, v, note in rows]
        lines += [f"warning: {d}" for d in self.disagreements]
        return "\n".join(lines) + "\n"


def _ok(flag):
    return "ok" if flag else "VIOLATED"


def _theta_v(eq):
    theta = np.asarray(getattr(eq, "theta_s", getattr(eq, "theta", None)), dtype=float)
    V = np.asarray(getattr(eq, "V_s", getattr(eq, "V", None)), dtype=float)
    return theta, V


def certify(ss: SmallSignal, eq, inc: IncidenceSet, *, model: ModelMatrices | None = None) -> StabilityReport:
    """Structural certificates plus the spectral checks that back them.

    Angle certificate: every undirected weight ``V_i V_k Y_ik cos(theta_i - theta_k)``
    is positive and the line graph is connected, which makes ``L1`` a
    Laplacian that is PSD with a simple zero eigenvalue.  Voltage certificate:
    the symmetric part of ``L_lp`` is positive definite.  Both are sufficient
    conditions; the spectra of ``J_A``, ``J_V`` and ``J`` are reported next to
    them and any disagreement is listed rather than resolved.  Eigenvalues with
    ``|lam| <= 1e-8 ||M||_F`` count as zero.  When ``model`` is given, modes
    faster than a tenth of the slowest load-bus rate are counted as fast
    load-bus modes.
    """
    theta, V = _theta_v(eq)
    fwd = np.array(inc.edge_order[0::2], dtype=np.intp).reshape(-1, 2)
    i, k = fwd[:, 0], fwd[:, 1]
    weights = ss.U_s[0::2] * np.cos(theta[i] - theta[k])
    positive = bool(np.all(weights > 0))
    n = ss.n
    if n == 1:
        connected = True
    else:
        adj = csr_matrix((np.ones(len(i)), (i, k)), shape=(n, n))
        connected = connected_components(adj, directed=False)[0] == 1

    L1_eigs = spectrum(ss.L1)
    L1_zero, L1_rest = _zero_split(L1_eigs, ZERO_REL_TOL * max(np.linalg.norm(ss.L1), 1.0))
    psd_simple = L1_zero == 1 and bool(np.all(L1_rest.real > 0))

    JA_eigs = spectrum(ss.J_A)
    JA_zero, JA_rest = _zero_split(JA_eigs, ZERO_REL_TOL * np.linalg.norm(ss.J_A))
    JA_stable = JA_zero == 1 and bool(np.all(JA_rest.real < 0))
    cert1 = positive and connected
    theorem1 = {
        "edge_weights": [float(f"{w:.12g}") for w in weights],
        "edge_weights_positive": positive,
        "connected": bool(connected),
        "L1_psd_simple_zero": psd_simple,
        "J_A_spectrum": JA_eigs,
        "J_A_zero_count": JA_zero,
        "verdict": "stable" if cert1 else "not certified",
        "spectral_verdict": "stable" if JA_stable else "not stable",
    }

    sym = 0.5 * (ss.L_lp + ss.L_lp.T)
    lmin = float(np.min(np.linalg.eigvalsh(sym)))
    JV_eigs = spectrum(ss.J_V)
    JV_stable = bool(np.all(JV_eigs.real < 0))
    cert2 = lmin > 0
    theorem2 = {
        "L_lp_min_eig": lmin,
        "L_lp_positive_definite": cert2,
        "J_V_spectrum": JV_eigs,
        "verdict": "stable" if cert2 else "not certified",
        "spectral_verdict": "stable" if JV_stable else "not stable",
    }

    J_eigs = spectrum(ss.J)
    J_zero, J_rest = _zero_split(J_eigs, ZERO_REL_TOL * np.linalg.norm(ss.J))
    full = {
        "zero_count": J_zero,
        "max_real_nonzero": float(np.max(J_rest.real)) if J_rest.size else -math.inf,
        "stable": J_zero == 1 and bool(np.all(J_rest.real < 0)),
    }
    if model is not None and not np.all(model.inverter):
        loads = ~model.inverter
        cutoff = 0.1 / max(float(np.max(model.M_P[loads] / model.D_P[loads])), float(np.max(model.M_Q[loads])))
        full["fast_cutoff"] = cutoff
        full["fast_mode_count"] = int(np.sum(np.abs(J_eigs) > cutoff))

    disagreements = []
    if cert1 and not JA_stable:
        disagreements.append("angle certificate issued but J_A spectrum is not stable")
    if cert1 and not psd_simple:
        disagreements.append("angle certificate issued but L1 is not PSD with a simple zero")
    if cert2 and not JV_stable:
        disagreements.append("voltage certificate issued but J_V spectrum is not stable")
    if cert1 and cert2 and not full["stable"]:
        disagreements.append("decoupled certificates issued but the full Jacobian is not stable (coupling)")
    return StabilityReport(theorem1, theorem2, J_eigs, coupling_measure(ss), full, None, disagreements)


def analyze(case: Case, eq: Equilibrium, alpha="auto", thresholds: AssumptionThresholds | None = None,
            model: ModelMatrices | None = None) -> StabilityReport:
    """Assemble, certify and attach the assumption sub-report in one call."""
    model = build_model(case, alpha=alpha) if model is None else model
    ss = assemble_jacobian(model, eq)
    report = certify(ss, eq, model.inc, model=model)
    report.assumptions = check_assumptions(case, eq, model, thresholds)
    return report
