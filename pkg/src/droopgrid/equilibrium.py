"""Operating points: residual, Newton solve, reference calibration, diagnostics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .case_io import Case
from .dynamics import (ModelMatrices, State, build_model, force_jacobian_blocks, forces,
                       linearize_network, resolve_alpha)
from .netgraph import build_ybus

SOLVE_TOL = 1e-8
CHECK_TOL = 1e-3


class EquilibriumError(RuntimeError):
    """Newton iteration failed; carries the last iterate and the residual trace."""

    def __init__(self, message, iterate=None, trace=()):
        super().__init__(message)
        self.iterate = iterate
        self.trace = list(trace)


class SingularJacobianError(EquilibriumError):
    pass


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Equilibrium:
    theta_s: np.ndarray
    V_s: np.ndarray
    omega_s: float
    residual_norm: float
    iterations: int = 0
    trace: tuple = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return self.theta_s.size

    def state(self) -> State:
        return State(self.theta_s.copy(), np.full(self.n, self.omega_s), self.V_s.copy())

    def to_dict(self) -> dict:
        return {
            "theta_deg": [float(f"{v:.12g}") for v in np.degrees(self.theta_s)],
            "v": [float(f"{v:.12g}") for v in self.V_s],
            "omega_s": float(f"{self.omega_s:.12g}"),
            "residual_norm": float(f"{self.residual_norm:.6g}"),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "Equilibrium":
        try:
            theta = np.radians(np.asarray(doc["theta_deg"], dtype=float))
            V = np.asarray(doc["v"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"equilibrium document needs numeric 'theta_deg' and 'v' lists: {exc}") from None
        if theta.shape != V.shape:
            raise ValueError("'theta_deg' and 'v' must have the same length")
        return cls(theta, V, float(doc.get("omega_s", 0.0)), float(doc.get("residual_norm", math.nan)))

    @classmethod
    def from_json(cls, text: str) -> "Equilibrium":
        return cls.from_dict(json.loads(text))


def equilibrium_residual(model: ModelMatrices, theta, V, omega_s: float) -> np.ndarray:
    """Model right-hand sides (times M_P, M_Q) at ``theta' = omega_s`` and zero accelerations."""
    FP, FQ = forces(model, np.asarray(theta, float), np.full(model.n, float(omega_s)), np.asarray(V, float))
    return np.concatenate([FP, FQ])


def reference_bus(case: Case) -> int:
    return int(np.flatnonzero(case.inverter_mask)[0])


def _newton_matrix(model, theta, V, ref):
    lin = linearize_network(model, theta, V)
    dP_dth, dP_dV, dQ_dth, dQ_dV = force_jacobian_blocks(model, lin, V)
    keep = np.arange(model.n) != ref
    top = np.hstack([dP_dth[:, keep], dP_dV, -model.D_P[:, None]])
    bot = np.hstack([dQ_dth[:, keep], dQ_dV, np.zeros((model.n, 1))])
    return np.vstack([top, bot])


def _fd_newton_matrix(model, theta, V, omega_s, ref, h=1e-7):
    n = model.n
    keep = np.flatnonzero(np.arange(n) != ref)
    z = np.concatenate([theta[keep], V, [omega_s]])

    def f(z):
        th = np.zeros(n)
        th[keep] = z[:n - 1]
        th[ref] = theta[ref]
        return equilibrium_residual(model, th, z[n - 1:2 * n - 1], z[-1])

    J = np.empty((2 * n, z.size))
    for j in range(z.size):
        dz = np.zeros_like(z)
        dz[j] = h
        J[:, j] = (f(z + dz) - f(z - dz)) / (2 * h)
    return J


def solve_equilibrium(case: Case, alpha="auto", guess=None, *, model: ModelMatrices | None = None,
                      tol: float = SOLVE_TOL, max_iter: int = 50, fd_jacobian: bool = False) -> Equilibrium:
    """Newton solve for ``(theta, V, omega_s)`` with the reference bus angle pinned at 0.

    The reference bus is the lowest-id inverter.  ``guess`` may be any object
    with ``theta``/``theta_s`` and ``V``/``V_s`` attributes; the default flat
    start is ``theta = 0``, ``V = V0`` (loads 1.0), ``omega_s = 0``.  A
    backtracking line search on the residual 2-norm guards the full step.

    Raises :class:`EquilibriumError` when the residual max-norm does not reach
    ``tol`` within ``max_iter`` iterations, and
    :class:`SingularJacobianError` when the Newton matrix is singular.
    """
    model = build_model(case, alpha=alpha) if model is None else model
    n = model.n
    ref = reference_bus(case)
    keep = np.arange(n) != ref
    if guess is None:
        theta = np.zeros(n)
        V = np.array([b.v0 if b.is_inverter else 1.0 for b in case.buses], dtype=float)
        omega_s = 0.0
    else:
        theta = np.array(getattr(guess, "theta_s", getattr(guess, "theta", None)), dtype=float)
        V = np.array(getattr(guess, "V_s", getattr(guess, "V", None)), dtype=float)
        omega_s = float(getattr(guess, "omega_s", 0.0))
        theta = theta - theta[ref]

    res = equilibrium_residual(model, theta, V, omega_s)
    trace = [float(np.max(np.abs(res)))]
    it = 0
    polish = 1
    while trace[-1] > tol or (polish and trace[-1] > 0.0):
        if trace[-1] <= tol:
            # one extra step once converged; kept only if it improves the residual
            polish = 0
            saved = (theta, V, omega_s, res, list(trace))
        if it >= max_iter:
            if trace[-1] <= tol:
                break
            raise EquilibriumError(
                f"Newton did not converge in {max_iter} iterations (residual {trace[-1]:.3e})",
                iterate=Equilibrium(theta, V, omega_s, trace[-1], it, tuple(trace)), trace=trace)
        it += 1
        if fd_jacobian:
            Jn = _fd_newton_matrix(model, theta, V, omega_s, ref)
        else:
            Jn = _newton_matrix(model, theta, V, ref)
        try:
            if np.linalg.cond(Jn) > 1e14:
                raise np.linalg.LinAlgError("ill-conditioned")
            step = np.linalg.solve(Jn, -res)
        except np.linalg.LinAlgError:
            raise SingularJacobianError(
                "singular Newton matrix: degenerate operating point",
                iterate=Equilibrium(theta, V, omega_s, trace[-1], it, tuple(trace)), trace=trace) from None
        norm0 = np.linalg.norm(res)
        lam = 1.0
        while True:
            th_new = theta.copy()
            th_new[keep] += lam * step[:n - 1]
            V_new = V + lam * step[n - 1:2 * n - 1]
            w_new = omega_s + lam * step[-1]
            if np.all(V_new > 0):
                res_new = equilibrium_residual(model, th_new, V_new, w_new)
                if np.linalg.norm(res_new) < norm0 or lam < 1e-4:
                    break
            elif lam < 1e-4:
                raise EquilibriumError("Newton step drives voltages non-positive",
                                       iterate=Equilibrium(theta, V, omega_s, trace[-1], it, tuple(trace)),
                                       trace=trace)
            lam *= 0.5
        theta, V, omega_s, res = th_new, V_new, w_new, res_new
        trace.append(float(np.max(np.abs(res))))
        if not np.all(np.isfinite(res)):
            raise EquilibriumError("Newton iteration produced non-finite values", trace=trace)
        if not polish and trace[-1] >= trace[-2]:
            theta, V, omega_s, res, trace = saved
            break

    final = float(np.max(np.abs(equilibrium_residual(model, theta, V, omega_s))))
    return Equilibrium(theta, V, float(omega_s), final, it, tuple(trace))


def calibrate_references(case: Case, target, alpha="auto", tol: float = CHECK_TOL) -> Case:
    """Fill uncalibrated reference injections so that ``target`` is an equilibrium at ``omega_s = 0``.

    For bus i the rotated residual at the target is
    ``R(alpha_i) [p_i - P_i; q_i - Q_i] + [D1 (omega0 - 0); D2 (V0 - V_i)]`` with
    ``P_i``, ``Q_i`` the network injections, so the exact references are
    ``[p; q] = [P; Q] - R^T [D1 omega0; D2 (V0 - V)]``.  Only buses with a
    missing entry are touched; their specified entries are compared against
    the exact value and must agree within ``tol``.
    """
    theta = np.asarray(getattr(target, "theta_s", getattr(target, "theta", None)), dtype=float)
    V = np.asarray(getattr(target, "V_s", getattr(target, "V", None)), dtype=float)
    if theta.shape != (case.n,) or V.shape != (case.n,):
        raise CalibrationError(f"target state must have {case.n} entries")
    ybus = build_ybus(case.n, case.lines)
    Vc = V * np.exp(1j * theta)
    S = Vc * np.conj(ybus.complex @ Vc)
    P, Q = S.real, S.imag

    alpha = resolve_alpha(case, ybus, alpha)

    buses = list(case.buses)
    bad = []
    for k, b in enumerate(case.buses):
        if b.calibrated:
            continue
        c1 = b.d1 * case.omega0 if b.is_inverter else 0.0
        c2 = b.d2 * (b.v0 - V[k]) if b.is_inverter else 0.0
        sa, ca = math.sin(alpha[k]), math.cos(alpha[k])
        p_star = P[k] - (sa * c1 + ca * c2)
        q_star = Q[k] - (-ca * c1 + sa * c2)
        p_new = p_star if b.p0_net is None else b.p0_net
        q_new = q_star if b.q0_net is None else b.q0_net
        if b.p0_net is not None and abs(b.p0_net - p_star) > tol:
            bad.append(f"bus {b.id}: p0_net {b.p0_net:.6g} vs target {p_star:.6g}")
        if b.q0_net is not None and abs(b.q0_net - q_star) > tol:
            bad.append(f"bus {b.id}: q0_net {b.q0_net:.6g} vs target {q_star:.6g}")
        buses[k] = replace(b, p0_net=float(p_new), q0_net=float(q_new))
    if bad:
        raise CalibrationError("specified references inconsistent with target: " + "; ".join(bad))
    return replace(case, buses=tuple(buses), meta={**case.meta, "calibrated": True})


def max_line_angle_diff(eq, lines):
    """Largest ``|theta_i - theta_k|`` over lines, in degrees, and the (one-based) line."""
    theta = np.asarray(getattr(eq, "theta_s", getattr(eq, "theta", None)), dtype=float)
    best, arg = 0.0, None
    for ln in lines:
        d = abs(math.degrees(theta[ln.from_bus] - theta[ln.to_bus]))
        if arg is None or d > best:
            best, arg = d, (ln.from_bus + 1, ln.to_bus + 1)
    return best, arg
