"""Structure-preserving nonlinear model of a droop-controlled lossy microgrid.

State layout is ``x = [theta; omega; V]`` with ``omega = d(theta)/dt``.  The
bus-level model reads, component-wise over buses,

    M_P * d(omega)/dt = P0 - D_P * omega - V**2 * Ghat - C (U * cos(arg))
    M_Q * dV/dt       = Q0 - D_Q * V     + V**2 * Bhat - C (U * sin(arg))

with one entry per directed edge ``m = (i, k)``::

    U_m   = V_i V_k Y_ik
    arg_m = theta_i - theta_k - phi_ik + pi/2 - alpha_i

i.e. the bus angle ``alpha`` is lifted onto edges by the source bus.  For
inverter buses ``M_P = D1 T1``, ``M_Q = D2 T2``, ``D_P = D1``, ``D_Q = D2``;
load buses use ``eps1``, ``eps3``, ``eps2`` and ``0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .case_io import Case
from .netgraph import IncidenceSet, YBus, build_ybus, incidence, phi_stats


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModelMatrices:
    """Coefficients of the vector model.

    The diagonal matrices ``M_P``, ``D_P``, ``M_Q`` and ``D_Q`` are stored as
    their diagonals (length-n vectors).
    """

    M_P: np.ndarray
    D_P: np.ndarray
    M_Q: np.ndarray
    D_Q: np.ndarray
    P0: np.ndarray
    Q0: np.ndarray
    Ghat: np.ndarray
    Bhat: np.ndarray
    alpha: np.ndarray
    alpha_edge: np.ndarray
    ybus: YBus
    inc: IncidenceSet
    inverter: np.ndarray

    @property
    def n(self) -> int:
        return self.P0.shape[0]

    @property
    def src(self) -> np.ndarray:
        return self.inc.src

    @property
    def dst(self) -> np.ndarray:
        return self.inc.dst

    @property
    def edge_offset(self) -> np.ndarray:
        """Constant part of the edge argument, ``-phi + pi/2 - alpha_src``."""
        return -self.ybus.phi + math.pi / 2 - self.alpha_edge


@dataclass(frozen=True, eq=False)
class State:
    theta: np.ndarray
    omega: np.ndarray
    V: np.ndarray

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        n = x.size // 3
        return cls(x[:n].copy(), x[n:2 * n].copy(), x[2 * n:].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.omega, self.V])


def select_alpha(ybus: YBus, policy="auto") -> np.ndarray:
    """Droop rotation angle per bus.

    ``"auto"`` sets every bus to ``pi - phi0`` (phi0 = mean admittance angle,
    i.e. the mean line impedance angle atan(X/R)); ``"traditional"`` gives
    pi/2; a number is used as a constant angle in radians.
    """
    n = ybus.n
    if isinstance(policy, str):
        if policy == "auto":
            return np.full(n, math.pi - phi_stats(ybus)["phi0"])
        if policy == "traditional":
            return np.full(n, math.pi / 2)
        try:
            policy = float(policy)
        except ValueError:
            raise ModelError(f"unknown alpha policy {policy!r}") from None
    value = float(policy)
    if not 0.0 <= value <= math.pi / 2:
        raise ModelError(f"alpha must lie in [0, pi/2], got {value}")
    return np.full(n, value)


def resolve_alpha(case: Case, ybus: YBus, alpha=None) -> np.ndarray:
    """Per-bus alpha from a policy or vector, with the case's ``alpha_override`` entries applied."""
    if alpha is None or isinstance(alpha, (str, float, int)):
        alpha = select_alpha(ybus, "auto" if alpha is None else alpha)
    alpha = np.array(alpha, dtype=float)
    if alpha.shape != (case.n,):
        raise ModelError(f"alpha must have length {case.n}")
    for k, b in enumerate(case.buses):
        if b.alpha_override is not None:
            alpha[k] = b.alpha_override
    if np.any(alpha < 0) or np.any(alpha > math.pi / 2 + 1e-15):
        raise ModelError("alpha entries must lie in [0, pi/2]")
    return alpha


def build_model(case: Case, ybus: YBus | None = None, inc: IncidenceSet | None = None,
                alpha=None) -> ModelMatrices:
    """Assemble the model coefficients for a calibrated case.

    ``alpha`` may be a per-bus vector or an alpha policy (see
    :func:`select_alpha`); per-bus ``alpha_override`` entries of the case take
    precedence.
    """
    n = case.n
    ybus = build_ybus(n, case.lines) if ybus is None else ybus
    inc = incidence(case.lines, n) if inc is None else inc
    alpha = resolve_alpha(case, ybus, alpha)
    missing = [b.id for b in case.buses if not b.calibrated]
    if missing:
        raise ModelError(f"uncalibrated reference injections on buses {missing}; run calibrate_references first")

    inv = case.inverter_mask
    p = np.array([b.p0_net for b in case.buses])
    q = np.array([b.q0_net for b in case.buses])
    d1 = np.array([b.d1 if b.is_inverter else 0.0 for b in case.buses])
    d2 = np.array([b.d2 if b.is_inverter else 0.0 for b in case.buses])
    t1 = np.array([b.t1 if b.is_inverter else 0.0 for b in case.buses])
    t2 = np.array([b.t2 if b.is_inverter else 0.0 for b in case.buses])
    v0 = np.array([b.v0 if b.is_inverter else 0.0 for b in case.buses])

    sa, ca = np.sin(alpha), np.cos(alpha)
    Gd, Bd = np.diag(ybus.G), np.diag(ybus.B)
    return ModelMatrices(
        M_P=np.where(inv, d1 * t1, case.eps1),
        D_P=np.where(inv, d1, case.eps2),
        M_Q=np.where(inv, d2 * t2, case.eps3),
        D_Q=np.where(inv, d2, 0.0),
        P0=p * sa - q * ca + d1 * case.omega0,
        Q0=p * ca + q * sa + d2 * v0,
        Ghat=Gd * sa + Bd * ca,
        Bhat=-Gd * ca + Bd * sa,
        alpha=alpha,
        alpha_edge=alpha[inc.src],
        ybus=ybus,
        inc=inc,
        inverter=inv,
    )


def edge_flows(model: ModelMatrices, theta, V):
    """Per-edge ``U``, argument, and the bus sums of ``U cos(arg)``, ``U sin(arg)``."""
    src, dst = model.src, model.dst
    arg = theta[src] - theta[dst] + model.edge_offset
    U = V[src] * V[dst] * model.ybus.Y
    Pflow = np.bincount(src, weights=U * np.cos(arg), minlength=model.n)
    Qflow = np.bincount(src, weights=U * np.sin(arg), minlength=model.n)
    return U, arg, Pflow, Qflow


def forces(model: ModelMatrices, theta, omega, V):
    """Right-hand sides of the two vector equations before division by M_P, M_Q."""
    _, _, Pflow, Qflow = edge_flows(model, theta, V)
    FP = model.P0 - model.D_P * omega - V ** 2 * model.Ghat - Pflow
    FQ = model.Q0 - model.D_Q * V + V ** 2 * model.Bhat - Qflow
    return FP, FQ


def rhs(model: ModelMatrices, x: State) -> State:
    """Time derivative of the state, returned as a :class:`State`."""
    if np.any(x.V <= 0):
        raise ModelError("voltage magnitudes must be positive")
    FP, FQ = forces(model, x.theta, x.omega, x.V)
    return State(theta=x.omega.copy(), omega=FP / model.M_P, V=FQ / model.M_Q)


def rhs_vector(model: ModelMatrices, x) -> np.ndarray:
    return rhs(model, State.from_vector(x)).to_vector()


@dataclass(frozen=True, eq=False)
class NetworkLinearization:
    """Edge weights and Laplacians of the network terms at a state."""

    U: np.ndarray
    arg: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    P_hat: np.ndarray
    Q_hat: np.ndarray


def linearize_network(model: ModelMatrices, theta, V) -> NetworkLinearization:
    U, arg, Pflow, Qflow = edge_flows(model, theta, V)
    W1 = -U * np.sin(arg)
    W2 = U * np.cos(arg)
    C, E = model.inc.C, model.inc.E
    return NetworkLinearization(
        U=U, arg=arg, W1=W1, W2=W2,
        L1=C @ (W1[:, None] * E.T),
        L2=C @ (W2[:, None] * E.T),
        P_hat=V ** 2 * model.Ghat + Pflow,
        Q_hat=-V ** 2 * model.Bhat + Qflow,
    )


def force_jacobian_blocks(model: ModelMatrices, lin: NetworkLinearization, V):
    """Partial derivatives of the two force vectors.

    Returns ``(dFP_dtheta, dFP_dV, dFQ_dtheta, dFQ_dV)``; the derivatives with
    respect to ``omega`` are ``-diag(D_P)`` and zero.
    """
    inv_v = 1.0 / V
    dFP_dth = -lin.L1
    dFP_dV = -(-lin.L2 + 2 * np.diag(lin.P_hat)) * inv_v[None, :]
    dFQ_dth = -lin.L2
    dFQ_dV = -(lin.L1 + np.diag(2 * lin.Q_hat + model.D_Q * V)) * inv_v[None, :]
    return dFP_dth, dFP_dV, dFQ_dth, dFQ_dV


def dae_residual(case: Case, ybus: YBus, x: State) -> np.ndarray:
    """Untransformed algebraic load-bus equations.

    Returns ``[rP(load buses); rQ(load buses)]`` with
    ``rP_i = p_i - V_i^2 G_ii - sum_k V_i V_k Y_ik cos(theta_i - theta_k - phi_ik)`` and
    ``rQ_i = q_i + V_i^2 B_ii - sum_k V_i V_k Y_ik sin(theta_i - theta_k - phi_ik)``,
    where ``p_i = -P_Li`` and ``q_i = -Q_Li`` are the case's net injections.
    """
    loads = np.flatnonzero(~case.inverter_mask)
    src = np.array([e[0] for e in ybus.edges], dtype=np.intp)
    dst = np.array([e[1] for e in ybus.edges], dtype=np.intp)
    th, V = x.theta, x.V
    U = V[src] * V[dst] * ybus.Y
    arg = th[src] - th[dst] - ybus.phi
    Pf = np.bincount(src, weights=U * np.cos(arg), minlength=case.n)
    Qf = np.bincount(src, weights=U * np.sin(arg), minlength=case.n)
    p = np.array([0.0 if b.p0_net is None else b.p0_net for b in case.buses])
    q = np.array([0.0 if b.q0_net is None else b.q0_net for b in case.buses])
    rP = p - V ** 2 * np.diag(ybus.G) - Pf
    rQ = q + V ** 2 * np.diag(ybus.B) - Qf
    return np.concatenate([rP[loads], rQ[loads]])


def transformed_load_residual(model: ModelMatrices, x: State) -> np.ndarray:
    """Rotated load-bus equations with the damping term dropped, same layout as :func:`dae_residual`."""
    FP, FQ = forces(model, x.theta, np.zeros(model.n), x.V)
    loads = np.flatnonzero(~model.inverter)
    return np.concatenate([FP[loads], FQ[loads]])
