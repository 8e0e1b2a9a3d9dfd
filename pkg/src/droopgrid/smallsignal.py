"""Linearization at an equilibrium: Jacobian, edge-weight graphs, decoupled blocks."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import (ModelMatrices, State, force_jacobian_blocks, linearize_network,
                       rhs_vector)


@dataclass(frozen=True, eq=False)
class SmallSignal:
    J: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    U_s: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    P_hat: np.ndarray
    Q_hat: np.ndarray
    L_lp: np.ndarray
    J_A: np.ndarray
    J_V: np.ndarray

    @property
    def n(self) -> int:
        return self.L1.shape[0]

    def matrices(self) -> dict:
        return {"J": self.J, "L1": self.L1, "L2": self.L2, "L_lp": self.L_lp, "J_A": self.J_A, "J_V": self.J_V}


def _theta_v(eq):
    if isinstance(eq, State):
        return eq.theta, eq.V
    return np.asarray(eq.theta_s, float), np.asarray(eq.V_s, float)


def edge_weights(model: ModelMatrices, eq) -> dict:
    """``U_s`` and the weights of the graphs G1 (``W1 = -U sin``) and G2 (``W2 = U cos``)."""
    theta, V = _theta_v(eq)
    lin = linearize_network(model, theta, V)
    return {"U_s": lin.U, "W1": lin.W1, "W2": lin.W2}


def _decoupled(model, L1, Q_hat, V):
    n = model.n
    J_A = np.block([
        [np.zeros((n, n)), np.eye(n)],
        [-L1 / model.M_P[:, None], -np.diag(model.D_P / model.M_P)],
    ])
    L_lp = L1 + np.diag(2 * Q_hat)
    J_V = -((L_lp + np.diag(model.D_Q * V)) / V[None, :]) / model.M_Q[:, None]
    return J_A, J_V, L_lp


def assemble_jacobian(model: ModelMatrices, eq) -> SmallSignal:
    """State matrix of the linearized model in Laplacian form.

    Row blocks act on ``[d theta; d omega; dV]``::

        [ 0               I           0                                     ]
        [ -M_P^-1 L1      -M_P^-1 D_P -M_P^-1 (-L2 + 2 diag P_hat) diag(V)^-1 ]
        [ -M_Q^-1 L2      0           -M_Q^-1 (L1 + 2 diag Q_hat + D_Q diag V) diag(V)^-1 ]
    """
    theta, V = _theta_v(eq)
    n = model.n
    if theta.shape != (n,) or V.shape != (n,):
        raise ValueError(f"equilibrium dimension {theta.shape} does not match model with {n} buses")
    lin = linearize_network(model, theta, V)
    dP_dth, dP_dV, dQ_dth, dQ_dV = force_jacobian_blocks(model, lin, V)
    mp, mq = model.M_P[:, None], model.M_Q[:, None]
    J = np.block([
        [np.zeros((n, n)), np.eye(n), np.zeros((n, n))],
        [dP_dth / mp, -np.diag(model.D_P / model.M_P), dP_dV / mp],
        [dQ_dth / mq, np.zeros((n, n)), dQ_dV / mq],
    ])
    J_A, J_V, L_lp = _decoupled(model, lin.L1, lin.Q_hat, V)
    return SmallSignal(J=J, W1=lin.W1, W2=lin.W2, U_s=lin.U, L1=lin.L1, L2=lin.L2,
                       P_hat=lin.P_hat, Q_hat=lin.Q_hat, L_lp=L_lp, J_A=J_A, J_V=J_V)


def decoupled_blocks(ss: SmallSignal, model: ModelMatrices, eq) -> dict:
    """Angle block ``J_A`` and voltage block ``J_V`` of the decoupled approximation."""
    _, V = _theta_v(eq)
    J_A, J_V, _ = _decoupled(model, ss.L1, ss.Q_hat, V)
    return {"J_A": J_A, "J_V": J_V}


def coupling_measure(ss: SmallSignal) -> dict:
    """``w2_max = max |W2|`` and the Frobenius share of the angle/voltage coupling blocks of J."""
    n = ss.n
    J = ss.J
    off = np.sqrt(np.sum(J[:2 * n, 2 * n:] ** 2) + np.sum(J[2 * n:, :2 * n] ** 2))
    total = np.linalg.norm(J)
    return {
        "w2_max": float(np.max(np.abs(ss.W2))) if ss.W2.size else 0.0,
        "offblock_ratio": float(off / total) if total > 0 else 0.0,
    }


def finite_difference_jacobian(f, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``, column by column.

    ``f`` is either a callable on flat state vectors or a
    :class:`~droopgrid.dynamics.ModelMatrices`, in which case the model
    right-hand side is differentiated.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(f, ModelMatrices):
        model = f
        f = lambda z: rhs_vector(model, z)  # noqa: E731
    x = x.to_vector() if isinstance(x, State) else np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = h
        cols.append((np.asarray(f(x + dx)) - np.asarray(f(x - dx))) / (2 * h))
    return np.column_stack(cols)


def relative_error(A, B) -> float:
    """``max|A - B| / max|B|``."""
    scale = np.max(np.abs(B))
    return float(np.max(np.abs(A - B)) / scale) if scale > 0 else float(np.max(np.abs(A - B)))


def format_matrix(name: str, M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float)) + 0.0  # drops negative zeros
    rows = [f"# matrix {name} n={M.shape[0]}"]
    rows += [",".join(f"{v:.12g}" for v in row) for row in M]
    return "\n".join(rows) + "\n"


def write_matrix_csv(path, name: str, M) -> Path:
    path = Path(path)
    path.write_text(format_matrix(name, M), encoding="utf-8")
    return path


def read_matrix_csv(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# matrix "):
        raise ValueError(f"{path}: missing '# matrix <name> n=<n>' header")
    return np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln])
