"""Transient simulation, disturbances, settling-time metrics and parameter sweeps."""
from __future__ import annotations

import hashlib
import io
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp

from .case_io import Case
from .dynamics import ModelMatrices, State, build_model
from .equilibrium import Equilibrium, calibrate_references, solve_equilibrium

DIVERGENCE_LIMIT = 1e6


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution; ``theta``, ``omega`` and ``V`` are (n, steps) arrays."""

    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    V: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def diverged(self) -> bool:
        return bool(self.metadata.get("diverged", False))

    def final_state(self) -> State:
        return State(self.theta[:, -1].copy(), self.omega[:, -1].copy(), self.V[:, -1].copy())

    def to_csv(self) -> str:
        n = self.n
        header = (["t"] + [f"theta_{i + 1}" for i in range(n)] + [f"omega_{i + 1}" for i in range(n)]
                  + [f"v_{i + 1}" for i in range(n)])
        data = np.column_stack([self.t, self.theta.T, self.omega.T, self.V.T])
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        np.savetxt(buf, data, fmt="%.12g", delimiter=",")
        return buf.getvalue()


@dataclass(frozen=True)
class DisturbanceSpec:
    """Additive offsets applied to the equilibrium at t = 0.

    ``d_theta``/``d_V`` map zero-based bus index to offset.  If ``magnitude``
    is set, every bus additionally receives a voltage offset drawn uniformly
    from [-magnitude, magnitude] with ``numpy.random.default_rng(seed)``; with
    ``angles=True`` an angle offset (rad) is drawn the same way first.
    """

    d_theta: dict = field(default_factory=dict)
    d_V: dict = field(default_factory=dict)
    magnitude: float | None = None
    seed: int = 0
    angles: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "DisturbanceSpec":
        """Parse ``{"theta": {bus_id: rad}, "v": {bus_id: pu}, "random": {"magnitude", "seed", "angles"}}``.

        Bus ids are one-based.
        """
        try:
            th = {int(k) - 1: float(v) for k, v in (doc.get("theta") or {}).items()}
            dv = {int(k) - 1: float(v) for k, v in (doc.get("v") or {}).items()}
            rnd = doc.get("random") or {}
            mag = rnd.get("magnitude")
            return cls(th, dv, None if mag is None else float(mag), int(rnd.get("seed", 0)),
                       bool(rnd.get("angles", False)))
        except (AttributeError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed disturbance document: {exc}") from None

    @classmethod
    def default(cls, case: Case, dv: float = 0.01) -> "DisturbanceSpec":
        """+0.01 p.u. on every inverter voltage, no angle offset."""
        return cls(d_V={k: dv for k, b in enumerate(case.buses) if b.is_inverter})


def apply_disturbance(eq: Equilibrium, spec: DisturbanceSpec) -> State:
    n = eq.n
    dth = np.zeros(n)
    dV = np.zeros(n)
    for k, v in spec.d_theta.items():
        if not 0 <= k < n:
            raise ValueError(f"disturbance names bus {k + 1}, case has {n} buses")
        dth[k] += v
    for k, v in spec.d_V.items():
        if not 0 <= k < n:
            raise ValueError(f"disturbance names bus {k + 1}, case has {n} buses")
        dV[k] += v
    if spec.magnitude:
        rng = np.random.default_rng(spec.seed)
        if spec.angles:
            dth += rng.uniform(-spec.magnitude, spec.magnitude, size=n)
        dV += rng.uniform(-spec.magnitude, spec.magnitude, size=n)
    if not (np.all(np.isfinite(dth)) and np.all(np.isfinite(dV))):
        raise ValueError("disturbance offsets must be finite")
    V = eq.V_s + dV
    if np.any(V <= 0):
        raise ValueError("disturbance drives a voltage non-positive")
    return State(eq.theta_s + dth, np.full(n, eq.omega_s), V)


@njit(cache=True)
def _rhs_kernel(x, out, n, src, dst, Y, off, P0, Q0, DP, DQ, MP, MQ, Gh, Bh):
    for i in range(n):
        w = x[n + i]
        v = x[2 * n + i]
        out[i] = w
        out[n + i] = P0[i] - DP[i] * w - v * v * Gh[i]
        out[2 * n + i] = Q0[i] - DQ[i] * v + v * v * Bh[i]
    for m in range(src.shape[0]):
        i = src[m]
        k = dst[m]
        a = x[i] - x[k] + off[m]
        u = x[2 * n + i] * x[2 * n + k] * Y[m]
        out[n + i] -= u * math.cos(a)
        out[2 * n + i] -= u * math.sin(a)
    for i in range(n):
        out[n + i] /= MP[i]
        out[2 * n + i] /= MQ[i]


@njit(cache=True)
def _rk4_kernel(x0, dt, nsteps, save_every, n, src, dst, Y, off, P0, Q0, DP, DQ, MP, MQ, Gh, Bh, limit):
    nx = x0.shape[0]
    nsave = nsteps // save_every + 1
    out = np.empty((nsave, nx))
    x = x0.copy()
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    tmp = np.empty(nx)
    out[0] = x
    j = 1
    status = 0
    for s in range(1, nsteps + 1):
        _rhs_kernel(x, k1, n, src, dst, Y, off, P0, Q0, DP, DQ, MP, MQ, Gh, Bh)
        for q in range(nx):
            tmp[q] = x[q] + 0.5 * dt * k1[q]
        _rhs_kernel(tmp, k2, n, src, dst, Y, off, P0, Q0, DP, DQ, MP, MQ, Gh, Bh)
        for q in range(nx):
            tmp[q] = x[q] + 0.5 * dt * k2[q]
        _rhs_kernel(tmp, k3, n, src, dst, Y, off, P0, Q0, DP, DQ, MP, MQ, Gh, Bh)
        for q in range(nx):
            tmp[q] = x[q] + dt * k3[q]
        _rhs_kernel(tmp, k4, n, src, dst, Y, off, P0, Q0, DP, DQ, MP, MQ, Gh, Bh)
        for q in range(nx):
            x[q] += dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
        bad = False
        for q in range(nx):
            if not np.isfinite(x[q]):
                status = 2
                bad = True
                break
            if abs(x[q]) > limit:
                status = 1
                bad = True
                break
        if bad:
            break
        if s % save_every == 0:
            out[j] = x
            j += 1
    return out[:j], status


def _kernel_args(model: ModelMatrices):
    return (model.n, model.src.astype(np.int64), model.dst.astype(np.int64),
            np.ascontiguousarray(model.ybus.Y, dtype=np.float64), np.ascontiguousarray(model.edge_offset),
            model.P0, model.Q0, model.D_P, model.D_Q, model.M_P, model.M_Q, model.Ghat, model.Bhat)


def model_rhs_fast(model: ModelMatrices):
    """Compiled ``f(x) -> dx/dt`` on flat state vectors, numerically identical to :func:`dynamics.rhs`."""
    args = _kernel_args(model)

    def f(x):
        out = np.empty(3 * model.n)
        _rhs_kernel(np.ascontiguousarray(x, dtype=np.float64), out, *args)
        return out

    return f


def model_hash(model: ModelMatrices) -> str:
    h = hashlib.sha256()
    for a in (model.M_P, model.D_P, model.M_Q, model.D_Q, model.P0, model.Q0, model.Ghat, model.Bhat,
              model.ybus.Y, model.edge_offset, model.src, model.dst):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def stiffness_timescale(model: ModelMatrices) -> float:
    """Smallest of eps1/eps2, eps3 and the inverter filter constants T1, T2."""
    tau = [model.M_P[i] / model.D_P[i] for i in range(model.n)]
    tau += [model.M_Q[i] / model.D_Q[i] if model.D_Q[i] > 0 else model.M_Q[i] for i in range(model.n)]
    return float(min(tau))


def _rk4_python(f, x0, dt, nsteps, save_every):
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    status = 0
    for s in range(1, nsteps + 1):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            status = 2
            break
        if np.any(np.abs(x) > DIVERGENCE_LIMIT):
            status = 1
            break
        if s % save_every == 0:
            out.append(x.copy())
    return np.array(out), status


def integrate(model, x0, t_end: float, dt: float, method: str = "rk4", *,
              output_dt: float | None = None, rtol: float = 1e-8, atol: float = 1e-8) -> Trajectory:
    """Integrate the model (or any ``f(x)`` callable) from ``x0``.

    ``rk4`` is classical fixed-step Runge-Kutta with step ``dt``; ``rk45`` is
    the adaptive Dormand-Prince pair with per-step tolerances ``rtol``/``atol``
    sampled on the same grid.  Samples are kept every ``output_dt`` seconds
    (default ``dt``; must be a multiple of ``dt``).  A state entry exceeding
    1e6 in magnitude truncates the trajectory and sets ``metadata['diverged']``;
    NaN raises :class:`SimulationError`.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    output_dt = dt if output_dt is None else output_dt
    save_every = int(round(output_dt / dt))
    if save_every < 1 or abs(save_every * dt - output_dt) > 1e-9 * output_dt:
        raise ValueError("output_dt must be a positive multiple of dt")
    nsteps = int(round(t_end / dt))
    x0 = x0.to_vector() if isinstance(x0, State) else np.asarray(x0, dtype=float)

    is_model = isinstance(model, ModelMatrices)
    meta = {"method": method, "dt": dt, "output_dt": output_dt, "t_end": t_end}
    if is_model:
        meta["case_hash"] = model_hash(model)
        tau = stiffness_timescale(model)
        if dt > 0.05 * tau:
            warnings.warn(f"dt={dt:g} s is not small against the fastest model time scale {tau:g} s", stacklevel=2)

    if method == "rk4":
        if is_model:
            xs, status = _rk4_kernel(np.ascontiguousarray(x0), dt, nsteps, save_every, *_kernel_args(model),
                                     DIVERGENCE_LIMIT)
        else:
            xs, status = _rk4_python(model, x0, dt, nsteps, save_every)
        t = np.arange(xs.shape[0]) * output_dt
    elif method == "rk45":
        f = model_rhs_fast(model) if is_model else model

        def blowup(_t, x):
            return DIVERGENCE_LIMIT - np.max(np.abs(x))
        blowup.terminal = True

        grid = np.arange(nsteps // save_every + 1) * output_dt
        sol = solve_ivp(lambda _t, x: f(x), (0.0, grid[-1]), x0, method="RK45", t_eval=grid,
                        rtol=rtol, atol=atol, events=blowup)
        xs = sol.y.T
        t = sol.t
        status = 1 if sol.status == 1 else 0
        if sol.status == -1 or not np.all(np.isfinite(xs)):
            status = 2
    else:
        raise ValueError(f"unknown method {method!r}; use 'rk4' or 'rk45'")

    if status == 2:
        raise SimulationError(f"non-finite state encountered during {method} integration")
    meta["diverged"] = status == 1
    n = x0.size // 3
    return Trajectory(t=t, theta=xs[:, :n].T.copy(), omega=xs[:, n:2 * n].T.copy(), V=xs[:, 2 * n:].T.copy(),
                      metadata=meta)


def settling_time(t, y, band: float = 0.02, tail: float = 0.05) -> float:
    """Settling time of one signal; NaN when the final window has not settled.

    ``y(inf)`` is the mean over the last ``tail`` fraction of samples.  The
    signal has settled at the smallest ``t*`` after which
    ``|y - y(inf)| <= band * |y(0) - y(inf)|``.
    """
    t = np.asarray(t)
    y = np.asarray(y)
    k = max(1, int(math.ceil(tail * y.size)))
    y_inf = float(np.mean(y[-k:]))
    amp = abs(y[0] - y_inf)
    if amp < 1e-9:
        return 0.0
    if np.ptp(y[-k:]) >= band / 10 * amp:
        return math.nan
    outside = np.flatnonzero(np.abs(y - y_inf) > band * amp)
    if outside.size == 0:
        return float(t[0])
    last = outside[-1]
    return float(t[last + 1]) if last + 1 < t.size else math.nan


def settling_times(traj: Trajectory, band: float = 0.02, frame_omega: float | None = None) -> dict:
    """Per-bus settling times of ``theta`` and ``V`` (NaN = undefined).

    Angles are measured in the frame rotating at ``frame_omega`` (default the
    trajectory's ``metadata['frame_omega']`` or 0), so that a synchronous
    drift does not count as motion.
    """
    if frame_omega is None:
        frame_omega = traj.metadata.get("frame_omega", 0.0)
    theta = traj.theta - frame_omega * traj.t[None, :]
    nan = np.full(traj.n, math.nan)
    if traj.diverged:
        return {"theta": nan, "V": nan.copy()}
    return {
        "theta": np.array([settling_time(traj.t, theta[i], band) for i in range(traj.n)]),
        "V": np.array([settling_time(traj.t, traj.V[i], band) for i in range(traj.n)]),
    }


@dataclass
class SweepPlan:
    param: str
    values: tuple
    overrides: dict = field(default_factory=dict)
    disturbance: DisturbanceSpec | None = None
    alpha: object = "auto"
    t_end: float = 30.0
    dt: float = 1e-4
    output_dt: float = 1e-3
    method: str = "rk4"
    band: float = 0.02


@dataclass
class SweepRun:
    value: float
    equilibrium: Equilibrium
    trajectory: Trajectory
    settling: dict
    stable: bool

    @property
    def settled(self) -> bool:
        """Every signal settled inside the simulated window."""
        return all(bool(np.all(np.isfinite(v))) for v in self.settling.values())


def _run_one(case, target, plan, value):
    params = dict(plan.overrides)
    params[plan.param.lower()] = value
    c = case.with_params(**params)
    if target is not None:
        c = calibrate_references(c, target, alpha=plan.alpha)
    model = build_model(c, alpha=plan.alpha)
    eq = solve_equilibrium(c, model=model, guess=target)
    spec = plan.disturbance or DisturbanceSpec.default(c)
    x0 = apply_disturbance(eq, spec)
    traj = integrate(model, x0, plan.t_end, plan.dt, plan.method, output_dt=plan.output_dt)
    traj.metadata["frame_omega"] = eq.omega_s
    traj.metadata[plan.param] = value
    st = settling_times(traj, plan.band)
    return SweepRun(value, eq, traj, st, not traj.diverged)


def sweep(case: Case, plan: SweepPlan, target=None) -> list[SweepRun]:
    """One simulation per parameter value with a shared disturbance.

    If ``target`` is given, references are re-calibrated against it for every
    run (the calibrated injections depend on the droop gains whenever
    ``V0`` differs from the target voltage).  Runs are returned in the order of
    ``plan.values``; unstable runs are flagged, not raised.  The environment
    variable ``DROOPGRID_THREADS`` caps the number of worker threads.
    """
    if plan.param.upper() not in ("T1", "T2", "D1", "D2"):
        raise ValueError(f"sweep parameter must be one of T1, T2, D1, D2, got {plan.param!r}")
    threads = max(1, int(os.environ.get("DROOPGRID_THREADS", "1")))
    values = [float(v) for v in plan.values]
    if threads == 1 or len(values) == 1:
        return [_run_one(case, target, plan, v) for v in values]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda v: _run_one(case, target, plan, v), values))


def sweep_summary_csv(runs: list[SweepRun], case: Case | None = None) -> str:
    rows = ["param_value,bus,signal,settling_time_s,converged"]
    for run in runs:
        for signal, key in (("theta", "theta"), ("v", "V")):
            for i, ts in enumerate(run.settling[key]):
                ok = bool(np.isfinite(ts))
                rows.append(f"{run.value:.12g},{i + 1},{signal},{ts:.12g},{str(ok).lower()}" if ok
                            else f"{run.value:.12g},{i + 1},{signal},,false")
    return "\n".join(rows) + "\n"


def fit_decay_rate(t, y, start: float, stop: float | None = None) -> float:
    """Slope of ``log|y|`` over ``[start, stop]`` by least squares."""
    t = np.asarray(t)
    y = np.abs(np.asarray(y))
    sel = (t >= start) & (t <= (t[-1] if stop is None else stop)) & (y > 0)
    A = np.column_stack([t[sel], np.ones(sel.sum())])
    slope, _ = np.linalg.lstsq(A, np.log(y[sel]), rcond=None)[0]
    return float(slope)
