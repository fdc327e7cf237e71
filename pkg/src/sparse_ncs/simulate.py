"""Time-domain verification of designed observer-controller networks.

The closed loop is simulated in the cascade coordinates ``(x, e)`` with
``e = x_hat - x``: the error evolves autonomously under ``A_e`` and drives
the state through ``B (K + L)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import PlantNetwork
from .numerics import DivergenceError, rk4_integrate
from .synthesis import Certificates, GainSet, closed_loop_matrices

DEFAULT_DT = 1e-3
DEFAULT_T = 10.0
DECAY_TOL = 1e-6
BLOWUP = 1e12


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    e: np.ndarray
    dims: tuple[int, ...]
    diverged: bool = False
    diverged_at: float | None = None

    @property
    def x_hat(self) -> np.ndarray:
        return self.x + self.e

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def header(self) -> list[str]:
        names = ["t"]
        for prefix in ("x", "e"):
            names += [f"{prefix}_{i + 1}_{k + 1}" for i, n in enumerate(self.dims) for k in range(n)]
        return names

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for t, xr, er in zip(self.times, self.x, self.e):
            w.writerow([f"{v:.17g}" for v in (t, *xr, *er)])
        return buf.getvalue()


@dataclass
class DecayReport:
    passed: bool
    worst_ratio: float
    allowance: float
    worst_step: int
    beta_min: float

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max V(t+dt) / (V(t) exp(-2 beta dt)) = {self.worst_ratio:.9g} "
                f"(limit {1 + DECAY_TOL + self.allowance:.9g}, step {self.worst_step})")


def simulate_closed_loop(
    net: PlantNetwork,
    g: GainSet,
    x0,
    e0=None,
    T: float = DEFAULT_T,
    dt: float = DEFAULT_DT,
) -> Trajectory:
    """RK4 simulation of the cascade ``[[A_x, B(K+L)], [0, A_e]]`` on a uniform grid.

    A trajectory that blows up is truncated at the last finite step and
    flagged ``diverged``.
    """
    if not (0 < dt <= T):
        raise ValueError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    cl = closed_loop_matrices(net, g)
    n = cl.A_x.shape[0]
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    e0 = np.zeros(n) if e0 is None else np.asarray(e0, dtype=float).reshape(-1)
    if x0.shape != (n,) or e0.shape != (n,):
        raise ValueError(f"initial conditions must have length {n}")
    steps = int(round(T / dt))
    dims = net.dims[0]
    try:
        traj = rk4_integrate(cl.cascade, np.concatenate([x0, e0]), dt, steps, blowup=BLOWUP)
        diverged, at = False, None
    except DivergenceError as exc:
        traj = exc.partial
        diverged, at = True, exc.step * dt
    times = dt * np.arange(traj.shape[0])
    return Trajectory(times, traj[:, :n], traj[:, n:], tuple(dims), diverged, at)


def rk4_allowance(A: np.ndarray, dt: float) -> float:
    """Relative one-step RK4 error allowance, a multiple of the local truncation term ``(h ||A||)^5 / 120``."""
    h = dt * np.linalg.norm(A, 2)
    return 10.0 * h ** 5 / 120.0


def verify_decay(
    traj: Trajectory,
    certs: Certificates,
    beta_min: float,
    A_x: np.ndarray | None = None,
) -> DecayReport:
    """Audit ``V(t) = x^T P x`` against the certified rate ``exp(-2 beta_min t)`` step by step.

    Intended for trajectories started with ``e0 = 0``, where ``x`` evolves
    under ``A_x`` alone. ``A_x`` (when given) sets the RK4 error allowance;
    otherwise only the fixed tolerance applies. Steps where ``V`` has
    decayed to the floating-point floor are skipped.
    """
    P = sla.block_diag(*certs.P)
    V = np.einsum("ti,ij,tj->t", traj.x, P, traj.x)
    allowance = rk4_allowance(A_x, traj.dt) if A_x is not None and traj.dt > 0 else 0.0
    if traj.diverged:
        return DecayReport(False, math.inf, allowance, len(V) - 1, beta_min)
    floor = 1e-28 * (V[0] if V.size else 0.0)
    decay = math.exp(-2.0 * beta_min * traj.dt)
    worst, at = 0.0, 0
    for k in range(len(V) - 1):
        if V[k] <= floor:
            break
        r = V[k + 1] / (V[k] * decay)
        if r > worst:
            worst, at = r, k
    return DecayReport(bool(worst <= 1.0 + DECAY_TOL + allowance), float(worst), allowance, at, beta_min)


def decay_check(net: PlantNetwork, g: GainSet, certs: Certificates, x0, T: float = DEFAULT_T,
                dt: float = DEFAULT_DT) -> DecayReport:
    """Simulate from ``(x0, 0)`` and audit the decay with the design's own margin."""
    traj = simulate_closed_loop(net, g, x0, None, T, dt)
    return verify_decay(traj, certs, min(net.beta), closed_loop_matrices(net, g).A_x)
