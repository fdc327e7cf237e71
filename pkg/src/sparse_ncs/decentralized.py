"""Riccati-based coupling margins and lower bounds on decentralized gain norms.

``solve_care`` computes the stabilizing solution of
``A^T P + P A - P B B^T P + Q = 0`` from the stable invariant subspace of the
Hamiltonian matrix. The decentralization bounds come from a small SDP that
maximizes the smallest eigenvalues of block-diagonal Lyapunov-like matrices
``Z`` (controller side) and ``P_hat`` (observer side); local gains
``K_i = -1/2 B_i^T Z_i^-1`` and ``M_i = -1/2 P_hat_i^-1 C_i^T`` then stabilize
the network with the requested margins and no communication links.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import lmi
from .lmi import MatExpr, SdpProblem
from .model import PlantNetwork, assemble_block_matrices, detect_poset, kalman_rank
from .numerics import (
    NoHyperbolicSplittingError,
    NumericsError,
    lambda_max,
    lambda_min,
    sigma_max,
    spd_inverse,
    spectral_abscissa,
    stable_invariant_subspace,
)
from .synthesis import GainSet

CAP_DEFAULT = 1e4
# upper eigenvalue cap of Z_i, P_hat_i as a multiple of the lambda_min cap
SPREAD = 10.0
ARE_RTOL = 1e-9
REFINE_STEPS = 3


class NotEstablished(Exception):
    """Decentralized stabilization could not be certified (it is not disproven)."""


class NotPoset(Exception):
    """The coupling graph has a directed cycle."""


@dataclass
class CareSolution:
    P: np.ndarray
    residual: float
    Q: np.ndarray

    @property
    def relative_residual(self) -> float:
        return self.residual / (1.0 + np.linalg.norm(self.P, 2) ** 2)


def care_residual(A, B, Q, P) -> float:
    return float(np.linalg.norm(A.T @ P + P @ A - P @ B @ B.T @ P + Q, 2))


def solve_care(A: np.ndarray, B: np.ndarray, Q: np.ndarray | None = None) -> CareSolution:
    """Stabilizing solution of the continuous-time ARE with unit input weight.

    Raises :class:`NumericsError` when the Hamiltonian has eigenvalues on the
    imaginary axis or the computed basis cannot be inverted.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if B.shape[0] != n or Q.shape != (n, n):
        raise NumericsError(f"care: incompatible shapes A{A.shape}, B{B.shape}, Q{Q.shape}")
    Ham = np.block([[A, -B @ B.T], [-Q, -A.T]])
    try:
        U = stable_invariant_subspace(Ham, n)
    except NoHyperbolicSplittingError as exc:
        raise NumericsError(f"no stabilizing solution: {exc}") from exc
    U1, U2 = U[:n], U[n:]
    if np.linalg.cond(U1) > 1e14:
        raise NumericsError("no stabilizing solution: stable subspace is not a graph")
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    res = care_residual(A, B, Q, P)
    # Newton (Kleinman) refinement: each step is one Lyapunov solve
    S = B @ B.T
    for _ in range(REFINE_STEPS):
        Acl = A - S @ P
        if spectral_abscissa(Acl) >= 0:
            break
        Pn = sla.solve_continuous_lyapunov(Acl.T, -(Q + P @ S @ P))
        Pn = 0.5 * (Pn + Pn.T)
        rn = care_residual(A, B, Q, Pn)
        if not rn < res:
            break
        P, res = Pn, rn
    scale = 1.0 + np.linalg.norm(P, 2) ** 2 * np.linalg.norm(B @ B.T, 2)
    if res > ARE_RTOL * scale * 1e3:
        raise NumericsError(f"ARE residual {res:.3e} too large")
    return CareSolution(P, res, Q)


@dataclass
class Theorem2Margins:
    l_margin: float
    o_margin: float
    P: np.ndarray
    Z_hat: np.ndarray
    K: np.ndarray
    M: np.ndarray

    @property
    def vacuous(self) -> tuple[bool, bool]:
        return self.l_margin <= 0, self.o_margin <= 0


def theorem2_margins(net: PlantNetwork, Q: np.ndarray | None = None,
                     Q_hat: np.ndarray | None = None) -> Theorem2Margins:
    """Coupling-norm margins from the controller and observer Riccati equations.

    Any coupling gains with ``||B L + H|| < l_margin`` and
    ``||O C + H|| < o_margin`` are stabilizing with the gains ``K``, ``M``
    returned here; a non-positive margin certifies nothing.
    """
    bm = assemble_block_matrices(net)
    nt = bm.A.shape[0]
    Q = np.eye(nt) if Q is None else Q
    Q_hat = np.eye(nt) if Q_hat is None else Q_hat
    bmax = max(net.beta)
    P = solve_care(bm.A, bm.B, Q).P
    Zh = solve_care(bm.A.T, bm.C.T, Q_hat).P
    lm = lambda_min(Q) / (2 * lambda_max(P)) - bmax
    om = lambda_min(Q_hat) / (2 * lambda_max(Zh)) - bmax
    return Theorem2Margins(lm, om, P, Zh, -0.5 * bm.B.T @ P, -0.5 * Zh @ bm.C.T)


def theorem2_certifies(net: PlantNetwork, margins: Theorem2Margins,
                       L: np.ndarray | None = None, O: np.ndarray | None = None) -> bool:
    """Margin predicate for assembled coupling gains ``L`` (m x n) and ``O`` (n x r)."""
    bm = assemble_block_matrices(net)
    L = np.zeros(bm.B.T.shape) if L is None else L
    O = np.zeros(bm.C.T.shape) if O is None else O
    return bool(sigma_max(bm.B @ L + bm.H) < margins.l_margin
                and sigma_max(O @ bm.C + bm.H) < margins.o_margin)


@dataclass
class DecentralizedBounds:
    kappa_lower: tuple[float, ...]
    mu_lower: tuple[float, ...]
    Z: list[np.ndarray]
    P_hat: list[np.ndarray]
    premise_controller: bool
    premise_observer: bool
    established_by: str
    at_cap: bool = False
    notes: list[str] = field(default_factory=list)

    def gains(self, net: PlantNetwork) -> GainSet:
        """Local gains of the decentralized construction; no coupling gains."""
        K = [-0.5 * s.B.T @ spd_inverse(Z) for s, Z in zip(net.subsystems, self.Z)]
        M = [-0.5 * spd_inverse(P) @ s.C.T for s, P in zip(net.subsystems, self.P_hat)]
        return GainSet(K, {}, M, {})

    def admits(self, kappa, mu, rtol: float = 1e-9) -> bool:
        """True when every budget is at least the corresponding lower bound."""
        ok_k = all(k >= kl * (1 - rtol) for k, kl in zip(kappa, self.kappa_lower))
        ok_m = all(m >= ml * (1 - rtol) for m, ml in zip(mu, self.mu_lower))
        return ok_k and ok_m


def _bounds_program(net: PlantNetwork, AH: np.ndarray, cap: float, eps_feas: float):
    bm = assemble_block_matrices(net)
    n = bm.n
    p = SdpProblem("decentralization bounds")
    Z = [p.matrix_var(f"Z{i + 1}", n[i], symmetric=True) for i in range(net.N)]
    P = [p.matrix_var(f"Phat{i + 1}", n[i], symmetric=True) for i in range(net.N)]
    s = [p.scalar(f"s{i + 1}", lo=0.0, hi=cap) for i in range(net.N)]
    sh = [p.scalar(f"shat{i + 1}", lo=0.0, hi=cap) for i in range(net.N)]
    Zb, Pb = MatExpr.block_diag(Z), MatExpr.block_diag(P)
    bZ = MatExpr.block_diag([b * z for b, z in zip(net.beta, Z)])
    bP = MatExpr.block_diag([b * q for b, q in zip(net.beta, P)])
    D1 = (AH @ Zb).sym() + 2 * bZ - bm.B @ bm.B.T
    D2 = (Pb @ AH).sym() + 2 * bP - bm.C.T @ bm.C
    p.add_lmi(-D1, strict=True, name="D1", eps_feas=eps_feas)
    p.add_lmi(-D2, strict=True, name="D2", eps_feas=eps_feas)
    for i in range(net.N):
        p.add_lmi(Z[i], strict=True, name=f"D3[{i + 1}]", eps_feas=eps_feas)
        p.add_lmi(P[i], strict=True, name=f"D4[{i + 1}]", eps_feas=eps_feas)
        lmi.eig_bound_as_lmi(p, Z[i], s[i], name=f"lmin Z{i + 1}")
        lmi.eig_bound_as_lmi(p, P[i], sh[i], name=f"lmin Phat{i + 1}")
        # keeps the feasible set compact; the objective only sees lambda_min <= cap
        p.add_lmi(SPREAD * cap * np.eye(n[i]) - Z[i], name=f"cap Z{i + 1}")
        p.add_lmi(SPREAD * cap * np.eye(n[i]) - P[i], name=f"cap Phat{i + 1}")
    p.set_objective(-1.0 * sum(s[1:] + sh, s[0]))
    return p, Z, P, s, sh


def _premises(net: PlantNetwork, Q, Q_hat) -> tuple[bool, bool, list[str]]:
    bm = assemble_block_matrices(net)
    nt = bm.A.shape[0]
    notes = []
    ctrl = kalman_rank(bm.B @ bm.B.T) == nt
    obs = kalman_rank(bm.C.T @ bm.C) == nt
    normH = sigma_max(bm.H)
    if not (ctrl and obs):
        try:
            m2 = theorem2_margins(net, Q, Q_hat)
            if not ctrl:
                ctrl = normH < m2.l_margin
                notes.append(f"controller premise: ||H|| = {normH:.4g} vs margin {m2.l_margin:.4g}")
            if not obs:
                obs = normH < m2.o_margin
                notes.append(f"observer premise: ||H|| = {normH:.4g} vs margin {m2.o_margin:.4g}")
        except NumericsError as exc:
            notes.append(f"Riccati margin unavailable: {exc}")
    return ctrl, obs, notes


def theorem3_bounds(
    net: PlantNetwork,
    Q: np.ndarray | None = None,
    Q_hat: np.ndarray | None = None,
    cap: float = CAP_DEFAULT,
    eps_feas: float = lmi.EPS_FEAS,
    require_premises: bool = False,
    _H_zero: bool = False,
) -> DecentralizedBounds:
    """Lower bounds on local gain norms under which no communication link is needed.

    The two disjunctive premises (``B B^T`` nonsingular or the Riccati
    margin exceeds ``||H||``, and the observer analogue) are evaluated and
    reported. They are sufficient for the bounds program to be feasible; when
    they fail but the program is still certified strictly feasible, the
    bounds are returned with ``established_by = "feasibility"`` unless
    ``require_premises`` is set. Raises :class:`NotEstablished` otherwise.
    """
    bm = assemble_block_matrices(net)
    AH = bm.A if _H_zero else bm.A + bm.H
    if _H_zero:
        pc, po, notes = True, True, ["coupling removed (poset network)"]
    else:
        pc, po, notes = _premises(net, Q, Q_hat)
    if require_premises and not (pc and po):
        raise NotEstablished("premises fail: " + "; ".join(notes))
    p, Z, P, s, sh = _bounds_program(net, AH, cap, eps_feas)
    rep = lmi.solve(p, eps_feas)
    if not rep.feasible:
        raise NotEstablished(f"bounds program not strictly feasible ({rep.status.value}: {rep.message})")
    Zv = [z.value(rep.x) for z in Z]
    Pv = [q.value(rep.x) for q in P]
    at_cap = any(v.value(rep.x)[0, 0] >= cap * (1 - 1e-3) for v in s + sh)
    if at_cap:
        notes.append("unbounded direction, bounds reported at cap")
    kl = tuple(0.5 * sigma_max(sub.B.T @ spd_inverse(z)) for sub, z in zip(net.subsystems, Zv))
    ml = tuple(0.5 * sigma_max(spd_inverse(q) @ sub.C.T) for sub, q in zip(net.subsystems, Pv))
    how = "poset" if _H_zero else ("premises" if pc and po else "feasibility")
    return DecentralizedBounds(kl, ml, Zv, Pv, pc, po, how, at_cap, notes)


def corollary1_bounds(net: PlantNetwork, cap: float = CAP_DEFAULT,
                      eps_feas: float = lmi.EPS_FEAS) -> DecentralizedBounds:
    """Bounds for acyclic coupling graphs, computed with the coupling removed."""
    if detect_poset(net) is None:
        raise NotPoset("coupling graph has a directed cycle")
    return theorem3_bounds(net, cap=cap, eps_feas=eps_feas, _H_zero=True)


def decentralized_closed_loop_abscissa(net: PlantNetwork, g: GainSet) -> tuple[float, float]:
    bm = assemble_block_matrices(net)
    K, _, M, _ = g.blocks(bm)
    AH = bm.A + bm.H
    return spectral_abscissa(AH + bm.B @ K), spectral_abscissa(AH + M @ bm.C)
