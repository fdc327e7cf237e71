"""Theorem-1 program construction, gain recovery and Lyapunov certification.

The synthesis LMIs are written in the change of variables ``Z = P^-1``,
``W = K Z``, ``Y = L Z`` (controller side) and ``W_hat = P_hat M``,
``Y_hat = P_hat O`` (observer side). Both sides share the link indicators
``alpha_ij`` but no matrix variables, so each side can also be built and
solved on its own.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import lmi
from .lmi import MatExpr, SdpProblem, SolveReport, Status
from .model import (
    BlockMatrices,
    GainBounds,
    Link,
    LinkPattern,
    PlantNetwork,
    assemble_block_matrices,
)
from .numerics import sigma_max, spd_solve, spectral_abscissa

RHO_DEFAULT = 1e6
BOUND_RTOL = 1e-9
REWEIGHT_FLOOR = 1e-3


@dataclass
class Theorem1Solution:
    Z: list[np.ndarray]
    W: list[np.ndarray]
    Y: dict[Link, np.ndarray]
    P_hat: list[np.ndarray]
    W_hat: list[np.ndarray]
    Y_hat: dict[Link, np.ndarray]
    alpha: dict[Link, float]

    def scaled(self, c: float) -> "Theorem1Solution":
        return Theorem1Solution(
            [c * z for z in self.Z], [c * w for w in self.W], {k: c * v for k, v in self.Y.items()},
            [c * p for p in self.P_hat], [c * w for w in self.W_hat],
            {k: c * v for k, v in self.Y_hat.items()}, dict(self.alpha),
        )


@dataclass
class GainSet:
    K: list[np.ndarray]
    L: dict[Link, np.ndarray]
    M: list[np.ndarray]
    O: dict[Link, np.ndarray]
    warnings: list[str] = field(default_factory=list)

    def blocks(self, bm: BlockMatrices) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Assembled (K, L, M, O) block matrices."""
        ns, ms, rs = bm.slices("n"), bm.slices("m"), bm.slices("r")
        nt, mt, rt = sum(bm.n), sum(bm.m), sum(bm.r)
        K, L = np.zeros((mt, nt)), np.zeros((mt, nt))
        M, O = np.zeros((nt, rt)), np.zeros((nt, rt))
        for i, Ki in enumerate(self.K):
            K[ms[i], ns[i]] = Ki
        for (i, j), Lij in self.L.items():
            L[ms[i], ns[j]] = Lij
        for i, Mi in enumerate(self.M):
            M[ns[i], rs[i]] = Mi
        for (i, j), Oij in self.O.items():
            O[ns[i], rs[j]] = Oij
        return K, L, M, O

    @classmethod
    def zeros(cls, net: PlantNetwork) -> "GainSet":
        s = net.subsystems
        return cls([np.zeros((x.m, x.n)) for x in s], {}, [np.zeros((x.n, x.r)) for x in s], {})

    def used_links(self, tol: float = 0.0) -> set[Link]:
        out = {k for k, v in self.L.items() if np.max(np.abs(v), initial=0.0) > tol}
        return out | {k for k, v in self.O.items() if np.max(np.abs(v), initial=0.0) > tol}


@dataclass
class Certificates:
    P: list[np.ndarray]
    P_hat: list[np.ndarray]
    margins: dict[str, float]
    status: Status = Status.STRICTLY_FEASIBLE

    @property
    def certified(self) -> bool:
        return self.status is Status.STRICTLY_FEASIBLE


@dataclass
class Theorem1Program:
    problem: SdpProblem
    pattern: LinkPattern
    side: str
    Z: list[MatExpr] = field(default_factory=list)
    W: list[MatExpr] = field(default_factory=list)
    Y: dict = field(default_factory=dict)
    P_hat: list[MatExpr] = field(default_factory=list)
    W_hat: list[MatExpr] = field(default_factory=list)
    Y_hat: dict = field(default_factory=dict)
    tau: list[MatExpr | None] = field(default_factory=list)
    tau_hat: list[MatExpr | None] = field(default_factory=list)

    def extract(self, x: np.ndarray) -> Theorem1Solution:
        v = lambda e: e.value(x)  # noqa: E731
        alpha = {l: 1.0 for l in self.pattern.active}
        return Theorem1Solution(
            [v(z) for z in self.Z], [v(w) for w in self.W], {k: v(e) for k, e in self.Y.items()},
            [v(p) for p in self.P_hat], [v(w) for w in self.W_hat],
            {k: v(e) for k, e in self.Y_hat.items()}, alpha,
        )


def _beta_blockdiag(net: PlantNetwork, blocks: list[MatExpr]) -> MatExpr:
    return MatExpr.block_diag([b * beta for b, beta in zip(blocks, net.beta)])


def build_theorem1_program(
    net: PlantNetwork,
    bounds: GainBounds,
    pattern: LinkPattern,
    side: str = "both",
    rho: float = RHO_DEFAULT,
    eps_feas: float = lmi.EPS_FEAS,
    coupling_margin: float | None = None,
    effort_weights: dict | None = None,
    effort_cap: float = math.inf,
) -> Theorem1Program:
    """Constraints C1-C8 for a fixed binary link pattern.

    With ``coupling_margin`` set, C1/C2 must hold with that margin and the
    program gets the objective "minimize the sum of bounds on
    ``sigma_max(Y_ij)`` (resp. ``Y_hat_ij``)", which selects a feasible point
    that uses as little coupling as the margin allows. ``effort_weights``
    maps ``("c" | "o", link)`` to the objective weight of that bound and
    ``effort_cap`` bounds the effort scalars so the barrier stays compact.

    The homogeneous program is normalised by ``I <= Z_i, P_hat_i <= rho I``.
    Each norm budget is encoded through one auxiliary scalar per diagonal
    block (``tau_i <= lambda_min(Z_i)``) and a singular-value LMI; infinite
    budgets drop their constraint and zero budgets fix the gain variable to 0.
    """
    if side not in ("both", "controller", "observer"):
        raise ValueError(f"unknown side {side!r}")
    bounds.check(net.N)
    bm = assemble_block_matrices(net)
    n, m, r = bm.n, bm.m, bm.r
    N = net.N
    AH = bm.A + bm.H
    p = SdpProblem(f"theorem1[{side}]")
    prog = Theorem1Program(p, pattern, side)
    active = pattern.ordered_active()
    for i, j in active:
        if not (0 <= i < N and 0 <= j < N):
            raise ValueError(f"link ({i + 1},{j + 1}) outside a {N}-subsystem network")

    if side in ("both", "controller"):
        Z = [p.matrix_var(f"Z{i + 1}", n[i], symmetric=True) for i in range(N)]
        W = [MatExpr.zeros(m[i], n[i]) if bounds.kappa[i] == 0 else p.matrix_var(f"W{i + 1}", m[i], n[i])
             for i in range(N)]
        Y = {}
        for (i, j) in active:
            Y[(i, j)] = (MatExpr.zeros(m[i], n[j]) if bounds.iota_of(i, j) == 0
                         else p.matrix_var(f"Y{i + 1}{j + 1}", m[i], n[j]))
        need_tau = [math.isfinite(bounds.kappa[i]) and bounds.kappa[i] > 0 for i in range(N)]
        for (i, j) in active:
            if math.isfinite(bounds.iota_of(i, j)) and bounds.iota_of(i, j) > 0:
                need_tau[j] = True
        tau = [p.scalar(f"tau{i + 1}") if need_tau[i] else None for i in range(N)]
        Zb = MatExpr.block_diag(Z)
        WY = MatExpr.bmat([[W[i] if i == j else (Y.get((i, j)) or MatExpr.zeros(m[i], n[j]))
                            for j in range(N)] for i in range(N)])
        F = AH @ Zb + bm.B @ WY + _beta_blockdiag(net, Z)
        p.add_lmi(-F.sym(), strict=True, name="C1", eps_feas=eps_feas, margin=coupling_margin)
        if coupling_margin is not None:
            effort = [p.scalar(f"e{i + 1}{j + 1}", lo=0.0, hi=effort_cap) for (i, j) in active]
            for e, l in zip(effort, active):
                lmi.sv_bound_as_lmi(p, Y[l], e, name=f"effort Y{l[0] + 1}{l[1] + 1}")
            if effort:
                w = effort_weights or {}
                p.set_objective({e.idx[0]: w.get(("c", l), 1.0) for e, l in zip(effort, active)})
        for i in range(N):
            p.add_lmi(Z[i] - np.eye(n[i]), name=f"C3/norm Z{i + 1}")
            p.add_lmi(rho * np.eye(n[i]) - Z[i], name=f"cap Z{i + 1}")
            if tau[i] is not None:
                lmi.eig_bound_as_lmi(p, Z[i], tau[i], name=f"lmin Z{i + 1}")
            if need_tau[i] and math.isfinite(bounds.kappa[i]) and bounds.kappa[i] > 0:
                lmi.sv_bound_as_lmi(p, W[i], tau[i] * bounds.kappa[i], name=f"C5[{i + 1}]")
        for (i, j) in active:
            io = bounds.iota_of(i, j)
            if math.isfinite(io) and io > 0:
                lmi.sv_bound_as_lmi(p, Y[(i, j)], tau[j] * io, name=f"C6[{i + 1}{j + 1}]")
        prog.Z, prog.W, prog.Y, prog.tau = Z, W, Y, tau

    if side in ("both", "observer"):
        P = [p.matrix_var(f"Phat{i + 1}", n[i], symmetric=True) for i in range(N)]
        Wh = [MatExpr.zeros(n[i], r[i]) if bounds.mu[i] == 0 else p.matrix_var(f"What{i + 1}", n[i], r[i])
              for i in range(N)]
        Yh = {}
        for (i, j) in active:
            Yh[(i, j)] = (MatExpr.zeros(n[i], r[j]) if bounds.omega_of(i, j) == 0
                          else p.matrix_var(f"Yhat{i + 1}{j + 1}", n[i], r[j]))
        need = [math.isfinite(bounds.mu[i]) and bounds.mu[i] > 0 for i in range(N)]
        for (i, j) in active:
            if math.isfinite(bounds.omega_of(i, j)) and bounds.omega_of(i, j) > 0:
                need[i] = True
        tauh = [p.scalar(f"tauhat{i + 1}") if need[i] else None for i in range(N)]
        Pb = MatExpr.block_diag(P)
        WYh = MatExpr.bmat([[Wh[i] if i == j else (Yh.get((i, j)) or MatExpr.zeros(n[i], r[j]))
                             for j in range(N)] for i in range(N)])
        Fh = Pb @ AH + WYh @ bm.C + _beta_blockdiag(net, P)
        p.add_lmi(-Fh.sym(), strict=True, name="C2", eps_feas=eps_feas, margin=coupling_margin)
        if coupling_margin is not None:
            effort = [p.scalar(f"ehat{i + 1}{j + 1}", lo=0.0, hi=effort_cap) for (i, j) in active]
            for e, l in zip(effort, active):
                lmi.sv_bound_as_lmi(p, Yh[l], e, name=f"effort Yhat{l[0] + 1}{l[1] + 1}")
            if effort:
                w = effort_weights or {}
                p.set_objective({e.idx[0]: w.get(("o", l), 1.0) for e, l in zip(effort, active)})
        for i in range(N):
            p.add_lmi(P[i] - np.eye(n[i]), name=f"C4/norm Phat{i + 1}")
            p.add_lmi(rho * np.eye(n[i]) - P[i], name=f"cap Phat{i + 1}")
            if tauh[i] is not None:
                lmi.eig_bound_as_lmi(p, P[i], tauh[i], name=f"lmin Phat{i + 1}")
            if math.isfinite(bounds.mu[i]) and bounds.mu[i] > 0:
                lmi.sv_bound_as_lmi(p, Wh[i], tauh[i] * bounds.mu[i], name=f"C7[{i + 1}]")
        for (i, j) in active:
            om = bounds.omega_of(i, j)
            if math.isfinite(om) and om > 0:
                lmi.sv_bound_as_lmi(p, Yh[(i, j)], tauh[i] * om, name=f"C8[{i + 1}{j + 1}]")
        prog.P_hat, prog.W_hat, prog.Y_hat, prog.tau_hat = P, Wh, Yh, tauh
    return prog


@dataclass
class Theorem1Result:
    report_controller: SolveReport | None
    report_observer: SolveReport | None
    solution: Theorem1Solution | None

    @property
    def status(self) -> Status:
        reps = [r for r in (self.report_controller, self.report_observer) if r is not None]
        if all(r.status is Status.STRICTLY_FEASIBLE for r in reps):
            return Status.STRICTLY_FEASIBLE
        if any(r.status is Status.INFEASIBLE for r in reps):
            return Status.INFEASIBLE
        return Status.INDETERMINATE

    @property
    def feasible(self) -> bool:
        return self.status is Status.STRICTLY_FEASIBLE

    @property
    def margin(self) -> float:
        return max(r.t for r in (self.report_controller, self.report_observer) if r is not None)


def _effort_cap(prog: Theorem1Program, x: np.ndarray) -> float:
    """Upper bound for the effort scalars, generous against the phase-I point."""
    ys = [e.value(x) for e in (*prog.Y.values(), *prog.Y_hat.values())]
    return 10.0 * (1.0 + max((sigma_max(y) for y in ys), default=0.0))


def _solve_side(net, bounds, pattern, side, rho, eps_feas, stop_early, coupling_margin, reweights):
    prog = build_theorem1_program(net, bounds, pattern, side, rho, eps_feas)
    sparse = coupling_margin is not None and pattern.count > 0
    rep = lmi.solve_feasibility(prog.problem, eps_feas, stop_early=stop_early or sparse)
    if not sparse or not rep.feasible:
        return prog, rep
    cap = _effort_cap(prog, rep.x)
    key = "c" if side == "controller" else "o"
    weights: dict = {}
    best = (prog, rep)
    for _ in range(reweights + 1):
        prog2 = build_theorem1_program(net, bounds, pattern, side, rho, eps_feas,
                                       coupling_margin=max(coupling_margin, eps_feas),
                                       effort_weights=weights, effort_cap=cap)
        rep2 = lmi.solve(prog2.problem, eps_feas)
        if not rep2.feasible:
            break
        best = (prog2, rep2)
        ys = prog2.Y if side == "controller" else prog2.Y_hat
        norms = {l: sigma_max(e.value(rep2.x)) for l, e in ys.items()}
        top = max(norms.values(), default=0.0)
        if top == 0.0:
            break
        weights = {(key, l): 1.0 / (v / top + REWEIGHT_FLOOR) for l, v in norms.items()}
    return best


def solve_theorem1(
    net: PlantNetwork,
    bounds: GainBounds,
    pattern: LinkPattern,
    rho: float = RHO_DEFAULT,
    eps_feas: float = lmi.EPS_FEAS,
    stop_early: bool = False,
    coupling_margin: float | None = None,
    reweights: int = 0,
) -> Theorem1Result:
    """Feasibility of C1-C8 at a binary pattern, solving the two decoupled halves separately.

    The controller half (Z, W, Y) and the observer half (P_hat, W_hat,
    Y_hat) share no variables once the pattern is fixed, so the joint
    program is feasible iff both halves are. The observer half is skipped
    when the controller half is already proven infeasible.

    By default the returned point is the phase-I optimum (largest uniform
    slack). With ``coupling_margin`` set, phase I only establishes
    feasibility and a second solve minimizes the total coupling effort
    ``sum sigma_max(Y_ij)`` subject to C1/C2 holding with that margin, then
    repeats ``reweights`` times with weights ``1 / (relative effort + 1e-3)``.
    Links the design does not need end up with (near) zero coupling
    variables. If the effort solve fails the phase-I point is returned.
    """
    pc, rc = _solve_side(net, bounds, pattern, "controller", rho, eps_feas, stop_early, coupling_margin, reweights)
    po, ro = None, None
    if rc.status is not Status.INFEASIBLE:
        po, ro = _solve_side(net, bounds, pattern, "observer", rho, eps_feas, stop_early, coupling_margin, reweights)
    sol = None
    if rc.feasible and ro is not None and ro.feasible:
        sc, so = pc.extract(rc.x), po.extract(ro.x)
        sol = Theorem1Solution(sc.Z, sc.W, sc.Y, so.P_hat, so.W_hat, so.Y_hat,
                               {l: 1.0 for l in pattern.active})
    return Theorem1Result(rc, ro, sol)


@dataclass
class RelaxedProgram:
    problem: SdpProblem
    alpha: dict[Link, MatExpr]
    margin: float

    def values(self, x: np.ndarray) -> dict[Link, float]:
        return {l: float(e.value(x)[0, 0]) for l, e in self.alpha.items()}


def _frozen_pieces(net: PlantNetwork, frozen: Theorem1Solution, pattern: LinkPattern):
    """Symmetric C1/C2 matrices at alpha = 0 and per-link increments, with frozen matrices."""
    bm = assemble_block_matrices(net)
    ns, ms, rs = bm.slices("n"), bm.slices("m"), bm.slices("r")
    nt, mt, rt = sum(bm.n), sum(bm.m), sum(bm.r)
    AH = bm.A + bm.H
    Z = sla.block_diag(*frozen.Z)
    P = sla.block_diag(*frozen.P_hat)
    W = np.zeros((mt, nt))
    Wh = np.zeros((nt, rt))
    for i in range(net.N):
        W[ms[i], ns[i]] = frozen.W[i]
        Wh[ns[i], rs[i]] = frozen.W_hat[i]
    bZ = sla.block_diag(*[b * z for b, z in zip(net.beta, frozen.Z)])
    bP = sla.block_diag(*[b * q for b, q in zip(net.beta, frozen.P_hat)])
    F0 = AH @ Z + bm.B @ W + bZ
    Fh0 = P @ AH + Wh @ bm.C + bP
    dF, dFh = {}, {}
    for (i, j) in pattern.ordered_active():
        E = np.zeros((mt, nt))
        E[ms[i], ns[j]] = frozen.Y[(i, j)]
        dF[(i, j)] = bm.B @ E
        Eh = np.zeros((nt, rt))
        Eh[ns[i], rs[j]] = frozen.Y_hat[(i, j)]
        dFh[(i, j)] = Eh @ bm.C
    return F0, Fh0, dF, dFh


def build_relaxed_program(
    net: PlantNetwork,
    frozen: Theorem1Solution,
    pattern: LinkPattern,
    eps_feas: float = lmi.EPS_FEAS,
) -> RelaxedProgram:
    """C1 and C2 with every matrix variable frozen and ``alpha_ij in [0, 1]`` free, minimizing sum alpha.

    The strictness margin is the one of the binary program (``eps_feas``,
    since C1 and C2 have no constant term there), so that the frozen point
    with all active alphas at 1 stays feasible.
    """
    F0, Fh0, dF, dFh = _frozen_pieces(net, frozen, pattern)
    p = SdpProblem("relaxed alpha")
    alpha = {l: p.scalar(f"alpha{l[0] + 1}{l[1] + 1}", lo=0.0, hi=1.0) for l in pattern.ordered_active()}
    G1 = MatExpr.constant(-(F0 + F0.T))
    G2 = MatExpr.constant(-(Fh0 + Fh0.T))
    for l, a in alpha.items():
        k = a.idx[0]
        G1 = G1 + MatExpr(np.zeros_like(F0), [k], [-(dF[l] + dF[l].T)])
        G2 = G2 + MatExpr(np.zeros_like(Fh0), [k], [-(dFh[l] + dFh[l].T)])
    margin = eps_feas
    p.add_lmi(G1, name="C1(alpha)", margin=margin)
    p.add_lmi(G2, name="C2(alpha)", margin=margin)
    if alpha:
        p.set_objective({a.idx[0]: 1.0 for a in alpha.values()})
    return RelaxedProgram(p, alpha, margin)


def frozen_check(
    net: PlantNetwork,
    frozen: Theorem1Solution,
    full: LinkPattern,
    keep: LinkPattern,
    eps_feas: float = lmi.EPS_FEAS,
) -> tuple[bool, float]:
    """Eigenvalue test of C1 and C2 at binary pattern ``keep`` using frozen matrices.

    Returns (passes, worst margin minus required margin).
    """
    F0, Fh0, dF, dFh = _frozen_pieces(net, frozen, full)
    F, Fh = F0.copy(), Fh0.copy()
    for l in keep.active:
        F += dF[l]
        Fh += dFh[l]
    worst = min(np.linalg.eigvalsh(-(F + F.T))[0], np.linalg.eigvalsh(-(Fh + Fh.T))[0]) - eps_feas
    return bool(worst >= 0), float(worst)


def _right_solve(W: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """``W Z^-1`` for SPD ``Z``."""
    if W.size == 0:
        return np.zeros_like(W)
    return spd_solve(Z, W.T).T


def recover_gains(
    sol: Theorem1Solution,
    pattern: LinkPattern,
    bounds: GainBounds | None = None,
) -> GainSet:
    """Gains K = W Z^-1, L = alpha Y Z^-1, M = P_hat^-1 W_hat, O = alpha P_hat^-1 Y_hat.

    When ``bounds`` is given the recovered induced 2-norms are checked
    against the budgets (relative slack ``BOUND_RTOL``) and a
    ``ValueError`` is raised on violation.
    """
    notes = []
    for i, Z in enumerate(sol.Z):
        c = np.linalg.cond(Z)
        if c > 1e12:
            notes.append(f"Z{i + 1} ill-conditioned (cond {c:.2e})")
    for i, P in enumerate(sol.P_hat):
        c = np.linalg.cond(P)
        if c > 1e12:
            notes.append(f"P_hat{i + 1} ill-conditioned (cond {c:.2e})")
    K = [_right_solve(W, Z) for W, Z in zip(sol.W, sol.Z)]
    M = [spd_solve(P, Wh) if Wh.size else np.zeros_like(Wh) for P, Wh in zip(sol.P_hat, sol.W_hat)]
    L, O = {}, {}
    for (i, j) in pattern.ordered_active():
        a = float(sol.alpha.get((i, j), 1.0))
        if (i, j) in sol.Y:
            L[(i, j)] = a * _right_solve(sol.Y[(i, j)], sol.Z[j])
        if (i, j) in sol.Y_hat:
            O[(i, j)] = a * spd_solve(sol.P_hat[i], sol.Y_hat[(i, j)])
    g = GainSet(K, L, M, O, notes)
    if notes:
        warnings.warn("; ".join(notes), RuntimeWarning, stacklevel=2)
    if bounds is not None:
        bad = audit_gain_bounds(g, bounds)
        if bad:
            raise ValueError("recovered gains violate budgets: " + "; ".join(bad))
    return g


def _over(norm: float, budget: float) -> bool:
    return math.isfinite(budget) and norm > budget * (1 + BOUND_RTOL) + 1e-12


def audit_gain_bounds(g: GainSet, bounds: GainBounds) -> list[str]:
    """Induced 2-norm budget violations (empty list when all budgets hold)."""
    out = []
    for i, K in enumerate(g.K):
        if _over(sigma_max(K), bounds.kappa[i]):
            out.append(f"||K{i + 1}|| = {sigma_max(K):.6g} > kappa = {bounds.kappa[i]:.6g}")
    for i, M in enumerate(g.M):
        if _over(sigma_max(M), bounds.mu[i]):
            out.append(f"||M{i + 1}|| = {sigma_max(M):.6g} > mu = {bounds.mu[i]:.6g}")
    for (i, j), L in g.L.items():
        if _over(sigma_max(L), bounds.iota_of(i, j)):
            out.append(f"||L{i + 1}{j + 1}|| = {sigma_max(L):.6g} > iota = {bounds.iota_of(i, j):.6g}")
    for (i, j), O in g.O.items():
        if _over(sigma_max(O), bounds.omega_of(i, j)):
            out.append(f"||O{i + 1}{j + 1}|| = {sigma_max(O):.6g} > omega = {bounds.omega_of(i, j):.6g}")
    return out


@dataclass
class ClosedLoop:
    A_x: np.ndarray
    A_e: np.ndarray
    BKL: np.ndarray

    @property
    def cascade(self) -> np.ndarray:
        """Generator of the stacked (x, e) dynamics."""
        n = self.A_x.shape[0]
        return np.block([[self.A_x, self.BKL], [np.zeros((n, n)), self.A_e]])


def closed_loop_matrices(net: PlantNetwork, g: GainSet) -> ClosedLoop:
    bm = assemble_block_matrices(net)
    K, L, M, O = g.blocks(bm)
    AH = bm.A + bm.H
    BKL = bm.B @ (K + L)
    return ClosedLoop(AH + BKL, AH + (M + O) @ bm.C, BKL)


def check_lemma1(
    net: PlantNetwork,
    g: GainSet,
    rho: float = RHO_DEFAULT,
    eps_feas: float = lmi.EPS_FEAS,
) -> Certificates:
    """Search block-diagonal P, P_hat proving the fixed-gain closed loop stable with margin beta.

    Returns certificates whose ``status`` is StrictlyFeasible when both
    Lyapunov inequalities hold; anything else means "not certified" (the
    conditions are only sufficient).
    """
    cl = closed_loop_matrices(net, g)
    n = net.dims[0]
    reps, mats = [], []
    for name, Acl in (("S1", cl.A_x), ("S2", cl.A_e)):
        p = SdpProblem(f"lemma1[{name}]")
        P = [p.matrix_var(f"P{i + 1}", n[i], symmetric=True) for i in range(net.N)]
        Pb = MatExpr.block_diag(P)
        G = Pb @ Acl
        p.add_lmi(-(G.sym() + 2 * _beta_blockdiag(net, P)), strict=True, name=name, eps_feas=eps_feas)
        for i in range(net.N):
            p.add_lmi(P[i] - np.eye(n[i]), name=f"norm P{i + 1}")
            p.add_lmi(rho * np.eye(n[i]) - P[i], name=f"cap P{i + 1}")
        rep = lmi.solve_feasibility(p, eps_feas)
        reps.append(rep)
        mats.append([e.value(rep.x) for e in P])
    status = (Status.STRICTLY_FEASIBLE if all(r.feasible for r in reps)
              else Status.INFEASIBLE if any(r.status is Status.INFEASIBLE for r in reps)
              else Status.INDETERMINATE)
    margins = {"S1": -reps[0].t, "S2": -reps[1].t}
    return Certificates(mats[0], mats[1], margins, status)


def lyapunov_residual(Acl: np.ndarray, P_blocks: list[np.ndarray], beta: tuple[float, ...]) -> float:
    """Largest eigenvalue of ``Acl^T P + P Acl + 2 beta o P`` for block-diagonal P (negative = certified)."""
    P = sla.block_diag(*P_blocks)
    Bp = sla.block_diag(*[b * Pi for b, Pi in zip(beta, P_blocks)])
    S = Acl.T @ P + P @ Acl + 2 * Bp
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def stability_margins(net: PlantNetwork, g: GainSet) -> tuple[float, float]:
    cl = closed_loop_matrices(net, g)
    return spectral_abscissa(cl.A_x), spectral_abscissa(cl.A_e)
