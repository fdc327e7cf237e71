"""Affine linear matrix inequalities over scalar variables and a barrier solver.

A constraint is ``G(x) = G0 + sum_k x_k G_k >= eps * I`` (positive
semidefinite order). Matrix-valued decision variables are flattened into
scalars by :class:`SdpProblem`; :class:`MatExpr` provides the small amount of
affine algebra needed to write LMIs such as ``A Z + Z A^T`` directly.

Feasibility is decided by a phase-I barrier method that minimises a common
shift ``t`` in ``G_j(x) - eps_j I + t I >= 0``; linear objectives are then
minimised from a strictly feasible point with the standard log-det barrier
path.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

EPS_FEAS = 1e-6
# Newton decrement below which an unconverged centering still yields a valid duality bound
NEAR_CENTRAL = 0.25
PLATEAU = 20
DIVERGE_AT = 1e15


class Status(str, enum.Enum):
    STRICTLY_FEASIBLE = "StrictlyFeasible"
    INFEASIBLE = "Infeasible"
    INDETERMINATE = "Indeterminate"
    UNBOUNDED = "Unbounded"


class LmiError(ValueError):
    pass


class MatExpr:
    """Affine matrix expression ``const + sum_k x[idx[k]] * coef[k]``."""

    __slots__ = ("const", "idx", "coef")
    # make ``ndarray @ MatExpr`` defer to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, const, idx=None, coef=None):
        self.const = np.asarray(const, dtype=float)
        if self.const.ndim != 2:
            self.const = self.const.reshape(1, 1) if self.const.ndim == 0 else np.atleast_2d(self.const)
        r, c = self.const.shape
        self.idx = np.zeros(0, dtype=int) if idx is None else np.asarray(idx, dtype=int)
        self.coef = np.zeros((0, r, c)) if coef is None else np.asarray(coef, dtype=float)

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @classmethod
    def constant(cls, M) -> "MatExpr":
        return cls(np.asarray(M, dtype=float))

    @classmethod
    def zeros(cls, r: int, c: int) -> "MatExpr":
        return cls(np.zeros((r, c)))

    def _lift(self, other) -> "MatExpr":
        return other if isinstance(other, MatExpr) else MatExpr.constant(other)

    def __add__(self, other):
        o = self._lift(other)
        if o.shape != self.shape:
            raise LmiError(f"shape mismatch {self.shape} + {o.shape}")
        return MatExpr(self.const + o.const, np.concatenate([self.idx, o.idx]),
                       np.concatenate([self.coef, o.coef]))

    __radd__ = __add__

    def __neg__(self):
        return MatExpr(-self.const, self.idx, -self.coef)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, s: float):
        s = float(s)
        return MatExpr(s * self.const, self.idx, s * self.coef)

    __rmul__ = __mul__

    def __matmul__(self, M):
        M = np.asarray(M, dtype=float)
        return MatExpr(self.const @ M, self.idx, self.coef @ M)

    def __rmatmul__(self, M):
        M = np.asarray(M, dtype=float)
        return MatExpr(M @ self.const, self.idx, np.einsum("ij,kjl->kil", M, self.coef))

    @property
    def T(self) -> "MatExpr":
        return MatExpr(self.const.T, self.idx, self.coef.transpose(0, 2, 1))

    def sym(self) -> "MatExpr":
        """``X + X^T``."""
        return self + self.T

    def compact(self) -> "MatExpr":
        if self.idx.size == 0:
            return self
        uniq, inv = np.unique(self.idx, return_inverse=True)
        coef = np.zeros((uniq.size,) + self.shape)
        np.add.at(coef, inv, self.coef)
        keep = np.any(coef != 0, axis=(1, 2))
        return MatExpr(self.const, uniq[keep], coef[keep])

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.idx.size == 0:
            return self.const.copy()
        return self.const + np.tensordot(x[self.idx], self.coef, axes=1)

    @staticmethod
    def bmat(blocks: Sequence[Sequence["MatExpr | np.ndarray | None"]]) -> "MatExpr":
        """Assemble a block matrix; ``None`` entries are zero blocks sized by their row/column."""
        rows = [next((b.shape[0] for b in row if b is not None), None) for row in blocks]
        ncol = len(blocks[0])
        cols = [next((blocks[i][j].shape[1] for i in range(len(blocks)) if blocks[i][j] is not None), None)
                for j in range(ncol)]
        if None in rows or None in cols:
            raise LmiError("bmat: every block row and column needs one sized block")
        ro = np.concatenate([[0], np.cumsum(rows)]).astype(int)
        co = np.concatenate([[0], np.cumsum(cols)]).astype(int)
        const = np.zeros((ro[-1], co[-1]))
        idx, coefs = [], []
        for i, row in enumerate(blocks):
            for j, b in enumerate(row):
                if b is None:
                    continue
                e = b if isinstance(b, MatExpr) else MatExpr.constant(b)
                if e.shape != (rows[i], cols[j]):
                    raise LmiError(f"bmat: block ({i},{j}) has shape {e.shape}, expected {(rows[i], cols[j])}")
                const[ro[i]:ro[i + 1], co[j]:co[j + 1]] = e.const
                if e.idx.size:
                    c = np.zeros((e.idx.size, ro[-1], co[-1]))
                    c[:, ro[i]:ro[i + 1], co[j]:co[j + 1]] = e.coef
                    idx.append(e.idx)
                    coefs.append(c)
        if idx:
            return MatExpr(const, np.concatenate(idx), np.concatenate(coefs)).compact()
        return MatExpr(const)

    @staticmethod
    def block_diag(blocks: Sequence["MatExpr"]) -> "MatExpr":
        k = len(blocks)
        return MatExpr.bmat([[blocks[i] if i == j else None for j in range(k)] for i in range(k)])


@dataclass
class AffineLMI:
    """``G0 + sum_k x[idx[k]] G[k] >= margin * I``."""

    const: np.ndarray
    idx: np.ndarray
    coef: np.ndarray
    margin: float = 0.0
    name: str = ""

    @property
    def size(self) -> int:
        return self.const.shape[0]

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.idx.size == 0:
            return self.const.copy()
        return self.const + np.tensordot(np.asarray(x)[self.idx], self.coef, axes=1)

    def lambda_min(self, x: np.ndarray) -> float:
        G = self.value(x)
        return float(np.linalg.eigvalsh(0.5 * (G + G.T))[0])


@dataclass
class SolveReport:
    status: Status
    x: np.ndarray
    t: float
    iterations: int
    objective: float | None = None
    gap: float | None = None
    lower_bound: float | None = None
    message: str = ""
    t_history: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status is Status.STRICTLY_FEASIBLE


class SdpProblem:
    """Scalar variables, affine LMIs and an optional linear objective."""

    def __init__(self, name: str = ""):
        self.name = name
        self.var_names: list[str] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.constraints: list[AffineLMI] = []
        self.c: dict[int, float] = {}

    @property
    def n(self) -> int:
        return len(self.var_names)

    def add_var(self, name: str, lo: float | None = None, hi: float | None = None) -> int:
        lo = -math.inf if lo is None else float(lo)
        hi = math.inf if hi is None else float(hi)
        if lo > hi:
            raise LmiError(f"variable {name}: empty box [{lo}, {hi}]")
        self.var_names.append(name)
        self.lo.append(lo)
        self.hi.append(hi)
        return self.n - 1

    def scalar(self, name: str, lo=None, hi=None) -> MatExpr:
        k = self.add_var(name, lo, hi)
        return MatExpr(np.zeros((1, 1)), [k], np.ones((1, 1, 1)))

    def matrix_var(self, name: str, rows: int, cols: int | None = None, symmetric: bool = False) -> MatExpr:
        cols = rows if cols is None else cols
        if symmetric and rows != cols:
            raise LmiError("symmetric variables must be square")
        idx, coef = [], []
        for a in range(rows):
            for b in range(a if symmetric else 0, cols):
                E = np.zeros((rows, cols))
                E[a, b] = 1.0
                if symmetric:
                    E[b, a] = 1.0
                idx.append(self.add_var(f"{name}[{a},{b}]"))
                coef.append(E)
        return MatExpr(np.zeros((rows, cols)), idx, np.array(coef).reshape(len(idx), rows, cols))

    def add_lmi(self, expr: MatExpr, strict: bool = False, name: str = "",
                eps_feas: float = EPS_FEAS, margin: float | None = None) -> AffineLMI:
        """Require ``expr >= 0`` (``>= eps (1 + ||G0||) I`` when ``strict``).

        An explicit ``margin`` overrides the strictness rule; it is used when
        a constraint is a specialization of another program whose margin must
        be kept.
        """
        e = expr.compact()
        r, c = e.shape
        if r != c:
            raise LmiError(f"LMI {name!r} is not square: {e.shape}")
        scale = max(np.max(np.abs(e.const)) if e.const.size else 0.0,
                    np.max(np.abs(e.coef)) if e.coef.size else 0.0, 1.0)
        asym = max(np.max(np.abs(e.const - e.const.T)) if r else 0.0,
                   np.max(np.abs(e.coef - e.coef.transpose(0, 2, 1))) if e.coef.size else 0.0)
        if asym > 1e-10 * scale:
            raise LmiError(f"LMI {name!r} is not symmetric (defect {asym:.2e})")
        const = 0.5 * (e.const + e.const.T)
        coef = 0.5 * (e.coef + e.coef.transpose(0, 2, 1))
        if margin is None:
            margin = eps_feas * (1.0 + np.linalg.norm(const, 2)) if strict and r else 0.0
        lmi = AffineLMI(const, e.idx.copy(), coef, margin, name)
        self.constraints.append(lmi)
        return lmi

    def set_objective(self, c: dict[int, float] | MatExpr) -> None:
        if isinstance(c, MatExpr):
            if c.shape != (1, 1):
                raise LmiError("objective expression must be scalar")
            e = c.compact()
            self.c = {int(k): float(v) for k, v in zip(e.idx, e.coef[:, 0, 0])}
        else:
            self.c = {int(k): float(v) for k, v in c.items()}

    def objective_vector(self) -> np.ndarray:
        v = np.zeros(self.n)
        for k, val in self.c.items():
            v[k] = val
        return v

    def dump_sdpa(self) -> str:
        """Plain-text dump in an SDPA-like sparse layout.

        Header lines give the variable count, block count and block sizes
        (box bounds become trailing 1x1 blocks), followed by the objective
        vector and one ``matno blkno i j value`` line per nonzero entry with
        ``matno = 0`` for the constant (written as ``-G0`` as SDPA expects
        ``sum x_k F_k - F_0 >= 0``). Strictness margins are listed in a
        comment line.
        """
        blocks = list(self.constraints)
        for k in range(self.n):
            if math.isfinite(self.lo[k]):
                blocks.append(AffineLMI(np.array([[-self.lo[k]]]), np.array([k]), np.ones((1, 1, 1))))
            if math.isfinite(self.hi[k]):
                blocks.append(AffineLMI(np.array([[self.hi[k]]]), np.array([k]), -np.ones((1, 1, 1))))
        lines = [f"* {self.name or 'sdp'}: {self.n} variables, {len(blocks)} blocks",
                 "* margins: " + " ".join(f"{b.margin:.3e}" for b in blocks),
                 str(self.n), str(len(blocks)), " ".join(str(b.size) for b in blocks),
                 " ".join(repr(float(v)) for v in self.objective_vector())]
        for bno, b in enumerate(blocks, start=1):
            for i in range(b.size):
                for j in range(i, b.size):
                    if b.const[i, j] != 0:
                        lines.append(f"0 {bno} {i + 1} {j + 1} {float(-b.const[i, j])!r}")
            for k, G in zip(b.idx, b.coef):
                for i in range(b.size):
                    for j in range(i, b.size):
                        if G[i, j] != 0:
                            lines.append(f"{k + 1} {bno} {i + 1} {j + 1} {float(G[i, j])!r}")
        return "\n".join(lines) + "\n"


def evaluate_constraints(p: SdpProblem, x: np.ndarray) -> list[float]:
    """Exact eigenvalue margin ``lambda_min(G_j(x))`` of every LMI (box bounds excluded)."""
    return [c.lambda_min(x) for c in p.constraints]


def box_violation(p: SdpProblem, x: np.ndarray) -> float:
    x = np.asarray(x)
    lo = np.asarray(p.lo)
    hi = np.asarray(p.hi)
    return float(max(0.0, np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0)))


# ---------------------------------------------------------------------------
# barrier machinery


class _Blocks:
    """Dense internal form of all constraints, with box bounds folded into a linear block.

    Constraint j reads ``G_j(z) - m_j I >= 0`` where ``z = (x, t)`` in
    phase I (``t`` enters every block with coefficient ``I``) and ``z = x``
    otherwise.
    """

    def __init__(self, p: SdpProblem, phase1: bool):
        self.n = p.n
        self.nz = p.n + (1 if phase1 else 0)
        self.phase1 = phase1
        self.mats = []
        for c in p.constraints:
            if c.size == 0:
                continue
            idx, coef = c.idx, c.coef
            if phase1:
                idx = np.append(idx, p.n)
                coef = np.concatenate([coef, np.eye(c.size)[None]])
            self.mats.append((c.const - c.margin * np.eye(c.size), idx, coef.reshape(len(idx), -1), c.size))
        rows, b = [], []
        for k in range(p.n):
            if math.isfinite(p.lo[k]):
                a = np.zeros(self.nz)
                a[k] = 1.0
                rows.append(a)
                b.append(-p.lo[k])
            if math.isfinite(p.hi[k]):
                a = np.zeros(self.nz)
                a[k] = -1.0
                rows.append(a)
                b.append(p.hi[k])
        if phase1 and rows:
            for a in rows:
                a[p.n] = 1.0
        self.Alin = np.array(rows).reshape(len(rows), self.nz)
        self.blin = np.array(b)
        self.m = sum(mt[3] for mt in self.mats) + len(b)

    def slack_min(self, z: np.ndarray) -> float:
        """Smallest eigenvalue over all blocks (linear rows included)."""
        out = np.inf
        for G0, idx, coef, b in self.mats:
            G = G0 + (z[idx] @ coef).reshape(b, b)
            out = min(out, np.linalg.eigvalsh(0.5 * (G + G.T))[0])
        if self.blin.size:
            out = min(out, np.min(self.Alin @ z + self.blin))
        return float(out)

    def barrier(self, z: np.ndarray, need_derivs: bool = True):
        """Return (phi, grad, J) of -sum logdet with Hessian ``J^T J``; phi = inf outside the domain.

        ``J`` stacks the whitened coefficient blocks ``vec(L^-1 G_k L^-T)``
        (one row per matrix entry) and the scaled linear rows, so Newton
        systems can be solved by QR without squaring the condition number.
        """
        phi = 0.0
        grad = np.zeros(self.nz) if need_derivs else None
        parts = []
        for G0, idx, coef, b in self.mats:
            G = G0 + (z[idx] @ coef).reshape(b, b)
            L, info = sla.lapack.dpotrf(0.5 * (G + G.T), lower=1, clean=1)
            if info != 0:
                return np.inf, None, None
            phi -= 2.0 * np.sum(np.log(np.diag(L)))
            if not need_derivs:
                continue
            Linv, _ = sla.lapack.dtrtri(L, lower=1)
            Ck = coef.reshape(-1, b, b)
            Gh = (Linv @ Ck @ Linv.T).reshape(len(idx), -1)
            np.add.at(grad, idx, -Gh[:, :: b + 1].sum(axis=1))
            J = np.zeros((b * b, self.nz))
            J[:, idx] = Gh.T
            parts.append(J)
        if self.blin.size:
            sl = self.Alin @ z + self.blin
            if np.any(sl <= 0):
                return np.inf, None, None
            phi -= np.sum(np.log(sl))
            if need_derivs:
                w = self.Alin / sl[:, None]
                grad -= w.sum(axis=0)
                parts.append(w)
        if not need_derivs:
            return phi, None, None
        return phi, grad, np.vstack(parts) if parts else np.zeros((0, self.nz))

    def hessian(self, z: np.ndarray) -> np.ndarray:
        _, _, J = self.barrier(z)
        return J.T @ J


class _Recession(Exception):
    """The objective decreases along a direction that leaves every constraint unchanged."""

    def __init__(self, direction: np.ndarray):
        super().__init__("recession direction")
        self.direction = direction


def _newton_direction(J: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``J^T J d = -g`` through a column-pivoted QR of ``J``.

    Raises :class:`_Recession` when ``g`` has a component in the null space
    of ``J``: the barrier is constant along such directions, so only the
    linear objective changes there and it is unbounded below.
    """
    nz = J.shape[1]
    d = np.linalg.norm(J, axis=0)
    d = np.where(d > 0, d, 1.0)
    Q, R, piv = sla.qr(J / d, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > diag[0] * 1e-13)) if diag.size else 0
    if rank < nz:
        _, sv, Vt = np.linalg.svd(J / d)
        null = Vt[np.sum(sv > (sv[0] if sv.size else 1.0) * 1e-13):].T / d[:, None]
        comp = null @ (null.T @ g) if null.size else np.zeros(nz)
        if np.linalg.norm(comp) > 1e-8 * (1.0 + np.linalg.norm(g)) and np.all(np.abs(J @ comp) <= 1e-10 * np.linalg.norm(J) * np.linalg.norm(comp)):
            raise _Recession(-comp / np.linalg.norm(comp))
    gs = (g / d)[piv]
    R1 = R[:rank, :rank]
    y = sla.solve_triangular(R1, gs[:rank], trans="T")
    u = -sla.solve_triangular(R1, y)
    step = np.zeros(nz)
    step[piv[:rank]] = u
    return step / d


@dataclass
class _PathState:
    z: np.ndarray
    s: float
    iters: int = 0
    decrement: float = np.inf
    ahead: bool = False


def _center(blocks: _Blocks, c: np.ndarray, st: _PathState, max_iter: int, tol: float,
            on_step=None, monotone: bool = False) -> bool:
    """Newton centering of ``s c^T z + phi(z)``; returns True when converged.

    Centering also counts as converged once the decrement is below
    ``NEAR_CENTRAL`` and has stopped improving for ``PLATEAU`` steps, which
    is where floating-point noise in the Hessian takes over.

    With ``monotone`` the objective ``c^T z`` never increases: a Newton
    direction that would raise it is projected onto ``c^T dz = 0``. When the
    iterate is already centred within that slice it lies ahead of the
    central point for this ``s``; ``st.ahead`` is set, ``s`` is moved to the
    value for which the iterate is closest to central and ``st.decrement``
    reports how close. The caller draws a duality bound only when that
    decrement is small.
    """
    best, since = np.inf, 0
    st.ahead = False
    for _ in range(max_iter):
        phi, g, J = blocks.barrier(st.z)
        if not np.isfinite(phi):
            raise LmiError("iterate left the barrier domain")
        grad = st.s * c + g
        dz = _newton_direction(J, grad)
        lam2 = float(-grad @ dz)
        st.decrement = math.sqrt(max(lam2, 0.0))
        if lam2 / 2 <= tol:
            return True
        if monotone and c @ dz > 0:
            w = -_newton_direction(J, c)
            dz = dz - (c @ dz) / (c @ w) * w
            lam2 = float(-grad @ dz)
            if lam2 / 2 <= tol:
                # centred in the slice, so g is nearly parallel to c and the
                # point is nearly central for s = -c.g / c.c
                st.ahead = True
                lam = -float(c @ g) / float(c @ c)
                if lam > 0:
                    g2 = lam * c + g
                    st.s = lam
                    st.decrement = math.sqrt(max(float(-g2 @ _newton_direction(J, g2)), 0.0))
                return True
        if st.decrement < 0.5 * best:
            best, since = st.decrement, 0
        else:
            since += 1
            if since >= PLATEAU and st.decrement < NEAR_CENTRAL:
                return True
        f0 = st.s * (c @ st.z) + phi
        step = 1.0
        while step > 1e-12:
            zn = st.z + step * dz
            phin, _, _ = blocks.barrier(zn, need_derivs=False)
            if np.isfinite(phin) and st.s * (c @ zn) + phin <= f0 - 0.25 * step * lam2:
                break
            step *= 0.5
        else:
            return False
        st.z = zn
        st.iters += 1
        if np.max(np.abs(zn)) > DIVERGE_AT:
            raise LmiError("iterates diverge; the barrier has no minimizer (unbounded feasible set), "
                           "add bounds on the free variables")
        if on_step is not None and on_step(st):
            return True
    return False


def solve_feasibility(
    p: SdpProblem,
    eps_feas: float = EPS_FEAS,
    x0: np.ndarray | None = None,
    stop_early: bool = False,
    rel_gap: float = 1e-6,
    mu: float = 6.0,
    max_newton: int = 3000,
    t_floor: float = -1e9,
) -> SolveReport:
    """Phase I: minimise ``t`` subject to ``G_j(x) - eps_j I + t I >= 0`` for every constraint.

    Strict constraints carry ``eps_j = eps_feas (1 + ||G0||)`` (set when the
    LMI was added); box bounds are shifted by ``t`` as well. The result is
    StrictlyFeasible iff the achieved ``t <= -eps_feas``, Infeasible iff the
    barrier duality bound proves ``t* > 0``, and Indeterminate otherwise. With
    ``stop_early`` the path stops at the first such strictly feasible
    iterate; otherwise it is followed to the phase-I optimum, which yields a
    maximally interior point.
    """
    n = p.n
    blocks = _Blocks(p, phase1=True)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    # start inside the box
    lo, hi = np.asarray(p.lo), np.asarray(p.hi)
    both = np.isfinite(lo) & np.isfinite(hi)
    x = np.where(np.isfinite(lo) & (x < lo), lo + 1.0, x)
    x = np.where(np.isfinite(hi) & (x > hi), hi - 1.0, x)
    with np.errstate(invalid="ignore"):
        x = np.where(both & ((x <= lo) | (x >= hi)), 0.5 * (lo + hi), x)
    z = np.append(x, 0.0)
    worst = blocks.slack_min(z) if blocks.m else 0.0
    z[n] = max(-worst, 0.0) + 1.0 + 0.1 * abs(worst)
    c = np.zeros(n + 1)
    c[n] = 1.0
    if blocks.m == 0:
        return SolveReport(Status.STRICTLY_FEASIBLE, x, -math.inf, 0, message="no constraints")

    st = _PathState(z, s=blocks.m / (1.0 + abs(z[n])))
    history = [float(z[n])]

    def on_step(s_):
        history.append(float(s_.z[n]))
        if stop_early and s_.z[n] <= -eps_feas:
            return True
        return s_.z[n] < t_floor

    status, msg, lb = Status.INDETERMINATE, "", -math.inf
    while True:
        try:
            ok = _center(blocks, c, st, max_iter=1000, tol=1e-9, on_step=on_step, monotone=True)
        except LmiError as exc:
            msg = str(exc)
            if st.z[n] <= -eps_feas:
                status = Status.STRICTLY_FEASIBLE
            break
        except _Recession as rec:
            # t decreases without bound while every constraint stays put
            target = -max(1.0, abs(st.z[n]))
            st.z = st.z + (target - st.z[n]) / rec.direction[n] * rec.direction
            history.append(float(st.z[n]))
            status, msg = Status.STRICTLY_FEASIBLE, "phase-I unbounded below (recession direction)"
            break
        t = float(st.z[n])
        if (stop_early and t <= -eps_feas) or t < t_floor:
            status = Status.STRICTLY_FEASIBLE
            msg = "early stop" if t >= t_floor else "phase-I unbounded below"
            break
        if st.ahead and st.decrement > NEAR_CENTRAL:
            # off the central path: no duality bound can be drawn here
            if st.iters > max_newton:
                status = Status.STRICTLY_FEASIBLE if t <= -eps_feas else Status.INDETERMINATE
                msg = "iteration limit"
                break
            st.s *= mu
            continue
        if not ok and st.decrement > NEAR_CENTRAL:
            msg = f"Newton stagnation (decrement {st.decrement:.2e}) at s = {st.s:.2e}"
            if t <= -eps_feas:
                status = Status.STRICTLY_FEASIBLE
            break
        gap = blocks.m / st.s * (1.0 + st.decrement)
        lb = t - gap
        if lb > 0:
            status = Status.INFEASIBLE
            msg = f"dual bound t* >= {lb:.3e} > 0"
            break
        if gap <= rel_gap * (1.0 + abs(t)):
            status = Status.STRICTLY_FEASIBLE if t <= -eps_feas else Status.INDETERMINATE
            msg = f"converged, t* = {t:.6e}"
            break
        if st.iters > max_newton:
            status = Status.STRICTLY_FEASIBLE if t <= -eps_feas else Status.INDETERMINATE
            msg = "iteration limit"
            break
        st.s *= mu
    t = float(st.z[n])
    x = st.z[:n].copy()
    rep = SolveReport(status, x, t, st.iters, gap=blocks.m / st.s, lower_bound=lb, message=msg,
                      t_history=history)
    if rep.status is Status.STRICTLY_FEASIBLE:
        _audit(p, rep)
    log.debug("phase I %s: %s after %d Newton steps (%s)", p.name, rep.status.value, rep.iterations, msg)
    return rep


def _passes_audit(p: SdpProblem, x: np.ndarray) -> bool:
    return box_violation(p, x) == 0 and all(
        lm >= c.margin - 1e-12 for c, lm in zip(p.constraints, evaluate_constraints(p, x)))


def _audit(p: SdpProblem, rep: SolveReport) -> None:
    """Demote a StrictlyFeasible report whose point fails the eigenvalue audit."""
    margins = evaluate_constraints(p, rep.x)
    bad = [(c.name, lm, c.margin) for c, lm in zip(p.constraints, margins) if lm < c.margin - 1e-12]
    if bad or box_violation(p, rep.x) > 0:
        rep.status = Status.INDETERMINATE
        rep.message += f"; audit failed on {bad[:3]}"


def solve_min_linear(
    p: SdpProblem,
    x_start: np.ndarray,
    rel_gap: float = 1e-6,
    mu: float = 8.0,
    max_newton: int = 3000,
    unbounded_at: float = 1e12,
) -> SolveReport:
    """Minimise ``c^T x`` over ``G_j(x) >= eps_j I`` starting from a strictly feasible point.

    Stops once the barrier duality gap ``m / s`` is at most
    ``rel_gap * (1 + |c^T x|)``.
    """
    blocks = _Blocks(p, phase1=False)
    c = p.objective_vector()
    x = np.asarray(x_start, dtype=float).copy()
    if blocks.m and not np.isfinite(blocks.barrier(x, need_derivs=False)[0]):
        raise LmiError("x_start is not strictly feasible")
    if blocks.m == 0:
        if np.any(c != 0):
            return SolveReport(Status.UNBOUNDED, x, math.nan, 0, objective=-math.inf)
        return SolveReport(Status.STRICTLY_FEASIBLE, x, math.nan, 0, objective=0.0)
    st = _PathState(x, s=blocks.m / (1.0 + abs(c @ x)))
    status, msg = Status.INDETERMINATE, ""

    def on_step(s_):
        return c @ s_.z < -unbounded_at

    good, good_s = st.z.copy(), st.s
    while True:
        try:
            ok = _center(blocks, c, st, max_iter=1000, tol=1e-9, on_step=on_step)
        except LmiError as exc:
            msg = str(exc)
            break
        except _Recession:
            status, msg = Status.UNBOUNDED, "objective decreases along a recession direction"
            break
        if not _passes_audit(p, st.z):
            # close to the boundary rounding eats the strict margins; keep the last audited iterate
            st.z, st.s = good, good_s
            status, msg = Status.STRICTLY_FEASIBLE, f"stopped at audit limit (gap {blocks.m / st.s:.2e})"
            break
        good, good_s = st.z.copy(), st.s
        obj = float(c @ st.z)
        if obj < -unbounded_at:
            status, msg = Status.UNBOUNDED, "objective decreases without bound"
            break
        gap = blocks.m / st.s
        if gap <= rel_gap * (1.0 + abs(obj)):
            status, msg = Status.STRICTLY_FEASIBLE, f"gap {gap:.2e}"
            break
        if not ok or st.iters > max_newton:
            status = Status.STRICTLY_FEASIBLE
            msg = f"stopped early (decrement {st.decrement:.2e}, gap {gap:.2e})"
            break
        st.s *= mu
    rep = SolveReport(status, st.z.copy(), math.nan, st.iters, objective=float(c @ st.z),
                      gap=blocks.m / st.s, message=msg)
    if status is Status.STRICTLY_FEASIBLE:
        _audit(p, rep)
    return rep


def solve(p: SdpProblem, eps_feas: float = EPS_FEAS, rel_gap: float = 1e-6, **kw) -> SolveReport:
    """Phase I followed, when an objective is set, by the barrier minimisation."""
    rep = solve_feasibility(p, eps_feas, stop_early=bool(p.c), **kw)
    if not rep.feasible or not p.c:
        return rep
    out = solve_min_linear(p, rep.x, rel_gap=rel_gap)
    out.t = rep.t
    out.iterations += rep.iterations
    return out


def eig_bound_as_lmi(p: SdpProblem, block: MatExpr, t: MatExpr, name: str = "") -> AffineLMI:
    """Encode ``lambda_min(block) >= t`` as ``block - t I >= 0``."""
    r, c = block.shape
    if r != c:
        raise LmiError("eig_bound: block must be square")
    return p.add_lmi(block - MatExpr(np.zeros((r, r)), t.idx, t.coef[:, 0, 0][:, None, None] * np.eye(r))
                     - t.const[0, 0] * np.eye(r), name=name or "eig_bound")


def sv_bound_as_lmi(p: SdpProblem, block: MatExpr, s: MatExpr, name: str = "") -> AffineLMI:
    """Encode ``sigma_max(block) <= s`` as ``[[s I, W], [W^T, s I]] >= 0``."""
    r, c = block.shape
    sI_r = MatExpr(s.const[0, 0] * np.eye(r), s.idx, s.coef[:, 0, 0][:, None, None] * np.eye(r))
    sI_c = MatExpr(s.const[0, 0] * np.eye(c), s.idx, s.coef[:, 0, 0][:, None, None] * np.eye(c))
    return p.add_lmi(MatExpr.bmat([[sI_r, block], [block.T, sI_c]]), name=name or "sv_bound")
