"""Plant network data model, block assembly and structural checks.

Subsystems are indexed from 0 internally. Links and couplings follow the
``(i, j)`` convention of the coupled dynamics: ``H[i, j]`` (and a control link
``(i, j)``) carries information *from* subsystem ``j`` *to* subsystem ``i``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .numerics import sigma_max

Link = tuple[int, int]


class ModelError(ValueError):
    """Inconsistent dimensions or invalid network description."""


def _as2d(M, rows=None, cols=None) -> np.ndarray:
    a = np.array(M, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise ModelError(f"expected a 2-D matrix, got {a.ndim}-D")
    if not np.all(np.isfinite(a)):
        raise ModelError("matrix has non-finite entries")
    return a


@dataclass(frozen=True)
class Subsystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "A", _as2d(self.A))
        object.__setattr__(self, "B", _as2d(self.B))
        object.__setattr__(self, "C", _as2d(self.C))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def r(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Coupling:
    """Physical influence of subsystem ``source`` on subsystem ``target``."""

    target: int
    source: int
    H: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H", _as2d(self.H))


@dataclass(frozen=True)
class PlantNetwork:
    subsystems: tuple[Subsystem, ...]
    couplings: tuple[Coupling, ...] = ()
    beta: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        beta = tuple(float(b) for b in self.beta) if len(self.beta) else (0.0,) * len(self.subsystems)
        object.__setattr__(self, "beta", beta)
        if not self.subsystems:
            raise ModelError("network needs at least one subsystem")
        if len(beta) != len(self.subsystems):
            raise ModelError(f"beta has {len(beta)} entries for {len(self.subsystems)} subsystems")
        if any(not (b >= 0) for b in beta):
            raise ModelError(f"stability margins must be >= 0, got {beta}")
        seen = set()
        for c in self.couplings:
            if not (0 <= c.target < self.N and 0 <= c.source < self.N):
                raise ModelError(f"coupling {c.source + 1}->{c.target + 1} references a missing subsystem")
            if c.target == c.source:
                raise ModelError(f"self-loop coupling on subsystem {c.target + 1}")
            if (c.target, c.source) in seen:
                raise ModelError(f"duplicate coupling {c.source + 1}->{c.target + 1}")
            seen.add((c.target, c.source))

    @property
    def N(self) -> int:
        return len(self.subsystems)

    @property
    def dims(self) -> tuple[list[int], list[int], list[int]]:
        s = self.subsystems
        return [x.n for x in s], [x.m for x in s], [x.r for x in s]

    def coupling(self, i: int, j: int) -> np.ndarray:
        for c in self.couplings:
            if c.target == i and c.source == j:
                return c.H
        return np.zeros((self.subsystems[i].n, self.subsystems[j].n))

    def plant_edges(self) -> list[Link]:
        return [(c.target, c.source) for c in self.couplings if np.any(c.H != 0)]


@dataclass(frozen=True)
class GainBounds:
    """Norm budgets on local and coupling gains; ``inf`` means unbounded."""

    kappa: tuple[float, ...]
    mu: tuple[float, ...]
    iota: dict = field(default_factory=dict)
    omega: dict = field(default_factory=dict)
    iota_default: float = math.inf
    omega_default: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))
        object.__setattr__(self, "mu", tuple(float(k) for k in self.mu))
        object.__setattr__(self, "iota", {tuple(k): float(v) for k, v in self.iota.items()})
        object.__setattr__(self, "omega", {tuple(k): float(v) for k, v in self.omega.items()})
        vals = [*self.kappa, *self.mu, *self.iota.values(), *self.omega.values(),
                self.iota_default, self.omega_default]
        if any(not (v >= 0) for v in vals):
            raise ModelError("gain bounds must be non-negative or inf")

    @classmethod
    def unbounded(cls, N: int) -> "GainBounds":
        return cls((math.inf,) * N, (math.inf,) * N)

    def iota_of(self, i: int, j: int) -> float:
        return self.iota.get((i, j), self.iota_default)

    def omega_of(self, i: int, j: int) -> float:
        return self.omega.get((i, j), self.omega_default)

    def check(self, N: int) -> None:
        if len(self.kappa) != N or len(self.mu) != N:
            raise ModelError(f"bounds sized for {len(self.kappa)}/{len(self.mu)} subsystems, network has {N}")
        for (i, j) in [*self.iota, *self.omega]:
            if not (0 <= i < N and 0 <= j < N) or i == j:
                raise ModelError(f"bound given for invalid link ({i + 1},{j + 1})")


def canonical_links(N: int) -> list[Link]:
    """All ordered pairs, grouped by unordered pair: (1,2),(2,1),(1,3),(3,1),(2,3),(3,2),..."""
    out = []
    for a, b in itertools.combinations(range(N), 2):
        out += [(a, b), (b, a)]
    return out


def candidate_links(net: PlantNetwork, plant_edges_only: bool = False) -> list[Link]:
    links = canonical_links(net.N)
    if plant_edges_only:
        edges = set(net.plant_edges())
        links = [l for l in links if l in edges]
    return links


@dataclass(frozen=True)
class LinkPattern:
    """Binary control-network pattern over an ordered candidate link list."""

    links: tuple[Link, ...]
    active: frozenset

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(tuple(l) for l in self.links))
        object.__setattr__(self, "active", frozenset(tuple(l) for l in self.active))
        if not self.active <= set(self.links):
            raise ModelError("active links must be candidates")
        if any(i == j for i, j in self.links):
            raise ModelError("diagonal links are not allowed")

    @classmethod
    def full(cls, links: Sequence[Link]) -> "LinkPattern":
        return cls(tuple(links), frozenset(links))

    @classmethod
    def empty(cls, links: Sequence[Link]) -> "LinkPattern":
        return cls(tuple(links), frozenset())

    @classmethod
    def from_vector(cls, links: Sequence[Link], alpha: Iterable[int]) -> "LinkPattern":
        alpha = list(alpha)
        if len(alpha) != len(links) or any(a not in (0, 1) for a in alpha):
            raise ModelError(f"alpha must be a binary vector of length {len(links)}")
        return cls(tuple(links), frozenset(l for l, a in zip(links, alpha) if a))

    def alpha(self, i: int, j: int) -> int:
        return int((i, j) in self.active)

    def vector(self) -> tuple[int, ...]:
        return tuple(int(l in self.active) for l in self.links)

    def ordered_active(self) -> list[Link]:
        return [l for l in self.links if l in self.active]

    def without(self, link: Link) -> "LinkPattern":
        return LinkPattern(self.links, self.active - {link})

    @property
    def count(self) -> int:
        return len(self.active)

    def __str__(self):
        return " ".join(f"a{i + 1}{j + 1}={int((i, j) in self.active)}" for i, j in self.links)


@dataclass(frozen=True)
class BlockMatrices:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    H: np.ndarray
    n: list[int]
    m: list[int]
    r: list[int]

    def slices(self, which: str = "n") -> list[slice]:
        sizes = getattr(self, which)
        offs = np.concatenate([[0], np.cumsum(sizes)])
        return [slice(int(a), int(b)) for a, b in zip(offs[:-1], offs[1:])]


def assemble_block_matrices(net: PlantNetwork) -> BlockMatrices:
    n, m, r = net.dims
    A = sla.block_diag(*[s.A for s in net.subsystems])
    B = sla.block_diag(*[s.B for s in net.subsystems])
    C = sla.block_diag(*[s.C for s in net.subsystems])
    A = A.reshape(sum(n), sum(n))
    B = B.reshape(sum(n), sum(m))
    C = C.reshape(sum(r), sum(n))
    H = np.zeros((sum(n), sum(n)))
    off = np.concatenate([[0], np.cumsum(n)]).astype(int)
    for c in net.couplings:
        H[off[c.target]:off[c.target + 1], off[c.source]:off[c.source + 1]] = c.H
    return BlockMatrices(A, B, C, H, n, m, r)


def kalman_rank(M: np.ndarray) -> int:
    """Numerical rank with threshold max(dim) * sigma_max * 1e-10."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    tol = max(M.shape) * s[0] * 1e-10
    return int(np.sum(s > tol)) if s[0] > 0 else 0


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    return controllability_matrix(A.T, C.T).T


def is_controllable(A: np.ndarray, B: np.ndarray) -> bool:
    return kalman_rank(controllability_matrix(A, B)) == A.shape[0]


def is_observable(A: np.ndarray, C: np.ndarray) -> bool:
    return kalman_rank(observability_matrix(A, C)) == A.shape[0]


@dataclass
class ValidationReport:
    controllable: list[bool]
    observable: list[bool]
    beta_ok: bool

    @property
    def ok(self) -> bool:
        return all(self.controllable) and all(self.observable) and self.beta_ok

    def problems(self) -> list[str]:
        out = [f"subsystem {i + 1}: (A, B) not controllable" for i, c in enumerate(self.controllable) if not c]
        out += [f"subsystem {i + 1}: (A, C) not observable" for i, o in enumerate(self.observable) if not o]
        if not self.beta_ok:
            out.append("negative stability margin")
        return out


def validate_network(net: PlantNetwork) -> ValidationReport:
    """Check dimensions (raising on mismatch) and report controllability/observability."""
    for k, s in enumerate(net.subsystems):
        n = s.A.shape[0]
        if s.A.shape != (n, n):
            raise ModelError(f"subsystem {k + 1}: A must be square, got {s.A.shape}")
        if s.B.shape[0] != n:
            raise ModelError(f"subsystem {k + 1}: B has {s.B.shape[0]} rows, A has {n}")
        if s.C.shape[1] != n:
            raise ModelError(f"subsystem {k + 1}: C has {s.C.shape[1]} columns, A has {n}")
    for c in net.couplings:
        want = (net.subsystems[c.target].n, net.subsystems[c.source].n)
        if c.H.shape != want:
            raise ModelError(
                f"coupling {c.source + 1}->{c.target + 1}: H has shape {c.H.shape}, expected {want}"
            )
    return ValidationReport(
        controllable=[is_controllable(s.A, s.B) for s in net.subsystems],
        observable=[is_observable(s.A, s.C) for s in net.subsystems],
        beta_ok=all(b >= 0 for b in net.beta),
    )


def detect_poset(net: PlantNetwork) -> list[int] | None:
    """Ordering under which H is block lower triangular, or None for cyclic coupling graphs.

    In the returned order every influencing subsystem ``j`` of ``i``
    (``H_ij != 0``) precedes ``i``.
    """
    ts = TopologicalSorter({i: set() for i in range(net.N)})
    for i, j in net.plant_edges():
        ts.add(i, j)
    try:
        order = list(ts.static_order())
    except CycleError:
        return None
    return order


@dataclass(frozen=True)
class PendulumParams:
    M: tuple[float, ...] = (2.0, 1.0, 3.0)
    m: float = 0.5
    g: float = 10.0
    l: float = 0.5
    k: dict = field(default_factory=lambda: {(0, 1): 5.0, (1, 2): 15.0})
    b: dict = field(default_factory=lambda: {(0, 1): 1.0, (1, 2): 5.0})
    c: tuple[float, ...] = (4.0, 2.0, 1.0)
    beta: float = 0.5

    def spring(self, i: int, j: int) -> float:
        return float(self.k.get((min(i, j), max(i, j)), 0.0))

    def damper(self, i: int, j: int) -> float:
        return float(self.b.get((min(i, j), max(i, j)), 0.0))


def build_pendulum_network(
    params: PendulumParams | None = None,
    kappa: Sequence[float] | None = None,
    mu: Sequence[float] | None = None,
    iota: float = 30.0,
    omega: float = 10.0,
) -> tuple[PlantNetwork, GainBounds]:
    """Three (or more) inverted pendulums on carts linked by springs and dampers.

    State per cart is (theta, theta_dot, x, x_dot) and the measured output is
    (theta, x). Spring/damper coefficients are symmetric in the cart pair.
    """
    p = params or PendulumParams()
    N = len(p.M)
    if any(v <= 0 for v in (*p.M, p.m, p.g, p.l)) or any(v < 0 for v in p.c):
        raise ModelError("pendulum parameters must be positive")
    subs, cpl = [], []
    for i in range(N):
        Mi = p.M[i]
        ki = sum(p.spring(i, j) for j in range(N) if j != i)
        bi = sum(p.damper(i, j) for j in range(N) if j != i)
        ci = p.c[i]
        den = Mi * p.l
        A = np.array([
            [0.0, 1.0, 0.0, 0.0],
            [(Mi + p.m) * p.g / den, 0.0, ki / den, (ci + bi) / den],
            [0.0, 0.0, 0.0, 1.0],
            [-p.m * p.g / Mi, 0.0, -ki / Mi, (-ci - bi) / Mi],
        ])
        B = np.array([[0.0], [-1.0 / den], [0.0], [1.0 / Mi]])
        C = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
        subs.append(Subsystem(A, B, C, name=f"pendulum{i + 1}"))
        for j in range(N):
            kij, bij = p.spring(i, j), p.damper(i, j)
            if j == i or (kij == 0 and bij == 0):
                continue
            H = np.zeros((4, 4))
            H[1, 2], H[1, 3] = -kij / den, -bij / den
            H[3, 2], H[3, 3] = kij / Mi, bij / Mi
            cpl.append(Coupling(i, j, H))
    net = PlantNetwork(tuple(subs), tuple(cpl), (p.beta,) * N)
    bounds = GainBounds(
        tuple(kappa) if kappa is not None else (math.inf,) * N,
        tuple(mu) if mu is not None else (math.inf,) * N,
        iota_default=iota,
        omega_default=omega,
    )
    return net, bounds


def random_network(
    rng: np.random.Generator,
    N: int,
    max_n: int = 4,
    coupling_prob: float = 0.6,
    coupling_scale: float = 0.5,
    beta: float = 0.1,
) -> PlantNetwork:
    """Random network of controllable/observable subsystems (used by property tests)."""
    subs = []
    for _ in range(N):
        while True:
            n = int(rng.integers(1, max_n + 1))
            m = int(rng.integers(1, min(2, n) + 1))
            r = int(rng.integers(1, min(2, n) + 1))
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, m))
            C = rng.normal(size=(r, n))
            if is_controllable(A, B) and is_observable(A, C):
                break
        subs.append(Subsystem(A, B, C))
    cpl = []
    for i in range(N):
        for j in range(N):
            if i != j and rng.random() < coupling_prob:
                cpl.append(Coupling(i, j, coupling_scale * rng.normal(size=(subs[i].n, subs[j].n))))
    return PlantNetwork(tuple(subs), tuple(cpl), (beta,) * N)


def random_matched_network(
    rng: np.random.Generator,
    N: int,
    max_n: int = 4,
    coupling_prob: float = 0.7,
    coupling_scale: float = 3.0,
    mismatch: float = 0.05,
    beta: float = 0.1,
) -> PlantNetwork:
    """Random network whose couplings mostly enter through the actuators and sensors.

    Each ``H_ij = s B_i G C_j + m R`` with Gaussian ``G``, ``R``. The
    matched part can be cancelled by a link ``j -> i`` on both the
    controller and observer side, so designs exist for strong couplings
    and the links actually matter.
    """
    subs = []
    for _ in range(N):
        while True:
            n = int(rng.integers(1, max_n + 1))
            m = int(rng.integers(1, min(2, n) + 1))
            r = int(rng.integers(1, min(2, n) + 1))
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, m))
            C = rng.normal(size=(r, n))
            if is_controllable(A, B) and is_observable(A, C):
                break
        subs.append(Subsystem(A, B, C))
    cpl = []
    for i in range(N):
        for j in range(N):
            if i != j and rng.random() < coupling_prob:
                G = rng.normal(size=(subs[i].m, subs[j].r))
                H = coupling_scale * subs[i].B @ G @ subs[j].C + mismatch * rng.normal(size=(subs[i].n, subs[j].n))
                cpl.append(Coupling(i, j, H))
    return PlantNetwork(tuple(subs), tuple(cpl), (beta,) * N)


def network_norm_H(net: PlantNetwork) -> float:
    return sigma_max(assemble_block_matrices(net).H)
