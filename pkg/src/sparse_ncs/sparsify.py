"""Link minimization: relaxation-thresholding heuristics and an exhaustive oracle.

Both heuristics start from the full candidate pattern, solve the binary
program, then solve a relaxed program in which the matrix variables are
frozen and only the link indicators ``alpha_ij in [0, 1]`` move. The
``linear`` variant drops the link with the smallest relaxed value and
repeats; the ``binary`` variant keeps every link whose relaxed value is at
least a threshold found by bisection, using eigenvalue checks at the frozen
matrices. Every returned pattern is re-certified from scratch.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from . import lmi
from .decentralized import NotEstablished, corollary1_bounds, theorem3_bounds
from .model import GainBounds, Link, LinkPattern, PlantNetwork, candidate_links, detect_poset
from .synthesis import (
    Certificates,
    GainSet,
    Theorem1Solution,
    audit_gain_bounds,
    build_relaxed_program,
    check_lemma1,
    frozen_check,
    recover_gains,
    solve_theorem1,
    stability_margins,
)

log = logging.getLogger(__name__)

ZERO_ALPHA = 1e-9
EXHAUSTIVE_LIMIT = 12
# C1/C2 margin and reweighting passes of the minimum-coupling step-2 point
COUPLING_MARGIN = 1e-2
REWEIGHTS = 2


class NoSolution(Exception):
    """The full candidate pattern is not certified feasible, so no design exists."""

    def __init__(self, message: str, history: list | None = None):
        super().__init__(message)
        self.history = history or []


class DesignError(RuntimeError):
    """A pattern passed the screening solve but its gains could not be certified."""


@dataclass
class DesignResult:
    pattern: LinkPattern
    gains: GainSet
    certificates: Certificates
    method: str
    history: list[dict] = field(default_factory=list)
    solves: int = 0
    checks: int = 0

    @property
    def link_count(self) -> int:
        return self.pattern.count

    def abscissas(self, net: PlantNetwork) -> tuple[float, float]:
        return stability_margins(net, self.gains)

    def history_json(self) -> str:
        return json.dumps(self.history, indent=2, sort_keys=True)


def _link_name(l: Link) -> str:
    return f"{l[0] + 1}{l[1] + 1}"


def _decentralized_candidate(net: PlantNetwork, bounds: GainBounds, eps_feas: float):
    """Empty-pattern design from the decentralization bounds, or None when they do not apply."""
    try:
        db = corollary1_bounds(net, eps_feas=eps_feas) if detect_poset(net) is not None and net.couplings \
            else theorem3_bounds(net, eps_feas=eps_feas)
    except NotEstablished as exc:
        return None, {"step": "decentralize", "status": "NotEstablished", "message": str(exc)}
    entry = {"step": "decentralize", "kappa_lower": list(db.kappa_lower), "mu_lower": list(db.mu_lower),
             "established_by": db.established_by}
    if not db.admits(bounds.kappa, bounds.mu):
        entry["status"] = "budgets below bounds"
        return None, entry
    g = db.gains(net)
    if audit_gain_bounds(g, bounds):
        entry["status"] = "budget audit failed"
        return None, entry
    cert = check_lemma1(net, g, eps_feas=eps_feas)
    entry["status"] = "certified" if cert.certified else "not certified"
    return ((g, cert, db) if cert.certified else None), entry


def _certify(net: PlantNetwork, bounds: GainBounds, sol: Theorem1Solution, pattern: LinkPattern,
             eps_feas: float) -> tuple[GainSet, Certificates]:
    g = recover_gains(sol, pattern, bounds)
    cert = check_lemma1(net, g, eps_feas=eps_feas)
    if not cert.certified:
        raise DesignError(f"gains for pattern {pattern} not certified ({cert.status.value})")
    return g, cert


def _empty_design(net, bounds, links, eps_feas, history, method, solves=0):
    """Try the decentralization shortcut; returns a DesignResult or None."""
    cand, entry = _decentralized_candidate(net, bounds, eps_feas)
    history.append(entry)
    if cand is None:
        return None
    g, cert, _ = cand
    return DesignResult(LinkPattern.empty(links), g, cert, method, history, solves)


def _solve_step2(net, bounds, pattern, eps_feas, history, it):
    res = solve_theorem1(net, bounds, pattern, eps_feas=eps_feas, coupling_margin=COUPLING_MARGIN, reweights=REWEIGHTS)
    history.append({"step": 2, "iteration": it, "pattern": list(pattern.vector()),
                    "status": res.status.value, "margin": res.margin})
    return res


def _relaxed(net, sol, pattern, eps_feas, history, it):
    rp = build_relaxed_program(net, sol, pattern, eps_feas)
    if not rp.alpha:
        return {}
    rep = lmi.solve(rp.problem, eps_feas, rel_gap=1e-10)
    if not rep.feasible:
        # the frozen point with all alphas at one is feasible, so fall back to it
        vals = {l: 1.0 for l in rp.alpha}
        status = rep.status.value
    else:
        vals = {l: min(max(v, 0.0), 1.0) for l, v in rp.values(rep.x).items()}
        status = "ok"
    history.append({"step": 3, "iteration": it, "status": status,
                    "alpha_r": {_link_name(l): v for l, v in vals.items()}})
    return vals


def _smallest(vals: dict[Link, float]) -> Link:
    """Smallest relaxed value; values within ZERO_ALPHA of it tie and the first pair (i, j) wins."""
    lo = min(vals.values())
    tied = sorted(l for l, v in vals.items() if v <= lo + ZERO_ALPHA)
    return tied[0]


def threshold_search(alpha_r: dict[Link, float], check) -> tuple[float, frozenset]:
    """Largest threshold tau over the distinct nonzero relaxed values with ``check(keep)`` true.

    ``check`` receives the set of links kept, ``{l : alpha_r[l] >= tau}``,
    and must be monotone for the bisection to be exact. The full set is the
    known-feasible fallback (``tau = 0``); when every value is zero the
    empty set is returned with ``tau = inf``. At most
    ``ceil(log2(E)) + 1`` checks are made.
    """
    vals = sorted({v for v in alpha_r.values() if v > ZERO_ALPHA})
    if not vals:
        return math.inf, frozenset()
    lo, hi = -1, len(vals)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        keep = frozenset(l for l, v in alpha_r.items() if v >= vals[mid])
        if check(keep):
            lo = mid
        else:
            hi = mid
    if lo < 0:
        return 0.0, frozenset(alpha_r)
    return vals[lo], frozenset(l for l, v in alpha_r.items() if v >= vals[lo])


def relax_and_threshold(
    net: PlantNetwork,
    bounds: GainBounds,
    variant: str = "linear",
    links: Sequence[Link] | None = None,
    eps_feas: float = lmi.EPS_FEAS,
    decentralize_first: bool = True,
) -> DesignResult:
    """Heuristic minimum-link design.

    Raises :class:`NoSolution` when the full candidate pattern is not
    certified feasible and no decentralized design applies.
    """
    if variant not in ("linear", "binary"):
        raise ValueError(f"unknown variant {variant!r}")
    links = list(candidate_links(net) if links is None else links)
    history: list[dict] = []
    if decentralize_first:
        out = _empty_design(net, bounds, links, eps_feas, history, f"heuristic-{variant}")
        if out is not None:
            return out

    pattern = LinkPattern.full(links)
    res = _solve_step2(net, bounds, pattern, eps_feas, history, 0)
    solves = 1
    if not res.feasible:
        raise NoSolution(f"full pattern is {res.status.value}; there is no solution", history)

    if variant == "linear":
        it = 0
        while pattern.count:
            it += 1
            vals = _relaxed(net, res.solution, pattern, eps_feas, history, it)
            if all(v >= 1 - ZERO_ALPHA for v in vals.values()):
                history.append({"step": 4, "iteration": it, "status": "all relaxed values at ceiling"})
                break
            drop = _smallest(vals)
            trial = pattern.without(drop)
            nxt = _solve_step2(net, bounds, trial, eps_feas, history, it)
            solves += 1
            history[-1]["removed"] = _link_name(drop)
            if not nxt.feasible:
                break
            pattern, res = trial, nxt
        sol = res.solution
        checks = 0
    else:
        vals = _relaxed(net, res.solution, pattern, eps_feas, history, 1)
        frozen = res.solution
        log_checks = []

        def check(keep):
            ok, worst = frozen_check(net, frozen, pattern, LinkPattern(tuple(links), keep), eps_feas)
            log_checks.append({"keep": sorted(_link_name(l) for l in keep), "ok": ok, "worst": worst})
            return ok

        tau, keep = threshold_search(vals, check)
        checks = len(log_checks)
        history.append({"step": 5, "tau": tau, "checks": log_checks})
        final = LinkPattern(tuple(links), keep)
        fresh = _solve_step2(net, bounds, final, eps_feas, history, 2)
        solves += 1
        if fresh.feasible:
            sol = fresh.solution
        else:
            # the frozen matrices satisfy every constraint at the checked pattern
            sol = Theorem1Solution(frozen.Z, frozen.W, {l: frozen.Y[l] for l in keep}, frozen.P_hat,
                                   frozen.W_hat, {l: frozen.Y_hat[l] for l in keep}, {l: 1.0 for l in keep})
            history[-1]["fallback"] = "frozen matrices"
        pattern = final

    g, cert = _certify(net, bounds, _restrict(sol, pattern), pattern, eps_feas)
    return DesignResult(pattern, g, cert, f"heuristic-{variant}", history, solves, checks)


def _restrict(sol: Theorem1Solution, pattern: LinkPattern) -> Theorem1Solution:
    keep = pattern.active
    return Theorem1Solution(sol.Z, sol.W, {l: v for l, v in sol.Y.items() if l in keep}, sol.P_hat,
                            sol.W_hat, {l: v for l, v in sol.Y_hat.items() if l in keep},
                            {l: 1.0 for l in keep})


def exhaustive_design(
    net: PlantNetwork,
    bounds: GainBounds,
    links: Sequence[Link] | None = None,
    max_links: int = EXHAUSTIVE_LIMIT,
    eps_feas: float = lmi.EPS_FEAS,
    decentralize_first: bool = True,
) -> DesignResult:
    """Minimum-cardinality certified pattern by enumeration.

    Patterns are visited by increasing link count and, within a count, in
    ``itertools.combinations`` order over the candidate list, so ties go to
    the pattern whose active links come first in the canonical order.
    """
    links = list(candidate_links(net) if links is None else links)
    E = len(links)
    if E > max_links:
        raise ValueError(f"{E} candidate links exceed the exhaustive limit {max_links}; "
                         "restrict candidates to plant edges or raise max_links")
    history: list[dict] = []
    solves = 0
    if decentralize_first:
        out = _empty_design(net, bounds, links, eps_feas, history, "exhaustive")
        if out is not None:
            return out
    for k in range(E + 1):
        for combo in itertools.combinations(range(E), k):
            pat = LinkPattern(tuple(links), frozenset(links[c] for c in combo))
            res = solve_theorem1(net, bounds, pat, eps_feas=eps_feas, stop_early=True)
            solves += 1
            history.append({"pattern": list(pat.vector()), "status": res.status.value})
            if res.feasible:
                # screening stopped at the first strictly feasible iterate; recenter for the gains
                full = solve_theorem1(net, bounds, pat, eps_feas=eps_feas)
                solves += 1
                sol = full.solution if full.feasible else res.solution
                g, cert = _certify(net, bounds, sol, pat, eps_feas)
                return DesignResult(pat, g, cert, "exhaustive", history, solves)
    raise NoSolution("no pattern is certified feasible", history)
