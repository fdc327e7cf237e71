"""Command-line front end and JSON file formats.

Exit codes: 0 ok, 1 input error, 2 no solution (or a failed check/audit),
3 divergence, 4 decentralization not established, 5 benchmark mismatch.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .decentralized import NotEstablished, corollary1_bounds, theorem3_bounds
from .lmi import Status
from .model import (
    Coupling,
    GainBounds,
    LinkPattern,
    ModelError,
    PlantNetwork,
    Subsystem,
    build_pendulum_network,
    candidate_links,
    detect_poset,
    validate_network,
)
from .numerics import spectral_abscissa
from .simulate import simulate_closed_loop, verify_decay
from .sparsify import DesignResult, NoSolution, exhaustive_design, relax_and_threshold
from .synthesis import Certificates, GainSet, audit_gain_bounds, check_lemma1, closed_loop_matrices

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NO_SOLUTION, EXIT_DIVERGED, EXIT_NOT_ESTABLISHED, EXIT_MISMATCH = range(6)
ABSCISSA_TOL = 1e-8

# (kappa, mu) of the three benchmark cases; None means "the computed lower bounds"
PENDULUM_CASES = {
    1: ((96.0, 106.0, 211.0), (27.0, 26.0, 28.0)),
    2: ((135.0, 121.0, 232.0), (27.0, 28.0, 29.0)),
    3: None,
}
PENDULUM_EXPECTED = {1: (1, 1, 0, 0, 1, 1), 2: (0, 0, 0, 0, 1, 1), 3: (0, 0, 0, 0, 0, 0)}


class InputError(ValueError):
    """Malformed model or design file; the message names the offending field."""


# ---------------------------------------------------------------------------
# JSON helpers


def _num(v: float):
    v = float(v)
    if math.isinf(v) and v > 0:
        return "inf"
    if not math.isfinite(v):
        raise InputError(f"cannot encode {v}")
    return v


def _parse_num(v, where: str) -> float:
    if v == "inf":
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{where}: expected a number or \"inf\", got {v!r}")
    return float(v)


def _mat(M) -> list:
    return [[float(x) for x in row] for row in np.atleast_2d(np.asarray(M, dtype=float))]


def _parse_mat(v, where: str) -> np.ndarray:
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise InputError(f"{where}: expected a non-empty list of rows")
    width = len(v[0])
    rows = []
    for k, r in enumerate(v):
        if len(r) != width:
            raise InputError(f"{where}[{k}]: row has {len(r)} entries, expected {width}")
        rows.append([_parse_num(x, f"{where}[{k}]") for x in r])
    a = np.array(rows, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InputError(f"{where}: matrix entries must be finite")
    return a


def _fields(obj, where: str, required: set, optional: set = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected an object")
    unknown = set(obj) - required - set(optional)
    if unknown:
        raise InputError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise InputError(f"{where}: missing field(s) {sorted(missing)}")
    return obj


def _link_key(l) -> str:
    return f"{l[0] + 1},{l[1] + 1}"


def _parse_link(key: str, where: str):
    try:
        i, j = (int(s) for s in key.split(","))
    except ValueError:
        raise InputError(f"{where}: link key {key!r} is not of the form \"i,j\"") from None
    return i - 1, j - 1


# ---------------------------------------------------------------------------
# model files


def model_to_dict(net: PlantNetwork, bounds: GainBounds) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "subsystems": [{"name": s.name or f"S{k + 1}", "A": _mat(s.A), "B": _mat(s.B), "C": _mat(s.C)}
                       for k, s in enumerate(net.subsystems)],
        "couplings": [{"from": c.source + 1, "to": c.target + 1, "H": _mat(c.H)}
                      for c in sorted(net.couplings, key=lambda c: (c.target, c.source))],
        "beta": [float(b) for b in net.beta],
        "bounds": {
            "kappa": [_num(v) for v in bounds.kappa],
            "mu": [_num(v) for v in bounds.mu],
            "iota": {"default": _num(bounds.iota_default),
                     **{_link_key(l): _num(v) for l, v in sorted(bounds.iota.items())}},
            "omega": {"default": _num(bounds.omega_default),
                      **{_link_key(l): _num(v) for l, v in sorted(bounds.omega.items())}},
        },
    }


def _parse_link_bounds(obj, where: str) -> tuple[dict, float]:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected an object")
    default = math.inf
    out = {}
    for k, v in obj.items():
        if k == "default":
            default = _parse_num(v, f"{where}.default")
        else:
            out[_parse_link(k, where)] = _parse_num(v, f"{where}.{k}")
    return out, default


def model_from_dict(d: dict) -> tuple[PlantNetwork, GainBounds]:
    _fields(d, "model", {"schema_version", "subsystems", "beta", "bounds"}, {"couplings"})
    if d["schema_version"] != SCHEMA_VERSION:
        raise InputError(f"model.schema_version: unsupported version {d['schema_version']!r}")
    if not isinstance(d["subsystems"], list) or not d["subsystems"]:
        raise InputError("model.subsystems: expected a non-empty list")
    subs = []
    for k, s in enumerate(d["subsystems"]):
        where = f"model.subsystems[{k}]"
        _fields(s, where, {"A", "B", "C"}, {"name"})
        subs.append(Subsystem(_parse_mat(s["A"], f"{where}.A"), _parse_mat(s["B"], f"{where}.B"),
                              _parse_mat(s["C"], f"{where}.C"), name=str(s.get("name", ""))))
    cpl = []
    for k, c in enumerate(d.get("couplings", [])):
        where = f"model.couplings[{k}]"
        _fields(c, where, {"from", "to", "H"})
        for key in ("from", "to"):
            if isinstance(c[key], bool) or not isinstance(c[key], int):
                raise InputError(f"{where}.{key}: expected a 1-based subsystem index")
        cpl.append(Coupling(c["to"] - 1, c["from"] - 1, _parse_mat(c["H"], f"{where}.H")))
    if not isinstance(d["beta"], list):
        raise InputError("model.beta: expected a list")
    beta = tuple(_parse_num(b, f"model.beta[{k}]") for k, b in enumerate(d["beta"]))
    b = _fields(d["bounds"], "model.bounds", {"kappa", "mu"}, {"iota", "omega"})
    for key in ("kappa", "mu"):
        if not isinstance(b[key], list):
            raise InputError(f"model.bounds.{key}: expected a list")
    iota, iota_d = _parse_link_bounds(b.get("iota", {}), "model.bounds.iota")
    omega, omega_d = _parse_link_bounds(b.get("omega", {}), "model.bounds.omega")
    try:
        net = PlantNetwork(tuple(subs), tuple(cpl), beta)
        bounds = GainBounds(tuple(_parse_num(v, f"model.bounds.kappa[{k}]") for k, v in enumerate(b["kappa"])),
                            tuple(_parse_num(v, f"model.bounds.mu[{k}]") for k, v in enumerate(b["mu"])),
                            iota, omega, iota_d, omega_d)
        bounds.check(net.N)
    except ModelError as exc:
        raise InputError(f"model: {exc}") from None
    return net, bounds


# ---------------------------------------------------------------------------
# design files


def design_to_dict(res: DesignResult) -> dict:
    g, c = res.gains, res.certificates
    return {
        "schema_version": SCHEMA_VERSION,
        "method": res.method,
        "pattern": {"links": [[i + 1, j + 1] for i, j in res.pattern.links],
                    "alpha": list(res.pattern.vector())},
        "gains": {
            "K": [_mat(K) for K in g.K],
            "L": {_link_key(l): _mat(v) for l, v in sorted(g.L.items())},
            "M": [_mat(M) for M in g.M],
            "O": {_link_key(l): _mat(v) for l, v in sorted(g.O.items())},
        },
        "certificates": {"P": [_mat(P) for P in c.P], "P_hat": [_mat(P) for P in c.P_hat],
                         "status": c.status.value},
        "margins": {k: float(v) for k, v in sorted(c.margins.items())},
        "history": {"solves": res.solves, "checks": res.checks, "steps": len(res.history)},
    }


def design_from_dict(d: dict) -> tuple[LinkPattern, GainSet, Certificates, dict]:
    _fields(d, "design", {"schema_version", "pattern", "gains", "certificates"},
            {"method", "margins", "history"})
    if d["schema_version"] != SCHEMA_VERSION:
        raise InputError(f"design.schema_version: unsupported version {d['schema_version']!r}")
    p = _fields(d["pattern"], "design.pattern", {"links", "alpha"})
    try:
        links = [(int(i) - 1, int(j) - 1) for i, j in p["links"]]
        pattern = LinkPattern.from_vector(links, p["alpha"])
    except (TypeError, ValueError) as exc:
        raise InputError(f"design.pattern: {exc}") from None
    gd = _fields(d["gains"], "design.gains", {"K", "L", "M", "O"})
    g = GainSet([_parse_mat(K, f"design.gains.K[{k}]") for k, K in enumerate(gd["K"])],
                {_parse_link(k, "design.gains.L"): _parse_mat(v, f"design.gains.L.{k}") for k, v in gd["L"].items()},
                [_parse_mat(M, f"design.gains.M[{k}]") for k, M in enumerate(gd["M"])],
                {_parse_link(k, "design.gains.O"): _parse_mat(v, f"design.gains.O.{k}") for k, v in gd["O"].items()})
    cd = _fields(d["certificates"], "design.certificates", {"P", "P_hat"}, {"status"})
    try:
        status = Status(cd.get("status", Status.STRICTLY_FEASIBLE.value))
    except ValueError:
        raise InputError(f"design.certificates.status: unknown status {cd['status']!r}") from None
    certs = Certificates([_parse_mat(P, f"design.certificates.P[{k}]") for k, P in enumerate(cd["P"])],
                         [_parse_mat(P, f"design.certificates.P_hat[{k}]") for k, P in enumerate(cd["P_hat"])],
                         {k: float(v) for k, v in d.get("margins", {}).items()}, status)
    return pattern, g, certs, d


def check_design_dims(net: PlantNetwork, g: GainSet, certs: Certificates) -> None:
    n, m, r = net.dims
    N = net.N
    if len(g.K) != N or len(g.M) != N or len(certs.P) != N or len(certs.P_hat) != N:
        raise InputError(f"design is sized for {len(g.K)} subsystems, model has {N}")
    for i in range(N):
        for name, M, want in (("K", g.K[i], (m[i], n[i])), ("M", g.M[i], (n[i], r[i])),
                              ("P", certs.P[i], (n[i], n[i])), ("P_hat", certs.P_hat[i], (n[i], n[i]))):
            if M.shape != want:
                raise InputError(f"design {name}{i + 1} has shape {M.shape}, model needs {want}")
    for (i, j), L in g.L.items():
        if not (0 <= i < N and 0 <= j < N) or L.shape != (m[i], n[j]):
            raise InputError(f"design L{i + 1}{j + 1} does not fit the model")
    for (i, j), O in g.O.items():
        if not (0 <= i < N and 0 <= j < N) or O.shape != (n[i], r[j]):
            raise InputError(f"design O{i + 1}{j + 1} does not fit the model")


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path: str, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_model(path: str) -> tuple[PlantNetwork, GainBounds]:
    try:
        net, bounds = model_from_dict(_read_json(path))
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None
    try:
        rep = validate_network(net)
    except ModelError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not rep.ok:
        raise InputError(f"{path}: " + "; ".join(rep.problems()))
    return net, bounds


# ---------------------------------------------------------------------------
# printing


def _g6(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6g}"


def pattern_table(pattern: LinkPattern) -> str:
    head = " ".join(f"a{i + 1}{j + 1}" for i, j in pattern.links)
    vals = " ".join(f"{a:>{len(f'a{i + 1}{j + 1}')}}" for (i, j), a in zip(pattern.links, pattern.vector()))
    return f"{head}\n{vals}\nlinks: {pattern.count}"


# ---------------------------------------------------------------------------
# commands


def run_design(net, bounds, variant: str) -> DesignResult:
    if variant == "exhaustive":
        return exhaustive_design(net, bounds)
    return relax_and_threshold(net, bounds, variant)


def cmd_design(args) -> int:
    net, bounds = load_model(args.model)
    try:
        res = run_design(net, bounds, args.variant)
    except NoSolution as exc:
        print(f"no solution: {exc}")
        return EXIT_NO_SOLUTION
    print(pattern_table(res.pattern))
    ax, ae = res.abscissas(net)
    print(f"closed-loop spectral abscissas: A_x {_g6(ax)}, A_e {_g6(ae)}")
    if args.out:
        _write_json(args.out, design_to_dict(res))
        print(f"design written to {args.out}")
    return EXIT_OK


def check_results(net, bounds, g: GainSet) -> list[tuple[str, bool, str]]:
    """(criterion, passed, detail) rows for a stored design."""
    cert = check_lemma1(net, g)
    cl = closed_loop_matrices(net, g)
    limit = -min(net.beta) + ABSCISSA_TOL
    sx, se = spectral_abscissa(cl.A_x), spectral_abscissa(cl.A_e)
    audit = audit_gain_bounds(g, bounds)
    return [
        ("Lyapunov certificate", cert.certified,
         f"S1 margin {_g6(cert.margins['S1'])}, S2 margin {_g6(cert.margins['S2'])} ({cert.status.value})"),
        ("spectral abscissa", sx < limit and se < limit, f"A_x {_g6(sx)}, A_e {_g6(se)}, limit {_g6(limit)}"),
        ("gain budgets", not audit, "; ".join(audit) or "all within budget"),
    ]


def cmd_check(args) -> int:
    net, bounds = load_model(args.model)
    _, g, certs, _ = design_from_dict(_read_json(args.design))
    check_design_dims(net, g, certs)
    rows = check_results(net, bounds, g)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_NO_SOLUTION


def _parse_vector(spec: str | None, n: int, rng: np.random.Generator, what: str) -> np.ndarray:
    if spec is None or spec == "zero":
        return np.zeros(n)
    if spec == "random":
        return rng.normal(size=n)
    try:
        v = np.array([float(s) for s in spec.split(",")])
    except ValueError:
        raise InputError(f"--{what}: expected 'random', 'zero' or {n} comma-separated numbers") from None
    if v.shape != (n,):
        raise InputError(f"--{what}: expected {n} values, got {v.size}")
    return v


def cmd_simulate(args) -> int:
    net, _ = load_model(args.model)
    _, g, certs, _ = design_from_dict(_read_json(args.design))
    check_design_dims(net, g, certs)
    n = sum(net.dims[0])
    rng = np.random.default_rng(args.seed)
    x0 = _parse_vector(args.x0, n, rng, "x0")
    e0 = _parse_vector(args.e0, n, rng, "e0")
    try:
        traj = simulate_closed_loop(net, g, x0, e0, args.T, args.dt)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.csv:
        Path(args.csv).write_text(traj.to_csv())
        print(f"trajectory written to {args.csv}")
    if traj.diverged:
        print(f"diverged at step {len(traj.times)} (t = {_g6(traj.diverged_at)})")
        return EXIT_DIVERGED
    if np.any(e0):
        # the decay audit needs e0 = 0; rerun the x-only part for it
        traj = simulate_closed_loop(net, g, x0, None, args.T, args.dt)
    rep = verify_decay(traj, certs, min(net.beta), closed_loop_matrices(net, g).A_x)
    print(f"decay {rep}")
    return EXIT_OK if rep.passed else EXIT_NO_SOLUTION


def cmd_decentralize(args) -> int:
    net, _ = load_model(args.model)
    order = detect_poset(net)
    try:
        if order is not None and net.couplings:
            print(f"coupling graph is acyclic (order {[k + 1 for k in order]}); coupling-free bounds apply")
            db = corollary1_bounds(net)
        else:
            db = theorem3_bounds(net)
    except NotEstablished as exc:
        print(f"not established: {exc}")
        return EXIT_NOT_ESTABLISHED
    print(f"controller premise: {'holds' if db.premise_controller else 'fails'}")
    print(f"observer premise:   {'holds' if db.premise_observer else 'fails'}")
    print(f"established by: {db.established_by}")
    for note in db.notes:
        print(f"note: {note}")
    print("kappa_lower: " + ", ".join(_g6(v) for v in db.kappa_lower))
    print("mu_lower:    " + ", ".join(_g6(v) for v in db.mu_lower))
    if db.at_cap:
        print("unbounded direction, bounds reported at cap")
    return EXIT_OK


def bench_pendulum(variants=("linear", "binary", "exhaustive"), cases=(1, 2, 3), out=print):
    """Run the pendulum cases; returns {(case, variant): (pattern vector or None, seconds)}."""
    net, _ = build_pendulum_network()
    db = theorem3_bounds(net)
    results = {}
    for c in cases:
        kappa, mu = PENDULUM_CASES[c] or (db.kappa_lower, db.mu_lower)
        net, bounds = build_pendulum_network(kappa=kappa, mu=mu)
        for v in variants:
            t0 = time.perf_counter()
            try:
                vec = run_design(net, bounds, v).pattern.vector()
            except NoSolution:
                vec = None
            results[(c, v)] = (vec, time.perf_counter() - t0)
            out(f"case {c} {v:<10} {vec if vec is not None else 'no solution'} "
                f"({results[(c, v)][1]:.1f} s)")
    return results


def cmd_bench_pendulum(args) -> int:
    variants = ("linear", "binary", "exhaustive")
    res = bench_pendulum(variants)
    links = candidate_links(build_pendulum_network()[0])
    print()
    print("case  " + " ".join(f"a{i + 1}{j + 1}" for i, j in links) + "  method      expected")
    bad = []
    for (c, v), (vec, _) in res.items():
        want = PENDULUM_EXPECTED[c]
        cells = " ".join(f"{a:>3}" for a in vec) if vec is not None else "no solution".center(23)
        mark = "match" if vec == want else "MISMATCH"
        print(f"{c:>4}  {cells}  {v:<10}  {want} {mark}")
        if vec != want:
            diff = [f"a{i + 1}{j + 1}" for (i, j), a, b in zip(links, vec or (None,) * 6, want) if a != b]
            bad.append(f"case {c} {v}: differs at {', '.join(diff)}")
    total = sum(t for _, t in res.values())
    print(f"total time {total:.1f} s")
    if bad:
        print("mismatch:\n  " + "\n  ".join(bad))
        return EXIT_MISMATCH
    print("all patterns match")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparse-ncs", description="Sparse observer-controller network design.")
    ap.add_argument("--seed", type=int, default=0, help="seed for random initial conditions (default 0)")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="design a sparse control network")
    d.add_argument("model")
    d.add_argument("--variant", choices=("linear", "binary", "exhaustive"), default="linear")
    d.add_argument("--out")
    d.set_defaults(func=cmd_design)

    c = sub.add_parser("check", help="re-certify a stored design")
    c.add_argument("model")
    c.add_argument("design")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="simulate a design and audit its decay")
    s.add_argument("model")
    s.add_argument("design")
    s.add_argument("--x0", default="random", help="'random', 'zero' or comma-separated values")
    s.add_argument("--e0", default="zero", help="'random', 'zero' or comma-separated values")
    s.add_argument("--T", type=float, default=10.0)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_simulate)

    z = sub.add_parser("decentralize", help="lower gain bounds for decentralized control")
    z.add_argument("model")
    z.set_defaults(func=cmd_decentralize)

    b = sub.add_parser("bench-pendulum", help="reproduce the three pendulum cases")
    b.set_defaults(func=cmd_bench_pendulum)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
