import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_ncs.lmi import (
    EPS_FEAS,
    AffineLMI,
    LmiError,
    MatExpr,
    SdpProblem,
    Status,
    box_violation,
    eig_bound_as_lmi,
    evaluate_constraints,
    solve,
    solve_feasibility,
    solve_min_linear,
    sv_bound_as_lmi,
)
from sparse_ncs.numerics import lambda_min, sigma_max


def assert_sound(p, rep, eps=EPS_FEAS):
    """A StrictlyFeasible report must survive an independent eigenvalue audit."""
    if rep.status is Status.STRICTLY_FEASIBLE:
        margins = evaluate_constraints(p, rep.x)
        for lmi, m in zip(p.constraints, margins):
            assert m >= lmi.margin - 1e-12
            if lmi.margin > 0:
                assert m >= eps * (1 + np.linalg.norm(lmi.const, 2)) - 1e-12
        assert box_violation(p, rep.x) == 0.0


def lyapunov_problem(A):
    n = A.shape[0]
    p = SdpProblem("lyap")
    P = p.matrix_var("P", n, symmetric=True)
    p.add_lmi(P - np.eye(n), name="P>=I")
    p.add_lmi(-(A.T @ P + P @ A), strict=True, name="decay")
    p.add_lmi(1e3 * np.eye(n) - P, name="cap")
    return p, P


def test_matexpr_algebra():
    p = SdpProblem()
    x = p.scalar("x")
    y = p.scalar("y")
    e = 2.0 * x + y - 1.0
    assert e.value(np.array([3.0, 4.0]))[0, 0] == pytest.approx(9.0)
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    X = p.matrix_var("X", 2)
    v = np.arange(2, 6, dtype=float)
    Xv = v.reshape(2, 2)
    assert np.allclose((M @ X).value(np.r_[0, 0, v]), M @ Xv)
    assert np.allclose((X @ M).T.value(np.r_[0, 0, v]), (Xv @ M).T)
    assert np.allclose(X.sym().value(np.r_[0, 0, v]), Xv + Xv.T)


def test_symmetric_variable_and_bmat():
    p = SdpProblem()
    S = p.matrix_var("S", 3, symmetric=True)
    assert p.n == 6
    x = np.arange(1.0, 7.0)
    val = S.value(x)
    assert np.array_equal(val, val.T)
    B = MatExpr.bmat([[S, None], [None, np.eye(2)]])
    assert B.shape == (5, 5)
    assert np.allclose(B.value(x)[:3, :3], val)
    assert np.allclose(B.value(x)[3:, 3:], np.eye(2))
    with pytest.raises(LmiError):
        MatExpr.bmat([[S, np.eye(2)], [np.eye(2), None]])


def test_add_lmi_rejects_bad_shapes():
    p = SdpProblem()
    X = p.matrix_var("X", 2, 3)
    with pytest.raises(LmiError):
        p.add_lmi(X)
    Y = p.matrix_var("Y", 2)
    with pytest.raises(LmiError, match="not symmetric"):
        p.add_lmi(Y)
    with pytest.raises(LmiError):
        p.add_var("z", lo=1.0, hi=0.0)


def test_lyapunov_stable_scalar_feasible():
    p, P = lyapunov_problem(np.array([[-1.0]]))
    rep = solve_feasibility(p)
    assert rep.status is Status.STRICTLY_FEASIBLE
    assert P.value(rep.x)[0, 0] > 0
    assert_sound(p, rep)


def test_lyapunov_unstable_scalar_infeasible():
    p, _ = lyapunov_problem(np.array([[1.0]]))
    rep = solve_feasibility(p)
    assert rep.status is Status.INFEASIBLE
    assert rep.lower_bound is None or rep.lower_bound > 0


def test_lyapunov_diagonal_identity_qualifies():
    A = np.diag([-1.0, -2.0])
    p, P = lyapunov_problem(A)
    # P = I is an interior point of the decay constraint
    x_id = np.array([1.0, 0.0, 1.0])
    assert np.allclose(P.value(x_id), np.eye(2))
    assert lambda_min(-(A.T + A)) > 0
    rep = solve_feasibility(p)
    assert rep.status is Status.STRICTLY_FEASIBLE
    Pv = P.value(rep.x)
    assert lambda_min(Pv) > 0 and lambda_min(-(A.T @ Pv + Pv @ A)) > 0
    assert_sound(p, rep)


def test_min_alpha_over_unit_interval():
    p = SdpProblem()
    a = p.scalar("alpha", lo=0.0, hi=1.0)
    p.add_lmi(MatExpr(np.zeros((2, 2)), a.idx, a.coef[:, 0, 0][:, None, None] * np.eye(2)))
    p.set_objective(a)
    rep = solve(p)
    assert rep.status is Status.STRICTLY_FEASIBLE
    assert rep.x[0] == pytest.approx(0.0, abs=1e-5)


def test_min_alpha_kept_from_one():
    # (1 - alpha) M <= -delta I with M = -I means alpha <= 1 - delta
    p = SdpProblem()
    a = p.scalar("alpha", lo=0.0, hi=1.0)
    delta = 0.25
    p.add_lmi((1.0 - a) * 1.0 - delta, name="gap")
    p.set_objective(-1.0 * a)
    rep = solve(p)
    assert rep.status is Status.STRICTLY_FEASIBLE
    assert rep.x[0] == pytest.approx(1.0 - delta, abs=1e-5)
    assert rep.x[0] < 1.0 - delta + 1e-9


def _lp_vertex_optimum(Aub, bub, c):
    # enumerate intersections of pairs of active constraints
    best, arg = np.inf, None
    rows = list(range(len(bub)))
    for i in rows:
        for j in rows:
            if j <= i:
                continue
            M = Aub[[i, j]]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, bub[[i, j]])
            if np.all(Aub @ v <= bub + 1e-9) and c @ v < best:
                best, arg = c @ v, v
    return best, arg


def test_lp_as_diagonal_lmi_matches_vertex_enumeration():
    # constraints Aub x <= bub, including x >= 0
    Aub = np.array([[1.0, 1.0], [1.0, 3.0], [-1.0, 0.0], [0.0, -1.0], [2.0, -1.0]])
    bub = np.array([4.0, 6.0, 0.0, 0.0, 5.0])
    c = np.array([-1.0, -2.0])
    best, arg = _lp_vertex_optimum(Aub, bub, c)
    p = SdpProblem("lp")
    x = p.matrix_var("x", 2, 1)
    xs = [MatExpr(np.zeros((1, 1)), [k], np.ones((1, 1, 1))) for k in x.idx]
    diag = [bub[i] - sum(Aub[i, k] * xs[k] for k in range(2)) for i in range(len(bub))]
    p.add_lmi(MatExpr.block_diag(diag))
    p.set_objective({0: c[0], 1: c[1]})
    rep = solve(p, rel_gap=1e-9)
    assert rep.status is Status.STRICTLY_FEASIBLE
    assert rep.objective == pytest.approx(best, abs=1e-6)
    assert np.allclose(rep.x, arg, atol=1e-5)


def test_unbounded_descent_reported():
    p = SdpProblem()
    x = p.scalar("x")
    p.add_lmi(x - 1.0)
    p.set_objective(-1.0 * x)
    rep = solve(p)
    assert rep.status is Status.UNBOUNDED


def test_unbounded_phase1_set_is_still_feasible():
    # x free in one direction: phase I must not blow up
    p = SdpProblem()
    X = p.matrix_var("X", 2, 1)
    p.add_lmi(MatExpr.block_diag([MatExpr(np.zeros((1, 1)), [X.idx[0]], np.ones((1, 1, 1))),
                                  MatExpr(np.zeros((1, 1)), [X.idx[1]], np.ones((1, 1, 1)))]), strict=True)
    rep = solve_feasibility(p)
    assert rep.status is Status.STRICTLY_FEASIBLE
    assert_sound(p, rep)


def test_min_linear_requires_interior_start():
    p = SdpProblem()
    x = p.scalar("x")
    p.add_lmi(x - 1.0)
    p.set_objective(x)
    with pytest.raises(LmiError):
        solve_min_linear(p, np.array([0.0]))


def test_zero_point_on_psd_constraint_has_zero_margin():
    p = SdpProblem()
    P = p.matrix_var("P", 3, symmetric=True)
    p.add_lmi(P)
    assert evaluate_constraints(p, np.zeros(p.n)) == [0.0]


def test_strict_margin_scales_with_constant():
    p = SdpProblem()
    x = p.scalar("x")
    lmi = p.add_lmi(x + 3.0, strict=True)
    assert lmi.margin == pytest.approx(EPS_FEAS * 4.0)
    assert p.add_lmi(x + 3.0).margin == 0.0
    assert p.add_lmi(x + 3.0, margin=0.5).margin == 0.5


def test_weyl_perturbation_bound():
    rng = np.random.default_rng(3)
    p, _ = lyapunov_problem(np.diag([-1.0, -2.0, -0.5]))
    rep = solve_feasibility(p)
    base = evaluate_constraints(p, rep.x)
    for _ in range(20):
        d = 1e-2 * rng.normal(size=p.n)
        moved = evaluate_constraints(p, rep.x + d)
        for lmi, m0, m1 in zip(p.constraints, base, moved):
            shift = np.linalg.norm(np.tensordot(d[lmi.idx], lmi.coef, axes=1), 2)
            assert abs(m1 - m0) <= shift + 1e-12


def test_phase1_t_history_monotone():
    A = np.array([[-0.2, 3.0], [0.0, -0.3]])
    p, _ = lyapunov_problem(A)
    rep = solve_feasibility(p)
    hist = np.asarray(rep.t_history)
    assert hist.size > 1
    assert np.all(np.diff(hist) <= 1e-12 * (1 + np.abs(hist[:-1])))
    assert_sound(p, rep)


def test_stop_early_returns_feasible_point():
    p, _ = lyapunov_problem(np.diag([-1.0, -2.0]))
    rep = solve_feasibility(p, stop_early=True)
    assert rep.status is Status.STRICTLY_FEASIBLE
    assert rep.t <= -EPS_FEAS
    assert_sound(p, rep)


def test_homogeneous_scaling_still_feasible():
    # scaling a feasible P by c > 1 keeps the homogeneous constraint feasible
    A = np.array([[-1.0, 2.0], [0.0, -1.5]])
    p, P = lyapunov_problem(A)
    rep = solve_feasibility(p)
    Pv = P.value(rep.x)
    for c in (2.0, 10.0):
        assert lambda_min(-(A.T @ (c * Pv) + (c * Pv) @ A)) > 0
    assert rep.status is Status.STRICTLY_FEASIBLE


def test_dump_sdpa_layout():
    p = SdpProblem("demo")
    x = p.scalar("x", lo=0.0)
    y = p.scalar("y")
    p.add_lmi(MatExpr.block_diag([x + 1.0, y - x]))
    p.set_objective({1: 2.0})
    lines = p.dump_sdpa().splitlines()
    assert lines[0].startswith("* demo")
    assert lines[2] == "2"
    assert lines[3] == "2"  # the LMI block plus the lower bound on x
    assert lines[4] == "2 1"
    assert lines[5].split() == ["0.0", "2.0"]
    entries = {tuple(l.split()[:4]): float(l.split()[4]) for l in lines[6:]}
    assert entries[("0", "1", "1", "1")] == -1.0
    assert entries[("1", "1", "1", "1")] == 1.0
    assert entries[("1", "1", "2", "2")] == -1.0
    assert entries[("2", "1", "2", "2")] == 1.0
    assert entries[("1", "2", "1", "1")] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_eig_and_sv_reformulations_agree(seed):
    rng = np.random.default_rng(seed)
    r, c = rng.integers(1, 5, size=2)
    M = rng.normal(size=(r, c))
    S = M @ M.T + rng.normal() * np.eye(r)
    for level in (0.5, 1.0, 1.5):
        t_val = level * lambda_min(S)
        s_val = level * sigma_max(M)
        p = SdpProblem()
        t = p.scalar("t")
        s = p.scalar("s")
        e = eig_bound_as_lmi(p, MatExpr.constant(S), t)
        b = sv_bound_as_lmi(p, MatExpr.constant(M), s)
        x = np.array([t_val, s_val])
        tol = 1e-9 * (1 + abs(t_val) + s_val)
        if abs(level - 1.0) > 0:
            assert (e.lambda_min(x) >= 0) == (lambda_min(S) >= t_val)
            assert (b.lambda_min(x) >= 0) == (sigma_max(M) <= s_val)
        else:
            assert abs(e.lambda_min(x)) <= tol
            assert abs(b.lambda_min(x)) <= tol


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_soundness_on_random_lyapunov_problems(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    A = rng.normal(size=(n, n))
    p, _ = lyapunov_problem(A)
    rep = solve_feasibility(p)
    stable = np.max(np.linalg.eigvals(A).real) < 0
    if rep.status is Status.STRICTLY_FEASIBLE:
        assert stable
    if rep.status is Status.INFEASIBLE:
        assert not stable or np.max(np.linalg.eigvals(A).real) > -1e-3
    assert_sound(p, rep)


def test_affine_lmi_value():
    lmi = AffineLMI(np.eye(2), np.array([0]), np.array([np.diag([1.0, -1.0])]))
    assert lmi.lambda_min(np.array([0.5])) == pytest.approx(0.5)
