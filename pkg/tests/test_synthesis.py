import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_ncs.lmi import Status, evaluate_constraints
from sparse_ncs.model import (
    Coupling,
    GainBounds,
    LinkPattern,
    PlantNetwork,
    Subsystem,
    build_pendulum_network,
    candidate_links,
)
from sparse_ncs.numerics import sigma_max, spectral_abscissa
from sparse_ncs.synthesis import (
    GainSet,
    Theorem1Solution,
    audit_gain_bounds,
    build_theorem1_program,
    check_lemma1,
    closed_loop_matrices,
    lyapunov_residual,
    recover_gains,
    solve_theorem1,
)


def scalar_net(a, b=1.0, c=1.0, beta=0.0):
    return PlantNetwork((Subsystem([[a]], [[b]], [[c]]),), (), (beta,))


def two_scalar_net(h=0.5, beta=0.1):
    subs = (Subsystem([[0.5]], [[1.0]], [[1.0]]), Subsystem([[-0.2]], [[1.0]], [[1.0]]))
    cpl = (Coupling(0, 1, [[h]]), Coupling(1, 0, [[-h]]))
    return PlantNetwork(subs, cpl, (beta, beta))


def names(prog):
    return [c.name for c in prog.problem.constraints]


def test_single_subsystem_program_shape():
    net = scalar_net(1.0)
    prog = build_theorem1_program(net, GainBounds((5.0,), (5.0,)), LinkPattern.full([]))
    c1 = [c for c in prog.problem.constraints if c.name == "C1"]
    assert len(c1) == 1 and c1[0].size == 1
    assert not any(n.startswith(("C6", "C8")) for n in names(prog))
    assert not any(v.startswith("alpha") for v in prog.problem.var_names)


def test_pendulum_full_pattern_dimensions():
    net, b = build_pendulum_network(kappa=(96, 106, 211), mu=(27, 26, 28))
    prog = build_theorem1_program(net, b, LinkPattern.full(candidate_links(net)))
    sizes = {c.name: c.size for c in prog.problem.constraints}
    assert sizes["C1"] == 12 and sizes["C2"] == 12
    n = names(prog)
    assert sum(x.startswith("C5") for x in n) == 3
    assert sum(x.startswith("C7") for x in n) == 3
    assert sum(x.startswith("C6") for x in n) == 6
    assert sum(x.startswith("C8") for x in n) == 6


def test_zero_pattern_has_no_coupling_variables():
    net, b = build_pendulum_network(kappa=(96, 106, 211), mu=(27, 26, 28))
    prog = build_theorem1_program(net, b, LinkPattern.empty(candidate_links(net)))
    assert prog.Y == {} and prog.Y_hat == {}
    assert not any(v.startswith(("Y", "Yhat")) for v in prog.problem.var_names)


def test_infinite_budgets_omit_constraints_and_zero_budget_fixes_gain():
    net = two_scalar_net()
    pat = LinkPattern.full(candidate_links(net))
    prog = build_theorem1_program(net, GainBounds.unbounded(2), pat)
    assert not any(x.startswith(("C5", "C6", "C7", "C8")) for x in names(prog))
    prog0 = build_theorem1_program(net, GainBounds((0.0, 1.0), (1.0, 1.0)), pat)
    assert not any(v.startswith("W1") for v in prog0.problem.var_names)
    assert prog0.W[0].idx.size == 0


def test_bad_side_and_link_rejected():
    net = two_scalar_net()
    with pytest.raises(ValueError):
        build_theorem1_program(net, GainBounds.unbounded(2), LinkPattern.full([]), side="nope")
    with pytest.raises(ValueError):
        build_theorem1_program(net, GainBounds.unbounded(2), LinkPattern.full([(0, 2)]))


def test_recover_gains_proportional():
    Z = np.array([[2.0, 0.3], [0.3, 1.0]])
    sol = Theorem1Solution([Z], [3.0 * Z], {}, [Z], [Z @ np.ones((2, 1))], {}, {})
    g = recover_gains(sol, LinkPattern.full([]))
    assert np.allclose(g.K[0], 3.0 * np.eye(2))
    assert np.allclose(g.M[0], np.ones((2, 1)))


def test_recover_gains_scaled_identity():
    W = np.array([[1.0, 0.0, 0.0]])
    sol = Theorem1Solution([2.0 * np.eye(3)], [W], {}, [np.eye(3)], [np.zeros((3, 1))], {}, {})
    g = recover_gains(sol, LinkPattern.full([]))
    assert np.allclose(g.K[0], 0.5 * W)


def test_recover_gains_alpha_zero_kills_links():
    I = np.eye(1)
    sol = Theorem1Solution([I, I], [I, I], {(0, 1): I, (1, 0): I}, [I, I], [I, I],
                           {(0, 1): I, (1, 0): I}, {(0, 1): 0.0, (1, 0): 1.0})
    g = recover_gains(sol, LinkPattern.full([(0, 1), (1, 0)]))
    assert np.all(g.L[(0, 1)] == 0) and np.all(g.O[(0, 1)] == 0)
    assert np.allclose(g.L[(1, 0)], I)


def test_recover_gains_budget_violation_raises():
    sol = Theorem1Solution([np.eye(1)], [5.0 * np.eye(1)], {}, [np.eye(1)], [np.eye(1)], {}, {})
    with pytest.raises(ValueError, match="kappa"):
        recover_gains(sol, LinkPattern.full([]), GainBounds((4.0,), (2.0,)))


def test_recover_gains_ill_conditioned_warns():
    Z = np.diag([1.0, 1e-13])
    sol = Theorem1Solution([Z], [np.ones((1, 2))], {}, [np.eye(2)], [np.zeros((2, 1))], {}, {})
    with pytest.warns(RuntimeWarning):
        g = recover_gains(sol, LinkPattern.full([]))
    assert g.warnings


def test_closed_loop_zero_gains_and_separation():
    net = two_scalar_net(h=0.7)
    cl = closed_loop_matrices(net, GainSet.zeros(net))
    AH = np.array([[0.5, 0.7], [-0.7, -0.2]])
    assert np.allclose(cl.A_x, AH) and np.allclose(cl.A_e, AH)
    A = np.array([[0.0, 1.0], [2.0, -1.0]])
    B = np.array([[0.0], [1.0]])
    C = np.array([[1.0, 0.0]])
    one = PlantNetwork((Subsystem(A, B, C),))
    K = np.array([[-3.0, -2.0]])
    M = np.array([[-1.0], [-4.0]])
    cl = closed_loop_matrices(one, GainSet([K], {}, [M], {}))
    assert np.allclose(cl.A_x, A + B @ K)
    assert np.allclose(cl.A_e, A + M @ C)


def test_cascade_structure():
    rng = np.random.default_rng(0)
    net = two_scalar_net()
    g = GainSet([rng.normal(size=(1, 1)) for _ in range(2)], {(0, 1): rng.normal(size=(1, 1))},
                [rng.normal(size=(1, 1)) for _ in range(2)], {(1, 0): rng.normal(size=(1, 1))})
    cl = closed_loop_matrices(net, g)
    big = cl.cascade
    assert np.all(big[2:, :2] == 0)
    # A_e does not see K or L
    g2 = GainSet([np.zeros((1, 1))] * 2, {}, g.M, g.O)
    assert np.array_equal(closed_loop_matrices(net, g2).A_e, cl.A_e)


def test_check_lemma1_scalar_cases():
    stable = scalar_net(-1.0)
    cert = check_lemma1(stable, GainSet.zeros(stable))
    assert cert.certified
    assert lyapunov_residual(np.array([[-1.0]]), cert.P, (0.0,)) < 0
    unstable = scalar_net(1.0)
    cert = check_lemma1(unstable, GainSet.zeros(unstable))
    assert not cert.certified
    assert cert.status is Status.INFEASIBLE


def test_check_lemma1_respects_beta():
    # a = -1 decays at rate 1: margin 0.9 is certifiable, 1.1 is not
    assert check_lemma1(scalar_net(-1.0, beta=0.9), GainSet.zeros(scalar_net(-1.0))).certified
    assert not check_lemma1(scalar_net(-1.0, beta=1.1), GainSet.zeros(scalar_net(-1.0))).certified


def test_audit_gain_bounds_uses_induced_norm():
    b = GainBounds((1.0, 1.0), (1.0, 1.0), iota_default=2.0, omega_default=2.0)
    g = GainSet([np.eye(1), 0.5 * np.eye(1)], {(0, 1): 2.5 * np.eye(1)}, [np.eye(1)] * 2, {})
    bad = audit_gain_bounds(g, b)
    assert len(bad) == 1 and "iota" in bad[0]
    g.L[(0, 1)] = 2.0 * np.eye(1)
    assert audit_gain_bounds(g, b) == []


@pytest.fixture(scope="module")
def solved_pair():
    net = two_scalar_net(h=0.8)
    b = GainBounds((3.0, 3.0), (3.0, 3.0), iota_default=3.0, omega_default=3.0)
    pat = LinkPattern.full(candidate_links(net))
    res = solve_theorem1(net, b, pat)
    assert res.feasible
    return net, b, pat, res


def test_solve_theorem1_reports_are_sound(solved_pair):
    net, b, pat, res = solved_pair
    for side, rep in (("controller", res.report_controller), ("observer", res.report_observer)):
        prog = build_theorem1_program(net, b, pat, side)
        for lmi, m in zip(prog.problem.constraints, evaluate_constraints(prog.problem, rep.x)):
            assert m >= lmi.margin - 1e-12


def test_scaling_invariance_of_recovered_gains(solved_pair):
    _, _, pat, res = solved_pair
    g1 = recover_gains(res.solution, pat)
    g2 = recover_gains(res.solution.scaled(7.5), pat)
    for a, b in zip(g1.K + g1.M, g2.K + g2.M):
        assert np.allclose(a, b, rtol=0, atol=1e-12 * (1 + np.abs(a).max()))
    for l in g1.L:
        assert np.allclose(g1.L[l], g2.L[l], rtol=0, atol=1e-12 * (1 + np.abs(g1.L[l]).max()))
        assert np.allclose(g1.O[l], g2.O[l], rtol=0, atol=1e-12 * (1 + np.abs(g1.O[l]).max()))


def test_certificate_consistency(solved_pair):
    net, b, pat, res = solved_pair
    sol = res.solution
    g = recover_gains(sol, pat, b)
    cl = closed_loop_matrices(net, g)
    P = [np.linalg.inv(Z) for Z in sol.Z]
    assert lyapunov_residual(cl.A_x, P, net.beta) <= 0
    assert lyapunov_residual(cl.A_e, sol.P_hat, net.beta) <= 0


def test_bound_chain(solved_pair):
    _, _, pat, res = solved_pair
    sol = res.solution
    g = recover_gains(sol, pat)
    for K, W, Z in zip(g.K, sol.W, sol.Z):
        assert sigma_max(K) <= sigma_max(W) / np.linalg.eigvalsh(Z)[0] * (1 + 1e-12)


def test_stability_when_certified(solved_pair):
    net, b, pat, res = solved_pair
    g = recover_gains(res.solution, pat, b)
    cert = check_lemma1(net, g)
    assert cert.certified
    cl = closed_loop_matrices(net, g)
    assert spectral_abscissa(cl.A_x) < -min(net.beta) + 1e-8
    assert spectral_abscissa(cl.A_e) < -min(net.beta) + 1e-8


def test_coupling_margin_point_is_sparse_when_links_are_unneeded():
    # weakly coupled stable subsystems: the effort-minimal point uses no coupling
    subs = (Subsystem([[-1.0]], [[1.0]], [[1.0]]), Subsystem([[-2.0]], [[1.0]], [[1.0]]))
    net = PlantNetwork(subs, (Coupling(0, 1, [[0.1]]),), (0.1, 0.1))
    b = GainBounds((2.0, 2.0), (2.0, 2.0), iota_default=2.0, omega_default=2.0)
    pat = LinkPattern.full(candidate_links(net))
    res = solve_theorem1(net, b, pat, coupling_margin=1e-2, reweights=1)
    assert res.feasible
    for Y in (*res.solution.Y.values(), *res.solution.Y_hat.values()):
        assert sigma_max(Y) < 1e-3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lemma1_implies_stability_random(seed):
    rng = np.random.default_rng(seed)
    subs = tuple(Subsystem(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(1, 2)))
                 for _ in range(2))
    net = PlantNetwork(subs, (Coupling(0, 1, 0.3 * rng.normal(size=(2, 2))),), (0.05, 0.05))
    g = GainSet([rng.normal(size=(1, 2)) for _ in range(2)], {}, [rng.normal(size=(2, 1)) for _ in range(2)], {})
    cert = check_lemma1(net, g)
    if cert.certified:
        cl = closed_loop_matrices(net, g)
        assert spectral_abscissa(cl.A_x) < -0.05 + 1e-8
        assert spectral_abscissa(cl.A_e) < -0.05 + 1e-8
