import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_ncs.decentralized import (
    NotPoset,
    care_residual,
    corollary1_bounds,
    decentralized_closed_loop_abscissa,
    solve_care,
    theorem2_certifies,
    theorem2_margins,
    theorem3_bounds,
)
from sparse_ncs.model import (
    Coupling,
    PlantNetwork,
    Subsystem,
    assemble_block_matrices,
    build_pendulum_network,
    is_controllable,
)
from sparse_ncs.numerics import NumericsError, sigma_max, spectral_abscissa
from sparse_ncs.synthesis import check_lemma1


@pytest.mark.parametrize("a, expected", [(0.0, 1.0), (1.0, 1.0 + math.sqrt(2.0)), (-1.0, -1.0 + math.sqrt(2.0))])
def test_scalar_care_closed_form(a, expected):
    # 2 a p - p^2 + 1 = 0, positive root
    p = solve_care([[a]], [[1.0]], [[1.0]]).P[0, 0]
    assert abs(p - expected) <= 1e-9
    assert abs(p - (a + math.sqrt(a * a + 1.0))) <= 1e-12


def test_care_without_stabilizing_solution():
    # uncontrollable mode on the imaginary axis
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(NumericsError):
        solve_care(A, np.zeros((2, 1)))


def random_controllable(rng, n, m):
    while True:
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, m))
        if is_controllable(A, B):
            return A, B


def test_care_random_residual_and_stability():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        A, B = random_controllable(rng, n, int(rng.integers(1, n + 1)))
        sol = solve_care(A, B)
        P = sol.P
        assert np.max(np.abs(P - P.T)) <= 1e-12
        assert np.linalg.eigvalsh(P)[0] > 0
        scale = 1.0 + np.linalg.norm(P, 2) ** 2 * np.linalg.norm(B @ B.T, 2)
        assert care_residual(A, B, np.eye(n), P) <= 1e-9 * scale
        assert spectral_abscissa(A - B @ B.T @ P) < 0


def test_care_duality():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = int(rng.integers(1, 5))
        A, Ct = random_controllable(rng, n, 1)
        C = Ct.T
        Z = solve_care(A.T, C.T).P
        # the filter-form equation A Z + Z A^T - Z C^T C Z + Q = 0
        R = A @ Z + Z @ A.T - Z @ C.T @ C @ Z + np.eye(n)
        assert np.linalg.norm(R, 2) <= 1e-9 * (1 + np.linalg.norm(Z, 2) ** 2)


def two_integrators(h=0.0, beta=0.0):
    subs = tuple(Subsystem([[0.0]], [[1.0]], [[1.0]]) for _ in range(2))
    cpl = (Coupling(0, 1, [[h]]),) if h else ()
    return PlantNetwork(subs, cpl, (beta, beta))


def test_theorem2_decoupled_integrators():
    m = theorem2_margins(two_integrators())
    assert np.allclose(m.P, np.eye(2)) and np.allclose(m.Z_hat, np.eye(2))
    assert m.l_margin == pytest.approx(0.5) and m.o_margin == pytest.approx(0.5)
    assert m.vacuous == (False, False)


def test_theorem2_small_coupling_certified():
    net = two_integrators(h=0.4)
    m = theorem2_margins(net)
    assert theorem2_certifies(net, m)
    assert not theorem2_certifies(two_integrators(h=0.6), theorem2_margins(two_integrators(h=0.6)))
    bm = assemble_block_matrices(net)
    assert spectral_abscissa(bm.A + bm.H + bm.B @ m.K) < 0
    assert spectral_abscissa(bm.A + bm.H + m.M @ bm.C) < 0


def test_theorem2_vacuous_when_beta_eats_margin():
    m = theorem2_margins(two_integrators(beta=0.5))
    assert m.l_margin == pytest.approx(0.0, abs=1e-12)
    assert m.vacuous == (True, True)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_proof_chain_below_margin(seed):
    rng = np.random.default_rng(seed)
    subs = tuple(Subsystem(rng.normal(size=(2, 2)) - 2 * np.eye(2), rng.normal(size=(2, 1)),
                           rng.normal(size=(1, 2))) for _ in range(2))
    beta = 0.05
    net = PlantNetwork(subs, (), (beta, beta))
    m = theorem2_margins(net)
    if m.l_margin <= 0:
        return
    bm = assemble_block_matrices(net)
    L = rng.normal(size=bm.B.T.shape)
    H = rng.normal(size=bm.A.shape)
    D = bm.B @ L + H
    # scale the perturbation strictly below the margin
    D *= rng.uniform(0.05, 0.99) * m.l_margin / sigma_max(D)
    S = D.T @ m.P + m.P @ D + 2 * beta * m.P - np.eye(bm.A.shape[0])
    assert np.linalg.eigvalsh(0.5 * (S + S.T))[-1] < 0


@pytest.fixture(scope="module")
def pendulum_bounds():
    net, _ = build_pendulum_network()
    return net, theorem3_bounds(net)


def test_pendulum_bounds_close_to_reference(pendulum_bounds):
    _, d = pendulum_bounds
    for got, ref in zip(d.kappa_lower, (54.1, 273.2, 152.1)):
        assert abs(got - ref) <= 0.1 * ref
    for got, ref in zip(d.mu_lower, (27.2, 29.2, 27.0)):
        assert abs(got - ref) <= 0.1 * ref


def test_theorem3_self_certifies(pendulum_bounds):
    net, d = pendulum_bounds
    g = d.gains(net)
    for K, kl in zip(g.K, d.kappa_lower):
        assert sigma_max(K) == pytest.approx(kl, rel=1e-12)
    for M, ml in zip(g.M, d.mu_lower):
        assert sigma_max(M) == pytest.approx(ml, rel=1e-12)
    assert check_lemma1(net, g).certified
    ax, ae = decentralized_closed_loop_abscissa(net, g)
    assert ax < -min(net.beta) + 1e-8 and ae < -min(net.beta) + 1e-8
    assert d.admits(d.kappa_lower, d.mu_lower)
    assert not d.admits([k * 0.9 for k in d.kappa_lower], d.mu_lower)


def test_square_input_premise_passes():
    subs = tuple(Subsystem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2), np.eye(2)) for _ in range(2))
    net = PlantNetwork(subs, (Coupling(0, 1, 5.0 * np.ones((2, 2))),), (0.1, 0.1))
    d = theorem3_bounds(net, require_premises=True)
    assert d.premise_controller and d.premise_observer
    assert d.established_by == "premises"


def test_decoupled_stable_bounds_small():
    subs = (Subsystem([[-1.0]], [[1.0]], [[1.0]]), Subsystem([[-3.0]], [[1.0]], [[1.0]]))
    d = theorem3_bounds(PlantNetwork(subs, (), (0.0, 0.0)))
    assert max(d.kappa_lower) < 1e-2 and max(d.mu_lower) < 1e-2
    assert all(np.linalg.eigvalsh(Z)[0] > 10 for Z in d.Z)


def chain_net():
    rng = np.random.default_rng(11)
    subs = tuple(Subsystem(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(1, 2)))
                 for _ in range(3))
    cpl = (Coupling(1, 0, rng.normal(size=(2, 2))), Coupling(2, 1, rng.normal(size=(2, 2))))
    return PlantNetwork(subs, cpl, (0.2, 0.2, 0.2))


def test_corollary1_chain_matches_decoupled():
    net = chain_net()
    d = corollary1_bounds(net)
    assert d.established_by == "poset"
    dec = theorem3_bounds(PlantNetwork(net.subsystems, (), net.beta))
    assert np.allclose(d.kappa_lower, dec.kappa_lower, rtol=1e-6)
    assert np.allclose(d.mu_lower, dec.mu_lower, rtol=1e-6)
    ax, ae = decentralized_closed_loop_abscissa(net, d.gains(net))
    assert ax < -min(net.beta) and ae < -min(net.beta)


def test_corollary1_rejects_cycles_and_accepts_single():
    net, _ = build_pendulum_network()
    with pytest.raises(NotPoset):
        corollary1_bounds(net)
    one = PlantNetwork((Subsystem([[1.0]], [[1.0]], [[1.0]]),), (), (0.1,))
    d = corollary1_bounds(one)
    assert d.kappa_lower[0] > 0
