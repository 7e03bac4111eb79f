from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from igasens import shapes
from igasens.analysis import polish_eigenpair
from igasens.assembly import assemble, assemble_direct, build_space
from igasens.eigensolve import EigenSolution, solve_gevp
from igasens.errors import MultiplicityError, NumericalRankError
from igasens.oracles import chain_rule_t, finite_difference, pillbox_lambda_derivs
from igasens.sensitivity import (FACTORIZATIONS, check_multiplicity, eigenpair_derivatives,
                                 leibniz_residual, normalization_identity)


def _stacks(K, M):
    return SimpleNamespace(K_stack=[sp.csr_matrix(k) for k in K],
                           M_stack=[sp.csr_matrix(m) for m in M], order=len(K) - 1)


def test_scalar_linear():
    k0, k1 = 2.5, -0.7
    sys = _stacks([[[k0]], [[k1]], [[0.0]], [[0.0]]], [[[1.0]], [[0.0]], [[0.0]], [[0.0]]])
    base = solve_gevp(sys.K_stack[0], sys.M_stack[0], 1)
    jet = eigenpair_derivatives(sys, base, 1)
    np.testing.assert_allclose(jet.lambda_derivs, [k0, k1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(jet.vector_derivs[1:], 0, atol=1e-15)


def test_decoupled():
    Z = np.zeros((2, 2))
    sys = _stacks([np.diag([1.0, 3.0]), np.diag([1.0, 0.0]), Z], [np.eye(2), Z, Z])
    base = solve_gevp(sys.K_stack[0], sys.M_stack[0], 2)
    jet = eigenpair_derivatives(sys, base, 1)
    np.testing.assert_allclose(jet.lambda_derivs, [1, 1, 0], atol=1e-15)
    np.testing.assert_allclose(jet.vector_derivs[1], 0, atol=1e-15)


def test_rayleigh_quotient_first_order(rng):
    # first order is u^T (K' - lambda M') u for an M-normalized u
    n = 7
    def spd(shift):
        B = rng.normal(size=(n, n))
        return B @ B.T + shift * np.eye(n)
    K0, M0 = spd(0.1), spd(n)
    K1, M1 = rng.normal(size=(n, n)), rng.normal(size=(n, n)) * 0.1
    K1, M1 = K1 + K1.T, M1 + M1.T
    sys = _stacks([K0, K1], [M0, M1])
    base = solve_gevp(K0, M0, n)
    for m in (1, 4):
        jet = eigenpair_derivatives(sys, base, m)
        lam, u = base.mode(m)
        assert jet.lambda_derivs[1] == pytest.approx(u @ (K1 - lam * M1) @ u, rel=1e-10)


def test_check_multiplicity():
    r = check_multiplicity([1.0, 2.0, 3.0], 2)
    assert r.simple and r.gap == pytest.approx(0.5)
    assert not check_multiplicity([1.0, 1.0 + 1e-12, 3.0], 1, gap_tol=1e-8).simple
    assert check_multiplicity([4.0], 1).simple


def test_degenerate_pair_rejected(radial_disk):
    S = build_space(radial_disk, "h1", 2, 4)
    s = assemble(S, radial_disk, 0.5, 1)
    base = solve_gevp(s.K_stack[0], s.M_stack[0], 4)
    assert not check_multiplicity(base, 2).simple
    with pytest.raises(MultiplicityError):
        eigenpair_derivatives(s, base, 2)
    eigenpair_derivatives(s, base, 1)


def test_singular_bordered_matrix():
    Z = np.zeros((2, 2))
    sys = _stacks([np.diag([1.0, 3.0]), Z], [np.eye(2), Z])
    U = np.eye(2)
    base = EigenSolution(np.array([1.0, 3.0]), U, U[:, ::-1].copy(), 0, np.zeros(2))
    with pytest.raises(NumericalRankError):
        eigenpair_derivatives(sys, base, 1)


@pytest.fixture(scope="module")
def disk_jet(radial_disk):
    S = build_space(radial_disk, "h1", 2, 8)
    s = assemble(S, radial_disk, 0.5, 4)
    base = solve_gevp(s.K_stack[0], s.M_stack[0], 6)
    before = FACTORIZATIONS.count
    jet = eigenpair_derivatives(s, base, 1)
    return s, base, jet, FACTORIZATIONS.count - before


def test_disk_chain_rule(disk_jet):
    _, _, jet, _ = disk_jet
    ref = chain_rule_t(pillbox_lambda_derivs(0.5, 4), 0.6)
    for n in range(1, 5):
        assert abs(jet.lambda_derivs[n] - ref[n]) <= 1e-4 * abs(ref[n]), n


def test_single_factorization(disk_jet):
    _, _, jet, used = disk_jet
    assert used == 1 and jet.factorizations == 1


def test_identities(disk_jet):
    s, _, jet, _ = disk_jet
    normK = abs(s.K_stack[0]).sum(axis=0).max()
    for k in range(jet.order + 1):
        r = leibniz_residual(s.K_stack, s.M_stack, jet.lambda_derivs, jet.vector_derivs, k)
        assert np.linalg.norm(r) <= 1e-8 * normK * max(1.0, abs(jet.lambda_derivs[k]))
        target = 1.0 if k == 0 else 0.0
        val = normalization_identity(s.M_stack, jet.u_star, jet.vector_derivs, k)
        assert abs(val - target) <= 1e-10 * max(1.0, np.abs(jet.vector_derivs[k]).max())
    assert np.all(jet.residuals <= 1e-8 * np.maximum(1.0, np.abs(jet.lambda_derivs)))


@pytest.mark.parametrize("name", ["radial_disk", "ellipse_disk"])
def test_finite_difference(name, request):
    g = request.getfixturevalue(name)
    S = build_space(g, "h1", 2, 3)
    t0 = 0.4
    s = assemble(S, g, t0, 2)
    base = solve_gevp(s.K_stack[0], s.M_stack[0], 4)
    jet = eigenpair_derivatives(s, base, 1)

    # a double-precision solve is only good to about eps * cond(M) * lambda,
    # which the second difference divides by h^2; solve in long double instead
    def lam(t):
        K, M = assemble_direct(S, g, t, dtype=np.longdouble)
        sol = solve_gevp(K.astype(float), M.astype(float), 1)
        lam_l, _ = polish_eigenpair(K, M, sol.eigenvalues[0], sol.eigenvectors[:, 0],
                                    sol.u_star[:, 0])
        return lam_l

    h = 1e-4
    for order in (1, 2):
        fd = finite_difference(lam, t0, order, h)
        assert float(abs(fd - jet.lambda_derivs[order])) <= 1e-5 * abs(jet.lambda_derivs[order]), order
