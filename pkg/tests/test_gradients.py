import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarm_isac.exceptions import DegenerateGeometry, SingularFim
from swarm_isac.gradients import (_householder_r, _upper_inv3, check_gradients, consensus_value_and_grad, fd_crb_gradient,
                                  fd_gradient, fd_rate_gradient, grad_consensus_objective,
                                  grad_crb, grad_rate, objective_terms, random_oracle_scenario,
                                  relative_error)
from swarm_isac.metrics import crb, objective
from swarm_isac.model import Scenario
from swarm_isac.reference import crb_mp, rate_mp

from conftest import make_scenario, random_rotation


def test_oracle_suite_rate_and_crb():
    results = check_gradients(n_scenarios=20, seed=0)
    assert len(results) == 20
    assert max(r["rate_max_rel_err"] for r in results) < 1e-4
    assert max(r["crb_max_rel_err"] for r in results) < 1e-5


def test_fd_gradient_on_quadratic():
    A = np.arange(6.0).reshape(2, 3)
    g = fd_gradient(lambda p: float(np.sum(p * p)), A, 1e-3)
    assert np.allclose(g, 2 * A, atol=1e-9)
    with pytest.raises(ValueError):
        fd_gradient(np.sum, A, 0.0)


def test_relative_error_floor():
    assert relative_error(np.array([1e-14]), np.array([0.0]))[0] == pytest.approx(1e-2)
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == 1.0


def test_single_link_axial_symmetry():
    s = Scenario(np.zeros(3), np.zeros((1, 3)), np.array([[37.0, 0.0, 0.0]]))
    g = grad_rate(s.initial_positions, s)
    assert g[0, 1] == 0.0 and g[0, 2] == 0.0
    assert g[0, 0] < 0.0


def test_single_link_radial_derivative_is_negative():
    rng = np.random.default_rng(7)
    for _ in range(10):
        s = random_oracle_scenario(rng, 1, 1)
        q = s.initial_positions
        g = grad_rate(q, s)[0]
        radial = (q[0] - s.antennas[0]) / np.linalg.norm(q[0] - s.antennas[0])
        assert g @ radial < 0.0
        # for one link the rate only depends on the distance
        assert np.linalg.norm(g - (g @ radial) * radial) <= 1e-12 * np.linalg.norm(g)


def test_single_link_rate_gradient_closed_form():
    # R = log(1 + beta0^2 / (sigma2 r^4)); dR/dr = -4 snr / (r (1 + snr))
    s = Scenario(np.zeros(3), np.zeros((1, 3)), np.array([[0.0, 60.0, 80.0]]))
    snr = 1.0 / 100.0**4 / 1e-12
    expected = -4 * snr / (100.0 * (1 + snr)) * np.array([0.0, 0.6, 0.8])
    assert np.allclose(grad_rate(s.initial_positions, s)[0], expected, rtol=1e-12, atol=1e-18)


def test_crb_gradient_orthogonal_to_link_for_single_antenna():
    rng = np.random.default_rng(11)
    for _ in range(10):
        s = random_oracle_scenario(rng, 4, 1)
        g = grad_crb(s.initial_positions, s)
        u = s.initial_positions - s.antennas[0]
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        dots = np.abs(np.sum(g * u, axis=1))
        assert np.all(dots <= 1e-10 * np.linalg.norm(g, axis=1))


def test_crb_gradient_literal_trace_formula():
    # dCRB/dz_k = -scale tr(J^-1 dJ/dz_k J^-1), with dJ/dz_k built term by term
    s = make_scenario(n=4, m=3, seed=5)
    Z = s.initial_positions
    d = Z[:, None, :] - s.antennas[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    u = d / r[..., None]
    J = np.einsum("nmi,nmj->ij", u, u)
    Jinv = np.linalg.inv(J)
    expected = np.zeros_like(Z)
    for n in range(Z.shape[0]):
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            dJ = np.zeros((3, 3))
            for m in range(s.n_antennas):
                du = (e - u[n, m] * u[n, m, k]) / r[n, m]
                dJ += np.outer(du, u[n, m]) + np.outer(u[n, m], du)
            expected[n, k] = -s.params.crb_scale * np.trace(Jinv @ dJ @ Jinv)
    assert np.allclose(grad_crb(Z, s), expected, rtol=1e-10, atol=0)


@pytest.mark.parametrize("seed", range(3))
def test_gradients_are_rotation_equivariant(seed):
    rng = np.random.default_rng(seed)
    s = make_scenario(n=3, m=2, seed=seed)
    R = random_rotation(rng)
    rotated = Scenario(s.user_pos, s.antenna_offsets @ R.T, s.initial_positions @ R.T)
    g = grad_crb(s.initial_positions, s)
    assert np.allclose(grad_crb(rotated.initial_positions, rotated), g @ R.T,
                       rtol=1e-8, atol=1e-12 * np.abs(g).max())


def test_gradients_translation_invariant():
    s = make_scenario(n=3, m=2, seed=1)
    shift = np.array([0.25, -0.5, 1.0])  # exact in binary: differences are unchanged
    moved = Scenario(s.user_pos + shift, s.antenna_offsets, s.initial_positions + shift)
    for grad in (grad_rate, grad_crb):
        a = grad(s.initial_positions, s)
        b = grad(moved.initial_positions, moved)
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12 * np.abs(a).max())


def test_objective_terms_values_match_metrics():
    s = make_scenario(n=5, m=3, seed=2)
    rate, value, _, _ = objective_terms(s.initial_positions, s)
    rep = objective(s.initial_positions, s)
    assert rate == pytest.approx(rep.rate_nats, rel=1e-12)
    assert value == pytest.approx(rep.crb_m2, rel=1e-12)


def test_consensus_gradient_definition():
    s = make_scenario(n=3, m=2, seed=4, omega=2.5)
    rng = np.random.default_rng(0)
    Z = s.initial_positions + rng.normal(size=(3, 3))
    Q = s.initial_positions + rng.normal(size=(3, 3))
    Mu = rng.normal(size=(3, 3))
    g = grad_consensus_objective(Z, Q, Mu, 0.7, s)
    expected = -grad_rate(Z, s) + 2.5 * grad_crb(Z, s) + 0.7 * Z - 0.7 * Q - Mu
    assert np.allclose(g, expected, rtol=1e-14, atol=1e-12)
    value, g2 = consensus_value_and_grad(Z, Q, Mu, 0.7, s)
    assert np.array_equal(g, g2)
    assert value == pytest.approx(objective(Z, s).objective, rel=1e-12)


def test_consensus_gradient_matches_finite_differences():
    s = make_scenario(n=3, m=2, seed=8, omega=0.5)
    rng = np.random.default_rng(1)
    Z = s.initial_positions + rng.normal(size=(3, 3))
    Q = s.initial_positions
    Mu = rng.normal(size=(3, 3))
    rho = 1.0

    def f(P):
        pen = sum(mpmath.mpf(float(x)) ** 2 for x in (Q - P + Mu / rho).ravel())
        return -rate_mp(P, s) + mpmath.mpf(s.omega) * crb_mp(P, s) + rho / 2 * pen

    fd = fd_gradient(f, Z, 1e-6)
    assert np.max(relative_error(grad_consensus_objective(Z, Q, Mu, rho, s), fd)) < 1e-5


def test_fd_oracles_on_fixed_scenario():
    s = random_oracle_scenario(np.random.default_rng(99), 3, 2)
    q = s.initial_positions
    assert np.max(relative_error(grad_rate(q, s), fd_rate_gradient(q, s))) < 1e-4
    assert np.max(relative_error(grad_crb(q, s), fd_crb_gradient(q, s))) < 1e-5


def test_gradient_errors():
    s = make_scenario(n=2, m=1)
    bad = s.initial_positions.copy()
    bad[0] = s.antennas[0]
    with pytest.raises(DegenerateGeometry):
        grad_rate(bad, s)
    with pytest.raises(DegenerateGeometry):
        grad_crb(bad, s)
    with pytest.raises(SingularFim):
        grad_crb(s.initial_positions, s)
    with pytest.raises(SingularFim):
        crb(s.initial_positions, s)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2**32 - 1))
def test_householder_r_reproduces_gram_and_inverse(k, seed):
    A = np.random.default_rng(seed).normal(size=(k, 3))
    R = _householder_r(A)
    assert np.allclose(np.tril(R, -1), 0.0)
    assert np.allclose(R.T @ R, A.T @ A, rtol=1e-12, atol=1e-12 * np.sum(A * A))
    assert np.allclose(np.abs(np.diag(R)), np.abs(np.diag(np.linalg.qr(A, mode="r"))), rtol=1e-10)
    assert np.allclose(_upper_inv3(R) @ R, np.eye(3), atol=1e-10)
