"""Analytic position gradients of the rate and the CRB, plus a central
finite-difference oracle to check them.

The two analytic gradients are evaluated by small JIT-compiled kernels: the
optimizer calls them once per iteration for 10^5 iterations, where numpy's
per-call overhead on N x M <= 10 x 4 matrices would dominate.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .exceptions import DegenerateGeometry, NumericalFailure, SingularFim
from .metrics import SINGULAR_TOL
from .model import D_MIN, ChannelParams, Scenario, as_points
from .reference import crb_mp, rate_mp

RATE_FD_STEP = 1e-6
CRB_FD_STEP = 1e-4

# kernel status codes
_OK = 0
_DEGENERATE = 1
_CHOLESKY_FAILED = 2
_SINGULAR = 3


@njit(cache=True)
def _geometry(Z, antennas):
    N, M = Z.shape[0], antennas.shape[0]
    D = np.empty((N, M, 3))
    r = np.empty((N, M))
    bad = -1
    for n in range(N):
        for m in range(M):
            s = 0.0
            for i in range(3):
                d = Z[n, i] - antennas[m, i]
                D[n, m, i] = d
                s += d * d
            r[n, m] = np.sqrt(s)
            if bad < 0 and not r[n, m] >= D_MIN:
                bad = n * M + m
    return D, r, bad


@njit(cache=True)
def _cholesky(B):
    """Lower Cholesky factor of a Hermitian matrix; flag False if not PD."""
    K = B.shape[0]
    L = np.zeros_like(B)
    for j in range(K):
        s = B[j, j].real
        for k in range(j):
            s -= L[j, k].real ** 2 + L[j, k].imag ** 2
        if not s > 0.0:
            return L, False
        djj = np.sqrt(s)
        L[j, j] = djj
        for i in range(j + 1, K):
            t = B[i, j]
            for k in range(j):
                t -= L[i, k] * np.conj(L[j, k])
            L[i, j] = t / djj
    return L, True


@njit(cache=True)
def _cholesky_solve(L, rhs):
    """Solve ``L L^H X = rhs`` in place of a copy of ``rhs``."""
    K, C = rhs.shape
    X = rhs.copy()
    for c in range(C):
        for i in range(K):
            t = X[i, c]
            for k in range(i):
                t -= L[i, k] * X[k, c]
            X[i, c] = t / L[i, i].real
        for i in range(K - 1, -1, -1):
            t = X[i, c]
            for k in range(i + 1, K):
                t -= np.conj(L[k, i]) * X[k, c]
            X[i, c] = t / L[i, i].real
    return X


@njit(cache=True)
def _rate_kernel(Z, antennas, beta0, gamma, lam, sigma2):
    N, M = Z.shape[0], antennas.shape[0]
    G = np.zeros((N, 3))
    D, r, bad = _geometry(Z, antennas)
    if bad >= 0:
        return 0.0, G, _DEGENERATE, bad
    k = 2.0 * np.pi / lam
    phase = np.empty((N, M), dtype=np.complex128)
    H = np.empty((N, M), dtype=np.complex128)
    for n in range(N):
        for m in range(M):
            phase[n, m] = np.exp(-1j * (k * r[n, m]))
            H[n, m] = beta0 / r[n, m] ** gamma * phase[n, m]
    # A = I + H H^H / sigma2; work with the smaller of the two Gram matrices
    small_is_n = N <= M
    K = N if small_is_n else M
    B = np.zeros((K, K), dtype=np.complex128)
    for i in range(K):
        for j in range(K):
            t = 0j
            if small_is_n:
                for m in range(M):
                    t += H[i, m] * np.conj(H[j, m])
            else:
                for n in range(N):
                    t += np.conj(H[n, i]) * H[n, j]
            B[i, j] = t / sigma2
        B[i, i] += 1.0
    L, ok = _cholesky(B)
    if not ok:
        return 0.0, G, _CHOLESKY_FAILED, -1
    rate = 0.0
    for i in range(K):
        rate += 2.0 * np.log(L[i, i].real)
    # A^{-1} H, via the push-through identity H (I + H^H H / s2)^{-1} when N > M
    if small_is_n:
        AinvH = _cholesky_solve(L, H)
    else:
        AinvH = np.conj(_cholesky_solve(L, np.conj(H.T)).T)
    for n in range(N):
        for m in range(M):
            rn = r[n, m]
            grad_h = (2.0 / sigma2) * AinvH[n, m]
            dh = beta0 * (-gamma / rn ** (gamma + 2.0) - 1j * k / rn ** (gamma + 1.0)) * phase[n, m]
            w = (np.conj(grad_h) * dh).real
            for i in range(3):
                G[n, i] += w * D[n, m, i]
    return rate, G, _OK, -1


@njit(cache=True)
def _householder_r(A):
    """R factor (3x3, upper triangular) of the QR factorization of ``A`` (K x 3).

    Rows beyond K are zero when K < 3.
    """
    A = A.copy()
    K = A.shape[0]
    R = np.zeros((3, 3))
    for k in range(min(K, 3)):
        norm = 0.0
        for i in range(k, K):
            norm += A[i, k] * A[i, k]
        norm = np.sqrt(norm)
        if norm == 0.0:
            continue
        alpha = -norm if A[k, k] >= 0.0 else norm
        # v = x - alpha e_k, reflect the trailing columns
        v0 = A[k, k] - alpha
        vnorm2 = v0 * v0
        for i in range(k + 1, K):
            vnorm2 += A[i, k] * A[i, k]
        A[k, k] = alpha
        if vnorm2 == 0.0:
            continue
        for j in range(k + 1, 3):
            dot = v0 * A[k, j]
            for i in range(k + 1, K):
                dot += A[i, k] * A[i, j]
            f = 2.0 * dot / vnorm2
            A[k, j] -= f * v0
            for i in range(k + 1, K):
                A[i, j] -= f * A[i, k]
    for i in range(min(K, 3)):
        for j in range(i, 3):
            R[i, j] = A[i, j]
    return R


@njit(cache=True)
def _upper_inv3(R):
    """Inverse of an invertible 3x3 upper-triangular matrix."""
    X = np.zeros((3, 3))
    for j in range(3):
        X[j, j] = 1.0 / R[j, j]
        for i in range(j - 1, -1, -1):
            s = 0.0
            for k in range(i + 1, j + 1):
                s += R[i, k] * X[k, j]
            X[i, j] = -s / R[i, i]
    return X


@njit(cache=True)
def _sym3_max_eig(A):
    """Largest eigenvalue of a symmetric 3x3 matrix (trigonometric closed form)."""
    p1 = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
    q = (A[0, 0] + A[1, 1] + A[2, 2]) / 3.0
    p2 = (A[0, 0] - q) ** 2 + (A[1, 1] - q) ** 2 + (A[2, 2] - q) ** 2 + 2.0 * p1
    if p2 == 0.0:
        return q
    p = np.sqrt(p2 / 6.0)
    B = (A - q * np.eye(3)) / p
    det = (B[0, 0] * (B[1, 1] * B[2, 2] - B[1, 2] * B[2, 1])
           - B[0, 1] * (B[1, 0] * B[2, 2] - B[1, 2] * B[2, 0])
           + B[0, 2] * (B[1, 0] * B[2, 1] - B[1, 1] * B[2, 0]))
    half = min(max(det / 2.0, -1.0), 1.0)
    return q + 2.0 * p * np.cos(np.arccos(half) / 3.0)


@njit(cache=True)
def _crb_kernel(Z, antennas, scale):
    N, M = Z.shape[0], antennas.shape[0]
    G = np.zeros((N, 3))
    D, r, bad = _geometry(Z, antennas)
    if bad >= 0:
        return 0.0, G, _DEGENERATE, bad, 0.0
    U = np.empty((N * M, 3))
    for n in range(N):
        for m in range(M):
            for i in range(3):
                U[n * M + m, i] = D[n, m, i] / r[n, m]
    # J = U^T U = R^T R, so J^-1 = R^-1 R^-T; this avoids forming J, whose
    # condition number is the square of U's
    R = _householder_r(U)
    if R[0, 0] == 0.0 or R[1, 1] == 0.0 or R[2, 2] == 0.0:
        return 0.0, G, _SINGULAR, -1, 0.0
    Rinv = _upper_inv3(R)
    Jinv = Rinv @ Rinv.T
    lam_min = 1.0 / _sym3_max_eig(Jinv)
    if not lam_min > SINGULAR_TOL:
        return 0.0, G, _SINGULAR, -1, lam_min
    Jinv2 = Jinv @ Jinv
    value = 0.0
    for i in range(3):
        for j in range(3):
            value += Rinv[i, j] * Rinv[i, j]
    value *= scale
    # tr(J^-1 dJ_k J^-1) = (2 / r) [(I - u u^T) J^-2 u]_k for each link
    v = np.empty(3)
    for n in range(N):
        for m in range(M):
            k = n * M + m
            uv = 0.0
            for i in range(3):
                v[i] = Jinv2[i, 0] * U[k, 0] + Jinv2[i, 1] * U[k, 1] + Jinv2[i, 2] * U[k, 2]
                uv += U[k, i] * v[i]
            for i in range(3):
                G[n, i] -= scale * 2.0 * (v[i] - U[k, i] * uv) / r[n, m]
    return value, G, _OK, -1, lam_min


def _raise_degenerate(bad, n_antennas):
    n, m = divmod(int(bad), n_antennas)
    raise DegenerateGeometry(f"UAV {n} is closer than D_MIN={D_MIN} m to antenna {m}",
                             link=(n, m))


def rate_and_grad(Z, antennas, params: ChannelParams):
    """Rate (nats) and its gradient w.r.t. each row of ``Z``; no input validation."""
    rate, G, status, bad = _rate_kernel(Z, antennas, params.beta0, params.gamma,
                                        params.lambda_c, params.sigma2)
    if status == _DEGENERATE:
        _raise_degenerate(bad, antennas.shape[0])
    if status == _CHOLESKY_FAILED:
        raise NumericalFailure("Cholesky factorization of I + H H^H / sigma2 failed")
    return rate, G


def crb_and_grad(Z, antennas, params: ChannelParams):
    """CRB (m^2) and its gradient w.r.t. each row of ``Z``; no input validation."""
    value, G, status, bad, lam_min = _crb_kernel(Z, antennas, params.crb_scale)
    if status == _DEGENERATE:
        _raise_degenerate(bad, antennas.shape[0])
    if status == _SINGULAR:
        raise SingularFim(f"FIM smallest eigenvalue {lam_min:.3e} <= {SINGULAR_TOL:g}",
                          min_eigenvalue=float(lam_min))
    return value, G


def grad_rate(positions, scenario: Scenario):
    """Gradient of the achievable rate w.r.t. each UAV position, shape ``(N, 3)``."""
    Z = np.ascontiguousarray(as_points(positions, "positions"))
    return rate_and_grad(Z, scenario.antennas, scenario.params)[1]


def grad_crb(positions, scenario: Scenario):
    """Gradient of the CRB w.r.t. each UAV position, shape ``(N, 3)``."""
    Z = np.ascontiguousarray(as_points(positions, "positions"))
    return crb_and_grad(Z, scenario.antennas, scenario.params)[1]


def objective_terms(Z, scenario: Scenario):
    """``(rate, crb, grad_rate, grad_crb)`` at consensus positions ``Z``."""
    antennas = scenario.antennas
    rate, g_rate = rate_and_grad(Z, antennas, scenario.params)
    value, g_crb = crb_and_grad(Z, antennas, scenario.params)
    return rate, value, g_rate, g_crb


@njit(cache=True)
def _consensus_combine(g_rate, g_crb, Z, Q_next, Mu, omega, rho):
    out = np.empty_like(Z)
    for n in range(Z.shape[0]):
        for i in range(3):
            out[n, i] = (-g_rate[n, i] + omega * g_crb[n, i] + rho * Z[n, i]
                         - rho * Q_next[n, i] - Mu[n, i])
    return out


def consensus_value_and_grad(Z, Q_next, Mu, rho, scenario: Scenario):
    """``f(Z) = -R + omega CRB`` and the gradient of the z-subproblem at ``Z``."""
    rate, value, g_rate, g_crb = objective_terms(Z, scenario)
    grad = _consensus_combine(g_rate, g_crb, Z, Q_next, Mu, scenario.omega, float(rho))
    return -rate + scenario.omega * value, grad


def grad_consensus_objective(Z, Q_next, Mu, rho, scenario: Scenario):
    """Gradient of ``f(Z) + rho/2 sum ||q_n - z_n + mu_n/rho||^2`` w.r.t. ``Z``.

    Equal to ``-grad R + omega grad CRB + rho z - rho q - mu`` row by row.
    """
    return consensus_value_and_grad(Z, Q_next, Mu, rho, scenario)[1]


def fd_gradient(fn, positions, h):
    """Central finite-difference gradient of a scalar function of positions.

    ``fn`` receives an ``(N, 3)`` array; the result has the same shape. The
    difference is taken in whatever number type ``fn`` returns, so an
    ``mpmath`` function keeps its extra digits through the subtraction.
    """
    if not h > 0:
        raise ValueError(f"step must be > 0, got {h}")
    base = np.array(positions, dtype=float)
    grad = np.empty_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (fn(plus) - fn(minus)) / (2.0 * h)
    return grad


def fd_rate_gradient(positions, scenario, h=RATE_FD_STEP):
    """Finite-difference rate gradient on the 40-digit reference rate."""
    return fd_gradient(lambda p: rate_mp(p, scenario), positions, h)


def fd_crb_gradient(positions, scenario, h=CRB_FD_STEP):
    """Finite-difference CRB gradient on the 40-digit reference CRB."""
    return fd_gradient(lambda p: crb_mp(p, scenario), positions, h)


def relative_error(analytic, reference, floor=1e-12):
    """Componentwise ``|a - b| / max(|b|, floor)``."""
    analytic = np.asarray(analytic)
    reference = np.asarray(reference)
    return np.abs(analytic - reference) / np.maximum(np.abs(reference), floor)


def random_oracle_scenario(rng, n_uavs, n_antennas, dist_range=(20.0, 200.0), omega=1.0,
                           params=None):
    """Random scenario with UAV-to-user distances drawn from ``dist_range``.

    Directions are uniform on the sphere; antenna offsets uniform in
    ``[-0.5, 0.5]^3``; the user sits at a random point of ``[-10, 10]^3``.
    """
    user = rng.uniform(-10.0, 10.0, 3)
    offsets = rng.uniform(-0.5, 0.5, (n_antennas, 3))
    dirs = rng.normal(size=(n_uavs, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dist = rng.uniform(*dist_range, size=n_uavs)
    return Scenario(user, offsets, user + dirs * dist[:, None], omega=omega,
                    params=params or ChannelParams())


def check_gradients(n_scenarios=20, seed=0, n_range=(2, 5), m_range=(1, 4)):
    """Compare analytic and finite-difference gradients on random scenarios.

    Returns a list of dicts (one per scenario) with the worst componentwise
    relative errors for the rate and the CRB.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_scenarios:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        scen = random_oracle_scenario(rng, n, m)
        q = scen.initial_positions
        try:
            g_crb = grad_crb(q, scen)
        except SingularFim:
            # two UAVs with a single antenna cannot localize in 3D; redraw
            continue
        g_rate = grad_rate(q, scen)
        out.append({
            "n_uavs": n,
            "n_antennas": m,
            "rate_max_rel_err": float(relative_error(g_rate, fd_rate_gradient(q, scen)).max()),
            "crb_max_rel_err": float(relative_error(g_crb, fd_crb_gradient(q, scen)).max()),
        })
    return out
