"""Communication rate, localization CRB and the weighted-sum objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalFailure, SingularFim
from .model import as_points, build_channel, link_distances

SINGULAR_TOL = 1e-9
"""Smallest admissible eigenvalue of the (unscaled) FIM."""


@dataclass(frozen=True)
class MetricReport:
    rate_nats: float
    crb_m2: float
    objective: float

    @classmethod
    def from_metrics(cls, rate_nats, crb_m2, omega):
        return cls(float(rate_nats), float(crb_m2), float(-rate_nats + omega * crb_m2))


def _small_gram(H, sigma2):
    """``I + G / sigma2`` where ``G`` is the smaller of ``H H^H`` and ``H^H H``.

    Both matrices share their non-zero eigenvalues, so they have the same
    log-determinant; the smaller one has no unit eigenvalues that would only
    contribute round-off.
    """
    n, m = H.shape
    if n <= m:
        gram = H @ H.conj().T
    else:
        gram = H.conj().T @ H
    return np.eye(gram.shape[0]) + gram / sigma2


def achievable_rate(H, sigma2):
    """Uplink rate ``log det(I + H H^H / sigma2)`` in nats.

    Computed through a Cholesky factorization of the Hermitian Gram matrix.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise ValueError(f"H must be a matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise NumericalFailure("channel matrix has non-finite entries")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    try:
        L = np.linalg.cholesky(_small_gram(H, sigma2))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"Gram matrix factorization failed: {exc}") from exc
    return float(2.0 * np.sum(np.log(np.diag(L).real)))


def unit_vectors(positions, scenario):
    """Unit directions antenna -> UAV, shape ``(N, M, 3)``, and distances ``(N, M)``."""
    d, r = link_distances(as_points(positions, "positions"), scenario.antennas)
    return d / r[..., None], r


def fim(positions, scenario):
    """Unscaled Fisher information ``sum_{n,m} u u^T`` (3x3).

    The physical FIM is this matrix divided by ``varsigma2 * c**2``.
    """
    u, _ = unit_vectors(positions, scenario)
    u = u.reshape(-1, 3)
    return u.T @ u


def inv_sym3(J):
    """Inverse of a symmetric 3x3 matrix by adjugate over determinant."""
    J = 0.5 * (J + J.T)
    a, b, c = J[0, 0], J[0, 1], J[0, 2]
    d, e = J[1, 1], J[1, 2]
    f = J[2, 2]
    c00 = d * f - e * e
    c01 = c * e - b * f
    c02 = b * e - c * d
    c11 = a * f - c * c
    c12 = b * c - a * e
    c22 = a * d - b * b
    det = a * c00 + b * c01 + c * c02
    adj = np.array([[c00, c01, c02], [c01, c11, c12], [c02, c12, c22]])
    return adj / det


def _check_fim(lam_min):
    if not lam_min > SINGULAR_TOL:
        raise SingularFim(
            f"FIM smallest eigenvalue {lam_min:.3e} <= {SINGULAR_TOL:g}", min_eigenvalue=lam_min)


def crb_from_fim(J, params):
    """CRB in m^2 from the unscaled FIM; raises :class:`SingularFim`."""
    J = 0.5 * (J + J.T)
    _check_fim(float(np.linalg.eigvalsh(J)[0]))
    return float(params.crb_scale * np.trace(inv_sym3(J)))


def crb(positions, scenario):
    """Cramér-Rao bound on the 3D user position error, in m^2.

    With ``U`` the stacked unit vectors, ``J = U^T U = R^T R`` for the QR
    factor ``R`` of ``U``, so ``tr(J^-1) = ||R^-1||_F^2``. Working on ``U``
    keeps the accuracy of near-singular geometries, whose ``J`` has the
    squared condition number.
    """
    u, _ = unit_vectors(positions, scenario)
    U = u.reshape(-1, 3)
    if U.shape[0] < 3:
        raise SingularFim("fewer than three links cannot localize in 3D", min_eigenvalue=0.0)
    R = np.linalg.qr(U, mode="r")
    sigma = np.linalg.svd(R, compute_uv=False)
    _check_fim(float(sigma[-1] ** 2))
    Rinv = np.linalg.solve(R, np.eye(3))
    return float(scenario.params.crb_scale * np.sum(Rinv * Rinv))


def objective(positions, scenario):
    """Rate, CRB and the scalarized objective ``-R + omega * CRB``."""
    H = build_channel(positions, scenario)
    rate = achievable_rate(H, scenario.params.sigma2)
    return MetricReport.from_metrics(rate, crb(positions, scenario), scenario.omega)
