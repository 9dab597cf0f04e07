"""Arbitrary-precision reference evaluations of the rate and the CRB.

These follow the defining formulas literally (full N x N determinant, explicit
3x3 inverse) in mpmath arithmetic. They are slow and exist to serve as
independent oracles: a finite-difference step of 1e-6 m on a double-precision
rate loses most of its digits to round-off in phases of order 1e4 rad.
"""

from __future__ import annotations

import mpmath
import numpy as np

DEFAULT_DPS = 40


def _links(positions, scenario):
    pos = np.asarray(positions, dtype=float)
    ant = scenario.antennas
    out = []
    for n in range(pos.shape[0]):
        row = []
        for m in range(ant.shape[0]):
            d = [mpmath.mpf(float(pos[n, i])) - mpmath.mpf(float(ant[m, i])) for i in range(3)]
            r = mpmath.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
            row.append((d, r))
        out.append(row)
    return out


def rate_mp(positions, scenario, dps=DEFAULT_DPS):
    """``log det(I_N + H H^H / sigma2)`` as an ``mpf``."""
    p = scenario.params
    with mpmath.workdps(dps):
        beta0, gamma = mpmath.mpf(p.beta0), mpmath.mpf(p.gamma)
        k = 2 * mpmath.pi / mpmath.mpf(p.lambda_c)
        links = _links(positions, scenario)
        N, M = len(links), len(links[0])
        H = mpmath.matrix(N, M)
        for n in range(N):
            for m in range(M):
                r = links[n][m][1]
                H[n, m] = beta0 / r**gamma * mpmath.expj(-k * r)
        A = mpmath.eye(N) + H * H.H / mpmath.mpf(p.sigma2)
        return +mpmath.log(mpmath.re(mpmath.det(A)))


def crb_mp(positions, scenario, dps=DEFAULT_DPS):
    """``varsigma2 c^2 tr((sum u u^T)^-1)`` as an ``mpf``."""
    p = scenario.params
    with mpmath.workdps(dps):
        J = mpmath.zeros(3, 3)
        for row in _links(positions, scenario):
            for d, r in row:
                u = mpmath.matrix([x / r for x in d])
                J += u * u.T
        Jinv = mpmath.inverse(J)
        scale = mpmath.mpf(p.varsigma2) * mpmath.mpf(p.c_light) ** 2
        return +(scale * (Jinv[0, 0] + Jinv[1, 1] + Jinv[2, 2]))
