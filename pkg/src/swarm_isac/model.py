"""Scenario description, link geometry and the line-of-sight channel model.

Coordinates are meters in a Cartesian frame. A single 3D point is a float
array of shape ``(3,)``; a swarm (or a set of antenna offsets) is an array of
shape ``(K, 3)`` with one row per UAV (antenna).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateGeometry

D_MIN = 1e-3
"""Smallest admissible UAV-to-antenna distance in meters."""

TWO_PI = 2.0 * np.pi


def as_vec3(value, name="vector"):
    """Return ``value`` as a finite float array of shape ``(3,)``."""
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components: {arr}")
    return arr


def as_points(value, name="points"):
    """Return ``value`` as a finite float array of shape ``(K, 3)``."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and arr.shape == (3,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (K, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")
    return arr


@dataclass(frozen=True)
class ChannelParams:
    """Physical constants of the channel and of the delay measurements.

    Defaults are the simulation settings used throughout the experiments:
    free-space path loss, 0.1 m carrier wavelength, unit reference gain.
    """

    beta0: float = 1.0
    gamma: float = 2.0
    lambda_c: float = 0.1
    sigma2: float = 1e-12
    varsigma2: float = 1e-15
    c_light: float = 3e8

    def __post_init__(self):
        for name in ("beta0", "gamma", "lambda_c", "sigma2", "varsigma2", "c_light"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"ChannelParams.{name} must be finite and > 0, got {value}")

    @property
    def crb_scale(self):
        """``varsigma2 * c_light**2``: converts trace(J^-1) into m^2."""
        return self.varsigma2 * self.c_light**2


@dataclass(frozen=True, eq=False)
class Scenario:
    """A complete placement problem.

    Parameters
    ----------
    user_pos : array_like, shape (3,)
        Center of the user's antenna array.
    antenna_offsets : array_like, shape (M, 3)
        Offset of each user antenna from ``user_pos``.
    initial_positions : array_like, shape (N, 3)
        Initial UAV positions; each UAV may move at most ``r_max`` from its own.
    r_max : float
        Flight radius around the initial position.
    omega : float
        Weight of the CRB against the rate in the scalarized objective.
    params : ChannelParams
    """

    user_pos: np.ndarray
    antenna_offsets: np.ndarray
    initial_positions: np.ndarray
    r_max: float = 20.0
    omega: float = 1.0
    params: ChannelParams = field(default_factory=ChannelParams)

    def __post_init__(self):
        user = as_vec3(self.user_pos, "user_pos")
        offsets = as_points(self.antenna_offsets, "antenna_offsets")
        q0 = as_points(self.initial_positions, "initial_positions")
        if not (np.isfinite(self.r_max) and self.r_max > 0):
            raise ValueError(f"r_max must be > 0, got {self.r_max}")
        if not (np.isfinite(self.omega) and self.omega >= 0):
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        for name, arr in (("user_pos", user), ("antenna_offsets", offsets),
                          ("initial_positions", q0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "omega", float(self.omega))
        antennas = user + offsets
        antennas.setflags(write=False)
        object.__setattr__(self, "_antennas", antennas)
        # raises DegenerateGeometry for any initial link shorter than D_MIN
        link_distances(q0, self.antennas)

    @property
    def n_uavs(self):
        return self.initial_positions.shape[0]

    @property
    def n_antennas(self):
        return self.antenna_offsets.shape[0]

    @property
    def antennas(self):
        """Absolute antenna positions, shape ``(M, 3)``, read-only."""
        return self._antennas

    def replace(self, **changes):
        """Return a copy with some fields replaced."""
        fields = dict(user_pos=self.user_pos, antenna_offsets=self.antenna_offsets,
                      initial_positions=self.initial_positions, r_max=self.r_max,
                      omega=self.omega, params=self.params)
        fields.update(changes)
        return Scenario(**fields)


def antenna_position(scenario, m):
    """Absolute position of antenna ``m``: ``user_pos + antenna_offsets[m]``."""
    if not 0 <= m < scenario.n_antennas:
        raise IndexError(f"antenna index {m} out of range [0, {scenario.n_antennas})")
    return scenario.user_pos + scenario.antenna_offsets[m]


def link_geometry(q, antenna):
    """Displacement, distance and unit direction from ``antenna`` to ``q``.

    Raises
    ------
    DegenerateGeometry
        If the two points are closer than ``D_MIN``.
    """
    d = as_vec3(q, "q") - as_vec3(antenna, "antenna")
    r = float(np.sqrt(d @ d))
    if r < D_MIN:
        raise DegenerateGeometry(f"link length {r:.3e} m is below D_MIN={D_MIN} m")
    return d, r, d / r


def link_distances(positions, antennas):
    """Pairwise displacements ``(N, M, 3)`` and distances ``(N, M)``.

    Raises :class:`DegenerateGeometry` naming the first link below ``D_MIN``.
    """
    d = positions[:, None, :] - antennas[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=-1))
    bad = np.argwhere(~(r >= D_MIN))
    if bad.size:
        n, m = (int(i) for i in bad[0])
        raise DegenerateGeometry(
            f"UAV {n} is {r[n, m]:.3e} m from antenna {m} (D_MIN={D_MIN} m)", link=(n, m))
    return d, r


def channel_coeff(r, params):
    """LoS coefficient ``beta0 / r**gamma * exp(-j 2 pi r / lambda)``.

    Accepts a scalar or an array of distances.
    """
    r = np.asarray(r, dtype=float)
    if np.any(~(r >= D_MIN)):
        raise DegenerateGeometry(f"distance below D_MIN={D_MIN} m")
    h = params.beta0 / r**params.gamma * np.exp(-1j * (TWO_PI * r / params.lambda_c))
    return h[()] if h.ndim == 0 else h


def build_channel(positions, scenario):
    """Channel matrix ``H`` of shape ``(N, M)`` for UAVs at ``positions``."""
    positions = as_points(positions, "positions")
    _, r = link_distances(positions, scenario.antennas)
    return channel_coeff(r, scenario.params)
