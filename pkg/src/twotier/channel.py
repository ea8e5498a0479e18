"""Two-timescale spatially correlated channel model.

One-ring correlation matrices built from a von Mises power azimuth spectrum,
AR(1) small-scale fading, and a clustered multi-cell topology whose clusters
drift along fixed headings so the correlation matrices change between
super-frames.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import special

from .errors import DimensionError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_QUAD_POINTS = 4096
SPEED_OF_LIGHT = 299_792_458.0
MIN_BS_DISTANCE = 1.0


# --------------------------------------------------------------------------
# Power azimuth spectrum and correlation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OneRingParams:
    """Link parameters of the one-ring model.

    ``kappa`` is tied to the angular spread by ``kappa = (2 * spread)**-2``
    with the spread in radians.
    """

    mean_aod: float
    angular_spread: float
    scatter_radius: float = 30.0
    distance: float = 250.0
    kappa: float = field(default=None)

    def __post_init__(self):
        if not 0 < self.angular_spread < np.pi:
            raise ValidationError(f"angular spread must lie in (0, pi), got {self.angular_spread}")
        if self.kappa is None:
            object.__setattr__(self, "kappa", (2.0 * self.angular_spread) ** -2)

    @classmethod
    def from_geometry(cls, mean_aod, scatter_radius, distance):
        """Spread ``2 atan(r / D)`` subtended by the scattering ring."""
        spread = 2.0 * np.arctan2(scatter_radius, distance)
        return cls(mean_aod, spread, scatter_radius, distance)

    @classmethod
    def with_kappa(cls, mean_aod, kappa, **kwargs):
        """Parameters for a given concentration (``kappa = 0`` is isotropic)."""
        spread = 0.5 / np.sqrt(kappa) if kappa > 0 else np.pi - 1e-12
        return cls(mean_aod, min(spread, np.pi - 1e-12), kappa=float(kappa), **kwargs)


@dataclass(frozen=True)
class ArrayGeometry:
    n_t: int
    element_phase: Callable = None

    def phases(self, theta):
        """Phases ``phi_p(theta)``, shape ``(n_t, len(theta))``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.element_phase is not None:
            return np.asarray(self.element_phase(theta), dtype=float).reshape(self.n_t, theta.size)
        # half-wavelength uniform linear array
        return np.pi * np.arange(self.n_t)[:, None] * np.sin(theta)[None, :]

    def steering(self, theta):
        return np.exp(1j * self.phases(theta))[:, 0]


def ula(n_t):
    return ArrayGeometry(n_t)


def pas_value(theta, p):
    """von Mises density ``exp(k cos(theta - mean)) / (2 pi I0(k))``.

    Uses the exponentially scaled Bessel function so large concentrations do
    not overflow.
    """
    theta = np.asarray(theta, dtype=float)
    k = p.kappa
    return np.exp(k * (np.cos(theta - p.mean_aod) - 1.0)) / (2.0 * np.pi * special.i0e(k))


def correlation_matrix(geom, p, quad_points=DEFAULT_QUAD_POINTS):
    """Transmit correlation matrix of one link.

    Entry ``(a, b)`` is the PAS-weighted average of
    ``exp(j (phi_a(theta) - phi_b(theta)))`` over ``[-pi, pi)``, evaluated with
    the periodic trapezoid rule.
    """
    if quad_points < 8 * geom.n_t:
        raise ValidationError(f"quad_points={quad_points} below the floor 8*n_t={8 * geom.n_t}")
    theta = -np.pi + 2.0 * np.pi * np.arange(quad_points) / quad_points
    weights = pas_value(theta, p) * (2.0 * np.pi / quad_points)
    e = np.exp(1j * geom.phases(theta))
    t = (e * weights) @ e.conj().T
    return 0.5 * (t + t.conj().T)


def check_correlation(t, tol_diag=1e-6):
    """Raise :class:`ValidationError` unless ``t`` is a valid correlation matrix."""
    t = np.asarray(t)
    n = t.shape[0]
    if np.linalg.norm(t - t.conj().T) > 1e-10 * max(1.0, np.linalg.norm(t)):
        raise ValidationError("correlation matrix is not Hermitian")
    w = np.linalg.eigvalsh(t)
    if w[0] < -1e-8 * np.real(np.trace(t)) / n:
        raise ValidationError(f"correlation matrix is not PSD (min eigenvalue {w[0]:.3e})")
    if np.max(np.abs(np.diag(t) - 1.0)) > tol_diag:
        raise ValidationError("correlation matrix diagonal is not unit")
    return t


def psd_sqrt(t):
    """Hermitian PSD square root; rejects clearly indefinite input."""
    t = np.asarray(t)
    w, v = np.linalg.eigh(0.5 * (t + t.conj().T))
    floor = -1e-8 * max(np.sum(np.abs(w)), np.finfo(float).tiny) / t.shape[0]
    if w[0] < floor:
        raise ValidationError(f"cannot take square root of indefinite matrix (min eigenvalue {w[0]:.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def effective_rank(t, rel=1e-3):
    w = np.linalg.eigvalsh(t)
    return int(np.sum(w > rel * w[-1]))


def truncate_rank(t, rank):
    """Keep the ``rank`` dominant eigencomponents of ``t``."""
    w, v = np.linalg.eigh(t)
    v = v[:, -rank:]
    return (v * w[-rank:]) @ v.conj().T


# --------------------------------------------------------------------------
# Small-scale fading
# --------------------------------------------------------------------------


def complex_normal(rng, shape):
    """Circularly symmetric standard complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def doppler_hz(speed_kmh, carrier_hz):
    return speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


def temporal_correlation(doppler, subframe_duration):
    """AR coefficient ``J0(2 pi f_d tau)`` (Clarke spectrum)."""
    return float(special.j0(2.0 * np.pi * doppler * subframe_duration))


@dataclass
class FadingState:
    """Per-user fast-fading matrices ``h_w[u]`` of shape ``(n_r, n_t)``.

    Each user draws its innovations from its own generator in ``rngs``.
    """

    h_w: np.ndarray
    rho_temporal: float
    rngs: list
    doppler: float = 0.0
    subframe_duration: float = 1e-3

    def __post_init__(self):
        if abs(self.rho_temporal) > 1.0:
            raise ValidationError(f"|rho| must be <= 1, got {self.rho_temporal}")
        if len(self.rngs) != self.h_w.shape[0]:
            raise DimensionError("need one generator per user")


def init_fading(n_users, n_r, n_t, rho, seed, doppler=0.0, subframe_duration=1e-3):
    """Stationary initial state with independent per-user substreams."""
    seqs = np.random.SeedSequence(seed).spawn(n_users)
    rngs = [np.random.default_rng(s) for s in seqs]
    h = np.stack([complex_normal(g, (n_r, n_t)) for g in rngs]) if n_users else np.zeros((0, n_r, n_t), complex)
    return FadingState(h, float(rho), rngs, doppler, subframe_duration)


def advance_fading(state):
    """One AR(1) step ``h <- rho h + sqrt(1 - rho^2) w``."""
    rho = state.rho_temporal
    if rho == 1.0:
        return replace(state, h_w=state.h_w.copy())
    _, n_r, n_t = state.h_w.shape
    innov = np.stack([complex_normal(g, (n_r, n_t)) for g in state.rngs]) if state.rngs else state.h_w * 0
    h = rho * state.h_w + np.sqrt(1.0 - rho * rho) * innov
    return replace(state, h_w=h)


def channel_realization(h_w, t, gain=1.0, t_sqrt=None):
    """``sqrt(gain) * h_w @ t^(1/2)``.

    Pass a precomputed ``t_sqrt`` to skip the eigendecomposition.
    """
    if gain <= 0:
        raise ValidationError(f"gain must be positive, got {gain}")
    root = psd_sqrt(t) if t_sqrt is None else t_sqrt
    return np.sqrt(gain) * (np.asarray(h_w) @ root)


# --------------------------------------------------------------------------
# Topology and mobility
# --------------------------------------------------------------------------


@dataclass
class NetworkTopology:
    """Cell sites, clusters and users in metres.

    ``cluster_centers[c]`` belongs to cell ``cluster_cell[c]``; users of
    cluster ``c`` are ``user_positions[c]``.  All users of a cluster share the
    cluster velocity ``cluster_velocities[c]``.
    """

    bs_positions: np.ndarray
    cluster_centers: np.ndarray
    cluster_cell: np.ndarray
    user_positions: np.ndarray
    cluster_velocities: np.ndarray
    pathloss_exponent: float = 2.6
    inter_site_distance: float = 500.0
    scatter_radius: float = 30.0
    seed: int = 0

    @property
    def n_cells(self):
        return len(self.bs_positions)

    @property
    def n_clusters(self):
        return len(self.cluster_centers)

    @property
    def users_per_cluster(self):
        return self.user_positions.shape[1]

    @property
    def user_velocities(self):
        k = self.users_per_cluster
        return np.repeat(self.cluster_velocities, k, axis=0)

    def distances(self):
        """``(n_clusters, n_cells)`` distances from each cluster to each BS."""
        d = self.cluster_centers[:, None, :] - self.bs_positions[None, :, :]
        return np.hypot(d[..., 0], d[..., 1])

    def mean_aods(self):
        d = self.cluster_centers[:, None, :] - self.bs_positions[None, :, :]
        return np.arctan2(d[..., 1], d[..., 0])

    def raw_gains(self):
        return self.distances() ** (-self.pathloss_exponent)

    def gains(self):
        """Pathloss gains normalised so the weakest direct link has gain 1."""
        g = self.raw_gains()
        direct = g[np.arange(self.n_clusters), self.cluster_cell]
        return g / direct.min()

    def link_params(self, angular_spread, geometric=False):
        """One-ring parameters for every (cluster, BS) link."""
        aod = self.mean_aods()
        dist = self.distances()
        out = []
        for c in range(self.n_clusters):
            row = []
            for l in range(self.n_cells):
                if geometric:
                    row.append(OneRingParams.from_geometry(aod[c, l], self.scatter_radius, dist[c, l]))
                else:
                    row.append(OneRingParams(aod[c, l], angular_spread, self.scatter_radius, dist[c, l]))
            out.append(row)
        return out

    def to_dict(self):
        return {
            "seed": int(self.seed),
            "pathloss_exponent": float(self.pathloss_exponent),
            "inter_site_distance": float(self.inter_site_distance),
            "scatter_radius": float(self.scatter_radius),
            "bs_positions": self.bs_positions.tolist(),
            "cluster_centers": self.cluster_centers.tolist(),
            "cluster_cell": self.cluster_cell.tolist(),
            "user_positions": self.user_positions.tolist(),
            "cluster_velocities": self.cluster_velocities.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        return cls(
            bs_positions=np.asarray(d["bs_positions"], dtype=float),
            cluster_centers=np.asarray(d["cluster_centers"], dtype=float),
            cluster_cell=np.asarray(d["cluster_cell"], dtype=int),
            user_positions=np.asarray(d["user_positions"], dtype=float),
            cluster_velocities=np.asarray(d["cluster_velocities"], dtype=float),
            pathloss_exponent=d["pathloss_exponent"],
            inter_site_distance=d["inter_site_distance"],
            scatter_radius=d["scatter_radius"],
            seed=d["seed"],
        )


def grid_sites(g, spacing):
    """First ``g`` sites of a square grid, centred on the origin."""
    cols = int(np.ceil(np.sqrt(g)))
    rows = int(np.ceil(g / cols))
    xs = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    ys = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    sites = np.array([(x, y) for y in ys for x in xs])
    return sites[:g]


def build_network(g, clusters_per_cell, k, *, inter_site_distance=500.0, pathloss_exponent=2.6,
                  scatter_radius=30.0, speed_mps=0.0, min_distance=35.0, seed=0):
    """Random clustered topology on a square grid of cells.

    Cluster centres are uniform in each cell's square (rejecting points closer
    than ``min_distance`` to the site), users are uniform on a disc of radius
    ``scatter_radius`` around their cluster centre, and each cluster moves at
    ``speed_mps`` along a uniformly drawn heading.
    """
    if g < 1 or clusters_per_cell < 1 or k < 1:
        raise ValidationError("cell, cluster and user counts must be positive")
    if min_distance <= scatter_radius:
        raise ValidationError("min_distance must exceed scatter_radius so users stay clear of the site")
    rng = np.random.default_rng(seed)
    bs = grid_sites(g, inter_site_distance)
    half = inter_site_distance / 2.0
    centers, cells = [], []
    for b in range(g):
        for _ in range(clusters_per_cell):
            while True:
                off = rng.uniform(-half, half, size=2)
                if np.hypot(*off) >= min_distance:
                    break
            centers.append(bs[b] + off)
            cells.append(b)
    centers = np.array(centers)
    radius = scatter_radius * np.sqrt(rng.uniform(size=(len(centers), k)))
    angle = rng.uniform(0, 2 * np.pi, size=(len(centers), k))
    users = centers[:, None, :] + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    heading = rng.uniform(0, 2 * np.pi, size=len(centers))
    vel = speed_mps * np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    topo = NetworkTopology(bs, centers, np.array(cells, dtype=int), users, vel, pathloss_exponent,
                           inter_site_distance, scatter_radius, seed)
    if np.min(topo.distances()) <= 0:
        raise ValidationError("a cluster coincides with a base station")
    return topo


def advance_topology(topo, dt):
    """Move every cluster (and its users) by ``velocity * dt``."""
    if dt < 0:
        raise ValidationError(f"dt must be nonnegative, got {dt}")
    shift = topo.cluster_velocities * dt
    centers = topo.cluster_centers + shift
    users = topo.user_positions + shift[:, None, :]
    d = centers[:, None, :] - topo.bs_positions[None, :, :]
    dist = np.hypot(d[..., 0], d[..., 1])
    too_close = dist < MIN_BS_DISTANCE
    if np.any(too_close):
        for c, l in zip(*np.nonzero(too_close)):
            log.warning("cluster %d within %.1f m of BS %d; clamping", c, MIN_BS_DISTANCE, l)
            direction = d[c, l] / dist[c, l] if dist[c, l] > 0 else np.array([1.0, 0.0])
            fix = topo.bs_positions[l] + MIN_BS_DISTANCE * direction - centers[c]
            centers[c] += fix
            users[c] += fix
    return replace(topo, cluster_centers=centers, user_positions=users)


def correlation_set(topo, geom, angular_spread, quad_points=DEFAULT_QUAD_POINTS, geometric=False):
    """Correlation matrices for every (cluster, BS) link, shape ``(C, G, n_t, n_t)``."""
    params = topo.link_params(angular_spread, geometric)
    n_t = geom.n_t
    out = np.empty((topo.n_clusters, topo.n_cells, n_t, n_t), dtype=complex)
    for c, row in enumerate(params):
        for l, p in enumerate(row):
            out[c, l] = correlation_matrix(geom, p, quad_points)
    return out
