"""End-to-end two-timescale simulation.

Every super-frame the topology drifts, correlation matrices and ``Q`` are
rebuilt and each two-tier scheme refreshes its outer precoders.  Every
subframe the fast fading advances, receivers and inner ZF precoders are
recomputed and per-cell throughput is accumulated.  Precoders scale with
``sqrt(P)``, so all transmit powers are evaluated from one trajectory.
"""

import json
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .config import SimConfig
from .counters import count_complexity, count_feedback
from .covariance import CovarianceProfile, network_q, per_ms_covariance
from .errors import TwoTierError
from .kernels import tin_rates
from .precoder import one_tier_zf, stream_allocation, two_tier_bundle
from .tracker import COMPENSATED, GRADIENT_ONLY, init_state, oracle_outer_precoder, track_superframe

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACKING_MODES = {"proposed": COMPENSATED, "gradient": GRADIENT_ONLY}


class SimulationError(TwoTierError):
    """A module error raised inside the simulation loop, with its context."""


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------


def stream_gains(h, bundle):
    """Receiver-projected gains of every network stream at every user.

    Returns ``(gains, own)`` with ``gains[u, :, s] = U_u^H h[u, l(s)] v_s``.
    """
    rx = np.stack(bundle.receivers)
    blocks = []
    for l, v in enumerate(bundle.precoders):
        hv = h[:, l] @ v
        blocks.append(rx.conj().transpose(0, 2, 1) @ hv)
    gains = np.concatenate(blocks, axis=2)
    owner = bundle.stream_owner()
    own = owner[np.newaxis, :] == np.arange(h.shape[0])[:, np.newaxis]
    return gains, own


def user_rates(h, bundle, noise_power=1.0, power_scale=1.0):
    gains, own = stream_gains(h, bundle)
    noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (h.shape[0],)).copy()
    if np.any(noise <= 0):
        jitter = 1e-12 * np.max(np.sum(np.abs(gains) ** 2, axis=(1, 2))) * power_scale
        log.warning("non-positive noise power; adding %.3e jitter", jitter)
        noise = np.where(noise > 0, noise, max(jitter, np.finfo(float).tiny))
    return tin_rates(np.sqrt(power_scale) * gains, own, noise)


def compute_rates(h, bundle, noise_power=1.0):
    """Per-cell throughput (bits/s/Hz): sum of the served users' TIN rates."""
    rates = user_rates(h, bundle, noise_power)
    return np.bincount(bundle.serving, weights=rates, minlength=len(bundle.precoders))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class SimReport:
    config: dict
    results: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    tracking_error: list = field(default_factory=list)
    feedback: dict = field(default_factory=dict)
    complexity: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "results": self.results,
            "tracking_error": self.tracking_error,
            "diagnostics": self.diagnostics,
            "feedback": self.feedback,
            "complexity": self.complexity,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def lookup(self, scheme, power_db=None, speed_kmh=None):
        for row in self.results:
            if row["scheme"] != scheme:
                continue
            if power_db is not None and row["power_db"] != power_db:
                continue
            if speed_kmh is not None and row["speed_kmh"] != speed_kmh:
                continue
            return row
        raise KeyError((scheme, power_db, speed_kmh))

    def summary_rows(self):
        cols = ("scheme", "power_db", "speed_kmh", "mean_per_cell_rate_bps_hz", "stderr", "n_seeds")
        return cols, [tuple(r[c] for c in cols) for r in self.results]


def scheme_labels(cfg):
    labels = []
    for s in cfg.schemes:
        if s == "one_tier":
            labels.extend(f"one_tier_lat{lat}" for lat in cfg.latency_subframes)
        else:
            labels.append(s)
    return labels


# ---------------------------------------------------------------------------
# One trajectory
# ---------------------------------------------------------------------------


def _seed_ints(cfg, seed_index):
    ss = np.random.SeedSequence([int(cfg.seed), int(seed_index)])
    topo_ss, fade_ss, cov_ss = ss.spawn(3)
    return (int(topo_ss.generate_state(1)[0]), int(fade_ss.generate_state(1)[0]),
            np.random.default_rng(cov_ss))


class _Link:
    """Per-super-frame large-scale state: correlations, roots, gains and Q."""

    def __init__(self, cfg, topo, geom, cov_rng):
        spread = np.deg2rad(cfg.angular_spread_deg)
        self.corr = ch.correlation_set(topo, geom, spread, cfg.quad_points, cfg.geometric_spread)
        self.gains = topo.gains()
        self.roots = np.empty_like(self.corr)
        for c in range(self.corr.shape[0]):
            for l in range(self.corr.shape[1]):
                self.roots[c, l] = ch.psd_sqrt(self.corr[c, l])
        if cfg.covariance_mode == "exact":
            self.q = network_q(self.corr, self.gains, topo.cluster_cell, topo.users_per_cluster, cfg.n_r, cfg.w)
        else:
            self.q = _sampled_q(cfg, topo, self.corr, self.gains, cov_rng)

    def realize(self, h_w, cluster_of_user):
        # h[u, l] = sqrt(g[c, l]) h_w[u] T[c, l]^(1/2)
        roots = self.roots[cluster_of_user]
        scale = np.sqrt(self.gains[cluster_of_user])[:, :, None, None]
        return scale * np.einsum("urt,ults->ulrs", h_w, roots)


def _sampled_q(cfg, topo, corr, gains, rng):
    n_clusters, n_cells = gains.shape
    q = []
    for b in range(n_cells):
        acc = np.zeros(corr.shape[2:], dtype=complex)
        for c in range(n_clusters):
            coef = -cfg.w if topo.cluster_cell[c] == b else 1.0
            for _ in range(topo.users_per_cluster):
                acc += coef * per_ms_covariance(corr[c, b], gains[c, b], cfg.n_r, "sampled",
                                                cfg.superframe_len, rng)
        q.append(0.5 * (acc + acc.conj().T))
    return CovarianceProfile(q, cfg.w)


def simulate_trajectory(cfg, speed_kmh, seed_index=0, diagnostics=False):
    """Run one seed at one speed.

    Returns ``(throughput, tracking_error, diag)``: mean per-cell throughput
    per scheme label and power point, mean subspace error of each tracking
    scheme, and tracker diagnostic rows (when requested).
    """
    topo_seed, fade_seed, cov_rng = _seed_ints(cfg, seed_index)
    topo = ch.build_network(cfg.g, cfg.clusters_per_cell, cfg.k, inter_site_distance=cfg.inter_site_distance,
                            pathloss_exponent=cfg.pathloss_exponent, scatter_radius=cfg.scatter_radius,
                            speed_mps=speed_kmh / 3.6, seed=topo_seed)
    geom = ch.ula(cfg.n_t)
    cluster_of_user = np.repeat(np.arange(topo.n_clusters), cfg.k)
    serving = topo.cluster_cell[cluster_of_user]
    n_users = len(serving)
    d = stream_allocation(cfg.n_r, cfg.m, cfg.users_per_cell)
    doppler = ch.doppler_hz(speed_kmh, cfg.carrier_hz)
    rho = ch.temporal_correlation(doppler, cfg.subframe_duration)
    fading = ch.init_fading(n_users, cfg.n_r, cfg.n_t, rho, fade_seed, doppler, cfg.subframe_duration)
    powers = 10.0 ** (np.asarray(cfg.power_dbs, dtype=float) / 10.0)
    labels = scheme_labels(cfg)
    totals = {label: np.zeros(len(powers)) for label in labels}
    two_tier = [s for s in cfg.schemes if s != "one_tier"]
    latencies = list(cfg.latency_subframes) if "one_tier" in cfg.schemes else []
    errors = {s: [] for s in TRACKING_MODES if s in two_tier}
    diag = {}

    link = _Link(cfg, topo, geom, cov_rng)
    history = deque(maxlen=max(latencies, default=0) + 1)
    for _ in range(history.maxlen - 1):
        fading = ch.advance_fading(fading)
        history.append(link.realize(fading.h_w, cluster_of_user))

    states = {}
    n_sub = 0
    for n in range(cfg.n_superframes):
        if n > 0:
            topo = ch.advance_topology(topo, cfg.superframe_len * cfg.subframe_duration)
            link = _Link(cfg, topo, geom, cov_rng)
        oracle, _ = oracle_outer_precoder(link.q, cfg.m)
        outers = {}
        for s in two_tier:
            if s == "oracle":
                outers[s] = oracle
                continue
            if n == 0:
                state = init_state(oracle, cfg.step_size(), cfg.n_cg, q_prev=link.q, cg_method=cfg.cg_method)
                state.superframe = 1  # next update processes super-frame 1
                states[s] = state
                outers[s] = oracle
                continue
            try:
                states[s] = track_superframe(states[s], link.q, TRACKING_MODES[s], diagnostics=True)
            except TwoTierError as exc:
                raise SimulationError(f"scheme={s} superframe={n}: {exc}") from exc
            outers[s] = states[s].phi
            rows = states[s].diagnostics[-cfg.g:]
            errors[s].append(np.mean([r["subspace_error"] for r in rows]))

        for j in range(cfg.superframe_len):
            fading = ch.advance_fading(fading)
            h = link.realize(fading.h_w, cluster_of_user)
            history.append(h)
            n_sub += 1
            try:
                for s in two_tier:
                    label = s
                    bundle = two_tier_bundle(h, outers[s], serving, 1.0, cfg.w, d)
                    totals[label] += _cell_mean(h, bundle, powers, cfg.g)
                for lat in latencies:
                    label = f"one_tier_lat{lat}"
                    bundle = one_tier_zf(history[-1 - lat], serving, 1.0, d)
                    totals[label] += _cell_mean(h, bundle, powers, cfg.g)
            except TwoTierError as exc:
                raise SimulationError(f"scheme={label} superframe={n} subframe={j}: {exc}") from exc

    if diagnostics:
        diag = {s: states[s].diagnostics for s in states}
    throughput = {label: (tot / n_sub if n_sub else tot) for label, tot in totals.items()}
    tracking = {s: float(np.mean(v)) if v else 0.0 for s, v in errors.items()}
    return throughput, tracking, diag


def _cell_mean(h, bundle, powers, n_cells):
    gains, own = stream_gains(h, bundle)
    noise = np.ones(h.shape[0])
    out = np.empty(len(powers))
    for i, p in enumerate(powers):
        out[i] = tin_rates(np.sqrt(p) * gains, own, noise).sum() / n_cells
    return out


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


def run_simulation(cfg: SimConfig) -> SimReport:
    """All seeds, speeds and powers of ``cfg``; deterministic given ``cfg.seed``."""
    report = SimReport(config=cfg.to_dict())
    labels = scheme_labels(cfg)
    for s in cfg.schemes:
        report.feedback[s] = count_feedback(cfg, s)._asdict()
    proposed = count_complexity(cfg.n_t, cfg.m, "proposed")
    report.complexity = {
        "proposed": {"formula": proposed.formula, "instrumented": proposed.instrumented},
        "svd": {"formula": count_complexity(cfg.n_t, cfg.m, "svd").formula},
    }
    if cfg.n_superframes == 0:
        return report
    for speed in cfg.speeds_kmh:
        per_seed = {label: [] for label in labels}
        track = {}
        for i in range(cfg.n_seeds):
            thr, err, diag = simulate_trajectory(cfg, speed, i, diagnostics=(i == 0))
            for label in labels:
                per_seed[label].append(thr[label])
            for s, e in err.items():
                track.setdefault(s, []).append(e)
            for s, rows in diag.items():
                report.diagnostics[f"{s}@{speed:g}kmh"] = rows
        for label in labels:
            arr = np.array(per_seed[label])
            for pi, p_db in enumerate(cfg.power_dbs):
                col = arr[:, pi]
                stderr = float(col.std(ddof=1) / np.sqrt(len(col))) if len(col) > 1 else 0.0
                report.results.append({
                    "scheme": label,
                    "power_db": float(p_db),
                    "speed_kmh": float(speed),
                    "mean_per_cell_rate_bps_hz": float(col.mean()),
                    "stderr": stderr,
                    "n_seeds": len(col),
                    "per_seed": [float(x) for x in col],
                })
        for s, vals in track.items():
            report.tracking_error.append({"scheme": s, "speed_kmh": float(speed),
                                          "mean_subspace_error": float(np.mean(vals)),
                                          "per_seed": [float(v) for v in vals]})
    return report


def sweep(cfg, vary, points):
    """Re-run ``cfg`` over a list of powers (dB) or speeds (km/h).

    Returns ``{label: [(value, mean, stderr, n_seeds), ...]}``.
    """
    if vary == "power":
        cfg = cfg.replace(power_dbs=list(points), speeds_kmh=cfg.speeds_kmh[:1])
        key = "power_db"
    elif vary == "speed":
        cfg = cfg.replace(speeds_kmh=list(points), power_dbs=cfg.power_dbs[:1])
        key = "speed_kmh"
    else:
        raise ValueError(f"cannot sweep {vary!r}; use 'power' or 'speed'")
    report = run_simulation(cfg)
    out = {}
    for row in report.results:
        out.setdefault(row["scheme"], []).append(
            (row[key], row["mean_per_cell_rate_bps_hz"], row["stderr"], row["n_seeds"]))
    return out, report
