import json

import numpy as np
import pytest
from scipy import integrate, special

from conftest import crandn
from twotier import channel as ch
from twotier.errors import DimensionError, ValidationError


# -- PAS -----------------------------------------------------------------------

def test_pas_uniform_at_zero_kappa():
    p = ch.OneRingParams.with_kappa(0.3, 0.0)
    theta = np.linspace(-np.pi, np.pi, 11)
    assert np.allclose(ch.pas_value(theta, p), 1 / (2 * np.pi))


def test_pas_peak_value():
    p = ch.OneRingParams.with_kappa(0.7, 3.0)
    want = np.exp(3.0) / (2 * np.pi * special.i0(3.0))
    assert ch.pas_value(0.7, p) == pytest.approx(want, rel=1e-12)
    assert ch.pas_value(0.7, p) > ch.pas_value(np.linspace(-np.pi, np.pi, 101), p).max() - 1e-12


@pytest.mark.parametrize("kappa", [0.5, 2.0, 10.0])
def test_pas_normalised_2048(kappa):
    p = ch.OneRingParams.with_kappa(-1.1, kappa)
    theta = -np.pi + 2 * np.pi * np.arange(2048) / 2048
    total = ch.pas_value(theta, p).sum() * 2 * np.pi / 2048
    assert abs(total - 1) < 1e-6


@pytest.mark.parametrize("kappa", [0.0, 0.1, 5.0, 20.0, 50.0])
def test_pas_normalised_adaptive(kappa):
    p = ch.OneRingParams.with_kappa(2.0, kappa)
    total, _ = integrate.quad(lambda t: float(ch.pas_value(t, p)), -np.pi, np.pi, limit=200)
    assert abs(total - 1) < 1e-6


def test_kappa_from_spread():
    p = ch.OneRingParams(0.0, np.deg2rad(20))
    assert p.kappa == pytest.approx((2 * np.deg2rad(20)) ** -2, rel=1e-12)


def test_spread_from_geometry():
    p = ch.OneRingParams.from_geometry(0.0, 30.0, 250.0)
    assert p.angular_spread == pytest.approx(2 * np.arctan(30 / 250), rel=1e-6)


def test_spread_out_of_range():
    with pytest.raises(ValidationError):
        ch.OneRingParams(0.0, 0.0)
    with pytest.raises(ValidationError):
        ch.OneRingParams(0.0, 4.0)


# -- correlation -------------------------------------------------------------------

def brute_correlation(n_t, mean, kappa, points):
    theta = np.linspace(-np.pi, np.pi, points, endpoint=False)
    dens = np.exp(kappa * np.cos(theta - mean)) / (2 * np.pi * special.i0(kappa))
    t = np.zeros((n_t, n_t), complex)
    for a in range(n_t):
        for b in range(n_t):
            t[a, b] = np.sum(dens * np.exp(1j * np.pi * (a - b) * np.sin(theta))) * 2 * np.pi / points
    return t


def test_correlation_matches_reference_quadrature():
    t = ch.correlation_matrix(ch.ula(4), ch.OneRingParams.with_kappa(0.0, 2.0))
    ref = brute_correlation(4, 0.0, 2.0, 4096)
    assert np.abs(t - ref).max() < 1e-8


def test_correlation_is_valid(rng):
    for _ in range(10):
        p = ch.OneRingParams(rng.uniform(-np.pi, np.pi), rng.uniform(0.05, 1.5))
        t = ch.correlation_matrix(ch.ula(int(rng.integers(2, 20))), p)
        ch.check_correlation(t)


@pytest.mark.parametrize("mean", [0.0, 0.4, 1.2])
def test_correlation_near_los_steering(mean):
    # kappa = 50 is a ~4 degree spread, nearly a point source for a short array
    geom = ch.ula(2)
    t = ch.correlation_matrix(geom, ch.OneRingParams.with_kappa(mean, 50.0))
    lam, vec = np.linalg.eigh(t)
    assert lam[-1] >= 0.95 * np.trace(t).real
    a = geom.steering(mean)
    assert abs(np.vdot(vec[:, -1], a)) ** 2 / 2 > 0.95


def test_correlation_concentrates_with_kappa():
    geom = ch.ula(8)
    frac = [np.linalg.eigvalsh(ch.correlation_matrix(geom, ch.OneRingParams.with_kappa(0.4, k)))[-1] / 8
            for k in (2, 50, 5000)]
    assert frac[0] < frac[1] < frac[2] and frac[2] > 0.95


def test_correlation_quadrature_converged():
    geom = ch.ula(16)
    p = ch.OneRingParams(0.9, np.deg2rad(20))
    a = ch.correlation_matrix(geom, p, 4096)
    b = ch.correlation_matrix(geom, p, 8192)
    assert np.abs(a - b).max() < 1e-8


def test_effective_rank_decreases_with_kappa():
    geom = ch.ula(32)
    ranks = [ch.effective_rank(ch.correlation_matrix(geom, ch.OneRingParams.with_kappa(0.3, k)))
             for k in (0.5, 2, 10, 50)]
    assert all(a >= b for a, b in zip(ranks, ranks[1:]))
    assert ranks[0] > ranks[-1]


def test_quad_floor():
    with pytest.raises(ValidationError):
        ch.correlation_matrix(ch.ula(16), ch.OneRingParams(0, 0.3), quad_points=64)


def test_custom_geometry():
    geom = ch.ArrayGeometry(3, lambda th: np.outer([0.0, 1.0, 3.0], np.cos(th)))
    t = ch.correlation_matrix(geom, ch.OneRingParams(0.2, 0.4))
    ch.check_correlation(t)


def test_check_correlation_rejects():
    with pytest.raises(ValidationError):
        ch.check_correlation(np.array([[1, 2], [0, 1]], complex))
    with pytest.raises(ValidationError):
        ch.check_correlation(np.array([[1, 2], [2, 1]], complex))
    with pytest.raises(ValidationError):
        ch.check_correlation(2 * np.eye(3))


def test_psd_sqrt(rng):
    a = crandn(rng, 5, 5)
    t = a @ a.conj().T
    r = ch.psd_sqrt(t)
    assert np.allclose(r @ r, t, atol=1e-10)
    with pytest.raises(ValidationError):
        ch.psd_sqrt(-np.eye(2))


def test_truncate_rank():
    t = ch.correlation_matrix(ch.ula(12), ch.OneRingParams(0.1, 0.3))
    low = ch.truncate_rank(t, 3)
    assert np.linalg.matrix_rank(low, tol=1e-9) == 3


# -- fading ------------------------------------------------------------------------

def test_rho_one_freezes():
    s = ch.init_fading(3, 2, 4, 1.0, seed=1)
    assert np.array_equal(ch.advance_fading(s).h_w, s.h_w)


def test_rho_zero_redraws():
    s = ch.init_fading(1000, 1, 10, 0.0, seed=2)
    nxt = ch.advance_fading(s)
    corr = abs(np.mean(nxt.h_w * s.h_w.conj()))
    assert corr < 0.05


def test_ar_lag_autocorrelation():
    rho = 0.9
    s = ch.init_fading(10_000, 1, 1, rho, seed=3)
    first = s.h_w[:, 0, 0].copy()
    for lag in range(1, 4):
        s = ch.advance_fading(s)
        est = np.mean(s.h_w[:, 0, 0] * first.conj()).real
        assert abs(est - rho ** lag) < 0.05


def test_ar_marginal_preserved():
    s = ch.init_fading(200, 1, 4, 0.95, seed=4)
    powers = []
    for _ in range(10_000 // 200 * 2):
        s = ch.advance_fading(s)
        powers.append(np.mean(np.abs(s.h_w) ** 2))
    assert 0.95 <= np.mean(powers) <= 1.05


def test_per_user_streams_independent_of_count():
    a = ch.init_fading(2, 1, 3, 0.5, seed=9)
    b = ch.init_fading(5, 1, 3, 0.5, seed=9)
    assert np.array_equal(a.h_w, b.h_w[:2])


def test_fading_state_validation():
    with pytest.raises(ValidationError):
        ch.FadingState(np.zeros((1, 1, 2)), 1.5, [np.random.default_rng()])
    with pytest.raises(DimensionError):
        ch.FadingState(np.zeros((2, 1, 2)), 0.5, [np.random.default_rng()])


def test_doppler_and_rho():
    fd = ch.doppler_hz(100.0, 2e9)
    assert fd == pytest.approx(100 / 3.6 * 2e9 / 299_792_458.0)
    assert ch.temporal_correlation(fd, 1e-3) == pytest.approx(special.j0(2 * np.pi * fd * 1e-3))


# -- realisations ---------------------------------------------------------------------

def test_identity_realisation(rng):
    hw = crandn(rng, 2, 5)
    assert np.allclose(ch.channel_realization(hw, np.eye(5)), hw)


def test_second_moment(rng):
    t = ch.correlation_matrix(ch.ula(8), ch.OneRingParams(0.5, 0.2))
    n_r, gain, draws = 2, 3.0, 100_000
    hw = ch.complex_normal(rng, (draws, n_r, 8))
    h = ch.channel_realization(hw, t, gain)
    emp = np.einsum("dra,drb->ab", h.conj(), h) / (draws * n_r)
    assert np.linalg.norm(emp - gain * t) / np.linalg.norm(gain * t) < 0.02


def test_rank_bound(rng):
    t = ch.truncate_rank(ch.correlation_matrix(ch.ula(10), ch.OneRingParams(0.0, 0.5)), 2)
    h = ch.channel_realization(crandn(rng, 4, 10), t)
    sv = np.linalg.svd(h, compute_uv=False)
    assert np.sum(sv > 1e-6 * sv[0]) <= 2


def test_realisation_bad_gain(rng):
    with pytest.raises(ValidationError):
        ch.channel_realization(crandn(rng, 1, 2), np.eye(2), 0.0)


# -- topology -------------------------------------------------------------------------

def test_grid_nine_sites():
    sites = ch.grid_sites(9, 500.0)
    assert sites.shape == (9, 2)
    d = np.hypot(*(sites[:, None] - sites[None]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert np.allclose(d.min(axis=1), 500.0)


def test_pathloss_single_link():
    topo = ch.NetworkTopology(np.zeros((1, 2)), np.array([[120.0, 50.0]]), np.array([0]),
                              np.array([[[120.0, 50.0]]]), np.zeros((1, 2)))
    assert topo.raw_gains()[0, 0] == pytest.approx(130.0 ** -2.6, rel=1e-12)
    assert topo.gains()[0, 0] == pytest.approx(1.0)


def test_build_counts_and_gains():
    topo = ch.build_network(4, 2, 3, seed=5)
    assert topo.n_cells == 4 and topo.n_clusters == 8 and topo.users_per_cluster == 3
    assert np.all(topo.gains() > 0)
    direct = topo.gains()[np.arange(8), topo.cluster_cell]
    assert direct.min() == pytest.approx(1.0)


def test_topology_determinism_and_roundtrip():
    a = ch.build_network(3, 1, 2, seed=11, speed_mps=5.0)
    b = ch.build_network(3, 1, 2, seed=11, speed_mps=5.0)
    assert a.to_json() == b.to_json()
    back = ch.NetworkTopology.from_dict(json.loads(a.to_json()))
    assert back.to_json() == a.to_json()


def test_advance_static():
    topo = ch.build_network(3, 1, 2, seed=1)
    assert ch.advance_topology(topo, 10.0).to_json() == topo.to_json()


def test_advance_displacement():
    topo = ch.build_network(3, 2, 2, seed=1, speed_mps=7.0)
    moved = ch.advance_topology(topo, 0.3)
    disp = np.hypot(*(moved.cluster_centers - topo.cluster_centers).T)
    assert np.allclose(disp, 7.0 * 0.3, rtol=0, atol=1e-12)
    d = moved.cluster_centers[:, None] - moved.bs_positions[None]
    assert np.allclose(moved.mean_aods(), np.arctan2(d[..., 1], d[..., 0]), atol=1e-12)


def test_advance_clamps_near_site(caplog):
    topo = ch.NetworkTopology(np.zeros((1, 2)), np.array([[5.0, 0.0]]), np.array([0]),
                              np.array([[[5.0, 0.0]]]), np.array([[-1.0, 0.0]]))
    moved = ch.advance_topology(topo, 4.5)
    assert moved.distances()[0, 0] == pytest.approx(1.0)
    assert "clamping" in caplog.text


def test_build_rejects_bad_counts():
    with pytest.raises(ValidationError):
        ch.build_network(0, 1, 1)


def test_correlation_set_shape():
    topo = ch.build_network(2, 1, 2, seed=3)
    corr = ch.correlation_set(topo, ch.ula(6), 0.3)
    assert corr.shape == (2, 2, 6, 6)
    for c in range(2):
        for l in range(2):
            ch.check_correlation(corr[c, l])
