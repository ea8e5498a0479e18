import numpy as np
import pytest

from conftest import crandn
from twotier import channel as ch
from twotier import manifold as mf
from twotier import precoder as pc
from twotier.covariance import network_q
from twotier.errors import DimensionError, SingularityError, ValidationError
from twotier.sim import user_rates
from twotier.tracker import oracle_outer_precoder


def test_stream_allocation():
    assert pc.stream_allocation(2, 8, 2) == 2
    assert pc.stream_allocation(4, 6, 2) == 3
    with pytest.raises(ValidationError):
        pc.stream_allocation(1, 2, 3)


# -- receivers --------------------------------------------------------------------

def test_receiver_scalar(rng):
    u = pc.receiver_shaping(crandn(rng, 1, 6), mf.random_point(6, 2, rng), [], 1.0, 1)
    assert u.shape == (1, 1) and u[0, 0] == 1


def test_receiver_no_cross_is_dominant(rng):
    h = crandn(rng, 3, 8)
    phi = mf.random_point(8, 3, rng)
    u = pc.receiver_shaping(h, phi, [], 0.5, 1)
    top = np.linalg.svd(h @ phi)[0][:, :1]
    assert abs(abs(np.vdot(u[:, 0], top[:, 0])) - 1) < 1e-10


def test_receiver_beats_random_directions(rng):
    h, phi = crandn(rng, 2, 6), mf.random_point(6, 2, rng)
    cross = [(crandn(rng, 2, 6), mf.random_point(6, 2, rng)) for _ in range(2)]
    w = 0.3
    r = -w * (h @ phi) @ (h @ phi).conj().T + sum((x @ p) @ (x @ p).conj().T for x, p in cross)
    u = pc.receiver_shaping(h, phi, cross, w, 1)
    best = np.real(np.vdot(u[:, 0], r @ u[:, 0]))
    v = crandn(rng, 2, 10_000)
    v /= np.linalg.norm(v, axis=0)
    vals = np.real(np.sum(v.conj() * (r @ v), axis=0))
    assert best <= vals.min() + 1e-12


def test_receiver_orthonormal_and_bounds(rng):
    u = pc.receiver_shaping(crandn(rng, 4, 8), mf.random_point(8, 4, rng), [], 1.0, 3)
    assert np.allclose(u.conj().T @ u, np.eye(3), atol=1e-12)
    with pytest.raises(DimensionError):
        pc.receiver_shaping(crandn(rng, 2, 8), mf.random_point(8, 2, rng), [], 1.0, 3)


def test_receiver_tie_break_deterministic():
    h = np.zeros((2, 4), dtype=complex)
    u = pc.receiver_shaping(h, np.eye(4)[:, :2].astype(complex), [], 1.0, 1)
    assert np.allclose(np.abs(u[:, 0]), [1, 0])


# -- inner ZF ----------------------------------------------------------------------

def test_inner_zf_orthonormal_rows(rng):
    q, _ = np.linalg.qr(crandn(rng, 5, 2))
    rows = q.conj().T
    p = 3.0
    assert np.allclose(pc.inner_zf(rows, p), np.sqrt(p / 2) * rows.conj().T, atol=1e-12)


def test_inner_zf_closed_form_2x3(rng):
    h = crandn(rng, 2, 3)
    g = h @ h.conj().T
    inv = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / (g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0])
    ref = h.conj().T @ inv
    ref *= np.sqrt(1.0 / np.linalg.norm(ref) ** 2)
    assert np.allclose(pc.inner_zf(h, 1.0), ref, atol=1e-12)


def test_inner_zf_diagonalizes_and_meets_power(rng):
    for _ in range(50):
        d, m, n = 3, 5, 12
        h = crandn(rng, d, m)
        phi = mf.random_point(n, m, rng)
        f = pc.inner_zf(h, 4.0, phi)
        hf = h @ f
        c = hf[0, 0].real
        assert c > 0 and np.allclose(hf, c * np.eye(d), atol=1e-10 * c)
        assert np.linalg.norm(phi @ f) ** 2 == pytest.approx(4.0, rel=1e-8)


def test_inner_zf_rank_deficient(rng):
    h = crandn(rng, 1, 4)
    with pytest.raises(SingularityError):
        pc.inner_zf(np.vstack([h, 2 * h]), 1.0)
    with pytest.raises(SingularityError):
        pc.inner_zf(crandn(rng, 4, 3), 1.0)


# -- bundles -------------------------------------------------------------------

def random_network(rng, g=3, k=2, n_r=2, n_t=16):
    h = crandn(rng, g * k, g, n_r, n_t)
    serving = np.repeat(np.arange(g), k)
    return h, serving


def test_two_tier_intra_cell_nulling_and_power(rng):
    h, serving = random_network(rng)
    outer = [mf.random_point(16, 4, rng) for _ in range(3)]
    b = pc.two_tier_bundle(h, outer, serving, 2.0, 0.1, 2)
    for cell in range(3):
        users = np.flatnonzero(serving == cell)
        v = b.precoders[cell]
        assert np.linalg.norm(v) ** 2 == pytest.approx(2.0, rel=1e-8)
        assert np.allclose(b.outer[cell] @ b.inner[cell], v)
        for i, u in enumerate(users):
            for j in range(len(users)):
                if j != i:
                    blk = v[:, 2 * j:2 * j + 2]
                    assert np.linalg.norm(b.receivers[u].conj().T @ h[u, cell] @ blk) < 1e-9 * np.linalg.norm(blk)
    assert b.feedback_complex == 6 * 2 * 4


def test_receiver_unitary_invariance(rng):
    h, serving = random_network(rng)
    outer = [mf.random_point(16, 4, rng) for _ in range(3)]
    b = pc.two_tier_bundle(h, outer, serving, 10.0, 0.1, 2)
    r0 = user_rates(h, b)
    b.receivers = [u @ np.linalg.qr(crandn(rng, 2, 2))[0] for u in b.receivers]
    assert np.allclose(user_rates(h, b), r0, atol=1e-10)


def test_one_tier_single_cell_reduction(rng):
    h, serving = random_network(rng, g=1, k=3, n_r=1, n_t=8)
    b = pc.one_tier_zf(h, serving, 2.0)
    stacked = np.vstack([h[u, 0] for u in range(3)])
    assert np.allclose(b.precoders[0], pc.inner_zf(stacked, 2.0, np.eye(8)), atol=1e-12)


def test_one_tier_genie_nulls_everything(rng):
    h, serving = random_network(rng, n_r=2)
    b = pc.one_tier_zf(h, serving, 1.0)
    for l, v in enumerate(b.precoders):
        assert np.linalg.norm(v) ** 2 == pytest.approx(1.0, rel=1e-8)
        own = np.flatnonzero(serving == l)
        for u in range(len(serving)):
            leak = b.receivers[u].conj().T @ h[u, l] @ v
            if u in own:
                k = list(own).index(u)
                leak = np.delete(leak, k, axis=1)
            assert np.linalg.norm(leak) ** 2 < 1e-9


def test_one_tier_latency_grows(rng):
    rho = 0.99
    leaks = {1: [], 5: [], 10: []}
    for _ in range(50):
        h0, serving = random_network(rng, n_r=1)
        b = pc.one_tier_zf(h0, serving, 1.0)
        noise = crandn(rng, *h0.shape)
        for lat in leaks:
            a = rho ** lat
            h = a * h0 + np.sqrt(1 - a * a) * noise
            total = 0.0
            for l, v in enumerate(b.precoders):
                for u in range(len(serving)):
                    if serving[u] != l:
                        total += np.linalg.norm(h[u, l] @ v) ** 2
            leaks[lat].append(total)
    m = {k: np.mean(v) for k, v in leaks.items()}
    assert 0 < m[1] < m[5] < m[10]


def test_one_tier_too_many_streams(rng):
    h, serving = random_network(rng, g=3, k=3, n_r=1, n_t=8)
    with pytest.raises(SingularityError):
        pc.one_tier_zf(h, serving, 1.0)


def test_one_tier_beats_two_tier_most_draws(rng):
    p = 10.0
    wins = 0
    for seed in range(30):
        topo = ch.build_network(3, 1, 2, seed=seed)
        corr = ch.correlation_set(topo, ch.ula(16), np.deg2rad(10.0))
        gains = topo.gains()
        q = network_q(corr, gains, topo.cluster_cell, 2, 1, 1.0)
        outer, _ = oracle_outer_precoder(q, 4)
        r = np.random.default_rng(seed)
        h_w = crandn(r, 6, 1, 16)
        users = np.repeat(np.arange(3), 2)
        roots = np.array([[ch.psd_sqrt(corr[c, l]) for l in range(3)] for c in range(3)])
        h = np.sqrt(gains[users])[:, :, None, None] * np.einsum("urt,ults->ulrs", h_w, roots[users])
        serving = topo.cluster_cell[users]
        one = user_rates(h, pc.one_tier_zf(h, serving, p))
        two = user_rates(h, pc.two_tier_bundle(h, outer, serving, p, 1.0, 1))
        wins += np.sum(one >= two)
    assert wins >= 0.9 * 30 * 6


# -- alignment -------------------------------------------------------------------

def test_alignment_orthogonal_supports():
    n = 8
    basis = np.eye(n, dtype=complex)
    sup = [basis[:, :3], basis[:, 3:6]]
    corr = np.empty((2, 2, n, n), dtype=complex)
    for c in range(2):
        for l in range(2):
            corr[c, l] = sup[c] @ sup[c].conj().T
    leak, rank = pc.alignment_check(sup, corr, np.array([0, 1]))
    assert np.nanmax(leak) == 0 and list(rank) == [3, 3]
    assert np.isnan(leak[0, 0]) and np.isnan(leak[1, 1])


def test_alignment_random_leaks(rng):
    t = ch.correlation_matrix(ch.ula(8), ch.OneRingParams(0.3, 0.4))
    corr = np.stack([np.stack([t, t]), np.stack([t, t])])
    leak, _ = pc.alignment_check([mf.random_point(8, 2, rng)] * 2, corr, np.array([0, 1]))
    assert leak[0, 1] > 0 and leak[1, 0] > 0
