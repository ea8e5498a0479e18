"""Acceptance checks shared by the test-suite and ``twotier check``.

Each ``criterion_*`` function runs one check end to end and returns a
:class:`CriterionResult`; none of them raise on a failed tolerance.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy import linalg as sla
from scipy import stats

from . import channel as ch
from . import covariance as cv
from . import manifold as mf
from . import precoder as pc
from . import tracker as tr
from .config import SimConfig
from .counters import count_complexity, count_feedback
from .sim import run_simulation, scheme_labels


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number, name, limit=None):
    """Decorator filling in ``seconds`` and enforcing an optional runtime limit."""

    def wrap(func):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            passed, detail = func(*args, **kwargs)
            dt = time.perf_counter() - t0
            if limit is not None:
                detail = f"{detail}; runtime {dt:.1f}s (limit {limit:g}s)"
                passed = passed and dt < limit
            return CriterionResult(number, name, bool(passed), detail, dt)

        run.number = number
        run.__name__ = func.__name__
        run.__doc__ = func.__doc__
        return run

    return wrap


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def haar_unitary(rng, n):
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def gapped_hermitian(rng, n, m, rel_gap):
    """Random Hermitian matrix with ``lambda_(m+1) - lambda_m >= rel_gap * ||Q||_2``."""
    while True:
        lam = np.sort(rng.uniform(-1.0, 1.0, n))
        if lam[m] - lam[m - 1] >= rel_gap * np.max(np.abs(lam)):
            u = haar_unitary(rng, n)
            return (u * lam) @ u.conj().T


def _one_sided_t(diff):
    """Paired one-sided t statistic and the 95% critical value."""
    diff = np.asarray(diff, dtype=float)
    n = diff.size
    se = diff.std(ddof=1) / np.sqrt(n)
    t = diff.mean() / se if se > 0 else (np.inf if diff.mean() > 0 else -np.inf)
    return float(t), float(stats.t.ppf(0.95, n - 1))


# ---------------------------------------------------------------------------
# 1-5: tracker and manifold
# ---------------------------------------------------------------------------


@_timed(1, "static global convergence", limit=10.0)
def criterion_static_convergence(trials=50, n_t=16, m=4, iters=500, seed=1):
    rng = np.random.default_rng(seed)
    hits, worst = 0, 0.0
    for _ in range(trials):
        q = gapped_hermitian(rng, n_t, m, 0.1)
        gamma = 0.5 / np.max(np.abs(np.linalg.eigvalsh(q)))
        state = tr.init_state([mf.random_point(n_t, m, rng)], gamma, q_prev=[q])
        for _ in range(iters):
            state = tr.track_superframe(state, [q], tr.COMPENSATED, diagnostics=False)
        dist = mf.subspace_distance(state.phi[0], mf.eigh_smallest(q, m).vectors)
        worst = max(worst, dist)
        hits += dist < 1e-6
    need = trials - 1
    return hits >= need, f"{hits}/{trials} trials below 1e-6 (need {need}), worst distance {worst:.2e}"


def rotating_run(seed, n_cg, mode, cg_method="hermitian", eps=0.01, n_t=16, m=4, n_frames=300, burn_in=100):
    """Time-averaged subspace error while ``Q`` rotates in a random complex plane."""
    rng = np.random.default_rng(seed)
    q0 = random_hermitian(rng, n_t)
    u = mf.random_point(n_t, 2, rng)
    gen = u[:, [1]] @ u[:, [0]].conj().T - u[:, [0]] @ u[:, [1]].conj().T
    step = sla.expm(eps * gen)
    gamma = 0.5 / np.max(np.abs(np.linalg.eigvalsh(q0)))
    rot = np.eye(n_t, dtype=complex)
    q = q0
    state = tr.init_state([mf.eigh_smallest(q0, m).vectors], gamma, n_cg, q_prev=[q0], cg_method=cg_method)
    errs = []
    for n in range(1, n_frames):
        rot = step @ rot
        q = rot @ q0 @ rot.conj().T
        state = tr.track_superframe(state, [q], mode, diagnostics=False)
        if n >= burn_in:
            errs.append(mf.subspace_distance(state.phi[0], mf.eigh_smallest(q, m).vectors))
    return float(np.mean(errs))


@_timed(2, "compensation advantage", limit=30.0)
def criterion_compensation_advantage(seeds=20, n_t=16, m=4, n_cg=None):
    """Exact compensation (CG run to the tangent dimension) against gradient-only."""
    n_cg = n_t if n_cg is None else n_cg
    comp = np.mean([rotating_run(s, n_cg, tr.COMPENSATED, n_t=n_t, m=m) for s in range(seeds)])
    grad = np.mean([rotating_run(s, n_cg, tr.GRADIENT_ONLY, n_t=n_t, m=m) for s in range(seeds)])
    ratio = comp / grad
    # reported, not gated: the default single CG step
    one = np.mean([rotating_run(s, 1, tr.COMPENSATED, n_t=n_t, m=m) for s in range(seeds)]) / grad
    return ratio <= 0.5, (f"n_cg={n_cg}: compensated {comp:.2e} vs gradient-only {grad:.2e}, "
                          f"ratio {ratio:.3g} (need <= 0.5); n_cg=1 ratio {one:.3g}")


@_timed(3, "oracle equivalence")
def criterion_oracle_equivalence(instances=100, max_n=32, seed=3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, max_n + 1))
        m = int(rng.integers(1, n + 1))
        q = random_hermitian(rng, n)
        (phi,), _ = tr.oracle_outer_precoder([q], m)
        # general (non-Hermitian) solver as an independent reference
        w, v = sla.eig(q)
        idx = np.argsort(w.real)[:m]
        ref, _ = np.linalg.qr(v[:, idx])
        worst = max(worst, mf.subspace_distance(phi, ref))
    return worst < 1e-10, f"worst distance {worst:.2e} over {instances} instances (need < 1e-10)"


def _curve(phi, xi, t):
    return mf.retract_qr(phi + t * xi)


@_timed(4, "gradient and Hessian")
def criterion_derivatives(instances=100, seed=4, h=1e-5):
    rng = np.random.default_rng(seed)
    worst_g = worst_h = 0.0
    for _ in range(instances):
        n = int(rng.integers(3, 17))
        m = int(rng.integers(1, n))
        q = random_hermitian(rng, n)
        phi = mf.random_point(n, m, rng)
        xi = mf.project_tangent(phi, rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m)))
        xi /= np.linalg.norm(xi)
        grad = mf.riemannian_gradient(phi, q)
        # d/dt tr(phi(t)^H Q phi(t)) = 2 Re <xi, grad>
        fd = (mf.objective(_curve(phi, xi, h), q) - mf.objective(_curve(phi, xi, -h), q)) / (2 * h)
        exact = 2.0 * np.real(np.vdot(xi, grad))
        worst_g = max(worst_g, abs(fd - exact) / max(abs(exact), np.linalg.norm(grad)))
        # Hessian: tangent part of the derivative of the gradient field
        gp = mf.riemannian_gradient(_curve(phi, xi, h), q)
        gm = mf.riemannian_gradient(_curve(phi, xi, -h), q)
        fd_h = mf.project_tangent(phi, (gp - gm) / (2 * h))
        hess = mf.hessian_apply(phi, q, xi)
        worst_h = max(worst_h, np.linalg.norm(fd_h - hess) / max(np.linalg.norm(hess), 1e-12))
    ok = worst_g < 1e-4 and worst_h < 1e-4
    return ok, f"worst relative error gradient {worst_g:.1e}, Hessian {worst_h:.1e} (need < 1e-4)"


@_timed(5, "compensation equation residual")
def criterion_compensation_residual(instances=50, n_t=16, m=4, seed=5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        q_prev = random_hermitian(rng, n_t)
        q_now = q_prev + random_hermitian(rng, n_t, 0.01)
        phi = mf.eigh_smallest(q_prev, m).vectors
        _, ws = tr.compensation_step(phi, q_prev, q_now, n_cg=n_t, workspace=True)
        # rebuild the equation from scratch
        proj = np.eye(n_t) - phi @ phi.conj().T
        df = proj @ (q_now - q_prev) @ phi
        beta, mdiag = np.linalg.eigh(phi.conj().T @ q_now @ phi)
        for i in range(m):
            y = ws.y[:, i]
            res = proj @ (q_now @ y - beta[i] * y) + df @ ws.m_diag[:, i]
            worst = max(worst, np.linalg.norm(res))
        worst = max(worst, np.max(np.abs(ws.beta - beta)))
    return worst < 1e-8, f"worst per-column residual {worst:.2e} over {instances} instances (need < 1e-8)"


# ---------------------------------------------------------------------------
# 6-7: counters
# ---------------------------------------------------------------------------

TABLE1 = {
    (24, 8): {"one_tier": (384, 1152), "two_tier": (134, 17)},
    (48, 8): {"one_tier": (768, 2304), "two_tier": (151, 69)},
    (100, 30): {"one_tier": (6000, 18000), "two_tier": (1900, 300)},
}

# published MCMA values, compared at their printed precision
TABLE2 = {24: "0.07", 48: "0.29", 100: "1.3"}


@_timed(6, "feedback table")
def criterion_feedback_table():
    bad = []
    for (n_t, k), want in TABLE1.items():
        cfg = SimConfig(n_t=n_t, k=k, n_r=2, m=k, superframe_len=100, n_superframes=0)
        for key, scheme in (("one_tier", "one_tier"), ("two_tier", "proposed")):
            got = count_feedback(cfg, scheme)
            vals = (round(got.feedback), round(got.signaling))
            if vals != want[key]:
                bad.append(f"({n_t},{k}) {key} {vals} != {want[key]}")
    return not bad, "all 12 cells match" if not bad else "; ".join(bad)


def _as_printed(x, ref):
    decimals = len(ref.split(".")[1]) if "." in ref else 0
    return f"{x:.{decimals}f}"


@_timed(7, "complexity table")
def criterion_complexity_table(m=8):
    bad, ratios = [], []
    for n_t, want in TABLE2.items():
        c = count_complexity(n_t, m, "proposed")
        if _as_printed(c.mcma, want) != want:
            bad.append(f"N_t={n_t}: {c.mcma:.4f} MCMA != {want}")
        ratios.append(c.instrumented / c.formula)
    ok_ratio = all(0.5 <= r <= 2.0 for r in ratios)
    detail = f"instrumented/formula {min(ratios):.2f}..{max(ratios):.2f}"
    if bad:
        detail = "; ".join(bad) + "; " + detail
    return not bad and ok_ratio, detail


# ---------------------------------------------------------------------------
# 8-9: precoder structure
# ---------------------------------------------------------------------------


def symmetric_rank_network(seed, g=3, n_t=16, rank=4, k=4, angular_spread_deg=20.0):
    """One cluster per cell, rank-truncated one-ring correlations, unit gains."""
    topo = ch.build_network(g, 1, k, seed=seed)
    corr = ch.correlation_set(topo, ch.ula(n_t), np.deg2rad(angular_spread_deg))
    corr = np.array([[ch.truncate_rank(corr[c, l], rank) for l in range(g)] for c in range(g)])
    return topo, corr, np.ones((g, g))


@_timed(8, "alignment and direct rank")
def criterion_alignment(seeds=20, w=1e-3, rank=4, k=4, n_t=16):
    good, worst = 0, 0.0
    want_rank = min(rank, k)
    for s in range(seeds):
        topo, corr, gains = symmetric_rank_network(s, n_t=n_t, rank=rank, k=k)
        q = cv.network_q(corr, gains, topo.cluster_cell, k, 1, w)
        outer, _ = tr.oracle_outer_precoder(q, k)
        leak, direct = pc.alignment_check(outer, corr, topo.cluster_cell)
        rel = np.nanmax(leak / np.linalg.norm(corr, axis=(2, 3)))
        worst = max(worst, rel)
        good += rel < 1e-3 and np.all(direct == want_rank)
    need = int(np.ceil(0.95 * seeds))
    return good >= need, (f"{good}/{seeds} topologies with leakage < 1e-3 ||T||_F and rank {want_rank} "
                          f"(need {need}); worst relative leakage {worst:.1e}")


@_timed(9, "ZF nulling")
def criterion_zf_nulling(seeds=10, subframes=5, power=10.0):
    worst_in = worst_one = 0.0
    for s in range(seeds):
        for n_r in (1, 2):
            cfg = SimConfig(g=3, k=2, n_t=16, n_r=n_r, m=4)
            topo = ch.build_network(cfg.g, 1, cfg.k, seed=s)
            corr = ch.correlation_set(topo, ch.ula(cfg.n_t), np.deg2rad(cfg.angular_spread_deg))
            gains = topo.gains()
            q = cv.network_q(corr, gains, topo.cluster_cell, cfg.k, n_r, cfg.w)
            outer, _ = tr.oracle_outer_precoder(q, cfg.m)
            cluster_of_user = np.repeat(np.arange(topo.n_clusters), cfg.k)
            serving = topo.cluster_cell[cluster_of_user]
            d = pc.stream_allocation(n_r, cfg.m, cfg.users_per_cell)
            rng = np.random.default_rng([s, n_r])
            roots = np.array([[ch.psd_sqrt(corr[c, l]) for l in range(cfg.g)] for c in range(cfg.g)])
            for _ in range(subframes):
                hw = ch.complex_normal(rng, (len(serving), n_r, cfg.n_t))
                h = np.sqrt(gains[cluster_of_user])[:, :, None, None] * np.einsum(
                    "urt,ults->ulrs", hw, roots[cluster_of_user])
                two = pc.two_tier_bundle(h, outer, serving, power, cfg.w, d)
                one = pc.one_tier_zf(h, serving, power, d)
                worst_in = max(worst_in, _leak(h, two, same_cell=True))
                worst_one = max(worst_one, _leak(h, one, same_cell=False))
    ok = worst_in < 1e-9 * power and worst_one < 1e-9 * power
    return ok, (f"worst intra-cell leakage {worst_in:.1e}, one-tier inter-cell leakage {worst_one:.1e} "
                f"(need < {1e-9 * power:.0e})")


def _leak(h, bundle, same_cell):
    """Largest received interference power from other users' streams."""
    worst = 0.0
    for u in range(h.shape[0]):
        for l, v in enumerate(bundle.precoders):
            if (l == bundle.serving[u]) != same_cell:
                continue
            users = np.flatnonzero(bundle.serving == l)
            cols = np.repeat(users, bundle.streams[users])
            x = bundle.receivers[u].conj().T @ h[u, l] @ v[:, cols != u]
            worst = max(worst, float(np.sum(np.abs(x) ** 2)))
    return worst


# ---------------------------------------------------------------------------
# 10: end-to-end orderings
# ---------------------------------------------------------------------------

ORDERING_CONFIG = SimConfig(
    g=3, k=2, n_t=16, n_r=1, m=4, w=0.01, angular_spread_deg=5.0,
    superframe_len=100, n_superframes=20, power_dbs=[20.0], speeds_kmh=[10.0, 100.0],
    n_seeds=20, seed=0,
)


def ordering_checks(report, low=10.0, high=100.0):
    """Paired one-sided tests of the scheme orderings; returns ``[(label, ok, text)]``."""
    p_db = report.config["power_dbs"][0]

    def seeds(scheme, speed):
        return np.array(report.lookup(scheme, p_db, speed)["per_seed"])

    out = []
    for a, b in (("oracle", "proposed"), ("proposed", "gradient")):
        t, crit = _one_sided_t(seeds(a, high) - seeds(b, high))
        out.append((f"{a} > {b} @{high:g}km/h", t > crit, f"t={t:.2f}/{crit:.2f}"))
    margins = {}
    for v in (low, high):
        diff = seeds("one_tier_lat0", v) - seeds("one_tier_lat5", v)
        margins[v] = diff
        t, crit = _one_sided_t(diff)
        out.append((f"lat5 < lat0 @{v:g}km/h", t > crit, f"t={t:.2f}/{crit:.2f}"))
    # margin grows with speed (Welch)
    res = stats.ttest_ind(margins[high], margins[low], equal_var=False, alternative="greater")
    out.append(("latency margin grows with speed", res.pvalue < 0.05, f"p={res.pvalue:.1e}"))
    rel = (seeds("proposed", low) - seeds("oracle", low)) / seeds("oracle", low)
    half = stats.t.ppf(0.975, rel.size - 1) * rel.std(ddof=1) / np.sqrt(rel.size)
    lo, hi = rel.mean() - half, rel.mean() + half
    out.append((f"proposed within 3% of oracle @{low:g}km/h", lo >= -0.03 and hi <= 0.03,
                f"95% CI [{100 * lo:.2f}%, {100 * hi:.2f}%]"))
    return out


@_timed(10, "scheme orderings", limit=300.0)
def criterion_orderings(cfg=None):
    cfg = ORDERING_CONFIG if cfg is None else cfg
    missing = {"oracle", "proposed", "gradient", "one_tier_lat0", "one_tier_lat5"} - set(scheme_labels(cfg))
    if missing:
        return False, f"config lacks schemes {sorted(missing)}"
    report = run_simulation(cfg)
    checks = ordering_checks(report, min(cfg.speeds_kmh), max(cfg.speeds_kmh))
    detail = ", ".join(f"{label} {'ok' if ok else 'NOT MET'} ({text})" for label, ok, text in checks)
    return all(ok for _, ok, _ in checks), detail


# ---------------------------------------------------------------------------
# 11: channel model
# ---------------------------------------------------------------------------


@_timed(11, "channel model invariants", limit=60.0)
def criterion_channel(seed=11, n_samples=200_000):
    rng = np.random.default_rng(seed)
    problems = []
    theta = np.linspace(-np.pi, np.pi, 200_001)
    worst_pas = worst_diag = worst_mc = 0.0
    for _ in range(20):
        p = ch.OneRingParams(rng.uniform(-np.pi, np.pi), rng.uniform(0.02, 1.0))
        worst_pas = max(worst_pas, abs(integrate.trapezoid(ch.pas_value(theta, p), theta) - 1.0))
        n_t = int(rng.integers(2, 33))
        t = ch.correlation_matrix(ch.ula(n_t), p)
        worst_diag = max(worst_diag, np.max(np.abs(np.diag(t) - 1.0)))
        lam = np.linalg.eigvalsh(t)
        if lam[0] < -1e-8 * np.trace(t).real / n_t:
            problems.append(f"indefinite T (min eigenvalue {lam[0]:.1e})")
    for _ in range(3):
        p = ch.OneRingParams(rng.uniform(-np.pi, np.pi), rng.uniform(0.05, 0.5))
        t = ch.correlation_matrix(ch.ula(16), p)
        hw = ch.complex_normal(rng, (n_samples, 16))
        h = ch.channel_realization(hw, t)
        sample = h.conj().T @ h / n_samples
        worst_mc = max(worst_mc, np.linalg.norm(sample - t) / np.linalg.norm(t))
    # AR(1) fading keeps unit power and the requested lag-one correlation
    rho = ch.temporal_correlation(ch.doppler_hz(100.0, 2e9), 1e-3)
    state = ch.init_fading(2000, 1, 8, rho, seed)
    nxt = ch.advance_fading(state)
    lag1 = np.mean(nxt.h_w * state.h_w.conj()).real
    power = np.mean(np.abs(nxt.h_w) ** 2)
    if worst_pas > 1e-6:
        problems.append(f"PAS integral off by {worst_pas:.1e}")
    if worst_diag > 1e-6:
        problems.append(f"diagonal off by {worst_diag:.1e}")
    if worst_mc > 0.02:
        problems.append(f"Monte-Carlo covariance off by {100 * worst_mc:.2f}%")
    if abs(lag1 - rho) > 0.02 or abs(power - 1.0) > 0.02:
        problems.append(f"AR fading lag-1 {lag1:.3f} (want {rho:.3f}), power {power:.3f}")
    detail = (f"PAS err {worst_pas:.1e}, diag err {worst_diag:.1e}, MC err {100 * worst_mc:.2f}%, "
              f"AR lag-1 {lag1:.3f}/{rho:.3f}")
    if problems:
        detail += "; " + "; ".join(problems)
    return not problems, detail


CRITERIA = [
    criterion_static_convergence,
    criterion_compensation_advantage,
    criterion_oracle_equivalence,
    criterion_derivatives,
    criterion_compensation_residual,
    criterion_feedback_table,
    criterion_complexity_table,
    criterion_alignment,
    criterion_zf_nulling,
    criterion_orderings,
    criterion_channel,
]


def run_all(only=None, echo=None):
    """Run the selected criteria (all by default); ``echo`` receives each result line."""
    results = []
    for crit in CRITERIA:
        if only and crit.number not in only:
            continue
        res = crit()
        results.append(res)
        if echo is not None:
            echo(res.line())
    return results
