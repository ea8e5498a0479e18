"""Hot numerical kernels with numpy and numba implementations.

``cg_shifted`` and ``tin_rates`` dispatch to the compiled versions when
:data:`twotier._accel.USE_NUMBA` is true.  Both implementations are importable
directly (``*_numpy`` / ``*_numba``) so they can be compared.
"""

import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# CG for the shifted compensation systems
#
#   (G - beta_i P) y_i + rhs_i = 0,   i = 1..m,   P = I - phi phi^H
#
# G = P Q P is Hermitian and maps into range(P), so with tangent right-hand
# sides every iterate stays tangent and the operator is Hermitian there.
# "hermitian" runs plain CG, which also works for the indefinite shifts met
# far from the optimum and only stops a column when the curvature p^H A p
# vanishes; "normal" runs CG on the normal equations, slower but with a
# monotone residual.
# ---------------------------------------------------------------------------

CG_METHODS = ("hermitian", "normal")
BREAKDOWN = 1e-14
CONVERGED = 1e-13


def _shifted_apply(g, phi, betas, x):
    px = x - phi @ (phi.conj().T @ x)
    return g @ x - px * betas[np.newaxis, :]


def _safe_div(num, den, active):
    return np.where(active, num / np.where(active, den, 1.0), 0.0)


def _cg_hermitian_numpy(g, phi, betas, rhs, n_steps):
    n, m = rhs.shape
    y = np.zeros((n, m), dtype=np.complex128)
    r = -rhs.astype(np.complex128)
    p = r.copy()
    rr = np.sum(np.abs(r) ** 2, axis=0)
    stop = (CONVERGED ** 2) * rr
    alive = rr > 0
    for _ in range(n_steps):
        q = _shifted_apply(g, phi, betas, p)
        curv = np.real(np.sum(p.conj() * q, axis=0))
        scale = np.sqrt(np.sum(np.abs(p) ** 2, axis=0) * np.sum(np.abs(q) ** 2, axis=0))
        alive &= np.abs(curv) > BREAKDOWN * scale
        alpha = _safe_div(rr, curv, alive)
        y += p * alpha
        r -= q * alpha
        # keep the residual tangent; round-off along phi is invisible to the operator
        r -= phi @ (phi.conj().T @ r)
        rr_new = np.sum(np.abs(r) ** 2, axis=0)
        alive &= rr_new > stop
        p = r + p * _safe_div(rr_new, rr, alive)
        rr = np.where(alive, rr_new, rr)
    return y


def _cg_normal_numpy(g, phi, betas, rhs, n_steps):
    n, m = rhs.shape
    y = np.zeros((n, m), dtype=np.complex128)
    r = -rhs.astype(np.complex128)
    s = _shifted_apply(g, phi, betas, r)
    p = s.copy()
    gamma = np.sum(np.abs(s) ** 2, axis=0)
    stop = (CONVERGED ** 2) * np.sum(np.abs(r) ** 2, axis=0)
    for _ in range(n_steps):
        q = _shifted_apply(g, phi, betas, p)
        qq = np.sum(np.abs(q) ** 2, axis=0)
        active = (qq > 0) & (gamma > 0) & (np.sum(np.abs(r) ** 2, axis=0) > stop)
        alpha = _safe_div(gamma, qq, active)
        y += p * alpha
        r -= q * alpha
        s = _shifted_apply(g, phi, betas, r)
        gamma_new = np.sum(np.abs(s) ** 2, axis=0)
        p = s + p * _safe_div(gamma_new, gamma, active)
        gamma = gamma_new
    return y


def cg_shifted_numpy(g, phi, betas, rhs, n_steps, normal=False):
    """Vectorised CG over all columns. Returns ``(y, residual_norms)``."""
    solve = _cg_normal_numpy if normal else _cg_hermitian_numpy
    y = solve(g, phi, betas, rhs, n_steps)
    res = _shifted_apply(g, phi, betas, y) + rhs
    return y, np.sqrt(np.sum(np.abs(res) ** 2, axis=0))


@njit(cache=True)
def _apply_col_nb(g, phi, beta, x, out):
    n, m = phi.shape
    coef = np.zeros(m, dtype=np.complex128)
    for k in range(m):
        acc = 0j
        for a in range(n):
            acc += np.conj(phi[a, k]) * x[a]
        coef[k] = acc
    for a in range(n):
        acc = 0j
        for b in range(n):
            acc += g[a, b] * x[b]
        px = x[a]
        for k in range(m):
            px -= phi[a, k] * coef[k]
        out[a] = acc - beta * px


@njit(cache=True)
def _project_nb(phi, x):
    n, m = phi.shape
    for k in range(m):
        acc = 0j
        for a in range(n):
            acc += np.conj(phi[a, k]) * x[a]
        for a in range(n):
            x[a] -= phi[a, k] * acc


@njit(cache=True)
def _sq_norm_nb(x):
    acc = 0.0
    for a in range(x.shape[0]):
        acc += x[a].real ** 2 + x[a].imag ** 2
    return acc


@njit(cache=True)
def cg_shifted_numba(g, phi, betas, rhs, n_steps, normal=False):
    n, m = rhs.shape
    y = np.zeros((n, m), dtype=np.complex128)
    res = np.zeros(m)
    r = np.empty(n, dtype=np.complex128)
    s = np.empty(n, dtype=np.complex128)
    p = np.empty(n, dtype=np.complex128)
    q = np.empty(n, dtype=np.complex128)
    for i in range(m):
        beta = betas[i]
        for a in range(n):
            r[a] = -rhs[a, i]
        if normal:
            _apply_col_nb(g, phi, beta, r, s)
        else:
            s[:] = r
        p[:] = s
        gamma = _sq_norm_nb(s)
        stop = CONVERGED ** 2 * _sq_norm_nb(r)
        for _ in range(n_steps):
            if gamma <= 0.0 or _sq_norm_nb(r) <= stop:
                break
            _apply_col_nb(g, phi, beta, p, q)
            if normal:
                den = _sq_norm_nb(q)
                if not den > 0.0:
                    break
            else:
                den = 0.0
                for a in range(n):
                    den += (np.conj(p[a]) * q[a]).real
                if not abs(den) > BREAKDOWN * np.sqrt(_sq_norm_nb(p) * _sq_norm_nb(q)):
                    break
            alpha = gamma / den
            for a in range(n):
                y[a, i] += alpha * p[a]
                r[a] -= alpha * q[a]
            if normal:
                _apply_col_nb(g, phi, beta, r, s)
            else:
                _project_nb(phi, r)
                s[:] = r
            gamma_new = _sq_norm_nb(s)
            ratio = gamma_new / gamma
            for a in range(n):
                p[a] = s[a] + ratio * p[a]
            gamma = gamma_new
        _apply_col_nb(g, phi, beta, y[:, i].copy(), q)
        acc = 0.0
        for a in range(n):
            d = q[a] + rhs[a, i]
            acc += d.real ** 2 + d.imag ** 2
        res[i] = np.sqrt(acc)
    return y, res


def cg_shifted(g, phi, betas, rhs, n_steps, method="hermitian"):
    """Solve ``(G - beta_i P) y_i + rhs_i = 0`` for every column with ``n_steps`` CG steps.

    Returns ``(y, residual_norms)`` where the residuals are recomputed from ``y``.
    """
    if method not in CG_METHODS:
        raise ValueError(f"unknown CG method {method!r}; choose from {CG_METHODS}")
    g = np.ascontiguousarray(g, dtype=np.complex128)
    phi = np.ascontiguousarray(phi, dtype=np.complex128)
    betas = np.ascontiguousarray(betas, dtype=np.float64)
    rhs = np.ascontiguousarray(rhs, dtype=np.complex128)
    normal = method == "normal"
    if _accel.USE_NUMBA:
        return cg_shifted_numba(g, phi, betas, rhs, int(n_steps), normal)
    return cg_shifted_numpy(g, phi, betas, rhs, int(n_steps), normal)


# ---------------------------------------------------------------------------
# Treat-interference-as-noise rates
#
# gains[u, :, s] = U_u^H H_{u, bs(s)} v_s for every stream s in the network,
# own[u, s] marks the streams intended for user u.
# ---------------------------------------------------------------------------


def tin_rates_numpy(gains, own, noise):
    n_users, d, _ = gains.shape
    eye = np.eye(d)
    total = gains @ gains.conj().transpose(0, 2, 1)
    masked = gains * own[:, np.newaxis, :]
    signal = masked @ masked.conj().transpose(0, 2, 1)
    total = total + noise[:, np.newaxis, np.newaxis] * eye
    interf = total - signal
    _, ld_total = np.linalg.slogdet(total)
    _, ld_interf = np.linalg.slogdet(interf)
    return (ld_total - ld_interf) / np.log(2.0)


@njit(cache=True)
def tin_rates_numba(gains, own, noise):
    n_users, d, n_streams = gains.shape
    out = np.zeros(n_users)
    total = np.empty((d, d), dtype=np.complex128)
    interf = np.empty((d, d), dtype=np.complex128)
    for u in range(n_users):
        for a in range(d):
            for b in range(d):
                acc_t = 0j
                acc_i = 0j
                for s in range(n_streams):
                    term = gains[u, a, s] * np.conj(gains[u, b, s])
                    acc_t += term
                    if not own[u, s]:
                        acc_i += term
                total[a, b] = acc_t
                interf[a, b] = acc_i
            total[a, a] += noise[u]
            interf[a, a] += noise[u]
        _, ld_t = np.linalg.slogdet(total)
        _, ld_i = np.linalg.slogdet(interf)
        out[u] = (ld_t - ld_i) / np.log(2.0)
    return out


def tin_rates(gains, own, noise):
    """Per-user log-det rates (bits/s/Hz) under treat-interference-as-noise."""
    gains = np.ascontiguousarray(gains, dtype=np.complex128)
    own = np.ascontiguousarray(own, dtype=np.bool_)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    if _accel.USE_NUMBA:
        return tin_rates_numba(gains, own, noise)
    return tin_rates_numpy(gains, own, noise)
