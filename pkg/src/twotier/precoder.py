"""Short-timescale processing: receivers, effective channels and ZF precoders.

Channel arrays follow one layout throughout: ``h[u, l]`` is the
``(n_r, n_t)`` channel from BS ``l`` to user ``u`` and ``serving[u]`` is the
cell that serves user ``u``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SingularityError, ValidationError

ROW_RANK_TOL = 1e-10


@dataclass
class PrecoderBundle:
    """Everything needed to evaluate one subframe's rates.

    ``precoders[l]`` is BS ``l``'s full ``(n_t, d_l)`` precoder with columns
    ordered by served user; for two-tier schemes it equals ``outer[l] @ inner[l]``.
    """

    precoders: list
    receivers: list
    streams: np.ndarray
    serving: np.ndarray
    power_budget: float
    outer: list = None
    inner: list = None
    feedback_complex: int = 0

    def stream_owner(self):
        """User index of every network stream, in BS then user order."""
        owners = []
        for l in range(len(self.precoders)):
            for u in np.flatnonzero(self.serving == l):
                owners.extend([u] * int(self.streams[u]))
        return np.array(owners, dtype=int)


def stream_allocation(n_r, m, users_in_cell):
    """Uniform streams per user: ``min(n_r, m // K_b)``."""
    d = min(n_r, m // users_in_cell)
    if d < 1:
        raise ValidationError(f"outer dimension m={m} cannot carry one stream for each of {users_in_cell} users")
    return d


def receiver_shaping(h_direct, phi_direct, cross, w, d):
    """Receive filter for one user.

    Returns the ``d`` eigenvectors with smallest eigenvalues of::

        sum_{(h, phi) in cross} (h phi)(h phi)^H - w (h_direct phi_direct)(h_direct phi_direct)^H

    Ties keep the eigensolver's ascending order.
    """
    n_r = h_direct.shape[0]
    if d > n_r:
        raise DimensionError(f"d={d} streams exceed n_r={n_r}")
    if n_r == 1:
        return np.ones((1, 1), dtype=complex)
    s = h_direct @ phi_direct
    r = -w * (s @ s.conj().T)
    for h, phi in cross:
        x = h @ phi
        r = r + x @ x.conj().T
    _, v = np.linalg.eigh(0.5 * (r + r.conj().T))
    return v[:, :d]


def effective_channel(u_rx, h, phi):
    """``U^H H phi``, the low-dimensional channel a user feeds back."""
    return u_rx.conj().T @ h @ phi


def _check_row_rank(h, what):
    sv = np.linalg.svd(h, compute_uv=False)
    if sv.size == 0 or sv[-1] <= ROW_RANK_TOL * sv[0]:
        raise SingularityError(f"{what} is row-rank deficient (singular values {sv[-1]:.3e} / {sv[0]:.3e})",
                               column=int(np.argmin(sv)) if sv.size else None)


def zf_direction(h):
    """Right pseudo-inverse ``h^H (h h^H)^-1`` of a full-row-rank matrix."""
    return h.conj().T @ np.linalg.inv(h @ h.conj().T)


def inner_zf(stacked, p, outer=None):
    """Inner ZF precoder ``F`` for one cell.

    Starts from ``sqrt(p / d) * pinv(stacked)`` and rescales so that the
    radiated power ``||outer @ F||_F^2`` equals ``p`` (``outer`` orthonormal
    means this is ``||F||_F^2``).
    """
    stacked = np.asarray(stacked)
    if stacked.shape[0] > stacked.shape[1]:
        raise SingularityError(f"{stacked.shape[0]} streams exceed outer dimension {stacked.shape[1]}")
    _check_row_rank(stacked, "stacked effective channel")
    d = stacked.shape[0]
    f = np.sqrt(p / d) * zf_direction(stacked)
    radiated = np.linalg.norm(f if outer is None else outer @ f) ** 2
    if radiated > 0:
        f = f * np.sqrt(p / radiated)
    return f


def two_tier_bundle(h, outer, serving, p, w, d):
    """Receivers, feedback and inner ZF for every cell given outer precoders."""
    n_users, n_cells = h.shape[:2]
    receivers = []
    for u in range(n_users):
        b = serving[u]
        cross = [(h[u, l], outer[l]) for l in range(n_cells) if l != b]
        receivers.append(receiver_shaping(h[u, b], outer[b], cross, w, d))
    inner, precoders, feedback = [], [], 0
    for b in range(n_cells):
        users = np.flatnonzero(serving == b)
        blocks = [effective_channel(receivers[u], h[u, b], outer[b]) for u in users]
        feedback += sum(x.size for x in blocks)
        f = inner_zf(np.vstack(blocks), p, outer[b])
        inner.append(f)
        precoders.append(outer[b] @ f)
    streams = np.full(n_users, d, dtype=int)
    return PrecoderBundle(precoders, receivers, streams, np.asarray(serving), p, list(outer), inner, feedback)


def dominant_receivers(h, serving, d):
    """Dominant left singular vectors of each user's direct channel."""
    out = []
    for u in range(h.shape[0]):
        if h.shape[2] == 1:
            out.append(np.ones((1, 1), dtype=complex))
            continue
        uu, _, _ = np.linalg.svd(h[u, serving[u]])
        out.append(uu[:, :d])
    return out


def one_tier_zf(h_stale, serving, p, d=1):
    """Coordinated ZF with global CSI (possibly outdated).

    Every BS inverts the network-wide stack of receiver-projected channels it
    sees and keeps the columns of its own users, so it nulls both intra- and
    inter-cell interference for the CSI it was given.
    """
    n_users, n_cells, _, n_t = h_stale.shape
    receivers = dominant_receivers(h_stale, serving, d)
    total = d * n_users
    if total > n_t:
        raise SingularityError(f"{total} network streams exceed n_t={n_t}")
    precoders = []
    for l in range(n_cells):
        rows = np.vstack([receivers[u].conj().T @ h_stale[u, l] for u in range(n_users)])
        _check_row_rank(rows, f"network channel seen by BS {l}")
        pinv = zf_direction(rows)
        cols = np.concatenate([np.arange(u * d, (u + 1) * d) for u in np.flatnonzero(serving == l)])
        v = pinv[:, cols]
        norm = np.linalg.norm(v)
        precoders.append(v * (np.sqrt(p) / norm) if norm > 0 else v)
    streams = np.full(n_users, d, dtype=int)
    return PrecoderBundle(precoders, receivers, streams, np.asarray(serving), p,
                          feedback_complex=n_users * d * n_t * n_cells)


def alignment_check(outer, corr, cluster_cell, rank_tol=1e-6):
    """Leakage and direct rank of outer precoders against correlation supports.

    ``corr[c, l]`` is the correlation from BS ``l`` to cluster ``c``.  Returns
    ``(leakage, direct_rank)`` where ``leakage[c, l] = ||corr[c, l] @ outer[l]||_F``
    for ``l`` not serving ``c`` (NaN otherwise) and ``direct_rank[c]`` is the
    numerical rank of ``corr[c, b] @ outer[b]`` for the serving ``b``.
    """
    n_clusters, n_cells = corr.shape[:2]
    leakage = np.full((n_clusters, n_cells), np.nan)
    direct_rank = np.zeros(n_clusters, dtype=int)
    for c in range(n_clusters):
        b = cluster_cell[c]
        for l in range(n_cells):
            if l == b:
                sv = np.linalg.svd(corr[c, b] @ outer[b], compute_uv=False)
                direct_rank[c] = int(np.sum(sv > rank_tol * sv[0])) if sv[0] > 0 else 0
            else:
                leakage[c, l] = np.linalg.norm(corr[c, l] @ outer[l])
    return leakage, direct_rank
