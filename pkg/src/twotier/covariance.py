"""Per-MS channel covariances and the per-BS matrices that drive the outer precoder."""

from dataclasses import dataclass

import numpy as np

from .channel import complex_normal, psd_sqrt
from .errors import ValidationError


@dataclass
class CovarianceProfile:
    """``q_per_bs[b]`` is the Hermitian (possibly indefinite) matrix of BS ``b``."""

    q_per_bs: list
    weight: float
    superframe_index: int = 0

    def __len__(self):
        return len(self.q_per_bs)

    def __getitem__(self, b):
        return self.q_per_bs[b]


def per_ms_covariance(t, gain, n_r, mode="exact", n_samples=None, rng=None):
    """``E[H^H H]`` for a link with correlation ``t`` and pathloss ``gain``.

    ``mode="exact"`` returns ``n_r * gain * t``; ``mode="sampled"`` averages
    ``H^H H`` over ``n_samples`` independent fading draws.
    """
    t = np.asarray(t)
    if mode == "exact":
        return n_r * gain * t
    if mode != "sampled":
        raise ValidationError(f"unknown covariance mode {mode!r}")
    if not n_samples:
        raise ValidationError("sampled mode needs n_samples >= 1")
    rng = np.random.default_rng() if rng is None else rng
    root = psd_sqrt(t)
    n_t = t.shape[0]
    acc = np.zeros((n_t, n_t), dtype=complex)
    # batches keep memory bounded for large n_samples
    remaining = n_samples
    while remaining:
        batch = min(remaining, 4096)
        hw = complex_normal(rng, (batch * n_r, n_t))
        h = hw @ root
        acc += h.conj().T @ h
        remaining -= batch
    acc *= gain / n_samples
    return 0.5 * (acc + acc.conj().T)


def assemble_q(per_ms, w, n_cells, users_per_cell, superframe_index=0):
    """Combine per-MS covariances into one matrix per BS.

    ``per_ms[(l, k, b)]`` is ``E[H^H H]`` of the link from BS ``b`` to user
    ``k`` of cell ``l``.  For each ``b``::

        Q[b] = sum_{l != b, k} per_ms[(l, k, b)] - w * sum_k per_ms[(b, k, b)]
    """
    if w < 0:
        raise ValidationError(f"weight must be nonnegative, got {w}")
    if np.isscalar(users_per_cell):
        users_per_cell = [int(users_per_cell)] * n_cells
    q = []
    for b in range(n_cells):
        acc = None
        for l in range(n_cells):
            coef = -w if l == b else 1.0
            for k in range(users_per_cell[l]):
                try:
                    term = per_ms[(l, k, b)]
                except KeyError:
                    raise ValidationError(f"missing covariance for link (b={b}, l={l}, k={k})") from None
                acc = coef * term if acc is None else acc + coef * term
        q.append(0.5 * (acc + acc.conj().T))
    return CovarianceProfile(q, float(w), superframe_index)


def network_q(corr, gains, cluster_cell, users_per_cluster, n_r, w, superframe_index=0):
    """Exact-mode ``Q`` for a clustered topology.

    ``corr[c, b]`` and ``gains[c, b]`` describe the link from BS ``b`` to
    cluster ``c``; every user in a cluster shares them.
    """
    n_clusters, n_cells = gains.shape
    q = []
    for b in range(n_cells):
        acc = np.zeros(corr.shape[2:], dtype=complex)
        for c in range(n_clusters):
            coef = -w if cluster_cell[c] == b else 1.0
            acc += (coef * users_per_cluster * n_r * gains[c, b]) * corr[c, b]
        q.append(0.5 * (acc + acc.conj().T))
    return CovarianceProfile(q, float(w), superframe_index)
