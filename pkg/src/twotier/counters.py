"""Feedback, backhaul-signalling and complexity counters."""

from typing import NamedTuple

import numpy as np

from .manifold import random_point
from .tracker import MacCounter, compensation_step, default_step_size, gradient_step

NEIGHBOR_CELLS = 3
TWO_TIER = ("proposed", "gradient", "oracle")


class FeedbackCount(NamedTuple):
    feedback: float
    signaling: float


def feedback_formula(n_t, n_r, k, t_s, scheme):
    """Average complex numbers per cell per subframe.

    One-tier ZF feeds back the full channel every subframe and shares it with
    three neighbour cells.  Two-tier schemes feed back the full covariance once
    per super-frame plus the small effective channel every subframe.
    """
    if scheme == "one_tier":
        return FeedbackCount(n_t * n_r * k, NEIGHBOR_CELLS * n_t * n_r * k)
    if scheme in TWO_TIER:
        return FeedbackCount(n_t ** 2 / t_s + n_r * k ** 2, NEIGHBOR_CELLS * n_t ** 2 / t_s)
    raise ValueError(f"unknown scheme {scheme!r}")


def count_feedback(cfg, scheme):
    return feedback_formula(cfg.n_t, cfg.n_r, cfg.users_per_cell, cfg.superframe_len, scheme)


def table1_row(n_t, k, n_r=2, t_s=100):
    """One row of the feedback table, rounded to whole complex numbers."""
    one = feedback_formula(n_t, n_r, k, t_s, "one_tier")
    two = feedback_formula(n_t, n_r, k, t_s, "proposed")
    return {
        "one_tier_feedback": round(one.feedback),
        "two_tier_feedback": round(two.feedback),
        "one_tier_signaling": round(one.signaling),
        "two_tier_signaling": round(two.signaling),
    }


class ComplexityCount(NamedTuple):
    formula: float
    instrumented: float = None

    @property
    def mcma(self):
        return self.formula / 1e6


def instrumented_macs(n_t, m, n_cg=1, seed=0):
    """MACs counted while running one compensated super-frame for one BS."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_t, n_t)) + 1j * rng.standard_normal((n_t, n_t))
    q_prev = 0.5 * (a + a.conj().T)
    e = rng.standard_normal((n_t, n_t)) + 1j * rng.standard_normal((n_t, n_t))
    q_now = q_prev + 1e-3 * 0.5 * (e + e.conj().T)
    phi = random_point(n_t, m, rng)
    counter = MacCounter()
    gamma = default_step_size(q_now, counter=counter)
    phi1 = compensation_step(phi, q_prev, q_now, n_cg, counter=counter)
    gradient_step(phi1, q_now, gamma, counter=counter)
    return counter.total


def count_complexity(n_t, m, algorithm="proposed"):
    """Complex MACs per super-frame for one cluster's outer precoder.

    ``proposed`` also reports the count instrumented from the tracker code.
    """
    if algorithm == "proposed":
        return ComplexityCount(16 * m * n_t ** 2, instrumented_macs(n_t, m))
    if algorithm == "svd":
        return ComplexityCount(21 * n_t ** 3)
    if algorithm == "bd":
        return ComplexityCount(21 * n_t ** 3 + 21 * (n_t - m) ** 3)
    raise ValueError(f"unknown algorithm {algorithm!r}")
