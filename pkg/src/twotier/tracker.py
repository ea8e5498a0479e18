"""Outer-precoder tracking on the Grassmann manifold.

Each BS keeps an orthonormal basis ``phi`` that should span the eigenvectors
of its m smallest eigenvalues of ``Q``.  Every super-frame the basis is
moved by one QR-retracted gradient step, optionally preceded by a
compensation step that predicts how far the optimum moved between the
previous and the current covariance.  The compensation solves the linearised
optimality condition column by column with a few CG iterations.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DimensionError, ValidationError
from .manifold import check_hermitian, eigh_smallest, retract_qr, subspace_distance

COMPENSATED = "compensated"
GRADIENT_ONLY = "gradient_only"
MODES = (COMPENSATED, GRADIENT_ONLY)


class MacCounter:
    """Tally of complex multiply-accumulates, split by label."""

    def __init__(self):
        self.by_label = {}

    def add(self, label, n):
        self.by_label[label] = self.by_label.get(label, 0) + int(n)

    @property
    def total(self):
        return sum(self.by_label.values())

    def reset(self):
        self.by_label.clear()


def _count(counter, label, n):
    if counter is not None:
        counter.add(label, n)


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------


class CGResult(NamedTuple):
    x: np.ndarray
    residuals: np.ndarray
    no_progress: bool


def cg_solve(apply_a, b, n_steps, apply_ah=None):
    """``n_steps`` CG iterations on the normal equations of ``A x + b = 0``.

    ``apply_a`` is a matrix or a callable.  For a callable, ``apply_ah``
    applies the adjoint; when omitted the operator is taken to be Hermitian.
    ``residuals[k]`` is ``||A x_k + b||`` after ``k`` iterations and never
    increases.  ``no_progress`` is set when the operator annihilates the
    normal-equation residual before ``b`` is solved (e.g. a zero operator).
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    if isinstance(apply_a, np.ndarray):
        mat = apply_a
        apply_a = lambda v: mat @ v  # noqa: E731
        apply_ah = lambda v: mat.conj().T @ v  # noqa: E731
    elif apply_ah is None:
        apply_ah = apply_a
    b = np.asarray(b, dtype=complex)
    x = np.zeros_like(b)
    r = -b
    s = apply_ah(r)
    p = s.copy()
    gamma = np.vdot(s, s).real
    residuals = [np.linalg.norm(r)]
    tiny = np.finfo(float).tiny
    for _ in range(n_steps):
        if gamma <= tiny:
            break
        q = apply_a(p)
        qq = np.vdot(q, q).real
        if qq <= tiny:
            break
        alpha = gamma / qq
        x = x + alpha * p
        r = r - alpha * q
        s = apply_ah(r)
        gamma_new = np.vdot(s, s).real
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
        residuals.append(np.linalg.norm(r))
    no_progress = residuals[0] > 0 and not np.any(x)
    return CGResult(x, np.array(residuals), bool(no_progress))


def spectral_radius_estimate(q, iters=10, seed=0):
    """Power-method estimate of the spectral radius of Hermitian ``q``."""
    rng = np.random.default_rng(seed)
    n = q.shape[0]
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        u = q @ v
        est = np.linalg.norm(u)
        if est == 0.0:
            return 0.0
        v = u / est
    return float(est)


def default_step_size(q, iters=10, counter=None):
    """``0.5 / rho_hat`` with ``rho_hat`` from a short power iteration."""
    n = q.shape[0]
    _count(counter, "step_size", iters * n * n)
    rho = spectral_radius_estimate(q, iters)
    if rho == 0.0:
        return 1.0
    return 0.5 / rho


# ---------------------------------------------------------------------------
# Outer-precoder updates
# ---------------------------------------------------------------------------


def oracle_outer_precoder(q, m_per_bs):
    """Closed-form optimum: eigenvectors of the ``m_b`` smallest eigenvalues.

    Returns ``(bases, degenerate_flags)``.
    """
    q_list = q.q_per_bs if hasattr(q, "q_per_bs") else list(q)
    if np.isscalar(m_per_bs):
        m_per_bs = [int(m_per_bs)] * len(q_list)
    bases, flags = [], []
    for qb, m in zip(q_list, m_per_bs):
        res = eigh_smallest(qb, m)
        bases.append(res.vectors)
        flags.append(res.degenerate)
    return bases, flags


def gradient_step(phi, q, gamma, counter=None):
    """``qr(phi - gamma * q @ phi)``."""
    n, m = phi.shape
    eta = q @ phi
    _count(counter, "search_direction", m * n * n)
    _count(counter, "retraction", 2 * n * m * m)
    return retract_qr(phi - gamma * eta)


@dataclass
class CompensationWorkspace:
    delta_f: np.ndarray
    m_diag: np.ndarray
    beta: np.ndarray
    y: np.ndarray
    residuals: np.ndarray


def compensation_step(phi_prev, q_prev, q_now, n_cg=1, counter=None, workspace=False, cg_method="hermitian"):
    """Compensated point ``phi_prev + Y M^H`` before retraction.

    ``delta_f`` is the change of the Riemannian gradient at ``phi_prev`` when
    the covariance moves from ``q_prev`` to ``q_now``.  With
    ``phi^H q_now phi = M diag(beta) M^H`` the column ``Y[:, i]`` solves::

        P (q_now - beta_i I) Y[:, i] + (delta_f M)[:, i] = 0

    over tangent vectors, using ``n_cg`` CG iterations from zero (plain CG on
    the Hermitian tangent operator by default, ``cg_method="normal"`` for CG
    on the normal equations).  Set ``workspace=True`` to also get the
    intermediate quantities.
    """
    phi = phi_prev
    n, m = phi.shape
    qn_phi = q_now @ phi
    qp_phi = q_prev @ phi
    _count(counter, "delta_f", 2 * m * n * n)
    reduced = phi.conj().T @ qn_phi
    reduced_prev = phi.conj().T @ qp_phi
    f_now = qn_phi - phi @ reduced
    delta_f = f_now - (qp_phi - phi @ reduced_prev)
    _count(counter, "delta_f", 4 * n * m * m)

    reduced = 0.5 * (reduced + reduced.conj().T)
    try:
        beta, mdiag = np.linalg.eigh(reduced)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh on m x m rarely fails
        raise ValidationError(f"reduced eigendecomposition failed: {exc}") from exc
    _count(counter, "reduced_eig", m ** 3)

    # P q P = q - phi (q phi)^H - (P q phi) phi^H for Hermitian q
    g = q_now - phi @ qn_phi.conj().T - f_now @ phi.conj().T
    _count(counter, "coefficients", 2 * m * n * n)

    rhs = delta_f @ mdiag
    _count(counter, "coefficients", n * m * m)
    y, residuals = kernels.cg_shifted(g, phi, beta, rhs, n_cg, cg_method)
    applies = (2 * n_cg + 2) if cg_method == "normal" else (n_cg + 1)
    _count(counter, "cg", m * applies * (n * n + 2 * n * m))

    phi1 = phi + y @ mdiag.conj().T
    _count(counter, "update", n * m * m)
    if workspace:
        return phi1, CompensationWorkspace(delta_f, mdiag, beta, y, residuals)
    return phi1


# ---------------------------------------------------------------------------
# Per-super-frame driver
# ---------------------------------------------------------------------------


@dataclass
class TrackerState:
    """Per-BS iterates plus what the next super-frame needs.

    ``step_size`` is a positive number or ``"auto"`` (``0.5 / rho_hat`` per BS,
    refreshed every super-frame).
    """

    phi: list
    q_prev: object = None
    step_size: object = "auto"
    n_cg: int = 1
    cg_method: str = "hermitian"
    degenerate_flags: list = None
    diagnostics: list = field(default_factory=list)
    superframe: int = 0
    macs: MacCounter = field(default_factory=MacCounter)

    def __post_init__(self):
        self.phi = [np.asarray(p, dtype=complex) for p in self.phi]
        if self.degenerate_flags is None:
            self.degenerate_flags = [False] * len(self.phi)
        if self.cg_method not in kernels.CG_METHODS:
            raise ValidationError(f"unknown CG method {self.cg_method!r}")
        if self.step_size != "auto" and not self.step_size > 0:
            raise ValidationError(f"step size must be positive, got {self.step_size}")


def init_state(phi, step_size="auto", n_cg=1, q_prev=None, cg_method="hermitian"):
    return TrackerState(phi=list(phi), q_prev=q_prev, step_size=step_size, n_cg=n_cg, cg_method=cg_method)


def _q_list(q):
    return list(q.q_per_bs) if hasattr(q, "q_per_bs") else list(q)


def track_superframe(state, q_now, mode=COMPENSATED, diagnostics=True):
    """Advance every BS's outer precoder by one super-frame.

    Compensated mode: compensation step, search direction ``q_now phi_(1)``,
    QR retraction of ``phi_(1) - gamma * eta``.  Gradient-only mode skips the
    compensation.  The first call (no previous covariance) always behaves
    like gradient-only.  With ``diagnostics`` the returned state gets one row
    per BS holding the distance to the oracle subspace, the gradient norm and
    the compensation norm; degenerate spectra only raise the BS's flag.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown tracking mode {mode!r}")
    qs = _q_list(q_now)
    if len(qs) != len(state.phi):
        raise DimensionError(f"got {len(qs)} covariance matrices for {len(state.phi)} base stations")
    q_prev = _q_list(state.q_prev) if state.q_prev is not None else None
    new_phi, flags, rows = [], [], []
    counter = state.macs
    for b, (phi, qb) in enumerate(zip(state.phi, qs)):
        if qb.shape != (phi.shape[0],) * 2:
            raise DimensionError(f"BS {b}: Q is {qb.shape}, basis is {phi.shape}")
        gamma = default_step_size(qb, counter=counter) if state.step_size == "auto" else state.step_size
        comp_norm = 0.0
        if mode == COMPENSATED and q_prev is not None:
            phi1 = compensation_step(phi, q_prev[b], qb, state.n_cg, counter=counter,
                                     cg_method=state.cg_method)
            comp_norm = float(np.linalg.norm(phi1 - phi))
        else:
            phi1 = phi
        nxt = gradient_step(phi1, qb, gamma, counter=counter)
        new_phi.append(nxt)
        if diagnostics:
            res = eigh_smallest(check_hermitian(qb, name=f"Q[{b}]"), phi.shape[1])
            grad = qb @ nxt
            grad = grad - nxt @ (nxt.conj().T @ grad)
            rows.append({
                "superframe": state.superframe,
                "bs_index": b,
                "subspace_error": subspace_distance(res.vectors, nxt),
                "gradient_norm": float(np.linalg.norm(grad)),
                "compensation_norm": comp_norm,
                "degenerate_flag": res.degenerate,
            })
            flags.append(res.degenerate)
        else:
            flags.append(state.degenerate_flags[b])
    return replace(
        state,
        phi=new_phi,
        q_prev=q_now,
        degenerate_flags=flags,
        diagnostics=state.diagnostics + rows,
        superframe=state.superframe + 1,
    )
