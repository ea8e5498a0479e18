"""Grassmann manifold primitives.

Points of Grass(m, n_t) are stored as ``n_t x m`` complex matrices with
orthonormal columns.  Every function here also accepts a :class:`SubspacePoint`
wherever a basis is expected.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, SingularityError, ValidationError

ORTHONORMAL_TOL = 1e-10
HERMITIAN_TOL = 1e-8
TANGENT_TOL = 1e-8
RANK_TOL = 1e-12
DEGENERACY_TOL = 1e-10


def _basis(phi):
    if isinstance(phi, SubspacePoint):
        return phi.basis
    return np.asarray(phi)


@dataclass(frozen=True)
class SubspacePoint:
    """Orthonormal basis of an m-dimensional subspace of C^n_t."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=complex)
        if basis.ndim != 2:
            raise DimensionError(f"basis must be 2-D, got shape {basis.shape}")
        n_t, m = basis.shape
        if not 1 <= m <= n_t:
            raise DimensionError(f"need 1 <= m <= n_t, got m={m}, n_t={n_t}")
        err = np.linalg.norm(basis.conj().T @ basis - np.eye(m))
        if err > ORTHONORMAL_TOL:
            raise ValidationError(f"basis columns are not orthonormal (error {err:.3e})")
        object.__setattr__(self, "basis", basis)

    @property
    def n_t(self):
        return self.basis.shape[0]

    @property
    def m(self):
        return self.basis.shape[1]


@dataclass(frozen=True)
class TangentVector:
    """Horizontal direction ``delta`` at ``base`` (base^H delta = 0)."""

    delta: np.ndarray
    base: SubspacePoint

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=complex)
        if delta.shape != self.base.basis.shape:
            raise DimensionError(f"tangent shape {delta.shape} != base shape {self.base.basis.shape}")
        err = np.linalg.norm(self.base.basis.conj().T @ delta)
        if err > ORTHONORMAL_TOL * max(1.0, np.linalg.norm(delta)):
            raise ValidationError(f"delta is not horizontal at base (error {err:.3e})")
        object.__setattr__(self, "delta", delta)


def check_hermitian(a, tol=HERMITIAN_TOL, name="matrix"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    asym = np.linalg.norm(a - a.conj().T)
    if asym > tol * scale:
        raise ValidationError(f"{name} is not Hermitian (relative asymmetry {asym / scale:.3e})")
    return a


def _check_pair(phi, z):
    if z.ndim != 2 or z.shape != phi.shape:
        raise DimensionError(f"shape mismatch: basis {phi.shape} vs matrix {z.shape}")


def project_tangent(phi, z):
    """Return ``(I - phi phi^H) z``, the horizontal part of ``z`` at ``phi``."""
    phi = _basis(phi)
    z = np.asarray(z)
    _check_pair(phi, z)
    return z - phi @ (phi.conj().T @ z)


def riemannian_gradient(phi, q):
    """Gradient of ``tr(phi^H q phi)`` on the Grassmann manifold.

    Parameters
    ----------
    phi : (n_t, m) orthonormal basis
    q : (n_t, n_t) Hermitian, possibly indefinite

    Returns
    -------
    (n_t, m) array equal to ``(I - phi phi^H) q phi``.
    """
    phi = _basis(phi)
    q = check_hermitian(q, name="q")
    if q.shape[0] != phi.shape[0]:
        raise DimensionError(f"q is {q.shape}, basis has {phi.shape[0]} rows")
    return project_tangent(phi, q @ phi)


def hessian_apply(phi, q, xi):
    """Riemannian Hessian of ``tr(phi^H q phi)`` applied to tangent ``xi``.

    Computes ``P_phi (q xi - xi phi^H q phi)``.
    """
    phi = _basis(phi)
    q = check_hermitian(q, name="q")
    xi = np.asarray(xi.delta if isinstance(xi, TangentVector) else xi)
    _check_pair(phi, xi)
    leak = np.linalg.norm(phi.conj().T @ xi)
    if leak > TANGENT_TOL * max(1.0, np.linalg.norm(xi)):
        raise ValidationError(f"xi is not tangent at phi (|phi^H xi| = {leak:.3e})")
    reduced = phi.conj().T @ q @ phi
    return project_tangent(phi, q @ xi - xi @ reduced)


def retract_qr(x):
    """Orthonormalise the columns of ``x`` (QR retraction).

    The triangular factor is normalised to a real nonnegative diagonal, which
    makes the returned basis unique.  Raises :class:`SingularityError` when
    ``x`` is numerically rank deficient.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] > x.shape[0] or x.shape[1] == 0:
        raise DimensionError(f"expected tall matrix, got shape {x.shape}")
    q, r = np.linalg.qr(x)
    diag = np.diag(r)
    mag = np.abs(diag)
    # |r_jj| is the norm of column j after removing earlier columns
    scale = mag.max() if mag.size else 0.0
    bad = np.flatnonzero(mag <= RANK_TOL * scale) if scale > 0 else np.arange(x.shape[1])
    if bad.size:
        j = int(bad[0])
        raise SingularityError(f"rank deficient input: column {j} is dependent on earlier columns", column=j)
    phase = diag / mag
    return q * phase[np.newaxis, :]


def subspace_distance(a, b):
    """Chordal distance ``sqrt(m - ||a^H b||_F^2)`` between two spans.

    Evaluated as ``||(I - a a^H) b||_F``, which is the same quantity without
    the cancellation of the difference form.
    """
    a = _basis(a)
    b = _basis(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare subspaces of shapes {a.shape} and {b.shape}")
    return float(np.linalg.norm(b - a @ (a.conj().T @ b)))


class EigResult(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray
    gap: float
    degenerate: bool


def eigh_smallest(a, m):
    """The ``m`` algebraically smallest eigenpairs of a Hermitian matrix.

    ``gap`` is ``lambda_{m+1} - lambda_m`` (``inf`` when ``m == n``) and
    ``degenerate`` is set when the gap is below ``1e-10`` times the spectral
    radius, i.e. when the minimal m-subspace is not unique.
    """
    a = check_hermitian(a, name="a")
    n = a.shape[0]
    if not 1 <= m <= n:
        raise DimensionError(f"need 1 <= m <= {n}, got m={m}")
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    radius = float(np.max(np.abs(w)))
    if m < n:
        gap = float(w[m] - w[m - 1])
        degenerate = gap <= DEGENERACY_TOL * radius
    else:
        gap = float("inf")
        degenerate = False
    return EigResult(w[:m], v[:, :m], gap, bool(degenerate))


def random_point(n_t, m, rng):
    """Haar-distributed point on Grass(m, n_t)."""
    z = rng.standard_normal((n_t, m)) + 1j * rng.standard_normal((n_t, m))
    return retract_qr(z)


def objective(phi, q):
    """``tr(phi^H q phi)`` as a real number."""
    phi = _basis(phi)
    return float(np.real(np.trace(phi.conj().T @ q @ phi)))
