"""Rank-revealing orthogonal kernels.

Every condensed form in :mod:`phreg.condense` is assembled from the handful of
operations here: SVD-based row/column compressions, orthonormal nullspace
bases, an (optionally reordered) real Schur form, and an inversion-free
evaluation of ``B^{-1} A C^{-1}`` built from two QR factorizations and a
cosine-sine decomposition.

All rank decisions go through a single :class:`RankTolerance` so that block
sizes chosen in different stages of a multi-stage reduction stay consistent.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SingularBlock

__all__ = [
    "RankTolerance",
    "DEFAULT_TOL",
    "as_matrix",
    "singular_values",
    "rank_threshold",
    "numerical_rank",
    "row_compress",
    "col_compress",
    "right_nullspace_basis",
    "left_nullspace_basis",
    "real_schur",
    "stable_triple_product",
    "orthogonality_defect",
]


@dataclass(frozen=True)
class RankTolerance:
    """Numerical rank policy.

    A singular value of ``M`` counts toward the rank when it exceeds
    ``max(absolute, relative * sigma_max(M) * max(M.shape))``.
    """

    relative: float = 1e-10
    absolute: float = 1e-14

    def __post_init__(self):
        if self.relative < 0 or self.absolute < 0:
            raise ValueError("rank tolerances must be nonnegative")

    def threshold(self, M):
        return rank_threshold(M, self)

    def relative_to(self, scale, dim=1):
        """Same policy with the absolute floor raised to ``relative * scale * dim``.

        Use for blocks cut out of a larger matrix of norm ``scale``: a block
        that is rounding noise of the parent is then rank zero, instead of
        being judged against its own (tiny) largest singular value.
        """
        return RankTolerance(self.relative, max(self.absolute, self.relative * float(scale) * max(1, dim)))


DEFAULT_TOL = RankTolerance()


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array (1-D input is read as a row)."""
    A = np.array(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(1, -1)
    elif A.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def singular_values(M):
    M = np.asarray(M)
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def rank_threshold(M, tol=DEFAULT_TOL):
    M = np.asarray(M)
    if M.size == 0:
        return tol.absolute
    smax = singular_values(M)[0]
    return max(tol.absolute, tol.relative * smax * max(M.shape))


def _rank_from_sv(s, shape, tol):
    if s.size == 0:
        return 0
    thr = max(tol.absolute, tol.relative * s[0] * max(shape))
    return int(np.count_nonzero(s > thr))


def numerical_rank(M, tol=DEFAULT_TOL):
    """Number of singular values above the effective threshold."""
    M = np.asarray(M)
    return _rank_from_sv(singular_values(M), M.shape, tol)


def _full_svd(M):
    p, q = M.shape
    if M.size == 0:
        return np.eye(p, dtype=M.dtype), np.zeros(0), np.eye(q, dtype=M.dtype)
    U, s, Vh = np.linalg.svd(M, full_matrices=True)
    return U, s, Vh


def row_compress(M, tol=DEFAULT_TOL, zeros="bottom", split=None):
    """Orthogonal ``U`` such that ``U @ M`` has its rank-``r`` part stacked on
    one side and (numerical) zeros on the other.

    Parameters
    ----------
    M : (p, q) array
    tol : RankTolerance
    zeros : {"bottom", "top"}
        ``"bottom"`` gives ``U @ M = [M1; 0]``, ``"top"`` gives ``[0; M1]``.
    split : int, optional
        Force ``M1`` to have this many rows instead of the numerical rank. Used
        when an earlier stage has already fixed the block size.

    Returns
    -------
    U : (p, p) orthogonal array
    r : int
        Numerical rank of ``M``; ``M1`` has ``r`` rows of full row rank.
    """
    M = np.asarray(M, dtype=float)
    Us, s, _ = _full_svd(M)
    r = _rank_from_sv(s, M.shape, tol)
    k = r if split is None else split
    U = Us.T
    if zeros == "top":
        U = np.vstack([U[k:], U[:k]])
    elif zeros != "bottom":
        raise ValueError("zeros must be 'bottom' or 'top'")
    return U, r


def col_compress(M, tol=DEFAULT_TOL, nonzero="left", split=None):
    """Orthogonal ``V`` such that ``M @ V = [M2 0]`` (``nonzero="left"``) or
    ``[0 M2]`` (``nonzero="right"``), ``M2`` having ``r`` independent columns.

    ``split`` forces the width of ``M2`` as in :func:`row_compress`.
    Returns ``(V, r)``.
    """
    M = np.asarray(M, dtype=float)
    _, s, Vh = _full_svd(M)
    r = _rank_from_sv(s, M.shape, tol)
    k = r if split is None else split
    V = Vh.T
    if nonzero == "right":
        V = np.hstack([V[:, k:], V[:, :k]])
    elif nonzero != "left":
        raise ValueError("nonzero must be 'left' or 'right'")
    return V, r


def right_nullspace_basis(M, tol=DEFAULT_TOL):
    """Orthonormal columns spanning the numerical right nullspace of ``M``.

    A matrix with zero rows has the whole space as nullspace; a matrix of full
    column rank returns a ``(cols, 0)`` array.
    """
    M = np.asarray(M)
    q = M.shape[1]
    if M.shape[0] == 0 or q == 0:
        return np.eye(q, dtype=M.dtype)
    _, s, Vh = np.linalg.svd(M, full_matrices=True)
    r = _rank_from_sv(s, M.shape, tol)
    return Vh[r:].conj().T


def left_nullspace_basis(M, tol=DEFAULT_TOL):
    """Orthonormal columns ``T`` with ``T.T @ M`` numerically zero."""
    return right_nullspace_basis(np.asarray(M).conj().T, tol)


def real_schur(M, sort=None):
    """Real Schur form ``T = P @ M @ P.T`` with ``P`` orthogonal.

    ``sort`` is forwarded to :func:`scipy.linalg.schur`; a callable receives the
    real and imaginary parts of each eigenvalue and selects those moved to the
    leading diagonal blocks.

    Returns ``(P, T, sdim)`` where ``sdim`` is the number of selected
    eigenvalues (0 when ``sort`` is None).
    """
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError("real_schur needs a square matrix")
    if M.size == 0:
        return np.eye(0), np.zeros((0, 0)), 0
    if sort is None:
        T, Z = scipy.linalg.schur(M, output="real")
        sdim = 0
    else:
        T, Z, sdim = scipy.linalg.schur(M, output="real", sort=sort)
    return Z.T, T, int(sdim)


def _require_nonsingular(M, name, tol):
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError(f"{name} must be square")
    if numerical_rank(M, tol) < n:
        raise SingularBlock(name)


def stable_triple_product(B, A, C, tol=DEFAULT_TOL):
    """Evaluate ``X = B^{-1} A C^{-1}`` without forming an inverse.

    1. QR of ``[C; A] = L [R; 0]``; then ``A C^{-1} = -L22^{-T} L12^T``.
    2. LQ of ``[-L22^T B, L12^T] = [R~ 0] LL``; then ``X = LL11^{-1} LL12``.
    3. ``LL11^{-1} LL12`` is read off the cosine-sine decomposition of the
       orthogonal ``LL`` as ``V1 diag(-tan theta) V2^T``.

    Raises
    ------
    SingularBlock
        If ``B`` or ``C`` is numerically singular (``name`` is ``"B"`` or ``"C"``).
    """
    B = np.asarray(B, dtype=float)
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    _require_nonsingular(B, "B", tol)
    _require_nonsingular(C, "C", tol)
    mu = A.shape[0]
    if A.shape != (mu, mu) or B.shape[0] != mu or C.shape[0] != mu:
        raise ValueError("stable_triple_product expects conformal square blocks")
    if mu == 0:
        return np.zeros((0, 0))

    L, _ = np.linalg.qr(np.vstack([C, A]), mode="complete")
    L12 = L[:mu, mu:]
    L22 = L[mu:, mu:]

    # LQ of the wide matrix through QR of its transpose.
    LLt, _ = np.linalg.qr(np.hstack([-L22.T @ B, L12.T]).T, mode="complete")
    LL = LLt.T

    (u1, _), theta, (v1h, v2h) = scipy.linalg.cossin(LL, p=mu, q=mu, separate=True)
    # LL11 = u1 diag(cos) v1h, LL12 = -u1 diag(sin) v2h
    c = np.cos(theta)
    if np.any(np.abs(c) <= np.finfo(float).eps * mu):
        raise SingularBlock("B", "cosine-sine factor is singular")
    return v1h.T @ np.diag(-np.sin(theta) / c) @ v2h


def orthogonality_defect(Q):
    """Frobenius norm of ``Q^T Q - I``."""
    Q = np.asarray(Q)
    return float(np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1])))
