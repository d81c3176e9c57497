"""Pencil regularity, index, finite eigenvalue count and solvability conditions.

The index is computed by Luenberger's shuffle: row-compress ``E``; the rows
where ``E`` vanishes are purely algebraic, so differentiate them (move their
``A``-part into ``E``) and repeat.  For a regular pencil every shuffle removes
exactly one level of nilpotency, the loop stops once ``E`` is nonsingular, and
``deg det(sE - A) = n - sum_k (n - rank E_k)``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ObservabilityFailed, SingularBlock, SingularPencilError
from .matops import (
    DEFAULT_TOL,
    RankTolerance,
    left_nullspace_basis,
    numerical_rank,
    right_nullspace_basis,
    row_compress,
)

__all__ = [
    "AnalysisReport",
    "SolvabilityVerdict",
    "pencil_regular",
    "pencil_index",
    "finite_eig_count",
    "analyze_pencil",
    "check_con1",
    "check_con1_1",
    "check_con2",
    "is_completely_observable",
    "r1_core",
    "check_r1",
    "r1_feasible_ranks",
    "max_derivative_rank",
]

_SAMPLE_SEED = 20240917


@dataclass
class AnalysisReport:
    regular: bool
    index: Optional[int]  # None when the pencil is singular
    rank_E: int
    finite_eig_count: Optional[int]
    samples_used: int

    @property
    def index_label(self):
        return "undefined (singular pencil)" if self.index is None else self.index


@dataclass
class SolvabilityVerdict:
    condition_id: str
    holds: bool
    computed_ranks: list = field(default_factory=list)
    feasible_rank_range: Optional[tuple] = None
    parity_constraint: Optional[bool] = None
    details: dict = field(default_factory=dict)

    def rank(self, label):
        return dict(self.computed_ranks)[label]


def _sample_points(n, radius):
    rng = np.random.default_rng(_SAMPLE_SEED + n)
    theta = rng.uniform(0.0, 2.0 * np.pi, n + 1)
    return radius * np.exp(1j * theta)


def _sample_radius(E, A):
    nE, nA = np.linalg.norm(E), np.linalg.norm(A)
    if nE == 0.0 or nA == 0.0:
        return 1.0
    return nA / nE


def pencil_regular(E, A, tol=DEFAULT_TOL):
    """True iff ``rank(s_i E - A) = n`` at one of ``n + 1`` points on a circle."""
    E = np.asarray(E, dtype=float)
    A = np.asarray(A, dtype=float)
    n = E.shape[0]
    for s in _sample_points(n, _sample_radius(E, A)):
        if numerical_rank(s * E - A, tol) == n:
            return True
    return False


def _pencil_scale(E, A):
    return max(np.linalg.norm(E), np.linalg.norm(A), 1e-300)


def _unit_pencil_tol(tol, n):
    """Tolerance for a pencil normalized to unit norm: singular values are also
    compared against the pencil scale, not only against the block's own."""
    return RankTolerance(tol.relative, max(tol.absolute, tol.relative * n))


def _shuffle(E, A, tol):
    """Run the shuffle; return (index, sum of rank deficiencies)."""
    n = E.shape[0]
    scale = _pencil_scale(E, A)
    E = E / scale
    A = A / scale
    tol = _unit_pencil_tol(tol, n)
    steps = 0
    deficit = 0
    while True:
        U, r = row_compress(E, tol)
        if r == n:
            return steps, deficit
        if steps >= n:
            raise SingularPencilError("shuffle did not terminate; pencil is singular")
        E1 = (U @ E)[:r]
        UA = U @ A
        A2 = UA[r:]
        # row scaling of the algebraic block keeps both blocks O(1)
        nE1 = np.linalg.norm(E1) if r else 1.0
        nA2 = np.linalg.norm(A2)
        if nA2 == 0.0:
            raise SingularPencilError("zero rows in both E and A; pencil is singular")
        A2 = A2 * (nE1 / nA2)
        E = np.vstack([E1, A2])
        A = np.vstack([UA[:r], np.zeros((n - r, n))])
        steps += 1
        deficit += n - r


def pencil_index(E, A, tol=DEFAULT_TOL):
    """Nilpotency index of the infinite part of a regular pencil."""
    E = np.asarray(E, dtype=float)
    A = np.asarray(A, dtype=float)
    if not pencil_regular(E, A, tol):
        raise SingularPencilError("pencil (E, A) is singular")
    return _shuffle(E, A, tol)[0]


def finite_eig_count(E, A, tol=DEFAULT_TOL):
    """Degree of ``det(sE - A)``, i.e. the number of finite eigenvalues."""
    E = np.asarray(E, dtype=float)
    A = np.asarray(A, dtype=float)
    if not pencil_regular(E, A, tol):
        raise SingularPencilError("pencil (E, A) is singular")
    return E.shape[0] - _shuffle(E, A, tol)[1]


def analyze_pencil(E, A, tol=DEFAULT_TOL):
    """Regularity, index and finite eigenvalue count of ``(E, A)``.

    ``rank_E`` is measured on ``E / max(||E||, ||A||)``, the same scaling the
    shuffle uses, so an ``E`` made of rounding noise next to a large ``A``
    counts as zero.
    """
    E = np.asarray(E, dtype=float)
    A = np.asarray(A, dtype=float)
    n = E.shape[0]
    rank_E = numerical_rank(E / _pencil_scale(E, A), _unit_pencil_tol(tol, n))
    if not pencil_regular(E, A, tol):
        return AnalysisReport(False, None, rank_E, None, n + 1)
    try:
        index, deficit = _shuffle(E, A, tol)
    except SingularPencilError:
        # sampling found a full-rank point but the pencil is singular at the
        # shuffle's tolerance; report it as singular rather than guess
        return AnalysisReport(False, None, rank_E, None, n + 1)
    return AnalysisReport(True, index, rank_E, n - deficit, n + 1)


def check_con1(sys, tol=DEFAULT_TOL):
    """``rank [E, A S; 0, C S] = n`` with ``S`` spanning ``ker E``."""
    n = sys.n
    S = right_nullspace_basis(sys.E, tol)
    M = np.block([[sys.E, sys.A @ S], [np.zeros((sys.m, n)), sys.C @ S]])
    r = numerical_rank(M, tol)
    return SolvabilityVerdict("con-1", r == n, [("rank_con1", r), ("dim_ker_E", S.shape[1])])


def check_con1_1(sys, tol=DEFAULT_TOL):
    """``rank [E, A S, B] = n`` with ``S`` spanning ``ker E``."""
    S = right_nullspace_basis(sys.E, tol)
    r = numerical_rank(np.hstack([sys.E, sys.A @ S, sys.B]), tol)
    return SolvabilityVerdict("con-1-1", r == sys.n, [("rank_con1_1", r)])


def check_con2(sys, tol=DEFAULT_TOL):
    """``rank [E, A S; C, 0] = rank [E, A S, B] = n``, ``S`` spanning ``ker [E; C]``."""
    n, m = sys.n, sys.m
    S = right_nullspace_basis(np.vstack([sys.E, sys.C]), tol)
    AS = sys.A @ S
    r1 = numerical_rank(np.block([[sys.E, AS], [sys.C, np.zeros((m, S.shape[1]))]]), tol)
    r2 = numerical_rank(np.hstack([sys.E, AS, sys.B]), tol)
    return SolvabilityVerdict(
        "con-2", r1 == n and r2 == n, [("rank_left", r1), ("rank_right", r2), ("dim_ker_EC", S.shape[1])]
    )


def max_derivative_rank(sys, tol=DEFAULT_TOL):
    """``max_K rank(E + B K C)`` for a pH system, which equals ``rank [E; C]``."""
    return numerical_rank(np.vstack([sys.E, sys.C]), tol)


def is_completely_observable(sys, tol=DEFAULT_TOL):
    """``rank [aE - bA; C] = n`` for every ``(a, b) != (0, 0)``.

    Checked at the infinite point, at ``n + 1`` sample points, and at every
    candidate finite point where the rank can drop: the eigenvalues of a random
    square projection of the tall pencil restricted to ``ker C`` contain all
    such points.
    """
    E, A, C, n = sys.E, sys.A, sys.C, sys.n
    if numerical_rank(np.vstack([E, C]), tol) < n:
        return False

    def full(s):
        return numerical_rank(np.vstack([s * E - A, C.astype(complex)]), tol) == n

    if not all(full(s) for s in _sample_points(n, _sample_radius(E, A))):
        return False
    S = right_nullspace_basis(C, tol)
    k = S.shape[1]
    if k == 0:
        return True
    rng = np.random.default_rng(_SAMPLE_SEED)
    P = np.linalg.qr(rng.standard_normal((n, k)))[0]
    cand = scipy.linalg.eigvals(P.T @ A @ S, P.T @ E @ S)
    return all(full(s) for s in cand if np.isfinite(s))


def _require_observable(sys, tol):
    if not is_completely_observable(sys, tol):
        raise ObservabilityFailed("system is not completely observable")


def _block_tol(tol, parent):
    """Rank policy for a projection of ``parent`` onto orthonormal bases."""
    return tol.relative_to(np.linalg.norm(parent, 2) if parent.size else 0.0, max(parent.shape))


def r1_core(sys, tol=DEFAULT_TOL):
    """Pieces of the rank condition for derivative feedback with target rank.

    Returns ``(core, T1, S2)`` where ``T1`` spans the left nullspace of
    ``E ker(C)``, ``S2`` spans ``ker(T_B^T E)`` (``T_B`` the left nullspace of
    ``B``) and ``core = T1^T A S2``.
    """
    tol_E = _block_tol(tol, sys.E)
    S_C = right_nullspace_basis(sys.C, tol)
    T1 = left_nullspace_basis(sys.E @ S_C, tol_E)
    T_B = left_nullspace_basis(sys.B, tol)
    S2 = right_nullspace_basis(T_B.T @ sys.E, tol_E)
    return T1.T @ sys.A @ S2, T1, S2


def _normalized_core(sys, core, T1, S2, tol):
    Bl = T1.T @ sys.B
    Cr = sys.C @ S2
    for name, M in (("T1^T B", Bl), ("C S2", Cr)):
        if M.shape[0] != M.shape[1] or numerical_rank(M, tol) < M.shape[0]:
            raise SingularBlock(name)
    return np.linalg.solve(Bl, core) @ np.linalg.inv(Cr)


def r1_feasible_ranks(n, mu, skew):
    """Ranks ``r`` for which derivative feedback can reach index <= 1."""
    ranks = range(n - mu, n + 1)
    if mu > 0 and skew:
        ranks = [r for r in ranks if (n - r) % 2 == 0]
    return sorted(ranks)


def check_r1(sys, r, tol=DEFAULT_TOL, skew_tol=1e-8):
    """Feasibility of derivative feedback reaching ``rank(E + BKC) = r``.

    ``mu = rank(core)``; the range is ``n - mu <= r <= n`` and, when ``mu > 0``
    and the normalized core ``(T1^T B)^{-1} core (C S2)^{-1}`` is skew-symmetric,
    ``n - r`` must also be even.
    """
    _require_observable(sys, tol)
    from .sysmodel import compress_outputs

    sys = compress_outputs(sys, None, tol)[0]
    n = sys.n
    core, T1, S2 = r1_core(sys, tol)
    mu = numerical_rank(core, _block_tol(tol, sys.A))
    skew = False
    if mu > 0:
        N = _normalized_core(sys, core, T1, S2, tol)
        skew = bool(np.linalg.norm(N + N.T) <= skew_tol * max(np.linalg.norm(N), 1e-300))
    feasible = r1_feasible_ranks(n, mu, skew)
    return SolvabilityVerdict(
        "R1",
        r in feasible,
        [("mu", mu), ("rank_E", numerical_rank(sys.E, tol))],
        feasible_rank_range=(n - mu, n),
        parity_constraint=(mu > 0 and skew) or None,
        details={"feasible_ranks": feasible, "core_convention": "inverse", "skew": skew},
    )
