"""Descriptor systems, port-Hamiltonian realizations and their validation.

A port-Hamiltonian (pH) descriptor system ``E x' = A x + B u, y = C x`` has a
realization ``(J, R, Q, G, P)`` with

    A = (J - R) Q,   B = G - P,   C = (G + P)^T Q,
    J = -J^T,  Q^T E = E^T Q >= 0,  Q^T R Q = Q^T R^T Q >= 0,  Q^T P = 0.

Synthesis code never needs ``Q``; it is only used here to certify structure.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InfeasibleRequest, PHRegError
from .matops import as_matrix, numerical_rank, DEFAULT_TOL

__all__ = [
    "DescriptorSystem",
    "PHRealization",
    "PHValidationReport",
    "Hamiltonian",
    "PH_CONDITIONS",
    "validate_ph",
    "hamiltonian_of",
    "random_ph_system",
    "closed_loop",
    "OutputCompression",
    "compress_outputs",
]

PH_CONDITIONS = (
    "skew_J",
    "sym_psd_QtE",
    "sym_psd_QtRQ",
    "QtP",
    "A_structure",
    "B_structure",
    "C_structure",
    "C_minus_BtQ",
    "psd_dissipation",
)

_TINY = 1e-300


@dataclass(frozen=True)
class DescriptorSystem:
    """The quadruple ``(E, A, B, C)`` with ``E, A`` n-by-n, ``B`` n-by-m, ``C`` m-by-n.

    ``m = 0`` is accepted so that output compression can drop every output.
    """

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        E = as_matrix(self.E, "E")
        A = as_matrix(self.A, "A")
        n = E.shape[0]
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1)
        if C.ndim == 1:
            C = C.reshape(-1, n)
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(C))):
            raise ValueError("B and C must be finite")
        if n < 1 or E.shape != (n, n) or A.shape != (n, n):
            raise DimensionError(f"E and A must be square of the same size, got {E.shape}, {A.shape}")
        if B.ndim != 2 or B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got shape {B.shape}")
        m = B.shape[1]
        if C.ndim != 2 or C.shape != (m, n):
            raise DimensionError(f"C must be {m}x{n}, got shape {C.shape}")
        for name, val in zip("EABC", (E, A, B, C)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def transformed(self, U, V, W=None):
        """Return ``(U E V, U A V, U B W, W^T C V)``; ``W`` defaults to identity."""
        W = np.eye(self.m) if W is None else W
        return DescriptorSystem(U @ self.E @ V, U @ self.A @ V, U @ self.B @ W, W.T @ self.C @ V)

    def scale(self):
        return max(1.0, *(np.linalg.norm(M) for M in (self.E, self.A, self.B, self.C)))


@dataclass(frozen=True)
class PHRealization:
    J: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in "JRQGP":
            val = np.array(getattr(self, name), dtype=float)
            if val.ndim == 1:
                val = val.reshape(val.shape[0], -1)
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be finite")
            val.setflags(write=False)
            object.__setattr__(self, name, val)


@dataclass
class PHValidationReport:
    residuals: dict
    tolerance: float
    rank_B: int = 0
    rank_C: int = 0
    verdict: bool = field(init=False)

    def __post_init__(self):
        self.verdict = all(v <= self.tolerance for v in self.residuals.values())

    @property
    def failed(self):
        return [k for k, v in self.residuals.items() if v > self.tolerance]


@dataclass(frozen=True)
class Hamiltonian:
    """Energy ``H(x) = 0.5 x^T gram x`` with ``gram = sym(E^T Q)``."""

    gram: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.gram @ x)


def _sym(M):
    return 0.5 * (M + M.T)


def _rel(num, *scales):
    return float(num) / max(_TINY, *scales)


def _sym_psd_residual(M, floor=0.0):
    """Asymmetry and negative eigenvalue mass of ``M`` relative to
    ``max(||M||_2, floor)``."""
    nrm = max(np.linalg.norm(M, 2) if M.size else 0.0, floor)
    if nrm == 0.0:
        return 0.0
    asym = np.linalg.norm(M - M.T, 2) / nrm
    lam = np.linalg.eigvalsh(_sym(M))[0]
    return float(max(asym, max(0.0, -lam) / nrm))


def _check_dims(sys, real):
    n, m = sys.n, sys.m
    expect = {"J": (n, n), "R": (n, n), "Q": (n, n), "G": (n, m), "P": (n, m)}
    for name, shape in expect.items():
        got = getattr(real, name).shape
        if got != shape:
            raise DimensionError(f"{name} must be {shape[0]}x{shape[1]}, got {got}")


def validate_ph(sys, real, tol=1e-8):
    """Check every pH condition and return residuals relative to matrix scale.

    Residuals are scale-free: equality residuals are divided by the norms of the
    terms being compared, semidefiniteness residuals by the spectral norm of the
    (symmetrized) matrix. The verdict holds iff every residual is ``<= tol``.
    """
    _check_dims(sys, real)
    E, A, B, C = sys.E, sys.A, sys.B, sys.C
    J, R, Q, G, P = real.J, real.R, real.Q, real.G, real.P
    nQ = np.linalg.norm(Q)
    res = {}
    res["skew_J"] = _rel(np.linalg.norm(J + J.T), np.linalg.norm(J))
    # floors keep a numerically vanishing product from being judged against itself
    nQ2 = np.linalg.norm(Q, 2)
    res["sym_psd_QtE"] = _sym_psd_residual(Q.T @ E, nQ2 * max(np.linalg.norm(E, 2), np.linalg.norm(A, 2)))
    res["sym_psd_QtRQ"] = _sym_psd_residual(Q.T @ R @ Q, nQ2**2 * np.linalg.norm(R, 2))
    res["QtP"] = _rel(np.linalg.norm(Q.T @ P), nQ * np.linalg.norm(P))
    res["A_structure"] = _rel(np.linalg.norm(A - (J - R) @ Q), np.linalg.norm(A), np.linalg.norm(J - R) * nQ)
    res["B_structure"] = _rel(np.linalg.norm(B - (G - P)), np.linalg.norm(B), np.linalg.norm(G - P))
    res["C_structure"] = _rel(np.linalg.norm(C - (G + P).T @ Q), np.linalg.norm(C), np.linalg.norm(G + P) * nQ)
    res["C_minus_BtQ"] = _rel(np.linalg.norm(C - B.T @ Q), np.linalg.norm(C), np.linalg.norm(B) * nQ)
    D = -A.T @ Q - Q.T @ A
    dscale = max(np.linalg.norm(D, 2), 2.0 * nQ2 * np.linalg.norm(A, 2))
    if dscale == 0.0:
        res["psd_dissipation"] = 0.0
    else:
        # D is symmetric by construction; only the eigenvalue floor matters
        lam = np.linalg.eigvalsh(_sym(D))[0]
        res["psd_dissipation"] = float(max(0.0, -lam) / dscale)
    return PHValidationReport(
        residuals=res,
        tolerance=tol,
        rank_B=numerical_rank(B, DEFAULT_TOL),
        rank_C=numerical_rank(C, DEFAULT_TOL),
    )


def hamiltonian_of(sys, real, tol=1e-8):
    report = validate_ph(sys, real, tol)
    if not report.verdict:
        raise PHRegError(f"system is not port-Hamiltonian: {', '.join(report.failed)}")
    return Hamiltonian(_sym(sys.E.T @ real.Q))


def closed_loop(sys, real=None, F=None, K=None):
    """Closed loop ``(E + BKC, A + BFC, B, C)`` and, when given, the realization
    with ``R`` replaced by ``R - B F B^T``."""
    E, A = sys.E, sys.A
    if K is not None:
        E = E + sys.B @ K @ sys.C
    if F is not None:
        A = A + sys.B @ F @ sys.C
    new_sys = DescriptorSystem(E, A, sys.B, sys.C)
    if real is None:
        return new_sys, None
    R = real.R if F is None else real.R - sys.B @ F @ sys.B.T
    return new_sys, PHRealization(real.J, R, real.Q, real.G, real.P)


def _orthogonal(rng, n):
    if n == 0:
        return np.eye(0)
    Qm, Rm = np.linalg.qr(rng.standard_normal((n, n)))
    return Qm * np.sign(np.diag(Rm))


def _psd(rng, n, rank):
    L = rng.standard_normal((n, rank))
    return L @ L.T


def random_ph_system(n, m, rank_E, rank_R, seed=0, singular_Q=False, rank_Q=None):
    """Random port-Hamiltonian descriptor system with prescribed ranks.

    With ``singular_Q=False``: ``Q`` is well conditioned, ``E = Q^{-T} M`` for a
    psd ``M`` of rank ``rank_E``, ``P = 0``, ``B = G`` and ``C = B^T Q``.

    With ``singular_Q=True``: ``Q = U0 diag(Qq, 0) V0^T`` with ``rank_Q``
    (default ``n - 1``) nonzero block; ``E`` is block lower triangular in the
    same coordinates so that ``Q^T E`` is psd, and ``P`` lives in the part of
    the state space annihilated by ``Q^T``.

    Returns ``(DescriptorSystem, PHRealization)``; deterministic in ``seed``.
    """
    if n < 1 or m < 1:
        raise InfeasibleRequest("need n >= 1 and m >= 1")
    if not (0 <= rank_E <= n and 0 <= rank_R <= n):
        raise InfeasibleRequest(f"ranks must lie in [0, {n}] (rank_E={rank_E}, rank_R={rank_R})")
    rng = np.random.default_rng(seed)
    Jh = rng.standard_normal((n, n))
    J = Jh - Jh.T
    R = _psd(rng, n, rank_R)
    G = rng.standard_normal((n, m))

    if not singular_Q:
        Q = _orthogonal(rng, n) @ np.diag(rng.uniform(1.0, 2.0, n)) @ _orthogonal(rng, n)
        M = _psd(rng, n, rank_E)
        E = np.linalg.solve(Q.T, M)
        P = np.zeros((n, m))
    else:
        q = n - 1 if rank_Q is None else rank_Q
        if not 0 <= q < n:
            raise InfeasibleRequest(f"singular Q needs 0 <= rank_Q < n, got {q}")
        r1 = min(rank_E, q)
        r2 = rank_E - r1
        if r2 > n - q:
            raise InfeasibleRequest("rank_E too large for the requested rank_Q")
        U0, V0 = _orthogonal(rng, n), _orthogonal(rng, n)
        Qq = _orthogonal(rng, q) @ np.diag(rng.uniform(1.0, 2.0, q)) @ _orthogonal(rng, q)
        Qb = np.zeros((n, n))
        Qb[:q, :q] = Qq
        Eb = np.zeros((n, n))
        Eb[:q, :q] = np.linalg.solve(Qq.T, _psd(rng, q, r1)) if q else np.zeros((0, 0))
        Eb[q:, q:] = _psd(rng, n - q, r2)
        Q = U0 @ Qb @ V0.T
        E = U0 @ Eb @ V0.T
        Pb = np.zeros((n, m))
        Pb[q:] = rng.standard_normal((n - q, m))
        P = U0 @ Pb

    A = (J - R) @ Q
    B = G - P
    C = (G + P).T @ Q
    return DescriptorSystem(E, A, B, C), PHRealization(J, R, Q, G, P)


@dataclass(frozen=True)
class OutputCompression:
    """Orthonormal ``T`` (m-by-m') spanning ``range(C)``.

    The reduced system is ``(E, A, B T, T^T C)``; any reduced feedback ``F'``
    lifts to ``T F' T^T`` with an identical closed loop because ``C = T T^T C``.
    """

    T: np.ndarray

    @property
    def identity(self):
        return self.T.shape[0] == self.T.shape[1]

    def lift(self, M):
        return None if M is None else self.T @ M @ self.T.T


def compress_outputs(sys, real=None, tol=DEFAULT_TOL):
    """Drop output directions outside ``range(C)``; returns ``(sys', real', bookkeeping)``."""
    m = sys.m
    r = numerical_rank(sys.C, tol)
    if r == m:
        return sys, real, OutputCompression(np.eye(m))
    U = np.linalg.svd(sys.C, full_matrices=True)[0] if m else np.eye(0)
    T = U[:, :r]
    red = DescriptorSystem(sys.E, sys.A, sys.B @ T, T.T @ sys.C)
    if real is not None:
        real = PHRealization(real.J, real.R, real.Q, real.G @ T, real.P @ T)
    return red, real, OutputCompression(T)
