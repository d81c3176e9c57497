"""Orthogonal condensed forms of port-Hamiltonian descriptor systems.

Each reduction returns an immutable form object holding the transformations,
the transformed coefficient matrices, block sizes, and diagnostics:

* ``zero_residuals`` -- Frobenius norms of blocks the construction claims are
  zero (either by construction or as a consequence of pH structure),
* ``nonsingular`` -- ``(numerical rank, size)`` of blocks claimed nonsingular,
* ``orthogonal`` -- the orthogonal factors, whose defects are reported,
* ``conditions`` -- condition numbers of the nonorthogonal factors.

Forms never consume ``Q``.  :func:`q_pattern_residuals` uses a supplied ``Q``
to check the block patterns the pH structure forces on it.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np
import scipy.linalg

from .errors import PreconditionError, SingularBlock, StructureError
from .matops import (
    DEFAULT_TOL,
    col_compress,
    numerical_rank,
    orthogonality_defect,
    rank_threshold,
    real_schur,
    row_compress,
    right_nullspace_basis,
    left_nullspace_basis,
    stable_triple_product,
)

__all__ = [
    "FormEABC0",
    "FormDerivStaircase",
    "FormLemma3",
    "FormLemma4",
    "FormTheorem3",
    "reduce_eabc0",
    "reduce_deriv_staircase",
    "reduce_lemma3",
    "refine_lemma4",
    "schur_stage",
    "q_pattern_residuals",
    "form_summary",
]

COND_WARN = 1e12


def _split(M, rows, cols):
    """Blocks of ``M`` as a nested list following the given partition sizes."""
    ri = np.cumsum([0, *rows])
    ci = np.cumsum([0, *cols])
    return [[M[ri[i]:ri[i + 1], ci[j]:ci[j + 1]] for j in range(len(cols))] for i in range(len(rows))]


def _fro(M):
    return float(np.linalg.norm(M)) if M.size else 0.0


def _fro_outside(M, *keep):
    """Norm of ``M`` with the given ``(row_slice, col_slice)`` blocks zeroed."""
    R = np.array(M, dtype=float, copy=True)
    for rs, cs in keep:
        R[rs, cs] = 0.0
    return _fro(R)


def _norm2(M):
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def _nonsingular(M, tol):
    return (numerical_rank(M, tol), M.shape[0]) if M.shape[0] == M.shape[1] else (-1, M.shape[0])


def _cond(M):
    return float(np.linalg.cond(M)) if M.size else 1.0


@dataclass(frozen=True)
class _Form:
    zero_residuals: dict = field(default_factory=dict, repr=False)
    nonsingular: dict = field(default_factory=dict, repr=False)
    orthogonal: dict = field(default_factory=dict, repr=False)
    conditions: dict = field(default_factory=dict, repr=False)
    warnings: tuple = ()

    kind = "form"

    def orthogonality_defects(self):
        return {k: orthogonality_defect(v) for k, v in self.orthogonal.items()}

    def singular_blocks(self):
        return [k for k, (r, s) in self.nonsingular.items() if r != s]

    def sizes(self):
        return {}


# --------------------------------------------------------------------------
# proportional feedback form
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FormEABC0(_Form):
    """``UEV = diag(E11, 0, 0)``, ``UAV`` with ``A23 = A32 = A33 = 0`` and
    ``A22`` nonsingular; ``W^T C V`` has ``[0; C23]`` in its last block column."""

    U: np.ndarray = None
    V: np.ndarray = None
    W: np.ndarray = None
    n1: int = 0
    n2: int = 0
    n3: int = 0
    E_t: np.ndarray = None
    A_t: np.ndarray = None
    B_t: np.ndarray = None  # U B W
    C_t: np.ndarray = None  # W^T C V
    rank_C3: int = 0

    kind = "EABC0"

    def sizes(self):
        return {"n1": self.n1, "n2": self.n2, "n3": self.n3}

    @property
    def parts(self):
        return (self.n1, self.n2, self.n3)

    def E_blocks(self):
        return _split(self.E_t, self.parts, self.parts)

    def A_blocks(self):
        return _split(self.A_t, self.parts, self.parts)

    def C_blocks(self):
        m = self.C_t.shape[0]
        return _split(self.C_t, (m - self.n3, self.n3), self.parts)

    def B_blocks(self):
        m = self.B_t.shape[1]
        return _split(self.B_t, self.parts, (m - self.n3, self.n3))

    def transforms(self):
        return {"U": self.U, "V": self.V, "W": self.W}

    def reconstruct(self, sys):
        t = sys.transformed(self.U, self.V, self.W)
        return {"E": (t.E, self.E_t), "A": (t.A, self.A_t), "B": (t.B, self.B_t), "C": (t.C, self.C_t)}


def reduce_eabc0(sys, tol=DEFAULT_TOL):
    n, m = sys.n, sys.m
    U0, n1 = row_compress(sys.E, tol)
    V0, _ = col_compress(sys.E, tol, split=n1)
    At0 = (U0 @ sys.A @ V0)[n1:, n1:]
    tol_A = tol.relative_to(_norm2(sys.A), n)
    P, n2 = row_compress(At0, tol_A)
    Qc, _ = col_compress(At0, tol_A, split=n2)
    n3 = n - n1 - n2
    U = scipy.linalg.block_diag(np.eye(n1), P) @ U0
    V = V0 @ scipy.linalg.block_diag(np.eye(n1), Qc)

    C3 = (sys.C @ V)[:, n1 + n2:]
    Wt, rank_C3 = row_compress(C3, tol.relative_to(_norm2(sys.C), max(sys.C.shape)), zeros="top", split=n3)
    W = Wt.T
    E_t = U @ sys.E @ V
    A_t = U @ sys.A @ V
    B_t = U @ sys.B @ W
    C_t = W.T @ sys.C @ V

    parts = (n1, n2, n3)
    Eb = _split(E_t, parts, parts)
    Ab = _split(A_t, parts, parts)
    Cb = _split(C_t, (m - n3, n3), parts)
    Bb = _split(B_t, parts, (m - n3, n3))
    zero = {
        "E_outside_E11": _fro_outside(E_t, (slice(0, n1), slice(0, n1))),
        "A23": _fro(Ab[1][2]),
        "A32": _fro(Ab[2][1]),
        "A33": _fro(Ab[2][2]),
        "C13": _fro(Cb[0][2]),
        "B31": _fro(Bb[2][0]),  # pH consequence
    }
    nonsing = {"E11": _nonsingular(Eb[0][0], tol), "A22": _nonsingular(Ab[1][1], tol)}
    if rank_C3 == n3:
        nonsing["C23"] = _nonsingular(Cb[1][2], tol)
    return FormEABC0(
        zero_residuals=zero,
        nonsingular=nonsing,
        orthogonal={"U": U, "V": V, "W": W},
        U=U, V=V, W=W, n1=n1, n2=n2, n3=n3,
        E_t=E_t, A_t=A_t, B_t=B_t, C_t=C_t, rank_C3=rank_C3,
    )


# --------------------------------------------------------------------------
# derivative feedback staircase
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FormDerivStaircase(_Form):
    """``UEV = [E11 0; E21 E22]``, ``UAV = [A11 0; A21 A22]``, ``CV = [C1 0]``
    with ``[E11; C1]`` of full column rank ``n1`` and ``sE22 - A22`` of full
    row rank for every ``s``."""

    U: np.ndarray = None
    V: np.ndarray = None
    n1: int = 0
    n2: int = 0
    nh1: int = 0
    nh2: int = 0
    E_t: np.ndarray = None
    A_t: np.ndarray = None
    B_t: np.ndarray = None
    C_t: np.ndarray = None
    con2_blocks: dict = field(default_factory=dict)

    kind = "DerivStaircase"

    def sizes(self):
        return {"n1": self.n1, "n2": self.n2, "nh1": self.nh1, "nh2": self.nh2}

    def blocks(self, M):
        return _split(M, (self.nh1, self.nh2), (self.n1, self.n2))

    @property
    def E11(self):
        return self.E_t[: self.nh1, : self.n1]

    @property
    def B1(self):
        return self.B_t[: self.nh1]

    @property
    def C1(self):
        return self.C_t[:, : self.n1]

    @property
    def con2_equivalent(self):
        return all(self.con2_blocks.values())

    def transforms(self):
        return {"U": self.U, "V": self.V}

    def reconstruct(self, sys):
        t = sys.transformed(self.U, self.V)
        return {"E": (t.E, self.E_t), "A": (t.A, self.A_t), "B": (t.B, self.B_t), "C": (t.C, self.C_t)}


def _complement(basis, n):
    """Orthonormal basis of the orthogonal complement of ``span(basis)``."""
    return left_nullspace_basis(basis) if basis.shape[1] else np.eye(n)


def reduce_deriv_staircase(sys, tol=DEFAULT_TOL):
    """Split off the largest subspace ``V*`` with ``C V* = 0`` that ``E`` and ``A``
    map into a common subspace ``U* = E V* + A V*`` of dimension at most ``dim V*``.

    ``V*`` is the limit of ``V_{k+1} = {v : Cv = 0, Ev in E V_k + A V_k}``.
    """
    n = sys.n
    E, A, C = sys.E, sys.A, sys.C
    Vk = np.zeros((n, 0))
    Uk = np.zeros((n, 0))
    tol_EC = tol.relative_to(max(_norm2(E), _norm2(C)), n + sys.m)
    tol_EA = tol.relative_to(max(_norm2(E), _norm2(A)), n)
    for _ in range(n + 1):
        T = _complement(Uk, n)
        Vn = right_nullspace_basis(np.vstack([C, T.T @ E]), tol_EC)
        if Vn.shape[1] == Vk.shape[1]:
            break
        Vk = Vn
        img = np.hstack([E @ Vk, A @ Vk])
        Ui, r = row_compress(img, tol_EA)
        Uk = Ui[:r].T
    n2, nh2 = Vk.shape[1], Uk.shape[1]
    n1, nh1 = n - n2, n - nh2
    V = np.hstack([_complement(Vk, n), Vk])
    U = np.hstack([_complement(Uk, n), Uk]).T
    E_t, A_t = U @ E @ V, U @ A @ V
    B_t, C_t = U @ sys.B, C @ V
    Eb = _split(E_t, (nh1, nh2), (n1, n2))
    Ab = _split(A_t, (nh1, nh2), (n1, n2))
    zero = {"E12": _fro(Eb[0][1]), "A12": _fro(Ab[0][1]), "C2": _fro(C_t[:, n1:])}
    E22_zero = _fro(Eb[1][1]) <= rank_threshold(E, tol) * max(1, n)
    blocks = {
        "n2_eq_nh2": n2 == nh2,
        "E22_zero": bool(E22_zero),
        "A22_full_rank": numerical_rank(Ab[1][1], tol_EA) == n2 if n2 == nh2 else False,
        "E11_B1_full_rank": numerical_rank(
            np.hstack([Eb[0][0], B_t[:nh1]]), tol.relative_to(max(_norm2(E), _norm2(sys.B)), n)
        ) == nh1,
    }
    return FormDerivStaircase(
        zero_residuals=zero,
        nonsingular={},
        orthogonal={"U": U, "V": V},
        U=U, V=V, n1=n1, n2=n2, nh1=nh1, nh2=nh2,
        E_t=E_t, A_t=A_t, B_t=B_t, C_t=C_t, con2_blocks=blocks,
    )


# --------------------------------------------------------------------------
# combined feedback chain
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FormLemma3(_Form):
    """Row/column partition ``(n - r_b, r_e + r_b - n, n - r_e)``, output
    partition ``(r_e + r_b - n, n - r_e)``:

        UEV   = [E11 E12 0; E21 E22 0; 0 0 0]
        UBW   = [0 B12; B21 B22; 0 B32]
        W^TCV = [0 C12 0; C21 C22 C23]

    with ``B21, C12, B32, C23, E11`` nonsingular.
    """

    U: np.ndarray = None
    V: np.ndarray = None
    W: np.ndarray = None
    r_e: int = 0
    r_b: int = 0
    E_t: np.ndarray = None
    A_t: np.ndarray = None
    B_t: np.ndarray = None
    C_t: np.ndarray = None

    kind = "BlockSplit"

    @property
    def parts(self):
        n = self.E_t.shape[0]
        return (n - self.r_b, self.r_e + self.r_b - n, n - self.r_e)

    @property
    def out_parts(self):
        n = self.E_t.shape[0]
        return (self.r_e + self.r_b - n, n - self.r_e)

    def sizes(self):
        a, b, c = self.parts
        return {"n_minus_rb": a, "re_plus_rb_minus_n": b, "n_minus_re": c, "r_e": self.r_e, "r_b": self.r_b}

    def E_blocks(self):
        return _split(self.E_t, self.parts, self.parts)

    def A_blocks(self):
        return _split(self.A_t, self.parts, self.parts)

    def B_blocks(self):
        return _split(self.B_t, self.parts, self.out_parts)

    def C_blocks(self):
        return _split(self.C_t, self.out_parts, self.parts)

    def transforms(self):
        return {"U": self.U, "V": self.V, "W": self.W}

    def reconstruct(self, sys):
        t = sys.transformed(self.U, self.V, self.W)
        return {"E": (t.E, self.E_t), "A": (t.A, self.A_t), "B": (t.B, self.B_t), "C": (t.C, self.C_t)}


def reduce_lemma3(sys, tol=DEFAULT_TOL):
    n, m = sys.n, sys.m
    if numerical_rank(np.vstack([sys.E, sys.C]), tol) != n:
        raise PreconditionError("rank [E; C] < n")
    r_c = numerical_rank(sys.C, tol)
    if r_c != m:
        raise PreconditionError(f"rank(C) = {r_c} < m = {m}; compress the outputs first")
    r_b = m
    U1, r_e = row_compress(sys.E, tol)
    V1, _ = col_compress(sys.E, tol, split=r_e)
    k = r_e + r_b - n  # middle block
    if k < 0:
        raise PreconditionError("rank(E) + rank(B) < n")
    B1 = U1 @ sys.B
    C1 = sys.C @ V1
    tol_B = tol.relative_to(_norm2(sys.B), max(sys.B.shape))
    tol_C = tol.relative_to(_norm2(sys.C), max(sys.C.shape))
    W, _ = col_compress(B1[r_e:], tol_B, nonzero="right", split=n - r_e)
    B2 = B1 @ W
    C2 = W.T @ C1
    B11_2 = B2[:r_e, :k]
    C11_2 = C2[:k, :r_e]
    U2, _ = row_compress(B11_2, tol_B, zeros="top", split=k)
    V2, _ = col_compress(C11_2, tol_C, nonzero="right", split=k)
    U = scipy.linalg.block_diag(U2, np.eye(n - r_e)) @ U1
    V = V1 @ scipy.linalg.block_diag(V2, np.eye(n - r_e))

    E_t = U @ sys.E @ V
    A_t = U @ sys.A @ V
    B_t = U @ sys.B @ W
    C_t = W.T @ sys.C @ V
    parts = (n - r_b, k, n - r_e)
    outp = (k, n - r_e)
    Eb = _split(E_t, parts, parts)
    Bb = _split(B_t, parts, outp)
    Cb = _split(C_t, outp, parts)
    zero = {
        "E13": _fro(Eb[0][2]), "E23": _fro(Eb[1][2]),
        "E31": _fro(Eb[2][0]), "E32": _fro(Eb[2][1]), "E33": _fro(Eb[2][2]),
        "B11": _fro(Bb[0][0]), "B31": _fro(Bb[2][0]),
        "C11": _fro(Cb[0][0]), "C13": _fro(Cb[0][2]),  # C13: pH consequence
    }
    nonsing = {
        "E11": _nonsingular(Eb[0][0], tol),
        "B21": _nonsingular(Bb[1][0], tol),
        "C12": _nonsingular(Cb[0][1], tol),
        "B32": _nonsingular(Bb[2][1], tol),
        "C23": _nonsingular(Cb[1][2], tol),
    }
    form = FormLemma3(
        zero_residuals=zero,
        nonsingular=nonsing,
        orthogonal={"U": U, "V": V, "W": W},
        U=U, V=V, W=W, r_e=r_e, r_b=r_b,
        E_t=E_t, A_t=A_t, B_t=B_t, C_t=C_t,
    )
    bad = form.singular_blocks()
    if bad:
        raise StructureError(f"block-split form has singular blocks: {', '.join(bad)}")
    return form


@dataclass(frozen=True)
class FormLemma4(_Form):
    """Refinement of :class:`FormLemma3` by nonorthogonal ``X, Y`` and
    orthogonal ``Z``, ``Zc`` (row/column compression of the trailing ``A``
    block) and ``Wc`` (compression of the trailing ``B`` block)."""

    lemma3: FormLemma3 = None
    X: np.ndarray = None
    Y: np.ndarray = None
    Z: np.ndarray = None
    Zc: np.ndarray = None
    Wc: np.ndarray = None
    mu: int = 0
    XEY: np.ndarray = None
    XAY: np.ndarray = None
    XBW: np.ndarray = None
    WCY: np.ndarray = None
    E_hat22: np.ndarray = None
    B_hat21: np.ndarray = None
    C_hat12: np.ndarray = None
    A_trail: np.ndarray = None  # Z [A22 A23; A32 A33] Zc
    B_trail: np.ndarray = None  # Z [B^21 B^22; 0 B32] Wc
    C_trail: np.ndarray = None  # Wc^T [C^12 0; C^22 C23] Zc

    kind = "BlockRefined"

    @property
    def m(self):
        return self.A_trail.shape[0]

    def sizes(self):
        return {**self.lemma3.sizes(), "mu": self.mu}

    @property
    def calA22(self):
        return self.A_trail[: self.mu, : self.mu]

    @property
    def calB21(self):
        return self.B_trail[: self.mu, : self.mu]

    @property
    def calC12(self):
        return self.C_trail[: self.mu, : self.mu]

    def transforms(self):
        return {"X": self.X, "Y": self.Y, "Z": self.Z, "Zc": self.Zc, "Wc": self.Wc}

    def reconstruct(self, sys):
        W = self.lemma3.W
        return {
            "E": (self.X @ sys.E @ self.Y, self.XEY),
            "A": (self.X @ sys.A @ self.Y, self.XAY),
            "B": (self.X @ sys.B @ W, self.XBW),
            "C": (W.T @ sys.C @ self.Y, self.WCY),
        }


def refine_lemma4(form, sys, tol=DEFAULT_TOL):
    n = sys.n
    a, k, c = form.parts
    m = k + c
    Eb = form.E_blocks()
    Bb = form.B_blocks()
    Cb = form.C_blocks()
    E11, E12, E21, E22 = Eb[0][0], Eb[0][1], Eb[1][0], Eb[1][1]
    B12, B21, B22, B32 = Bb[0][1], Bb[1][0], Bb[1][1], Bb[2][1]
    C12, C21, C22, C23 = Cb[0][1], Cb[1][0], Cb[1][1], Cb[1][2]

    tol_E = tol.relative_to(_norm2(form.E_t), n)
    Uc, _ = row_compress(np.vstack([E11, E21]), tol_E, split=a)
    Vc, _ = col_compress(np.hstack([E11, E12]), tol_E, split=a)
    Uc21, Uc22 = Uc[a:, :a], Uc[a:, a:]
    Vc12, Vc22 = Vc[:a, a:], Vc[a:, a:]
    E_hat22 = (Uc21 @ E12 + Uc22 @ E22) @ Vc22
    B_hat21 = Uc22 @ B21
    B_hat22 = Uc21 @ B12 + Uc22 @ B22
    C_hat12 = C12 @ Vc22
    C_hat22 = C21 @ Vc12 + C22 @ Vc22

    Lrow = np.eye(n)
    Lrow[a:a + k, :a + k] = np.hstack([Uc21, Uc22])
    Rcol = np.eye(n)
    Rcol[:a + k, a:a + k] = np.vstack([Vc12, Vc22])
    try:
        B12B32inv = np.linalg.solve(B32.T, B12.T).T if c else np.zeros((a, 0))
        C23invC21 = np.linalg.solve(C23, C21) if c else np.zeros((0, a))
    except np.linalg.LinAlgError as exc:
        raise StructureError("B32 or C23 singular") from exc
    Xe = np.eye(n)
    Xe[:a, a + k:] = -B12B32inv
    Ye = np.eye(n)
    Ye[a + k:, :a] = -C23invC21
    X = Xe @ Lrow @ form.U
    Y = form.V @ Rcol @ Ye

    XEY = X @ sys.E @ Y
    XAY = X @ sys.A @ Y
    XBW = X @ sys.B @ form.W
    WCY = form.W.T @ sys.C @ Y

    A_mid = (Lrow @ form.A_t @ Rcol)[a:, a:]
    tol_A = tol.relative_to(_norm2(form.A_t), n)
    Z, mu = row_compress(A_mid, tol_A)
    Zc, _ = col_compress(A_mid, tol_A, split=mu)
    Bblk = np.block([[B_hat21, B_hat22], [np.zeros((c, k)), B32]])
    Cblk = np.block([[C_hat12, np.zeros((k, c))], [C_hat22, C23]])
    ZB = Z @ Bblk
    Wc, _ = col_compress(ZB[mu:], tol.relative_to(_norm2(Bblk), n), nonzero="right", split=m - mu)
    A_trail = Z @ A_mid @ Zc
    B_trail = ZB @ Wc
    C_trail = Wc.T @ Cblk @ Zc

    parts = (a, k, c)
    Xb = _split(XEY, parts, parts)
    XBb = _split(XBW, parts, (k, c))
    WCb = _split(WCY, (k, c), parts)
    zero = {
        "XEY_offdiag": _fro_outside(XEY, (slice(0, a), slice(0, a)), (slice(a, a + k), slice(a, a + k))),
        "XBW_row1": _fro(XBb[0][0]) + _fro(XBb[0][1]),
        "XBW_31": _fro(XBb[2][0]),
        "WCY_col1": _fro(WCb[0][0]) + _fro(WCb[1][0]),
        "WCY_13": _fro(WCb[0][2]),
        "A_trail_outside": _fro_outside(A_trail, (slice(0, mu), slice(0, mu))),
        "B_trail_21": _fro(B_trail[mu:, :mu]),
        "C_trail_12": _fro(C_trail[:mu, mu:]),  # forced zero of the refinement
    }
    nonsing = {
        "U22": _nonsingular(Uc22, tol),
        "V22": _nonsingular(Vc22, tol),
        "B_hat21": _nonsingular(B_hat21, tol),
        "C_hat12": _nonsingular(C_hat12, tol),
        "calA22": _nonsingular(A_trail[:mu, :mu], tol),
        "calB21": _nonsingular(B_trail[:mu, :mu], tol),
        "calB32": _nonsingular(B_trail[mu:, mu:], tol),
        "calC12": _nonsingular(C_trail[:mu, :mu], tol),
        "calC23": _nonsingular(C_trail[mu:, mu:], tol),
    }
    conds = {"X": _cond(X), "Y": _cond(Y)}
    warn = tuple(f"cond({k_}) = {v:.3g} exceeds {COND_WARN:g}" for k_, v in conds.items() if v > COND_WARN)
    for w in warn:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    out = FormLemma4(
        zero_residuals=zero,
        nonsingular=nonsing,
        orthogonal={"Uc": Uc, "Vc": Vc, "Z": Z, "Zc": Zc, "Wc": Wc},
        conditions=conds,
        warnings=warn,
        lemma3=form, X=X, Y=Y, Z=Z, Zc=Zc, Wc=Wc, mu=mu,
        XEY=XEY, XAY=XAY, XBW=XBW, WCY=WCY,
        E_hat22=E_hat22, B_hat21=B_hat21, C_hat12=C_hat12,
        A_trail=A_trail, B_trail=B_trail, C_trail=C_trail,
    )
    bad = out.singular_blocks()
    if bad:
        raise StructureError(f"refined block form has singular blocks: {', '.join(bad)}")
    return out


@dataclass(frozen=True)
class FormTheorem3(_Form):
    """Real Schur form ``A_hat = P core P^T`` of ``core = calB21^{-1} calA22 calC12^{-1}``
    with the purely imaginary eigenvalues ordered first, and the resulting
    nonorthogonal ``X_hat, Y_hat``."""

    lemma4: FormLemma4 = None
    P: np.ndarray = None
    core: np.ndarray = None
    A_hat: np.ndarray = None
    k: int = 0
    t: tuple = ()
    X_hat: np.ndarray = None
    Y_hat: np.ndarray = None

    kind = "SchurCore"

    @property
    def mu(self):
        return self.lemma4.mu

    @property
    def D(self):
        return self.A_hat[2 * self.k:, 2 * self.k:]

    @property
    def skew(self):
        return self.mu > 0 and 2 * self.k == self.mu

    def sizes(self):
        return {**self.lemma4.sizes(), "k": self.k}

    @property
    def P_full(self):
        return scipy.linalg.block_diag(self.P, np.eye(self.lemma4.m - self.mu))

    def transforms(self):
        return {"P": self.P, "X_hat": self.X_hat, "Y_hat": self.Y_hat}

    def reconstruct(self, sys):
        return {"A_hat": (self.P @ self.core @ self.P.T, self.A_hat)}


def schur_stage(form, tol=DEFAULT_TOL, imag_tol=1e-8):
    l4 = form
    mu, m = l4.mu, l4.m
    a = l4.X.shape[0] - m
    if mu == 0:
        P = np.eye(0)
        core = np.zeros((0, 0))
        A_hat = core
        k = 0
        t = ()
    else:
        try:
            core = stable_triple_product(l4.calB21, l4.calA22, l4.calC12, tol)
        except SingularBlock as exc:
            raise StructureError(f"core factor {exc.name} singular") from exc
        scale = max(np.linalg.norm(core, 2), 1e-300)

        def imaginary(re, im):
            return abs(re) <= imag_tol * scale

        P, A_hat, sdim = real_schur(core, sort=imaginary)
        k = sdim // 2
        t = tuple(float(A_hat[2 * i, 2 * i + 1]) for i in range(k))

    Bfull = l4.B_trail
    Cfull = l4.C_trail
    Pf = scipy.linalg.block_diag(P, np.eye(m - mu))
    Xh = scipy.linalg.block_diag(np.eye(a), Pf @ np.linalg.solve(Bfull, l4.Z)) @ l4.X
    Yh = l4.Y @ scipy.linalg.block_diag(np.eye(a), l4.Zc @ np.linalg.solve(Cfull, Pf.T))

    zero = {}
    if mu:
        sym = A_hat + A_hat.T
        lam = float(np.linalg.eigvalsh(0.5 * sym)[-1])
        zero["A_hat_sym_positive_part"] = max(lam, 0.0)
        sub = np.abs(np.diag(A_hat, -1))
        # quasi-triangular: nothing below the subdiagonal, no two adjacent 2x2 couplings
        zero["A_hat_below_quasi"] = _fro(np.tril(A_hat, -2)) + float(np.sum(np.minimum(sub[1:], sub[:-1])))
        zero["T_coupling"] = _fro(A_hat[: 2 * k, 2 * k:])
        if lam > imag_tol * max(np.linalg.norm(A_hat, 2), 1e-300):
            raise StructureError(f"A_hat + A_hat^T is not negative semidefinite (max eig {lam:.3g})")
    conds = {"X_hat": _cond(Xh), "Y_hat": _cond(Yh)}
    warn = tuple(f"cond({k_}) = {v:.3g} exceeds {COND_WARN:g}" for k_, v in conds.items() if v > COND_WARN)
    return FormTheorem3(
        zero_residuals=zero,
        nonsingular={"A_hat": _nonsingular(A_hat, tol)} if mu else {},
        orthogonal={"P": P} if mu else {},
        conditions=conds,
        warnings=warn,
        lemma4=l4, P=P, core=core, A_hat=A_hat, k=k, t=t, X_hat=Xh, Y_hat=Yh,
    )


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def q_pattern_residuals(form, Q):
    """Norms of the blocks of the transformed ``Q`` that pH structure forces to
    vanish.  Only for verification; no construction uses ``Q``."""
    Q = np.asarray(Q, dtype=float)
    if isinstance(form, FormEABC0):
        Qb = _split(form.U @ Q @ form.V, form.parts, form.parts)
        return {"Q12": _fro(Qb[0][1]), "Q13": _fro(Qb[0][2]), "Q23": _fro(Qb[1][2])}
    if isinstance(form, FormLemma3):
        Qb = _split(form.U @ Q @ form.V, form.parts, form.parts)
        return {"Q13": _fro(Qb[0][2]), "Q21": _fro(Qb[1][0]), "Q23": _fro(Qb[1][2])}
    if isinstance(form, FormLemma4):
        parts = form.lemma3.parts
        Qb = _split(np.linalg.solve(form.X.T, Q @ form.Y), parts, parts)
        return {
            "Q12": _fro(Qb[0][1]), "Q13": _fro(Qb[0][2]), "Q21": _fro(Qb[1][0]),
            "Q23": _fro(Qb[1][2]), "Q31": _fro(Qb[2][0]),
        }
    if isinstance(form, FormTheorem3):
        m = form.lemma4.m
        Qt = np.linalg.solve(form.X_hat.T, Q @ form.Y_hat)
        a = Qt.shape[0] - m
        return {
            "offdiag": _fro(Qt[:a, a:]) + _fro(Qt[a:, :a]),
            "trailing_minus_I": _fro(Qt[a:, a:] - np.eye(m)),
        }
    raise TypeError(f"no Q pattern for {type(form).__name__}")


def form_summary(form, sys=None):
    """JSON-ready digest of a form: sizes, residuals, defects, conditions."""
    out = {
        "form": form.kind,
        "sizes": form.sizes(),
        "zero_residuals": dict(form.zero_residuals),
        "nonsingular": {k: {"rank": r, "size": s} for k, (r, s) in form.nonsingular.items()},
        "orthogonality_defects": form.orthogonality_defects(),
        "condition_numbers": dict(form.conditions),
        "warnings": list(form.warnings),
    }
    if sys is not None:
        out["reconstruction"] = {k: _fro(a - b) for k, (a, b) in form.reconstruct(sys).items()}
    if isinstance(form, FormDerivStaircase):
        out["con2_blocks"] = dict(form.con2_blocks)
    if isinstance(form, FormTheorem3):
        out["t"] = list(form.t)
    return out
