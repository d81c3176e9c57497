"""Output feedback that makes a pH descriptor system regular with index at most one.

Three feedback families are covered:

* proportional ``u = F y + v``, closed loop ``(E, A + B F C)``;
* derivative ``u = -K y' + v``, closed loop ``(E + B K C, A)``;
* both at once, closed loop ``(E + B K C, A + B F C)``.

Every synthesized feedback is checked independently by :func:`verify_closed_loop`
before it is returned.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .analysis import (
    analyze_pencil,
    check_con1,
    check_con2,
    check_r1,
    is_completely_observable,
    max_derivative_rank,
)
from .condense import (
    reduce_deriv_staircase,
    reduce_eabc0,
    reduce_lemma3,
    refine_lemma4,
    schur_stage,
)
from .errors import (
    CON1Failed,
    CON2Failed,
    ObservabilityFailed,
    ParityViolated,
    R1Failed,
    RankInfeasible,
    SynthesisExhausted,
    VerificationFailed,
)
from .matops import DEFAULT_TOL, numerical_rank
from .sysmodel import closed_loop, compress_outputs, validate_ph

__all__ = [
    "VerificationReport",
    "FeedbackSynthesis",
    "verify_closed_loop",
    "precompress_outputs",
    "regularize_proportional",
    "regularize_derivative",
    "regularize_derivative_with_rank",
    "regularize_combined",
]


@dataclass
class VerificationReport:
    regular: bool
    index: Optional[int]
    rank_E: int
    finite_eig_count: Optional[int]
    target_rank: Optional[int] = None
    ph_preserved: Optional[bool] = None  # None when no realization was supplied
    ph_residuals: dict = field(default_factory=dict)
    symmetric_K: Optional[bool] = None
    psd_K: Optional[bool] = None
    require_psd_K: bool = False

    @property
    def rank_closed_E(self):
        return self.rank_E

    @property
    def residuals(self):
        return self.ph_residuals

    @property
    def success(self):
        ok = self.regular and self.index is not None and self.index <= 1
        ok = ok and self.finite_eig_count == self.rank_E
        if self.target_rank is not None:
            ok = ok and self.rank_E == self.target_rank
        ok = ok and self.ph_preserved is not False and self.symmetric_K is not False
        return bool(ok and not (self.require_psd_K and self.psd_K is False))

    def failures(self):
        out = []
        if not self.regular:
            out.append("closed loop is singular")
        elif self.index is None or self.index > 1:
            out.append(f"closed-loop index {self.index} > 1")
        elif self.finite_eig_count != self.rank_E:
            out.append("finite eigenvalue count differs from rank(E)")
        if self.target_rank is not None and self.rank_E != self.target_rank:
            out.append(f"rank {self.rank_E} differs from target {self.target_rank}")
        if self.ph_preserved is False:
            bad = [k for k, v in self.ph_residuals.items() if v > 1e-8]
            out.append("pH structure lost: " + ", ".join(bad))
        if self.symmetric_K is False:
            out.append("K is not symmetric")
        if self.require_psd_K and self.psd_K is False:
            out.append("K is not positive semidefinite")
        return out


@dataclass
class FeedbackSynthesis:
    mode: str
    F: Optional[np.ndarray]
    K: Optional[np.ndarray]
    verification: VerificationReport
    target_rank: Optional[int] = None
    forms: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def achieved_rank(self):
        return self.verification.rank_E


def verify_closed_loop(
    sys, real=None, F=None, K=None, target_rank=None, tol=DEFAULT_TOL, ph_tol=1e-8, require_psd_K=False
):
    """Analyse ``(E + BKC, A + BFC)`` from scratch and, given a realization,
    re-validate pH structure with ``R`` replaced by ``R - B F B^T``.

    ``psd_K`` is always reported; it only affects ``success`` when
    ``require_psd_K`` is set.  Structure preservation itself needs
    ``(E + BKC)^T Q >= 0``, which the pH validation covers.
    """
    cl, cl_real = closed_loop(sys, real, F=F, K=K)
    rep = analyze_pencil(cl.E, cl.A, tol)
    sym_K = psd_K = None
    if K is not None:
        kscale = max(np.linalg.norm(K), 1.0)
        sym_K = bool(np.linalg.norm(K - K.T) <= 1e-10 * kscale)
        psd_K = bool(K.size == 0 or np.linalg.eigvalsh(0.5 * (K + K.T))[0] >= -ph_tol * kscale)
    ph, res = None, {}
    if cl_real is not None:
        v = validate_ph(cl, cl_real, ph_tol)
        ph, res = v.verdict, v.residuals
    return VerificationReport(
        regular=rep.regular,
        index=rep.index,
        rank_E=rep.rank_E,
        finite_eig_count=rep.finite_eig_count,
        target_rank=target_rank,
        ph_preserved=ph,
        ph_residuals=res,
        symmetric_K=sym_K,
        psd_K=psd_K,
        require_psd_K=require_psd_K,
    )


def _finish(mode, sys, real, F, K, target, forms, notes, tol):
    rep = verify_closed_loop(sys, real, F=F, K=K, target_rank=target, tol=tol)
    if not rep.success:
        raise VerificationFailed(f"{mode} feedback failed verification: " + "; ".join(rep.failures()), rep, forms)
    return FeedbackSynthesis(mode, F, K, rep, target, forms, notes)


def precompress_outputs(sys, real=None, tol=DEFAULT_TOL):
    """Reduce to ``rank(C)`` outputs.  Returns ``(sys', real', bookkeeping)``;
    ``bookkeeping.lift`` maps a reduced ``F`` or ``K`` back to full size."""
    return compress_outputs(sys, real, tol)


# --------------------------------------------------------------------------
# proportional feedback
# --------------------------------------------------------------------------


def regularize_proportional(sys, real=None, tol=DEFAULT_TOL, f22_scale=1.0):
    """``F = -W diag(0, f I) W^T`` acting on the outputs that see ``ker E``.

    ``f22_scale`` (``f > 0``) is the gain; any positive value works because it
    only adds dissipation.
    """
    if f22_scale <= 0:
        raise ValueError("f22_scale must be positive")
    verdict = check_con1(sys, tol)
    if not verdict.holds:
        raise CON1Failed(f"con-1 fails (rank {verdict.rank('rank_con1')} < n = {sys.n})", verdict)
    form = reduce_eabc0(sys, tol)
    n3 = form.n3
    D = np.zeros((sys.m, sys.m))
    if n3:
        D[-n3:, -n3:] = f22_scale * np.eye(n3)
    F = -form.W @ D @ form.W.T
    F = 0.5 * (F + F.T)
    return _finish("proportional", sys, real, F, None, None, [form], {"f22_scale": f22_scale}, tol)


# --------------------------------------------------------------------------
# derivative feedback, maximal rank
# --------------------------------------------------------------------------


def regularize_derivative(sys, real=None, tol=DEFAULT_TOL, seed=0, trials=32, steps=16):
    """Symmetric psd ``K`` with ``rank(E + BKC) = rank [E; C]`` and index <= 1.

    ``K = eps X X^T`` with random ``X``; ``eps`` shrinks geometrically until
    ``E11 + B1 K C1`` is nonsingular and the closed loop verifies.
    """
    verdict = check_con2(sys, tol)
    if not verdict.holds:
        raise CON2Failed(
            f"con-2 fails (ranks {verdict.rank('rank_left')}, {verdict.rank('rank_right')}, n = {sys.n})", verdict
        )
    form = reduce_deriv_staircase(sys, tol)
    target = max_derivative_rank(sys, tol)
    m = sys.m
    Z = np.zeros((m, m))
    first = verify_closed_loop(sys, real, K=Z, target_rank=target, tol=tol, require_psd_K=True)
    if first.success:
        return FeedbackSynthesis("derivative", None, Z, first, target, [form], {"trial": 0, "eps": 0.0})

    E11, B1, C1 = form.E11, form.B1, form.C1
    n1 = E11.shape[0]
    base = max(np.linalg.norm(sys.E), 1.0) / max(np.linalg.norm(sys.B) * np.linalg.norm(sys.C), 1e-300)
    rng = np.random.default_rng(seed)
    for trial in range(1, trials + 1):
        X = rng.standard_normal((m, m))
        K0 = X @ X.T
        K0 *= base / max(np.linalg.norm(K0), 1e-300)
        for step in range(steps):
            K = K0 * 10.0 ** (-step)
            if numerical_rank(E11 + B1 @ K @ C1, tol) < n1:
                continue
            rep = verify_closed_loop(sys, real, K=K, target_rank=target, tol=tol, require_psd_K=True)
            if rep.success:
                notes = {"trial": trial, "eps": 10.0 ** (-step), "seed": seed}
                return FeedbackSynthesis("derivative", None, K, rep, target, [form], notes)
    raise SynthesisExhausted(f"no admissible K after {trials} draws of {steps} scales")


# --------------------------------------------------------------------------
# derivative feedback with prescribed rank, and the combined feedback
# --------------------------------------------------------------------------


def _chain(sys, real, tol):
    if not is_completely_observable(sys, tol):
        raise ObservabilityFailed("system is not completely observable")
    red, red_real, book = compress_outputs(sys, real, tol)
    l3 = reduce_lemma3(red, tol)
    l4 = refine_lemma4(l3, red, tol)
    t3 = schur_stage(l4, tol)
    return red, red_real, book, [l3, l4, t3]


def _try_trivial(mode, sys, real, with_F, r, forms, tol):
    """Zero feedback, returned when the open loop already meets the target."""
    Z = np.zeros((sys.m, sys.m))
    F = Z if with_F else None
    rep = verify_closed_loop(sys, real, F=F, K=Z, target_rank=r, tol=tol)
    if rep.success:
        return FeedbackSynthesis(mode, F, Z.copy(), rep, r, forms, {"trivial": True})
    return None


def _K11_table(mu, k, j):
    """Rank-``j`` diagonal 0/1 pattern for the leading ``mu``-block.

    Unit entries go on the leading Schur coordinates; an odd ``j`` inside the
    imaginary part puts its last unit on the trailing coordinate, which lies in
    the strictly dissipative part.
    """
    d = np.zeros(mu)
    if j % 2 == 1 and j < 2 * k:
        d[: j - 1] = 1.0
        d[-1] = 1.0
    else:
        d[:j] = 1.0
    return np.diag(d)


def _assemble_K(t3, Kblock):
    """Lift a trailing-block pattern into a reduced-output ``K``.

    With ``Kblock`` placed after the Schur change of basis and the correction
    ``-B_hat21^{-1} E_hat22 C_hat12^{-1}`` cancelling ``E_hat22``,
    ``X_hat (E + B K C) Y_hat = diag(E11, Kblock)``.
    """
    l4 = t3.lemma4
    l3 = l4.lemma3
    kmid = l3.out_parts[0]
    m = l4.m
    Pf = t3.P_full
    inner = l4.Wc @ Pf.T @ Kblock @ Pf @ l4.Wc.T
    if kmid:
        corr = -np.linalg.solve(l4.B_hat21, np.linalg.solve(l4.C_hat12.T, l4.E_hat22.T).T)
        inner[:kmid, :kmid] += corr
    K = l3.W @ inner @ l3.W.T
    return 0.5 * (K + K.T), m


def _block_residual(t3, sys, K):
    """Distance of ``X_hat (E + B K C) Y_hat`` from ``diag(*, Kblock)`` off its diagonal blocks."""
    M = t3.X_hat @ (sys.E + sys.B @ K @ sys.C) @ t3.Y_hat
    a = M.shape[0] - t3.lemma4.m
    return float(np.linalg.norm(M[:a, a:]) + np.linalg.norm(M[a:, :a]))


def regularize_derivative_with_rank(sys, real=None, r=None, tol=DEFAULT_TOL):
    """Derivative feedback with ``rank(E + BKC) = r`` and index <= 1.

    Requires complete observability.  Feasible ranks are
    ``n - mu <= r <= n``, with ``n - r`` even when the core block is skew.
    The returned ``K`` is symmetric.  It is indefinite whenever ``r`` is
    below ``rank(E)``: part of ``K`` cancels a block of ``E``.  The closed loop
    still satisfies ``(E + BKC)^T Q >= 0``.
    """
    n = sys.n
    if r is None:
        r = n
    verdict = check_r1(sys, r, tol)
    if not verdict.holds:
        feas = verdict.details["feasible_ranks"]
        lo, hi = verdict.feasible_rank_range
        if verdict.parity_constraint and lo <= r <= hi:
            raise ParityViolated(f"ParityViolated, n - r must be even; feasible ranks: {set(feas)}", verdict)
        raise R1Failed(f"R1Failed, feasible ranks: {set(feas)}", verdict)
    red, red_real, book, forms = _chain(sys, real, tol)
    trivial = _try_trivial("derivative", sys, real, False, r, forms, tol)
    if trivial is not None:
        return trivial
    t3 = forms[-1]
    mu, k = t3.mu, t3.k
    m = t3.lemma4.m
    j = r + mu - n
    if t3.skew and j % 2:
        raise ParityViolated(f"ParityViolated, n - r must be even; feasible ranks: {set(verdict.details['feasible_ranks'])}", verdict)
    Kblock = scipy.linalg.block_diag(_K11_table(mu, k, j), np.eye(m - mu))
    Kr, _ = _assemble_K(t3, Kblock)
    K = book.lift(Kr)
    notes = {
        "mu": mu,
        "k": k,
        "j": j,
        "block_residual": _block_residual(t3, red, Kr),
        "output_rank": m,
    }
    return _finish("derivative", sys, real, None, K, r, forms, notes, tol)


def regularize_combined(sys, real=None, r=None, tol=DEFAULT_TOL):
    """Proportional plus derivative feedback with ``rank(E + BKC) = r``.

    Any ``n - rank(B) <= r <= n`` is reachable: ``F = -I`` on the compressed
    outputs makes the trailing state block strictly dissipative, so a 0/1
    pattern of rank ``r - n + rank(B)`` there suffices.
    """
    n = sys.n
    if r is None:
        r = n
    r_b = numerical_rank(sys.B, tol)
    if not n - r_b <= r <= n:
        raise RankInfeasible(f"RankInfeasible, feasible ranks: {set(range(n - r_b, n + 1))}")
    red, red_real, book, forms = _chain(sys, real, tol)
    trivial = _try_trivial("combined", sys, real, True, r, forms, tol)
    if trivial is not None:
        return trivial
    t3 = forms[-1]
    m = t3.lemma4.m
    j = r - (n - m)
    d = np.zeros(m)
    d[:j] = 1.0
    Kr, _ = _assemble_K(t3, np.diag(d))
    K = book.lift(Kr)
    F = book.lift(-np.eye(m))
    notes = {"mu": t3.mu, "k": t3.k, "j": j, "block_residual": _block_residual(t3, red, Kr), "output_rank": m}
    return _finish("combined", sys, real, F, K, r, forms, notes, tol)
