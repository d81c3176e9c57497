import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phreg import (
    DescriptorSystem,
    PHRealization,
    analyze_pencil,
    check_con1,
    check_con2,
    check_r1,
    closed_loop,
    is_completely_observable,
    max_derivative_rank,
    precompress_outputs,
    random_ph_system,
    regularize_combined,
    regularize_derivative,
    regularize_derivative_with_rank,
    regularize_proportional,
    verify_closed_loop,
)
from phreg.errors import (
    CON1Failed,
    CON2Failed,
    ObservabilityFailed,
    ParityViolated,
    R1Failed,
    RankInfeasible,
)
from phreg.matops import numerical_rank


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def transform(sys, real, U, V):
    """(UEV, UAV, UB, CV) together with the matching realization."""
    s = DescriptorSystem(U @ sys.E @ V, U @ sys.A @ V, U @ sys.B, sys.C @ V)
    r = PHRealization(U @ real.J @ U.T, U @ real.R @ U.T, U @ real.Q @ V, U @ real.G, U @ real.P)
    return s, r


def independent_check(sys, syn):
    """Recompute the closed loop from the returned feedback alone."""
    cl, _ = closed_loop(sys, None, F=syn.F, K=syn.K)
    rep = analyze_pencil(cl.E, cl.A)
    assert rep.regular and rep.index <= 1
    assert rep.finite_eig_count == rep.rank_E
    if syn.target_rank is not None:
        assert rep.rank_E == syn.target_rank
    return rep


def observable_system(seed, n_max=7, m_max=3):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, min(m_max, n) + 1))
    rank_E = int(rng.integers(max(0, n - m), n + 1))
    rank_R = int(rng.integers(0, n + 1))
    return random_ph_system(n, m, rank_E, rank_R, seed=seed)


class TestProportional:
    def test_worked_example(self, worked):
        syn = regularize_proportional(*worked, f22_scale=2.5)
        np.testing.assert_allclose(syn.F, [[-2.5]], atol=1e-14)
        cl, _ = closed_loop(worked[0], None, F=syn.F)
        np.testing.assert_allclose(cl.A, [[0, 1], [-1, -2.5]], atol=1e-14)
        # det(sE - A_cl) = f s + 1: one finite eigenvalue at -1/f, index 1
        rep = independent_check(worked[0], syn)
        assert rep.index == 1 and rep.finite_eig_count == 1
        assert syn.verification.ph_preserved

    def test_nonsingular_E(self):
        sys, real = random_ph_system(4, 2, 4, 2, seed=3)
        syn = regularize_proportional(sys, real)
        np.testing.assert_array_equal(syn.F, 0.0)
        assert syn.verification.index == 0

    def test_con1_failure(self):
        sys = DescriptorSystem(np.diag([1.0, 0.0]), -np.diag([1.0, 0.0]), np.zeros((2, 1)), np.zeros((1, 2)))
        with pytest.raises(CON1Failed):
            regularize_proportional(sys)

    def test_bad_scale(self, worked):
        with pytest.raises(ValueError):
            regularize_proportional(*worked, f22_scale=0.0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_F_symmetric_nsd_and_sound(self, seed):
        sys, real = observable_system(seed)
        if not check_con1(sys).holds:
            return
        syn = regularize_proportional(sys, real)
        F = syn.F
        np.testing.assert_allclose(F, F.T, atol=1e-12)
        assert np.linalg.eigvalsh(F)[-1] <= 1e-12
        independent_check(sys, syn)
        assert syn.achieved_rank == numerical_rank(sys.E)
        assert syn.verification.ph_preserved


class TestDerivative:
    def test_scalar(self):
        sys = DescriptorSystem([[0.0]], [[-1.0]], [[1.0]], [[1.0]])
        real = PHRealization([[0.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]])
        syn = regularize_derivative(sys, real)
        assert syn.K[0, 0] > 0
        assert syn.achieved_rank == 1 and syn.verification.index == 0

    def test_nonsingular_E(self):
        sys, real = random_ph_system(3, 1, 3, 1, seed=5)
        syn = regularize_derivative(sys, real)
        np.testing.assert_array_equal(syn.K, 0.0)
        assert syn.achieved_rank == 3

    def test_worked_example(self, worked):
        syn = regularize_derivative(*worked)
        assert syn.achieved_rank == 2 and syn.verification.index == 0
        assert syn.K[0, 0] > 0

    def test_con2_failure(self):
        sys = DescriptorSystem(np.diag([1.0, 0.0]), -np.diag([1.0, 0.0]), np.zeros((2, 1)), np.zeros((1, 2)))
        with pytest.raises(CON2Failed):
            regularize_derivative(sys)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_psd_K_reaches_max_rank(self, seed):
        sys, real = observable_system(seed)
        if not check_con2(sys).holds:
            return
        syn = regularize_derivative(sys, real, seed=seed)
        K = syn.K
        np.testing.assert_allclose(K, K.T, atol=1e-12 * max(1, np.linalg.norm(K)))
        assert np.linalg.eigvalsh(K)[0] >= -1e-10 * max(1, np.linalg.norm(K))
        rep = independent_check(sys, syn)
        assert rep.rank_E == max_derivative_rank(sys)
        assert syn.verification.ph_preserved


class TestDerivativeWithRank:
    def test_worked_example(self, worked):
        syn = regularize_derivative_with_rank(*worked, r=2)
        assert syn.F is None and syn.achieved_rank == 2
        with pytest.raises(R1Failed, match=r"feasible ranks: \{2\}"):
            regularize_derivative_with_rank(*worked, r=1)

    def test_skew_parity(self, skew):
        with pytest.raises(ParityViolated):
            regularize_derivative_with_rank(*skew, r=1)
        for r in (0, 2):
            syn = regularize_derivative_with_rank(*skew, r=r)
            independent_check(skew[0], syn)
        syn = regularize_derivative_with_rank(*skew, r=2)
        assert numerical_rank(syn.K) == 2

    def test_skew_parity_brute_force(self, skew, rng):
        # rank-one psd K never gives an index <= 1 closed loop of rank 1
        sys = skew[0]
        for _ in range(300):
            x = rng.standard_normal((2, 1))
            cl, _ = closed_loop(sys, None, K=x @ x.T)
            rep = analyze_pencil(cl.E, cl.A)
            assert not (rep.regular and rep.index <= 1 and rep.rank_E == 1)

    def test_unobservable(self):
        sys = DescriptorSystem(np.eye(2), -np.eye(2), np.ones((2, 1)), np.array([[1.0, 0.0]]))
        with pytest.raises(ObservabilityFailed):
            regularize_derivative_with_rank(sys, r=2)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_every_feasible_rank(self, seed):
        sys, real = observable_system(seed)
        if not is_completely_observable(sys):
            return
        feasible = check_r1(sys, sys.n).details["feasible_ranks"]
        for r in range(sys.n + 1):
            if r in feasible:
                syn = regularize_derivative_with_rank(sys, real, r=r)
                independent_check(sys, syn)
                assert syn.verification.ph_preserved
                np.testing.assert_allclose(syn.K, syn.K.T, atol=1e-10 * max(1, np.linalg.norm(syn.K)))
            else:
                with pytest.raises((R1Failed, ParityViolated)):
                    regularize_derivative_with_rank(sys, real, r=r)


class TestCombined:
    def test_worked_example(self, worked):
        syn = regularize_combined(*worked, r=2)
        cl, _ = closed_loop(worked[0], None, F=syn.F, K=syn.K)
        assert cl.E[1, 1] > 0 and abs(cl.E[0, 1]) < 1e-14
        assert syn.verification.index == 0

    def test_identity_E(self):
        sys, real = random_ph_system(3, 2, 3, 1, seed=9)
        syn = regularize_combined(sys, real, r=3)
        np.testing.assert_array_equal(syn.K, 0.0)
        np.testing.assert_array_equal(syn.F, 0.0)

    def test_rank_infeasible(self, worked):
        with pytest.raises(RankInfeasible, match=r"\{1, 2\}"):
            regularize_combined(*worked, r=0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_whole_range(self, seed):
        sys, real = observable_system(seed)
        if not is_completely_observable(sys):
            return
        r_b = numerical_rank(sys.B)
        for r in range(sys.n - r_b, sys.n + 1):
            syn = regularize_combined(sys, real, r=r)
            independent_check(sys, syn)
            assert syn.verification.ph_preserved
        with pytest.raises(RankInfeasible):
            regularize_combined(sys, real, r=sys.n - r_b - 1)


class TestPrecompress:
    def test_identity_bookkeeping(self, worked):
        red, _, book = precompress_outputs(*worked)
        assert red.m == 1 and book.identity

    def test_duplicated_output(self, worked):
        sys, real = worked
        B2 = np.hstack([sys.B, sys.B]) / np.sqrt(2)
        dup = DescriptorSystem(sys.E, sys.A, B2, B2.T)
        dup_real = PHRealization(real.J, real.R, real.Q, B2, np.zeros((2, 2)))
        red, _, book = precompress_outputs(dup, dup_real)
        assert red.m == 1 and not book.identity
        syn = regularize_combined(dup, dup_real, r=2)
        Kr = book.T.T @ syn.K @ book.T
        a, _ = closed_loop(dup, None, F=syn.F, K=syn.K)
        b, _ = closed_loop(red, None, F=book.T.T @ syn.F @ book.T, K=Kr)
        np.testing.assert_allclose(a.E, b.E, atol=1e-14)
        np.testing.assert_allclose(a.A, b.A, atol=1e-14)

    def test_zero_output(self):
        sys = DescriptorSystem(np.eye(2), -np.eye(2), np.zeros((2, 1)), np.zeros((1, 2)))
        red, _, book = precompress_outputs(sys)
        assert red.m == 0
        np.testing.assert_array_equal(book.lift(np.zeros((0, 0))), np.zeros((1, 1)))


def test_invariance_under_orthogonal_change(rng):
    sys, real = random_ph_system(6, 2, 4, 3, seed=21)
    U, V = orthogonal(rng, 6), orthogonal(rng, 6)
    sys2, real2 = transform(sys, real, U, V)
    for fn, kw in [
        (regularize_proportional, {}),
        (regularize_derivative, {}),
        (regularize_combined, {"r": 5}),
        (regularize_derivative_with_rank, {"r": 6}),
    ]:
        a, b = fn(sys, real, **kw), fn(sys2, real2, **kw)
        assert a.achieved_rank == b.achieved_rank
        assert a.verification.index == b.verification.index
        assert a.verification.success and b.verification.success


def test_verify_reports_failure(worked):
    rep = verify_closed_loop(*worked, F=np.array([[1.0]]))
    assert not rep.success and any("pH" in f for f in rep.failures())
    rep = verify_closed_loop(*worked, K=np.array([[-1.0]]), require_psd_K=True)
    assert rep.psd_K is False and not rep.success
