import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phreg import (
    DescriptorSystem,
    PHRealization,
    closed_loop,
    hamiltonian_of,
    random_ph_system,
    validate_ph,
)
from phreg.errors import DimensionError, InfeasibleRequest, PHRegError
from phreg.sysmodel import PH_CONDITIONS, compress_outputs


def canonical(R=None):
    B = np.array([[1.0], [2.0]])
    R = np.eye(2) if R is None else R
    sys = DescriptorSystem(np.eye(2), -R, B, B.T)
    real = PHRealization(np.zeros((2, 2)), R, np.eye(2), B, np.zeros((2, 1)))
    return sys, real


class TestDescriptorSystem:
    def test_dimensions(self):
        s = DescriptorSystem(np.eye(3), np.eye(3), np.ones((3, 2)), np.ones((2, 3)))
        assert (s.n, s.m) == (3, 2)

    def test_vector_inputs_are_reshaped(self):
        s = DescriptorSystem(np.eye(2), np.eye(2), [1.0, 0.0], [0.0, 1.0])
        assert s.B.shape == (2, 1) and s.C.shape == (1, 2)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            DescriptorSystem(np.eye(2), np.eye(3), np.ones((2, 1)), np.ones((1, 2)))
        with pytest.raises(DimensionError):
            DescriptorSystem(np.eye(2), np.eye(2), np.ones((2, 1)), np.ones((2, 2)))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            DescriptorSystem(np.eye(2), np.eye(2), np.array([[np.nan], [0.0]]), np.ones((1, 2)))

    def test_immutable(self):
        s = DescriptorSystem(np.eye(2), np.eye(2), np.ones((2, 1)), np.ones((1, 2)))
        with pytest.raises(ValueError):
            s.E[0, 0] = 5.0

    def test_zero_outputs_allowed(self):
        s = DescriptorSystem(np.eye(2), np.eye(2), np.zeros((2, 0)), np.zeros((0, 2)))
        assert s.m == 0


class TestValidate:
    def test_canonical_dissipative(self):
        rep = validate_ph(*canonical())
        assert rep.verdict
        assert set(rep.residuals) == set(PH_CONDITIONS)
        assert rep.rank_B == rep.rank_C == 1

    def test_negative_R_flagged(self):
        rep = validate_ph(*canonical(R=-np.eye(2)))
        assert not rep.verdict
        assert "sym_psd_QtRQ" in rep.failed
        assert "psd_dissipation" in rep.failed

    def test_broken_C(self):
        sys, real = canonical()
        bad = DescriptorSystem(sys.E, sys.A, sys.B, 2 * sys.C)
        rep = validate_ph(bad, real)
        assert {"C_structure", "C_minus_BtQ"} <= set(rep.failed)

    def test_dimension_error(self):
        sys, real = canonical()
        bad = PHRealization(real.J, real.R, np.eye(3), real.G, real.P)
        with pytest.raises(DimensionError):
            validate_ph(sys, bad)

    def test_worked_example(self, worked):
        assert validate_ph(*worked).verdict


class TestHamiltonian:
    def test_identity(self):
        H = hamiltonian_of(*canonical())
        np.testing.assert_array_equal(H.gram, np.eye(2))
        assert H([1.0, 2.0]) == pytest.approx(2.5)

    def test_singular_E(self, worked):
        np.testing.assert_array_equal(hamiltonian_of(*worked).gram, np.diag([1.0, 0.0]))

    def test_rejects_invalid(self):
        with pytest.raises(PHRegError):
            hamiltonian_of(*canonical(R=-np.eye(2)))

    def test_generator_gram(self):
        sys, real = random_ph_system(5, 2, 3, 2, seed=4)
        H = hamiltonian_of(sys, real)
        lam = np.linalg.eigvalsh(H.gram)
        assert lam[0] >= -1e-10 * lam[-1]
        assert np.linalg.matrix_rank(H.gram, tol=1e-9 * lam[-1]) == np.linalg.matrix_rank(real.Q.T @ sys.E)


class TestGenerator:
    def test_small_valid(self):
        assert validate_ph(*random_ph_system(2, 1, 2, 0, seed=0)).verdict

    def test_zero_E(self):
        sys, real = random_ph_system(3, 1, 0, 1, seed=1)
        np.testing.assert_array_equal(sys.E, 0.0)
        np.testing.assert_array_equal(hamiltonian_of(sys, real).gram, 0.0)

    def test_deterministic(self):
        a = random_ph_system(4, 2, 3, 1, seed=11)
        b = random_ph_system(4, 2, 3, 1, seed=11)
        for x, y in zip(a, b):
            for name in x.__dataclass_fields__:
                np.testing.assert_array_equal(getattr(x, name), getattr(y, name))

    @pytest.mark.parametrize("args", [(4, 2, 5, 0), (4, 2, 1, -1), (3, 0, 1, 1)])
    def test_infeasible(self, args):
        with pytest.raises(InfeasibleRequest):
            random_ph_system(*args)

    def test_singular_Q_mode(self):
        sys, real = random_ph_system(5, 2, 3, 2, seed=3, singular_Q=True, rank_Q=3)
        assert np.linalg.matrix_rank(real.Q) == 3
        assert np.linalg.norm(real.P) > 0
        assert np.linalg.matrix_rank(sys.E) == 3
        assert validate_ph(sys, real).verdict


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(1, 10),
    m=st.integers(1, 4),
    data=st.data(),
    singular_Q=st.booleans(),
    seed=st.integers(0, 2**31 - 1),
)
def test_generator_always_valid(n, m, data, singular_Q, seed):
    if singular_Q and n < 2:
        singular_Q = False
    rank_R = data.draw(st.integers(0, n))
    if singular_Q:
        q = data.draw(st.integers(0, n - 1))
        rank_E = data.draw(st.integers(0, n))
        sys, real = random_ph_system(n, m, rank_E, rank_R, seed=seed, singular_Q=True, rank_Q=q)
    else:
        rank_E = data.draw(st.integers(0, n))
        sys, real = random_ph_system(n, m, rank_E, rank_R, seed=seed)
    rep = validate_ph(sys, real, tol=1e-10)
    assert rep.verdict, rep.failed
    assert np.linalg.matrix_rank(sys.E, tol=1e-9 * max(np.linalg.norm(sys.E), 1)) == rank_E
    # power balance in matrix form: Q^T A + A^T Q = -2 sym(Q^T R Q), Q^T J Q skew
    QRQ = real.Q.T @ real.R @ real.Q
    lhs = real.Q.T @ sys.A + sys.A.T @ real.Q
    np.testing.assert_allclose(lhs, -(QRQ + QRQ.T), atol=1e-9 * max(1.0, np.linalg.norm(lhs)))
    QJQ = real.Q.T @ real.J @ real.Q
    np.testing.assert_allclose(QJQ, -QJQ.T, atol=1e-12 * max(1.0, np.linalg.norm(QJQ)))
    # rank(C) <= rank(B) for validated systems
    assert rep.rank_C <= rep.rank_B


class TestClosedLoop:
    def test_proportional_updates_R(self, worked):
        sys, real = worked
        F = np.array([[-2.0]])
        cl, cl_real = closed_loop(sys, real, F=F)
        np.testing.assert_allclose(cl.A, [[0.0, 1.0], [-1.0, -2.0]])
        np.testing.assert_allclose(cl_real.R, np.diag([0.0, 2.0]))
        assert validate_ph(cl, cl_real).verdict

    def test_derivative(self, worked):
        sys, real = worked
        cl, _ = closed_loop(sys, real, K=np.array([[3.0]]))
        np.testing.assert_allclose(cl.E, np.diag([1.0, 3.0]))


class TestCompressOutputs:
    def test_full_rank_identity(self, worked):
        red, _, book = compress_outputs(worked[0])
        assert book.identity
        assert red is worked[0]

    def test_duplicated_output(self):
        sys, real = random_ph_system(4, 2, 2, 1, seed=9)
        # duplicate the input/output channel: B -> [B1 B1], C -> [C1; C1]
        G = np.hstack([real.G[:, :1], real.G[:, :1]])
        P = np.zeros_like(G)
        B = G
        C = B.T @ real.Q
        dup = DescriptorSystem(sys.E, sys.A, B, C)
        dreal = PHRealization(real.J, real.R, real.Q, G, P)
        red, rreal, book = compress_outputs(dup, dreal)
        assert red.m == 1
        assert validate_ph(red, rreal).verdict
        Kr = np.array([[0.7]])
        full, _ = closed_loop(dup, K=book.lift(Kr), F=book.lift(-Kr))
        small, _ = closed_loop(red, K=Kr, F=-Kr)
        np.testing.assert_allclose(full.E, small.E, atol=1e-13)
        np.testing.assert_allclose(full.A, small.A, atol=1e-13)

    def test_zero_C(self):
        sys = DescriptorSystem(np.eye(2), -np.eye(2), np.zeros((2, 1)), np.zeros((1, 2)))
        red, _, book = compress_outputs(sys)
        assert red.m == 0
        assert book.lift(np.zeros((0, 0))).shape == (1, 1)
