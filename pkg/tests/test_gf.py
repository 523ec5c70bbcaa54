from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmpc import gf
from mmpc.errors import EvenField, NotInSpan, NotPrime, SingularMatrix, ZeroInverse

from .oracles import inv_scan, rank_mod

SMALL_PRIMES = (3, 5, 7, 11, 13, 101)


def matrices(q_values=SMALL_PRIMES, max_rows=5, max_cols=5):
    @st.composite
    def build(draw):
        q = draw(st.sampled_from(q_values))
        r = draw(st.integers(1, max_rows))
        c = draw(st.integers(1, max_cols))
        rows = draw(st.lists(st.lists(st.integers(0, q - 1), min_size=c, max_size=c), min_size=r, max_size=r))
        return q, np.array(rows, dtype=np.int64)

    return build()


class TestModulus:
    def test_accepts_odd_primes(self):
        for q in (3, 7, 101, gf.DEFAULT_Q):
            assert gf.check_modulus(q) == q

    def test_rejects_two(self):
        with pytest.raises(EvenField):
            gf.check_modulus(2)

    @pytest.mark.parametrize("q", [1, 9, 15, 2**31 + 11])
    def test_rejects_composites_and_oversize(self, q):
        with pytest.raises(NotPrime):
            gf.check_modulus(q)

    def test_is_prime_matches_scan(self):
        for n in range(200):
            assert gf.is_prime(n) == (n > 1 and all(n % d for d in range(2, n)))


class TestInverse:
    def test_identity_case(self):
        assert gf.ff_inv(1, 7) == 1

    def test_three_mod_seven(self):
        assert gf.ff_inv(3, 7) == inv_scan(3, 7) == 5

    def test_zero_raises(self):
        with pytest.raises(ZeroInverse):
            gf.ff_inv(0, 7)

    @given(st.sampled_from(SMALL_PRIMES).flatmap(lambda q: st.tuples(st.just(q), st.integers(1, q - 1))))
    def test_matches_scan(self, qa):
        q, a = qa
        assert gf.ff_inv(a, q) == inv_scan(a, q)

    @given(st.integers(1, gf.DEFAULT_Q - 1))
    def test_product_is_one(self, a):
        assert a * gf.ff_inv(a, gf.DEFAULT_Q) % gf.DEFAULT_Q == 1


class TestFieldElem:
    def test_arithmetic(self):
        F = gf.PrimeField(7)
        a, b = F(3), F(5)
        assert (a + b).value == 1
        assert (a - b).value == 5
        assert (a * b).value == 1
        assert (-a).value == 4
        assert a.inverse() == b
        assert int(F(-1)) == 6

    def test_mixed_moduli_rejected(self):
        with pytest.raises(ValueError):
            gf.FieldElem(1, 5) + gf.FieldElem(1, 7)


class TestRank:
    def test_identity(self):
        assert gf.ff_rank(np.eye(3, dtype=np.int64), 5) == 3

    def test_zero(self):
        assert gf.ff_rank(np.zeros((2, 4), dtype=np.int64), 5) == 0

    def test_sum_row(self):
        assert gf.ff_rank([[1, 1, 0], [0, 1, 1], [1, 2, 1]], 5) == 2

    @given(matrices())
    def test_matches_oracle(self, qm):
        q, m = qm
        r = gf.ff_rank(m, q)
        assert r == rank_mod(m.tolist(), q)
        assert 0 <= r <= min(m.shape)

    @given(matrices(), st.randoms(use_true_random=False))
    def test_invariant_under_permutation_and_scaling(self, qm, rnd):
        q, m = qm
        perm = list(range(m.shape[0]))
        rnd.shuffle(perm)
        scale = np.array([rnd.randrange(1, q) for _ in perm], dtype=np.int64)
        assert gf.ff_rank(m[perm] * scale[:, None] % q, q) == gf.ff_rank(m, q)

    def test_large_modulus(self):
        q = gf.DEFAULT_Q
        rng = np.random.default_rng(0)
        a = rng.integers(0, q, size=(6, 4))
        b = rng.integers(0, q, size=(4, 6))
        assert gf.ff_rank(gf.matmul(a, b, q), q) == 4


class TestMatmul:
    @settings(max_examples=50)
    @given(st.integers(1, 40), st.integers(0, 2**32))
    def test_no_overflow(self, k, seed):
        q = gf.DEFAULT_Q
        rng = np.random.default_rng(seed)
        a = rng.integers(q - 1000, q, size=(3, k))
        b = rng.integers(q - 1000, q, size=(k, 2))
        want = [[sum(int(a[i, t]) * int(b[t, j]) for t in range(k)) % q for j in range(2)] for i in range(3)]
        assert gf.matmul(a, b, q).tolist() == want


class TestRowspan:
    B = np.array([[1, 0, 2, 1], [0, 1, 1, 3], [0, 0, 1, 1]], dtype=np.int64)

    def test_basis_row_gives_unit_vector(self):
        c = gf.ff_solve_in_rowspan(self.B[:1], self.B, 7)
        assert c.tolist() == [[1, 0, 0]]

    def test_sum_of_two_rows(self):
        c = gf.ff_solve_in_rowspan((self.B[0] + self.B[1])[None] % 7, self.B, 7)
        assert c.tolist() == [[1, 1, 0]]

    def test_independent_target(self):
        with pytest.raises(NotInSpan) as exc:
            gf.ff_solve_in_rowspan([[1, 0, 2, 1], [0, 0, 0, 1]], self.B[:2], 7)
        assert exc.value.row == 1

    @given(matrices(max_rows=4, max_cols=5), st.integers(0, 2**32))
    def test_round_trip(self, qm, seed):
        q, basis = qm
        rng = np.random.default_rng(seed)
        coeffs = rng.integers(0, q, size=(3, basis.shape[0]))
        targets = gf.matmul(coeffs, basis, q)
        c = gf.ff_solve_in_rowspan(targets, basis, q)
        assert np.array_equal(gf.matmul(c, basis, q), targets)


class TestSolve:
    def test_solves_square_system(self):
        q = 101
        a = np.array([[2, 1], [1, 3]])
        x = gf.ff_solve(a, [5, 10], q)
        assert np.array_equal(gf.matmul(a, x, q), np.array([5, 10]))

    def test_singular(self):
        with pytest.raises(SingularMatrix):
            gf.ff_solve([[1, 2], [2, 4]], [1, 1], 7)

    def test_inverse_matrix(self):
        q = 13
        a = np.array([[1, 2, 3], [0, 1, 4], [5, 6, 0]])
        assert np.array_equal(gf.matmul(a, gf.ff_inv_matrix(a, q), q), np.eye(3, dtype=np.int64))

    def test_signs_to_field(self):
        assert gf.signs_to_field(np.array([1, -1, 1]), 7).tolist() == [1, 6, 1]
