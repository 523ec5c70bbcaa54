"""Exact arithmetic and linear algebra over a prime field F_q.

Matrices are plain ``numpy`` int64 arrays whose entries are kept in
``[0, q)``.  The modulus is limited to odd primes below 2**31 so that the
product of two reduced entries fits in a signed 64-bit integer; matrix
products split one operand into 16-bit halves so that accumulated sums
cannot overflow either.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import EvenField, NotInSpan, NotPrime, SingularMatrix, ZeroInverse

#: Default modulus, the Mersenne prime 2**31 - 1.
DEFAULT_Q = 2**31 - 1

_MAX_Q = 2**31
_SPLIT = 1 << 16


def is_prime(n: int) -> bool:
    """Trial-division primality test, adequate for moduli below 2**31."""
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    limit = int(n**0.5) + 1
    odd = np.arange(3, limit + 1, 2, dtype=np.int64)
    return not bool(np.any(n % odd == 0)) if odd.size else True


def check_modulus(q: int) -> int:
    """Validate a field modulus and return it as a Python int.

    Raises:
        EvenField: if ``q == 2``.
        NotPrime: if ``q`` is not prime or is too large for int64 products.
    """
    q = int(q)
    if q == 2:
        raise EvenField("q=2 is not allowed: the signs +1 and -1 coincide in characteristic 2")
    if q >= _MAX_Q:
        raise NotPrime(f"q={q} exceeds the supported range (q < 2**31)")
    if not is_prime(q):
        raise NotPrime(f"q={q} is not prime")
    return q


@dataclass(frozen=True)
class FieldElem:
    """A scalar of F_q. Mostly useful in tests and at API boundaries."""

    value: int
    q: int

    def __post_init__(self):
        object.__setattr__(self, "value", int(self.value) % self.q)

    def _coerce(self, other) -> int:
        if isinstance(other, FieldElem):
            if other.q != self.q:
                raise ValueError("field elements over different moduli")
            return other.value
        return int(other) % self.q

    def __add__(self, other):
        return FieldElem(self.value + self._coerce(other), self.q)

    __radd__ = __add__

    def __sub__(self, other):
        return FieldElem(self.value - self._coerce(other), self.q)

    def __rsub__(self, other):
        return FieldElem(self._coerce(other) - self.value, self.q)

    def __mul__(self, other):
        return FieldElem(self.value * self._coerce(other), self.q)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElem(-self.value, self.q)

    def inverse(self) -> FieldElem:
        return FieldElem(ff_inv(self.value, self.q), self.q)

    def __int__(self) -> int:
        return self.value


def ff_inv(a: int, q: int) -> int:
    """Multiplicative inverse of ``a`` modulo the prime ``q``.

    Raises:
        ZeroInverse: if ``a`` is congruent to zero.
    """
    a = int(a) % q
    if a == 0:
        raise ZeroInverse("0 has no multiplicative inverse")
    return pow(a, q - 2, q)


def as_field(m, q: int) -> np.ndarray:
    """Return a reduced int64 copy of ``m``."""
    return np.mod(np.asarray(m, dtype=np.int64), q)


def matmul(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """Matrix product modulo ``q`` without int64 overflow.

    Both operands must already be reduced into ``[0, q)``.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    inner = a.shape[-1] if a.ndim else 1
    if inner == 0:
        return np.zeros(a.shape[:-1] + b.shape[1:], dtype=np.int64)
    if (q - 1) * (q - 1) * inner < 2**63:
        return (a @ b) % q
    hi, lo = np.divmod(b, _SPLIT)
    return ((a @ hi % q) * _SPLIT + a @ lo) % q


def _eliminate(mat: np.ndarray, q: int, ncols: int | None = None) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form in place over the first ``ncols`` columns."""
    rows = mat.shape[0]
    ncols = mat.shape[1] if ncols is None else ncols
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        if r == rows:
            break
        nz = np.flatnonzero(mat[r:, c])
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            mat[[r, p]] = mat[[p, r]]
        lead = int(mat[r, c])
        if lead != 1:
            mat[r] = mat[r] * pow(lead, q - 2, q) % q
        factors = mat[:, c].copy()
        factors[r] = 0
        hit = np.flatnonzero(factors)
        if hit.size:
            mat[hit] = (mat[hit] - np.outer(factors[hit], mat[r]) % q) % q
        pivots.append(c)
        r += 1
    return mat, pivots


def rref(m, q: int) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form of ``m`` and its pivot columns."""
    return _eliminate(as_field(m, q).copy(), q)


def ff_rank(m, q: int) -> int:
    """Rank of ``m`` over F_q by exact row reduction."""
    m = as_field(m, q)
    if m.size == 0:
        return 0
    return len(_eliminate(m.copy(), q)[1])


def ff_solve_in_rowspan(targets, basis_rows, q: int) -> np.ndarray:
    """Express each target row as a combination of the basis rows.

    Args:
        targets: ``t x n`` matrix.
        basis_rows: ``b x n`` matrix.
        q: field modulus.

    Returns:
        ``t x b`` coefficient matrix ``C`` with ``C @ basis_rows == targets``.
        When the basis is dependent one particular solution is returned.

    Raises:
        NotInSpan: naming the first target row outside the span.
    """
    t = as_field(targets, q)
    b = as_field(basis_rows, q)
    if t.ndim != 2 or b.ndim != 2 or t.shape[1] != b.shape[1]:
        raise ValueError("targets and basis_rows need the same number of columns")
    nb, n = b.shape
    if t.shape[0] == 0:
        return np.zeros((0, nb), dtype=np.int64)
    aug = np.concatenate([b, np.eye(nb, dtype=np.int64)], axis=1)
    red, piv = _eliminate(aug, q, ncols=n)
    k = len(piv)
    echelon, transform = red[:k, :n], red[:k, n:]
    coeffs = t[:, piv]
    resid = (t - matmul(coeffs, echelon, q)) % q
    bad = np.flatnonzero(resid.any(axis=1))
    if bad.size:
        raise NotInSpan(int(bad[0]))
    return matmul(coeffs, transform, q)


def ff_solve(a, b, q: int) -> np.ndarray:
    """Solve the square system ``a @ x == b`` (``b`` a vector or matrix).

    Raises:
        SingularMatrix: if ``a`` is not invertible.
    """
    a = as_field(a, q)
    b = as_field(b, q)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("coefficient matrix must be square")
    vec = b.ndim == 1
    rhs = b.reshape(n, -1)
    red, piv = _eliminate(np.concatenate([a, rhs], axis=1), q, ncols=n)
    if len(piv) < n:
        raise SingularMatrix(f"matrix has rank {len(piv)} < {n}")
    x = red[:, n:]
    return x[:, 0] if vec else x


def ff_inv_matrix(a, q: int) -> np.ndarray:
    """Inverse of a square matrix over F_q."""
    n = np.asarray(a).shape[0]
    return ff_solve(a, np.eye(n, dtype=np.int64), q)


@lru_cache(maxsize=None)
def sign_to_field(q: int) -> np.ndarray:
    """Lookup table mapping a sign in {-1, +1} (offset by 1) to F_q."""
    return np.array([q - 1, 0, 1], dtype=np.int64)


def signs_to_field(signs: np.ndarray, q: int) -> np.ndarray:
    """Map an array of +1/-1 entries to their F_q representatives."""
    return sign_to_field(q)[np.asarray(signs, dtype=np.int64) + 1]


@dataclass(frozen=True)
class PrimeField:
    """Bundle of the operations above bound to one modulus."""

    q: int = DEFAULT_Q

    def __post_init__(self):
        object.__setattr__(self, "q", check_modulus(self.q))

    def __call__(self, value: int) -> FieldElem:
        return FieldElem(value, self.q)

    def inv(self, a: int) -> int:
        return ff_inv(a, self.q)

    def array(self, m) -> np.ndarray:
        return as_field(m, self.q)

    def matmul(self, a, b) -> np.ndarray:
        return matmul(a, b, self.q)

    def rank(self, m) -> int:
        return ff_rank(m, self.q)

    def rref(self, m) -> tuple[np.ndarray, list[int]]:
        return rref(m, self.q)

    def solve_in_rowspan(self, targets, basis_rows) -> np.ndarray:
        return ff_solve_in_rowspan(targets, basis_rows, self.q)

    def solve(self, a, b) -> np.ndarray:
        return ff_solve(a, b, self.q)

    def inv_matrix(self, a) -> np.ndarray:
        return ff_inv_matrix(a, self.q)
