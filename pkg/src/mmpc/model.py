"""Message libraries, demands, relabeling and symbol randomization.

Labels are 1-based throughout the public API, matching the usual ``[M]``
notation; arrays are indexed 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gf
from .errors import (
    BadDimensions,
    DependentDemand,
    DuplicateRow,
    LengthMismatch,
    LibraryError,
    ZeroRow,
)


@dataclass(frozen=True, eq=False)
class MessageLibrary:
    """``M`` messages, each a fixed linear combination of ``K`` files.

    Attributes:
        M: number of messages.
        K: number of independent files.
        q: field modulus.
        coeffs: ``M x K`` coefficient matrix; the first ``K`` rows are the
            identity, so message ``m <= K`` is file ``m`` itself.
    """

    M: int
    K: int
    q: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs.setflags(write=False)

    def row(self, label: int) -> np.ndarray:
        return self.coeffs[label - 1]

    def messages(self, files: np.ndarray) -> np.ndarray:
        """All ``M`` messages (``M x L``) generated from ``K x L`` file contents."""
        files = np.asarray(files, dtype=np.int64)
        if files.ndim != 2 or files.shape[0] != self.K:
            raise LengthMismatch(f"expected a {self.K} x L file grid, got shape {files.shape}")
        return gf.matmul(self.coeffs, gf.as_field(files, self.q), self.q)

    def random_files(self, L: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.q, size=(self.K, L), dtype=np.int64)

    def __eq__(self, other):
        return (
            isinstance(other, MessageLibrary)
            and (self.M, self.K, self.q) == (other.M, other.K, other.q)
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __hash__(self):
        return hash((self.M, self.K, self.q, self.coeffs.tobytes()))


def build_library(M: int, K: int, q: int, dependent_rows: Sequence[Sequence[int]] = ()) -> MessageLibrary:
    """Build a library whose first ``K`` messages are the files themselves.

    Args:
        M: total number of messages.
        K: number of independent files.
        q: odd prime modulus.
        dependent_rows: ``M - K`` coefficient rows of length ``K``.

    Raises:
        BadDimensions, ZeroRow, DuplicateRow, NotPrime, EvenField.
    """
    q = gf.check_modulus(q)
    M, K = int(M), int(K)
    if K < 1 or M < K:
        raise BadDimensions(f"need 1 <= K <= M, got M={M}, K={K}")
    rows = [list(r) for r in dependent_rows]
    if len(rows) != M - K:
        raise BadDimensions(f"expected {M - K} dependent rows, got {len(rows)}")
    if any(len(r) != K for r in rows):
        raise BadDimensions(f"every dependent row needs exactly K={K} entries")
    dep = gf.as_field(np.array(rows, dtype=np.int64).reshape(M - K, K), q)
    coeffs = np.concatenate([np.eye(K, dtype=np.int64), dep], axis=0)
    _check_rows(coeffs)
    return MessageLibrary(M, K, q, coeffs)


def _check_rows(coeffs: np.ndarray) -> None:
    zero = np.flatnonzero(~coeffs.any(axis=1))
    if zero.size:
        raise ZeroRow(f"message {zero[0] + 1} has an all-zero coefficient row")
    seen: dict[bytes, int] = {}
    for m, row in enumerate(coeffs, start=1):
        key = row.tobytes()
        if key in seen:
            raise DuplicateRow(f"messages {seen[key]} and {m} have identical coefficient rows")
        seen[key] = m


def random_library(M: int, K: int, q: int, rng: np.random.Generator) -> MessageLibrary:
    """Draw random dependent rows (nonzero, pairwise distinct, not unit vectors)."""
    rows: list[tuple[int, ...]] = []
    taken = {tuple(int(v) for v in r) for r in np.eye(K, dtype=np.int64)}
    while len(rows) < M - K:
        cand = tuple(int(v) for v in rng.integers(0, q, size=K))
        if any(cand) and cand not in taken:
            taken.add(cand)
            rows.append(cand)
    return build_library(M, K, q, rows)


@dataclass(frozen=True)
class DemandSet:
    """An ordered set of demanded message labels (1-based)."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def P(self) -> int:
        return len(self.indices)

    def validate(self, lib: MessageLibrary) -> None:
        """Check the demand against ``lib``.

        Raises:
            LibraryError: for repeated or out-of-range labels or a bad size.
            DependentDemand: if the demanded rows are linearly dependent.
        """
        if len(set(self.indices)) != self.P:
            raise LibraryError(f"demand {self.indices} repeats a label")
        if not all(1 <= i <= lib.M for i in self.indices):
            raise LibraryError(f"demand {self.indices} has labels outside 1..{lib.M}")
        if not 1 <= self.P < lib.K:
            raise LibraryError(f"need 1 <= P < K, got P={self.P}, K={lib.K}")
        rows = lib.coeffs[[i - 1 for i in self.indices]]
        if gf.ff_rank(rows, lib.q) < self.P:
            raise DependentDemand(f"demanded messages {self.indices} are linearly dependent")


@dataclass(frozen=True, eq=False)
class RelabeledLibrary:
    """A library rewritten so the demands become the first basis files.

    Attributes:
        base: the library in new labels; rows ``1..K`` are the identity.
        label_map: ``label_map[l - 1]`` is the original label of new label ``l``.
        basis_change: ``K x K`` matrix whose rows are the original coefficient
            rows of new labels ``1..K``; new files = ``basis_change @ old files``.
        basis_change_inv: its inverse.
        P: number of demands (new labels ``1..P``).
        original: the library before relabeling.
    """

    base: MessageLibrary
    label_map: tuple[int, ...]
    basis_change: np.ndarray
    basis_change_inv: np.ndarray
    P: int
    original: MessageLibrary

    @property
    def M(self) -> int:
        return self.base.M

    @property
    def K(self) -> int:
        return self.base.K

    @property
    def q(self) -> int:
        return self.base.q

    @property
    def demand(self) -> DemandSet:
        return DemandSet(self.label_map[: self.P])

    def to_original(self, label: int) -> int:
        return self.label_map[label - 1]

    def from_original(self, label: int) -> int:
        return self.label_map.index(label) + 1

    def unrelabel(self) -> MessageLibrary:
        """Undo the relabeling; equals ``original`` by construction."""
        q = self.q
        coeffs = np.empty_like(self.base.coeffs)
        back = gf.matmul(self.base.coeffs, self.basis_change, q)
        coeffs[np.array(self.label_map) - 1] = back
        return MessageLibrary(self.M, self.K, q, coeffs)


def relabel(lib: MessageLibrary, demand: DemandSet) -> RelabeledLibrary:
    """Move the demands to labels ``1..P`` and complete them to a basis.

    The basis is completed greedily with the original files in ascending
    order; the remaining messages keep their relative order after label K.
    """
    demand.validate(lib)
    q = lib.q
    chosen = list(demand.indices)
    rank = demand.P
    for f in range(1, lib.K + 1):
        if rank == lib.K:
            break
        if f in chosen:
            continue
        trial = lib.coeffs[[c - 1 for c in chosen + [f]]]
        if gf.ff_rank(trial, q) > rank:
            chosen.append(f)
            rank += 1
    rest = [m for m in range(1, lib.M + 1) if m not in chosen]
    label_map = tuple(chosen + rest)
    basis = lib.coeffs[[c - 1 for c in chosen]]
    basis_inv = gf.ff_inv_matrix(basis, q)
    coeffs = gf.matmul(lib.coeffs[np.array(label_map) - 1], basis_inv, q)
    base = MessageLibrary(lib.M, lib.K, q, coeffs)
    basis.setflags(write=False)
    basis_inv.setflags(write=False)
    return RelabeledLibrary(base, label_map, basis, basis_inv, demand.P, lib)


def identity_relabel(lib: MessageLibrary, P: int) -> RelabeledLibrary:
    """Relabeling for the demand ``(1, ..., P)``, which needs no change."""
    return relabel(lib, DemandSet(tuple(range(1, P + 1))))


# --- randomness -------------------------------------------------------------

_STREAMS = ("symbols", "switch", "shuffle", "files")


@dataclass(frozen=True, eq=False)
class RandomTape:
    """All protocol randomness, derived deterministically from one seed.

    Attributes:
        seed: the root seed (``None`` for the identity tape).
        L: subpacketization the tape was drawn for.
        perm: 0-based array with ``perm[i] = pi(i + 1) - 1``.
        sigma: array of ``L`` signs in {+1, -1}.
    """

    seed: int | None
    L: int
    perm: np.ndarray
    sigma: np.ndarray
    _children: tuple = field(default=(), repr=False)

    @classmethod
    def from_seed(cls, seed: int, L: int) -> RandomTape:
        children = tuple(np.random.SeedSequence(int(seed)).spawn(len(_STREAMS)))
        rng = np.random.default_rng(children[0])
        perm = rng.permutation(L).astype(np.int64)
        sigma = rng.choice(np.array([-1, 1], dtype=np.int64), size=L)
        return cls(int(seed), L, perm, sigma, children)

    @classmethod
    def identity(cls, L: int) -> RandomTape:
        """pi = identity, sigma = all +1, no switching, no shuffling."""
        return cls(None, L, np.arange(L, dtype=np.int64), np.ones(L, dtype=np.int64))

    @property
    def is_identity(self) -> bool:
        return not self._children

    def _rng(self, stream: str) -> np.random.Generator:
        return np.random.default_rng(self._children[_STREAMS.index(stream)])

    def switch_signs(self, count: int) -> np.ndarray:
        """``count`` switching signs; identical on every call."""
        if self.is_identity:
            return np.ones(count, dtype=np.int64)
        return self._rng("switch").choice(np.array([-1, 1], dtype=np.int64), size=count)

    def shuffle_rng(self) -> np.random.Generator | None:
        """Generator for query/term shuffles, or ``None`` for no shuffling."""
        return None if self.is_identity else self._rng("shuffle")

    def files_rng(self) -> np.random.Generator:
        return np.random.default_rng(self._children[3] if self._children else 0)


@dataclass(frozen=True, eq=False)
class AlternatedSymbols:
    """The randomized symbols ``u_l(i) = sigma_i * W_{lambda(l)}(pi(i))``.

    ``u`` is an ``M x L`` array indexed by (new label - 1, index - 1).
    """

    u: np.ndarray
    q: int

    def __call__(self, label: int, index: int) -> int:
        return int(self.u[label - 1, index - 1])


def randomize_symbols(files: np.ndarray, tape: RandomTape, lib: MessageLibrary | RelabeledLibrary) -> AlternatedSymbols:
    """Apply the symbol permutation and signs to every message.

    Args:
        files: ``K x L`` contents of the original independent files.
        tape: randomness; ``tape.L`` must equal ``L``.
        lib: the library, or its relabeling (rows then follow new labels).

    Raises:
        LengthMismatch: if the tape and the files disagree on ``L``.
    """
    files = np.asarray(files, dtype=np.int64)
    if files.ndim != 2 or files.shape[1] != tape.L:
        raise LengthMismatch(f"tape is sized for L={tape.L}, files have shape {files.shape}")
    if isinstance(lib, RelabeledLibrary):
        msgs = lib.original.messages(files)[np.array(lib.label_map) - 1]
    else:
        msgs = lib.messages(files)
    q = lib.q
    u = msgs[:, tape.perm] * tape.sigma % q
    u.setflags(write=False)
    return AlternatedSymbols(u, q)
