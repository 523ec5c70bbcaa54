"""MDS compression of stages and the linear redundancy among their queries.

Two encodings are provided.  ``encode_stage`` works on a list of
``QuerySpec`` records in plan space and is the readable reference.
``encode_wire_stage`` produces what a server actually receives: original
labels, permuted symbol positions and coefficients with every sign folded
in, stored as arrays so that whole protocol runs stay fast.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Sequence

import numpy as np

from . import gf
from .errors import DimensionMismatch, FieldTooSmall, NotInSpan, RedundancyViolated
from .model import RandomTape, RelabeledLibrary
from .planner import QueryPlan, QuerySpec, QueryClass, Stage, download_per_stage


@dataclass(frozen=True, eq=False)
class MdsMatrix:
    """Cauchy matrix ``1 / (x_i - y_j)`` over F_q.

    Every square submatrix of a Cauchy matrix with distinct points is
    invertible, so any ``r`` columns are independent.
    """

    r: int
    c: int
    q: int
    x: tuple[int, ...]
    y: tuple[int, ...]
    entries: np.ndarray


@lru_cache(maxsize=4096)
def cauchy_mds(r: int, c: int, q: int, shift: int = 0) -> MdsMatrix:
    """Cauchy matrix with ``x = (0..r-1)`` and ``y = r + shift + (0..c-1)``.

    Raises:
        DimensionMismatch: if ``r > c``.
        FieldTooSmall: if the ``r + c`` points cannot be distinct mod ``q``.
    """
    if r > c or r < 0:
        raise DimensionMismatch(f"need 0 <= r <= c, got r={r}, c={c}")
    if q < r + c + shift:
        raise FieldTooSmall(f"a {r}x{c} Cauchy matrix (shift {shift}) needs q >= {r + c + shift}, got q={q}")
    x = np.arange(r, dtype=np.int64)
    y = np.arange(c, dtype=np.int64) + r + shift
    # x_a - y_b only takes the r + c - 1 values -(r + shift + c - 1) .. -(shift + 1).
    lo = r + shift + c - 1
    inverses = np.array([pow(q - d, q - 2, q) for d in range(lo, shift, -1)], dtype=np.int64)
    entries = inverses[x[:, None] - y[None, :] + lo]
    entries.setflags(write=False)
    return MdsMatrix(r, c, q, tuple(int(v) for v in x), tuple(int(v) for v in y), entries)


def stage_matrix(M: int, K: int, P: int, i: int, s: int, q: int) -> MdsMatrix:
    """The public generator for stage ``s`` of round ``i``.

    The y-points of stage ``s`` are shifted by ``(s - 1) * c`` (wrapped so
    that all points stay distinct mod ``q``), which gives every stage number
    its own matrix once q is large.  All servers use the same matrix for the
    same (round, stage), so the matrix itself carries no demand information.
    """
    r = download_per_stage(M, K, P, i)
    c = comb(M, i)
    room = q - r - c + 1
    if room < 1:
        raise FieldTooSmall(f"round {i} needs q >= {r + c}, got q={q}")
    return cauchy_mds(r, c, q, ((s - 1) * c) % room)


@dataclass(frozen=True)
class CodedQuery:
    """One coded download request.

    ``terms`` are ``(label, index, coefficient)`` with like terms merged and
    zero coefficients dropped.
    """

    server: int
    round: int
    stage: int
    row: int
    terms: tuple[tuple[int, int, int], ...]

    def to_record(self) -> dict:
        return {
            "server": self.server, "round": self.round, "stage": self.stage,
            "row": self.row, "terms": [list(t) for t in self.terms],
        }


def encode_stage(queries: Sequence[QuerySpec], G: MdsMatrix | np.ndarray, q: int | None = None) -> list[CodedQuery]:
    """Compress a stage: coded row ``k`` is ``sum_j G[k, j] * query_j``.

    Queries are put in lexicographic subset order first.  Labels and
    indices are kept as given (plan space).

    Raises:
        DimensionMismatch: if ``G`` does not have one column per query.
    """
    mat = G.entries if isinstance(G, MdsMatrix) else np.asarray(G, dtype=np.int64)
    q = G.q if isinstance(G, MdsMatrix) else q
    if q is None:
        raise ValueError("the modulus is needed when G is a plain array")
    ordered = sorted(queries, key=lambda qs: qs.subset)
    if mat.shape[1] != len(ordered):
        raise DimensionMismatch(f"G has {mat.shape[1]} columns for {len(ordered)} queries")
    first = ordered[0] if ordered else None
    out = []
    for k in range(mat.shape[0]):
        acc: dict[tuple[int, int], int] = {}
        for j, qs in enumerate(ordered):
            g = int(mat[k, j])
            for lab, idx, sgn in qs.terms:
                acc[(lab, idx)] = (acc.get((lab, idx), 0) + g * sgn) % q
        terms = tuple((lab, idx, c) for (lab, idx), c in acc.items() if c)
        out.append(CodedQuery(first.server, first.round, first.stage, k, terms))
    return out


# --- wire encoding ----------------------------------------------------------


@lru_cache(maxsize=None)
def _column_of_row(M: int, i: int, label_map: tuple[int, ...]) -> np.ndarray:
    """G column of each template row: lex rank of its original-label subset."""

    lm = np.array(label_map)
    rank = {s: r for r, s in enumerate(combinations(range(1, M + 1), i))}
    cols = np.array(
        [rank[tuple(sorted(int(lm[x - 1]) for x in s))] for s in combinations(range(1, M + 1), i)],
        dtype=np.int64,
    )
    cols.setflags(write=False)
    return cols


def column_of_row(plan: QueryPlan, i: int) -> np.ndarray:
    return _column_of_row(plan.M, i, plan.label_map)


@dataclass(frozen=True, eq=False)
class CodedStage:
    """All coded queries of one stage, as arrays.

    Attributes:
        labels: original label of each term (``n_terms``).
        indices: stored symbol position of each term, 1-based.
        coefs: ``(r, n_terms)`` coefficients; row ``k`` is coded query ``k``.
        term_order: order in which terms are listed on the wire.
    """

    server: int
    round: int
    stage: int
    labels: np.ndarray
    indices: np.ndarray
    coefs: np.ndarray
    term_order: np.ndarray

    @property
    def r(self) -> int:
        return self.coefs.shape[0]

    def records(self) -> list[CodedQuery]:
        out = []
        for k in range(self.r):
            terms = tuple(
                (int(self.labels[t]), int(self.indices[t]), int(self.coefs[k, t]))
                for t in self.term_order if self.coefs[k, t]
            )
            out.append(CodedQuery(self.server, self.round, self.stage, k, terms))
        return out


def stage_term_arrays(plan: QueryPlan, st: Stage) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flattened plan-space terms of a stage: (row position, label, index, sign)."""
    tmpl = plan.templates[st.round]
    nq, i = len(st.rows), st.round
    pos = np.repeat(np.arange(nq), i)
    return pos, tmpl.labels[st.rows].ravel(), st.indices.ravel(), plan.term_signs(st).ravel()


def encode_wire_stage(
    plan: QueryPlan, st: Stage, G: MdsMatrix, tape: RandomTape, q: int, term_keys: np.ndarray | None = None
) -> CodedStage:
    """Encode one stage into the form sent to its server.

    A plan term ``(label, index, sign)`` in the query at G column ``col``
    becomes the wire term ``(original label, pi(index))`` with coefficient
    ``G[:, col] * sign * sigma[index]``.
    """
    tmpl = plan.templates[st.round]
    if G.c != tmpl.n_queries:
        raise DimensionMismatch(f"G has {G.c} columns for {tmpl.n_queries} queries")
    pos, lab, idx, sgn = stage_term_arrays(plan, st)
    cols = column_of_row(plan, st.round)[st.rows][pos]
    factor = sgn * tape.sigma[idx - 1]
    coefs = G.entries[:, cols] * gf.signs_to_field(factor, q)[None, :] % q
    labels = np.asarray(plan.label_map, dtype=np.int64)[lab - 1]
    stored = tape.perm[idx - 1] + 1
    order = np.arange(len(lab)) if term_keys is None else np.argsort(term_keys, kind="stable")
    return CodedStage(st.server, st.round, st.stage, labels, stored, coefs, order)


# --- redundancy -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RedundancyBasis:
    """Coefficients with ``q3 = A @ q1 + B @ q2``.

    ``q1``, ``q2`` and ``q3`` hold row positions (into the stage's query
    list) of the other, useless and redundant queries respectively.
    """

    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    A: np.ndarray
    B: np.ndarray
    rank: int


def _partition(labels: Sequence[tuple[int, ...]], classes: Sequence[QueryClass], K: int):
    q1, q2, q3 = [], [], []
    for j, (subset, cls) in enumerate(zip(labels, classes)):
        if cls == QueryClass.SIDEINFO and all(x > K for x in subset):
            q3.append(j)
        elif cls == QueryClass.USELESS:
            q2.append(j)
        else:
            q1.append(j)
    return (np.array(v, dtype=np.int64) for v in (q1, q2, q3))


def expand_queries(
    row_of_term: np.ndarray, labels: np.ndarray, indices: np.ndarray, signs: np.ndarray,
    n_rows: int, coeffs: np.ndarray, q: int,
) -> np.ndarray:
    """Rewrite queries over ground coordinates (basis file, symbol index).

    Symbol indices are renumbered densely in order of first appearance.
    """
    _, first, inv = np.unique(indices, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    dense = np.empty_like(order)
    dense[order] = np.arange(len(order))
    col = dense[inv.ravel()]
    K = coeffs.shape[1]
    out = np.zeros((n_rows, len(order) * K), dtype=np.int64)
    contrib = coeffs[labels - 1] * gf.signs_to_field(signs, q)[:, None] % q
    cols = col[:, None] * K + np.arange(K)[None, :]
    np.add.at(out, (np.repeat(row_of_term, K), cols.ravel()), contrib.ravel())
    return out % q


def _solve_redundancy(expanded: np.ndarray, q1, q2, q3, q: int) -> tuple[np.ndarray, np.ndarray, int]:
    basis = expanded[np.concatenate([q1, q2])]
    rank = gf.ff_rank(expanded, q)
    try:
        C = gf.ff_solve_in_rowspan(expanded[q3], basis, q)
    except NotInSpan as exc:
        raise RedundancyViolated(f"redundant query {int(q3[exc.row])} is not spanned by the others") from exc
    return C[:, : len(q1)], C[:, len(q1) :], rank


def stage_redundancy_basis(queries: Sequence[QuerySpec], rlib: RelabeledLibrary) -> RedundancyBasis:
    """Find ``A`` and ``B`` with ``q3 = A q1 + B q2`` by exact elimination.

    Raises:
        RedundancyViolated: if a redundant query is outside the span.
    """
    q = rlib.q
    labels = np.array([t[0] for qs in queries for t in qs.terms], dtype=np.int64)
    indices = np.array([t[1] for qs in queries for t in qs.terms], dtype=np.int64)
    signs = np.array([t[2] for qs in queries for t in qs.terms], dtype=np.int64)
    rows = np.repeat(np.arange(len(queries)), [len(qs.terms) for qs in queries])
    expanded = expand_queries(rows, labels, indices, signs, len(queries), rlib.base.coeffs, q)
    q1, q2, q3 = _partition([qs.subset for qs in queries], [qs.cls for qs in queries], rlib.K)
    A, B, rank = _solve_redundancy(expanded, q1, q2, q3, q)
    return RedundancyBasis(q1, q2, q3, A, B, rank)


class RedundancyCache:
    """Per-stage redundancy, shared across stages with the same structure.

    Two stages share a structure when they cover the same template rows and
    their index arrays agree after renumbering indices by first appearance.
    Switching signs are left out of the key: the cached coefficients refer
    to unswitched queries and are converted per stage, which is exact
    because a switch multiplies a whole query by +1 or -1.
    """

    def __init__(self, rlib: RelabeledLibrary):
        self.rlib = rlib
        self.q = rlib.q
        self._store: dict[tuple, RedundancyBasis] = {}
        self.misses = 0

    def _key(self, st: Stage) -> tuple:
        flat = st.indices.ravel()
        _, first, inv = np.unique(flat, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        extra = b"" if st.signs is None else st.signs.tobytes()
        return (st.round, st.rows.tobytes(), rank[inv.ravel()].tobytes(), extra)

    def unswitched(self, plan: QueryPlan, st: Stage) -> RedundancyBasis:
        key = self._key(st)
        hit = self._store.get(key)
        if hit is None:
            self.misses += 1
            tmpl = plan.templates[st.round]
            labels = tmpl.labels[st.rows]
            signs = st.structure_signs(tmpl) if plan.signed else np.ones_like(labels)
            rows = np.repeat(np.arange(len(st.rows)), st.round)
            expanded = expand_queries(
                rows, labels.ravel(), st.indices.ravel(), signs.ravel(), len(st.rows), self.rlib.base.coeffs, self.q
            )
            q1, q2, q3 = _partition(
                [tmpl.subsets[r] for r in st.rows], [QueryClass(int(tmpl.cls[r])) for r in st.rows], self.rlib.K
            )
            A, B, rank = _solve_redundancy(expanded, q1, q2, q3, self.q)
            hit = RedundancyBasis(q1, q2, q3, A, B, rank)
            self._store[key] = hit
        return hit

    def basis(self, plan: QueryPlan, st: Stage) -> RedundancyBasis:
        """Coefficients for the stage's actual (switched) query values."""
        base = self.unswitched(plan, st)
        sw = st.switch
        s1, s2, s3 = sw[base.q1], sw[base.q2], sw[base.q3]
        q = self.q
        A = base.A * gf.signs_to_field(s3[:, None] * s1[None, :], q) % q
        B = base.B * gf.signs_to_field(s3[:, None] * s2[None, :], q) % q
        return RedundancyBasis(base.q1, base.q2, base.q3, A, B, base.rank)
