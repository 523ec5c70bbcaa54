"""Machine checks of the structural and privacy properties of a plan.

Structural checks (subset coverage, shared indices, per-server disjointness,
redundancy rank) return an :class:`AuditReport` listing violations instead
of raising.  :func:`find_sign_mapping` searches for the sign relabeling that
makes one demand's queries look like another's, and
:func:`transcript_shape_test` compares observable feature distributions by
chi-square.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from itertools import combinations
from math import comb
from typing import Sequence

import numpy as np
from scipy.stats import chi2_contingency

from . import gf
from .coding import RedundancyCache, column_of_row, stage_matrix
from .errors import InsufficientSamples, NoMapping, RedundancyViolated
from .model import DemandSet, MessageLibrary, RandomTape, RelabeledLibrary, relabel
from .planner import (
    QueryPlan,
    Stage,
    assign_signs,
    build_query_plan,
    shuffle_plan,
    stage_counts,
)

_MAX_DETAIL = 20


@dataclass
class AuditReport:
    """Outcome of one check.

    Attributes:
        check: name of the check.
        scope: what was examined, e.g. ``"(5,3,2,2) demand (1, 2)"``.
        passed: ``True`` when no violation was found.
        detail: the first violations (at most 20) or a short summary.
        violations: total number of violations.
    """

    check: str
    scope: str
    passed: bool = True
    detail: list[str] = field(default_factory=list)
    violations: int = 0

    def fail(self, message: str) -> None:
        self.passed = False
        self.violations += 1
        if len(self.detail) < _MAX_DETAIL:
            self.detail.append(message)

    def to_dict(self) -> dict:
        return {"check": self.check, "scope": self.scope, "pass": self.passed, "detail": list(self.detail)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def plan_scope(plan: QueryPlan) -> str:
    return f"M={plan.M} K={plan.K} P={plan.P} N={plan.N} demand={tuple(plan.label_map[: plan.P])}"


def _original_subset(plan: QueryPlan, subset: Sequence[int]) -> tuple[int, ...]:
    return tuple(sorted(plan.label_map[x - 1] for x in subset))


# --- structural checks ------------------------------------------------------


def check_subset_coverage(plan: QueryPlan) -> AuditReport:
    """Every stage of round ``i`` has each ``i``-subset exactly once."""
    rep = AuditReport("subset_coverage", plan_scope(plan))
    for st in plan.stages.values():
        tmpl = plan.templates[st.round]
        counts = np.bincount(st.rows, minlength=tmpl.n_queries)
        for r in np.flatnonzero(counts != 1):
            what = "missing" if counts[r] == 0 else f"repeated {counts[r]} times"
            rep.fail(f"server {st.server} round {st.round} stage {st.stage}: subset "
                     f"{_original_subset(plan, tmpl.subsets[r])} {what}")
    return rep


def check_index_structure(plan: QueryPlan) -> AuditReport:
    """Terms whose queries differ only in that term carry the same index.

    Equivalently, grouping every term by the subset formed by the *other*
    labels of its query, all terms in a group share one symbol index.
    """
    rep = AuditReport("index_structure", plan_scope(plan))
    for st in plan.stages.values():
        tmpl = plan.templates[st.round]
        sid = tmpl.subset_id[st.rows].ravel()
        idx = st.indices.ravel()
        order = np.lexsort((idx, sid))
        s_sorted, i_sorted = sid[order], idx[order]
        bad = np.flatnonzero((s_sorted[1:] == s_sorted[:-1]) & (i_sorted[1:] != i_sorted[:-1]))
        for b in bad:
            below = list(combinations(range(1, plan.M + 1), st.round - 1))[int(s_sorted[b])]
            S = _original_subset(plan, below)
            rep.fail(f"server {st.server} round {st.round} stage {st.stage}: terms completing {S} "
                     f"use indices {int(i_sorted[b])} and {int(i_sorted[b + 1])}")
    return rep


def check_stage_index_disjointness(plan: QueryPlan) -> AuditReport:
    """Per server and label, distinct stages use disjoint index sets."""
    rep = AuditReport("stage_index_disjointness", plan_scope(plan))
    stride = plan.L + 1
    for n in range(1, plan.N + 1):
        keys, owners = [], []
        stages = list(plan.iter_stages(n))
        for sid, st in enumerate(stages):
            labels = plan.templates[st.round].labels[st.rows].ravel()
            k = np.unique(labels * stride + st.indices.ravel())
            keys.append(k)
            owners.append(np.full(k.size, sid))
        if not keys:
            continue
        allk = np.concatenate(keys)
        allo = np.concatenate(owners)
        uniq, cnt = np.unique(allk, return_counts=True)
        for key in uniq[cnt > 1]:
            lab, idx = divmod(int(key), stride)
            where = sorted({stages[o].key for o in allo[allk == key]})
            rep.fail(f"server {n}: symbol {plan.label_map[lab - 1]}({idx}) appears in stages {where}")
    return rep


def check_redundancy_rank(plan: QueryPlan, rlib: RelabeledLibrary, cache: RedundancyCache | None = None) -> AuditReport:
    """Per stage: rank ``C(M,i) - C(M-K,i)``, and the redundant queries are
    exactly the side-information queries made of dependent labels only."""
    rep = AuditReport("redundancy_rank", plan_scope(plan))
    cache = cache or RedundancyCache(rlib)
    M, K = plan.M, plan.K
    for st in plan.stages.values():
        where = f"server {st.server} round {st.round} stage {st.stage}"
        want = comb(M, st.round) - comb(M - K, st.round)
        try:
            rb = cache.unswitched(plan, st)
        except RedundancyViolated as exc:
            rep.fail(f"{where}: {exc}")
            continue
        if rb.rank != want:
            rep.fail(f"{where}: rank {rb.rank}, expected {want}")
        if len(rb.q3) != comb(M - K, st.round):
            rep.fail(f"{where}: {len(rb.q3)} redundant queries, expected {comb(M - K, st.round)}")
        if rb.rank != len(rb.q1) + len(rb.q2):
            rep.fail(f"{where}: the non-redundant queries are not independent")
    return rep


def structural_audit(plan: QueryPlan, rlib: RelabeledLibrary, cache: RedundancyCache | None = None) -> list[AuditReport]:
    return [
        check_subset_coverage(plan),
        check_index_structure(plan),
        check_stage_index_disjointness(plan),
        check_redundancy_rank(plan, rlib, cache),
    ]


# --- mutations --------------------------------------------------------------

MUTATIONS = ("drop-query", "swap-index", "dup-donor", "flip-sign")


def mutate_plan(plan: QueryPlan, kind: str) -> QueryPlan:
    """Damage a plan in one targeted way (used to show each check has teeth).

    * ``drop-query`` removes the last query of server 1, round 2, stage 1.
    * ``swap-index`` swaps the two indices of the first query there.
    * ``dup-donor`` rebuilds server 1, round 2, stage 2 with the donors of
      stage 1, so donated symbols appear twice on server 1.
    * ``flip-sign`` flips one term sign of a redundant query of that stage.
    """
    key = (1, 2, 1)
    st = plan.stages[key]
    tmpl = plan.templates[2]
    if kind == "drop-query":
        new = replace(st, rows=st.rows[:-1], indices=st.indices[:-1], switch=st.switch[:-1])
    elif kind == "swap-index":
        idx = st.indices.copy()
        idx[0] = idx[0][::-1]
        new = replace(st, indices=idx)
    elif kind == "dup-donor":
        other = plan.stages[(1, 2, 2)]
        bases = np.array([other.base] + [plan.fresh_bases[d] for d in st.donors], dtype=np.int64)
        idx = bases[tmpl.recipe_slot] + tmpl.recipe_k
        return replace(plan, stages={**plan.stages, (1, 2, 2): replace(other, donors=st.donors, indices=idx)})
    elif kind == "flip-sign":
        rows = np.flatnonzero(tmpl.redundant_mask)
        if rows.size == 0:
            raise ValueError("flip-sign needs a library with at least two dependent messages")
        signs = tmpl.struct_signs.copy()
        signs[rows[0], 0] *= -1
        new = replace(st, signs=signs)
    else:
        raise ValueError(f"unknown mutation {kind!r}; choose from {MUTATIONS}")
    return replace(plan, stages={**plan.stages, key: new})


# --- sign mapping -----------------------------------------------------------


@dataclass
class SignMapping:
    """A relabeling that turns the queries of one demand into another's.

    Attributes:
        index_map: per server, ``index_map[n][j2] = j1`` (0 where unused).
        sigma: per server, sign attached to each index of the second plan.
        switch: per round, whole-query sign per original-label subset.
        solutions: per round, number of sign assignments that work.
    """

    index_map: dict[int, np.ndarray]
    sigma: dict[int, np.ndarray]
    switch: dict[int, dict[tuple[int, ...], int]]
    solutions: dict[int, int]


def _orig_signs(plan: QueryPlan, i: int) -> dict[tuple[int, ...], dict[int, int]]:
    """Structure sign of every term, keyed by original-label subset and label."""
    tmpl = plan.templates[i]
    out: dict[tuple[int, ...], dict[int, int]] = {}
    for r, s in enumerate(tmpl.subsets):
        orig = [plan.label_map[x - 1] for x in s]
        out[tuple(sorted(orig))] = {o: int(tmpl.struct_signs[r, p]) for p, o in enumerate(orig)}
    return out


def _solve_round(M: int, i: int, e1, e2, where) -> dict:
    """Propagate signs outward from the lexicographically first query.

    Unknowns are one switch ``t`` per query and one sign per (i-1)-subset
    (i.e. per shared symbol index).  Requirement for each term ``x`` of
    query ``g``: ``t[g] * s[g - x] * e2 = e1``.
    """
    queries = list(combinations(range(1, M + 1), i))
    t: dict[tuple[int, ...], int] = {}
    s: dict[tuple[int, ...], int] = {}
    start = queries[0]
    t[start] = 1
    frontier = deque([start])
    for x in start:
        S = tuple(y for y in start if y != x)
        s[S] = e1[start][x] * e2[start][x]
    seen = {start}
    while frontier:
        g = frontier.popleft()
        for x in g:
            S = tuple(y for y in g if y != x)
            for y in range(1, M + 1):
                if y in S or y == x:
                    continue
                h = tuple(sorted(S + (y,)))
                if h in seen:
                    continue
                seen.add(h)
                t[h] = e1[h][y] * e2[h][y] * s[S]
                for z in h:
                    Sz = tuple(w for w in h if w != z)
                    val = t[h] * e1[h][z] * e2[h][z]
                    if Sz in s and s[Sz] != val:
                        raise NoMapping(f"round {i}: query {h} contradicts earlier signs at {Sz}", where(h))
                    s[Sz] = val
                frontier.append(h)
    # Final pass: every equation, including ones closed late, must hold.
    for g in queries:
        for x in g:
            S = tuple(y for y in g if y != x)
            if t[g] * s[S] * e2[g][x] != e1[g][x]:
                raise NoMapping(f"round {i}: query {g} is inconsistent at term {x}", where(g))
    return {"t": t, "s": s}


def _solution_count(M: int, i: int) -> int:
    """Number of solutions of the homogeneous sign system (over GF(2))."""
    queries = list(combinations(range(1, M + 1), i))
    subsets = {S: k for k, S in enumerate(combinations(range(1, M + 1), i - 1))}
    nq = len(queries)
    rows = []
    for g_id, g in enumerate(queries):
        for x in g:
            row = np.zeros(nq + len(subsets), dtype=np.int64)
            row[g_id] = 1
            row[nq + subsets[tuple(y for y in g if y != x)]] = 1
            rows.append(row)
    # Elimination mod 2 works with the same routine (only inverses of 1 occur).
    rank = gf.ff_rank(np.array(rows), 2)
    return 2 ** (nq + len(subsets) - rank)


def _stage_subset_index(plan: QueryPlan, st: Stage) -> dict[tuple[int, ...], int]:
    """Index shared by the terms completing each original (i-1)-subset."""
    tmpl = plan.templates[st.round]
    out: dict[tuple[int, ...], int] = {}
    for j, r in enumerate(st.rows):
        s = tmpl.subsets[r]
        for p in range(st.round):
            S = _original_subset(plan, s[:p] + s[p + 1 :])
            out[S] = int(st.indices[j, p])
    return out


def find_sign_mapping(plan_1: QueryPlan, plan_2: QueryPlan) -> SignMapping:
    """Map the signed index layout of ``plan_2`` onto that of ``plan_1``.

    Indices are matched through the subsets they complete; signs are found
    by propagation from one query outward.  ``sigma`` and ``switch`` make
    every query of ``plan_2`` carry, term by term, the structure signs of
    the same-subset query of ``plan_1``.

    Raises:
        NoMapping: naming the first query where the signs contradict.
        ValueError: if the plans have different shapes.
    """
    if (plan_1.M, plan_1.K, plan_1.N, plan_1.alpha) != (plan_2.M, plan_2.K, plan_2.N, plan_2.alpha):
        raise ValueError("plans must share M, K, N and stage counts")
    M = plan_1.M
    switch: dict[int, dict[tuple[int, ...], int]] = {}
    by_subset: dict[int, dict[tuple[int, ...], int]] = {}
    solutions: dict[int, int] = {}
    for i in range(1, plan_1.rounds + 1):
        first = next(st for st in plan_2.stages.values() if st.round == i)

        def where(g, first=first):
            return (first.server, first.round, first.stage, g)

        sol = _solve_round(M, i, _orig_signs(plan_1, i), _orig_signs(plan_2, i), where)
        switch[i] = sol["t"]
        by_subset[i] = sol["s"]
        solutions[i] = _solution_count(M, i)
    index_map = {n: np.zeros(plan_2.L + 1, dtype=np.int64) for n in range(1, plan_2.N + 1)}
    sigma = {n: np.zeros(plan_2.L + 1, dtype=np.int64) for n in range(1, plan_2.N + 1)}
    for key, st2 in plan_2.stages.items():
        st1 = plan_1.stages[key]
        f1, f2 = _stage_subset_index(plan_1, st1), _stage_subset_index(plan_2, st2)
        n = key[0]
        for S, j2 in f2.items():
            j1 = f1[S]
            if index_map[n][j2] not in (0, j1):
                raise NoMapping(f"server {n}: index {j2} would map to two indices", (n, key[1], key[2], S))
            index_map[n][j2] = j1
            sigma[n][j2] = by_subset[key[1]][S]
    return SignMapping(index_map, sigma, switch, solutions)


def apply_sign_mapping(plan_1: QueryPlan, plan_2: QueryPlan, mapping: SignMapping) -> bool:
    """Check that the mapping turns every query of ``plan_2`` into ``plan_1``'s."""
    for key, st2 in plan_2.stages.items():
        st1 = plan_1.stages[key]
        n, i = key[0], key[1]
        t1, t2 = plan_1.templates[i], plan_2.templates[i]
        q1 = {}
        for j, r in enumerate(st1.rows):
            orig = [plan_1.label_map[x - 1] for x in t1.subsets[r]]
            q1[tuple(sorted(orig))] = {o: (int(st1.indices[j, p]), int(t1.struct_signs[r, p])) for p, o in enumerate(orig)}
        for j, r in enumerate(st2.rows):
            orig = [plan_2.label_map[x - 1] for x in t2.subsets[r]]
            g = tuple(sorted(orig))
            for p, o in enumerate(orig):
                j2 = int(st2.indices[j, p])
                sign = mapping.switch[i][g] * int(mapping.sigma[n][j2]) * int(t2.struct_signs[r, p])
                if (int(mapping.index_map[n][j2]), sign) != q1[g][o]:
                    return False
    return True


# --- distributional test ----------------------------------------------------


@dataclass
class FeatureResult:
    feature: str
    server: int
    demand: tuple[int, ...]
    p_value: float
    reject: bool


@dataclass
class ShapeReport:
    """Chi-square comparison of observable features across demands."""

    samples: int
    threshold: float
    results: list[FeatureResult]

    @property
    def passed(self) -> bool:
        return not any(r.reject for r in self.results)

    def rejected(self) -> list[FeatureResult]:
        return [r for r in self.results if r.reject]

    def to_dict(self) -> dict:
        return {
            "check": "transcript_shape",
            "scope": f"samples={self.samples}",
            "pass": self.passed,
            "detail": [
                f"server {r.server} demand {r.demand} {r.feature}: p={r.p_value:.4g}" + (" REJECT" if r.reject else "")
                for r in self.results
            ],
        }


FEATURES = ("subsets", "term_counts", "coef_signs", "index_collisions", "term_order")


@dataclass(frozen=True, eq=False)
class ServerView:
    """What one server observes, one entry per received term.

    Attributes:
        stage: position of the stage among the server's stages.
        round: round of that stage.
        column: G column the term belongs to (identifies the query).
        label: original message label.
        index: stored symbol position.
        sign: sign relative to the public G column (+1 or -1).
        order: listing position of the term within its stage.
    """

    stage: np.ndarray
    round: np.ndarray
    column: np.ndarray
    label: np.ndarray
    index: np.ndarray
    sign: np.ndarray
    order: np.ndarray


@dataclass(frozen=True, eq=False)
class _ServerLayout:
    """The tape-independent part of a server view."""

    stage: np.ndarray
    round: np.ndarray
    column: np.ndarray
    label: np.ndarray
    plan_index: np.ndarray
    structure: np.ndarray
    query: np.ndarray  # position of the term's query among the server's queries
    stage_start: np.ndarray


def _server_layout(plan: QueryPlan, server: int) -> _ServerLayout:
    parts: dict[str, list[np.ndarray]] = {k: [] for k in ("stage", "round", "column", "label", "plan_index", "structure", "query")}
    starts, nterm, nquery = [], 0, 0
    lm = np.asarray(plan.label_map, dtype=np.int64)
    for sid, st in enumerate(plan.iter_stages(server)):
        tmpl = plan.templates[st.round]
        nq = len(st.rows)
        n_terms = nq * st.round
        starts.append(nterm)
        parts["stage"].append(np.full(n_terms, sid))
        parts["round"].append(np.full(n_terms, st.round))
        parts["column"].append(np.repeat(column_of_row(plan, st.round)[st.rows], st.round))
        parts["label"].append(lm[tmpl.labels[st.rows].ravel() - 1])
        parts["plan_index"].append(st.indices.ravel())
        parts["structure"].append(st.structure_signs(tmpl).ravel())
        parts["query"].append(np.repeat(np.arange(nquery, nquery + nq), st.round))
        nterm += n_terms
        nquery += nq
    return _ServerLayout(**{k: np.concatenate(v) for k, v in parts.items()}, stage_start=np.array(starts))


def server_view(plan: QueryPlan, tape: RandomTape, server: int, layout: _ServerLayout | None = None) -> ServerView:
    """Build the observable view of a server straight from plan and tape.

    ``layout`` may be precomputed with ``_server_layout`` for any plan with
    the same index structure; only switches, tape and shuffle keys vary.
    """
    lay = layout or _server_layout(plan, server)
    idx = lay.plan_index
    switch = np.concatenate([st.switch for st in plan.iter_stages(server)])
    sign = lay.structure * switch[lay.query] if plan.signed else np.ones_like(idx)
    if plan.shuffle is None:
        order = np.arange(idx.size) - lay.stage_start[lay.stage]
    else:
        srt = np.lexsort((plan.shuffle.term_keys[server], lay.stage))
        order = np.empty(idx.size, dtype=np.int64)
        order[srt] = np.arange(idx.size) - lay.stage_start[lay.stage[srt]]
    return ServerView(
        lay.stage, lay.round, lay.column, lay.label, tape.perm[idx - 1] + 1, sign * tape.sigma[idx - 1], order
    )


def view_from_coded(coded_stages, q: int, M: int, K: int, P: int) -> ServerView:
    """Rebuild a server view from the coded records it actually received.

    Each term's G column is recovered by matching its coefficient column
    against the public matrix up to a sign.
    """
    parts: dict[str, list[np.ndarray]] = {k: [] for k in ServerView.__dataclass_fields__}
    for sid, cs in enumerate(coded_stages):
        G = stage_matrix(M, K, P, cs.round, cs.stage, q).entries
        n_terms = cs.labels.size
        cols = np.empty(n_terms, dtype=np.int64)
        signs = np.empty(n_terms, dtype=np.int64)
        for t in range(n_terms):
            col = cs.coefs[:, t]
            plus = np.flatnonzero((G == col[:, None]).all(axis=0))
            minus = np.flatnonzero((G == (q - col[:, None]) % q).all(axis=0))
            cols[t], signs[t] = (plus[0], 1) if plus.size else (minus[0], -1)
        order = np.empty(n_terms, dtype=np.int64)
        order[cs.term_order] = np.arange(n_terms)
        parts["stage"].append(np.full(n_terms, sid))
        parts["round"].append(np.full(n_terms, cs.round))
        parts["column"].append(cols)
        parts["label"].append(cs.labels)
        parts["index"].append(cs.indices)
        parts["sign"].append(signs)
        parts["order"].append(order)
    return ServerView(**{k: np.concatenate(v) for k, v in parts.items()})


def view_features(view: ServerView) -> dict[str, object]:
    """Order-independent summaries of a server view, plus one order feature.

    ``subsets`` and ``term_counts`` summarize which labels each query
    touches; ``coef_signs`` counts positive coefficients in rounds two and
    up; ``index_collisions`` is the multiset of how often each stored symbol
    position is used; ``term_order`` counts label inversions in the listing
    order of the first round-2 stage.
    """
    canon = np.lexsort((view.label, view.column, view.stage))
    triples = np.stack([view.stage[canon], view.column[canon], view.label[canon]])
    per_query = np.bincount(view.stage * (view.column.max() + 1) + view.column)
    size_hist = np.bincount(per_query[per_query > 0])
    mult = np.bincount(view.index)
    mult_hist = np.bincount(mult[mult > 0])
    inv = 0
    sel = np.flatnonzero(view.round == 2)
    if sel.size:
        sel = sel[view.stage[sel] == view.stage[sel].min()]
        sel = sel[np.lexsort((view.order[sel], view.column[sel]))]
        first, second = view.label[sel[0::2]], view.label[sel[1::2]]
        inv = int(np.count_nonzero(first > second))
    return {
        "subsets": hashlib.blake2b(triples.tobytes(), digest_size=16).hexdigest(),
        "term_counts": tuple(size_hist.tolist()),
        "coef_signs": int(np.count_nonzero((view.sign > 0) & (view.round >= 2))),
        "index_collisions": tuple(mult_hist.tolist()),
        "term_order": inv,
    }


def _chi_square(a: list, b: list) -> float:
    """p-value of a 2 x k chi-square test; sparse categories are pooled."""
    cats = sorted(set(a) | set(b), key=repr)
    ca, cb = Counter(a), Counter(b)
    table = np.array([[ca[c] for c in cats], [cb[c] for c in cats]], dtype=float)
    if table.shape[1] < 2:
        return 1.0
    total = table.sum()
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / total
    sparse = (expected < 5).any(axis=0)
    if sparse.any():
        pooled = table[:, sparse].sum(axis=1, keepdims=True)
        table = np.concatenate([table[:, ~sparse], pooled], axis=1)
        table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return float(chi2_contingency(table, correction=False)[1])


def sample_features(
    lib: MessageLibrary, N: int, demand: DemandSet, samples: int, seed: int, shuffle: bool = True
) -> dict[int, dict[str, list]]:
    """Feature values per server over ``samples`` independent tapes."""
    rlib = relabel(lib, demand)
    base = build_query_plan(rlib, stage_counts(lib.M, demand.P, N), N)
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=samples)
    out = {n: {f: [] for f in FEATURES} for n in range(1, N + 1)}
    layouts = {n: _server_layout(base, n) for n in range(1, N + 1)}
    for sd in seeds:
        tape = RandomTape.from_seed(int(sd), base.L)
        plan = assign_signs(base, rlib, tape)
        if shuffle:
            plan = shuffle_plan(plan, tape)
        for n in range(1, N + 1):
            feats = view_features(server_view(plan, tape, n, layouts[n]))
            for f in FEATURES:
                out[n][f].append(feats[f])
    return out


def transcript_shape_test(
    lib: MessageLibrary,
    N: int,
    demands: Sequence[DemandSet | Sequence[int]],
    samples: int,
    seed: int = 0,
    shuffle: bool = True,
    alpha: float = 0.01,
) -> ShapeReport:
    """Compare what each server sees under different demands.

    Every demand after the first is compared with the first, per server and
    feature; the significance level is Bonferroni-corrected over all those
    comparisons.  Passing is a necessary condition for privacy, not a proof.

    Raises:
        InsufficientSamples: if ``samples < 1000``.
        ValueError: if fewer than two demands are given.
    """
    if samples < 1000:
        raise InsufficientSamples(f"need at least 1000 samples, got {samples}")
    demands = [d if isinstance(d, DemandSet) else DemandSet(tuple(d)) for d in demands]
    if len(demands) < 2:
        raise ValueError("need at least two demands to compare")
    seqs = np.random.SeedSequence(seed).generate_state(len(demands))
    feats = [sample_features(lib, N, d, samples, int(s), shuffle) for d, s in zip(demands, seqs)]
    tests = (len(demands) - 1) * N * len(FEATURES)
    threshold = alpha / tests
    results = []
    for k in range(1, len(demands)):
        for n in range(1, N + 1):
            for f in FEATURES:
                p = _chi_square(feats[0][n][f], feats[k][n][f])
                results.append(FeatureResult(f, n, demands[k].indices, p, p < threshold))
    return ShapeReport(samples, threshold, results)
