"""Stage counts, donor scheduling, index and sign assignment, shuffling.

The layout of one round is the same for every stage of that round: which
subset each query covers, which symbols are fresh and which are copied from
donor stages.  ``RoundTemplate`` captures that layout symbolically once per
round; a concrete ``Stage`` then only needs the first fresh index of itself
and of each of its donors to materialize all symbol indices.

Labels inside a plan are the *relabeled* ones: ``1..P`` are the demanded
messages, ``P+1..K`` complete the basis and ``K+1..M`` are dependent.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from itertools import combinations
from math import comb, lcm
from typing import Iterator

import numpy as np

from .errors import BadParams, DonorExhausted, IndexClash
from .model import RandomTape, RelabeledLibrary


class QueryClass(enum.IntEnum):
    SIDEINFO = 0
    INFORMATIVE = 1
    USELESS = 2

    @property
    def tag(self) -> str:
        return self.name.lower()


# --- stage counts and summary ----------------------------------------------


@dataclass(frozen=True)
class StageCounts:
    """Stages per server in each round.

    Attributes:
        alpha: ``alpha[i - 1]`` is the number of stages in round ``i``, for
            ``i = 1..M-P+1``.
        scale: common multiplier applied to make every count integral.
    """

    M: int
    P: int
    N: int
    alpha: tuple[int, ...]
    scale: int = 1

    @property
    def rounds(self) -> int:
        return len(self.alpha)

    def __getitem__(self, i: int) -> int:
        """Stages in round ``i`` (1-based); zero beyond the last round."""
        return self.alpha[i - 1] if 1 <= i <= len(self.alpha) else 0


def _alpha_fractions(M: int, P: int, N: int) -> list[Fraction]:
    last = M - P + 1
    a = [Fraction(0)] * (last + P + 1)
    a[last] = Fraction((N - 1) ** (M - P))
    for i in range(last - 1, 0, -1):
        a[i] = sum((comb(P, m) * a[i + m] for m in range(1, P + 1)), Fraction(0)) / (N - 1)
    return a[1 : last + 1]


def stage_counts(M: int, P: int, N: int) -> StageCounts:
    """Evaluate the stage-count recursion from the last round downwards.

    Raises:
        BadParams: unless ``1 <= P <= M - 1`` and ``N >= 2``.
    """
    if not (1 <= P <= M - 1 and N >= 2):
        raise BadParams(f"stage counts need 1 <= P <= M-1 and N >= 2, got M={M}, P={P}, N={N}")
    raw = _alpha_fractions(M, P, N)
    scale = lcm(*(f.denominator for f in raw))
    alpha = tuple(int(f * scale) for f in raw)
    counts = StageCounts(M, P, N, alpha, scale)
    for j in range(1, M - P + 1):
        rhs = sum(comb(P, m) * counts[j + m] for m in range(1, P + 1))
        assert (N - 1) * counts[j] == rhs, "side-information balance violated"
    return counts


def fresh_per_stage(M: int, P: int, i: int) -> int:
    """New symbols per demanded message in one stage of round ``i``."""
    return comb(M - P, i - 1)


def download_per_stage(M: int, K: int, P: int, i: int) -> int:
    """Coded downloads ``r`` for one stage of round ``i``."""
    return comb(M - P, i) - comb(M - K, i) + P * comb(M - P, i - 1)


@dataclass(frozen=True)
class PlanSummary:
    """Closed-form size of the scheme.

    Attributes:
        alpha: stages per server per round.
        L: symbols per message.
        D: total downloaded symbols over all servers.
        R2: achieved rate ``P * L / D``.
        stage_sizes: coded downloads per stage, by round.
    """

    M: int
    K: int
    P: int
    N: int
    alpha: tuple[int, ...]
    L: int
    D: int
    R2: Fraction
    stage_sizes: tuple[int, ...]


def _check_scheme_params(M: int, K: int, P: int, N: int) -> None:
    if not (1 <= P < K <= M and N >= 2):
        raise BadParams(f"the scheme needs 1 <= P < K <= M and N >= 2, got M={M}, K={K}, P={P}, N={N}")


def plan_summary(M: int, K: int, P: int, N: int) -> PlanSummary:
    """Subpacketization, download and rate of the scheme.

    Raises:
        BadParams: unless ``1 <= P < K <= M`` and ``N >= 2``.
    """
    _check_scheme_params(M, K, P, N)
    counts = stage_counts(M, P, N)
    rounds = range(1, counts.rounds + 1)
    L = N * sum(counts[i] * fresh_per_stage(M, P, i) for i in rounds)
    sizes = tuple(download_per_stage(M, K, P, i) for i in rounds)
    D = N * sum(counts[i] * sizes[i - 1] for i in rounds)
    return PlanSummary(M, K, P, N, counts.alpha, L, D, Fraction(P * L, D), sizes)


# --- round templates --------------------------------------------------------


def _lex_rank(items: list[tuple[int, ...]]) -> dict[tuple[int, ...], int]:
    return {s: r for r, s in enumerate(items)}


class RoundTemplate:
    """Symbolic layout of one stage of round ``i``.

    Every term ``(row, p)`` gets an index recipe ``(slot, k)``: slot 0 means
    the ``k``-th fresh index of the stage itself, slot ``t >= 1`` the
    ``k``-th fresh index of the donor stage serving demanded subset
    ``slots[t - 1]``.

    Attributes:
        subsets: the ``C(M, i)`` subsets in lexicographic order.
        labels: ``(nq, i)`` array of the subsets.
        cls: query class per row.
        slots: demanded subsets that need a donor, in consumption order.
        slot_round: donor round per slot.
        recipe_slot, recipe_k: ``(nq, i)`` index recipes.
        donor_slot: slot supplying the non-demanded block of a row, or -1.
        donor_row: row of the donor's side-information query, or -1.
        block_start: position of the first non-demanded term of a row.
        struct_signs: ``(nq, i)`` signs before switching.
        subset_id: ``(nq, i)`` id of ``subset minus term`` among (i-1)-subsets.
    """

    def __init__(self, M: int, K: int, P: int, i: int, lower: dict[int, RoundTemplate]):
        self.M, self.K, self.P, self.i = M, K, P, i
        self.subsets = list(combinations(range(1, M + 1), i))
        self.position = _lex_rank(self.subsets)
        nq = len(self.subsets)
        self.labels = np.array(self.subsets, dtype=np.int64).reshape(nq, i)
        ndem = (self.labels <= P).sum(axis=1)
        self.demanded_count = ndem
        self.cls = np.where(ndem == 0, QueryClass.SIDEINFO, np.where(ndem == 1, QueryClass.INFORMATIVE, QueryClass.USELESS))
        self.n_fresh = fresh_per_stage(M, P, i)
        slots: list[tuple[int, ...]] = []
        for m in range(1, min(P, i - 1) + 1):
            slots.extend(combinations(range(1, P + 1), m))
        self.slots = slots
        self.slot_of = {T: t + 1 for t, T in enumerate(slots)}
        self.slot_round = np.array([i - len(T) for T in slots], dtype=np.int64)
        self._compile(lower)
        self.struct_signs = self._structure_signs()
        below = _lex_rank(list(combinations(range(1, M + 1), i - 1)))
        self.subset_id = np.array(
            [[below[s[:p] + s[p + 1 :]] for p in range(i)] for s in self.subsets], dtype=np.int64
        ).reshape(nq, i)
        for arr in (self.labels, self.cls, self.recipe_slot, self.recipe_k, self.donor_slot,
                    self.donor_row, self.block_start, self.struct_signs, self.subset_id):
            arr.setflags(write=False)

    @property
    def n_queries(self) -> int:
        return len(self.subsets)

    def _fresh_rank(self, rest: tuple[int, ...]) -> int:
        nondem = tuple(range(self.P + 1, self.M + 1))
        return _fresh_ranks(nondem, len(rest))[rest]

    def _compile(self, lower: dict[int, RoundTemplate]) -> None:
        M, P, i = self.M, self.P, self.i
        nq = self.n_queries
        slot = np.full((nq, i), -1, dtype=np.int64)
        k = np.full((nq, i), -1, dtype=np.int64)
        donor_slot = np.full(nq, -1, dtype=np.int64)
        donor_row = np.full(nq, -1, dtype=np.int64)
        block = self.demanded_count.astype(np.int64).copy()

        def copy_block(row: int, T: tuple[int, ...], rest: tuple[int, ...]) -> None:
            if not rest:
                return
            donor = lower[i - len(T)]
            drow = donor.position[rest]
            if np.any(donor.recipe_slot[drow] != 0):
                raise IndexClash(f"donor query {rest} of round {i - len(T)} is not all fresh")
            m = len(T)
            slot[row, m:] = self.slot_of[T]
            k[row, m:] = donor.recipe_k[drow]
            donor_slot[row] = self.slot_of[T]
            donor_row[row] = drow

        # Informative queries: a fresh demanded symbol plus a donated block.
        for row, s in enumerate(self.subsets):
            if self.cls[row] != QueryClass.INFORMATIVE:
                continue
            rest = s[1:]
            slot[row, 0] = 0
            k[row, 0] = self._fresh_rank(rest)
            if i > 1:
                copy_block(row, (s[0],), rest)

        # Side-information queries reuse the fresh indices of this stage.
        for row, s in enumerate(self.subsets):
            if self.cls[row] != QueryClass.SIDEINFO:
                continue
            for p in range(i):
                if i == 1:
                    slot[row, p], k[row, p] = 0, 0
                    continue
                src = self.position[tuple(sorted((1,) + s[:p] + s[p + 1 :]))]
                slot[row, p], k[row, p] = slot[src, 0], k[src, 0]

        # Useless queries, by ascending number of demanded labels.
        order = sorted(
            (r for r in range(nq) if self.cls[r] == QueryClass.USELESS),
            key=lambda r: (self.demanded_count[r], self.subsets[r]),
        )
        nondem = range(P + 1, M + 1)
        for row in order:
            s = self.subsets[row]
            m = int(self.demanded_count[row])
            T, rest = s[:m], s[m:]
            copy_block(row, T, rest)
            x = next((y for y in nondem if y not in rest), None)
            if x is None:
                raise IndexClash(f"no free non-demanded label to index query {s}")
            for p in range(m):
                src_subset = tuple(sorted(T[:p] + T[p + 1 :] + rest + (x,)))
                src = self.position[src_subset]
                q = src_subset.index(x)
                if slot[src, q] < 0:
                    raise IndexClash(f"query {src_subset} is not indexed before {s}")
                slot[row, p], k[row, p] = slot[src, q], k[src, q]

        if np.any(slot < 0):
            raise IndexClash(f"round {i}: some terms were left without an index")
        self.recipe_slot, self.recipe_k = slot, k
        self.donor_slot, self.donor_row, self.block_start = donor_slot, donor_row, block
        self._check_recipes()

    def _check_recipes(self) -> None:
        """Same (i-1)-subset => same recipe; different subsets => different recipes."""
        seen: dict[tuple[int, ...], tuple[int, int]] = {}
        used: dict[tuple[int, int], tuple[int, ...]] = {}
        for row, s in enumerate(self.subsets):
            for p in range(self.i):
                S = s[:p] + s[p + 1 :]
                rec = (int(self.recipe_slot[row, p]), int(self.recipe_k[row, p]))
                if seen.setdefault(S, rec) != rec:
                    raise IndexClash(f"round {self.i}: terms sharing {S} got different indices")
                if used.setdefault(rec, S) != S:
                    raise IndexClash(f"round {self.i}: subsets {S} and {used[rec]} share an index")

    def _structure_signs(self) -> np.ndarray:
        signs = np.ones_like(self.labels)
        if self.i == 1:
            return signs
        across = 1 if self.i % 2 == 0 else -1
        dep = self.labels > self.K
        indep_pos = np.cumsum(~dep, axis=1) - 1
        dep_pos = np.cumsum(dep, axis=1) - 1
        alt = lambda pos: np.where(pos % 2 == 0, 1, -1)  # noqa: E731
        return np.where(dep, across * alt(dep_pos), alt(indep_pos)).astype(np.int64)

    @cached_property
    def redundant_mask(self) -> np.ndarray:
        """Side-information queries made only of dependent labels."""
        return (self.cls == QueryClass.SIDEINFO) & (self.labels > self.K).all(axis=1)

    @cached_property
    def useless_mask(self) -> np.ndarray:
        return self.cls == QueryClass.USELESS


_FRESH_CACHE: dict[tuple, dict[tuple[int, ...], int]] = {}


def _fresh_ranks(nondem: tuple[int, ...], size: int) -> dict[tuple[int, ...], int]:
    key = (nondem, size)
    if key not in _FRESH_CACHE:
        _FRESH_CACHE[key] = _lex_rank(list(combinations(nondem, size)))
    return _FRESH_CACHE[key]


_TEMPLATE_CACHE: dict[tuple[int, int, int], dict[int, RoundTemplate]] = {}


def round_templates(M: int, K: int, P: int) -> dict[int, RoundTemplate]:
    """Templates for rounds ``1..M-P+1`` (cached per parameter triple)."""
    key = (M, K, P)
    if key not in _TEMPLATE_CACHE:
        out: dict[int, RoundTemplate] = {}
        for i in range(1, M - P + 2):
            out[i] = RoundTemplate(M, K, P, i, out)
        _TEMPLATE_CACHE[key] = out
    return _TEMPLATE_CACHE[key]


# --- plans ------------------------------------------------------------------

StageKey = tuple[int, int, int]


@dataclass(frozen=True, eq=False)
class Stage:
    """One stage of one server.

    Attributes:
        server, round, stage: 1-based coordinates.
        base: first fresh symbol index owned by this stage.
        donors: donor stage per template slot.
        indices: ``(nq, i)`` symbol indices (1-based).
        switch: ``(nq,)`` switching signs (all +1 before signing).
        rows: template rows present, normally ``arange(nq)``.
        signs: optional ``(nq, i)`` structure signs replacing the template's
            (only used to build deliberately broken plans for audits).
    """

    server: int
    round: int
    stage: int
    base: int
    donors: tuple[StageKey, ...]
    indices: np.ndarray
    switch: np.ndarray
    rows: np.ndarray
    signs: np.ndarray | None = None

    def structure_signs(self, tmpl: RoundTemplate) -> np.ndarray:
        return tmpl.struct_signs[self.rows] if self.signs is None else self.signs

    @property
    def key(self) -> StageKey:
        return (self.server, self.round, self.stage)


@dataclass(frozen=True)
class QuerySpec:
    """A single uncoded query, as seen by the client.

    ``signs`` already include the switching sign of the query.
    """

    server: int
    round: int
    stage: int
    row: int
    subset: tuple[int, ...]
    indices: tuple[int, ...]
    signs: tuple[int, ...]
    cls: QueryClass

    @property
    def terms(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(zip(self.subset, self.indices, self.signs))


@dataclass(frozen=True, eq=False)
class ShuffleOrder:
    """Random sort keys for the query, term and coded-record order per server."""

    query_keys: dict[int, np.ndarray]
    term_keys: dict[int, np.ndarray]
    record_keys: dict[int, np.ndarray]


@dataclass(frozen=True, eq=False)
class QueryPlan:
    """All uncoded queries of one protocol run.

    Attributes:
        label_map: original label of each plan label (see RelabeledLibrary).
        templates: per-round layouts.
        stages: every stage keyed by ``(server, round, stage)`` in server,
            round, stage order.
        signed: whether structure signs and switches are applied.
        shuffle: shuffle keys, or ``None`` when unshuffled.
    """

    M: int
    K: int
    P: int
    N: int
    alpha: tuple[int, ...]
    L: int
    label_map: tuple[int, ...]
    templates: dict[int, RoundTemplate]
    stages: dict[StageKey, Stage]
    signed: bool = False
    shuffle: ShuffleOrder | None = None
    fresh_bases: dict[StageKey, int] = field(default_factory=dict, repr=False)

    @property
    def rounds(self) -> int:
        return len(self.alpha)

    def iter_stages(self, server: int | None = None) -> Iterator[Stage]:
        for st in self.stages.values():
            if server is None or st.server == server:
                yield st

    def term_signs(self, st: Stage) -> np.ndarray:
        """``(nq, i)`` effective signs of a stage (structure times switch)."""
        tmpl = self.templates[st.round]
        if not self.signed:
            return np.ones((len(st.rows), st.round), dtype=np.int64)
        return st.structure_signs(tmpl) * st.switch[:, None]

    def queries(self, st: Stage) -> list[QuerySpec]:
        tmpl = self.templates[st.round]
        signs = self.term_signs(st)
        return [
            QuerySpec(
                st.server, st.round, st.stage, int(r), tmpl.subsets[r],
                tuple(int(v) for v in st.indices[j]), tuple(int(v) for v in signs[j]),
                QueryClass(int(tmpl.cls[r])),
            )
            for j, r in enumerate(st.rows)
        ]

    def all_queries(self, server: int | None = None) -> Iterator[QuerySpec]:
        for st in self.iter_stages(server):
            yield from self.queries(st)

    def original_label(self, label: int) -> int:
        return self.label_map[label - 1]

    def donor_ledger(self) -> dict[StageKey, dict[tuple[int, ...], StageKey]]:
        """For each stage, which donor stage served which demanded subset."""
        return {
            key: dict(zip(self.templates[st.round].slots, st.donors))
            for key, st in self.stages.items()
        }

    def dump_records(self) -> list[dict]:
        """JSON-ready records, one per query, in original labels.

        When the plan is shuffled, queries of each server follow the shuffled
        order and terms the shuffled term order.
        """
        out: list[dict] = []
        lm = self.label_map
        for n in range(1, self.N + 1):
            recs = []
            for qs in self.all_queries(n):
                recs.append({
                    "server": qs.server, "round": qs.round, "stage": qs.stage,
                    "class": qs.cls.tag,
                    "terms": [[lm[lab - 1], idx, sgn] for lab, idx, sgn in qs.terms],
                })
            if self.shuffle is not None:
                qkeys = self.shuffle.query_keys[n]
                tkeys = self.shuffle.term_keys[n]
                pos = 0
                for rec in recs:
                    width = len(rec["terms"])
                    order = np.argsort(tkeys[pos : pos + width], kind="stable")
                    rec["terms"] = [rec["terms"][j] for j in order]
                    pos += width
                recs = [recs[j] for j in np.argsort(qkeys, kind="stable")]
            out.extend(recs)
        return out


def _fresh_bases(M: int, P: int, N: int, counts: StageCounts) -> dict[StageKey, int]:
    """First fresh index of every stage.

    Round 1 is numbered server by server; later rounds interleave servers
    within each stage number.
    """
    bases: dict[StageKey, int] = {}
    nxt = 1
    for n in range(1, N + 1):
        for s in range(1, counts[1] + 1):
            bases[(n, 1, s)] = nxt
            nxt += fresh_per_stage(M, P, 1)
    for i in range(2, counts.rounds + 1):
        width = fresh_per_stage(M, P, i)
        for s in range(1, counts[i] + 1):
            for n in range(1, N + 1):
                bases[(n, i, s)] = nxt
                nxt += width
    return bases


def build_query_plan(rlib: RelabeledLibrary, counts: StageCounts, N: int, seed: int | None = None) -> QueryPlan:
    """Lay out every stage of every server: subsets, donors and indices.

    Donors for a consumer server come from a queue per round holding the
    other servers' stages, stage-major with servers in cyclic order after
    the consumer.  Consumers draw in round, stage and slot order.

    Args:
        rlib: relabeled library (demands are labels ``1..P``).
        counts: stage counts for ``(M, P, N)``.
        N: number of servers.
        seed: unused by the layout itself, which is deterministic; accepted
            for interface symmetry.

    Raises:
        BadParams: if ``counts`` does not match the parameters.
        DonorExhausted: if a donor queue runs dry.
        IndexClash: if the index layout breaks the shared-index structure.
    """
    M, K, P = rlib.M, rlib.K, rlib.P
    _check_scheme_params(M, K, P, N)
    if (counts.M, counts.P, counts.N) != (M, P, N):
        raise BadParams(f"stage counts are for {(counts.M, counts.P, counts.N)}, not {(M, P, N)}")
    templates = round_templates(M, K, P)
    bases = _fresh_bases(M, P, N, counts)
    L = N * sum(counts[i] * fresh_per_stage(M, P, i) for i in range(1, counts.rounds + 1))

    queues: dict[tuple[int, int], deque] = {}
    for n in range(1, N + 1):
        others = [(n + d - 1) % N + 1 for d in range(1, N)]
        for j in range(1, counts.rounds + 1):
            queues[(n, j)] = deque((o, j, s) for s in range(1, counts[j] + 1) for o in others)

    stages: dict[StageKey, Stage] = {}
    for n in range(1, N + 1):
        for i in range(1, counts.rounds + 1):
            tmpl = templates[i]
            nq = tmpl.n_queries
            rows = np.arange(nq, dtype=np.int64)
            ones = np.ones(nq, dtype=np.int64)
            rows.setflags(write=False)
            ones.setflags(write=False)
            for s in range(1, counts[i] + 1):
                donors = []
                for t, j in enumerate(tmpl.slot_round):
                    queue = queues[(n, int(j))]
                    if not queue:
                        raise DonorExhausted(
                            f"server {n} round {i} stage {s}: no donor left in round {j} for {tmpl.slots[t]}"
                        )
                    donors.append(queue.popleft())
                slot_base = np.array([bases[(n, i, s)]] + [bases[d] for d in donors], dtype=np.int64)
                idx = slot_base[tmpl.recipe_slot] + tmpl.recipe_k
                idx.setflags(write=False)
                stages[(n, i, s)] = Stage(n, i, s, bases[(n, i, s)], tuple(donors), idx, ones, rows)
    for (n, j), queue in queues.items():
        if j <= M - P and queue:
            raise DonorExhausted(f"server {n}: {len(queue)} round-{j} donor stages were never used")
    return QueryPlan(M, K, P, N, counts.alpha, L, rlib.label_map, templates, stages, fresh_bases=bases)


def assign_signs(plan: QueryPlan, rlib: RelabeledLibrary, tape: RandomTape) -> QueryPlan:
    """Apply structure signs and per-query switching signs.

    Structure signs live in the round templates; this step switches every
    query of rounds two and up by a sign from the tape, drawn in server,
    round, stage, row order.
    """
    if rlib.K != plan.K or rlib.label_map != plan.label_map:
        raise BadParams("plan and relabeled library disagree")
    later = [st for st in plan.stages.values() if st.round >= 2]
    total = sum(len(st.rows) for st in later)
    draws = tape.switch_signs(total)
    stages = dict(plan.stages)
    pos = 0
    for st in later:
        sw = draws[pos : pos + len(st.rows)].copy()
        sw.setflags(write=False)
        pos += len(st.rows)
        stages[st.key] = replace(st, switch=sw)
    return replace(plan, stages=stages, signed=True)


def shuffle_plan(plan: QueryPlan, tape: RandomTape) -> QueryPlan:
    """Draw random query, term and coded-record orders for every server.

    The identity tape leaves the plan unshuffled.  The canonical layout is
    kept untouched for decoding; only sort keys are attached.
    """
    rng = tape.shuffle_rng()
    if rng is None:
        return plan
    qk: dict[int, np.ndarray] = {}
    tk: dict[int, np.ndarray] = {}
    rk: dict[int, np.ndarray] = {}
    for n in range(1, plan.N + 1):
        stages = list(plan.iter_stages(n))
        nq = sum(len(st.rows) for st in stages)
        nt = sum(len(st.rows) * st.round for st in stages)
        nr = sum(download_per_stage(plan.M, plan.K, plan.P, st.round) for st in stages)
        qk[n] = rng.random(nq)
        tk[n] = rng.random(nt)
        rk[n] = rng.random(nr)
    return replace(plan, shuffle=ShuffleOrder(qk, tk, rk))


def make_plan(rlib: RelabeledLibrary, N: int, tape: RandomTape, shuffle: bool = True) -> QueryPlan:
    """Convenience: counts, layout, signs and (optionally) shuffle."""
    counts = stage_counts(rlib.M, rlib.P, N)
    plan = assign_signs(build_query_plan(rlib, counts, N), rlib, tape)
    return shuffle_plan(plan, tape) if shuffle else plan
