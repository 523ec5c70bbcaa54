"""Servers, transcripts and the client-side decoder.

Decoding walks the rounds in increasing order.  Inside a stage it first
rebuilds the useless query values from demanded symbols decoded earlier and
stored donor values, then solves the square system left after substituting
the redundant queries, and finally strips the side information off each
informative query to obtain one new demanded symbol.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from . import gf
from .coding import (
    CodedQuery,
    CodedStage,
    RedundancyBasis,
    RedundancyCache,
    MdsMatrix,
    column_of_row,
    encode_wire_stage,
    stage_matrix,
)
from .errors import IndexOutOfRange, MissingDonor, ProtocolError, SingularMatrix, SingularSystem
from .model import DemandSet, MessageLibrary, RandomTape, RelabeledLibrary, relabel
from .planner import PlanSummary, QueryClass, QueryPlan, RoundTemplate, Stage, StageKey, make_plan, plan_summary


# --- servers ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ServerState:
    """A server holding every message in original labels (``M x L``)."""

    server: int
    messages: np.ndarray
    q: int

    def __post_init__(self):
        self.messages.setflags(write=False)


def server_answer(state: ServerState, coded: CodedQuery) -> int:
    """Evaluate one coded query on the stored messages.

    Raises:
        IndexOutOfRange: if a term names a missing label or position.
    """
    M, L = state.messages.shape
    acc = 0
    for label, index, coef in coded.terms:
        if not (1 <= label <= M and 1 <= index <= L):
            raise IndexOutOfRange(f"term ({label}, {index}) is outside the {M} x {L} store")
        acc = (acc + int(coef) * int(state.messages[label - 1, index - 1])) % state.q
    return acc


def answer_stage(state: ServerState, coded: CodedStage) -> np.ndarray:
    """Answers to all coded queries of a stage at once."""
    M, L = state.messages.shape
    if coded.labels.size and (
        coded.labels.min() < 1 or coded.labels.max() > M or coded.indices.min() < 1 or coded.indices.max() > L
    ):
        raise IndexOutOfRange(f"stage {coded.round}/{coded.stage} names symbols outside the {M} x {L} store")
    vals = state.messages[coded.labels - 1, coded.indices - 1]
    return gf.matmul(coded.coefs, vals, state.q)


# --- transcript -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TranscriptEntry:
    coded: CodedStage
    answers: np.ndarray


@dataclass(frozen=True, eq=False)
class Transcript:
    """Everything exchanged with the servers.

    Attributes:
        entries: per stage key, the coded queries and their answers.
        record_keys: per server, sort keys fixing the order in which that
            server's coded records are listed (``None`` when unshuffled).
    """

    N: int
    entries: dict[StageKey, TranscriptEntry]
    record_keys: dict[int, np.ndarray] | None = None

    @property
    def download(self) -> int:
        return sum(e.coded.r for e in self.entries.values())

    def server_download(self, server: int) -> int:
        return sum(e.coded.r for k, e in self.entries.items() if k[0] == server)

    def records(self, server: int | None = None) -> list[dict]:
        """Wire records with answers, in each server's listing order."""
        out: list[dict] = []
        servers = range(1, self.N + 1) if server is None else [server]
        for n in servers:
            recs = []
            for key, e in self.entries.items():
                if key[0] != n:
                    continue
                for cq, a in zip(e.coded.records(), e.answers):
                    rec = cq.to_record()
                    rec["answer"] = int(a)
                    recs.append(rec)
            if self.record_keys is not None:
                recs = [recs[j] for j in np.argsort(self.record_keys[n], kind="stable")]
            out.extend(recs)
        return out

    def dump(self, path, header: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if header is not None:
                fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_transcript_records(path) -> tuple[dict | None, list[dict]]:
    header, recs = None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "header" in obj:
                header = obj["header"]
            else:
                recs.append(obj)
    return header, recs


# --- decoder ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _DecodeLayout:
    """Per-round index bookkeeping for the decoder."""

    informative: np.ndarray
    useless: np.ndarray
    useless_mask: np.ndarray  # (n_useless, i): positions holding demanded symbols
    slot_rows: tuple[np.ndarray, ...]
    slot_drows: tuple[np.ndarray, ...]
    slot_start: tuple[int, ...]


@lru_cache(maxsize=None)
def _layout(tmpl: RoundTemplate) -> _DecodeLayout:
    useless = np.flatnonzero(tmpl.cls == QueryClass.USELESS)
    pos = np.arange(tmpl.i)[None, :]
    mask = pos < tmpl.demanded_count[useless][:, None]
    rows, drows, starts = [], [], []
    for t, T in enumerate(tmpl.slots, start=1):
        sel = np.flatnonzero(tmpl.donor_slot == t)
        rows.append(sel)
        drows.append(tmpl.donor_row[sel])
        starts.append(len(T))
    return _DecodeLayout(
        np.flatnonzero(tmpl.cls == QueryClass.INFORMATIVE), useless, mask, tuple(rows), tuple(drows), tuple(starts)
    )


@dataclass
class DecoderState:
    """What the client knows so far.

    Attributes:
        u: ``P x L`` demanded symbols in plan space (valid where ``known``).
        known: access ledger of decoded demanded symbols.
        values: stored query values per decoded stage.
        reads: number of demanded-symbol reads performed.
    """

    P: int
    L: int
    q: int
    u: np.ndarray = field(init=False)
    known: np.ndarray = field(init=False)
    values: dict[StageKey, np.ndarray] = field(default_factory=dict)
    reads: int = 0

    def __post_init__(self):
        self.u = np.zeros((self.P, self.L), dtype=np.int64)
        self.known = np.zeros((self.P, self.L), dtype=bool)

    @property
    def decoded_count(self) -> int:
        return int(self.known.sum())

    def read(self, labels: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """Read demanded symbols, refusing any not yet decoded."""
        ok = self.known[labels - 1, indices - 1]
        if not ok.all():
            j = int(np.flatnonzero(~ok)[0])
            raise MissingDonor(f"symbol {int(labels[j])}({int(indices[j])}) is read before it was decoded")
        self.reads += int(labels.size)
        return self.u[labels - 1, indices - 1]


def decode_stage(
    dec: DecoderState, answers: np.ndarray, plan: QueryPlan, st: Stage, basis: RedundancyBasis, G: MdsMatrix
) -> DecoderState:
    """Recover every query value of a stage and the new demanded symbols.

    Raises:
        MissingDonor: if a donor stage was not decoded first, a demanded
            symbol is read too early, or the stage was already decoded.
        SingularSystem: if the reduced system is not invertible.
        ProtocolError: if a side-information block does not match its donor
            up to one common sign.
    """
    q = dec.q
    if st.key in dec.values:
        raise MissingDonor(f"stage {st.key} was already decoded")
    tmpl = plan.templates[st.round]
    if len(st.rows) != tmpl.n_queries:
        raise ProtocolError(f"stage {st.key} is incomplete")
    lay = _layout(tmpl)
    nq = tmpl.n_queries
    signs = plan.term_signs(st)
    labels = tmpl.labels
    idx = st.indices

    # Signed donor contribution of each query's non-demanded block.
    side = np.zeros(nq, dtype=np.int64)
    for t, (rows, drows, start) in enumerate(zip(lay.slot_rows, lay.slot_drows, lay.slot_start)):
        dkey = st.donors[t]
        dvals = dec.values.get(dkey)
        if dvals is None:
            raise MissingDonor(f"stage {st.key} needs donor {dkey}, which is not decoded yet")
        dsigns = plan.term_signs(plan.stages[dkey])[drows]
        block = signs[rows, start:]
        rho = block[:, 0] * dsigns[:, 0]
        if not np.array_equal(block, rho[:, None] * dsigns):
            raise ProtocolError(f"stage {st.key}: side information disagrees with donor {dkey}")
        side[rows] = gf.signs_to_field(rho, q) * dvals[drows] % q

    # Useless queries: decoded demanded symbols plus the donor block.
    U = lay.useless
    if U.size:
        m = lay.useless_mask
        lab = np.where(m, labels[U], 1)
        sym = np.where(m, idx[U], 1)
        got = dec.read(lab[m], sym[m])
        vals = np.zeros(m.shape, dtype=np.int64)
        vals[m] = got * gf.signs_to_field(signs[U][m], q) % q
        q2_vals = (vals.sum(axis=1) + side[U]) % q
    else:
        q2_vals = np.zeros(0, dtype=np.int64)

    cols = column_of_row(plan, st.round)
    Gm = G.entries
    G1, G2, G3 = Gm[:, cols[basis.q1]], Gm[:, cols[basis.q2]], Gm[:, cols[basis.q3]]
    E = (G1 + gf.matmul(G3, basis.A, q)) % q
    rhs = (answers - gf.matmul((G2 + gf.matmul(G3, basis.B, q)) % q, q2_vals, q)) % q
    try:
        q1_vals = gf.ff_solve(E, rhs, q)
    except SingularMatrix as exc:
        raise SingularSystem(f"stage {st.key}: reduced system is singular") from exc

    values = np.empty(nq, dtype=np.int64)
    values[basis.q1] = q1_vals
    values[basis.q2] = q2_vals
    values[basis.q3] = (gf.matmul(basis.A, q1_vals, q) + gf.matmul(basis.B, q2_vals, q)) % q

    # Informative queries yield one new demanded symbol each.
    I = lay.informative
    th, j = labels[I, 0], idx[I, 0]
    if dec.known[th - 1, j - 1].any():
        raise ProtocolError(f"stage {st.key} decodes a symbol twice")
    dec.u[th - 1, j - 1] = (values[I] - side[I]) * gf.signs_to_field(signs[I, 0], q) % q
    dec.known[th - 1, j - 1] = True
    values.setflags(write=False)
    dec.values[st.key] = values
    return dec


def finalize(dec: DecoderState, tape: RandomTape) -> np.ndarray:
    """Undo the symbol permutation and signs: ``P x L`` demanded messages."""
    if not dec.known.all():
        raise ProtocolError(f"only {dec.decoded_count} of {dec.P * dec.L} demanded symbols were decoded")
    out = np.empty_like(dec.u)
    out[:, tape.perm] = dec.u * gf.signs_to_field(tape.sigma, dec.q)[None, :] % dec.q
    return out


# --- end to end -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProtocolResult:
    decoded: np.ndarray
    transcript: Transcript
    summary: PlanSummary
    plan: QueryPlan
    rlib: RelabeledLibrary
    tape: RandomTape
    messages: np.ndarray

    @property
    def expected(self) -> np.ndarray:
        return self.messages[[i - 1 for i in self.rlib.demand.indices]]

    @property
    def correct(self) -> bool:
        return bool(np.array_equal(self.decoded, self.expected))


def encode_plan(plan: QueryPlan, tape: RandomTape, q: int) -> dict[StageKey, CodedStage]:
    """Wire-encode every stage, with term order from the shuffle keys."""
    out: dict[StageKey, CodedStage] = {}
    offset = {n: 0 for n in range(1, plan.N + 1)}
    for key, st in plan.stages.items():
        width = len(st.rows) * st.round
        keys = None
        if plan.shuffle is not None:
            o = offset[st.server]
            keys = plan.shuffle.term_keys[st.server][o : o + width]
        offset[st.server] += width
        G = stage_matrix(plan.M, plan.K, plan.P, st.round, st.stage, q)
        out[key] = encode_wire_stage(plan, st, G, tape, q, keys)
    return out


def decode_transcript(
    plan: QueryPlan, rlib: RelabeledLibrary, tape: RandomTape, answers: dict[StageKey, np.ndarray],
    cache: RedundancyCache | None = None,
) -> np.ndarray:
    """Run the decoder over all stages and return the demanded messages."""
    q = rlib.q
    cache = cache or RedundancyCache(rlib)
    dec = DecoderState(plan.P, plan.L, q)
    for i in range(1, plan.rounds + 1):
        for key, st in plan.stages.items():
            if st.round != i:
                continue
            if key not in answers:
                raise MissingDonor(f"no answers for stage {key}")
            G = stage_matrix(plan.M, plan.K, plan.P, i, st.stage, q)
            decode_stage(dec, np.asarray(answers[key], dtype=np.int64) % q, plan, st, cache.basis(plan, st), G)
    return finalize(dec, tape)


def run_protocol(
    lib: MessageLibrary,
    demand: DemandSet | Iterable[int],
    N: int,
    q: int | None = None,
    seed: int = 0,
    files: np.ndarray | None = None,
    shuffle: bool = True,
) -> ProtocolResult:
    """Relabel, plan, sign, shuffle, encode, answer, decode and verify.

    Args:
        lib: the message library (its modulus is the field).
        demand: demanded message labels.
        N: number of servers.
        q: optional modulus, must match ``lib.q`` when given.
        seed: seed for the random tape and, unless ``files`` is given, for
            the file contents.
        files: optional ``K x L`` file contents.
        shuffle: set ``False`` to skip the query/term shuffle.
    """
    if q is not None and int(q) != lib.q:
        raise ProtocolError(f"q={q} does not match the library modulus {lib.q}")
    q = lib.q
    if not isinstance(demand, DemandSet):
        demand = DemandSet(tuple(demand))
    rlib = relabel(lib, demand)
    summary = plan_summary(lib.M, lib.K, demand.P, N)
    tape = RandomTape.from_seed(seed, summary.L)
    plan = make_plan(rlib, N, tape, shuffle=shuffle)
    if files is None:
        files = lib.random_files(summary.L, tape.files_rng())
    messages = lib.messages(files)
    servers = {n: ServerState(n, messages, q) for n in range(1, N + 1)}
    coded = encode_plan(plan, tape, q)
    entries = {key: TranscriptEntry(cs, answer_stage(servers[key[0]], cs)) for key, cs in coded.items()}
    record_keys = plan.shuffle.record_keys if plan.shuffle is not None else None
    transcript = Transcript(N, entries, record_keys)
    decoded = decode_transcript(plan, rlib, tape, {k: e.answers for k, e in entries.items()})
    return ProtocolResult(decoded, transcript, summary, plan, rlib, tape, messages)
