from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmpc.coding import CodedQuery, MdsMatrix, RedundancyCache, encode_stage, stage_matrix
from mmpc.errors import IndexOutOfRange, MissingDonor, ProtocolError, SingularSystem
from mmpc.gf import DEFAULT_Q
from mmpc.model import build_library
from mmpc.planner import make_plan
from mmpc.protocol import (
    DecoderState,
    ServerState,
    Transcript,
    answer_stage,
    decode_stage,
    decode_transcript,
    encode_plan,
    load_transcript_records,
    run_protocol,
    server_answer,
)

from .conftest import GOLDEN_ROWS
from .oracles import evaluate_query, grid_instance

Q = DEFAULT_Q


@pytest.fixture(scope="module")
def golden_setup(golden_lib, golden_rlib, identity_tape):
    plan = make_plan(golden_rlib, 2, identity_tape)
    msgs = golden_lib.messages(golden_lib.random_files(68, np.random.default_rng(5)))
    coded = encode_plan(plan, identity_tape, Q)
    server = ServerState(1, msgs, Q)
    answers = {k: answer_stage(server, cs) for k, cs in coded.items()}
    return plan, msgs, coded, answers


def _decode_before(plan, rlib, answers, target):
    """Decode every earlier round plus the rest of ``target``'s round."""
    dec = DecoderState(plan.P, plan.L, Q)
    cache = RedundancyCache(rlib)
    for i in range(1, target[1] + 1):
        for key, st_ in plan.stages.items():
            if st_.round == i and key != target:
                decode_stage(dec, answers[key], plan, st_, cache.basis(plan, st_), stage_matrix(5, 3, 2, i, key[2], Q))
    return dec, cache


class TestServer:
    def test_zero_messages(self):
        s = ServerState(1, np.zeros((5, 4), dtype=np.int64), Q)
        assert server_answer(s, CodedQuery(1, 2, 1, 0, ((1, 1, 3), (4, 2, 7)))) == 0

    def test_singleton(self):
        msgs = np.arange(20, dtype=np.int64).reshape(5, 4)
        s = ServerState(1, msgs, Q)
        assert server_answer(s, CodedQuery(1, 1, 1, 0, ((3, 2, 1),))) == msgs[2, 1]

    def test_out_of_range(self):
        s = ServerState(1, np.zeros((5, 4), dtype=np.int64), Q)
        with pytest.raises(IndexOutOfRange):
            server_answer(s, CodedQuery(1, 1, 1, 0, ((6, 1, 1),)))
        with pytest.raises(IndexOutOfRange):
            server_answer(s, CodedQuery(1, 1, 1, 0, ((1, 5, 1),)))

    def test_state_is_read_only(self):
        s = ServerState(1, np.zeros((2, 2), dtype=np.int64), Q)
        with pytest.raises(ValueError):
            s.messages[0, 0] = 1

    def test_coded_row_matches_hand_evaluation(self, golden_setup):
        plan, msgs, coded, answers = golden_setup
        st_ = plan.stages[(1, 2, 1)]
        G = stage_matrix(5, 3, 2, 2, 1, Q)
        qs = sorted(plan.queries(st_), key=lambda x: x.subset)
        vals = [evaluate_query(x.terms, msgs, Q) for x in qs]
        for k in range(G.r):
            want = sum(int(G.entries[k, j]) * v for j, v in enumerate(vals)) % Q
            assert answers[(1, 2, 1)][k] == want
            assert server_answer(ServerState(1, msgs, Q), coded[(1, 2, 1)].records()[k]) == want

    def test_reference_and_wire_answers_agree(self, golden_setup):
        plan, msgs, coded, answers = golden_setup
        srv = ServerState(1, msgs, Q)
        for key in [(1, 1, 4), (2, 3, 2), (2, 4, 1)]:
            G = stage_matrix(5, 3, 2, key[1], key[2], Q)
            ref = [server_answer(srv, cq) for cq in encode_stage(plan.queries(plan.stages[key]), G)]
            assert ref == answers[key].tolist()


class TestDecodeStage:
    def test_round1_recovers_all_singletons(self, golden_setup, golden_rlib):
        plan, msgs, _, answers = golden_setup
        dec = DecoderState(2, 68, Q)
        st_ = plan.stages[(1, 1, 1)]
        decode_stage(dec, answers[(1, 1, 1)], plan, st_, RedundancyCache(golden_rlib).basis(plan, st_),
                     stage_matrix(5, 3, 2, 1, 1, Q))
        assert dec.values[(1, 1, 1)].tolist() == msgs[:, 0].tolist()
        assert dec.known[:, 0].all() and dec.decoded_count == 2

    def test_round2_stage1_decodes_six_symbols(self, golden_setup, golden_rlib):
        plan, msgs, _, answers = golden_setup
        dec, cache = _decode_before(plan, golden_rlib, answers, (1, 2, 1))
        before = dec.known.copy()
        st_ = plan.stages[(1, 2, 1)]
        decode_stage(dec, answers[(1, 2, 1)], plan, st_, cache.basis(plan, st_), stage_matrix(5, 3, 2, 2, 1, Q))
        new = np.argwhere(dec.known & ~before)
        assert sorted((int(a) + 1, int(j) + 1) for a, j in new) == [
            (1, 25), (1, 26), (1, 27), (2, 25), (2, 26), (2, 27)
        ]
        for a, j in new:
            assert dec.u[a, j] == msgs[a, j]
        qs = plan.queries(st_)
        assert [int(v) for v in dec.values[(1, 2, 1)]] == [evaluate_query(x.terms, msgs, Q) for x in qs]

    def test_stage_twice_rejected(self, golden_setup, golden_rlib):
        plan, _, _, answers = golden_setup
        dec, cache = _decode_before(plan, golden_rlib, answers, (1, 2, 1))
        st_ = plan.stages[(1, 1, 1)]
        with pytest.raises(MissingDonor):
            decode_stage(dec, answers[(1, 1, 1)], plan, st_, cache.basis(plan, st_), stage_matrix(5, 3, 2, 1, 1, Q))

    def test_missing_donor(self, golden_setup, golden_rlib):
        plan, _, _, answers = golden_setup
        dec = DecoderState(2, 68, Q)
        st_ = plan.stages[(1, 2, 1)]
        basis = RedundancyCache(golden_rlib).basis(plan, st_)
        with pytest.raises(MissingDonor):
            decode_stage(dec, answers[(1, 2, 1)], plan, st_, basis, stage_matrix(5, 3, 2, 2, 1, Q))

    def test_access_ledger(self):
        dec = DecoderState(2, 4, Q)
        with pytest.raises(MissingDonor):
            dec.read(np.array([1]), np.array([1]))
        dec.known[0, 0] = True
        dec.read(np.array([1]), np.array([1]))
        assert dec.reads == 1

    def test_singular_system(self, golden_setup, golden_rlib):
        plan, _, _, answers = golden_setup
        dec, cache = _decode_before(plan, golden_rlib, answers, (1, 2, 1))
        st_ = plan.stages[(1, 2, 1)]
        good = stage_matrix(5, 3, 2, 2, 1, Q)
        ent = good.entries.copy()
        ent[1] = ent[0]
        bad = MdsMatrix(good.r, good.c, Q, good.x, good.y, ent)
        with pytest.raises(SingularSystem):
            decode_stage(dec, answers[(1, 2, 1)], plan, st_, cache.basis(plan, st_), bad)


class TestRunProtocol:
    def test_worked_example(self, golden_lib):
        res = run_protocol(golden_lib, (1, 2), 2, seed=0)
        assert res.correct
        assert res.transcript.download == 184
        assert Fraction(2 * res.summary.L, res.transcript.download) == Fraction(17, 23)
        assert res.transcript.server_download(1) == res.transcript.server_download(2) == 92

    def test_dependent_demand_same_download(self, golden_lib):
        res = run_protocol(golden_lib, (4, 5), 2, seed=1)
        files = golden_lib.random_files(68, res.tape.files_rng())
        d, e = files[0] + files[1], files[1] + files[2]
        assert np.array_equal(res.decoded, np.stack([d, e]) % Q)
        assert res.transcript.download == 184

    def test_all_independent(self):
        lib = build_library(4, 4, Q)
        res = run_protocol(lib, (1, 2), 2, seed=3)
        assert res.correct and res.transcript.download == res.summary.D == 64

    def test_explicit_files_and_small_field(self):
        lib = build_library(5, 3, 1009, GOLDEN_ROWS)
        files = np.random.default_rng(0).integers(0, 1009, size=(3, 68))
        res = run_protocol(lib, (2, 5), 2, seed=4, files=files)
        assert res.correct
        assert np.array_equal(res.messages, lib.messages(files))

    def test_tiny_field_can_be_singular(self):
        # The reduced system depends only on the library and the public
        # matrices, so an unlucky small field fails for every seed.
        lib = build_library(5, 3, 101, GOLDEN_ROWS)
        with pytest.raises(SingularSystem):
            run_protocol(lib, (2, 5), 2, seed=0)

    def test_modulus_mismatch(self, golden_lib):
        with pytest.raises(ProtocolError):
            run_protocol(golden_lib, (1, 2), 2, q=101)

    def test_answer_linearity(self, golden_lib):
        files = golden_lib.random_files(68, np.random.default_rng(2))
        c = 12345
        a = run_protocol(golden_lib, (1, 2), 2, seed=6, files=files)
        b = run_protocol(golden_lib, (1, 2), 2, seed=6, files=files * c % Q)
        for key, e in a.transcript.entries.items():
            assert np.array_equal(b.transcript.entries[key].answers, e.answers * c % Q)

    def test_transcript_counts(self, golden_lib):
        res = run_protocol(golden_lib, (1, 2), 2, seed=0)
        sizes = dict(zip(range(1, 5), res.summary.stage_sizes))
        for key, e in res.transcript.entries.items():
            assert len(e.answers) == sizes[key[1]]
        assert len(res.transcript.records()) == 184

    def test_dump_load_and_redecode(self, golden_lib, tmp_path):
        res = run_protocol(golden_lib, (4, 5), 2, seed=8)
        path = tmp_path / "t.jsonl"
        res.transcript.dump(path, header={"seed": 8})
        header, recs = load_transcript_records(path)
        assert header == {"seed": 8} and len(recs) == 184
        answers = {k: np.zeros(e.coded.r, dtype=np.int64) for k, e in res.transcript.entries.items()}
        for r in recs:
            answers[(r["server"], r["round"], r["stage"])][r["row"]] = r["answer"]
        out = decode_transcript(res.plan, res.rlib, res.tape, answers)
        assert np.array_equal(out, res.expected)

    def test_unshuffled_listing(self, golden_lib):
        res = run_protocol(golden_lib, (1, 2), 2, seed=0, shuffle=False)
        assert res.correct
        first = res.transcript.records(1)[0]
        assert (first["round"], first["stage"], first["row"]) == (1, 1, 0)

    @settings(max_examples=20, deadline=None)
    @given(
        st.sampled_from([(3, 2, 1, 2), (4, 3, 2, 3), (5, 4, 2, 2), (4, 2, 1, 3), (6, 4, 3, 2), (5, 5, 3, 2)]),
        st.integers(0, 10_000),
    )
    def test_zero_error_on_random_instances(self, params, seed):
        M, K, P, N = params
        lib, d = grid_instance(M, K, P, N, seed, Q)
        res = run_protocol(lib, d, N, seed=seed)
        assert res.correct
        assert res.transcript.download == res.summary.D
        assert Transcript is type(res.transcript)
