from __future__ import annotations

import copy
from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from mmpc.audit import (
    FEATURES,
    MUTATIONS,
    _orig_signs,
    _solution_count,
    apply_sign_mapping,
    find_sign_mapping,
    mutate_plan,
    server_view,
    structural_audit,
    transcript_shape_test,
    view_features,
    view_from_coded,
)
from mmpc.coding import RedundancyCache
from mmpc.errors import InsufficientSamples, NoMapping
from mmpc.gf import DEFAULT_Q
from mmpc.model import DemandSet, RandomTape, build_library, relabel
from mmpc.planner import make_plan, plan_summary
from mmpc.protocol import encode_plan

from .oracles import brute_sign_solutions, grid_instance, parse_query, random_admissible_demand

Q = DEFAULT_Q

#: Mutation -> checks it must break (and nothing else may be relied upon).
TARGETS = {
    "drop-query": {"subset_coverage"},
    "swap-index": {"index_structure"},
    "dup-donor": {"stage_index_disjointness"},
    "flip-sign": {"redundancy_rank"},
}


def _plan(lib, demand, N=2, seed=0, shuffle=True):
    rl = relabel(lib, DemandSet(tuple(demand)))
    L = plan_summary(lib.M, lib.K, len(demand), N).L
    tape = RandomTape.from_seed(seed, L)
    return make_plan(rl, N, tape, shuffle=shuffle), rl, tape


class TestStructural:
    def test_golden_plan_passes(self, golden_lib):
        plan, rl, _ = _plan(golden_lib, (1, 2))
        reports = structural_audit(plan, rl)
        assert [r.check for r in reports] == ["subset_coverage", "index_structure", "stage_index_disjointness", "redundancy_rank"]
        assert all(r.passed and r.violations == 0 for r in reports)

    @pytest.mark.parametrize("kind", MUTATIONS)
    def test_each_mutation_is_caught(self, golden_lib, kind):
        plan, rl, _ = _plan(golden_lib, (1, 2))
        failed = {r.check for r in structural_audit(mutate_plan(plan, kind), rl) if not r.passed}
        assert TARGETS[kind] <= failed

    def test_unknown_mutation(self, golden_lib):
        plan, _, _ = _plan(golden_lib, (1, 2))
        with pytest.raises(ValueError):
            mutate_plan(plan, "nope")

    def test_report_serialization(self, golden_lib):
        plan, rl, _ = _plan(golden_lib, (1, 2))
        rep = structural_audit(mutate_plan(plan, "drop-query"), rl)[0]
        d = rep.to_dict()
        assert set(d) == {"check", "scope", "pass", "detail"} and d["pass"] is False
        assert "missing" in d["detail"][0]

    def test_round2_stage_has_ten_subsets(self, golden_rlib, identity_tape):
        plan = make_plan(golden_rlib, 2, identity_tape)
        qs = plan.queries(plan.stages[(1, 2, 1)])
        assert sorted(x.subset for x in qs) == list(combinations(range(1, 6), 2))

    def test_shared_index_of_sibling_queries(self, golden_rlib, identity_tape):
        # a55 and b55 both complete the pair {c, d} in the first round-3 stage.
        plan = make_plan(golden_rlib, 2, identity_tape)
        terms = {x.subset: x.terms for x in plan.queries(plan.stages[(1, 3, 1)])}
        first = {t[0]: t[1] for t in terms[(1, 3, 4)]}
        second = {t[0]: t[1] for t in terms[(2, 3, 4)]}
        assert first[1] == second[2] == 55
        assert [t[:2] for t in parse_query("a55-c29-d28")] == sorted(t[:2] for t in terms[(1, 3, 4)])

    def test_random_grid_instances_pass(self):
        for M, K, P, N in [(4, 2, 1, 3), (6, 4, 2, 2), (7, 3, 2, 2), (6, 6, 4, 2)]:
            lib, d = grid_instance(M, K, P, N, 0, Q)
            plan, rl, _ = _plan(lib, d, N)
            cache = RedundancyCache(rl)
            assert all(r.passed for r in structural_audit(plan, rl, cache))


class TestSignMapping:
    def test_identical_demands(self, golden_lib):
        p1, _, _ = _plan(golden_lib, (1, 2), seed=1)
        p2, _, _ = _plan(golden_lib, (1, 2), seed=2)
        m = find_sign_mapping(p1, p2)
        assert all(set(t.values()) == {1} for t in m.switch.values())
        assert apply_sign_mapping(p1, p2, m)

    def test_dependent_pair_maps_onto_independent_pair(self, golden_lib):
        p1, _, _ = _plan(golden_lib, (1, 2))
        p2, _, _ = _plan(golden_lib, (4, 5))
        m = find_sign_mapping(p1, p2)
        assert m.solutions == {1: 2, 2: 2, 3: 2, 4: 2}
        assert apply_sign_mapping(p1, p2, m)
        for n in (1, 2):
            used = m.index_map[n][1:] != 0
            assert set(np.abs(m.sigma[n][1:][used]).tolist()) == {1}

    def test_mapping_is_index_bijection(self, golden_lib):
        p1, _, _ = _plan(golden_lib, (1, 2))
        p2, _, _ = _plan(golden_lib, (3, 4))
        m = find_sign_mapping(p1, p2)
        for n in (1, 2):
            targets = m.index_map[n][1:]
            assert sorted(targets[targets != 0].tolist()) == sorted(set(targets[targets != 0].tolist()))

    @pytest.mark.parametrize("M,K,P,i", [(3, 2, 1, 2), (4, 3, 2, 2), (4, 3, 2, 3), (4, 2, 1, 3)])
    def test_brute_force_agrees(self, M, K, P, i):
        lib, d1 = grid_instance(M, K, P, 2, 1, Q)
        rng = np.random.default_rng(7)
        d2 = d1
        while set(d2) == set(d1):
            d2 = random_admissible_demand(lib, P, rng)
        p1, _, _ = _plan(lib, d1)
        p2, _, _ = _plan(lib, d2, seed=5)
        e1, e2 = _orig_signs(p1, i), _orig_signs(p2, i)
        sols = brute_sign_solutions(e1, e2, M, i)
        assert len(sols) == _solution_count(M, i) == 2
        (t1, s1), (t2, s2) = sols
        assert all(t1[g] == -t2[g] for g in t1) and all(s1[S] == -s2[S] for S in s1)
        found = find_sign_mapping(p1, p2)
        assert any(found.switch[i] == t for t, _ in sols)

    def test_contradiction_reported(self, golden_lib):
        p1, _, _ = _plan(golden_lib, (1, 2))
        p2, _, _ = _plan(golden_lib, (1, 2))
        tmpl = copy.copy(p2.templates[2])
        tmpl.struct_signs = tmpl.struct_signs.copy()
        tmpl.struct_signs[0, 0] *= -1
        # A single flipped term cannot be absorbed by whole-query and per-index signs.
        bad = replace(p2, templates={**p2.templates, 2: tmpl})
        with pytest.raises(NoMapping) as exc:
            find_sign_mapping(p1, bad)
        assert exc.value.args[0].startswith("round 2")


class TestViews:
    def test_coded_view_equals_plan_view(self, golden_lib):
        plan, _, tape = _plan(golden_lib, (4, 5), seed=3)
        coded = encode_plan(plan, tape, Q)
        for n in (1, 2):
            a = server_view(plan, tape, n)
            b = view_from_coded([coded[st.key] for st in plan.iter_stages(n)], Q, 5, 3, 2)
            for f in ("stage", "round", "column", "label", "index", "sign", "order"):
                ka = np.lexsort((a.label, a.column, a.stage))
                kb = np.lexsort((b.label, b.column, b.stage))
                assert np.array_equal(getattr(a, f)[ka], getattr(b, f)[kb]), f
            assert view_features(a) == view_features(b)

    def test_features_present(self, golden_lib):
        plan, _, tape = _plan(golden_lib, (1, 2))
        assert set(view_features(server_view(plan, tape, 1))) == set(FEATURES)


class TestShape:
    def test_needs_samples(self, golden_lib):
        with pytest.raises(InsufficientSamples):
            transcript_shape_test(golden_lib, 2, [(1, 2), (4, 5)], 999)

    def test_needs_two_demands(self, golden_lib):
        with pytest.raises(ValueError):
            transcript_shape_test(golden_lib, 2, [(1, 2)], 1000)

    def test_demands_indistinguishable(self, golden_lib):
        rep = transcript_shape_test(golden_lib, 2, [(1, 2), (4, 5), (2, 5)], 1000, seed=11)
        assert rep.passed, rep.rejected()
        assert rep.threshold == pytest.approx(0.01 / (2 * 2 * len(FEATURES)))

    def test_unshuffled_listing_is_detected(self, golden_lib):
        rep = transcript_shape_test(golden_lib, 2, [(1, 2), (4, 5)], 1000, seed=3, shuffle=False)
        assert {r.feature for r in rep.rejected()} == {"term_order"}

    def test_report_dict(self):
        lib = build_library(4, 3, Q, [(1, 1, 1)])
        rep = transcript_shape_test(lib, 2, [(1, 2), (1, 4)], 1000, seed=0)
        d = rep.to_dict()
        assert d["check"] == "transcript_shape" and len(d["detail"]) == 2 * len(FEATURES)
