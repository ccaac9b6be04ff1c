"""
Tests for timely/infer.py.

Region bounds come from the candidate function, the lifted blocks and
their dominators; the checkpoint set lists what a region must log.
"""

from __future__ import annotations

import pytest

from timely.cfg import build_cfg
from timely.errors import AnalysisError
from timely.infer import (
    RegionPlan, compute_checkpoint_set, find_candidate, infer_atomic, insert_regions, lift_blocks,
    plan_regions, truncate, writes_through_param,
)
from timely.machine import constant_oracle, run_continuous, run_intermittent
from timely.parser import parse, parse_file
from timely.policy import regions_of
from timely.printer import pretty_print
from timely.syntax import Atomic, labels_in, walk
from timely.taint import Chain
from timely.verify import Exhaustive

from tests.conftest import analyze


def _chain(*sites):
    return Chain(tuple(sites))


# ---------------------------------------------------------------------------
# Candidate function
# ---------------------------------------------------------------------------

class TestFindCandidate:
    def test_common_prefix_picks_caller(self, fresh_average):
        items = [
            _chain(("main", 0), ("tmp", 0), ("sense", 0)),
            _chain(("main", 0), ("tmp", 1), ("sense", 0)),
        ]
        assert find_candidate(items, fresh_average) == (1, "tmp")

    def test_use_in_caller_moves_to_caller(self, fresh_average):
        items = [_chain(("main", 0), ("tmp", 0), ("sense", 0)), _chain(("main", 3))]
        assert find_candidate(items, fresh_average) == (0, "main")

    def test_consistent_pair_lands_in_confirm(self, consistent_pair):
        _, pd = analyze(consistent_pair)
        (group,) = pd["consistent@1"].groups
        assert find_candidate(group.items, consistent_pair) == (1, "confirm")

    def test_return_of_helper_moves_out(self):
        program = parse("fn f() { let fresh a = 1; ret a } fn main() { let b = f(); ret b }")
        assert find_candidate([_chain(("main", 0), ("f", 1))], program) == (0, "main")

    def test_use_in_main_return(self, fresh_average):
        with pytest.raises(AnalysisError, match="main's return"):
            find_candidate([_chain(("main", 5))], fresh_average)

    def test_no_items(self, fresh_average):
        with pytest.raises(AnalysisError):
            find_candidate([], fresh_average)


# ---------------------------------------------------------------------------
# Lifting and truncation
# ---------------------------------------------------------------------------

class TestBounds:
    def test_lift_to_call_sites(self, fresh_average):
        cfg = build_cfg(fresh_average.main)
        first = _chain(("main", 0), ("tmp", 0), ("sense", 0))
        use = _chain(("main", 4))
        lifted = lift_blocks([first, use], 0, cfg)
        assert lifted[first] is cfg.block_of(0)
        assert lifted[use].kind == "then"

    def test_lift_through_wrong_function(self, fresh_average):
        cfg = build_cfg(fresh_average.main)
        with pytest.raises(AnalysisError, match="does not pass through"):
            lift_blocks([_chain(("main", 0), ("tmp", 0))], 1, cfg)

    def test_truncate_inside_one_block(self, fresh_average):
        cfg = build_cfg(fresh_average.main)
        entry = cfg.blocks[cfg.entry]
        start, end = truncate(entry, entry, [2, 1])
        assert (start.index, end.index) == (1, 2)

    def test_truncate_without_hits(self, fresh_average):
        cfg = build_cfg(fresh_average.main)
        entry = cfg.blocks[cfg.entry]
        join = cfg.block_of(5)
        start, end = truncate(entry, join, [4])
        assert start.index == len(entry.labels)
        assert end.index == -1


# ---------------------------------------------------------------------------
# Checkpoint sets
# ---------------------------------------------------------------------------

class TestCheckpointSet:
    def test_writes_through_param(self, reference_program):
        assert writes_through_param(reference_program) == {"bump": True, "main": False}

    def test_reference_parameter_is_saved(self, reference_program):
        bump = reference_program.function("bump")
        assert compute_checkpoint_set(bump.body, bump, reference_program) == frozenset({"*p"})

    def test_names_bound_inside_are_skipped(self):
        program = parse("""
            fn main() {
                let total = 0;
                let a = IN();
                let b = a + 1;
                b := b + 1;
                total := b;
                ret total
            }
        """)
        main = program.main
        assert compute_checkpoint_set(main.body, main, program) == frozenset()
        region = next(node for node in walk(main.body) if node.label == 1)
        assert compute_checkpoint_set(region, main, program) == frozenset({"total"})

    def test_array_element_write_saves_array(self):
        program = parse("""
            fn main() {
                let buf = [0, 0];
                let v = IN();
                buf[1] := v;
                ret buf[1]
            }
        """)
        main = program.main
        region = next(node for node in walk(main.body) if node.label == 1)
        assert compute_checkpoint_set(region, main, program) == frozenset({"buf"})

    def test_region_in_caller_saves_passed_location(self, reference_program):
        fs, pd = analyze(reference_program)
        (plan,) = plan_regions(reference_program, fs, pd)
        assert plan.omega == frozenset({"counter"})


# ---------------------------------------------------------------------------
# Planning and insertion
# ---------------------------------------------------------------------------

class TestPlanRegions:
    def test_fresh_average(self, fresh_average):
        fs, pd = analyze(fresh_average)
        assert plan_regions(fresh_average, fs, pd) == [
            RegionPlan(1, "main", 0, 3, ("fresh@main:1",), frozenset()),
        ]

    def test_consistent_pair(self, consistent_pair):
        fs, pd = analyze(consistent_pair)
        assert plan_regions(consistent_pair, fs, pd) == [
            RegionPlan(1, "confirm", 2, 3, ("consistent@1",), frozenset()),
        ]

    def test_reference_program(self, reference_program):
        fs, pd = analyze(reference_program)
        (plan,) = plan_regions(reference_program, fs, pd)
        assert (plan.func, plan.start, plan.end) == ("main", 1, 4)

    def test_policy_without_instructions_is_skipped(self, caplog):
        program = parse("""
            fn unused() { let v = IN(); Fresh(v); let w = v; ret w }
            fn main() { ret 0 }
        """)
        fs, pd = analyze(program)
        with caplog.at_level("WARNING", logger="timely.infer"):
            assert plan_regions(program, fs, pd) == []
        assert "fresh@unused:1" in caplog.text

    def test_policies_share_identical_extent(self):
        program = parse("""
            fn main() {
                let a = IN();
                let b = IN();
                Consistent(a, 1);
                Consistent(b, 1);
                Consistent(a, 2);
                Consistent(b, 2);
                let c = a + b;
                ret c
            }
        """)
        fs, pd = analyze(program)
        (plan,) = plan_regions(program, fs, pd)
        assert plan.pids == ("consistent@1", "consistent@2")


class TestInsertRegions:
    def test_region_wraps_branch(self, fresh_average):
        fs, pd = analyze(fresh_average)
        pm, transformed = infer_atomic(fresh_average, fs, pd)
        assert pm == {1: ["fresh@main:1"]}
        func, region = regions_of(transformed)[1]
        assert func == "main"
        assert sorted(labels_in(region.body)) == [0, 1, 2, 3, 4]
        assert region.label == transformed.main.ret_label + 1

    def test_plain_labels_do_not_shift(self, consistent_pair):
        fs, pd = analyze(consistent_pair)
        _, transformed = infer_atomic(consistent_pair, fs, pd)
        before = consistent_pair.function("confirm")
        after = transformed.function("confirm")
        assert after.ret_label == before.ret_label
        plain = [node.label for node in walk(after.body) if not isinstance(node, Atomic)]
        assert sorted(plain) == sorted(labels_in(before.body))

    def test_printed_region(self, reference_program):
        fs, pd = analyze(reference_program)
        _, transformed = infer_atomic(reference_program, fs, pd)
        assert "atomic(1, {counter}) {" in pretty_print(transformed)

    def test_overlapping_regions_nest(self):
        program = parse("""
            fn main() {
                let g = 0;
                g := g + 1;
                let b = IN();
                let c = 0;
                ret g
            }
        """)
        plans = [
            RegionPlan(1, "main", 1, 1, (), frozenset({"g"})),
            RegionPlan(2, "main", 1, 2, (), frozenset()),
        ]
        transformed = insert_regions(program, plans)
        regions = regions_of(transformed)
        assert set(regions) == {1, 2}
        outer = regions[2][1]
        assert any(isinstance(node, Atomic) and node.region_id == 1 for node in walk(outer.body))
        assert outer.omega == frozenset({"g"})
        assert regions[1][1].omega == frozenset({"g"})

    def test_enclosing_region_logs_nested_writes(self):
        program = parse("""
            fn main() {
                let g = 0;
                let x = IN();
                Fresh(x);
                g := g + 1;
                let y = IN();
                Fresh(y);
                let u = x + 1;
                let w = y + 1;
                ret g
            }
        """)
        fs, pd = analyze(program)
        _, transformed = infer_atomic(program, fs, pd)
        nested = [
            region for _, region in regions_of(transformed).values()
            if any(isinstance(node, Atomic) and node is not region for node in walk(region.body))
        ]
        assert nested
        assert all("g" in region.omega for region in nested)

        expected, _ = run_continuous(transformed, constant_oracle(5))
        assert expected.result.value == 1
        for index in range(expected.actions + 2):
            state, _ = run_intermittent(transformed, constant_oracle(5), Exhaustive(index))
            assert state.result.value == 1, f"failure before action {index}"

    def test_unplaceable_region(self, fresh_average):
        with pytest.raises(AnalysisError):
            insert_regions(fresh_average, [RegionPlan(1, "main", 4, 0, (), frozenset())])

    def test_corpus_regions_are_placed(self, corpus_path):
        program = parse_file(corpus_path)
        fs, pd = analyze(program)
        pm, transformed = infer_atomic(program, fs, pd)
        assert set(regions_of(transformed)) == set(pm)
        assert all(pm.values())
