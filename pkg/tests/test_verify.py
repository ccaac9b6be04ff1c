"""
Tests for timely/verify.py.

The unprotected programs must break under their pathological schedules
and the transformed ones must not; the trace checkers and the
bit-vector detector must agree on every run.
"""

from __future__ import annotations

import pytest

from timely.checker import check_program
from timely.errors import BudgetExceeded
from timely.infer import infer_atomic
from timely.machine import constant_oracle, format_trace, run_continuous, run_intermittent
from timely.parser import parse_file
from timely.verify import (
    AtLabels, BitVectorDetector, Exhaustive, FailurePoint, NoFailures, RandomFailures, check_trace,
    exhaustive_verify, pathological_points, policy_kinds, run_bitvector_detector, simulate_benchmark,
)

from tests.conftest import analyze


@pytest.fixture
def fresh_setup(fresh_average):
    fs, pd = analyze(fresh_average)
    pm, transformed = infer_atomic(fresh_average, fs, pd)
    return fresh_average, transformed, pd


@pytest.fixture
def pair_setup(consistent_pair):
    fs, pd = analyze(consistent_pair)
    pm, transformed = infer_atomic(consistent_pair, fs, pd)
    return consistent_pair, transformed, pd


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

class TestSchedules:
    def test_pathological_fresh(self, fresh_setup):
        program, _, pd = fresh_setup
        schedule = pathological_points(program, pd)
        assert schedule.points == (FailurePoint("cmd", ("main", 3), (), 0, 1),)
        assert schedule.describe() == "at cmd (main,3) #0 n=1"

    def test_pathological_consistency_skips_first_input(self, pair_setup):
        program, _, pd = pair_setup
        (point,) = pathological_points(program, pd, n=10).points
        assert point.site == ("sense", 0)
        assert point.context == (("main", 1), ("confirm", 3), ("pres", 1))
        assert point.n == 10

    def test_split(self):
        schedule = AtLabels([FailurePoint("cmd", ("main", 0)), FailurePoint("ret", ("main", 5))])
        assert [len(part) for part in schedule.split()] == [1, 1]

    def test_point_matches_occurrence(self, fresh_average):
        point = FailurePoint("cmd", ("sense", 0), None, 1)
        state, trace = run_intermittent(fresh_average, constant_oracle(1), AtLabels([point]))
        reboot = next(obs for obs in trace if obs.kind == "reboot")
        assert reboot.func == "sense"
        inputs = [obs.tau for obs in trace if obs.kind == "input"]
        assert inputs[1] == reboot.tau

    def test_exhaustive_fails_at_index(self, fresh_average):
        state, trace = run_intermittent(fresh_average, constant_oracle(1), Exhaustive(0, 3))
        assert trace[0].kind == "reboot"
        assert trace[0].tau == 3
        assert state.fired == {("exhaustive", 0)}

    def test_random_is_replayable(self, fresh_average):
        first = run_intermittent(fresh_average, constant_oracle(1), RandomFailures(3, 0.3))[1]
        second = run_intermittent(fresh_average, constant_oracle(1), RandomFailures(3, 0.3))[1]
        assert format_trace(first) == format_trace(second)

    def test_random_respects_failure_cap(self, fresh_average):
        state, _ = run_intermittent(fresh_average, constant_oracle(1), RandomFailures(5, 1.0, max_failures=2))
        assert state.failures == 2

    def test_no_failures(self, fresh_average):
        state, _ = run_intermittent(fresh_average, constant_oracle(1), NoFailures())
        assert state.failures == 0
        assert NoFailures().describe() == "none"


# ---------------------------------------------------------------------------
# Trace checkers
# ---------------------------------------------------------------------------

class TestTraceCheck:
    def test_continuous_run_is_clean(self, fresh_setup):
        program, _, pd = fresh_setup
        _, trace = run_continuous(program)
        assert not any(verdict.violated for verdict in check_trace(trace, pd).values())

    def test_stale_fresh_value(self, fresh_setup):
        program, _, pd = fresh_setup
        _, trace = run_intermittent(program, constant_oracle(1), pathological_points(program, pd, n=5))
        verdict = check_trace(trace, pd)["fresh@main:1"]
        assert verdict.violated
        assert verdict.failure == 16
        assert verdict.segment == (2, 16)

    def test_region_protects_fresh_value(self, fresh_setup):
        program, transformed, pd = fresh_setup
        _, trace = run_intermittent(transformed, constant_oracle(1), pathological_points(program, pd))
        assert not check_trace(trace, pd)["fresh@main:1"].violated

    def test_inconsistent_pair(self, pair_setup):
        program, _, pd = pair_setup
        _, trace = run_intermittent(program, constant_oracle(1), pathological_points(program, pd))
        assert check_trace(trace, pd)["consistent@1"].violated

    def test_strict_requires_region(self, fresh_setup):
        program, transformed, pd = fresh_setup
        _, plain = run_continuous(program)
        _, protected = run_continuous(transformed)
        assert check_trace(plain, pd, strict=True)["fresh@main:1"].violated
        assert not check_trace(protected, pd, strict=True)["fresh@main:1"].violated


class TestDetector:
    def test_fires_on_stale_use(self, fresh_setup):
        program, _, pd = fresh_setup
        verdicts, _ = run_bitvector_detector(program, pd, pathological_points(program, pd))
        assert verdicts["fresh@main:1"].violated
        assert verdicts["fresh@main:1"].schedule == "at cmd (main,3) #0 n=1"

    def test_fires_on_split_group(self, pair_setup):
        program, _, pd = pair_setup
        detector = BitVectorDetector(pd)
        run_intermittent(program, constant_oracle(1), pathological_points(program, pd), listeners=[detector])
        assert list(detector.fires) == ["consistent@1"]

    def test_quiet_under_regions(self, pair_setup):
        program, transformed, pd = pair_setup
        verdicts, state = run_bitvector_detector(transformed, pd, pathological_points(program, pd))
        assert state.failures == 1
        assert not any(verdict.violated for verdict in verdicts.values())


# ---------------------------------------------------------------------------
# Exhaustive enumeration and simulation
# ---------------------------------------------------------------------------

class TestExhaustive:
    def test_transformed_program_is_safe(self, fresh_setup):
        _, transformed, pd = fresh_setup
        summary = exhaustive_verify(transformed, pd, n_values=(1, 10))
        assert summary.ok
        assert summary.runs > 0

    def test_original_program_is_not(self, fresh_setup):
        program, _, pd = fresh_setup
        summary = exhaustive_verify(program, pd, n_values=(1,))
        assert not summary.ok
        assert {pid for _, _, pid in summary.violations} == {"fresh@main:1"}

    def test_corpus_is_safe(self, corpus_path):
        program = parse_file(corpus_path)
        fs, pd = analyze(program)
        pm, transformed = infer_atomic(program, fs, pd)
        assert check_program(program, transformed, pm).ok
        summary = exhaustive_verify(transformed, pd)
        assert summary.ok, summary.violations[:5]
        assert summary.runs > 0

    def test_budget(self, fresh_setup):
        program, _, pd = fresh_setup
        with pytest.raises(BudgetExceeded):
            exhaustive_verify(program, pd, max_steps=5)


class TestSimulateBenchmark:
    def test_fresh_average_rows(self, fresh_setup):
        program, transformed, pd = fresh_setup
        jit = simulate_benchmark("fresh_average", program, pd, "jit", "pathological")
        protected = simulate_benchmark("fresh_average", transformed, pd, "transformed", "pathological",
                                       schedule_program=program)
        assert (jit.runs, jit.violating, jit.percent) == (1, 1, 100.0)
        assert jit.per_policy == {"fresh@main:1": 1}
        assert (protected.runs, protected.violating) == (1, 0)
        assert jit.disagreements == protected.disagreements == 0

    def test_unfired_points_are_skipped(self, fresh_average):
        fs, pd = analyze(fresh_average)
        row = simulate_benchmark("fresh_average", fresh_average, pd, "jit", "none")
        assert (row.runs, row.violating, row.skipped) == (1, 0, 0)

    def test_random_rows(self, pair_setup):
        program, transformed, pd = pair_setup
        row = simulate_benchmark("pair", transformed, pd, "transformed", "random", seed=1, runs=20,
                                 config={"random_failure_probability": 0.2, "pick_max": 50})
        assert row.runs == 20
        assert row.violating == 0
        assert row.disagreements == 0

    def test_unknown_schedule_kind(self, fresh_setup):
        program, _, pd = fresh_setup
        with pytest.raises(ValueError):
            simulate_benchmark("fresh_average", program, pd, "jit", "sometimes")

    def test_corpus(self, corpus_path):
        program = parse_file(corpus_path)
        fs, pd = analyze(program)
        _, transformed = infer_atomic(program, fs, pd)
        jit = simulate_benchmark(corpus_path.stem, program, pd, "jit", "pathological")
        protected = simulate_benchmark(corpus_path.stem, transformed, pd, "transformed", "pathological",
                                       schedule_program=program)
        assert jit.runs > 0
        assert jit.violating == jit.runs
        assert protected.violating == 0
        assert jit.disagreements == protected.disagreements == 0


class TestPolicyKinds:
    def test_fixtures(self, fresh_average, consistent_pair):
        assert policy_kinds(analyze(fresh_average)[1]) == ["Fresh"]
        assert policy_kinds(analyze(consistent_pair)[1]) == ["Con"]

    def test_fresh_consistent(self, corpus_path):
        pd = analyze(parse_file(corpus_path))[1]
        kinds = policy_kinds(pd)
        assert kinds
        if corpus_path.stem == "tire":
            assert kinds == ["Fresh", "Con", "FreshCon"]
