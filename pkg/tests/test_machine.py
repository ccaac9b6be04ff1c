"""
Tests for timely/machine.py.

The clock oracle returns tau itself, so input values below are the
logical times the readings were taken.
"""

from __future__ import annotations

import pytest

from timely.errors import ExecutionFault, FuelExhausted
from timely.infer import infer_atomic
from timely.machine import (
    Machine, ReplayOracle, SeededOracle, committed_trace, constant_oracle, format_trace, run_continuous,
    run_intermittent, step_continuous, step_intermittent,
)
from timely.parser import parse
from timely.verify import AtLabels, FailurePoint

from tests.conftest import analyze


def _kinds(trace):
    return [obs.kind for obs in trace]


def _fail_before(func, label, n=1, kind="cmd"):
    return AtLabels([FailurePoint(kind, (func, label), None, 0, n)])


# ---------------------------------------------------------------------------
# Continuous runs
# ---------------------------------------------------------------------------

class TestContinuous:
    def test_fresh_average(self, fresh_average):
        state, trace = run_continuous(fresh_average)
        assert state.halted
        assert state.result.value == 0
        assert state.values(0) == {"alarm": 0, "x": 3}
        assert state.actions == 13
        assert state.tau == 13
        assert _kinds(trace) == ["input", "input", "fresh", "use"]

    def test_inputs_carry_their_time(self, fresh_average):
        state, trace = run_continuous(fresh_average)
        assert [obs.tau for obs in trace if obs.kind == "input"] == [2, 5]
        assert state.memory[(0, "x")].taint == frozenset({2, 5})

    def test_constant_oracle_takes_branch(self, fresh_average):
        state, _ = run_continuous(fresh_average, constant_oracle(10))
        assert state.result.value == 1
        assert state.actions == 14

    def test_reference_write_back(self, reference_program):
        state, _ = run_continuous(reference_program)
        assert state.values(0) == {"counter": 3, "out": 1, "total": 6}
        assert state.memory[(0, "counter")].taint == frozenset({2})
        assert state.result.value == 1

    def test_callee_memory_is_released(self, consistent_pair):
        state, _ = run_continuous(consistent_pair)
        assert all(depth == 0 for depth, _ in state.memory)

    def test_arrays(self):
        program = parse("fn main() { let b = [1, 2]; b[0] := 5; ret b[0] + b[1] }")
        state, _ = run_continuous(program)
        assert state.result.value == 7
        assert state.values(0) == {"b": [5, 2]}

    def test_truncating_division(self):
        program = parse("fn main() { let a = 0 - 7; let q = a / 2; let r = a % 2; ret q }")
        state, _ = run_continuous(program)
        assert state.values(0) == {"a": -7, "q": -3, "r": -1}

    def test_recorded_steps(self, fresh_average):
        state, trace = run_continuous(fresh_average, record=("step",))
        steps = [obs for obs in trace if obs.kind == "step"]
        assert len(steps) == state.actions
        assert str(steps[1].chain) == "(main,0)::(tmp,0)"

    def test_recorded_definitions(self, fresh_average):
        _, trace = run_continuous(fresh_average, record=("define",))
        defines = {(obs.func, obs.label): obs.taint for obs in trace if obs.kind == "define"}
        assert defines[("main", 0)] == frozenset({2, 5})
        assert defines[("main", 2)] == frozenset()

    def test_single_steps(self, fresh_average):
        state = Machine(fresh_average).initial_state()
        step_continuous(fresh_average, state)
        assert state.tau == 1
        assert state.control.func == "tmp"


class TestFaults:
    @pytest.mark.parametrize("source", [
        "fn main() { let a = 0; let b = 1 / a; ret b }",
        "fn main() { let b = [1, 2]; ret b[2] }",
        "fn main() { let a = 1; let p = &a; ret p + 1 }",
    ])
    def test_execution_fault(self, source):
        with pytest.raises(ExecutionFault):
            run_continuous(parse(source))

    def test_fuel(self, fresh_average):
        with pytest.raises(FuelExhausted):
            run_continuous(fresh_average, fuel=3)


# ---------------------------------------------------------------------------
# Power failures
# ---------------------------------------------------------------------------

class TestJitCheckpoints:
    def test_resume_where_stopped(self):
        program = parse("fn main() { let a = 1; a := a + 1; ret a }")
        state, trace = run_intermittent(program, constant_oracle(0), _fail_before("main", 1, n=5))
        assert state.result.value == 2
        assert state.failures == 1
        (reboot,) = [obs for obs in trace if obs.kind == "reboot"]
        assert not reboot.atomic
        assert reboot.n == 5

    def test_off_time_advances_clock(self, fresh_average):
        state, trace = run_intermittent(fresh_average, constant_oracle(1), _fail_before("main", 3, n=5))
        (reboot,) = [obs for obs in trace if obs.kind == "reboot"]
        assert reboot.tau == 16
        assert [obs.tau for obs in trace if obs.kind == "use"] == [16]
        assert state.tau == 13 + 5

    def test_single_steps_through_a_failure(self):
        program = parse("fn main() { let a = 1; a := a + 1; ret a }")
        schedule = _fail_before("main", 0, n=3)
        state = Machine(program).initial_state()
        step_intermittent(program, state, constant_oracle(0), schedule)
        assert (state.failures, state.pending_reboot, state.tau) == (1, 3, 0)
        step_intermittent(program, state, constant_oracle(0), schedule)
        assert state.pending_reboot is None
        assert state.tau == 3
        step_intermittent(program, state, constant_oracle(0), schedule)
        assert state.actions == 1
        assert state.failures == 1

    def test_key_fires_once(self, fresh_average):
        state, _ = run_intermittent(fresh_average, constant_oracle(1), _fail_before("sense", 0))
        assert state.failures == 1


class TestRegions:
    def test_region_restarts_from_its_start(self, fresh_average):
        fs, pd = analyze(fresh_average)
        _, transformed = infer_atomic(fresh_average, fs, pd)
        baseline, _ = run_continuous(transformed)
        state, trace = run_intermittent(transformed, constant_oracle(10), _fail_before("main", 2))
        reboot = next(obs for obs in trace if obs.kind == "reboot")
        assert reboot.atomic
        assert trace[trace.index(reboot) + 1].kind == "begin_atom"
        assert state.result.value == 1
        assert state.actions > baseline.actions
        assert len([obs for obs in trace if obs.kind == "input"]) == 4

    def test_committed_trace_drops_aborted_attempt(self, fresh_average):
        fs, pd = analyze(fresh_average)
        _, transformed = infer_atomic(fresh_average, fs, pd)
        _, trace = run_intermittent(transformed, constant_oracle(10), _fail_before("main", 2))
        assert _kinds(committed_trace(trace)) == [
            "reboot", "begin_atom", "input", "input", "fresh", "use", "end_atom",
        ]

    def test_undo_log_restores_checkpointed_variable(self):
        source = """
            fn main() {
                let total = 0;
                atomic(1, {%s}) {
                    total := total + 1;
                    let r = IN();
                }
                ret total
            }
        """
        logged, _ = run_intermittent(parse(source % "total"), constant_oracle(0), _fail_before("main", 2))
        unlogged, _ = run_intermittent(parse(source % ""), constant_oracle(0), _fail_before("main", 2))
        assert logged.result.value == 1
        assert unlogged.result.value == 2

    def test_nested_region_markers(self):
        program = parse("""
            fn main() {
                let a = 0;
                atomic(1, {}) {
                    atomic(2, {}) {
                        let b = IN();
                    }
                    let c = IN();
                }
                ret a
            }
        """)
        _, trace = run_continuous(program)
        markers = [(obs.kind, obs.region_id, obs.depth) for obs in trace if obs.kind.endswith("_atom")]
        assert markers == [
            ("begin_atom", 1, 0), ("begin_atom", 2, 1), ("end_atom", 2, 1), ("end_atom", 1, 0),
        ]

    def test_failure_in_nested_region_restarts_outermost(self):
        program = parse("""
            fn main() {
                let a = 0;
                atomic(1, {}) {
                    atomic(2, {}) {
                        let b = IN();
                    }
                    let c = IN();
                }
                ret a
            }
        """)
        _, trace = run_intermittent(program, constant_oracle(0), _fail_before("main", 2))
        reboot_at = _kinds(trace).index("reboot")
        after = trace[reboot_at + 1]
        assert (after.kind, after.region_id, after.depth) == ("begin_atom", 1, 0)


# ---------------------------------------------------------------------------
# Oracles and rendering
# ---------------------------------------------------------------------------

class TestOracles:
    def test_constant(self):
        assert constant_oracle(4)(99) == 4

    def test_seeded_is_a_function_of_seed_and_tau(self):
        oracle = SeededOracle(7)
        assert oracle(3) == SeededOracle(7)(3)
        assert all(0 <= oracle(tau) <= 100 for tau in range(20))

    def test_replay(self):
        oracle = ReplayOracle([1, 2])
        assert [oracle(0), oracle(0), oracle(0)] == [1, 2, 2]
        assert ReplayOracle([])(0) == 0


class TestFormatTrace:
    def test_lines(self, fresh_average):
        _, trace = run_continuous(fresh_average)
        assert format_trace(trace) == [
            "(2, input, sense, 0, (main,0)::(tmp,0)::(sense,0))",
            "(5, input, sense, 0, (main,0)::(tmp,1)::(sense,0))",
            "(9, fresh, main, 1, {2,5})",
            "(11, use, main, 3, decl=(main,1)@9)",
        ]

    def test_reboot_line(self, fresh_average):
        _, trace = run_intermittent(fresh_average, constant_oracle(1), _fail_before("main", 3, n=5))
        assert "(16, reboot, main, -1, n=5)" in format_trace(trace)
