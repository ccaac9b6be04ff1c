"""
Tests for timely/timely_runner.py.

Covers the bundled corpus, benchmark preparation per mode, and the
SimulationThread queue protocol in sequential and pooled form.
"""

from __future__ import annotations

import queue
import time
from typing import List
from unittest.mock import patch

import pytest

from timely import timely_runner
from timely.errors import TimelyError
from timely.policy import regions_of
from timely.timely_runner import (
    SimulationJob, SimulationThread, corpus_benchmarks, prepare_benchmark, simulate_job,
)
from timely.verify import BenchmarkRow


def _drain(q: queue.Queue, timeout: float = 5.0) -> List[dict]:
    out = []
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            out.append(q.get(timeout=0.1))
        except queue.Empty:
            break
    return out


def _run_thread(params: dict) -> List[dict]:
    q = queue.Queue()
    t = SimulationThread(q, params)
    t.start()
    t.join(timeout=60)
    return _drain(q)


# ---------------------------------------------------------------------------
# Corpus and preparation
# ---------------------------------------------------------------------------

class TestCorpus:
    def test_bundled_benchmarks(self):
        names = list(corpus_benchmarks())
        assert names == sorted(names)
        assert {"activity", "greenhouse", "tire"} <= set(names)
        assert all(path.suffix == ".oct" for path in corpus_benchmarks().values())


class TestPrepare:
    def test_jit_runs_original(self, fresh_average):
        run_program, schedule_program, pd = prepare_benchmark(fresh_average, "jit")
        assert run_program is fresh_average
        assert schedule_program is fresh_average
        assert list(pd) == ["fresh@main:1"]

    def test_transformed_runs_regions(self, fresh_average):
        run_program, schedule_program, _ = prepare_benchmark(fresh_average, "transformed")
        assert list(regions_of(run_program)) == [1]
        assert schedule_program is run_program

    def test_unknown_mode(self, fresh_average):
        with pytest.raises(TimelyError, match="unknown mode"):
            prepare_benchmark(fresh_average, "checkpointed")

    def test_job_needs_a_source(self):
        with pytest.raises(TimelyError):
            SimulationJob("empty").load()

    def test_simulate_job_from_program(self, consistent_pair):
        row = simulate_job(SimulationJob("pair", program=consistent_pair), "jit", "pathological", 0, 1, {})
        assert row.benchmark == "pair"
        assert (row.runs, row.violating) == (1, 1)


# ---------------------------------------------------------------------------
# SimulationThread queue protocol
# ---------------------------------------------------------------------------

class TestSimulationQueueProtocol:
    def test_batch_emits_results_then_complete(self, fresh_average, consistent_pair):
        jobs = [SimulationJob("fresh", program=fresh_average), SimulationJob("pair", program=consistent_pair)]
        msgs = _run_thread({"jobs": jobs, "modes": ["transformed", "jit"], "schedule": "pathological"})
        types = [m["type"] for m in msgs]
        assert types[0] == "status"
        assert types.count("result") == 4
        assert types[-1] == "complete"
        rows = msgs[-1]["rows"]
        assert [(row.benchmark, row.mode) for row in rows] == [
            ("fresh", "transformed"), ("pair", "transformed"), ("fresh", "jit"), ("pair", "jit"),
        ]
        assert [row.violating for row in rows] == [0, 0, 1, 1]

    def test_progress_counts_up(self, fresh_average):
        msgs = _run_thread({"jobs": [SimulationJob("fresh", program=fresh_average)], "schedule": "none"})
        progress = [(m["current"], m["total"]) for m in msgs if m["type"] == "progress"]
        assert progress == [(0, 1), (1, 1)]

    def test_pool_keeps_job_order(self, fresh_average, consistent_pair):
        jobs = [SimulationJob("fresh", program=fresh_average), SimulationJob("pair", program=consistent_pair)]
        params = {"jobs": jobs, "modes": ["jit"], "schedule": "pathological", "config": {"workers": 2}}
        q = queue.Queue()
        t = SimulationThread(q, params)
        t.start()
        t.join(timeout=60)
        assert [row.benchmark for row in t.rows] == ["fresh", "pair"]
        assert [m["type"] for m in _drain(q)][-1] == "complete"

    def test_timely_error_becomes_error_message(self):
        msgs = _run_thread({"jobs": [SimulationJob("broken")], "schedule": "none"})
        errors = [m for m in msgs if m["type"] == "error"]
        assert len(errors) == 1
        assert "neither a path nor a program" in errors[0]["message"]
        assert "complete" not in [m["type"] for m in msgs]

    def test_unexpected_error_is_reported(self, fresh_average):
        with patch.object(timely_runner, "simulate_job", side_effect=RuntimeError("boom")):
            msgs = _run_thread({"jobs": [SimulationJob("fresh", program=fresh_average)]})
        errors = [m for m in msgs if m["type"] == "error"]
        assert errors[0]["message"] == "Simulation error: boom"
        logs = [m for m in msgs if m["type"] == "log"]
        assert any(m["level"] == "error" for m in logs)

    def test_disagreement_is_logged(self, fresh_average, mocker):
        row = BenchmarkRow("fresh", "jit", "none", runs=1, disagreements=1)
        mocker.patch.object(timely_runner, "simulate_job", return_value=row)
        msgs = _run_thread({"jobs": [SimulationJob("fresh", program=fresh_average)], "modes": ["jit"]})
        warnings = [m for m in msgs if m["type"] == "log" and m["level"] == "warning"]
        assert any("oracle disagreement" in m["message"] for m in warnings)

    def test_stop_before_start_runs_nothing(self, fresh_average):
        q = queue.Queue()
        t = SimulationThread(q, {"jobs": [SimulationJob("fresh", program=fresh_average)], "schedule": "none"})
        t.stop()
        t.start()
        t.join(timeout=60)
        msgs = _drain(q)
        assert t.rows == []
        assert "result" not in [m["type"] for m in msgs]
        assert msgs[0] == {"type": "log", "level": "warning", "message": "Simulation cancelled"}
