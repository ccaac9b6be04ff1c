"""
Timely Simulation Runner

Runs benchmark simulations on a worker thread and reports through a
message queue, so the command line can draw progress while batches run.

Messages are dicts with a 'type' key:
    - 'status': {'message'} current stage
    - 'log': {'level', 'message'} forwarded to logging by the consumer
    - 'progress': {'current', 'total'} benchmarks finished
    - 'result': {'row'} one BenchmarkRow
    - 'error': {'message'} the batch stopped
    - 'complete': {'rows'} every row, in job order

Classes:
    SimulationJob: One benchmark to simulate
    SimulationThread: Worker thread for a batch of jobs

Functions:
    corpus_benchmarks: Bundled benchmark files by name
    prepare_benchmark: Analyze, and for transformed mode infer regions
    simulate_job: Run one job to a BenchmarkRow
"""

import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .errors import TimelyError
from .infer import infer_atomic
from .parser import parse_file
from .policy import PolicyDecls, build_policies
from .syntax import LabeledProgram
from .taint import build_summary
from .verify import BenchmarkRow, simulate_benchmark

logger = logging.getLogger(__name__)

CORPUS_DIR = Path(__file__).parent / 'corpus'
MODES = ('transformed', 'jit')


def corpus_benchmarks() -> Dict[str, Path]:
    """Bundled benchmarks, name -> path, sorted by name."""
    return {path.stem: path for path in sorted(CORPUS_DIR.glob('*.oct'))}


@dataclass(frozen=True)
class SimulationJob:
    """
    One benchmark to simulate.

    Attributes:
        name (str): Row label
        path (Optional[Path]): Source file; ignored when ``program`` is given
        program (Optional[LabeledProgram]): Already parsed program
    """
    name: str
    path: Optional[Path] = None
    program: Optional[LabeledProgram] = None

    def load(self) -> LabeledProgram:
        if self.program is not None:
            return self.program
        if self.path is None:
            raise TimelyError(f"job {self.name!r} has neither a path nor a program")
        return parse_file(self.path)


def prepare_benchmark(program: LabeledProgram, mode: str) -> Tuple[LabeledProgram, LabeledProgram, PolicyDecls]:
    """
    Analyze a program and pick what to run for a mode.

    Args:
        program: Original annotated program
        mode: 'transformed' (inferred regions) or 'jit' (original program)

    Returns:
        Tuple: (program to run, program schedules come from, policies)
    """
    fs = build_summary(program)
    pd = build_policies(program, fs)
    if mode == 'jit':
        return program, program, pd
    if mode == 'transformed':
        _, transformed = infer_atomic(program, fs, pd)
        return transformed, transformed, pd
    raise TimelyError(f"unknown mode {mode!r}")


def simulate_job(job: SimulationJob, mode: str, kind: str, seed: int, runs: int,
                 config: Dict[str, Any]) -> BenchmarkRow:
    program = job.load()
    run_program, schedule_program, pd = prepare_benchmark(program, mode)
    return simulate_benchmark(job.name, run_program, pd, mode, kind, seed=seed, runs=runs,
                              config=config, schedule_program=schedule_program)


class SimulationThread(threading.Thread):
    """
    Thread class for simulation batches with queue communication.

    Attributes:
        message_queue (queue.Queue): Queue for messages to the consumer
        params (Dict[str, Any]): Batch parameters
        stop_event (threading.Event): Set to stop after the current job
        rows (List[BenchmarkRow]): Finished rows, in job order
    """

    def __init__(self, message_queue: queue.Queue, params: Dict[str, Any]) -> None:
        """
        Initialize the simulation thread.

        Args:
            message_queue: Queue for progress/status/result messages
            params: Batch parameters:
                - jobs (List[SimulationJob]): Benchmarks to run
                - modes (List[str]): 'transformed' and/or 'jit'
                - schedule (str): 'none', 'pathological', 'exhaustive' or 'random'
                - seed (int): Base seed for random schedules
                - runs (int): Runs per benchmark for random schedules
                - config (Dict[str, Any]): Simulation settings (fuel, budgets, workers)
        """
        super().__init__()
        self.message_queue = message_queue
        self.params = params
        self.stop_event = threading.Event()
        self.rows: List[BenchmarkRow] = []
        self.daemon = True

    def run(self) -> None:
        try:
            self._run_batch()
        except TimelyError as e:
            self.send_error(str(e))
            self.send_log("error", f"Simulation stopped: {e}")
        except Exception as e:  # noqa: BLE001
            self.send_error(f"Simulation error: {e}")
            self.send_log("error", f"Fatal error: {e}")

    def stop(self) -> None:
        self.stop_event.set()
        self.send_log("warning", "Simulation cancelled")

    def _tasks(self) -> List[Tuple[SimulationJob, str]]:
        jobs: List[SimulationJob] = list(self.params.get('jobs', []))
        modes: List[str] = list(self.params.get('modes', ['transformed']))
        return [(job, mode) for mode in modes for job in jobs]

    def _run_batch(self) -> None:
        tasks = self._tasks()
        kind = self.params.get('schedule', 'pathological')
        seed = self.params.get('seed', 0)
        runs = self.params.get('runs', 100)
        config = self.params.get('config', {})
        workers = max(1, int(config.get('workers', 1)))
        total = len(tasks)

        self.send_status(f"Simulating {total} benchmark run(s) with {kind} failures")
        self.send_progress(0, total)
        results: Dict[int, BenchmarkRow] = {}

        if workers == 1:
            for index, (job, mode) in enumerate(tasks):
                if self.stop_event.is_set():
                    break
                self.send_status(f"{job.name} ({mode})")
                results[index] = self._finish(simulate_job(job, mode, kind, seed, runs, config))
                self.send_progress(len(results), total)
        else:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                futures = {ex.submit(simulate_job, job, mode, kind, seed, runs, config): index
                           for index, (job, mode) in enumerate(tasks)}
                for future in as_completed(futures):
                    results[futures[future]] = self._finish(future.result())
                    self.send_progress(len(results), total)

        self.rows = [results[index] for index in sorted(results)]
        self.send_complete(self.rows)

    def _finish(self, row: BenchmarkRow) -> BenchmarkRow:
        self.send_result(row)
        self.send_log("info", f"{row.benchmark} {row.mode}: {row.violating}/{row.runs} runs violating")
        if row.disagreements:
            self.send_log("warning", f"{row.benchmark} {row.mode}: {row.disagreements} oracle disagreement(s)")
        return row

    # Messages

    def send_progress(self, current: int, total: int) -> None:
        self.message_queue.put({
            'type': 'progress',
            'current': current,
            'total': total
        })

    def send_status(self, message: str) -> None:
        self.message_queue.put({
            'type': 'status',
            'message': message
        })

    def send_log(self, level: str, message: str) -> None:
        self.message_queue.put({
            'type': 'log',
            'level': level,
            'message': message
        })

    def send_error(self, message: str) -> None:
        self.message_queue.put({
            'type': 'error',
            'message': message
        })

    def send_result(self, row: BenchmarkRow) -> None:
        self.message_queue.put({
            'type': 'result',
            'row': row
        })

    def send_complete(self, rows: List[BenchmarkRow]) -> None:
        self.message_queue.put({
            'type': 'complete',
            'rows': rows
        })
