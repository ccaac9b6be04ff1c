"""
Timely Verification

Dynamic oracles for freshness and consistency, failure schedules, and
the simulation driver behind the violation tables.

Two independent oracles judge a run:

- The trace checkers read the committed trace. A fresh value is stale
  when a reboot separates its earliest input from its last use; a
  consistency group is broken when a reboot separates its first and
  last executed inputs. ``strict`` additionally demands that the span
  lie inside one region instance.
- The bit-vector detector watches observations as they happen. Each
  input sets its own bit, every power failure clears all bits, and a
  check that finds a needed bit missing reports a violation.

The two must agree on every run; the test suite holds them to it.
"""

import logging
import random
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import BudgetExceeded, ExecutionFault, FuelExhausted
from .machine import (
    Action, FailureSchedule, InputOracle, MachineState, Observation, clock_oracle, committed_trace,
    run_continuous, run_intermittent,
)
from .policy import ConsistentPolicy, FreshPolicy, PolicyDecls, fresh_pid
from .syntax import LabeledProgram, Site
from .taint import Chain

logger = logging.getLogger(__name__)


# Schedules

class NoFailures(FailureSchedule):
    def describe(self) -> str:
        return "none"


@dataclass(frozen=True)
class FailurePoint:
    """
    Fail just before an action.

    Attributes:
        kind (str): 'cmd', 'end' or 'ret'
        site (Site): (function, label) of the action
        context (Optional[Tuple[Site, ...]]): Restrict to one calling context
        occurrence (int): Which execution to fail before, counted from 0
            (per context when ``context`` is given)
        n (int): Off-time
    """
    kind: str
    site: Site
    context: Optional[Tuple[Site, ...]] = None
    occurrence: int = 0
    n: int = 1

    def matches(self, action: Action) -> bool:
        if action.kind != self.kind or action.site != self.site:
            return False
        if self.context is None:
            return action.occurrence == self.occurrence
        return action.chain.context == self.context and action.chain_occurrence == self.occurrence

    def __str__(self) -> str:
        where = str(Chain(self.context + (self.site,))) if self.context is not None else \
            f"({self.site[0]},{self.site[1]})"
        return f"{self.kind} {where} #{self.occurrence} n={self.n}"


class AtLabels(FailureSchedule):
    def __init__(self, points: Iterable[FailurePoint]) -> None:
        self.points: Tuple[FailurePoint, ...] = tuple(points)

    def failure(self, action, state):
        for point in self.points:
            if point not in state.fired and point.matches(action):
                return point, point.n
        return None

    def split(self) -> List['AtLabels']:
        """One single-point schedule per point."""
        return [AtLabels([point]) for point in self.points]

    def describe(self) -> str:
        return "at " + "; ".join(str(point) for point in self.points) if self.points else "at nothing"

    def __len__(self) -> int:
        return len(self.points)


class Exhaustive(FailureSchedule):
    """Fail once, before the action with the given index."""

    def __init__(self, index: int, n: int = 1) -> None:
        self.index = index
        self.n = n

    def failure(self, action, state):
        if action.index == self.index:
            return ('exhaustive', self.index), self.n
        return None

    def describe(self) -> str:
        return f"exhaustive k={self.index} n={self.n}"


class RandomFailures(FailureSchedule):
    """
    Fail before each action with a fixed probability.

    Each decision is a pure function of (seed, action index), so a run is
    replayable from its seed alone.
    """

    def __init__(self, seed: int, probability: float = 0.05, pick_min: int = 1, pick_max: int = 1000,
                 max_failures: int = 16) -> None:
        self.seed = seed
        self.probability = probability
        self.pick_min = pick_min
        self.pick_max = pick_max
        self.max_failures = max_failures

    def failure(self, action, state):
        if state.failures >= self.max_failures:
            return None
        rng = random.Random(f"{self.seed}:{action.index}")
        if rng.random() < self.probability:
            return ('random', action.index), rng.randint(self.pick_min, self.pick_max)
        return None

    def describe(self) -> str:
        return f"random seed={self.seed} p={self.probability}"


def pathological_points(program: LabeledProgram, pd: PolicyDecls, n: int = 1) -> AtLabels:
    """
    Failure points that break each policy when nothing protects it.

    One point just before every fresh use, and one just before every
    consistency input except the first of its group.
    """
    points: List[FailurePoint] = []
    for policy in pd.values():
        for group in policy.groups:
            if isinstance(policy, FreshPolicy):
                targets = sorted(group.items - group.inputs, key=Chain.order_key)
            else:
                targets = sorted(group.inputs, key=Chain.order_key)[1:]
            for chain in targets:
                func, label = chain.last
                kind = 'ret' if program.functions[func].ret_label == label else 'cmd'
                point = FailurePoint(kind, chain.last, chain.context, 0, n)
                if point not in points:
                    points.append(point)
    return AtLabels(points)


# Verdicts

@dataclass(frozen=True)
class Verdict:
    """
    Outcome for one policy on one run.

    Attributes:
        pid (str): Policy id
        violated (bool): Whether the policy was broken
        segment (Optional[Tuple[int, int]]): tau span of the offending instance
        failure (Optional[int]): tau of the reboot inside that span
        schedule (str): Schedule description, for replay
    """
    pid: str
    violated: bool = False
    segment: Optional[Tuple[int, int]] = None
    failure: Optional[int] = None
    schedule: str = ''


def _instances(trace: Sequence[Observation]) -> List[Optional[int]]:
    """Outermost region instance of every position; None outside regions."""
    result: List[Optional[int]] = []
    current: Optional[int] = None
    count = 0
    for obs in trace:
        if obs.kind == 'begin_atom' and obs.depth == 0:
            count += 1
            current = count
            result.append(current)
        elif obs.kind == 'end_atom' and obs.depth == 0:
            result.append(current)
            current = None
        else:
            if obs.kind == 'reboot':
                current = None
            result.append(current)
    return result


def _span_verdict(pid: str, trace: Sequence[Observation], start: int, end: int,
                  strict: bool, instances: Optional[List[Optional[int]]]) -> Verdict:
    segment = (trace[start].tau, trace[end].tau)
    for obs in trace[start:end + 1]:
        if obs.kind == 'reboot':
            return Verdict(pid, True, segment, obs.tau)
    if strict:
        inside = instances[start:end + 1]
        if inside[0] is None or any(instance != inside[0] for instance in inside):
            return Verdict(pid, True, segment)
    return Verdict(pid, False)


def check_freshness_trace(trace: Sequence[Observation], policy: FreshPolicy,
                          strict: bool = False) -> Verdict:
    """
    Judge one fresh policy on a (raw) trace.

    Each executed declaration is checked separately: the span from its
    earliest input to its last use must not contain a reboot. A value
    whose input did not commit is stale. Declarations never used pass.
    """
    committed = committed_trace(trace)
    instances = _instances(committed) if strict else None
    input_at = {obs.tau: i for i, obs in enumerate(committed) if obs.kind == 'input'}
    for i, obs in enumerate(committed):
        if obs.kind != 'fresh' or (obs.func, obs.label) != policy.decl or not obs.taint:
            continue
        uses = [j for j, other in enumerate(committed)
                if other.kind == 'use' and other.decl == policy.decl and other.decl_tau == obs.tau]
        if not uses:
            continue
        last_use = committed[uses[-1]].tau
        missing = [tau for tau in obs.taint if tau not in input_at]
        if missing:
            return Verdict(policy.pid, True, (min(obs.taint), last_use))
        verdict = _span_verdict(policy.pid, committed, input_at[min(obs.taint)], uses[-1], strict, instances)
        if verdict.violated:
            return verdict
    return Verdict(policy.pid, False)


def check_consistency_trace(trace: Sequence[Observation], policy: ConsistentPolicy,
                            strict: bool = False) -> Verdict:
    """
    Judge one consistency policy on a (raw) trace.

    For each group, the committed inputs belonging to it must be collected
    without a reboot between the first and the last.
    """
    committed = committed_trace(trace)
    instances = _instances(committed) if strict else None
    for group in policy.groups:
        hits = [i for i, obs in enumerate(committed) if obs.kind == 'input' and obs.chain in group.inputs]
        if len(hits) < 2:
            continue
        verdict = _span_verdict(policy.pid, committed, hits[0], hits[-1], strict, instances)
        if verdict.violated:
            return verdict
    return Verdict(policy.pid, False)


def check_trace(trace: Sequence[Observation], pd: PolicyDecls, strict: bool = False) -> Dict[str, Verdict]:
    verdicts: Dict[str, Verdict] = {}
    for pid, policy in pd.items():
        if isinstance(policy, FreshPolicy):
            verdicts[pid] = check_freshness_trace(trace, policy, strict)
        else:
            verdicts[pid] = check_consistency_trace(trace, policy, strict)
    return verdicts


# Bit-vector detector

class BitVectorDetector:
    """
    Online violation detector fed observation by observation.

    Every input chain owns a bit recording the time it last ran. A power
    failure clears all bits. A fresh use needs the bits of the inputs its
    value came from, set by exactly those input executions; an input of a
    consistency group needs the bits of every group input that already ran.
    Inputs that ran inside an aborted region attempt are forgotten.
    """

    def __init__(self, pd: PolicyDecls) -> None:
        self.groups: Dict[Chain, List[Tuple[str, FrozenSet[Chain]]]] = {}
        for pid, policy in pd.items():
            if isinstance(policy, ConsistentPolicy):
                for group in policy.groups:
                    for chain in group.inputs:
                        self.groups.setdefault(chain, []).append((pid, group.inputs))
        self.pids = set(pd)
        self.bits: Dict[Chain, int] = {}
        self.chain_of: Dict[int, Chain] = {}
        self.executed: Set[Chain] = set()
        self.snapshot: Optional[Set[Chain]] = None
        self.fresh_inputs: Dict[Tuple[Site, int], FrozenSet[int]] = {}
        self.fires: Dict[str, int] = {}

    def fire(self, pid: str, tau: int) -> None:
        if pid in self.pids and pid not in self.fires:
            logger.debug("Detector fired for %s at tau=%d", pid, tau)
            self.fires[pid] = tau

    def __call__(self, obs: Observation) -> None:
        if obs.kind == 'begin_atom' and obs.depth == 0:
            self.snapshot = set(self.executed)
        elif obs.kind == 'end_atom' and obs.depth == 0:
            self.snapshot = None
        elif obs.kind == 'reboot':
            self.bits.clear()
            if obs.atomic and self.snapshot is not None:
                self.executed = set(self.snapshot)
        elif obs.kind == 'input':
            chain = obs.chain
            for pid, inputs in self.groups.get(chain, []):
                if any(other in self.executed and other not in self.bits for other in inputs if other != chain):
                    self.fire(pid, obs.tau)
            self.bits[chain] = obs.tau
            self.chain_of[obs.tau] = chain
            self.executed.add(chain)
        elif obs.kind == 'fresh':
            self.fresh_inputs[((obs.func, obs.label), obs.tau)] = obs.taint
        elif obs.kind == 'use':
            for tau in self.fresh_inputs.get((obs.decl, obs.decl_tau), frozenset()):
                chain = self.chain_of.get(tau)
                if chain is None or self.bits.get(chain) != tau:
                    self.fire(fresh_pid(obs.decl), obs.tau)

    def verdicts(self, schedule: str = '') -> Dict[str, Verdict]:
        return {pid: Verdict(pid, pid in self.fires, failure=self.fires.get(pid), schedule=schedule)
                for pid in sorted(self.pids)}


def run_bitvector_detector(program: LabeledProgram, pd: PolicyDecls, schedule: FailureSchedule,
                           oracle: InputOracle = clock_oracle, fuel: int = 10000
                           ) -> Tuple[Dict[str, Verdict], MachineState]:
    """
    Run a program with the detector attached.

    Returns:
        Tuple[Dict[str, Verdict], MachineState]: Per-policy detector verdicts and the final state
    """
    detector = BitVectorDetector(pd)
    state, _ = run_intermittent(program, oracle, schedule, fuel, listeners=[detector])
    return detector.verdicts(schedule.describe()), state


# Exhaustive enumeration

@dataclass
class ExhaustiveSummary:
    runs: int = 0
    violating_runs: int = 0
    violations: List[Tuple[int, int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violating_runs == 0


def exhaustive_verify(program: LabeledProgram, pd: PolicyDecls, oracle: InputOracle = clock_oracle,
                      n_values: Iterable[int] = (1, 10, 1000), max_steps: int = 2000,
                      fuel: int = 10000, strict: bool = False) -> ExhaustiveSummary:
    """
    Inject one failure before every action index, once per off-time.

    Args:
        program: Program to run (usually with regions)
        pd: Policies to judge
        oracle: Input oracle
        n_values: Off-times to try at every index
        max_steps: Refuse programs whose failure-free run is longer
        fuel: Per-run action budget
        strict: Also require every span to sit inside one region instance

    Returns:
        ExhaustiveSummary: Runs, violating runs and (index, n, pid) per violation

    Raises:
        BudgetExceeded: The failure-free run exceeds ``max_steps``
    """
    baseline, _ = run_continuous(program, oracle, fuel)
    if baseline.actions > max_steps:
        raise BudgetExceeded(f"{baseline.actions} actions exceed the budget of {max_steps}")
    summary = ExhaustiveSummary()
    n_values = list(n_values)
    for index in range(baseline.actions):
        for n in n_values:
            _, trace = run_intermittent(program, oracle, Exhaustive(index, n), fuel)
            summary.runs += 1
            bad = [pid for pid, verdict in check_trace(trace, pd, strict).items() if verdict.violated]
            if bad:
                summary.violating_runs += 1
                summary.violations.extend((index, n, pid) for pid in bad)
    logger.info("Exhaustive verification: %d of %d runs violating", summary.violating_runs, summary.runs)
    return summary


# Benchmark simulation

@dataclass
class BenchmarkRow:
    """
    One cell group of the violation table.

    Attributes:
        benchmark (str): Benchmark name
        mode (str): 'transformed' or 'jit'
        schedule (str): 'pathological', 'exhaustive', 'random' or 'none'
        runs (int): Runs whose failures all fired (the denominator)
        violating (int): Runs with at least one violated policy
        skipped (int): Runs excluded (failure never fired, or fuel ran out)
        disagreements (int): Runs where the detector and trace checkers differ
        witnesses (List[str]): Schedule descriptions of violating runs
        per_policy (Dict[str, int]): Violating runs per policy
    """
    benchmark: str
    mode: str
    schedule: str
    runs: int = 0
    violating: int = 0
    skipped: int = 0
    disagreements: int = 0
    witnesses: List[str] = field(default_factory=list)
    per_policy: Dict[str, int] = field(default_factory=dict)

    @property
    def percent(self) -> float:
        return 100.0 * self.violating / self.runs if self.runs else 0.0


def _schedules(program: LabeledProgram, pd: PolicyDecls, kind: str, seed: int, runs: int,
               config: Dict) -> List[FailureSchedule]:
    if kind == 'none':
        return [NoFailures()]
    if kind == 'pathological':
        return list(pathological_points(program, pd).split())
    if kind == 'exhaustive':
        baseline, _ = run_continuous(program, clock_oracle, config.get('fuel', 10000))
        if baseline.actions > config.get('exhaustive_max_steps', 2000):
            raise BudgetExceeded(f"{baseline.actions} actions exceed the exhaustive budget")
        return [Exhaustive(index, n) for index in range(baseline.actions)
                for n in config.get('exhaustive_n_values', [1, 10, 1000])]
    if kind == 'random':
        return [RandomFailures(seed + i, config.get('random_failure_probability', 0.05),
                               config.get('pick_min', 1), config.get('pick_max', 1000),
                               config.get('max_failures_per_run', 16)) for i in range(runs)]
    raise ValueError(f"unknown schedule kind {kind!r}")


def _all_fired(schedule: FailureSchedule, state: MachineState) -> bool:
    if isinstance(schedule, AtLabels):
        return all(point in state.fired for point in schedule.points)
    if isinstance(schedule, Exhaustive):
        return bool(state.fired)
    return True


def simulate_benchmark(name: str, program: LabeledProgram, pd: PolicyDecls, mode: str, kind: str,
                       seed: int = 0, runs: int = 100, config: Optional[Dict] = None,
                       schedule_program: Optional[LabeledProgram] = None,
                       oracle: InputOracle = clock_oracle) -> BenchmarkRow:
    """
    Run one benchmark under one schedule family and count violating runs.

    Args:
        name: Benchmark name for the row
        program: Program to execute (transformed or original)
        pd: Policies of the original program
        mode: Label for the row ('transformed' or 'jit')
        kind: Schedule family
        seed: Base seed for random schedules
        runs: Number of random runs
        config: Simulation settings (fuel, exhaustive budget, random parameters)
        schedule_program: Program the schedules are derived from; defaults to ``program``
        oracle: Input oracle

    Returns:
        BenchmarkRow: Counts; runs whose failure never fired are excluded
    """
    config = config or {}
    fuel = config.get('fuel', 10000)
    row = BenchmarkRow(name, mode, kind)
    for schedule in _schedules(schedule_program or program, pd, kind, seed, runs, config):
        detector = BitVectorDetector(pd)
        try:
            state, trace = run_intermittent(program, oracle, schedule, fuel, listeners=[detector])
        except FuelExhausted as e:
            logger.warning("%s: %s under %s", name, e, schedule.describe())
            row.skipped += 1
            continue
        except ExecutionFault as e:
            logger.warning("%s: execution fault under %s: %s", name, schedule.describe(), e)
            row.skipped += 1
            continue
        if not _all_fired(schedule, state):
            row.skipped += 1
            continue
        row.runs += 1
        verdicts = check_trace(trace, pd)
        bad = sorted(pid for pid, verdict in verdicts.items() if verdict.violated)
        if bad:
            row.violating += 1
            row.witnesses.append(schedule.describe())
            for pid in bad:
                row.per_policy[pid] = row.per_policy.get(pid, 0) + 1
        if sorted(detector.fires) != bad:
            row.disagreements += 1
            logger.warning("%s: detector %s disagrees with trace check %s under %s",
                           name, sorted(detector.fires), bad, schedule.describe())
    logger.info("%s %s/%s: %d of %d runs violating", name, mode, kind, row.violating, row.runs)
    return row


def policy_kinds(pd: PolicyDecls) -> List[str]:
    """Constraint kinds present: Fresh, Con, FreshCon."""
    fresh_vars = {(policy.decl[0], policy.var) for policy in pd.values() if isinstance(policy, FreshPolicy)}
    kinds: Set[str] = set()
    for policy in pd.values():
        if isinstance(policy, FreshPolicy):
            kinds.add('Fresh')
        else:
            kinds.add('Con')
            if any((site[0], var) in fresh_vars for site, var in zip(policy.decls, policy.vars)):
                kinds.add('FreshCon')
    return [kind for kind in ('Fresh', 'Con', 'FreshCon') if kind in kinds]
