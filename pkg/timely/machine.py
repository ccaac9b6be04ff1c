"""
Timely Machine

Small-step interpreter for labeled programs, with taint tracking and
an intermittent mode that models power failures.

Every labeled command, every atomic-region end and every function
return is one *action*: it runs at logical time tau and advances tau
by one. Unpacking sequences is administrative and takes no time.

Memory maps (call depth, name) to a TaintedValue, or to a tuple of them
for arrays. A value's taint is the set of timestamps of the input
operations it was computed from. Cells bound by ``let fresh`` carry a
tag so that every later read emits a ``use`` observation.

Intermittent mode asks a failure schedule before each action whether
power fails first. Outside atomic regions the machine takes a JIT
checkpoint of its control state and resumes exactly where it stopped.
Inside a region it restores the region's undo log and re-executes the
region from its start. Either way tau advances by the picked off-time.

Classes:
    TaintedValue, Pointer: Memory contents
    Observation: One trace entry
    Control: Command, continuation stack and calling context
    JitContext, AtomContext: Checkpoint contexts
    MachineState: Complete machine state
    Machine: The interpreter

Functions:
    run_continuous: Run to completion without failures
    run_intermittent: Run under a failure schedule
    committed_trace: Drop the observations of aborted region attempts
    format_trace: One text line per observation
"""

import logging
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, FrozenSet, Hashable, Iterable, List, Optional, Set, Tuple, Union

from .errors import ExecutionFault, FuelExhausted
from .syntax import (
    UNBOUND, ArrayAssign, ArrayLit, Assign, Atomic, BinOp, Command, Const, Deref, DerefAssign,
    Expr, If, Index, InstrCmd, LabeledProgram, Let, LetCall, LetConsistent, LetFresh, LetInput,
    Ref, Seq, Site, Skip, UnOp, Var,
)
from .taint import Chain

logger = logging.getLogger(__name__)


# Values and memory

@dataclass(frozen=True)
class Pointer:
    depth: int
    name: str
    index: Optional[int] = None

    def __str__(self) -> str:
        return f"&{self.name}@{self.depth}" if self.index is None else f"&{self.name}[{self.index}]@{self.depth}"


@dataclass(frozen=True)
class FreshTag:
    decl: Site
    tau: int


@dataclass(frozen=True)
class TaintedValue:
    value: Union[int, bool, Pointer]
    taint: FrozenSet[int] = frozenset()
    fresh: Optional[FreshTag] = None


Cell = Union[TaintedValue, Tuple[TaintedValue, ...]]
Location = Tuple[int, str]
Memory = Dict[Location, Cell]


# Observations

@dataclass(frozen=True)
class Observation:
    """
    One trace entry.

    Attributes:
        kind (str): 'input', 'fresh', 'cnst', 'use', 'define', 'step',
            'begin_atom', 'end_atom' or 'reboot'
        tau (int): Logical time of emission
        func (str): Function of the emitting site
        label (int): Label of the emitting site
        taint (FrozenSet[int]): I for fresh/cnst/define
        set_id (Optional[int]): Consistency set, for cnst
        chain (Optional[Chain]): Provenance, for input; the site's call path for define/use/step
        decl (Optional[Site]): Declaration of the fresh value, for use
        decl_tau (Optional[int]): Time of that declaration, for use
        region_id (Optional[int]): For begin_atom/end_atom
        depth (int): Nesting level for region markers
        n (int): Picked off-time, for reboot
        atomic (bool): For reboot, whether power failed inside a region
    """
    kind: str
    tau: int
    func: str = ''
    label: int = -1
    taint: FrozenSet[int] = frozenset()
    set_id: Optional[int] = None
    chain: Optional[Chain] = None
    decl: Optional[Site] = None
    decl_tau: Optional[int] = None
    region_id: Optional[int] = None
    depth: int = 0
    n: int = 0
    atomic: bool = False


def format_observation(obs: Observation) -> str:
    """``(tau, kind, f, label, extras)`` on one line."""
    extras = []
    if obs.kind in ('fresh', 'cnst', 'define'):
        extras.append('{' + ','.join(str(t) for t in sorted(obs.taint)) + '}')
    if obs.set_id is not None:
        extras.append(f"n={obs.set_id}")
    if obs.kind == 'input' and obs.chain is not None:
        extras.append(str(obs.chain))
    if obs.decl is not None:
        extras.append(f"decl=({obs.decl[0]},{obs.decl[1]})@{obs.decl_tau}")
    if obs.region_id is not None:
        extras.append(f"aID={obs.region_id} depth={obs.depth}")
    if obs.kind == 'reboot':
        extras.append(f"n={obs.n}{' atomic' if obs.atomic else ''}")
    return f"({obs.tau}, {obs.kind}, {obs.func or '-'}, {obs.label}, {' '.join(extras)})"


def format_trace(trace: Iterable[Observation]) -> List[str]:
    return [format_observation(obs) for obs in trace]


def committed_trace(trace: Iterable[Observation]) -> List[Observation]:
    """
    Project a trace onto the work that took effect.

    A reboot inside a region discards everything since that region's
    outermost ``begin_atom``; the reboot itself is kept at the cut.
    """
    committed: List[Observation] = []
    open_region: Optional[int] = None
    for obs in trace:
        if obs.kind == 'begin_atom' and obs.depth == 0:
            open_region = len(committed)
        elif obs.kind == 'end_atom' and obs.depth == 0:
            open_region = None
        elif obs.kind == 'reboot' and obs.atomic and open_region is not None:
            del committed[open_region:]
            open_region = None
        committed.append(obs)
    return committed


# Control

@dataclass(frozen=True)
class SeqFrame:
    command: Command


@dataclass(frozen=True)
class AtomicEndFrame:
    region_id: int
    label: int


@dataclass(frozen=True)
class CallFrame:
    """Return point of a call; for main, ``caller`` is None."""
    callee: str
    caller: Optional[str]
    label: int
    binder: str
    cont: Optional[Command]


Frame = Union[SeqFrame, AtomicEndFrame, CallFrame]


@dataclass(frozen=True)
class Control:
    func: str
    context: Tuple[Site, ...]
    command: Optional[Command]
    stack: Tuple[Frame, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.context)


@dataclass(frozen=True)
class JitContext:
    control: Optional[Control] = None


@dataclass(frozen=True)
class AtomContext:
    region_id: int
    undo: Tuple[Tuple[Location, Optional[Cell]], ...]
    control: Control
    nesting: int = 0


Context = Union[JitContext, AtomContext]


@dataclass(frozen=True)
class Action:
    """
    The next thing the machine will do, as seen by a failure schedule.

    Attributes:
        kind (str): 'cmd', 'end' or 'ret'
        site (Site): (function, label) of the command, region or return
        chain (Chain): Calling context plus ``site``
        occurrence (int): How many times this (kind, site) already ran
        chain_occurrence (int): How many times this (kind, chain) already ran
        index (int): How many actions already ran
    """
    kind: str
    site: Site
    chain: Chain
    occurrence: int
    chain_occurrence: int
    index: int


@dataclass
class MachineState:
    tau: int
    context: Context
    memory: Memory
    control: Control
    trace: List[Observation] = field(default_factory=list)
    pending_reboot: Optional[int] = None
    halted: bool = False
    result: Optional[TaintedValue] = None
    actions: int = 0
    failures: int = 0
    counters: Dict[Tuple[str, Hashable], int] = field(default_factory=dict)
    fired: Set[Hashable] = field(default_factory=set)

    @property
    def nesting(self) -> Optional[int]:
        """Region nesting counter, or None outside any region."""
        return self.context.nesting if isinstance(self.context, AtomContext) else None

    def values(self, depth: int = 0) -> Dict[str, object]:
        """Memory at one call depth with taint stripped; arrays become lists."""
        result: Dict[str, object] = {}
        for (cell_depth, name), cell in sorted(self.memory.items(), key=lambda item: item[0]):
            if cell_depth != depth:
                continue
            if isinstance(cell, tuple):
                result[name] = [_plain(element.value) for element in cell]
            else:
                result[name] = _plain(cell.value)
        return result


def _plain(value):
    return str(value) if isinstance(value, Pointer) else value


# Oracles

InputOracle = Callable[[int], int]


def clock_oracle(tau: int) -> int:
    return tau


def constant_oracle(value: int) -> InputOracle:
    def oracle(tau: int) -> int:
        return value
    return oracle


class SeededOracle:
    """Pseudo-random input values, a pure function of (seed, tau)."""

    def __init__(self, seed: int, lo: int = 0, hi: int = 100) -> None:
        self.seed = seed
        self.lo = lo
        self.hi = hi

    def __call__(self, tau: int) -> int:
        return random.Random(f"{self.seed}:{tau}").randint(self.lo, self.hi)


class ReplayOracle:
    """Hands out recorded values in order, ignoring tau; repeats the last one when exhausted."""

    def __init__(self, values: Iterable[int]) -> None:
        self.values = list(values)
        self.position = 0

    def __call__(self, tau: int) -> int:
        if not self.values:
            return 0
        value = self.values[min(self.position, len(self.values) - 1)]
        self.position += 1
        return value


# Arithmetic

def _truncating_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _binary(op: str, a, b):
    if op == '&&':
        return bool(a) and bool(b)
    if op == '||':
        return bool(a) or bool(b)
    if op == '==':
        return a == b
    if op == '!=':
        return a != b
    if isinstance(a, Pointer) or isinstance(b, Pointer):
        raise ExecutionFault(f"operator {op} applied to a reference")
    if op == '<':
        return a < b
    if op == '<=':
        return a <= b
    if op == '>':
        return a > b
    if op == '>=':
        return a >= b
    if op == '+':
        return a + b
    if op == '-':
        return a - b
    if op == '*':
        return a * b
    if op in ('/', '%'):
        if b == 0:
            raise ExecutionFault("division by zero")
        q = _truncating_div(int(a), int(b))
        return q if op == '/' else int(a) - int(b) * q
    raise ExecutionFault(f"unknown operator {op}")


# Failure schedules

class FailureSchedule:
    """Decides before each action whether power fails first."""

    def failure(self, action: Action, state: MachineState) -> Optional[Tuple[Hashable, int]]:
        """(key, off-time) to fail now, or None. A key fires at most once per run."""
        return None

    def describe(self) -> str:
        return type(self).__name__


# Interpreter

class Machine:
    """
    Interpreter for one program.

    Args:
        program: Labeled program, with or without atomic regions
        oracle: Input value as a function of tau
        fuel: Maximum number of actions plus reboots
        record: Optional observation kinds to emit ('define', 'step')
        listeners: Called with every observation as it is emitted
    """

    def __init__(self, program: LabeledProgram, oracle: InputOracle = clock_oracle, fuel: int = 10000,
                 record: Iterable[str] = (), listeners: Iterable[Callable[[Observation], None]] = ()) -> None:
        self.program = program
        self.oracle = oracle
        self.fuel = fuel
        self.record = frozenset(record)
        self.listeners = list(listeners)

    def initial_state(self) -> MachineState:
        main = self.program.main
        control = Control('main', (), main.body, (CallFrame('main', None, -1, UNBOUND, None),))
        return MachineState(tau=0, context=JitContext(control), memory={}, control=control)

    # Observations

    def emit(self, state: MachineState, obs: Observation) -> None:
        state.trace.append(obs)
        for listener in self.listeners:
            listener(obs)

    # Normalization and action selection

    @staticmethod
    def normalize(control: Control) -> Control:
        command, stack = control.command, control.stack
        while True:
            if isinstance(command, Seq):
                stack = stack + (SeqFrame(command.second),)
                command = command.first
            elif command is None and stack and isinstance(stack[-1], SeqFrame):
                command = stack[-1].command
                stack = stack[:-1]
            else:
                break
        if command is control.command and stack is control.stack:
            return control
        return replace(control, command=command, stack=stack)

    def next_action(self, state: MachineState) -> Optional[Action]:
        control = state.control
        if control.command is not None:
            kind, site = 'cmd', (control.func, control.command.label)
        elif control.stack:
            frame = control.stack[-1]
            if isinstance(frame, AtomicEndFrame):
                kind, site = 'end', (control.func, frame.label)
            else:
                kind, site = 'ret', self.program.functions[frame.callee].ret_site
        else:
            return None
        chain = Chain(control.context + (site,))
        return Action(
            kind=kind,
            site=site,
            chain=chain,
            occurrence=state.counters.get((kind, site), 0),
            chain_occurrence=state.counters.get((kind, chain), 0),
            index=state.actions,
        )

    # Stepping

    def step(self, state: MachineState, schedule: Optional[FailureSchedule] = None) -> MachineState:
        """
        Take one step: a reboot, a power failure, or one action.

        Without a schedule this is the continuous semantics.
        """
        if state.halted:
            return state
        if state.actions + state.failures >= self.fuel:
            raise FuelExhausted(f"fuel of {self.fuel} steps exhausted at tau={state.tau}")
        if state.pending_reboot is not None:
            self.reboot(state)
            return state
        state.control = self.normalize(state.control)
        action = self.next_action(state)
        if action is None:
            state.halted = True
            return state
        if schedule is not None:
            decision = schedule.failure(action, state)
            if decision is not None and decision[0] not in state.fired:
                key, n = decision
                state.fired.add(key)
                self.power_low(state, n)
                return state
        state.counters[(action.kind, action.site)] = action.occurrence + 1
        state.counters[(action.kind, action.chain)] = action.chain_occurrence + 1
        state.actions += 1
        if 'step' in self.record:
            self.emit(state, Observation('step', state.tau, action.site[0], action.site[1], chain=action.chain))
        if action.kind == 'cmd':
            self.execute(state, state.control.command)
        elif action.kind == 'end':
            self.end_region(state)
        else:
            self.return_from(state)
        state.tau += 1
        return state

    def power_low(self, state: MachineState, n: int) -> None:
        state.failures += 1
        if isinstance(state.context, JitContext):
            state.context = JitContext(state.control)
        logger.debug("Power failure at tau=%d (%s), off for %d", state.tau,
                     'region' if isinstance(state.context, AtomContext) else 'jit', n)
        state.pending_reboot = n

    def reboot(self, state: MachineState) -> None:
        n = state.pending_reboot
        state.pending_reboot = None
        state.tau += n
        context = state.context
        if isinstance(context, AtomContext):
            for location, cell in context.undo:
                if cell is None:
                    state.memory.pop(location, None)
                else:
                    state.memory[location] = cell
            state.context = replace(context, nesting=0)
            state.control = context.control
            self.emit(state, Observation('reboot', state.tau, state.control.func, n=n, atomic=True))
            self.emit(state, Observation('begin_atom', state.tau, state.control.func,
                                         state.control.stack[-1].label, region_id=context.region_id, depth=0))
        else:
            state.control = context.control
            self.emit(state, Observation('reboot', state.tau, state.control.func, n=n))

    # Evaluation

    def load(self, state: MachineState, location: Location) -> Cell:
        try:
            return state.memory[location]
        except KeyError:
            raise ExecutionFault(f"read of unbound variable {location[1]!r}") from None

    def scalar(self, state: MachineState, location: Location) -> TaintedValue:
        cell = self.load(state, location)
        if isinstance(cell, tuple):
            raise ExecutionFault(f"array {location[1]!r} used as a scalar")
        return cell

    def element(self, state: MachineState, location: Location, index) -> TaintedValue:
        cell = self.load(state, location)
        if not isinstance(cell, tuple):
            raise ExecutionFault(f"{location[1]!r} is not an array")
        if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < len(cell):
            raise ExecutionFault(f"index {index} out of bounds for {location[1]!r}")
        return cell[index]

    def pointer(self, state: MachineState, name: str) -> Pointer:
        target = self.scalar(state, (state.control.depth, name)).value
        if not isinstance(target, Pointer):
            raise ExecutionFault(f"{name!r} does not hold a reference")
        return target

    def evaluate(self, state: MachineState, expr: Expr, site: Site, uses: Set[FreshTag]) -> TaintedValue:
        depth = state.control.depth
        if isinstance(expr, Const):
            if isinstance(expr.value, Ref):
                return TaintedValue(Pointer(depth, expr.value.name, expr.value.index))
            return TaintedValue(expr.value)
        if isinstance(expr, Var):
            cell = self.scalar(state, (depth, expr.name))
            if cell.fresh is not None:
                uses.add(cell.fresh)
            return TaintedValue(cell.value, cell.taint)
        if isinstance(expr, Deref):
            target = self.pointer(state, expr.name)
            if target.index is None:
                cell = self.scalar(state, (target.depth, target.name))
            else:
                cell = self.element(state, (target.depth, target.name), target.index)
            return TaintedValue(cell.value, cell.taint)
        if isinstance(expr, Index):
            index = self.evaluate(state, expr.index, site, uses)
            cell = self.element(state, (depth, expr.array), index.value)
            return TaintedValue(cell.value, cell.taint | index.taint)
        if isinstance(expr, BinOp):
            lhs = self.evaluate(state, expr.lhs, site, uses)
            rhs = self.evaluate(state, expr.rhs, site, uses)
            return TaintedValue(_binary(expr.op, lhs.value, rhs.value), lhs.taint | rhs.taint)
        if isinstance(expr, UnOp):
            operand = self.evaluate(state, expr.operand, site, uses)
            if isinstance(operand.value, Pointer):
                raise ExecutionFault(f"operator {expr.op} applied to a reference")
            value = -operand.value if expr.op == '-' else not operand.value
            return TaintedValue(value, operand.taint)
        if isinstance(expr, ArrayLit):
            raise ExecutionFault("array literal outside a let")
        raise ExecutionFault(f"not an expression: {expr!r}")

    def eval_at(self, state: MachineState, expr: Expr, site: Site) -> TaintedValue:
        uses: Set[FreshTag] = set()
        value = self.evaluate(state, expr, site, uses)
        self.emit_uses(state, site, uses)
        return value

    def emit_uses(self, state: MachineState, site: Site, uses: Set[FreshTag]) -> None:
        chain = Chain(state.control.context + (site,))
        for tag in sorted(uses, key=lambda t: (t.decl, t.tau)):
            self.emit(state, Observation('use', state.tau, site[0], site[1], chain=chain,
                                         decl=tag.decl, decl_tau=tag.tau))

    def define(self, state: MachineState, site: Site, taint: FrozenSet[int]) -> None:
        if 'define' in self.record:
            chain = Chain(state.control.context + (site,))
            self.emit(state, Observation('define', state.tau, site[0], site[1], taint=taint, chain=chain))

    # Writes

    def bind(self, state: MachineState, name: str, cell: Cell) -> None:
        if name != UNBOUND:
            state.memory[(state.control.depth, name)] = cell

    def store(self, state: MachineState, target: Pointer, value: TaintedValue) -> None:
        location = (target.depth, target.name)
        if target.index is None:
            self.scalar(state, location)
            state.memory[location] = value
        else:
            self.store_element(state, location, target.index, value)

    def store_element(self, state: MachineState, location: Location, index, value: TaintedValue) -> None:
        self.element(state, location, index)
        cell = list(state.memory[location])
        cell[index] = value
        state.memory[location] = tuple(cell)

    # Commands

    def execute(self, state: MachineState, cmd: Command) -> None:
        control = state.control
        site = (control.func, cmd.label)
        depth = control.depth
        next_command: Optional[Command] = None

        if isinstance(cmd, InstrCmd):
            instr = cmd.instr
            if isinstance(instr, Assign):
                value = self.eval_at(state, instr.expr, site)
                self.scalar(state, (depth, instr.var))
                state.memory[(depth, instr.var)] = value
                self.define(state, site, value.taint)
            elif isinstance(instr, ArrayAssign):
                uses: Set[FreshTag] = set()
                index = self.evaluate(state, instr.index, site, uses)
                value = self.evaluate(state, instr.expr, site, uses)
                self.emit_uses(state, site, uses)
                stored = TaintedValue(value.value, value.taint | index.taint)
                self.store_element(state, (depth, instr.array), index.value, stored)
                self.define(state, site, stored.taint)
            elif isinstance(instr, DerefAssign):
                value = self.eval_at(state, instr.expr, site)
                self.store(state, self.pointer(state, instr.var), value)
                self.define(state, site, value.taint)
            elif not isinstance(instr, Skip):
                raise ExecutionFault(f"unknown instruction {instr!r}")
        elif isinstance(cmd, If):
            cond = self.eval_at(state, cmd.cond, site)
            if isinstance(cond.value, Pointer):
                raise ExecutionFault("branch on a reference")
            next_command = cmd.then if cond.value else cmd.els
        elif isinstance(cmd, Let):
            if isinstance(cmd.expr, ArrayLit):
                uses = set()
                cell = tuple(self.evaluate(state, element, site, uses) for element in cmd.expr.elements)
                self.emit_uses(state, site, uses)
                taint = frozenset().union(*(element.taint for element in cell))
                self.bind(state, cmd.var, cell)
            else:
                value = self.eval_at(state, cmd.expr, site)
                taint = value.taint
                self.bind(state, cmd.var, value)
            self.define(state, site, taint)
            next_command = cmd.body
        elif isinstance(cmd, LetInput):
            value = TaintedValue(int(self.oracle(state.tau)), frozenset([state.tau]))
            chain = Chain(control.context + (site,))
            self.emit(state, Observation('input', state.tau, site[0], site[1], chain=chain))
            self.bind(state, cmd.var, value)
            self.define(state, site, value.taint)
            next_command = cmd.body
        elif isinstance(cmd, LetFresh):
            value = self.eval_at(state, cmd.expr, site)
            self.emit(state, Observation('fresh', state.tau, site[0], site[1], taint=value.taint))
            self.bind(state, cmd.var, replace(value, fresh=FreshTag(site, state.tau)))
            self.define(state, site, value.taint)
            next_command = cmd.body
        elif isinstance(cmd, LetConsistent):
            value = self.eval_at(state, cmd.expr, site)
            if cmd.expr == Var(cmd.var):
                value = replace(value, fresh=self.scalar(state, (depth, cmd.var)).fresh)
            self.emit(state, Observation('cnst', state.tau, site[0], site[1], taint=value.taint,
                                         set_id=cmd.set_id))
            self.bind(state, cmd.var, value)
            self.define(state, site, value.taint)
            next_command = cmd.body
        elif isinstance(cmd, LetCall):
            self.call(state, cmd, site)
            return
        elif isinstance(cmd, Atomic):
            self.begin_region(state, cmd)
            return
        else:
            raise ExecutionFault(f"unknown command {cmd!r}")
        state.control = replace(state.control, command=next_command)

    def call(self, state: MachineState, cmd: LetCall, site: Site) -> None:
        control = state.control
        callee = self.program.functions[cmd.callee]
        arg = self.eval_at(state, cmd.arg, site) if cmd.arg is not None else None
        frame = CallFrame(cmd.callee, control.func, cmd.label, cmd.var, cmd.body)
        state.control = Control(cmd.callee, control.context + (site,), callee.body, control.stack + (frame,))
        if callee.param:
            if arg is None:
                raise ExecutionFault(f"{cmd.callee} called without its argument")
            state.memory[(state.control.depth, callee.param)] = arg

    def return_from(self, state: MachineState) -> None:
        control = state.control
        frame = control.stack[-1]
        callee = self.program.functions[frame.callee]
        value = self.eval_at(state, callee.ret, callee.ret_site)
        if frame.caller is None:
            state.result = value
            state.control = replace(control, stack=control.stack[:-1])
            state.halted = True
            return
        for location in [loc for loc in state.memory if loc[0] >= control.depth]:
            del state.memory[location]
        caller_context = control.context[:-1]
        state.control = Control(frame.caller, caller_context, frame.cont, control.stack[:-1])
        self.bind(state, frame.binder, value)
        self.define(state, (frame.caller, frame.label), value.taint)

    # Regions

    def undo_log(self, state: MachineState, omega: Iterable[str]) -> Tuple[Tuple[Location, Optional[Cell]], ...]:
        depth = state.control.depth
        entries = []
        for name in sorted(omega):
            if name.startswith('*'):
                target = self.pointer(state, name[1:])
                location = (target.depth, target.name)
            else:
                location = (depth, name)
            entries.append((location, state.memory.get(location)))
        return tuple(entries)

    def begin_region(self, state: MachineState, cmd: Atomic) -> None:
        control = state.control
        inside = replace(control, command=cmd.body,
                         stack=control.stack + (AtomicEndFrame(cmd.region_id, cmd.label),))
        context = state.context
        if isinstance(context, AtomContext):
            state.context = replace(context, nesting=context.nesting + 1)
            depth = context.nesting + 1
        else:
            state.context = AtomContext(cmd.region_id, self.undo_log(state, cmd.omega), inside)
            depth = 0
        state.control = inside
        self.emit(state, Observation('begin_atom', state.tau, control.func, cmd.label,
                                     region_id=cmd.region_id, depth=depth))

    def end_region(self, state: MachineState) -> None:
        control = state.control
        frame = control.stack[-1]
        context = state.context
        if isinstance(context, AtomContext) and context.nesting > 0:
            state.context = replace(context, nesting=context.nesting - 1)
            depth = context.nesting
        else:
            state.context = JitContext()
            depth = 0
        state.control = replace(control, stack=control.stack[:-1])
        self.emit(state, Observation('end_atom', state.tau, control.func, frame.label,
                                     region_id=frame.region_id, depth=depth))

    # Running

    def run(self, schedule: Optional[FailureSchedule] = None,
            state: Optional[MachineState] = None) -> MachineState:
        state = state or self.initial_state()
        while not state.halted:
            self.step(state, schedule)
        logger.debug("Run finished at tau=%d after %d actions and %d failures",
                     state.tau, state.actions, state.failures)
        return state


def step_continuous(program: LabeledProgram, state: MachineState,
                    oracle: InputOracle = clock_oracle) -> MachineState:
    return Machine(program, oracle).step(state)


def step_intermittent(program: LabeledProgram, state: MachineState, oracle: InputOracle,
                      schedule: FailureSchedule) -> MachineState:
    return Machine(program, oracle).step(state, schedule)


def run_continuous(program: LabeledProgram, oracle: InputOracle = clock_oracle, fuel: int = 10000,
                   record: Iterable[str] = ()) -> Tuple[MachineState, List[Observation]]:
    """
    Run a program to completion with continuous power.

    Raises:
        ExecutionFault: Unbound variable, bad index, type error or division by zero
        FuelExhausted: More than ``fuel`` actions
    """
    state = Machine(program, oracle, fuel, record).run()
    return state, state.trace


def run_intermittent(program: LabeledProgram, oracle: InputOracle, schedule: FailureSchedule,
                     fuel: int = 10000, record: Iterable[str] = (),
                     listeners: Iterable[Callable[[Observation], None]] = ()
                     ) -> Tuple[MachineState, List[Observation]]:
    """Run a program under a failure schedule; raises as run_continuous."""
    state = Machine(program, oracle, fuel, record, listeners).run(schedule)
    return state, state.trace
