"""
Timely Taint Summaries

Context-sensitive input-dependence analysis. Every definition is mapped
to the input operations it depends on (by data or by control), each
dependence tagged with a FromTp link that says how the taint reached the
current function: generated locally, returned by a callee, written back
through a reference parameter, or passed in by a specific caller.

The analysis runs in two passes over the acyclic call graph:

1. Callee-first: each function is walked once with a placeholder taint
   on its parameter. This yields its local summary (taint it generates
   itself that leaves through ``ret`` or ``*arg``) and which sinks its
   argument reaches.
2. Caller-first: each function is walked once per tainting caller with
   the caller-supplied taint. Tainted call arguments become caller
   summary entries on the callee, keyed by the call site, together with
   the ret/&arg entries that carry the same taint back to that caller
   only.

Classes:
    Local, RetBy, Pbr, ArgBy: FromTp links
    Dep: One (input site, FromTp) dependence
    TaintMapEntry: A summary entry
    FuncSummary: Local and per-caller entries of one function
    FuncSummaries: Summaries of a program plus its input-dependence map
    Chain: A provenance, the call chain ending at an input operation

Functions:
    build_summary: Run the analysis
    call_chain: Resolve a dependence into its provenance
    deps_of: Dependences of an expression from the input-dependence map
    expr_deps: Dependences of an expression under an environment
    format_summaries: One text line per summary entry
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Literal, Mapping, Optional, Set, Tuple, Union

from .errors import AnalysisError
from .syntax import (
    UNBOUND, ArrayAssign, ArrayLit, Assign, Atomic, BinOp, Command, Const, Deref, DerefAssign,
    Expr, FuncDecl, If, Index, InstrCmd, LabeledProgram, Let, LetCall, LetConsistent, LetFresh,
    LetInput, Ref, Site, UnOp, Var, callees_first, callers_first, flatten, read_vars, walk,
)
from .validate import reference_params

logger = logging.getLogger(__name__)


# FromTp links

@dataclass(frozen=True)
class Local:
    label: int

    def __str__(self) -> str:
        return f"local({self.label})"


@dataclass(frozen=True)
class RetBy:
    func: str
    label: int
    inner: 'FromTp'

    def __str__(self) -> str:
        return f"retBy({self.func},{self.label},{self.inner})"


@dataclass(frozen=True)
class Pbr:
    func: str
    label: int
    inner: 'FromTp'

    def __str__(self) -> str:
        return f"pbr({self.func},{self.label},{self.inner})"


@dataclass(frozen=True)
class ArgBy:
    caller: Site
    inner: 'FromTp'

    def __str__(self) -> str:
        return f"argBy(({self.caller[0]},{self.caller[1]}),{self.inner})"


FromTp = Union[Local, RetBy, Pbr, ArgBy]
Sink = Literal['ret', '&arg', 'arg']


@dataclass(frozen=True)
class Dep:
    """One input dependence: the input instruction and how its taint arrived."""
    input: Site
    from_tp: FromTp

    def __str__(self) -> str:
        return f"({self.input[0]},{self.input[1]}) {self.from_tp}"


@dataclass(frozen=True)
class TaintMapEntry:
    sink: Sink
    input: Site
    from_tp: FromTp

    @property
    def dep(self) -> Dep:
        return Dep(self.input, self.from_tp)

    def __str__(self) -> str:
        return f"{self.sink} <- ({self.input[0]},{self.input[1]}) {self.from_tp}"


def _entry_key(entry: TaintMapEntry) -> Tuple[str, str, int, str]:
    return (entry.sink, entry.input[0], entry.input[1], str(entry.from_tp))


@dataclass(frozen=True)
class Chain:
    """
    A provenance: call sites from main ending at an input operation.

    Also used for the call path ending at any other site (uses of fresh
    variables), which is why it is not restricted to inputs.
    """
    sites: Tuple[Site, ...]

    def __str__(self) -> str:
        return '::'.join(f"({func},{label})" for func, label in self.sites)

    def __len__(self) -> int:
        return len(self.sites)

    def __getitem__(self, index: int) -> Site:
        return self.sites[index]

    @property
    def last(self) -> Site:
        return self.sites[-1]

    @property
    def context(self) -> Tuple[Site, ...]:
        return self.sites[:-1]

    def order_key(self) -> Tuple[int, ...]:
        """Labels along the chain; sorts chains of one run in execution order."""
        return tuple(label for _, label in self.sites)


Provenance = Chain

InputDepMap = Dict[Site, FrozenSet[Dep]]


@dataclass
class FuncSummary:
    name: str
    local: List[TaintMapEntry] = field(default_factory=list)
    callers: Dict[Site, List[TaintMapEntry]] = field(default_factory=dict)


@dataclass
class FuncSummaries:
    """
    Analysis result for a whole program.

    Attributes:
        program (LabeledProgram): The analyzed program
        summaries (Dict[str, FuncSummary]): Per-function summaries
        dep_map (InputDepMap): Definition site -> dependences, over all contexts
        flows (Dict[str, FrozenSet[str]]): Sinks ('ret', '&arg') each parameter reaches
        ref_params (Dict[str, bool]): Whether each function takes a reference
    """
    program: LabeledProgram
    summaries: Dict[str, FuncSummary]
    dep_map: InputDepMap
    flows: Dict[str, FrozenSet[str]]
    ref_params: Dict[str, bool]

    def __getitem__(self, name: str) -> FuncSummary:
        return self.summaries[name]


_ARG_MARK = Dep(('', -1), Local(-1))


def expr_deps(expr: Optional[Expr], env: Mapping[str, FrozenSet[Dep]],
              alias: Mapping[str, str]) -> FrozenSet[Dep]:
    """
    Dependences of an expression.

    Args:
        expr: Expression to evaluate abstractly
        env: Variable -> dependences (for a reference parameter, the pointee's)
        alias: Reference variable -> the single location it points to
    """
    if expr is None or isinstance(expr, Const):
        return frozenset()
    if isinstance(expr, Var):
        return env.get(expr.name, frozenset())
    if isinstance(expr, Deref):
        return env.get(alias.get(expr.name, expr.name), frozenset())
    if isinstance(expr, Index):
        return env.get(expr.array, frozenset()) | expr_deps(expr.index, env, alias)
    if isinstance(expr, BinOp):
        return expr_deps(expr.lhs, env, alias) | expr_deps(expr.rhs, env, alias)
    if isinstance(expr, UnOp):
        return expr_deps(expr.operand, env, alias)
    if isinstance(expr, ArrayLit):
        result: FrozenSet[Dep] = frozenset()
        for element in expr.elements:
            result |= expr_deps(element, env, alias)
        return result
    raise TypeError(f"not an expression: {expr!r}")


def array_names(func: FuncDecl) -> Set[str]:
    return {node.var for node in walk(func.body) if isinstance(node, Let) and isinstance(node.expr, ArrayLit)}


def call_argument(arg: Optional[Expr], env: Mapping[str, FrozenSet[Dep]],
                  alias: Mapping[str, str]) -> Tuple[FrozenSet[Dep], Optional[str]]:
    """Dependences a call passes, and the caller location passed by reference (if any)."""
    if isinstance(arg, Const) and isinstance(arg.value, Ref):
        pointee = arg.value.name
        return env.get(pointee, frozenset()), pointee
    if isinstance(arg, Var) and arg.name in alias:
        pointee = alias[arg.name]
        return env.get(pointee, frozenset()), pointee
    return expr_deps(arg, env, alias), None


class FlowWalker:
    """Propagates dependences through one activation of a function."""

    def __init__(self, program: LabeledProgram, func: FuncDecl, summaries: Dict[str, FuncSummary],
                 flows: Dict[str, FrozenSet[str]], ref_params: Dict[str, bool],
                 dep_map: Optional[Dict[Site, Set[Dep]]] = None) -> None:
        self.program = program
        self.func = func
        self.summaries = summaries
        self.flows = flows
        self.param_is_ref = ref_params.get(func.name, False)
        self.arrays = array_names(func)
        self.dep_map = dep_map
        self.ret_deps: Set[Dep] = set()
        self.pbr_deps: Set[Dep] = set()
        self.calls: List[Tuple[int, str, FrozenSet[Dep]]] = []

    def run(self, arg_deps: FrozenSet[Dep]) -> None:
        env: Dict[str, FrozenSet[Dep]] = {}
        alias: Dict[str, str] = {}
        if self.func.param:
            env[self.func.param] = frozenset(arg_deps)
            if self.param_is_ref:
                alias[self.func.param] = self.func.param
        env, alias = self.block(self.func.body, env, alias, frozenset())
        self.ret_deps |= expr_deps(self.func.ret, env, alias)

    def define(self, label: int, deps: FrozenSet[Dep]) -> None:
        if self.dep_map is not None:
            self.dep_map.setdefault((self.func.name, label), set()).update(deps)

    def write_through(self, target: str, deps: FrozenSet[Dep], env: Dict[str, FrozenSet[Dep]],
                      strong: bool) -> None:
        if target == self.func.param and self.param_is_ref:
            self.pbr_deps |= deps
            env[target] = env.get(target, frozenset()) | deps
        elif strong and target not in self.arrays:
            env[target] = deps
        else:
            env[target] = env.get(target, frozenset()) | deps

    def block(self, cmd: Optional[Command], env: Dict[str, FrozenSet[Dep]], alias: Dict[str, str],
              ctrl: FrozenSet[Dep]) -> Tuple[Dict[str, FrozenSet[Dep]], Dict[str, str]]:
        for stmt in flatten(cmd):
            env, alias = self.statement(stmt, env, alias, ctrl)
        return env, alias

    def statement(self, stmt: Command, env, alias, ctrl):
        label = stmt.label
        if isinstance(stmt, InstrCmd):
            instr = stmt.instr
            if isinstance(instr, Assign):
                deps = expr_deps(instr.expr, env, alias) | ctrl
                env[instr.var] = deps
                self.define(label, deps)
            elif isinstance(instr, ArrayAssign):
                deps = expr_deps(instr.expr, env, alias) | expr_deps(instr.index, env, alias) | ctrl
                env[instr.array] = env.get(instr.array, frozenset()) | deps
                self.define(label, deps)
            elif isinstance(instr, DerefAssign):
                deps = expr_deps(instr.expr, env, alias) | ctrl
                self.write_through(alias.get(instr.var, instr.var), deps, env, strong=True)
                self.define(label, deps)
            return env, alias
        if isinstance(stmt, If):
            inner = ctrl | expr_deps(stmt.cond, env, alias)
            then_env, then_alias = self.block(stmt.then, dict(env), dict(alias), inner)
            else_env, else_alias = self.block(stmt.els, dict(env), dict(alias), inner)
            joined = dict(then_env)
            for name, deps in else_env.items():
                joined[name] = joined.get(name, frozenset()) | deps
            return joined, {**then_alias, **else_alias}
        if isinstance(stmt, Atomic):
            return self.block(stmt.body, env, alias, ctrl)

        if isinstance(stmt, Let):
            if isinstance(stmt.expr, Const) and isinstance(stmt.expr.value, Ref):
                alias[stmt.var] = stmt.expr.value.name
            deps = expr_deps(stmt.expr, env, alias) | ctrl
        elif isinstance(stmt, LetInput):
            deps = frozenset([Dep((self.func.name, label), Local(label))]) | ctrl
        elif isinstance(stmt, (LetFresh, LetConsistent)):
            deps = expr_deps(stmt.expr, env, alias) | ctrl
        elif isinstance(stmt, LetCall):
            deps = self.call(stmt, env, alias, ctrl)
        else:
            raise TypeError(f"unexpected command {stmt!r}")
        if stmt.var != UNBOUND:
            env[stmt.var] = deps
        self.define(label, deps)
        return env, alias

    def call(self, stmt: LetCall, env, alias, ctrl) -> FrozenSet[Dep]:
        passed, pointee = call_argument(stmt.arg, env, alias)
        self.calls.append((stmt.label, stmt.callee, passed))
        outs_ret, outs_pbr = self.call_outputs(stmt, passed)
        if pointee is not None:
            self.write_through(pointee, outs_pbr | ctrl, env, strong=False)
        return outs_ret | ctrl

    def call_outputs(self, stmt: LetCall, passed: FrozenSet[Dep]) -> Tuple[FrozenSet[Dep], FrozenSet[Dep]]:
        """Dependences a call hands back through its result and through ``*arg``."""
        summary = self.summaries[stmt.callee]
        flows = self.flows[stmt.callee]
        outs_ret = {Dep(e.input, RetBy(stmt.callee, stmt.label, e.from_tp))
                    for e in summary.local if e.sink == 'ret'}
        outs_pbr = {Dep(e.input, Pbr(stmt.callee, stmt.label, e.from_tp))
                    for e in summary.local if e.sink == '&arg'}
        if 'ret' in flows:
            outs_ret |= passed
        if '&arg' in flows:
            outs_pbr |= passed
        return frozenset(outs_ret), frozenset(outs_pbr)


def build_summary(program: LabeledProgram) -> FuncSummaries:
    """
    Build function summaries and the input-dependence map.

    Args:
        program: Validated, labeled program

    Returns:
        FuncSummaries: Summaries, input-dependence map and argument flows
    """
    ref_params = reference_params(program)
    summaries: Dict[str, FuncSummary] = {name: FuncSummary(name) for name in program.functions}
    flows: Dict[str, FrozenSet[str]] = {}

    for name in callees_first(program):
        func = program.functions[name]
        walker = FlowWalker(program, func, summaries, flows, ref_params)
        walker.run(frozenset([_ARG_MARK]) if func.param else frozenset())
        local = {TaintMapEntry('ret', d.input, d.from_tp) for d in walker.ret_deps if d != _ARG_MARK}
        local |= {TaintMapEntry('&arg', d.input, d.from_tp) for d in walker.pbr_deps if d != _ARG_MARK}
        summaries[name].local = sorted(local, key=_entry_key)
        sinks = set()
        if _ARG_MARK in walker.ret_deps:
            sinks.add('ret')
        if _ARG_MARK in walker.pbr_deps:
            sinks.add('&arg')
        flows[name] = frozenset(sinks)

    caller_entries: Dict[str, Dict[Site, Set[TaintMapEntry]]] = {name: {} for name in program.functions}
    dep_map: Dict[Site, Set[Dep]] = {}
    for name in callers_first(program):
        func = program.functions[name]
        keys: List[Optional[Site]] = list(caller_entries[name]) or [None]
        for key in keys:
            arg_deps: FrozenSet[Dep] = frozenset()
            if key is not None:
                arg_deps = frozenset(Dep(e.input, ArgBy(key, e.from_tp))
                                     for e in caller_entries[name][key] if e.sink == 'arg')
            walker = FlowWalker(program, func, summaries, flows, ref_params, dep_map)
            walker.run(arg_deps)
            for label, callee, passed in walker.calls:
                if not passed:
                    continue
                site = (name, label)
                entries = caller_entries[callee].setdefault(site, set())
                entries.update(TaintMapEntry('arg', d.input, d.from_tp) for d in passed)
                for sink in sorted(flows[callee]):
                    entries.update(TaintMapEntry(sink, d.input, ArgBy(site, d.from_tp)) for d in passed)

    for name, keyed in caller_entries.items():
        summaries[name].callers = {site: sorted(entries, key=_entry_key) for site, entries in keyed.items()}

    logger.info("Built taint summaries for %d functions", len(summaries))
    return FuncSummaries(
        program=program,
        summaries=summaries,
        dep_map={site: frozenset(deps) for site, deps in dep_map.items()},
        flows=flows,
        ref_params=ref_params,
    )


def call_chain(fs: FuncSummaries, entry: Dep, site: Site,
               context: Tuple[Site, ...] = ()) -> Chain:
    """
    Resolve a dependence held at ``site`` into the provenance of its input.

    Args:
        fs: Program summaries
        entry: Dependence as recorded at ``site``
        site: (function, label) where the dependence is held
        context: Call path from main to the function of ``site``

    Returns:
        Chain: Call sites from main down to the input operation

    Raises:
        AnalysisError: The dependence does not belong to ``context`` or a
            link is missing from the summaries
    """
    func = site[0]
    ctx = list(context)
    tp = entry.from_tp
    while isinstance(tp, ArgBy):
        if not ctx or ctx[-1] != tp.caller:
            raise AnalysisError(f"dependence {entry} does not arrive through context {ctx}")
        expected = TaintMapEntry('arg', entry.input, tp.inner)
        if expected not in fs.summaries[func].callers.get(tp.caller, []):
            raise AnalysisError(f"broken chain: {func} has no caller entry {expected} for {tp.caller}")
        func = tp.caller[0]
        ctx.pop()
        tp = tp.inner
    sites = list(ctx)
    while True:
        if isinstance(tp, Local):
            if entry.input != (func, tp.label):
                raise AnalysisError(f"broken chain: {entry} ends at ({func},{tp.label})")
            sites.append((func, tp.label))
            return Chain(tuple(sites))
        if isinstance(tp, (RetBy, Pbr)):
            sink = 'ret' if isinstance(tp, RetBy) else '&arg'
            expected = TaintMapEntry(sink, entry.input, tp.inner)
            if expected not in fs.summaries[tp.func].local:
                raise AnalysisError(f"broken chain: {tp.func} has no local entry {expected}")
            sites.append((func, tp.label))
            func = tp.func
            tp = tp.inner
            continue
        raise AnalysisError(f"broken chain: unexpected link {tp} in {entry}")


def resolve_chains(fs: FuncSummaries, deps: Iterable[Dep], site: Site,
                   context: Tuple[Site, ...]) -> FrozenSet[Chain]:
    """Provenances of the dependences that belong to ``context``; others are skipped."""
    chains: Set[Chain] = set()
    for dep in deps:
        try:
            chains.add(call_chain(fs, dep, site, context))
        except AnalysisError as e:
            if _belongs(dep, context):
                raise
            logger.debug("Skipping %s outside context %s: %s", dep, context, e)
    return frozenset(chains)


def _belongs(dep: Dep, context: Tuple[Site, ...]) -> bool:
    ctx = list(context)
    tp = dep.from_tp
    while isinstance(tp, ArgBy):
        if not ctx or ctx[-1] != tp.caller:
            return False
        ctx.pop()
        tp = tp.inner
    return True


def deps_of(dep_map: InputDepMap, expr: Expr, env: Mapping[str, Iterable[Site]]) -> FrozenSet[Dep]:
    """
    Dependences of an expression from the input-dependence map.

    Args:
        dep_map: Definition site -> dependences
        expr: Expression whose reads are looked up
        env: Variable -> the definition sites that may reach this point
    """
    result: Set[Dep] = set()
    for name in read_vars(expr):
        for site in env.get(name, ()):
            result |= dep_map.get(site, frozenset())
    return frozenset(result)


def format_summaries(fs: FuncSummaries) -> List[str]:
    """One line per summary entry: function, local or caller key, sink, input, link."""
    lines: List[str] = []
    for name, summary in fs.summaries.items():
        for entry in summary.local:
            lines.append(f"{name} local {entry}")
        for site in sorted(summary.callers):
            for entry in summary.callers[site]:
                lines.append(f"{name} caller ({site[0]},{site[1]}) {entry}")
    return lines
