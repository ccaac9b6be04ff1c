"""
Timely Checker

Independent verification of analysis results and region placement.

``check_summaries`` re-walks every function under each calling context
recorded in the summaries, taking callee behavior from the summaries
themselves rather than recomputing it, and confirms that tainted
arguments, returns and reference writes are all accounted for and that
every annotated binding's inputs and every fresh use are in the policy
declarations.

``check_regions`` follows every execution path from main through calls,
tracking the atomic region instance each policy instruction executes
in. A policy group passes when all of its instructions that execute on
a path do so inside one instance of a region that enforces the policy.
Nested regions count as their outermost instance.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from .errors import AnalysisError
from .policy import (
    PolicyDecls, PolicyMap, build_policies, check_use, consistent_pid, derive_policy_map, fresh_pid,
)
from .syntax import (
    Atomic, Command, If, LabeledProgram, LetCall, LetConsistent, LetFresh, Site,
    all_calling_contexts, command_exprs, flatten,
)
from .taint import (
    ArgBy, Chain, Dep, FlowWalker, FuncSummaries, Pbr, RetBy, TaintMapEntry, build_summary,
    expr_deps, resolve_chains,
)
from .validate import Diagnostic

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    """Verdict plus the diagnostics behind it."""
    ok: bool
    diagnostics: List[Diagnostic]

    def __bool__(self) -> bool:
        return self.ok


def _dedupe(diagnostics: List[Diagnostic]) -> List[Diagnostic]:
    seen: Set[Tuple[Site, str, str]] = set()
    result = []
    for diag in diagnostics:
        key = (diag.site, diag.rule, diag.message)
        if key not in seen:
            seen.add(key)
            result.append(diag)
    return result


# Summary checking

class _SummaryChecker(FlowWalker):
    """Walks one function under one caller key, taking callee effects from the summaries."""

    def __init__(self, fs: FuncSummaries, pd: PolicyDecls, name: str, key: Optional[Site],
                 contexts: List[Tuple[Site, ...]]) -> None:
        program = fs.program
        super().__init__(program, program.functions[name], fs.summaries, fs.flows, fs.ref_params)
        self.fs = fs
        self.pd = pd
        self.key = key
        self.contexts = contexts
        self.fresh_vars: Set[str] = set()
        self.diagnostics: List[Diagnostic] = []

    def report(self, label: int, rule: str, message: str) -> None:
        self.diagnostics.append(Diagnostic((self.func.name, label), rule, message))

    def allowed(self, sink: str, dep: Dep) -> bool:
        entry = TaintMapEntry(sink, dep.input, dep.from_tp)
        if isinstance(dep.from_tp, ArgBy):
            return self.key is not None and entry in self.fs.summaries[self.func.name].callers.get(self.key, [])
        return entry in self.fs.summaries[self.func.name].local

    def check(self) -> List[Diagnostic]:
        arg_deps: FrozenSet[Dep] = frozenset()
        if self.key is not None:
            entries = self.fs.summaries[self.func.name].callers.get(self.key, [])
            arg_deps = frozenset(Dep(e.input, ArgBy(self.key, e.from_tp)) for e in entries if e.sink == 'arg')
        self.run(arg_deps)
        ret_site = (self.func.name, self.func.ret_label)
        if not check_use(self.pd, self.func.ret, ret_site, self.fresh_vars):
            self.report(self.func.ret_label, 'checkUse', "return reads a fresh variable without a recorded use")
        for dep in sorted(self.ret_deps, key=str):
            if not self.allowed('ret', dep):
                self.report(self.func.ret_label, 'Ret', f"returned taint {dep} missing from the summary")
        return self.diagnostics

    def write_through(self, target, deps, env, strong):
        if target == self.func.param and self.param_is_ref:
            for dep in sorted(deps, key=str):
                if not self.allowed('&arg', dep):
                    self.report(self.func.ret_label, 'Assign-Ref',
                                f"taint {dep} written through {target!r} missing from the summary")
        super().write_through(target, deps, env, strong)

    def statement(self, stmt: Command, env, alias, ctrl):
        site = (self.func.name, stmt.label)
        for expr in command_exprs(stmt):
            if not check_use(self.pd, expr, site, self.fresh_vars):
                self.report(stmt.label, 'checkUse', "fresh variable read here is not a recorded use")
        if isinstance(stmt, If):
            # fresh bindings do not outlive the branch that made them
            saved = set(self.fresh_vars)
            result = super().statement(stmt, env, alias, ctrl)
            self.fresh_vars = saved
            return result
        if isinstance(stmt, LetFresh):
            self.check_annotation(stmt, fresh_pid(site), expr_deps(stmt.expr, env, alias) | ctrl, 'Let-fresh')
            self.fresh_vars.add(stmt.var)
        elif isinstance(stmt, LetConsistent):
            self.check_annotation(stmt, consistent_pid(stmt.set_id), expr_deps(stmt.expr, env, alias) | ctrl,
                                  'Let-consistent')
        return super().statement(stmt, env, alias, ctrl)

    def check_annotation(self, stmt, pid: str, deps: FrozenSet[Dep], rule: str) -> None:
        policy = self.pd.get(pid)
        if policy is None:
            self.report(stmt.label, rule, f"no policy {pid} for this annotation")
            return
        site = (self.func.name, stmt.label)
        for ctx in self.contexts:
            try:
                chains = resolve_chains(self.fs, deps, site, ctx)
            except AnalysisError as e:
                self.report(stmt.label, rule, str(e))
                continue
            for chain in sorted(chains, key=str):
                if chain not in policy.inputs:
                    self.report(stmt.label, rule, f"input {chain} missing from policy {pid}")

    def call_outputs(self, stmt: LetCall, passed):
        site = (self.func.name, stmt.label)
        callee = self.fs.summaries[stmt.callee]
        keyed = callee.callers.get(site, [])
        for dep in sorted(passed, key=str):
            if TaintMapEntry('arg', dep.input, dep.from_tp) not in keyed:
                self.report(stmt.label, 'Call-nr',
                            f"{stmt.callee} has no caller summary entry for {dep} from {site}")
        outs = {'ret': set(), '&arg': set()}
        for entry in callee.local:
            if entry.sink in outs:
                link = RetBy if entry.sink == 'ret' else Pbr
                outs[entry.sink].add(Dep(entry.input, link(stmt.callee, stmt.label, entry.from_tp)))
        for entry in keyed:
            if entry.sink == 'arg':
                continue
            if not isinstance(entry.from_tp, ArgBy) or entry.from_tp.caller != site:
                self.report(stmt.label, 'Call-r', f"caller entry {entry} of {stmt.callee} is not tagged for {site}")
                continue
            outs[entry.sink].add(Dep(entry.input, entry.from_tp.inner))
        return frozenset(outs['ret']), frozenset(outs['&arg'])


def check_summaries(program: LabeledProgram, fs: FuncSummaries, pd: PolicyDecls) -> CheckResult:
    """
    Verify summaries and policy declarations against the program.

    Args:
        program: Labeled program
        fs: Summaries to check (not necessarily produced by this tool)
        pd: Policy declarations to check

    Returns:
        CheckResult: ok plus one diagnostic per failed premise
    """
    fs = replace(fs, program=program)
    contexts = all_calling_contexts(program)
    diagnostics: List[Diagnostic] = []
    for name in program.functions:
        keys = sorted(fs.summaries[name].callers) if name in fs.summaries else []
        runs: List[Tuple[Optional[Site], List[Tuple[Site, ...]]]] = [
            (key, [ctx for ctx in contexts.get(name, []) if ctx and ctx[-1] == key]) for key in keys
        ]
        runs.append((None, contexts.get(name, [])))
        for key, ctxs in runs:
            diagnostics.extend(_SummaryChecker(fs, pd, name, key, ctxs).check())
    diagnostics = _dedupe(diagnostics)
    if diagnostics:
        logger.info("Summary check failed with %d diagnostic(s)", len(diagnostics))
    return CheckResult(not diagnostics, diagnostics)


# Region checking

@dataclass(frozen=True)
class _PathState:
    regions: Tuple[int, ...] = ()            # active region ids, outermost first
    instance: int = 0                        # current outermost instance number
    instances: int = 0                       # instances started so far
    records: FrozenSet[Tuple[Tuple[str, Tuple[Site, ...]], int]] = frozenset()


class _RegionChecker:
    def __init__(self, program: LabeledProgram, pd: PolicyDecls, pm: PolicyMap) -> None:
        self.program = program
        self.pd = pd
        self.pm = pm
        self.diagnostics: List[Diagnostic] = []
        self.groups_by_chain: Dict[Chain, List[Tuple[str, Tuple[Site, ...]]]] = {}
        for pid, policy in pd.items():
            for group in policy.groups:
                for chain in group.items:
                    self.groups_by_chain.setdefault(chain, []).append((pid, group.context))

    def report(self, site: Site, rule: str, message: str) -> None:
        self.diagnostics.append(Diagnostic(site, rule, message))

    def reach(self, chain: Chain, state: _PathState) -> _PathState:
        site = chain.last
        records = dict(state.records)
        for pid, context in self.groups_by_chain.get(chain, []):
            if not state.regions:
                self.report(site, 'Instr-N', f"{pid} instruction {chain} is outside any atomic region")
                continue
            if not any(pid in self.pm.get(region, []) for region in state.regions):
                self.report(site, 'Instr-S', f"{pid} instruction {chain} is inside region "
                                             f"{state.regions[-1]} which does not enforce it")
                continue
            key = (pid, context)
            if key not in records:
                records[key] = state.instance
            elif records[key] != state.instance:
                self.report(site, 'Atomic', f"{pid} instruction {chain} is reached after the region "
                                            f"holding the rest of its group ended")
        return replace(state, records=frozenset(records.items()))

    def block(self, func: str, cmd: Optional[Command], ctx: Tuple[Site, ...],
              states: Set[_PathState]) -> Set[_PathState]:
        for stmt in flatten(cmd):
            states = self.statement(func, stmt, ctx, states)
        return states

    def statement(self, func: str, stmt: Command, ctx: Tuple[Site, ...],
                  states: Set[_PathState]) -> Set[_PathState]:
        chain = Chain(ctx + ((func, stmt.label),))
        if isinstance(stmt, Atomic):
            entered = set()
            for state in states:
                if state.regions:
                    entered.add(replace(state, regions=state.regions + (stmt.region_id,)))
                else:
                    entered.add(replace(state, regions=(stmt.region_id,), instance=state.instances + 1,
                                        instances=state.instances + 1))
            inside = self.block(func, stmt.body, ctx, entered)
            return {replace(state, regions=state.regions[:-1]) for state in inside}
        states = {self.reach(chain, state) for state in states}
        if isinstance(stmt, If):
            return self.block(func, stmt.then, ctx, states) | self.block(func, stmt.els, ctx, states)
        if isinstance(stmt, LetCall):
            callee = self.program.functions[stmt.callee]
            states = self.block(callee.name, callee.body, chain.sites, states)
            ret_chain = Chain(chain.sites + ((callee.name, callee.ret_label),))
            return {self.reach(ret_chain, state) for state in states}
        return states

    def check(self) -> List[Diagnostic]:
        main = self.program.main
        states = self.block('main', main.body, (), {_PathState()})
        for state in states:
            self.reach(Chain((('main', main.ret_label),)), state)
        return _dedupe(self.diagnostics)


def check_regions(program: LabeledProgram, pd: PolicyDecls, pm: PolicyMap) -> CheckResult:
    """
    Verify that atomic regions enforce every policy on every path.

    Args:
        program: Program carrying atomic regions
        pd: Policy declarations
        pm: Region id -> ids of the policies it enforces

    Returns:
        CheckResult: ok plus one diagnostic per (rule, site, message)
    """
    for region_id, pids in pm.items():
        for pid in pids:
            if pid not in pd:
                return CheckResult(False, [Diagnostic(('main', -1), 'PolicyMap',
                                                      f"region {region_id} names unknown policy {pid}")])
    diagnostics = _RegionChecker(program, pd, pm).check()
    if diagnostics:
        logger.info("Region check failed with %d diagnostic(s)", len(diagnostics))
    return CheckResult(not diagnostics, diagnostics)


def check_program(original: LabeledProgram, transformed: LabeledProgram,
                  pm: Optional[PolicyMap] = None) -> CheckResult:
    """
    Checker-only mode: verify hand-placed (or tool-placed) regions.

    Policies come from the original program; the policy map is recovered
    from region placement unless given.
    """
    fs = build_summary(original)
    pd = build_policies(original, fs)
    summaries = check_summaries(original, fs, pd)
    if pm is None:
        pm = derive_policy_map(transformed, pd)
    regions = check_regions(transformed, pd, pm)
    diagnostics = summaries.diagnostics + regions.diagnostics
    return CheckResult(not diagnostics, diagnostics)
