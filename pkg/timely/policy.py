"""
Timely Policies

Turns ``fresh`` and ``consistent(n)`` annotations into policy records
and keeps the policy map from atomic regions to the policies they
enforce.

A policy is split into groups, one per activation it constrains. A
freshness group holds the provenances of every input the fresh value
depends on plus the call path to every use, all under one calling
context of the declaring function. A consistency group holds input
provenances only. Consistency sets declared in one function get one
group per calling context; sets spanning functions form one group.
"""

import logging
from dataclasses import dataclass
from typing import ClassVar, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

from .syntax import (
    Atomic, Command, Expr, FuncDecl, If, LabeledProgram, LetConsistent, LetFresh, Site,
    all_calling_contexts, command_exprs, flatten, labels_in, read_vars, walk,
)
from .taint import Chain, FuncSummaries, resolve_chains

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyGroup:
    """
    The instructions of one policy activation.

    Attributes:
        context (Tuple[Site, ...]): Calling context the group belongs to
        items (FrozenSet[Chain]): Chains of every instruction the group binds
        inputs (FrozenSet[Chain]): The input operations among ``items``
    """
    context: Tuple[Site, ...]
    items: FrozenSet[Chain]
    inputs: FrozenSet[Chain]


@dataclass(frozen=True)
class FreshPolicy:
    kind: ClassVar[str] = 'fresh'
    pid: str
    var: str
    decl: Site
    inputs: FrozenSet[Chain]
    uses: Tuple[Site, ...]
    groups: Tuple[PolicyGroup, ...]


@dataclass(frozen=True)
class ConsistentPolicy:
    kind: ClassVar[str] = 'consistent'
    pid: str
    set_id: int
    decls: Tuple[Site, ...]
    vars: Tuple[str, ...]
    inputs: FrozenSet[Chain]
    groups: Tuple[PolicyGroup, ...]


Policy = Union[FreshPolicy, ConsistentPolicy]
PolicyDecls = Dict[str, Policy]
PolicyMap = Dict[int, List[str]]


def fresh_pid(site: Site) -> str:
    return f"fresh@{site[0]}:{site[1]}"


def consistent_pid(set_id: int) -> str:
    return f"consistent@{set_id}"


def fresh_uses(func: FuncDecl, decl: LetFresh) -> List[int]:
    """
    Labels of commands reading a fresh variable while its declaration is in scope.

    Atomic bodies do not end the scope; branches do. The declaration's
    own initializer is not a use.
    """
    uses: List[int] = []
    var = decl.var

    def visit(cmd: Optional[Command], active: bool) -> bool:
        for stmt in flatten(cmd):
            if active and any(var in read_vars(e) for e in command_exprs(stmt)):
                uses.append(stmt.label)
            if stmt.label == decl.label:
                active = True
            if isinstance(stmt, If):
                visit(stmt.then, active)
                visit(stmt.els, active)
            elif isinstance(stmt, Atomic):
                active = visit(stmt.body, active)
        return active

    if visit(func.body, False) and var in read_vars(func.ret):
        uses.append(func.ret_label)
    return uses


def build_policies(program: LabeledProgram, fs: FuncSummaries) -> PolicyDecls:
    """
    Build one policy per fresh declaration and one per consistency set.

    Args:
        program: Labeled program
        fs: Its taint summaries

    Returns:
        PolicyDecls: Policies keyed by id, fresh policies first in program order
    """
    contexts = all_calling_contexts(program)
    pd: PolicyDecls = {}
    consistent_decls: Dict[int, List[Tuple[Site, str]]] = {}

    for name, func in program.functions.items():
        for node in walk(func.body):
            if isinstance(node, LetFresh):
                decl = (name, node.label)
                uses = tuple((name, label) for label in fresh_uses(func, node))
                deps = fs.dep_map.get(decl, frozenset())
                groups: List[PolicyGroup] = []
                all_inputs: Set[Chain] = set()
                for ctx in contexts.get(name, []):
                    inputs = resolve_chains(fs, deps, decl, ctx)
                    use_chains = frozenset(Chain(ctx + (use,)) for use in uses)
                    groups.append(PolicyGroup(ctx, inputs | use_chains, inputs))
                    all_inputs |= inputs
                policy = FreshPolicy(fresh_pid(decl), node.var, decl, frozenset(all_inputs), uses, tuple(groups))
                pd[policy.pid] = policy
            elif isinstance(node, LetConsistent):
                consistent_decls.setdefault(node.set_id, []).append(((name, node.label), node.var))

    for set_id in sorted(consistent_decls):
        decls = consistent_decls[set_id]
        funcs = {site[0] for site, _ in decls}
        groups = []
        all_inputs = set()
        if len(funcs) == 1:
            (func_name,) = funcs
            for ctx in contexts.get(func_name, []):
                inputs: Set[Chain] = set()
                for site, _ in decls:
                    inputs |= resolve_chains(fs, fs.dep_map.get(site, frozenset()), site, ctx)
                groups.append(PolicyGroup(ctx, frozenset(inputs), frozenset(inputs)))
                all_inputs |= inputs
        else:
            for site, _ in decls:
                for ctx in contexts.get(site[0], []):
                    all_inputs |= resolve_chains(fs, fs.dep_map.get(site, frozenset()), site, ctx)
            groups.append(PolicyGroup((), frozenset(all_inputs), frozenset(all_inputs)))
        policy = ConsistentPolicy(
            pid=consistent_pid(set_id),
            set_id=set_id,
            decls=tuple(site for site, _ in decls),
            vars=tuple(var for _, var in decls),
            inputs=frozenset(all_inputs),
            groups=tuple(groups),
        )
        pd[policy.pid] = policy

    for policy in pd.values():
        if is_vacuous(policy):
            logger.warning("Policy %s does not depend on any input", policy.pid)
    logger.info("Built %d policies", len(pd))
    return pd


def is_vacuous(policy: Policy) -> bool:
    return not policy.inputs


def group_key(policy: Policy, group: PolicyGroup) -> Tuple[str, Tuple[Site, ...]]:
    return (policy.pid, group.context)


def check_use(pd: PolicyDecls, expr: Expr, site: Site,
              fresh_vars: Optional[Iterable[str]] = None) -> bool:
    """
    True iff every fresh variable read by ``expr`` lists ``site`` among its uses.

    Args:
        pd: Policy declarations
        expr: Expression evaluated at ``site``
        site: (function, label) of the evaluating command
        fresh_vars: Names known to be fresh-bound at ``site``; defaults to
            every fresh variable declared in the site's function
    """
    names = read_vars(expr)
    known = None if fresh_vars is None else set(fresh_vars)
    for policy in pd.values():
        if not isinstance(policy, FreshPolicy) or policy.decl[0] != site[0]:
            continue
        if policy.var not in names or (known is not None and policy.var not in known):
            continue
        if site not in policy.uses:
            return False
    return True


def regions_of(program: LabeledProgram) -> Dict[int, Tuple[str, Atomic]]:
    """Atomic regions by id, with their enclosing function."""
    regions: Dict[int, Tuple[str, Atomic]] = {}
    for name, func in program.functions.items():
        for node in walk(func.body):
            if isinstance(node, Atomic):
                regions[node.region_id] = (name, node)
    return regions


def derive_policy_map(program: LabeledProgram, pd: PolicyDecls) -> PolicyMap:
    """
    Recover a policy map from regions placed by hand.

    A region enforces every policy with an instruction, or a call leading
    to one, inside its body.
    """
    pm: PolicyMap = {}
    for region_id, (func, atomic) in sorted(regions_of(program).items()):
        inside = {(func, label) for label in labels_in(atomic.body)}
        pids = []
        for pid, policy in pd.items():
            if any(site in inside for group in policy.groups for chain in group.items for site in chain.sites):
                pids.append(pid)
        pm[region_id] = pids
    return pm
