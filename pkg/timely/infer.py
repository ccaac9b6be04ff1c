"""
Timely Region Inference

Places the smallest atomic region that enforces each policy group and
rewrites the program to contain it.

For one group the steps are:

1. find_candidate: the deepest function whose activation covers every
   policy instruction of the group (the end of the chains' common prefix).
2. lift_blocks: map every instruction to the block of the site through
   which it runs inside that function (itself, or the call leading to it).
3. Dominators: the closest common dominator and post-dominator of the
   lifted blocks bound the region.
4. truncate: tighten the bounds to the first and last instruction inside
   those two blocks.

Regions are computed on the original program so labels never shift;
identical extents are shared by several policies. Insertion wraps the
statements between the bounds, widening to the enclosing statement when
the bounds sit at different nesting depths.

Classes:
    ProgramPoint: An index into a basic block
    RegionPlan: One region to insert

Functions:
    find_candidate: Candidate depth and function for a group
    lift_blocks: Blocks of a group's instructions inside the candidate
    truncate: Tighten dominator bounds to instruction positions
    compute_checkpoint_set: Locations a region must log
    plan_regions: Regions for every policy
    insert_regions: Rewrite a program with planned regions
    infer_atomic: plan_regions + insert_regions

Dependencies:
    - networkx (through cfg): dominator trees
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .cfg import BasicBlock, FunctionCFG, build_cfg, closest_common_dom, closest_common_postdom
from .errors import AnalysisError
from .policy import PolicyDecls, PolicyGroup, PolicyMap
from .syntax import (
    BINDERS, ArrayAssign, Assign, Atomic, Command, Const, DerefAssign, FuncDecl, If, InstrCmd,
    LabeledProgram, Let, LetCall, Ref, Seq, Var, callees_first, flatten, label_function, labels_in,
    rebuild, walk,
)
from .taint import Chain, FuncSummaries
from .validate import reference_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProgramPoint:
    """
    A position inside a basic block.

    ``index == len(block.labels)`` means "after the last label" and
    ``index == -1`` means "before the first"; both only occur for blocks
    holding no policy instruction.
    """
    block: BasicBlock
    index: int


@dataclass(frozen=True)
class RegionPlan:
    region_id: int
    func: str
    start: int
    end: int
    pids: Tuple[str, ...]
    omega: FrozenSet[str]


def find_candidate(items: Iterable[Chain], program: LabeledProgram) -> Tuple[int, str]:
    """
    Pick the deepest function whose activation covers every instruction.

    Args:
        items: Chains of the group's instructions, all from main
        program: Program the chains refer to

    Returns:
        Tuple[int, str]: Depth into the chains of the candidate's sites, and its name

    Raises:
        AnalysisError: No items, or a use in main's return
    """
    chains = [item.sites for item in items]
    if not chains:
        raise AnalysisError("no policy instructions to cover")
    shortest = min(len(chain) for chain in chains)
    prefix = 0
    while prefix < shortest and all(chain[prefix] == chains[0][prefix] for chain in chains):
        prefix += 1
    depth = min(prefix, shortest - 1)
    # a return cannot be wrapped in its own function; move out to the call
    for chain in chains:
        func, label = chain[depth]
        if depth == len(chain) - 1 and program.functions[func].ret_label == label:
            depth -= 1
            break
    if depth < 0:
        raise AnalysisError("policy instruction in main's return cannot be enclosed")
    return depth, chains[0][depth][0]


def lift_blocks(items: Iterable[Chain], depth: int, cfg: FunctionCFG) -> Dict[Chain, BasicBlock]:
    """Block of each instruction's site at ``depth``: itself, or the call it runs under."""
    lifted: Dict[Chain, BasicBlock] = {}
    for item in items:
        func, label = item[depth]
        if func != cfg.func:
            raise AnalysisError(f"{item} does not pass through {cfg.func} at depth {depth}")
        lifted[item] = cfg.block_of(label)
    return lifted


def truncate(start_dom: BasicBlock, end_dom: BasicBlock,
             labels: Iterable[int]) -> Tuple[ProgramPoint, ProgramPoint]:
    """
    Tighten region bounds to the instructions inside the bounding blocks.

    Args:
        start_dom: Closest common dominator of the lifted blocks
        end_dom: Closest common post-dominator of the lifted blocks
        labels: Lifted instruction labels

    Returns:
        Tuple[ProgramPoint, ProgramPoint]: First covered and last covered positions
    """
    wanted = set(labels)
    start_hits = [i for i, label in enumerate(start_dom.labels) if label in wanted]
    end_hits = [i for i, label in enumerate(end_dom.labels) if label in wanted]
    start = ProgramPoint(start_dom, start_hits[0] if start_hits else len(start_dom.labels))
    end = ProgramPoint(end_dom, end_hits[-1] if end_hits else -1)
    return start, end


def _start_label(point: ProgramPoint) -> int:
    block = point.block
    if point.index < len(block.labels):
        return block.labels[point.index]
    if block.branch_label is None:
        raise AnalysisError(f"region start after {block!r}, which does not branch")
    return block.branch_label


def _end_label(point: ProgramPoint) -> int:
    block = point.block
    if point.index >= 0:
        return block.labels[point.index]
    if block.join_of is None:
        raise AnalysisError(f"region end before {block!r}, which is not a join")
    return block.join_of


# Checkpoint sets

def writes_through_param(program: LabeledProgram) -> Dict[str, bool]:
    """Whether each function (or a callee it passes its parameter to) writes through its parameter."""
    ref_params = reference_params(program)
    writes: Dict[str, bool] = {}
    for name in callees_first(program):
        func = program.functions[name]
        result = False
        if ref_params.get(name) and func.param:
            for node in walk(func.body):
                if isinstance(node, InstrCmd) and isinstance(node.instr, DerefAssign) \
                        and node.instr.var == func.param:
                    result = True
                elif isinstance(node, LetCall) and node.arg == Var(func.param) and writes.get(node.callee):
                    result = True
        writes[name] = result
    return writes


def _reference_targets(func: FuncDecl, param_is_ref: bool) -> Dict[str, str]:
    targets = {func.param: f"*{func.param}"} if param_is_ref and func.param else {}
    for node in walk(func.body):
        if isinstance(node, Let) and isinstance(node.expr, Const) and isinstance(node.expr.value, Ref):
            targets[node.var] = node.expr.value.name
    return targets


def compute_checkpoint_set(body: Optional[Command], func: FuncDecl, program: LabeledProgram,
                           writers: Optional[Dict[str, bool]] = None) -> FrozenSet[str]:
    """
    Locations a region over ``body`` must save on entry.

    Every location written in the region that outlives it: variables and
    whole arrays of ``func``, ``*p`` for writes through a reference
    parameter, and locations passed by reference to callees that write
    through their parameter. Names bound inside the region are skipped;
    re-execution binds them again.
    """
    if writers is None:
        writers = writes_through_param(program)
    targets = _reference_targets(func, reference_params(program).get(func.name, False))
    inner = {node.var for node in walk(body) if isinstance(node, BINDERS)}
    written = set()
    for node in walk(body):
        if isinstance(node, InstrCmd):
            instr = node.instr
            if isinstance(instr, Assign):
                written.add(instr.var)
            elif isinstance(instr, ArrayAssign):
                written.add(instr.array)
            elif isinstance(instr, DerefAssign):
                written.add(targets.get(instr.var, instr.var))
        elif isinstance(node, LetCall) and writers.get(node.callee):
            if isinstance(node.arg, Const) and isinstance(node.arg.value, Ref):
                written.add(node.arg.value.name)
            elif isinstance(node.arg, Var) and node.arg.name in targets:
                written.add(targets[node.arg.name])
    return frozenset(name for name in written if name not in inner)


# Planning

def _group_extent(program: LabeledProgram, cfgs: Dict[str, FunctionCFG],
                  group: PolicyGroup) -> Tuple[str, int, int]:
    depth, func = find_candidate(group.items, program)
    lifted = lift_blocks(group.items, depth, cfgs[func])
    blocks = list(lifted.values())
    start_dom = closest_common_dom(blocks)
    end_dom = closest_common_postdom(blocks)
    labels = [item[depth][1] for item in group.items]
    start, end = truncate(start_dom, end_dom, labels)
    return func, _start_label(start), _end_label(end)


def plan_regions(program: LabeledProgram, fs: FuncSummaries, pd: PolicyDecls) -> List[RegionPlan]:
    """
    Compute one region per distinct group extent.

    Args:
        program: Original (region-free) program
        fs: Its summaries
        pd: Its policies

    Returns:
        List[RegionPlan]: Regions numbered from 1 in policy order
    """
    cfgs = {name: build_cfg(func) for name, func in program.functions.items()}
    extents: Dict[Tuple[str, int, int], List[str]] = {}
    for pid, policy in pd.items():
        groups = [group for group in policy.groups if group.items]
        if not groups:
            logger.warning("Skipping %s: it has no reachable instructions", pid)
            continue
        for group in groups:
            extent = _group_extent(program, cfgs, group)
            owners = extents.setdefault(extent, [])
            if pid not in owners:
                owners.append(pid)
            logger.debug("%s context %s -> %s:%d..%d", pid, group.context, *extent)

    writers = writes_through_param(program)
    plans: List[RegionPlan] = []
    for region_id, ((func_name, start, end), pids) in enumerate(extents.items(), start=1):
        func = program.functions[func_name]
        body = _region_body(func.body, start, end)
        omega = compute_checkpoint_set(body, func, program, writers)
        plans.append(RegionPlan(region_id, func_name, start, end, tuple(pids), omega))
    logger.info("Planned %d atomic region(s) for %d policies", len(plans), len(pd))
    return plans


# Insertion

def _owns(stmt: Command, label: int) -> bool:
    if stmt.label == label:
        return True
    if isinstance(stmt, If):
        return label in labels_in(stmt.then) or label in labels_in(stmt.els)
    if isinstance(stmt, Atomic):
        return label in labels_in(stmt.body)
    return False


def _locate(stmts: Sequence[Command], label: int) -> int:
    for i, stmt in enumerate(stmts):
        if _owns(stmt, label):
            return i
    return -1


def _wrap(block: Optional[Command], start: int, end: int, make) -> Tuple[Optional[Command], bool]:
    stmts = flatten(block)
    i, j = _locate(stmts, start), _locate(stmts, end)
    if i < 0 and j < 0:
        for k, stmt in enumerate(stmts):
            new_stmt, done = _wrap_inside(stmt, start, end, make)
            if done:
                stmts[k] = new_stmt
                return rebuild(stmts), True
        return block, False
    if i < 0 or j < 0 or i > j:
        raise AnalysisError(f"region bounds {start}..{end} do not nest")
    if i == j and stmts[i].label not in (start, end):
        new_stmt, done = _wrap_inside(stmts[i], start, end, make)
        if done:
            stmts[i] = new_stmt
            return rebuild(stmts), True
    wrapped = make(rebuild(list(stmts[i:j + 1])))
    return rebuild(list(stmts[:i]) + [wrapped] + list(stmts[j + 1:])), True


def _wrap_inside(stmt: Command, start: int, end: int, make) -> Tuple[Command, bool]:
    def holds(block):
        labels = labels_in(block)
        return start in labels and end in labels

    if isinstance(stmt, If):
        if holds(stmt.then):
            then, done = _wrap(stmt.then, start, end, make)
            return replace(stmt, then=then), done
        if holds(stmt.els):
            els, done = _wrap(stmt.els, start, end, make)
            return replace(stmt, els=els), done
    elif isinstance(stmt, Atomic) and holds(stmt.body):
        body, done = _wrap(stmt.body, start, end, make)
        return replace(stmt, body=body), done
    return stmt, False


def _region_body(block: Optional[Command], start: int, end: int) -> Optional[Command]:
    captured: List[Optional[Command]] = []

    def make(body):
        captured.append(body)
        return Atomic(0, frozenset(), body)

    _wrap(block, start, end, make)
    if not captured:
        raise AnalysisError(f"no statements between labels {start} and {end}")
    return captured[0]


def _refresh_checkpoints(cmd: Optional[Command], func: FuncDecl, program: LabeledProgram,
                         writers: Dict[str, bool]) -> Optional[Command]:
    """Recompute omega of every region under ``cmd`` from its final body, nested regions included."""
    if cmd is None:
        return None
    if isinstance(cmd, Seq):
        return replace(cmd, first=_refresh_checkpoints(cmd.first, func, program, writers),
                       second=_refresh_checkpoints(cmd.second, func, program, writers))
    if isinstance(cmd, If):
        return replace(cmd, then=_refresh_checkpoints(cmd.then, func, program, writers),
                       els=_refresh_checkpoints(cmd.els, func, program, writers))
    if isinstance(cmd, Atomic):
        body = _refresh_checkpoints(cmd.body, func, program, writers)
        return replace(cmd, body=body, omega=compute_checkpoint_set(body, func, program, writers))
    if isinstance(cmd, BINDERS):
        return replace(cmd, body=_refresh_checkpoints(cmd.body, func, program, writers))
    return cmd


def insert_regions(program: LabeledProgram, plans: Iterable[RegionPlan]) -> LabeledProgram:
    """
    Wrap each planned extent in an atomic command and relabel regions.

    Plans are applied in order; a later region whose bounds straddle an
    earlier one grows to enclose it. Once every region is in place each
    omega is recomputed from the region's final body, so an enclosing
    region also saves what its nested regions write.
    """
    functions = dict(program.functions)
    touched = []
    for plan in plans:
        func = functions[plan.func]

        def make(body, plan=plan):
            return Atomic(plan.region_id, plan.omega, body)

        body, done = _wrap(func.body, plan.start, plan.end, make)
        if not done:
            raise AnalysisError(f"cannot place region {plan.region_id} in {plan.func}")
        functions[plan.func] = replace(func, body=body)
        if plan.func not in touched:
            touched.append(plan.func)
    wrapped = replace(program, functions=functions)
    writers = writes_through_param(program)
    for name in touched:
        func = functions[name]
        functions[name] = replace(func, body=_refresh_checkpoints(func.body, func, wrapped, writers))
    functions = {name: label_function(func) for name, func in functions.items()}
    return replace(program, functions=functions)


def infer_atomic(program: LabeledProgram, fs: FuncSummaries,
                 pd: PolicyDecls) -> Tuple[PolicyMap, LabeledProgram]:
    """
    Place atomic regions for every policy.

    Args:
        program: Original program
        fs: Its summaries
        pd: Its policies

    Returns:
        Tuple[PolicyMap, LabeledProgram]: Region id -> policy ids, and the rewritten program
    """
    plans = plan_regions(program, fs, pd)
    pm: PolicyMap = {plan.region_id: list(plan.pids) for plan in plans}
    return pm, insert_regions(program, plans)
