"""
Timely Abstract Syntax

Immutable syntax tree for annotated programs together with the helpers
every later stage relies on: pre-order labeling, statement-list
flattening and rebuilding, read/write sets and the call graph.

Commands form a right-nested tree. A let-form owns the rest of its
block as its body; Seq joins two commands that do not bind anything.
Every command except Seq carries a label once the owning function has
been labeled. Labels are unique within a function and assigned in
pre-order; the return expression receives the label after the body,
and atomic regions are numbered after the return label.

Classes:
    Ref, Var, Const, Index, Deref, BinOp, UnOp, ArrayLit: Expressions
    Skip, Assign, ArrayAssign, DerefAssign: Instructions
    InstrCmd, If, Seq, Let, LetCall, LetInput, LetFresh, LetConsistent,
    Atomic: Commands
    FuncDecl: A function declaration
    LabeledProgram: A labeled program

Dependencies:
    - networkx: call graph, cycle detection and topological ordering
"""

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple, Union

import networkx as nx

Site = Tuple[str, int]

UNBOUND = '_'
INPUT_SOURCE = 'IN'

BINARY_OPS: Dict[str, int] = {
    '||': 1,
    '&&': 2,
    '==': 3, '!=': 3,
    '<': 4, '<=': 4, '>': 4, '>=': 4,
    '+': 5, '-': 5,
    '*': 6, '/': 6, '%': 6,
}
UNARY_PRECEDENCE = 7
UNARY_OPS = ('-', '!')


@dataclass(frozen=True)
class Ref:
    """A reference to a variable, or to one element of an array variable."""
    name: str
    index: Optional[int] = None

    def __str__(self) -> str:
        return f"&{self.name}" if self.index is None else f"&{self.name}[{self.index}]"


Value = Union[int, bool, Ref]


# Expressions

@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: Value


@dataclass(frozen=True)
class Index:
    array: str
    index: 'Expr'


@dataclass(frozen=True)
class Deref:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: 'Expr'
    rhs: 'Expr'


@dataclass(frozen=True)
class UnOp:
    op: str
    operand: 'Expr'


@dataclass(frozen=True)
class ArrayLit:
    elements: Tuple['Expr', ...]


Expr = Union[Var, Const, Index, Deref, BinOp, UnOp, ArrayLit]


# Instructions

@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@dataclass(frozen=True)
class ArrayAssign:
    array: str
    index: Expr
    expr: Expr


@dataclass(frozen=True)
class DerefAssign:
    var: str
    expr: Expr


Instruction = Union[Skip, Assign, ArrayAssign, DerefAssign]


# Commands

@dataclass(frozen=True)
class InstrCmd:
    instr: Instruction
    label: int = -1


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Optional['Command']
    els: Optional['Command']
    label: int = -1


@dataclass(frozen=True)
class Seq:
    first: 'Command'
    second: 'Command'


@dataclass(frozen=True)
class Let:
    var: str
    expr: Expr
    body: Optional['Command'] = None
    label: int = -1


@dataclass(frozen=True)
class LetCall:
    var: str
    callee: str
    arg: Optional[Expr]
    body: Optional['Command'] = None
    label: int = -1


@dataclass(frozen=True)
class LetInput:
    var: str
    source: str = INPUT_SOURCE
    body: Optional['Command'] = None
    label: int = -1


@dataclass(frozen=True)
class LetFresh:
    var: str
    expr: Expr
    body: Optional['Command'] = None
    label: int = -1


@dataclass(frozen=True)
class LetConsistent:
    set_id: int
    var: str
    expr: Expr
    body: Optional['Command'] = None
    label: int = -1


@dataclass(frozen=True)
class Atomic:
    region_id: int
    omega: FrozenSet[str]
    body: Optional['Command']
    label: int = -1


Command = Union[InstrCmd, If, Seq, Let, LetCall, LetInput, LetFresh, LetConsistent, Atomic]
Binder = Union[Let, LetCall, LetInput, LetFresh, LetConsistent]
BINDERS = (Let, LetCall, LetInput, LetFresh, LetConsistent)


@dataclass(frozen=True)
class FuncDecl:
    name: str
    param: Optional[str]
    body: Optional[Command]
    ret: Expr
    ret_label: int = -1

    @property
    def ret_site(self) -> Site:
        return (self.name, self.ret_label)


@dataclass(frozen=True)
class LabeledProgram:
    """
    A whole program: functions in source order plus declared input names.

    Attributes:
        functions (Dict[str, FuncDecl]): Functions keyed by name, in source order
        inputs (FrozenSet[str]): Names declared with ``input``; each behaves
            like IN() but names its sensor
    """
    functions: Dict[str, FuncDecl] = field(default_factory=dict)
    inputs: FrozenSet[str] = frozenset()

    @property
    def main(self) -> FuncDecl:
        return self.functions['main']

    def function(self, name: str) -> FuncDecl:
        return self.functions[name]

    def with_function(self, func: FuncDecl) -> 'LabeledProgram':
        functions = dict(self.functions)
        functions[func.name] = func
        return replace(self, functions=functions)


# Traversal helpers

def children(cmd: Command) -> List[Optional[Command]]:
    """Direct sub-commands, in evaluation order."""
    if isinstance(cmd, Seq):
        return [cmd.first, cmd.second]
    if isinstance(cmd, If):
        return [cmd.then, cmd.els]
    if isinstance(cmd, (Let, LetCall, LetInput, LetFresh, LetConsistent, Atomic)):
        return [cmd.body]
    return []


def walk(cmd: Optional[Command]) -> Iterator[Command]:
    """Yield every labeled command under ``cmd`` in pre-order (Seq nodes are skipped)."""
    stack = [cmd]
    while stack:
        node = stack.pop()
        if node is None:
            continue
        if not isinstance(node, Seq):
            yield node
        stack.extend(reversed(children(node)))


def expr_vars(expr: Optional[Expr]) -> FrozenSet[str]:
    """Names mentioned by an expression, including referenced and dereferenced names."""
    if expr is None:
        return frozenset()
    if isinstance(expr, Var):
        return frozenset([expr.name])
    if isinstance(expr, Deref):
        return frozenset([expr.name])
    if isinstance(expr, Const):
        return frozenset([expr.value.name]) if isinstance(expr.value, Ref) else frozenset()
    if isinstance(expr, Index):
        return frozenset([expr.array]) | expr_vars(expr.index)
    if isinstance(expr, BinOp):
        return expr_vars(expr.lhs) | expr_vars(expr.rhs)
    if isinstance(expr, UnOp):
        return expr_vars(expr.operand)
    if isinstance(expr, ArrayLit):
        names: FrozenSet[str] = frozenset()
        for element in expr.elements:
            names |= expr_vars(element)
        return names
    raise TypeError(f"not an expression: {expr!r}")


def read_vars(expr: Optional[Expr]) -> FrozenSet[str]:
    """Names whose current value an expression reads (taking ``&x`` is not a read)."""
    if expr is None or isinstance(expr, Const):
        return frozenset()
    if isinstance(expr, (Var, Deref)):
        return frozenset([expr.name])
    if isinstance(expr, Index):
        return frozenset([expr.array]) | read_vars(expr.index)
    if isinstance(expr, BinOp):
        return read_vars(expr.lhs) | read_vars(expr.rhs)
    if isinstance(expr, UnOp):
        return read_vars(expr.operand)
    if isinstance(expr, ArrayLit):
        names: FrozenSet[str] = frozenset()
        for element in expr.elements:
            names |= read_vars(element)
        return names
    raise TypeError(f"not an expression: {expr!r}")


def command_exprs(cmd: Command) -> List[Expr]:
    """Expressions evaluated by the command itself, excluding its sub-commands."""
    if isinstance(cmd, InstrCmd):
        instr = cmd.instr
        if isinstance(instr, Assign):
            return [instr.expr]
        if isinstance(instr, ArrayAssign):
            return [instr.index, instr.expr]
        if isinstance(instr, DerefAssign):
            return [instr.expr]
        return []
    if isinstance(cmd, If):
        return [cmd.cond]
    if isinstance(cmd, (Let, LetFresh, LetConsistent)):
        return [cmd.expr]
    if isinstance(cmd, LetCall):
        return [cmd.arg] if cmd.arg is not None else []
    return []


def command_mentions(cmd: Command) -> FrozenSet[str]:
    """Every name a command reads, writes, references or binds, sub-commands excluded."""
    names: FrozenSet[str] = frozenset()
    for expr in command_exprs(cmd):
        names |= expr_vars(expr)
    if isinstance(cmd, InstrCmd):
        instr = cmd.instr
        if isinstance(instr, (Assign, DerefAssign)):
            names |= {instr.var}
        elif isinstance(instr, ArrayAssign):
            names |= {instr.array}
    elif isinstance(cmd, BINDERS):
        names |= {cmd.var}
    return names


def subtree_mentions(cmd: Optional[Command]) -> FrozenSet[str]:
    names: FrozenSet[str] = frozenset()
    for node in walk(cmd):
        names |= command_mentions(node)
    return names


def bound_names(cmd: Optional[Command]) -> Tuple[str, ...]:
    """Names bound by let-forms in a block, atomic bodies included (they do not open a scope)."""
    names: List[str] = []
    for stmt in flatten(cmd):
        if isinstance(stmt, BINDERS) and stmt.var != UNBOUND:
            if stmt.var not in names:
                names.append(stmt.var)
        elif isinstance(stmt, Atomic):
            for name in bound_names(stmt.body):
                if name not in names:
                    names.append(name)
    return tuple(names)


def callees(cmd: Optional[Command]) -> List[Tuple[int, str]]:
    """(label, callee) for every call under ``cmd``."""
    return [(node.label, node.callee) for node in walk(cmd) if isinstance(node, LetCall)]


# Statement lists

def flatten(cmd: Optional[Command]) -> List[Command]:
    """
    Flatten a block into its statements.

    Seq nodes disappear and each let-form becomes one statement whose body
    is the remainder of the block. Use ``rebuild`` to put a list back
    together after editing it.
    """
    stmts: List[Command] = []
    node = cmd
    pending: List[Command] = []
    while node is not None or pending:
        if node is None:
            node = pending.pop()
            continue
        if isinstance(node, Seq):
            pending.append(node.second)
            node = node.first
            continue
        stmts.append(node)
        if isinstance(node, BINDERS):
            if pending:
                raise ValueError("let-form inside the left branch of a sequence")
            node = node.body
        else:
            node = None
    return stmts


def rebuild(stmts: List[Command]) -> Optional[Command]:
    """Inverse of ``flatten``: fold a statement list back into a right-nested block."""
    acc: Optional[Command] = None
    for stmt in reversed(stmts):
        if isinstance(stmt, BINDERS):
            acc = replace(stmt, body=acc)
        elif acc is None:
            acc = stmt
        else:
            acc = Seq(stmt, acc)
    return acc


def labels_in(cmd: Optional[Command]) -> List[int]:
    return [node.label for node in walk(cmd)]


# Labeling

class _Labeler:
    def __init__(self, first_region_label: int) -> None:
        self.next_label = 0
        self.next_region_label = first_region_label

    def label(self, cmd: Optional[Command]) -> Optional[Command]:
        if cmd is None:
            return None
        if isinstance(cmd, Seq):
            first = self.label(cmd.first)
            return Seq(first, self.label(cmd.second))
        if isinstance(cmd, Atomic):
            label = self.next_region_label
            self.next_region_label += 1
        else:
            label = self.next_label
            self.next_label += 1
        if isinstance(cmd, If):
            then = self.label(cmd.then)
            return replace(cmd, then=then, els=self.label(cmd.els), label=label)
        if isinstance(cmd, InstrCmd):
            return replace(cmd, label=label)
        return replace(cmd, body=self.label(cmd.body), label=label)


def label_function(func: FuncDecl) -> FuncDecl:
    """Assign pre-order labels to a function, its return and its atomic regions."""
    plain = sum(1 for node in walk(func.body) if not isinstance(node, Atomic))
    labeler = _Labeler(first_region_label=plain + 1)
    body = labeler.label(func.body)
    return replace(func, body=body, ret_label=plain)


def label_program(program: LabeledProgram) -> LabeledProgram:
    functions = {name: label_function(func) for name, func in program.functions.items()}
    return replace(program, functions=functions)


def command_at(func: FuncDecl, label: int) -> Command:
    for node in walk(func.body):
        if node.label == label:
            return node
    raise KeyError(f"{func.name} has no command labeled {label}")


def site_index(func: FuncDecl) -> Dict[int, Command]:
    return {node.label: node for node in walk(func.body)}


# Call graph

def call_graph(program: LabeledProgram) -> nx.DiGraph:
    """Directed graph with an edge caller -> callee for every call between declared functions."""
    graph = nx.DiGraph()
    graph.add_nodes_from(program.functions)
    for name, func in program.functions.items():
        for _, callee in callees(func.body):
            if callee in program.functions:
                graph.add_edge(name, callee)
    return graph


def callers_first(program: LabeledProgram) -> List[str]:
    """Function names in topological order, callers before callees; ties keep source order."""
    graph = call_graph(program)
    order = {name: i for i, name in enumerate(program.functions)}
    return list(nx.lexicographical_topological_sort(graph, key=lambda name: order[name]))


def callees_first(program: LabeledProgram) -> List[str]:
    return list(reversed(callers_first(program)))


def all_calling_contexts(program: LabeledProgram) -> Dict[str, List[Tuple[Site, ...]]]:
    """
    Every call path from main to each function, as tuples of call sites.

    main itself has the single empty context. A function unreachable from
    main has none.
    """
    contexts: Dict[str, List[Tuple[Site, ...]]] = {'main': [()]} if 'main' in program.functions else {}
    for name in callers_first(program):
        for path in contexts.get(name, []):
            for label, callee in callees(program.functions[name].body):
                if callee in program.functions:
                    contexts.setdefault(callee, []).append(path + ((name, label),))
    return contexts


def calling_contexts(program: LabeledProgram, func: str) -> List[Tuple[Site, ...]]:
    return all_calling_contexts(program).get(func, [])
