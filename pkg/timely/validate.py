"""
Timely Program Validation

Scope and mutability discipline for parsed programs: undeclared names,
writes to annotated (immutable) variables, mutable aliasing, shadowing
and a handful of shape rules the analyses rely on. Problems are
returned as Diagnostic records; nothing here raises for a user mistake.

Classes:
    Diagnostic: One finding at a program site

Functions:
    validate: Check a program and return its diagnostics
    reference_params: Which functions take a reference argument
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from .syntax import (
    UNBOUND, ArrayAssign, ArrayLit, Assign, Atomic, BinOp, Command, Const, Deref, DerefAssign,
    Expr, FuncDecl, If, Index, InstrCmd, LabeledProgram, Let, LetCall, LetConsistent, LetFresh,
    LetInput, Ref, Site, UnOp, Var, callers_first, flatten, read_vars, walk,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Diagnostic:
    """
    One finding reported against a program site.

    Attributes:
        site (Site): (function, label); label -1 for function-level findings
        rule (str): Short rule name, stable across releases
        message (str): Human-readable explanation
    """
    site: Site
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.site[0]}:{self.site[1]}: [{self.rule}] {self.message}"


def reference_params(program: LabeledProgram) -> Dict[str, bool]:
    """
    Decide for each function whether its parameter is a reference.

    A parameter is a reference when some call site passes ``&x``, ``&a[i]``
    or a variable that itself holds a reference.
    """
    is_ref: Dict[str, bool] = {name: False for name in program.functions}
    for name in callers_first(program):
        func = program.functions[name]
        refs = _reference_vars(func, is_ref[name])
        for node in walk(func.body):
            if isinstance(node, LetCall) and node.callee in is_ref and _is_reference_expr(node.arg, refs):
                is_ref[node.callee] = True
    return is_ref


def _reference_vars(func: FuncDecl, param_is_ref: bool) -> Set[str]:
    refs = {func.param} if param_is_ref and func.param else set()
    for node in walk(func.body):
        if isinstance(node, Let) and isinstance(node.expr, Const) and isinstance(node.expr.value, Ref):
            refs.add(node.var)
    return refs


def _is_reference_expr(expr: Optional[Expr], refs: Set[str]) -> bool:
    if isinstance(expr, Const):
        return isinstance(expr.value, Ref)
    return isinstance(expr, Var) and expr.name in refs


@dataclass
class _Binding:
    kind: str                    # 'mut', 'array', 'ref', 'param', 'fresh', 'consistent'
    target: Optional[str] = None  # pointee for 'ref'


@dataclass
class _Scope:
    names: Dict[str, _Binding] = field(default_factory=dict)

    def copy(self) -> '_Scope':
        return _Scope(dict(self.names))


class _FunctionValidator:
    def __init__(self, program: LabeledProgram, func: FuncDecl, ref_params: Dict[str, bool]) -> None:
        self.program = program
        self.func = func
        self.ref_params = ref_params
        self.diagnostics: List[Diagnostic] = []
        self.fresh_names: Dict[str, int] = {}

    def report(self, label: int, rule: str, message: str) -> None:
        self.diagnostics.append(Diagnostic((self.func.name, label), rule, message))

    def run(self) -> List[Diagnostic]:
        scope = _Scope()
        if self.func.param:
            kind = 'ref' if self.ref_params.get(self.func.name) else 'param'
            scope.names[self.func.param] = _Binding(kind)
        scope = self.block(self.func.body, scope)
        label = self.func.ret_label
        self.expr(self.func.ret, scope, label)
        if self._yields_reference(self.func.ret, scope):
            self.report(label, 'return-reference', "functions cannot return references")
        if self.func.name == 'main':
            for name in _read_names(self.func.ret):
                binding = scope.names.get(name)
                if binding and binding.kind == 'fresh':
                    self.report(label, 'fresh-in-main-return',
                                f"main's return value reads fresh variable {name!r}")
        return self.diagnostics

    # Expressions

    def expr(self, expr: Expr, scope: _Scope, label: int, allow_array_literal: bool = False) -> None:
        if isinstance(expr, Var):
            binding = self.lookup(expr.name, scope, label)
            if binding and binding.kind == 'array':
                self.report(label, 'array-as-scalar', f"array {expr.name!r} used as a scalar")
        elif isinstance(expr, Const):
            if isinstance(expr.value, Ref):
                self.reference(expr.value, scope, label)
        elif isinstance(expr, Index):
            binding = self.lookup(expr.array, scope, label)
            if binding and binding.kind != 'array':
                self.report(label, 'not-an-array', f"{expr.array!r} is not an array")
            self.expr(expr.index, scope, label)
        elif isinstance(expr, Deref):
            binding = self.lookup(expr.name, scope, label)
            if binding and binding.kind != 'ref':
                self.report(label, 'not-a-reference', f"{expr.name!r} is not a reference")
        elif isinstance(expr, BinOp):
            self.expr(expr.lhs, scope, label)
            self.expr(expr.rhs, scope, label)
        elif isinstance(expr, UnOp):
            self.expr(expr.operand, scope, label)
        elif isinstance(expr, ArrayLit):
            if not allow_array_literal:
                self.report(label, 'array-literal', "array literals may only initialize a let")
            for element in expr.elements:
                self.expr(element, scope, label)

    def lookup(self, name: str, scope: _Scope, label: int) -> Optional[_Binding]:
        binding = scope.names.get(name)
        if binding is None:
            self.report(label, 'undeclared', f"use of undeclared variable {name!r}")
        return binding

    def reference(self, ref: Ref, scope: _Scope, label: int) -> None:
        binding = self.lookup(ref.name, scope, label)
        if binding is None:
            return
        if binding.kind in ('fresh', 'consistent'):
            self.report(label, 'immutable-reference',
                        f"cannot take a mutable reference to {binding.kind} variable {ref.name!r}")
        if ref.index is None and binding.kind == 'array':
            self.report(label, 'array-reference', f"take a reference to an element of {ref.name!r}")
        if ref.index is not None and binding.kind != 'array':
            self.report(label, 'not-an-array', f"{ref.name!r} is not an array")
        if binding.kind == 'ref':
            self.report(label, 'reference-to-reference', f"{ref.name!r} already holds a reference")
        for name, other in scope.names.items():
            if other.kind == 'ref' and other.target == ref.name:
                self.report(label, 'mutable-alias',
                            f"second mutable reference to {ref.name!r} while {name!r} is live")

    # Commands

    def bind(self, name: str, binding: _Binding, scope: _Scope, label: int,
             rebinding: bool = False) -> None:
        if name == UNBOUND:
            return
        if name in scope.names and not rebinding:
            self.report(label, 'shadowing', f"{name!r} is already bound")
        if binding.kind == 'fresh':
            self.fresh_names[name] = self.fresh_names.get(name, 0) + 1
            if self.fresh_names[name] > 1:
                self.report(label, 'fresh-not-unique', f"fresh variable {name!r} is declared twice")
        scope.names[name] = binding

    def assign_target(self, name: str, scope: _Scope, label: int) -> Optional[_Binding]:
        binding = self.lookup(name, scope, label)
        if binding and binding.kind in ('fresh', 'consistent'):
            self.report(label, 'immutable-write', f"cannot assign to {binding.kind} variable {name!r}")
        return binding

    def block(self, cmd: Optional[Command], scope: _Scope) -> _Scope:
        for stmt in flatten(cmd):
            scope = self.statement(stmt, scope)
        return scope

    def statement(self, stmt: Command, scope: _Scope) -> _Scope:
        label = stmt.label
        if isinstance(stmt, InstrCmd):
            instr = stmt.instr
            if isinstance(instr, Assign):
                self.expr(instr.expr, scope, label)
                binding = self.assign_target(instr.var, scope, label)
                if binding and binding.kind == 'array':
                    self.report(label, 'array-as-scalar', f"array {instr.var!r} used as a scalar")
                if binding and binding.kind == 'ref':
                    self.report(label, 'reference-rebind', f"reference {instr.var!r} cannot be reassigned")
            elif isinstance(instr, ArrayAssign):
                self.expr(instr.index, scope, label)
                self.expr(instr.expr, scope, label)
                binding = self.assign_target(instr.array, scope, label)
                if binding and binding.kind != 'array':
                    self.report(label, 'not-an-array', f"{instr.array!r} is not an array")
            elif isinstance(instr, DerefAssign):
                self.expr(instr.expr, scope, label)
                binding = self.lookup(instr.var, scope, label)
                if binding and binding.kind != 'ref':
                    self.report(label, 'not-a-reference', f"{instr.var!r} is not a reference")
            return scope
        if isinstance(stmt, If):
            self.expr(stmt.cond, scope, label)
            self.block(stmt.then, scope.copy())
            self.block(stmt.els, scope.copy())
            return scope
        if isinstance(stmt, Atomic):
            return self.block(stmt.body, scope)
        if isinstance(stmt, Let):
            self.expr(stmt.expr, scope, label, allow_array_literal=True)
            if isinstance(stmt.expr, ArrayLit):
                binding = _Binding('array')
            elif isinstance(stmt.expr, Const) and isinstance(stmt.expr.value, Ref):
                binding = _Binding('ref', stmt.expr.value.name)
            else:
                if self._yields_reference(stmt.expr, scope):
                    self.report(label, 'mutable-alias', "references cannot be copied")
                binding = _Binding('mut')
            self.bind(stmt.var, binding, scope, label)
        elif isinstance(stmt, LetCall):
            if stmt.arg is not None:
                self.expr(stmt.arg, scope, label)
            self.bind(stmt.var, _Binding('mut'), scope, label)
        elif isinstance(stmt, LetInput):
            self.bind(stmt.var, _Binding('mut'), scope, label)
        elif isinstance(stmt, (LetFresh, LetConsistent)):
            kind = 'fresh' if isinstance(stmt, LetFresh) else 'consistent'
            self.expr(stmt.expr, scope, label)
            rebinding = stmt.expr == Var(stmt.var)
            previous = scope.names.get(stmt.var)
            if rebinding and previous is not None and previous.kind in ('ref', 'array'):
                self.report(label, 'annotation-type', f"{previous.kind} {stmt.var!r} cannot be annotated")
            if self._yields_reference(stmt.expr, scope):
                self.report(label, 'annotation-type', f"{kind} variable {stmt.var!r} cannot hold a reference")
            self.bind(stmt.var, _Binding(kind), scope, label, rebinding=rebinding)
        return scope

    def _yields_reference(self, expr: Expr, scope: _Scope) -> bool:
        if isinstance(expr, Const):
            return isinstance(expr.value, Ref)
        if isinstance(expr, Var):
            binding = scope.names.get(expr.name)
            return binding is not None and binding.kind == 'ref'
        return False


def _read_names(expr: Expr) -> Set[str]:
    return set(read_vars(expr))


def _check_call_kinds(program: LabeledProgram, ref_params: Dict[str, bool]) -> List[Diagnostic]:
    diagnostics: List[Diagnostic] = []
    for name, func in program.functions.items():
        refs = _reference_vars(func, ref_params[name])
        for node in walk(func.body):
            if isinstance(node, LetCall) and node.arg is not None and node.callee in ref_params:
                passes_ref = _is_reference_expr(node.arg, refs)
                if passes_ref != ref_params[node.callee]:
                    diagnostics.append(Diagnostic(
                        (name, node.label), 'argument-kind',
                        f"{node.callee!r} is called with both references and values"))
    return diagnostics


def validate(program: LabeledProgram) -> List[Diagnostic]:
    """
    Check scope and mutability rules.

    Args:
        program: Parsed program

    Returns:
        List[Diagnostic]: Findings in function order; empty when valid
    """
    ref_params = reference_params(program)
    diagnostics: List[Diagnostic] = []
    for func in program.functions.values():
        diagnostics.extend(_FunctionValidator(program, func, ref_params).run())
    diagnostics.extend(_check_call_kinds(program, ref_params))
    if diagnostics:
        logger.info("Validation found %d problem(s)", len(diagnostics))
    return diagnostics
