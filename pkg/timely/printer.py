"""
Timely Pretty Printer

Renders a labeled program back to ``.oct`` text. Output re-parses to a
structurally identical program: annotations are printed in their direct
``let fresh`` / ``let consistent(n)`` forms and atomic regions as
``atomic(aID, {...})`` blocks.
"""

from typing import List, Optional

from .syntax import (
    BINARY_OPS, UNARY_PRECEDENCE, UNBOUND, ArrayAssign, ArrayLit, Assign, Atomic, BinOp,
    Command, Const, Deref, DerefAssign, Expr, FuncDecl, If, Index, InstrCmd, LabeledProgram,
    Let, LetCall, LetConsistent, LetFresh, LetInput, Ref, Skip, UnOp, Var, flatten,
)

INDENT = '    '


def format_value(value) -> str:
    # bool before int: bool is an int subclass
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, Ref):
        return str(value)
    return str(value)


def _precedence(expr: Expr) -> int:
    if isinstance(expr, BinOp):
        return BINARY_OPS[expr.op]
    if isinstance(expr, UnOp):
        return UNARY_PRECEDENCE
    if isinstance(expr, Const) and isinstance(expr.value, int) and not isinstance(expr.value, bool) \
            and expr.value < 0:
        return UNARY_PRECEDENCE
    return UNARY_PRECEDENCE + 1


def format_expr(expr: Expr) -> str:
    """Render an expression with the minimum parentheses needed to re-parse it identically."""
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Const):
        return format_value(expr.value)
    if isinstance(expr, Index):
        return f"{expr.array}[{format_expr(expr.index)}]"
    if isinstance(expr, Deref):
        return f"*{expr.name}"
    if isinstance(expr, ArrayLit):
        return '[' + ', '.join(format_expr(e) for e in expr.elements) + ']'
    if isinstance(expr, UnOp):
        operand = expr.operand
        text = format_expr(operand)
        # "-5" would re-parse as a negative literal
        if isinstance(operand, (BinOp,)) or (expr.op == '-' and isinstance(operand, Const)
                                             and not isinstance(operand.value, (bool, Ref))):
            text = f"({text})"
        return f"{expr.op}{text}"
    if isinstance(expr, BinOp):
        prec = BINARY_OPS[expr.op]
        lhs = format_expr(expr.lhs)
        if _precedence(expr.lhs) < prec:
            lhs = f"({lhs})"
        rhs = format_expr(expr.rhs)
        if _precedence(expr.rhs) <= prec:
            rhs = f"({rhs})"
        return f"{lhs} {expr.op} {rhs}"
    raise TypeError(f"not an expression: {expr!r}")


def _call_text(callee: str, arg: Optional[Expr]) -> str:
    return f"{callee}({'' if arg is None else format_expr(arg)})"


def format_block(cmd: Optional[Command], depth: int) -> List[str]:
    lines: List[str] = []
    pad = INDENT * depth
    for stmt in flatten(cmd):
        if isinstance(stmt, InstrCmd):
            instr = stmt.instr
            if isinstance(instr, Skip):
                lines.append(f"{pad}skip;")
            elif isinstance(instr, Assign):
                lines.append(f"{pad}{instr.var} := {format_expr(instr.expr)};")
            elif isinstance(instr, ArrayAssign):
                lines.append(f"{pad}{instr.array}[{format_expr(instr.index)}] := {format_expr(instr.expr)};")
            elif isinstance(instr, DerefAssign):
                lines.append(f"{pad}*{instr.var} := {format_expr(instr.expr)};")
        elif isinstance(stmt, Let):
            lines.append(f"{pad}let {stmt.var} = {format_expr(stmt.expr)};")
        elif isinstance(stmt, LetCall):
            call = _call_text(stmt.callee, stmt.arg)
            lines.append(f"{pad}{call};" if stmt.var == UNBOUND else f"{pad}let {stmt.var} = {call};")
        elif isinstance(stmt, LetInput):
            call = f"{stmt.source}()"
            lines.append(f"{pad}{call};" if stmt.var == UNBOUND else f"{pad}let {stmt.var} = {call};")
        elif isinstance(stmt, LetFresh):
            lines.append(f"{pad}let fresh {stmt.var} = {format_expr(stmt.expr)};")
        elif isinstance(stmt, LetConsistent):
            lines.append(f"{pad}let consistent({stmt.set_id}) {stmt.var} = {format_expr(stmt.expr)};")
        elif isinstance(stmt, If):
            lines.append(f"{pad}if {format_expr(stmt.cond)} {{")
            lines.extend(format_block(stmt.then, depth + 1))
            if stmt.els is None:
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}}} else {{")
                lines.extend(format_block(stmt.els, depth + 1))
                lines.append(f"{pad}}}")
        elif isinstance(stmt, Atomic):
            omega = ', '.join(sorted(stmt.omega))
            lines.append(f"{pad}atomic({stmt.region_id}, {{{omega}}}) {{")
            lines.extend(format_block(stmt.body, depth + 1))
            lines.append(f"{pad}}}")
    return lines


def format_function(func: FuncDecl) -> str:
    lines = [f"fn {func.name}({func.param or ''}) {{"]
    lines.extend(format_block(func.body, 1))
    lines.append(f"{INDENT}ret {format_expr(func.ret)}")
    lines.append("}")
    return '\n'.join(lines)


def pretty_print(program: LabeledProgram) -> str:
    """
    Render a program as source text.

    Args:
        program: Labeled program, possibly carrying atomic regions

    Returns:
        str: Source text ending in a newline
    """
    parts: List[str] = []
    if program.inputs:
        parts.append(f"input {', '.join(sorted(program.inputs))};")
    parts.extend(format_function(func) for func in program.functions.values())
    return '\n\n'.join(parts) + '\n'
