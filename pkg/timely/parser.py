"""
Timely Source Parser

Recursive-descent parser for ``.oct`` source text. Produces a labeled
program: annotation markers are desugared, calls to declared input
functions become input bindings, and every function is labeled.

Grammar (informal):
    program   := { 'input' IDENT { ',' IDENT } ';' | function }
    function  := 'fn' IDENT '(' [ IDENT ] ')' '{' { stmt } 'ret' expr [';'] '}'
    stmt      := 'skip' ';' | IDENT ':=' expr ';' | IDENT '[' expr ']' ':=' expr ';'
               | '*' IDENT ':=' expr ';' | 'let' [ 'fresh' | 'consistent' '(' INT ')' ]
                 IDENT '=' rhs ';' | IDENT '(' [ expr ] ')' ';'
               | 'if' expr block [ 'else' ( block | if-stmt ) ]
               | 'atomic' '(' INT ',' '{' [ loc { ',' loc } ] '}' ')' block
               | 'Fresh' '(' IDENT ')' ';' | 'Consistent' '(' IDENT ',' INT ')' ';'
               | 'FreshConsistent' '(' IDENT ',' INT ')' ';'
    rhs       := IDENT '(' [ expr ] ')' | '[' [ expr { ',' expr } ] ']' | expr

Functions:
    parse: Parse source text into a LabeledProgram
    parse_file: Parse a file from disk
    parse_expr: Parse a single expression (tests and tooling)
"""

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Set, Union

import networkx as nx

from .errors import ParseError, ProgramError
from .syntax import (
    BINARY_OPS, INPUT_SOURCE, UNBOUND, ArrayAssign, ArrayLit, Assign, Atomic, BinOp,
    Command, Const, Deref, DerefAssign, Expr, FuncDecl, If, Index, InstrCmd, LabeledProgram,
    Let, LetCall, LetConsistent, LetFresh, LetInput, Ref, Seq, Skip, UnOp, Var, call_graph,
    label_program, rebuild, subtree_mentions, walk,
)

logger = logging.getLogger(__name__)

KEYWORDS = {
    'fn', 'let', 'fresh', 'consistent', 'if', 'else', 'atomic', 'ret', 'skip',
    'true', 'false', 'input',
}
MARKERS = {'Fresh', 'Consistent', 'FreshConsistent'}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|==|!=|<=|>=|&&|\|\||[-+*/%<>!&=(){}\[\],;])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str       # 'int', 'ident', 'op', 'eof'
    text: str
    line: int
    column: int


def tokenize(source: str) -> List[Token]:
    """Split source into tokens, dropping whitespace and ``//`` comments."""
    tokens: List[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if not match:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        if kind == 'nl':
            line += 1
            line_start = match.end()
        elif kind not in ('ws', 'comment'):
            tokens.append(Token(kind, match.group(), line, pos - line_start + 1))
        pos = match.end()
    tokens.append(Token('eof', '', line, pos - line_start + 1))
    return tokens


@dataclass(frozen=True)
class _Marker:
    """An annotation marker statement awaiting desugaring."""
    kind: str
    var: str
    set_id: Optional[int]
    token: Token


_Stmt = Union[Command, _Marker]


class Parser:
    """
    Recursive-descent parser over a token list.

    The parser only builds syntax; desugaring of markers happens per block
    in ``_desugar_block`` and whole-program checks in ``_finish``.
    """

    def __init__(self, source: str) -> None:
        self.tokens = tokenize(source)
        self.pos = 0

    # Token helpers

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        index = min(self.pos + offset, len(self.tokens) - 1)
        return self.tokens[index]

    def at(self, text: str) -> bool:
        tok = self.current
        return tok.kind in ('op', 'ident') and tok.text == text

    def advance(self) -> Token:
        tok = self.current
        if tok.kind != 'eof':
            self.pos += 1
        return tok

    def error(self, message: str, expected: Optional[str] = None) -> ParseError:
        tok = self.current
        found = 'end of input' if tok.kind == 'eof' else repr(tok.text)
        return ParseError(f"{message}, found {found}", tok.line, tok.column, expected)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error("unexpected token", expected=repr(text))
        return self.advance()

    def expect_ident(self) -> str:
        tok = self.current
        if tok.kind != 'ident' or tok.text in KEYWORDS:
            raise self.error("unexpected token", expected="identifier")
        self.advance()
        return tok.text

    def expect_int(self) -> int:
        tok = self.current
        if tok.kind != 'int':
            raise self.error("unexpected token", expected="integer")
        self.advance()
        return int(tok.text)

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.advance()
            return True
        return False

    # Program structure

    def parse_program(self) -> LabeledProgram:
        functions: Dict[str, FuncDecl] = {}
        inputs: List[str] = []
        while self.current.kind != 'eof':
            if self.at('input'):
                self.advance()
                inputs.append(self.expect_ident())
                while self.accept(','):
                    inputs.append(self.expect_ident())
                self.expect(';')
            elif self.at('fn'):
                tok = self.current
                func = self.parse_function()
                if func.name in functions:
                    raise ProgramError(f"duplicate function {func.name!r}", tok.line, tok.column)
                functions[func.name] = func
            else:
                raise self.error("unexpected token", expected="'fn' or 'input'")
        return _finish(LabeledProgram(functions=functions, inputs=frozenset(inputs)))

    def parse_function(self) -> FuncDecl:
        self.expect('fn')
        name = self.expect_ident()
        self.expect('(')
        param = None if self.at(')') else self.expect_ident()
        self.expect(')')
        self.expect('{')
        stmts: List[_Stmt] = []
        while not self.at('ret'):
            if self.at('}') or self.current.kind == 'eof':
                raise self.error(f"function {name!r} has no return", expected="'ret'")
            stmts.extend(self.parse_statement())
        self.expect('ret')
        ret = self.parse_expr()
        self.accept(';')
        self.expect('}')
        return FuncDecl(name=name, param=param, body=_desugar_block(stmts), ret=ret)

    def parse_block(self) -> Optional[Command]:
        self.expect('{')
        stmts: List[_Stmt] = []
        while not self.at('}'):
            if self.current.kind == 'eof':
                raise self.error("unterminated block", expected="'}'")
            stmts.extend(self.parse_statement())
        self.expect('}')
        return _desugar_block(stmts)

    # Statements

    def parse_statement(self) -> List[_Stmt]:
        tok = self.current
        if self.accept('skip'):
            self.expect(';')
            return [InstrCmd(Skip())]
        if self.at('let'):
            return [self.parse_let()]
        if self.at('if'):
            return [self.parse_if()]
        if self.at('atomic'):
            return [self.parse_atomic()]
        if self.accept('*'):
            var = self.expect_ident()
            self.expect(':=')
            expr = self.parse_expr()
            self.expect(';')
            return [InstrCmd(DerefAssign(var, expr))]
        if tok.kind == 'ident' and tok.text in MARKERS:
            return [self.parse_marker()]
        if tok.kind == 'ident' and tok.text not in KEYWORDS:
            name = self.advance().text
            if self.accept(':='):
                expr = self.parse_expr()
                self.expect(';')
                return [InstrCmd(Assign(name, expr))]
            if self.accept('['):
                index = self.parse_expr()
                self.expect(']')
                self.expect(':=')
                expr = self.parse_expr()
                self.expect(';')
                return [InstrCmd(ArrayAssign(name, index, expr))]
            if self.at('('):
                call = self._call_rhs(UNBOUND, name)
                self.expect(';')
                return [call]
            raise self.error("unexpected token", expected="':=', '[' or '('")
        raise self.error("unexpected token", expected="statement")

    def parse_let(self) -> Command:
        self.expect('let')
        if self.accept('fresh'):
            var = self.expect_ident()
            self.expect('=')
            expr = self.parse_expr()
            self.expect(';')
            return LetFresh(var, expr)
        if self.accept('consistent'):
            self.expect('(')
            set_id = self.expect_int()
            self.expect(')')
            var = self.expect_ident()
            self.expect('=')
            expr = self.parse_expr()
            self.expect(';')
            return LetConsistent(set_id, var, expr)
        var = self.expect_ident()
        self.expect('=')
        if self.current.kind == 'ident' and self.current.text not in KEYWORDS and self.peek().text == '(':
            callee = self.advance().text
            cmd = self._call_rhs(var, callee)
        elif self.at('['):
            cmd = Let(var, self.parse_array_literal())
        else:
            cmd = Let(var, self.parse_expr())
        self.expect(';')
        return cmd

    def _call_rhs(self, var: str, callee: str) -> Command:
        self.expect('(')
        arg = None if self.at(')') else self.parse_expr()
        self.expect(')')
        if callee == INPUT_SOURCE:
            if arg is not None:
                raise self.error("IN() takes no argument")
            return LetInput(var, INPUT_SOURCE)
        return LetCall(var, callee, arg)

    def parse_array_literal(self) -> ArrayLit:
        self.expect('[')
        elements: List[Expr] = []
        if not self.at(']'):
            elements.append(self.parse_expr())
            while self.accept(','):
                elements.append(self.parse_expr())
        self.expect(']')
        return ArrayLit(tuple(elements))

    def parse_if(self) -> If:
        self.expect('if')
        cond = self.parse_expr()
        then = self.parse_block()
        els = None
        if self.accept('else'):
            els = self.parse_if() if self.at('if') else self.parse_block()
        return If(cond, then, els)

    def parse_atomic(self) -> Atomic:
        self.expect('atomic')
        self.expect('(')
        region_id = self.expect_int()
        self.expect(',')
        self.expect('{')
        omega: Set[str] = set()
        while not self.at('}'):
            star = '*' if self.accept('*') else ''
            omega.add(star + self.expect_ident())
            if not self.accept(','):
                break
        self.expect('}')
        self.expect(')')
        return Atomic(region_id, frozenset(omega), self.parse_block())

    def parse_marker(self) -> _Marker:
        tok = self.advance()
        self.expect('(')
        var = self.expect_ident()
        set_id = None
        if tok.text != 'Fresh':
            self.expect(',')
            set_id = self.expect_int()
        self.expect(')')
        self.expect(';')
        return _Marker(tok.text, var, set_id, tok)

    # Expressions, lowest precedence first

    def parse_expr(self, min_prec: int = 1) -> Expr:
        lhs = self.parse_unary()
        while True:
            tok = self.current
            prec = BINARY_OPS.get(tok.text) if tok.kind == 'op' else None
            if prec is None or prec < min_prec:
                return lhs
            self.advance()
            rhs = self.parse_expr(prec + 1)
            lhs = BinOp(tok.text, lhs, rhs)

    def parse_unary(self) -> Expr:
        if self.accept('-'):
            if self.current.kind == 'int':
                return Const(-self.expect_int())
            return UnOp('-', self.parse_unary())
        if self.accept('!'):
            return UnOp('!', self.parse_unary())
        if self.accept('*'):
            return Deref(self.expect_ident())
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.current
        if tok.kind == 'int':
            return Const(self.expect_int())
        if self.accept('true'):
            return Const(True)
        if self.accept('false'):
            return Const(False)
        if self.accept('('):
            expr = self.parse_expr()
            self.expect(')')
            return expr
        if self.accept('&'):
            name = self.expect_ident()
            if self.accept('['):
                index = self.expect_int()
                self.expect(']')
                return Const(Ref(name, index))
            return Const(Ref(name))
        if tok.kind == 'ident' and tok.text not in KEYWORDS:
            self.advance()
            if self.accept('['):
                index = self.parse_expr()
                self.expect(']')
                return Index(tok.text, index)
            if self.at('('):
                raise self.error("calls are only allowed as statements or let initializers")
            return Var(tok.text)
        raise self.error("unexpected token", expected="expression")


# Desugaring

def _binding_var(stmt: _Stmt) -> Optional[str]:
    if isinstance(stmt, (Let, LetCall, LetInput, LetFresh, LetConsistent)):
        return stmt.var
    return None


def _desugar_block(stmts: List[_Stmt]) -> Optional[Command]:
    """
    Resolve annotation markers against their bindings and fold the block.

    A marker for a plain ``let`` merges into the binding. A marker for any
    other binding becomes ``let fresh x = x`` (or the consistent form) at
    the marker position. Nothing between the binding and the marker may
    mention the variable, other markers for it aside.
    """
    out: List[_Stmt] = []
    for stmt in stmts:
        if not isinstance(stmt, _Marker):
            out.append(stmt)
            continue
        marker = stmt
        tok = marker.token
        binding_index = None
        for i in range(len(out) - 1, -1, -1):
            if _binding_var(out[i]) == marker.var:
                binding_index = i
                break
            if marker.var in subtree_mentions(out[i]):
                raise ProgramError(
                    f"{marker.kind}({marker.var}) must follow the binding of {marker.var!r} "
                    f"with no intervening use", tok.line, tok.column)
        if binding_index is None:
            raise ProgramError(f"{marker.kind}({marker.var}) does not annotate a binding in this block",
                               tok.line, tok.column)
        binding = out[binding_index]
        annotated = _annotate(binding, marker)
        if isinstance(binding, Let) and not isinstance(binding.expr, ArrayLit):
            out[binding_index:binding_index + 1] = annotated
        else:
            out.extend(_annotate(Let(marker.var, Var(marker.var)), marker))
    for stmt in out:
        if isinstance(stmt, _Marker):
            raise AssertionError("unresolved marker")
    return _fold(out)


def _annotate(binding: Let, marker: _Marker) -> List[Command]:
    if not isinstance(binding, Let):
        return [binding]
    var, expr = binding.var, binding.expr
    if marker.kind == 'Fresh':
        return [LetFresh(var, expr)]
    if marker.kind == 'Consistent':
        return [LetConsistent(marker.set_id, var, expr)]
    return [LetFresh(var, expr), LetConsistent(marker.set_id, var, Var(var))]


def _fold(stmts: List[Command]) -> Optional[Command]:
    return rebuild(stmts)


# Whole-program checks

def _finish(program: LabeledProgram) -> LabeledProgram:
    functions: Dict[str, FuncDecl] = {}
    for name, func in program.functions.items():
        if name in program.inputs:
            raise ProgramError(f"{name!r} is declared both as an input and as a function")
        functions[name] = replace(func, body=_resolve_inputs(func.body, program.inputs))
    program = replace(program, functions=functions)

    if 'main' not in program.functions:
        raise ProgramError("program has no main function")
    if program.main.param is not None:
        raise ProgramError("main takes no parameter")

    for name, func in program.functions.items():
        for node in walk(func.body):
            if isinstance(node, LetCall):
                if node.callee not in program.functions:
                    raise ProgramError(f"call to unknown function {node.callee!r} in {name!r}")
                callee = program.functions[node.callee]
                if (callee.param is None) != (node.arg is None):
                    raise ProgramError(
                        f"{name!r} calls {node.callee!r} with the wrong number of arguments")

    graph = call_graph(program)
    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        path = ' -> '.join([edge[0] for edge in cycle] + [cycle[0][0]])
        raise ProgramError(f"recursion is not supported: {path}")

    labeled = label_program(program)
    logger.debug("Parsed %d functions, %d declared inputs", len(labeled.functions), len(labeled.inputs))
    return labeled


def _resolve_inputs(cmd: Optional[Command], inputs) -> Optional[Command]:
    if cmd is None:
        return None
    if isinstance(cmd, LetCall) and cmd.callee in inputs:
        if cmd.arg is not None:
            raise ProgramError(f"input {cmd.callee!r} takes no argument")
        return LetInput(cmd.var, cmd.callee, _resolve_inputs(cmd.body, inputs), cmd.label)
    if isinstance(cmd, Seq):
        return Seq(_resolve_inputs(cmd.first, inputs), _resolve_inputs(cmd.second, inputs))
    if isinstance(cmd, If):
        return replace(cmd, then=_resolve_inputs(cmd.then, inputs), els=_resolve_inputs(cmd.els, inputs))
    if isinstance(cmd, InstrCmd):
        return cmd
    return replace(cmd, body=_resolve_inputs(cmd.body, inputs))


def parse(source: str) -> LabeledProgram:
    """
    Parse source text into a labeled program.

    Args:
        source: Program text

    Returns:
        LabeledProgram: Desugared, labeled program

    Raises:
        ParseError: On malformed text
        ProgramError: On recursion, unknown calls, misplaced annotations and similar
    """
    return Parser(source).parse_program()


def parse_file(path: Union[str, Path]) -> LabeledProgram:
    text = Path(path).read_text(encoding='utf-8')
    logger.info("Parsing %s", path)
    return parse(text)


def parse_expr(source: str) -> Expr:
    parser = Parser(source)
    expr = parser.parse_expr()
    if parser.current.kind != 'eof':
        raise parser.error("trailing input after expression")
    return expr
