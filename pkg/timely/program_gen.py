"""
Timely Program Generator

Seeded random annotated programs for property tests and stress runs.
Programs always parse and validate: names are never reused, fresh and
consistent variables are never assigned, reference helpers only ever
receive ``&x`` of a plain variable (a helper no call passes ``&x`` to never
writes through its parameter), and main never returns a fresh value.
Helpers only call helpers defined before them, so there is no recursion.

Classes:
    ProgramGenerator: Builds one program's source from a seed

Functions:
    generate_source: Source text for a seed
    generate_program: Parsed and validated program for a seed
"""

import logging
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .errors import ProgramError
from .parser import parse
from .syntax import LabeledProgram
from .validate import validate

logger = logging.getLogger(__name__)

SENSORS = ('temp', 'hum')
ARITH_OPS = ('+', '-', '*')
COMPARE_OPS = ('<', '==', '>')


@dataclass
class _Scope:
    mutable: List[str] = field(default_factory=list)
    readable: List[str] = field(default_factory=list)
    plain: List[str] = field(default_factory=list)   # readable and never fresh
    arrays: Dict[str, int] = field(default_factory=dict)

    def copy(self) -> '_Scope':
        return _Scope(list(self.mutable), list(self.readable), list(self.plain), dict(self.arrays))


@dataclass(frozen=True)
class _Helper:
    name: str
    by_ref: bool


class ProgramGenerator:
    """
    Random program source from a seed.

    Args:
        seed: Seed for ``random.Random``
        max_instructions: Upper bound on labeled commands across all functions, returns included
        max_helpers: Upper bound on functions besides main
        max_depth: Deepest ``if`` nesting
    """

    def __init__(self, seed: int, max_instructions: int = 60, max_helpers: int = 2,
                 max_depth: int = 2) -> None:
        self.rng = random.Random(seed)
        self.max_instructions = max_instructions
        self.max_helpers = max_helpers
        self.max_depth = max_depth
        self.remaining = max_instructions
        self.counter = 0
        self.helpers: List[_Helper] = []
        self.ref_calls: Set[str] = set()

    def fresh_name(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    # Expressions

    def expr(self, scope: _Scope, depth: int = 0, plain_only: bool = False) -> str:
        names = scope.plain if plain_only else scope.readable
        roll = self.rng.random()
        if depth < 2 and roll < 0.35:
            op = self.rng.choice(ARITH_OPS)
            return f"({self.expr(scope, depth + 1, plain_only)} {op} {self.expr(scope, depth + 1, plain_only)})"
        if scope.arrays and roll < 0.45:
            array = self.rng.choice(sorted(scope.arrays))
            return f"{array}[{self.rng.randrange(scope.arrays[array])}]"
        if names and roll < 0.85:
            return self.rng.choice(names)
        return str(self.rng.randint(0, 9))

    def condition(self, scope: _Scope) -> str:
        return f"{self.expr(scope, 1)} {self.rng.choice(COMPARE_OPS)} {self.expr(scope, 1)}"

    # Statements

    def input_call(self) -> str:
        return self.rng.choice(('IN()',) + tuple(f"{s}()" for s in SENSORS))

    def block(self, scope: _Scope, depth: int, target: int, caller: Optional[int]) -> List[str]:
        lines: List[str] = []
        for _ in range(target):
            if self.remaining <= 0:
                break
            lines.extend(self.statement(scope, depth, caller))
        return lines

    def statement(self, scope: _Scope, depth: int, caller: Optional[int]) -> List[str]:
        """One statement (with its marker, if any); ``caller`` is the helper index, None for main."""
        self.remaining -= 1
        callable_helpers = self.helpers if caller is None else self.helpers[:caller]
        choices = ['input', 'let', 'assign', 'consistent']
        if self.remaining > 0:
            # a marker adds a label, FreshConsistent of an input adds two
            choices.extend(['fresh', 'fresh_marker'])
        if self.remaining > 1:
            choices.append('fresh_consistent')
        if depth < self.max_depth and self.remaining > 2:
            choices.append('if')
        if callable_helpers:
            choices.extend(['call', 'call'])
        if scope.arrays:
            choices.append('array_write')
        elif self.rng.random() < 0.2:
            choices.append('array')
        kind = self.rng.choice(choices)

        if kind == 'assign' and scope.mutable:
            target = self.rng.choice(scope.mutable)
            return [f"{target} := {self.expr(scope)};"]
        if kind == 'array_write':
            array = self.rng.choice(sorted(scope.arrays))
            return [f"{array}[{self.rng.randrange(scope.arrays[array])}] := {self.expr(scope)};"]
        if kind == 'array':
            name = self.fresh_name('a')
            size = self.rng.randint(1, 3)
            elements = ', '.join(self.expr(scope, 1) for _ in range(size))
            scope.arrays[name] = size
            return [f"let {name} = [{elements}];"]
        if kind == 'if':
            cond = self.condition(scope)
            then = self.block(scope.copy(), depth + 1, self.rng.randint(1, 3), caller)
            lines = [f"if {cond} {{"] + ['    ' + line for line in then]
            if self.rng.random() < 0.6 and self.remaining > 0:
                els = self.block(scope.copy(), depth + 1, self.rng.randint(1, 3), caller)
                lines += ["} else {"] + ['    ' + line for line in els]
            lines.append("}")
            return lines
        if kind == 'call':
            helper = self.rng.choice(callable_helpers)
            if helper.by_ref:
                if not scope.mutable:
                    return self._bind_input(scope)
                arg = '&' + self.rng.choice(scope.mutable)
                self.ref_calls.add(helper.name)
            else:
                arg = self.expr(scope)
            if self.rng.random() < 0.25:
                return [f"{helper.name}({arg});"]
            name = self.fresh_name('v')
            self._bind_plain(scope, name)
            return [f"let {name} = {helper.name}({arg});"]
        if kind == 'fresh':
            lines = []
            if not scope.readable:
                self.remaining -= 1
                lines = self._bind_input(scope)
            name = self.fresh_name('f')
            line = f"let fresh {name} = {self.expr(scope)};"
            scope.readable.append(name)
            return lines + [line]
        if kind == 'fresh_marker':
            self.remaining -= 1
            name = self.fresh_name('f')
            scope.readable.append(name)
            return [f"let {name} = {self.input_call()};", f"Fresh({name});"]
        if kind == 'consistent':
            name = self.fresh_name('c')
            line = f"let consistent({self.rng.randint(1, 2)}) {name} = {self.expr(scope)};"
            self._bind_plain(scope, name, mutable=False)
            return [line]
        if kind == 'fresh_consistent':
            self.remaining -= 2
            name = self.fresh_name('f')
            scope.readable.append(name)
            return [f"let {name} = {self.input_call()};",
                    f"FreshConsistent({name}, {self.rng.randint(1, 2)});"]
        if kind == 'let':
            name = self.fresh_name('v')
            line = f"let {name} = {self.expr(scope)};"
            self._bind_plain(scope, name)
            return [line]
        return self._bind_input(scope)

    def _bind_input(self, scope: _Scope) -> List[str]:
        name = self.fresh_name('v')
        self._bind_plain(scope, name)
        return [f"let {name} = {self.input_call()};"]

    @staticmethod
    def _bind_plain(scope: _Scope, name: str, mutable: bool = True) -> None:
        scope.readable.append(name)
        scope.plain.append(name)
        if mutable:
            scope.mutable.append(name)

    # Functions

    def helper(self, index: int, helper: _Helper) -> Tuple[List[str], Optional[str]]:
        """Helper source, and its write through the parameter kept apart until callers are known."""
        scope = _Scope()
        param = self.fresh_name('p')
        if helper.by_ref:
            self.remaining -= 1
        else:
            self._bind_plain(scope, param, mutable=False)
        body = self.block(scope, 1, self.rng.randint(1, 4), index)
        deref_write = None
        if helper.by_ref:
            deref_write = f"    *{param} := *{param} + {self.expr(scope, 1)};"
        lines = [f"fn {helper.name}({param}) {{"]
        lines += ['    ' + line for line in body]
        lines.append(f"    ret {self.expr(scope, 1)}")
        lines.append("}")
        return lines, deref_write

    def generate(self) -> str:
        count = self.rng.randint(0, self.max_helpers)
        self.helpers = [_Helper(f"h{i}", self.rng.random() < 0.4) for i in range(count)]
        self.remaining -= count + 1   # one ret per function
        helpers = [self.helper(index, helper) for index, helper in enumerate(self.helpers)]
        scope = _Scope()
        body = self.block(scope, 1, max(self.remaining, 1), None)
        ret = self.expr(scope, 1, plain_only=True)

        lines = [f"input {', '.join(SENSORS)};", ""]
        for helper, (source, deref_write) in zip(self.helpers, helpers):
            # a parameter is a reference only if some call passes &x
            if deref_write is not None and helper.name in self.ref_calls:
                source = source[:-2] + [deref_write] + source[-2:]
            lines.extend(source)
            lines.append("")
        lines.append("fn main() {")
        lines += ['    ' + line for line in body]
        lines.append(f"    ret {ret}")
        lines.append("}")
        return '\n'.join(lines) + '\n'


def generate_source(seed: int, max_instructions: int = 60, max_helpers: int = 2) -> str:
    return ProgramGenerator(seed, max_instructions, max_helpers).generate()


def generate_program(seed: int, max_instructions: int = 60, max_helpers: int = 2) -> LabeledProgram:
    """
    Parse and validate a generated program.

    Raises:
        ProgramError: The generated text failed validation (a generator bug)
    """
    source = generate_source(seed, max_instructions, max_helpers)
    program = parse(source)
    diagnostics = validate(program)
    if diagnostics:
        logger.error("Generated program for seed %d is invalid:\n%s", seed, source)
        raise ProgramError(f"generated program for seed {seed} is invalid: {diagnostics[0]}")
    return program
