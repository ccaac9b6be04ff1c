"""
Tests for timely/validate.py.

Each rule gets one program that breaks it; the fixture programs and the
bundled benchmarks must come out clean.
"""

from __future__ import annotations

import pytest

from timely.parser import parse, parse_file
from timely.validate import Diagnostic, reference_params, validate


def _rules(source: str):
    return [d.rule for d in validate(parse(source))]


# ---------------------------------------------------------------------------
# Clean programs
# ---------------------------------------------------------------------------

class TestCleanPrograms:
    def test_fixtures_validate(self, fresh_average, consistent_pair, reference_program):
        assert validate(fresh_average) == []
        assert validate(consistent_pair) == []
        assert validate(reference_program) == []

    def test_corpus_validates(self, corpus_path):
        assert validate(parse_file(corpus_path)) == []

    def test_diagnostic_text(self):
        diag = Diagnostic(("main", 3), "undeclared", "use of undeclared variable 'q'")
        assert str(diag) == "main:3: [undeclared] use of undeclared variable 'q'"


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

class TestScopeRules:
    def test_undeclared(self):
        diagnostics = validate(parse("fn main() { let a = b + 1; ret a }"))
        assert [(d.site, d.rule) for d in diagnostics] == [(("main", 0), "undeclared")]

    def test_branch_bindings_do_not_escape(self):
        assert _rules("fn main() { if true { let a = 1; } ret a }") == ["undeclared"]

    def test_shadowing(self):
        assert _rules("fn main() { let a = 1; let a = 2; ret a }") == ["shadowing"]

    def test_unbound_call_result_is_not_a_name(self):
        assert _rules("fn f() { ret 1 } fn main() { f(); ret 0 }") == []


class TestMutabilityRules:
    def test_write_to_fresh(self):
        assert _rules("fn main() { let fresh a = 1; a := 2; ret 0 }") == ["immutable-write"]

    def test_write_to_consistent(self):
        assert _rules("fn main() { let consistent(1) a = 1; a := 2; ret a }") == ["immutable-write"]

    def test_reference_to_fresh(self):
        source = "fn f(p) { *p := 1; ret 0 } fn main() { let a = IN(); Fresh(a); let b = f(&a); ret b }"
        assert "immutable-reference" in _rules(source)

    def test_two_live_references(self):
        source = "fn main() { let a = 1; let p = &a; let q = &a; *p := 2; ret a }"
        assert _rules(source) == ["mutable-alias"]

    def test_reference_copy(self):
        source = "fn main() { let a = 1; let p = &a; let q = p; ret a }"
        assert _rules(source) == ["mutable-alias"]

    def test_reference_reassign(self):
        source = "fn main() { let a = 1; let b = 2; let p = &a; p := 3; ret b }"
        assert _rules(source) == ["reference-rebind"]

    def test_deref_of_non_reference(self):
        assert _rules("fn main() { let a = 1; *a := 2; ret a }") == ["not-a-reference"]

    def test_fresh_declared_twice(self):
        source = """
            fn main() {
                let a = IN();
                Fresh(a);
                let fresh b = a;
                if b > 0 { let fresh c = 1; } else { let fresh c = 2; }
                ret 0
            }
        """
        assert _rules(source) == ["fresh-not-unique"]

    def test_fresh_in_main_return(self):
        assert _rules("fn main() { let a = IN(); Fresh(a); ret a + 1 }") == ["fresh-in-main-return"]

    def test_fresh_may_be_returned_from_helpers(self):
        assert _rules("fn f() { let a = IN(); Fresh(a); ret a } fn main() { let b = f(); ret b }") == []


class TestShapeRules:
    def test_array_as_scalar(self):
        assert _rules("fn main() { let a = [1]; let b = a + 1; ret b }") == ["array-as-scalar"]

    def test_index_into_scalar(self):
        assert _rules("fn main() { let a = 1; ret a[0] }") == ["not-an-array"]

    def test_return_reference(self):
        assert "return-reference" in _rules("fn main() { let a = 1; let p = &a; ret p }")

    def test_mixed_argument_kinds(self):
        source = """
            fn f(p) { ret 0 }
            fn main() {
                let a = 1;
                let x = f(&a);
                let y = f(a);
                ret x + y
            }
        """
        assert _rules(source) == ["argument-kind"]


class TestReferenceParams:
    def test_reference_parameter_detected(self, reference_program):
        assert reference_params(reference_program) == {"bump": True, "main": False}

    def test_reference_flows_through_helpers(self):
        program = parse("""
            fn inner(q) { *q := 1; ret 0 }
            fn outer(p) { let r = inner(p); ret r }
            fn main() { let a = 0; let b = outer(&a); ret a + b }
        """)
        assert reference_params(program) == {"inner": True, "outer": True, "main": False}

    @pytest.mark.parametrize("arg", ["3", "a + 1"])
    def test_value_parameters(self, arg):
        program = parse(f"fn f(v) {{ ret v }} fn main() {{ let a = 1; let b = f({arg}); ret b }}")
        assert reference_params(program)["f"] is False
