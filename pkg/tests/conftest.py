"""
Shared fixtures for the Timely test suite.

Two small programs recur throughout: a fresh value computed from two
readings inside a helper, and a consistency set whose inputs arrive
through two calls of one helper, also reached one call deeper through
app. Golden files live in tests/golden/.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from timely.parser import parse
from timely.policy import build_policies
from timely.taint import build_summary
from timely.timely_runner import corpus_benchmarks

settings.register_profile(
    "ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
settings.register_profile(
    "dev", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dev"))

GOLDEN_DIR = Path(__file__).parent / "golden"

# main:0 x = tmp(); main:1 Fresh(x); main:2 alarm; main:3 if; main:4 alarm := 1; main:5 ret
FRESH_AVERAGE_SRC = """\
input sensor;

fn sense() {
    let s = sensor();
    ret s
}

fn tmp() {
    let a = sense();
    let b = sense();
    let avg = (a + b) / 2;
    ret avg
}

fn main() {
    let x = tmp();
    Fresh(x);
    let alarm = 0;
    if x > 3 {
        alarm := 1;
    }
    ret alarm
}
"""

# confirm:2 y = pres(); confirm:3 y2 = pres(); confirm:4/5 Consistent markers
CONSISTENT_PAIR_SRC = """\
input sensor;

fn sense() {
    let s = sensor();
    ret s
}

fn norm(v) {
    let n = v / 2;
    ret n
}

fn pres() {
    let base = 1;
    let raw = sense();
    let p = norm(raw);
    ret p
}

fn confirm() {
    let count = 0;
    let limit = 10;
    let y = pres();
    let y2 = pres();
    Consistent(y, 1);
    Consistent(y2, 1);
    let diff = y - y2;
    ret diff
}

fn main() {
    let status = 0;
    let c = confirm();
    ret c
}
"""

# the consistency pair one call deeper: main:0 r = app(); app:1 c = confirm()
APP_CONFIRM_SRC = """\
input sensor;

fn sense() {
    let s = sensor();
    ret s
}

fn norm(v) {
    let n = v / 2;
    ret n
}

fn pres() {
    let base = 1;
    let raw = sense();
    let p = norm(raw);
    ret p
}

fn confirm() {
    let count = 0;
    let limit = 10;
    let y = pres();
    let y2 = pres();
    Consistent(y, 1);
    Consistent(y2, 1);
    let diff = y - y2;
    ret diff
}

fn app() {
    let status = 0;
    let c = confirm();
    ret c
}

fn main() {
    let r = app();
    ret r
}
"""

# bump writes through its reference; counter is read back after the call
REFERENCE_SRC = """\
fn bump(p) {
    let r = IN();
    *p := *p + r;
    ret 0
}

fn main() {
    let counter = 1;
    bump(&counter);
    let fresh total = counter * 2;
    let out = 0;
    if total > 0 {
        out := 1;
    }
    ret out
}
"""


@pytest.fixture
def fresh_average():
    return parse(FRESH_AVERAGE_SRC)


@pytest.fixture
def consistent_pair():
    return parse(CONSISTENT_PAIR_SRC)


@pytest.fixture
def reference_program():
    return parse(REFERENCE_SRC)


@pytest.fixture
def app_confirm():
    return parse(APP_CONFIRM_SRC)


def analyze(program):
    """(summaries, policies) for a program."""
    fs = build_summary(program)
    return fs, build_policies(program, fs)


@pytest.fixture(params=sorted(corpus_benchmarks()))
def corpus_path(request):
    return corpus_benchmarks()[request.param]


@pytest.fixture
def golden():
    """
    Compare text against tests/golden/<name>.

    A missing golden file fails the test. With TIMELY_RECORD_GOLDEN=1 the
    actual text is written first, then compared as usual.
    """
    def check(name: str, actual: str) -> None:
        path = GOLDEN_DIR / name
        if os.environ.get("TIMELY_RECORD_GOLDEN") == "1":
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            path.write_text(actual, encoding="utf-8")
        if not path.exists():
            pytest.fail(f"missing golden file {name}; record it with TIMELY_RECORD_GOLDEN=1")
        assert actual == path.read_text(encoding="utf-8")
    return check
