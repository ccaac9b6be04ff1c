"""
Golden-file tests for the bundled benchmarks.

The transformed program text and the analysis report of every
benchmark are compared against tests/golden/. A missing golden file is
a failure; after an intended change, re-record with
TIMELY_RECORD_GOLDEN=1 and review the diff.
"""

from __future__ import annotations

from timely.infer import infer_atomic
from timely.parser import parse_file
from timely.printer import pretty_print
from timely.report import analysis_report, to_json
from timely.timely_runner import corpus_benchmarks

from tests.conftest import GOLDEN_DIR, analyze


class TestCorpusGolden:
    def test_every_benchmark_has_golden_files(self):
        expected = {
            f"{stem}.{kind}"
            for stem in corpus_benchmarks()
            for kind in ("transformed.oct", "analysis.json")
        }
        assert expected <= {path.name for path in GOLDEN_DIR.iterdir()}

    def test_transformed_program(self, corpus_path, golden):
        program = parse_file(corpus_path)
        fs, pd = analyze(program)
        _, transformed = infer_atomic(program, fs, pd)
        golden(f"{corpus_path.stem}.transformed.oct", pretty_print(transformed))

    def test_analysis_report(self, corpus_path, golden):
        program = parse_file(corpus_path)
        fs, pd = analyze(program)
        report = analysis_report(corpus_path.name, fs, pd, summaries=True)
        report.pop("version")
        golden(f"{corpus_path.stem}.analysis.json", to_json(report))
