"""
Timely Reports

Assembles the JSON documents the command-line tools emit. Key order is
fixed by construction (dict insertion order, never sorted at dump time)
so reports can be compared byte-for-byte against golden files.

Functions:
    policy_record / region_records: Pieces shared by several reports
    analysis_report: analyze
    transform_report: transform
    check_report: check
    simulation_report: simulate, with the mode x benchmark table
    run_report: run
    to_json / write_report: Serialization
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from . import __version__
from .checker import CheckResult
from .machine import MachineState, Observation, format_trace
from .policy import ConsistentPolicy, FreshPolicy, Policy, PolicyDecls, PolicyMap, is_vacuous
from .syntax import Atomic, LabeledProgram, Site, walk
from .taint import FuncSummaries, format_summaries
from .validate import Diagnostic
from .verify import BenchmarkRow, Verdict, policy_kinds

logger = logging.getLogger(__name__)

Report = Dict[str, Any]


def site_text(site: Site) -> str:
    return f"{site[0]}:{site[1]}"


def _header(command: str, path: Optional[str]) -> Report:
    return {"tool": "timely", "version": __version__, "command": command, "program": path}


def diagnostic_records(diagnostics: Iterable[Diagnostic]) -> List[Dict[str, Any]]:
    return [{"site": site_text(d.site), "rule": d.rule, "message": d.message} for d in diagnostics]


def policy_record(policy: Policy) -> Dict[str, Any]:
    """
    Serialize one policy; chains are sorted so output never depends on set order.
    """
    record: Dict[str, Any] = {"id": policy.pid, "kind": policy.kind}
    if isinstance(policy, FreshPolicy):
        record["var"] = policy.var
        record["decl"] = site_text(policy.decl)
        record["uses"] = [site_text(use) for use in policy.uses]
    elif isinstance(policy, ConsistentPolicy):
        record["set"] = policy.set_id
        record["vars"] = list(policy.vars)
        record["decls"] = [site_text(decl) for decl in policy.decls]
    record["inputs"] = sorted(str(chain) for chain in policy.inputs)
    record["vacuous"] = is_vacuous(policy)
    record["groups"] = [
        {
            "context": [site_text(site) for site in group.context],
            "items": sorted(str(chain) for chain in group.items),
        }
        for group in policy.groups
    ]
    return record


def region_records(program: LabeledProgram, pm: Optional[PolicyMap] = None) -> List[Dict[str, Any]]:
    """
    One record per atomic region: where it sits and what it logs.

    ``first``/``last`` are the smallest and largest program labels inside
    the region; region labels themselves are left out.
    """
    records: List[Dict[str, Any]] = []
    for name, func in program.functions.items():
        for node in walk(func.body):
            if not isinstance(node, Atomic):
                continue
            labels = [inner.label for inner in walk(node.body)
                      if not isinstance(inner, Atomic) and inner.label < func.ret_label]
            records.append({
                "id": node.region_id,
                "function": name,
                "first": min(labels) if labels else None,
                "last": max(labels) if labels else None,
                "checkpoint": sorted(node.omega),
                "policies": list((pm or {}).get(node.region_id, [])),
            })
    records.sort(key=lambda record: record["id"])
    return records


def analysis_report(path: Optional[str], fs: FuncSummaries, pd: PolicyDecls,
                    diagnostics: Sequence[Diagnostic] = (), summaries: bool = False) -> Report:
    report = _header("analyze", path)
    report["diagnostics"] = diagnostic_records(diagnostics)
    report["constraints"] = policy_kinds(pd)
    report["policies"] = [policy_record(policy) for policy in pd.values()]
    if summaries:
        report["summaries"] = format_summaries(fs)
    return report


def transform_report(path: Optional[str], pd: PolicyDecls, pm: PolicyMap, transformed: LabeledProgram,
                     output: Optional[str] = None) -> Report:
    report = _header("transform", path)
    report["output"] = output
    report["policies"] = [policy_record(policy) for policy in pd.values()]
    report["policy_map"] = {str(region_id): list(pids) for region_id, pids in sorted(pm.items())}
    report["regions"] = region_records(transformed, pm)
    report["warnings"] = [f"policy {pid} does not depend on any input"
                          for pid, policy in pd.items() if is_vacuous(policy)]
    return report


def check_report(original: Optional[str], transformed: Optional[str], pm: PolicyMap,
                 result: CheckResult) -> Report:
    report = _header("check", original)
    report["transformed"] = transformed
    report["verdict"] = "pass" if result.ok else "fail"
    report["policy_map"] = {str(region_id): list(pids) for region_id, pids in sorted(pm.items())}
    report["diagnostics"] = diagnostic_records(result.diagnostics)
    return report


def _row_record(row: BenchmarkRow, witnesses: bool) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "benchmark": row.benchmark,
        "mode": row.mode,
        "schedule": row.schedule,
        "runs": row.runs,
        "violating": row.violating,
        "percent": round(row.percent, 2),
        "skipped": row.skipped,
        "disagreements": row.disagreements,
        "per_policy": {pid: row.per_policy[pid] for pid in sorted(row.per_policy)},
    }
    if witnesses:
        record["witnesses"] = list(row.witnesses)
    return record


def summary_table(rows: Iterable[BenchmarkRow]) -> Dict[str, Dict[str, float]]:
    """Percentage violating: one row per mode, one column per benchmark."""
    table: Dict[str, Dict[str, float]] = {}
    for row in rows:
        table.setdefault(row.mode, {})[row.benchmark] = round(row.percent, 2)
    return table


def simulation_report(rows: Sequence[BenchmarkRow], seed: int, witnesses: bool = False) -> Report:
    report = _header("simulate", None)
    report["seed"] = seed
    report["table"] = summary_table(rows)
    report["rows"] = [_row_record(row, witnesses) for row in rows]
    report["violations_found"] = any(row.violating for row in rows)
    return report


def run_report(path: Optional[str], state: MachineState, trace: Sequence[Observation],
               verdicts: Dict[str, Verdict], schedule: str) -> Report:
    report = _header("run", path)
    report["schedule"] = schedule
    report["result"] = state.result.value if state.result is not None else None
    report["steps"] = state.actions
    report["failures"] = state.failures
    report["verdicts"] = {pid: ("violated" if verdict.violated else "ok") for pid, verdict in verdicts.items()}
    report["trace"] = format_trace(trace)
    return report


def to_json(report: Report) -> str:
    return json.dumps(report, indent=2, default=str) + "\n"


def write_report(report: Report, path: Union[str, Path]) -> None:
    Path(path).write_text(to_json(report), encoding='utf-8')
    logger.info("Report written to %s", path)
