#!/usr/bin/env python3
"""
Timely Command Line

Drives the toolchain end to end: analyze annotated programs, insert
atomic regions, check placements, simulate power failures and dump
control-flow graphs.

Exit codes:
    0: Success
    1: Diagnostics (parse, validation or check failure, any toolchain error)
    2: Simulation found policy violations

Functions:
    cli: Click command group (console script ``timely``)
    setup_logging: Configure the ``timely`` logger
    draw_progress_bar: Text progress bar on stderr
"""

import logging
import logging.handlers
import queue
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click

from . import __version__
from .cfg import build_cfg
from .checker import check_program
from .errors import TimelyError
from .infer import infer_atomic
from .machine import SeededOracle, clock_oracle, committed_trace, run_intermittent
from .parser import parse_file
from .policy import build_policies, derive_policy_map
from .printer import pretty_print
from .report import (
    analysis_report, check_report, run_report, simulation_report, to_json, transform_report, write_report,
)
from .syntax import LabeledProgram
from .taint import build_summary
from .timely_config import load_config
from .timely_runner import MODES, SimulationJob, SimulationThread, corpus_benchmarks
from .validate import validate
from .verify import (
    AtLabels, FailurePoint, NoFailures, RandomFailures, check_trace, pathological_points, policy_kinds,
)

logger = logging.getLogger('timely')

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_VIOLATIONS = 2

LOG_FORMAT = '[%(asctime)s] [%(levelname)s] %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def setup_logging(verbosity: int, log_file: Optional[str] = None) -> None:
    """
    Configure the ``timely`` logger once per invocation.

    Args:
        verbosity: 0 for warnings, 1 for info, 2 or more for debug
        log_file: Also append to this file, rotated at 10MB with one backup
    """
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    formatter = logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    logger.addHandler(stream)
    if log_file:
        rotating = logging.handlers.RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=1)
        rotating.setFormatter(formatter)
        logger.addHandler(rotating)
    logger.setLevel(level)
    logger.propagate = False


def draw_progress_bar(progress: int, total: int, prefix: str = '', length: int = 50, fill: str = '█') -> None:
    percent = "{0:.1f}".format(100 * (progress / float(total))) if total else "100.0"
    filled_length = int(length * progress // total) if total else length
    bar = fill * filled_length + '-' * (length - filled_length)
    click.echo(f'\r{prefix} |{bar}| {percent}% Complete', nl=False, err=True)


def _emit(report: Dict[str, Any], path: Optional[str]) -> None:
    if path:
        write_report(report, path)
    else:
        click.echo(to_json(report), nl=False)


def _load(path: str) -> LabeledProgram:
    program = parse_file(path)
    diagnostics = validate(program)
    if diagnostics:
        for diag in diagnostics:
            click.echo(f"{path}:{diag}", err=True)
        raise click.exceptions.Exit(EXIT_DIAGNOSTICS)
    return program


def _settings(ctx: click.Context, **overrides) -> Dict[str, Any]:
    config = dict(ctx.obj['config'])
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    return config


class _TimelyGroup(click.Group):
    """Maps toolchain errors onto exit code 1 for every subcommand."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except TimelyError as e:
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_DIAGNOSTICS)


@click.group(cls=_TimelyGroup)
@click.option('--verbose', '-v', count=True, help='-v for progress messages, -vv for debug detail')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Settings file (defaults to the per-user config.json)')
@click.version_option(version=__version__, prog_name='timely')
@click.pass_context
def cli(ctx: click.Context, verbose: int, config_path: Optional[str]) -> None:
    """Analyze, transform, check and simulate annotated intermittent programs."""
    config = load_config(config_path)
    setup_logging(verbose, config.get('log_file'))
    ctx.ensure_object(dict)
    ctx.obj['config'] = config


@cli.command()
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--summaries', is_flag=True, help='Include the per-function taint summaries')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='Write the report here')
def analyze(path: str, summaries: bool, report_path: Optional[str]) -> None:
    """Build function summaries and policy declarations."""
    program = _load(path)
    fs = build_summary(program)
    pd = build_policies(program, fs)
    _emit(analysis_report(path, fs, pd, summaries=summaries), report_path)


@cli.command()
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--output', '-o', type=click.Path(dir_okay=False), help='Write the transformed program here')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='Write the report here')
def transform(path: str, output: Optional[str], report_path: Optional[str]) -> None:
    """Insert atomic regions that enforce every policy."""
    program = _load(path)
    fs = build_summary(program)
    pd = build_policies(program, fs)
    pm, transformed = infer_atomic(program, fs, pd)
    text = pretty_print(transformed)
    if output:
        Path(output).write_text(text, encoding='utf-8')
        logger.info("Transformed program written to %s", output)
    else:
        click.echo(text, nl=False)
    report = transform_report(path, pd, pm, transformed, output)
    for warning in report['warnings']:
        click.echo(f"Warning: {warning}", err=True)
    if report_path:
        write_report(report, report_path)
    elif output:
        click.echo(to_json(report), nl=False)


@cli.command()
@click.argument('original', type=click.Path(exists=True, dir_okay=False))
@click.argument('transformed', type=click.Path(exists=True, dir_okay=False))
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='Write the report here')
@click.pass_context
def check(ctx: click.Context, original: str, transformed: str, report_path: Optional[str]) -> None:
    """Check regions in TRANSFORMED against the policies of ORIGINAL."""
    source = _load(original)
    placed = _load(transformed)
    pd = build_policies(source, build_summary(source))
    pm = derive_policy_map(placed, pd)
    result = check_program(source, placed, pm)
    _emit(check_report(original, transformed, pm, result), report_path)
    if not result.ok:
        for diag in result.diagnostics:
            click.echo(f"{transformed}:{diag}", err=True)
        ctx.exit(EXIT_DIAGNOSTICS)


def _drain(message_queue: queue.Queue, thread: SimulationThread, show_progress: bool) -> Optional[str]:
    """Consume runner messages until the thread finishes; returns the error message, if any."""
    error = None
    levels = {'info': logging.INFO, 'warning': logging.WARNING, 'error': logging.ERROR}
    while True:
        try:
            message = message_queue.get(timeout=0.1)
        except queue.Empty:
            if not thread.is_alive() and message_queue.empty():
                break
            continue
        kind = message['type']
        if kind == 'progress' and show_progress:
            draw_progress_bar(message['current'], message['total'], prefix='Simulating')
        elif kind == 'status':
            logger.info(message['message'])
        elif kind == 'log':
            logger.log(levels.get(message.get('level', 'info'), logging.INFO), message['message'])
        elif kind == 'error':
            error = message['message']
        elif kind == 'complete':
            break
    thread.join()
    if show_progress:
        click.echo('', err=True)
    return error


@cli.command()
@click.argument('paths', nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option('--corpus', 'use_corpus', is_flag=True, help='Simulate every bundled benchmark')
@click.option('--mode', type=click.Choice(list(MODES) + ['both']), default='transformed', show_default=True)
@click.option('--schedule', type=click.Choice(['none', 'pathological', 'exhaustive', 'random']),
              default='pathological', show_default=True)
@click.option('--seed', type=int, default=None, help='Base seed for random schedules')
@click.option('--runs', type=int, default=None, help='Runs per benchmark for random schedules')
@click.option('--fuel', type=int, default=None, help='Step budget per run')
@click.option('--witnesses', is_flag=True, help='List the schedules of violating runs')
@click.option('--progress/--no-progress', default=True, help='Draw a progress bar on stderr')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='Write the report here')
@click.pass_context
def simulate(ctx: click.Context, paths: Sequence[str], use_corpus: bool, mode: str, schedule: str,
             seed: Optional[int], runs: Optional[int], fuel: Optional[int], witnesses: bool,
             progress: bool, report_path: Optional[str]) -> None:
    """Count policy violations under injected power failures."""
    config = _settings(ctx, fuel=fuel, seed=seed, random_runs=runs)
    jobs: List[SimulationJob] = []
    if use_corpus:
        jobs.extend(SimulationJob(name, path) for name, path in corpus_benchmarks().items())
    for path in paths:
        jobs.append(SimulationJob(Path(path).stem, program=_load(path)))
    if not jobs:
        raise click.UsageError("give at least one program or --corpus")

    message_queue: queue.Queue = queue.Queue()
    thread = SimulationThread(message_queue, {
        'jobs': jobs,
        'modes': list(MODES) if mode == 'both' else [mode],
        'schedule': schedule,
        'seed': config['seed'],
        'runs': config['random_runs'],
        'config': config,
    })
    thread.start()
    error = _drain(message_queue, thread, progress)
    if error:
        click.echo(f"Error: {error}", err=True)
        ctx.exit(EXIT_DIAGNOSTICS)

    report = simulation_report(thread.rows, config['seed'], witnesses)
    _emit(report, report_path)
    if report['violations_found']:
        ctx.exit(EXIT_VIOLATIONS)


@cli.command('dump-cfg')
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--function', 'function_name', default=None, help='Only this function')
def dump_cfg(path: str, function_name: Optional[str]) -> None:
    """Print control-flow graphs in Graphviz DOT."""
    program = _load(path)
    names = [function_name] if function_name else list(program.functions)
    for name in names:
        if name not in program.functions:
            raise click.BadParameter(f"no function named {name!r}", param_hint='--function')
        click.echo(build_cfg(program.functions[name]).to_dot())


def _parse_point(text: str, program: LabeledProgram, n: int) -> FailurePoint:
    """``func:label`` or ``func:label@occurrence``."""
    site_text, _, occurrence = text.partition('@')
    func, _, label = site_text.rpartition(':')
    if func not in program.functions or not label.lstrip('-').isdigit():
        raise click.BadParameter(f"expected FUNC:LABEL[@N], got {text!r}", param_hint='--fail-at')
    kind = 'ret' if program.functions[func].ret_label == int(label) else 'cmd'
    return FailurePoint(kind, (func, int(label)), None, int(occurrence or 0), n)


@cli.command()
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--transformed', 'use_regions', is_flag=True, help='Insert regions before running')
@click.option('--fail-at', 'fail_at', multiple=True, help='Fail before FUNC:LABEL[@N]; repeatable')
@click.option('--pathological', is_flag=True, help='Fail before every pathological point')
@click.option('--random', 'random_failures', is_flag=True, help='Fail at random, seeded by --seed')
@click.option('--off-time', type=int, default=1, show_default=True, help='Time lost per failure')
@click.option('--seed', type=int, default=None)
@click.option('--seeded-inputs', is_flag=True, help='Seeded random input values instead of the clock')
@click.option('--fuel', type=int, default=None)
@click.option('--committed', is_flag=True, help='Drop aborted region attempts from the trace')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='Write the report here')
@click.pass_context
def run(ctx: click.Context, path: str, use_regions: bool, fail_at: Sequence[str], pathological: bool,
        random_failures: bool, off_time: int, seed: Optional[int], seeded_inputs: bool,
        fuel: Optional[int], committed: bool, report_path: Optional[str]) -> None:
    """Execute a program once and dump its trace."""
    config = _settings(ctx, fuel=fuel, seed=seed)
    program = _load(path)
    fs = build_summary(program)
    pd = build_policies(program, fs)
    if use_regions:
        _, program = infer_atomic(program, fs, pd)

    if random_failures:
        schedule = RandomFailures(config['seed'], config['random_failure_probability'], config['pick_min'],
                                  config['pick_max'], config['max_failures_per_run'])
    elif pathological:
        schedule = pathological_points(program, pd, off_time)
    elif fail_at:
        schedule = AtLabels(_parse_point(text, program, off_time) for text in fail_at)
    else:
        schedule = NoFailures()
    oracle = SeededOracle(config['seed']) if seeded_inputs else clock_oracle

    state, trace = run_intermittent(program, oracle, schedule, config['fuel'])
    verdicts = check_trace(trace, pd)
    shown = committed_trace(trace) if committed else trace
    _emit(run_report(path, state, shown, verdicts, schedule.describe()), report_path)
    if any(verdict.violated for verdict in verdicts.values()):
        ctx.exit(EXIT_VIOLATIONS)


@cli.command()
def corpus() -> None:
    """List the bundled benchmarks and their constraint kinds."""
    for name, path in corpus_benchmarks().items():
        program = parse_file(path)
        pd = build_policies(program, build_summary(program))
        kinds = ', '.join(policy_kinds(pd)) or '-'
        click.echo(f"{name:<12} {len(pd):>2} policies  {kinds:<20} {path}")


def main() -> None:
    cli(obj={})


if __name__ == "__main__":
    main()
