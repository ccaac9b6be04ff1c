"""
Timely

Static and dynamic tooling for annotated intermittent programs: parse,
analyze input provenance, infer atomic regions, check them, and simulate
execution under power failures.
"""

__version__ = "0.3.0"  # canonical source; setup.py parses this

from .errors import TimelyError
from .parser import parse, parse_file
from .printer import pretty_print

__all__ = ['TimelyError', 'parse', 'parse_file', 'pretty_print']
