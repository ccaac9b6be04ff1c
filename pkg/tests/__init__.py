"""
Timely Test Suite

Tests for the language front end, the analyses, region inference, the
machine, the oracles and the command-line tools.
"""
