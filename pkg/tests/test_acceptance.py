"""The twelve acceptance criteria, one test each.

Each test prints a single PASS/FAIL line; a summary of all lines is printed
at the end of the session (see conftest.py).
"""
import pytest

from lawdep.acceptance import CRITERIA

LINES: dict[int, str] = {}


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_criterion(criterion):
    res = criterion()
    LINES[res.number] = res.line()
    print(res.line())
    assert res.passed, res.detail
