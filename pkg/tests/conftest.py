from __future__ import annotations

import pytest

from flatpop.bl_functions import PiecewiseLinearFn
from flatpop.model_config import Kernel, ModelIngredients

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for the acceptance summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])


def const(v: float) -> PiecewiseLinearFn:
    return PiecewiseLinearFn.constant(v)


def transport_model(b: float = 1.0, c: float = 0.0) -> ModelIngredients:
    return ModelIngredients(const(b), const(c), Kernel.zero())
