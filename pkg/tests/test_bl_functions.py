from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatpop.bl_functions import (
    PiecewiseLinearFn,
    UnboundedFunctionError,
    bl_norm_classic,
    bl_norm_paper,
    combine,
    evaluate,
)


def tent(a=1.0, m=2.0, b=3.0, h=1.0):
    return PiecewiseLinearFn([0.0, a, m, b], [0.0, 0.0, h, 0.0])


def test_evaluate_interpolates_and_extends():
    f = PiecewiseLinearFn([0, 1, 2], [0, 1, 0])
    assert evaluate(f, 0.5) == pytest.approx(0.5)
    assert evaluate(f, 1.5) == pytest.approx(0.5)
    assert evaluate(f, 7.0) == 0.0
    g = PiecewiseLinearFn([0, 1], [1, 2], slope=0.5)
    assert evaluate(g, 3.0) == pytest.approx(3.0)
    assert isinstance(evaluate(f, 1.0), float)


def test_evaluate_rejects_negative_points():
    with pytest.raises(ValueError):
        evaluate(PiecewiseLinearFn.constant(1.0), -0.1)


@pytest.mark.parametrize(
    "bp, vals",
    [([1.0, 2.0], [0, 0]), ([0.0, 0.0], [1, 1]), ([0.0, 1.0], [1.0]), ([0.0, 1.0], [0.0, np.nan])],
)
def test_invalid_construction(bp, vals):
    with pytest.raises(ValueError):
        PiecewiseLinearFn(bp, vals)


def test_norms_of_tent():
    f = tent()
    assert bl_norm_paper(f) == pytest.approx(2.0)  # value 1 and slope 1 meet at the peak
    assert bl_norm_classic(f) == pytest.approx(2.0)
    g = PiecewiseLinearFn([0, 2], [1, 0])
    assert bl_norm_paper(g) == pytest.approx(1.5)
    assert bl_norm_classic(g) == pytest.approx(1.5)


def test_paper_norm_can_be_smaller_than_classic():
    # largest value and steepest slope sit at different places
    f = PiecewiseLinearFn([0, 0.1, 10.1], [0, 0.2, 1.0])
    assert bl_norm_paper(f) == pytest.approx(2.2)
    assert bl_norm_classic(f) == pytest.approx(3.0)


def test_unbounded_function_has_no_norm():
    with pytest.raises(UnboundedFunctionError):
        bl_norm_paper(PiecewiseLinearFn([0], [0], slope=1.0))


def test_derivative_sides():
    f = PiecewiseLinearFn([0, 1, 2], [0, 1, 0])
    x = np.array([0.0, 0.5, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(f.derivative(x, "right"), [1, 1, -1, 0, 0])
    np.testing.assert_allclose(f.derivative(x, "left"), [1, 1, 1, -1, 0])
    np.testing.assert_allclose(f.derivative(x, "average"), [1, 1, 0, -0.5, 0])
    # points within the tolerance snap onto the breakpoint
    assert f.derivative(1.0 + 1e-13, "left") == pytest.approx(1.0)


def test_dict_round_trip():
    f = PiecewiseLinearFn([0, 1.5], [2, 3], slope=-0.25)
    g = PiecewiseLinearFn.from_dict(f.to_dict())
    np.testing.assert_array_equal(g.breakpoints, f.breakpoints)
    assert g.slope == f.slope
    assert PiecewiseLinearFn.constant(2).to_dict()["extension"] == "constant"


functions = st.integers(1, 6).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.05, 3.0), min_size=n - 1, max_size=n - 1),
        st.lists(st.floats(-5, 5), min_size=n, max_size=n),
    )
).map(lambda t: PiecewiseLinearFn(np.concatenate([[0.0], np.cumsum(t[0])]), t[1]))


@settings(max_examples=80, deadline=None)
@given(functions)
def test_paper_norm_is_supremum_of_sampled_pointwise_norm(f):
    xs = np.linspace(0, f.breakpoints[-1] + 1, 2001)
    sampled = np.max(np.abs(evaluate(f, xs)) + np.abs(f.derivative(xs, "right")))
    assert sampled <= bl_norm_paper(f) + 1e-9
    # and the bound is attained at a breakpoint with one of its slopes
    assert bl_norm_paper(f) <= bl_norm_classic(f) + 1e-12


@settings(max_examples=50, deadline=None)
@given(functions, functions, st.floats(-2, 2), st.floats(-2, 2))
def test_combine_is_pointwise(f, g, a, b):
    h = combine(a, f, b, g)
    xs = np.linspace(0, 20, 301)
    np.testing.assert_allclose(evaluate(h, xs), a * evaluate(f, xs) + b * evaluate(g, xs), atol=1e-9)
