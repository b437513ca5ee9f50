from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import const, transport_model
from flatpop.bl_functions import PiecewiseLinearFn, evaluate
from flatpop.dual_solver import (
    MissingKappaError,
    adjoint_apply,
    dual_contraction_check,
    duality_gap,
    grid_norm,
    parse_grid,
)
from flatpop.forward_solver import SimConfig
from flatpop.measures import AtomicMeasure
from flatpop.model_config import Kernel, ModelIngredients

GRID = parse_grid("0:20:0.01")


def test_parse_grid():
    g = parse_grid("0:1:0.25")
    np.testing.assert_allclose(g, [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        parse_grid("0:1")


def test_constant_coefficients_closed_form():
    phi = PiecewiseLinearFn([0, 1, 2, 3], [0, 0, 1, 0])
    res = adjoint_apply(phi, transport_model(1.0, 0.3), 1.5, GRID)
    np.testing.assert_allclose(res.values, math.exp(-0.45) * evaluate(phi, GRID + 1.5), atol=1e-12)


def test_identity_and_conservation():
    phi = PiecewiseLinearFn([0, 2], [1, -1])
    np.testing.assert_array_equal(adjoint_apply(phi, transport_model(), 0.0, GRID).values, evaluate(phi, GRID))
    np.testing.assert_allclose(adjoint_apply(const(1.0), transport_model(2.0, 0.0), 3.0, GRID).values, 1.0)
    with pytest.raises(ValueError):
        adjoint_apply(phi, transport_model(), 1.0, [])


def test_adjoint_semigroup_on_grid():
    ing = ModelIngredients(PiecewiseLinearFn([0, 5], [1.5, 0.5]), PiecewiseLinearFn([0, 4], [0.2, 0.8]), Kernel.zero())
    phi = PiecewiseLinearFn([0, 2, 6], [0.0, 1.0, 0.2])
    grid = parse_grid("0:30:0.005")
    direct = adjoint_apply(phi, ing, 2.0, grid)
    inner = adjoint_apply(phi, ing, 1.2, grid).as_function()
    composed = adjoint_apply(inner, ing, 0.8, grid)
    sel = grid <= 20
    np.testing.assert_allclose(composed.values[sel], direct.values[sel], atol=1e-4)


def test_positivity():
    ing = ModelIngredients(PiecewiseLinearFn([0, 5], [1.5, 0.5]), const(0.4), Kernel.zero())
    phi = PiecewiseLinearFn([0, 1, 3], [0.0, 2.0, 0.5])
    assert np.all(adjoint_apply(phi, ing, 2.0, GRID).values >= 0)


def test_duality_gap_closed_form_case():
    gap = duality_gap(AtomicMeasure.dirac(2.0), PiecewiseLinearFn([0, 10], [0, 10]), transport_model(1.0, 0.5), 1.0)
    assert gap <= 1e-10
    assert duality_gap(AtomicMeasure.dirac(2.0), const(1.0), transport_model(), 0.0) == 0.0


def test_duality_gap_converges_at_fourth_order():
    ing = ModelIngredients(
        PiecewiseLinearFn([0, 1.3, 2.9, 6.0], [1.8, 1.1, 0.9, 0.4]),
        PiecewiseLinearFn([0, 2.2, 4.1], [0.3, 1.2, 0.6]),
        Kernel.zero(),
    )
    mu = AtomicMeasure([0.2, 1.7, 3.3], [0.5, 1.0, 0.8])
    phi = PiecewiseLinearFn([0, 2, 5, 9], [0.1, 0.9, -0.4, 0.3])
    gaps = [duality_gap(mu, phi, ing, 2.0, SimConfig(dt=dt, ode_substeps=1)) for dt in (0.2, 0.1, 0.05, 0.025)]
    order = np.polyfit(np.log([0.2, 0.1, 0.05, 0.025]), np.log(gaps), 1)[0]
    assert order >= 3.5


def test_contraction_examples():
    ing = transport_model(1.0, 0.5)
    norm_t, bound, ok = dual_contraction_check(const(1.0), ing, 2.0, GRID)
    assert norm_t == pytest.approx(math.exp(-1.0)) and bound == pytest.approx(math.exp(-1.0)) and ok
    tent = PiecewiseLinearFn([0, 1, 2, 3], [0, 0, 1, 0])
    norm0, bound0, ok0 = dual_contraction_check(tent, ing, 0.0, GRID)
    assert norm0 == pytest.approx(bound0) and ok0
    assert dual_contraction_check(tent, ing, 1.0, GRID)[2]


def test_contraction_requires_kappa():
    with pytest.raises(MissingKappaError):
        dual_contraction_check(const(1.0), transport_model(1.0, 0.0), 1.0, GRID)


def test_grid_norm_of_samples():
    g = np.array([0.0, 1.0, 2.0])
    assert grid_norm(g, np.array([0.0, 1.0, 0.0])) == pytest.approx(2.0)
    assert grid_norm(np.array([0.0]), np.array([-0.5])) == 0.5
