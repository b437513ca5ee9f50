"""Backward propagation of test functions for the birth-free evolution.

For the transport/decay part of the model the adjoint acts on a test
function by following characteristics forward and discounting by the
accumulated mortality::

    psi_t(x) = exp(-int_0^t c(X_s(x)) ds) * phi0(X_t(x))

which is fixed by the pairing identity ``<mu_t, phi0> = <mu0, psi_t>``.
``psi_t`` is generally not piecewise linear, so it is sampled on a grid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .bl_functions import PiecewiseLinearFn, bl_norm_paper, evaluate
from .forward_solver import SimConfig, _rk4_augmented, simulate
from .measures import AtomicMeasure, pair
from .model_config import ModelIngredients, kappa_margin

logger = logging.getLogger(__name__)


class MissingKappaError(ValueError):
    """The contraction check needs ``b' <= 0`` and ``c >= |c'| + kappa``."""


@dataclass(frozen=True)
class AdjointResult:
    grid: np.ndarray
    values: np.ndarray
    norm: float
    t: float

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.grid))) if self.grid.size > 1 else 0.0

    def as_function(self) -> PiecewiseLinearFn:
        """Piecewise-linear interpolant of the samples (grid must start at 0)."""
        return PiecewiseLinearFn(self.grid, self.values)


def grid_norm(grid: np.ndarray, values: np.ndarray) -> float:
    """``max |v| + |slope|`` over both endpoints of every grid cell.

    This is the pointwise (``paper`` variant) norm of the piecewise-linear interpolant.
    """
    if grid.size == 1:
        return float(abs(values[0]))
    slope = np.abs(np.diff(values) / np.diff(grid))
    ends = np.maximum(np.abs(values[:-1]), np.abs(values[1:]))
    return float(np.max(ends + slope))


def parse_grid(spec: str) -> np.ndarray:
    """``"a:b:h"`` -> nodes ``a, a+h, ..., b``."""
    try:
        a, b, h = (float(p) for p in spec.split(":"))
    except ValueError as exc:
        raise ValueError(f"grid must look like start:stop:step, got {spec!r}") from exc
    if h <= 0 or b < a or a < 0:
        raise ValueError("grid needs 0 <= start <= stop and step > 0")
    n = int(round((b - a) / h))
    return a + h * np.arange(n + 1)


def adjoint_apply(phi0: PiecewiseLinearFn, ing: ModelIngredients, t: float, grid,
                  substeps: int | None = None) -> AdjointResult:
    """Sample ``psi_t`` at the grid nodes.

    Characteristics are integrated with RK4; ``substeps`` defaults to
    ``max(4, ceil(100 t))``.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("grid is empty")
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        vals = np.asarray(evaluate(phi0, grid), dtype=float)
    else:
        n = substeps if substeps is not None else max(4, math.ceil(100 * t))
        x, integral = _rk4_augmented(ing.b, ing.c, grid, t, n)
        vals = np.exp(-integral) * evaluate(phi0, x)
    return AdjointResult(grid, vals, grid_norm(grid, vals), float(t))


def duality_gap(mu0: AtomicMeasure, phi0: PiecewiseLinearFn, ing: ModelIngredients, t: float,
                cfg: SimConfig | None = None, refine: int = 16) -> float:
    """``|<mu_t, phi0> - <mu0, psi_t>|`` for the birth-free evolution.

    The forward side is the particle solver run with ``cfg`` (births and
    coalescing off).  The adjoint side integrates the characteristics from
    the initial atoms with ``refine`` times as many RK4 substeps, so the gap
    measures the forward integrator's error and shrinks at its order as the
    substep size decreases.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0 or len(mu0) == 0:
        return 0.0
    cfg = cfg or SimConfig(dt=0.01, t_end=t)
    cfg = SimConfig(dt=cfg.dt, t_end=t, splitting=cfg.splitting, ode_substeps=cfg.ode_substeps)
    free = ing.without_births()
    lhs = pair(simulate(mu0, free, cfg).final, phi0)
    per_step = cfg.ode_substeps * (2 if cfg.splitting.value == "strang" else 1)
    n = max(1, int(math.ceil(refine * per_step * t / cfg.dt)))
    psi = adjoint_apply(phi0, free, t, mu0.locations, substeps=n)
    return abs(lhs - float(np.dot(mu0.weights, psi.values)))


def dual_contraction_check(phi0: PiecewiseLinearFn, ing: ModelIngredients, t: float, grid,
                           substeps: int | None = None) -> tuple[float, float, bool]:
    """Grid estimate of ``||psi_t||`` against ``exp(-kappa t) ||phi0||``.

    Returns ``(norm_t, bound, passed)``.  The grid norm is the norm of the
    interpolant, which may exceed the true norm by a relative ``O(h)``; the
    check therefore passes when ``norm_t <= bound * (1 + h)``.
    """
    kappa = kappa_margin(ing)
    if kappa is None:
        raise MissingKappaError("kappa margin is absent: needs b non-increasing and c - |c'| > 0")
    res = adjoint_apply(phi0, ing.without_births(), t, grid, substeps)
    bound = math.exp(-kappa * t) * bl_norm_paper(phi0)
    passed = res.norm <= bound * (1.0 + res.h) + 1e-12
    return res.norm, bound, bool(passed)
