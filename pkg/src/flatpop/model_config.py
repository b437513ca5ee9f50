"""Model ingredients ``(b, c, eta)`` and their validation.

The growth rate ``b``, mortality ``c`` and the offspring kernel ``eta`` are
all continuous piecewise-linear.  The kernel is a finite sum of channels::

    eta(y) = sum_k W_k(y) * delta_{L_k(y)}

so ``eta(y)`` is a positive atomic measure for every parent state ``y``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .bl_functions import PiecewiseLinearFn, bl_norm_paper, evaluate, merge_breakpoints
from .flat_metric import NormVariant, flat_distance
from .measures import AtomicMeasure


class InvalidModelError(ValueError):
    """Raised when ingredients violating the standing assumptions reach a solver."""


@dataclass(frozen=True)
class Channel:
    location: PiecewiseLinearFn
    weight: PiecewiseLinearFn


@dataclass(frozen=True)
class Kernel:
    channels: tuple[Channel, ...] = ()

    @classmethod
    def dirac_at_zero(cls, beta: float | PiecewiseLinearFn = 1.0) -> "Kernel":
        """``eta(y) = beta(y) delta_0``."""
        w = beta if isinstance(beta, PiecewiseLinearFn) else PiecewiseLinearFn.constant(beta)
        return cls((Channel(PiecewiseLinearFn.constant(0.0), w),))

    @classmethod
    def zero(cls) -> "Kernel":
        return cls(())

    def breakpoints(self) -> np.ndarray:
        fns = [f for ch in self.channels for f in (ch.location, ch.weight)]
        return merge_breakpoints(*fns) if fns else np.array([0.0])

    def offspring(self, y: float) -> AtomicMeasure:
        """The measure ``eta(y)``."""
        locs = [evaluate(ch.location, y) for ch in self.channels]
        ws = [evaluate(ch.weight, y) for ch in self.channels]
        return AtomicMeasure(locs, ws)

    def total_weight(self, y):
        if not self.channels:
            return np.zeros_like(np.asarray(y, dtype=float))
        return sum(evaluate(ch.weight, y) for ch in self.channels)

    def to_dict(self) -> dict:
        return {
            "channels": [
                {"location": ch.location.to_dict(), "weight": ch.weight.to_dict()} for ch in self.channels
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Kernel":
        return cls(tuple(
            Channel(PiecewiseLinearFn.from_dict(ch["location"]), PiecewiseLinearFn.from_dict(ch["weight"]))
            for ch in data.get("channels", [])
        ))


@dataclass(frozen=True)
class ModelIngredients:
    b: PiecewiseLinearFn
    c: PiecewiseLinearFn
    eta: Kernel = field(default_factory=Kernel)

    def to_dict(self) -> dict:
        return {"b": self.b.to_dict(), "c": self.c.to_dict(), "eta": self.eta.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelIngredients":
        return cls(
            PiecewiseLinearFn.from_dict(data["b"]),
            PiecewiseLinearFn.from_dict(data["c"]),
            Kernel.from_dict(data.get("eta", {"channels": []})),
        )

    def without_births(self) -> "ModelIngredients":
        return ModelIngredients(self.b, self.c, Kernel.zero())

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validated(self) -> "ModelIngredients":
        report = validate_assumptions(self)
        if not report.ok:
            raise InvalidModelError("; ".join(report.failures))
        return self


def lotka_model(beta: float = 1.0, mortality: float = 0.5, speed: float = 1.0) -> ModelIngredients:
    """Constant-coefficient model with all offspring born at size 0."""
    return ModelIngredients(
        PiecewiseLinearFn.constant(speed),
        PiecewiseLinearFn.constant(mortality),
        Kernel.dirac_at_zero(beta),
    )


@dataclass
class ValidationReport:
    c_bounded: bool
    eta_bl_valued: bool
    b_bounded_positive: bool
    failures: list[str]
    kappa: float | None = None
    irreducible: bool = False
    y_hat: float | None = None
    norms: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.c_bounded and self.eta_bl_valued and self.b_bounded_positive

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "assumptions": {
                "c_in_BL": self.c_bounded,
                "eta_BL_valued": self.eta_bl_valued,
                "b_in_BL_positive": self.b_bounded_positive,
            },
            "failures": list(self.failures),
            "kappa": self.kappa,
            "irreducible": self.irreducible,
            "y_hat": self.y_hat,
            "norms": dict(self.norms),
        }


def validate_assumptions(ing: ModelIngredients) -> ValidationReport:
    """Check the standing assumptions; failures are collected, not raised."""
    failures: list[str] = []
    c_ok = ing.c.bounded
    if not c_ok:
        failures.append("c: unbounded (linear extension)")
    eta_ok = True
    for k, ch in enumerate(ing.eta.channels):
        if not ch.location.bounded:
            eta_ok = False
            failures.append(f"eta.channels[{k}].location: unbounded")
        if not ch.weight.bounded:
            eta_ok = False
            failures.append(f"eta.channels[{k}].weight: unbounded")
        elif ch.weight.min_value() < 0.0:
            eta_ok = False
            failures.append(f"eta.channels[{k}].weight: negative values")
        if ch.location.bounded and ch.location.min_value() < 0.0:
            eta_ok = False
            failures.append(f"eta.channels[{k}].location: negative offspring state")
    b_ok = ing.b.bounded and ing.b.min_value() > 0.0
    if not ing.b.bounded:
        failures.append("b: unbounded (linear extension)")
    elif not b_ok:
        failures.append("b: not strictly positive")
    report = ValidationReport(c_ok, eta_ok, b_ok, failures)
    if report.ok:
        report.kappa = kappa_margin(ing)
        report.irreducible, report.y_hat = check_irreducibility(ing)
        bc, lip_est, lip_bound = eta_bl_norm(ing, with_estimate=True)
        report.norms = {
            "b_prime_sup": ing.b.lipschitz(),
            "b_sup": ing.b.sup_abs(),
            "c_BL": bl_norm_paper(ing.c),
            "c_sup": ing.c.sup_abs(),
            "eta_BC": bc,
            "eta_Lip_bound": lip_bound,
            "eta_Lip_estimate": lip_est,
            "eta_BL": bc + lip_bound,
        }
    return report


def kappa_margin(ing: ModelIngredients) -> float | None:
    """``inf_x (c - |c'|)`` when ``b`` is non-increasing and the infimum is positive.

    ``c - |c'|`` is affine on each piece, so the infimum is attained at a
    breakpoint using one of its two one-sided slopes.
    """
    if np.any(ing.b.piece_slopes() > 0.0):
        return None
    c = ing.c
    slopes = np.abs(c.piece_slopes())
    right = c.values - slopes
    left = c.values[1:] - slopes[:-1]
    kappa = float(min(right.min(), left.min() if left.size else np.inf))
    return kappa if kappa > 0.0 else None


def check_irreducibility(ing: ModelIngredients) -> tuple[bool, float | None]:
    """Smallest ``y_hat`` with ``0 in supp eta(y)`` for every ``y > y_hat``.

    A channel qualifies beyond a breakpoint ``y_hat`` when its location is
    identically 0 on ``[y_hat, inf)`` and its weight is positive on
    ``(y_hat, inf)``.
    """
    best: float | None = None
    for ch in ing.eta.channels:
        bp = merge_breakpoints(ch.location, ch.weight)
        L = evaluate(ch.location, bp)
        W = evaluate(ch.weight, bp)
        for i, y in enumerate(bp):
            # W >= 0 at bp[i] and > 0 at every later breakpoint keeps it positive on (bp[i], inf)
            positive = np.all(W[i + 1:] > 0.0) if i + 1 < bp.size else W[i] > 0.0
            if np.all(L[i:] == 0.0) and positive:
                best = float(y) if best is None else min(best, float(y))
                break
    return best is not None, best


def eta_bl_norm(ing: ModelIngredients, refine: int = 8, with_estimate: bool = False):
    """``(||eta||_BC, Lip(eta), ||eta||_BL)`` with the channel-wise Lipschitz bound.

    ``||eta||_BC`` is exact: ``eta(y)`` is positive, so its flat norm is its
    mass ``sum_k W_k(y)``, a piecewise-linear function maximised at a
    breakpoint.  ``Lip(eta)`` uses the bound
    ``sum_k Lip(W_k) + sup(W_k) Lip(L_k)``.  With ``with_estimate`` the
    sampled difference-quotient estimate is returned instead of the norm
    triple, as ``(BC, estimate, bound)``.
    """
    eta = ing.eta
    if not eta.channels:
        return 0.0, 0.0, 0.0
    bp = eta.breakpoints()
    bc = float(np.max(eta.total_weight(bp)))
    bound = float(sum(ch.weight.lipschitz() + ch.weight.sup_abs() * ch.location.lipschitz() for ch in eta.channels))
    if not with_estimate:
        return bc, bound, bc + bound
    return bc, lipschitz_estimate(eta, refine), bound


def lipschitz_estimate(eta: Kernel, refine: int = 8) -> float:
    """Largest flat-distance difference quotient over a refined breakpoint grid."""
    bp = eta.breakpoints()
    if bp.size < 2:
        return 0.0
    grid = np.unique(np.concatenate([np.linspace(a, b, refine + 1) for a, b in zip(bp[:-1], bp[1:])]))
    meas = [eta.offspring(y) for y in grid]
    est = 0.0
    for y1, y2, m1, m2 in zip(grid[:-1], grid[1:], meas[:-1], meas[1:]):
        est = max(est, flat_distance(m1, m2, NormVariant.PAPER) / (y2 - y1))
    return float(est)


def growth_constants(ing: ModelIngredients, t: float) -> tuple[float, float]:
    """Lipschitz-in-data constant ``C1(t)`` and time-regularity constant ``C2(t)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    bc, lip, eta_bl = eta_bl_norm(ing)
    b_prime = ing.b.lipschitz()
    c_bl = bl_norm_paper(ing.c)
    c1 = math.exp(3.0 * t * (b_prime + c_bl + eta_bl))
    rate = ing.c.sup_abs() + bc
    c2 = ing.b.sup_abs() + rate * math.exp(rate * t)
    return c1, c2


def channel_arrays(eta: Kernel, x: np.ndarray) -> Sequence[tuple[np.ndarray, np.ndarray]]:
    """``(L_k(x), W_k(x))`` for each channel, vectorised over parent states."""
    return [(np.asarray(evaluate(ch.location, x)), np.asarray(evaluate(ch.weight, x))) for ch in eta.channels]
