"""Continuous piecewise-linear functions on the half-line.

A :class:`PiecewiseLinearFn` is given by its values on a strictly increasing
set of breakpoints starting at 0 and an extension rule beyond the last
breakpoint.  Both bounded-Lipschitz norms are computed exactly:

``bl_norm_paper``
    ``sup_x (|f(x)| + |f'(x)|)``, the pointwise norm used by the solver
    diagnostics.
``bl_norm_classic``
    ``sup_x |f(x)| + Lip(f)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np


class UnboundedFunctionError(ValueError):
    """Raised when a norm is requested for a function that grows linearly."""


@dataclass(frozen=True, eq=False)
class PiecewiseLinearFn:
    """Continuous piecewise-linear function on ``[0, inf)``.

    Parameters
    ----------
    breakpoints:
        Strictly increasing, non-negative, first entry exactly 0.
    values:
        Function values at the breakpoints.
    slope:
        Slope of the linear extension beyond the last breakpoint; 0 means a
        constant extension.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    slope: float = 0.0

    def __post_init__(self) -> None:
        bp = np.array(self.breakpoints, dtype=float).reshape(-1)
        vals = np.array(self.values, dtype=float).reshape(-1)
        if bp.size == 0:
            raise ValueError("at least one breakpoint is required")
        if bp.size != vals.size:
            raise ValueError("breakpoints and values must have equal length")
        if bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(bp) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(vals)) and np.isfinite(self.slope)):
            raise ValueError("breakpoints, values and slope must be finite")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "slope", float(self.slope))

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinearFn":
        return cls([0.0], [value])

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PiecewiseLinearFn":
        ext = data.get("extension", "constant")
        if ext == "constant":
            slope = 0.0
        elif isinstance(ext, Mapping) and "linear" in ext:
            slope = float(ext["linear"])
        else:
            raise ValueError(f"unknown extension rule {ext!r}")
        return cls(data["breakpoints"], data["values"], slope)

    def to_dict(self) -> dict:
        ext: Any = "constant" if self.slope == 0.0 else {"linear": self.slope}
        return {
            "breakpoints": [float(x) for x in self.breakpoints],
            "values": [float(v) for v in self.values],
            "extension": ext,
        }

    # -- evaluation ---------------------------------------------------
    @property
    def bounded(self) -> bool:
        return self.slope == 0.0

    def __call__(self, x):
        return evaluate(self, x)

    def piece_slopes(self) -> np.ndarray:
        """Slopes of the interior pieces followed by the extension slope."""
        inner = np.diff(self.values) / np.diff(self.breakpoints)
        return np.append(inner, self.slope)

    def derivative(self, x, side: str = "right", tol: float = 1e-9):
        """Derivative at ``x``.

        ``side`` selects the one-sided slope (``"left"``/``"right"``) or, with
        ``"average"``, the mean of both slopes.  Points within ``tol`` of a
        breakpoint are treated as lying on it.
        """
        x = np.asarray(x, dtype=float)
        slopes = self.piece_slopes()
        bp = self.breakpoints
        hi = np.clip(np.searchsorted(bp, x), 0, bp.size - 1)
        lo = np.clip(hi - 1, 0, None)
        snap = np.where(np.abs(bp[lo] - x) <= np.abs(bp[hi] - x), bp[lo], bp[hi])
        x = np.where(np.abs(snap - x) <= tol, snap, x)
        if side == "average":
            i = np.clip(np.searchsorted(self.breakpoints, x), 0, self.breakpoints.size - 1)
            j = np.clip(i - 1, 0, None)
            near_i = np.abs(self.breakpoints[i] - x) <= tol
            near_j = np.abs(self.breakpoints[j] - x) <= tol
            k = np.where(near_i, i, j)
            at_kink = (near_i | near_j) & (k > 0)
            mean = 0.5 * (slopes[np.clip(k - 1, 0, None)] + slopes[k])
            return np.where(at_kink, mean, self.derivative(x, "right"))
        if side == "right":
            idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        elif side == "left":
            idx = np.searchsorted(self.breakpoints, x, side="left") - 1
            idx = np.maximum(idx, 0)
        else:
            raise ValueError("side must be 'left', 'right' or 'average'")
        return slopes[np.clip(idx, 0, slopes.size - 1)]

    def sup_abs(self) -> float:
        _require_bounded(self)
        return float(np.max(np.abs(self.values)))

    def min_value(self) -> float:
        _require_bounded(self)
        return float(np.min(self.values))

    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.piece_slopes())))

    def scaled(self, factor: float) -> "PiecewiseLinearFn":
        return PiecewiseLinearFn(self.breakpoints, factor * self.values, factor * self.slope)


def evaluate(f: PiecewiseLinearFn, x):
    """Exact piecewise-linear interpolation; ``x`` must be non-negative."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0.0) or np.any(np.isnan(xa)):
        raise ValueError("evaluation point must be non-negative")
    out = np.interp(xa, f.breakpoints, f.values)
    if f.slope != 0.0:
        beyond = xa > f.breakpoints[-1]
        out = np.where(beyond, f.values[-1] + f.slope * (xa - f.breakpoints[-1]), out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def evaluate_unchecked(f: PiecewiseLinearFn, x: np.ndarray) -> np.ndarray:
    """:func:`evaluate` without input validation, for arrays in inner loops."""
    out = np.interp(x, f.breakpoints, f.values)
    if f.slope != 0.0:
        last = f.breakpoints[-1]
        out = np.where(x > last, f.values[-1] + f.slope * (x - last), out)
    return out


def _require_bounded(f: PiecewiseLinearFn) -> None:
    if not f.bounded:
        raise UnboundedFunctionError("function has a non-zero linear extension and is unbounded")


def bl_norm_paper(f: PiecewiseLinearFn) -> float:
    """``sup_x (|f(x)| + |f'(x)|)`` with both one-sided slopes at every breakpoint.

    On each piece ``|f| + |f'|`` is convex in ``x``, so the supremum is
    attained at a piece endpoint.
    """
    _require_bounded(f)
    slopes = np.abs(f.piece_slopes())  # last entry is the (zero) extension
    vals = np.abs(f.values)
    right = vals + slopes  # piece starting at breakpoint i
    left = vals[1:] + slopes[:-1]  # piece ending at breakpoint i+1
    return float(max(right.max(), left.max() if left.size else 0.0))


def bl_norm_classic(f: PiecewiseLinearFn) -> float:
    """``sup|f| + Lip(f)``."""
    _require_bounded(f)
    return f.sup_abs() + f.lipschitz()


def merge_breakpoints(*fns: PiecewiseLinearFn) -> np.ndarray:
    return np.unique(np.concatenate([f.breakpoints for f in fns]))


def combine(a: float, f: PiecewiseLinearFn, b: float, g: PiecewiseLinearFn) -> PiecewiseLinearFn:
    """``a*f + b*g`` on the merged breakpoint set."""
    bp = merge_breakpoints(f, g)
    return PiecewiseLinearFn(bp, a * evaluate(f, bp) + b * evaluate(g, bp), a * f.slope + b * g.slope)
