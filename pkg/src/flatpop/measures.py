"""Signed atomic measures on the half-line.

An :class:`AtomicMeasure` is a finite sum ``sum_i w_i delta_{x_i}`` kept in
canonical form: locations strictly increasing, duplicate locations merged,
zero weights dropped.  Locations closer than :data:`LOCATION_TOL` count as
identical.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .bl_functions import PiecewiseLinearFn, evaluate

LOCATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.locations, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if x.size != w.size:
            raise ValueError("locations and weights must have equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValueError("locations and weights must be finite")
        if np.any(x < 0.0):
            raise ValueError("atom locations must be non-negative")
        x, w = _canonical(x, w)
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls) -> "AtomicMeasure":
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def dirac(cls, x: float, weight: float = 1.0) -> "AtomicMeasure":
        return cls([x], [weight])

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "AtomicMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls.empty()
        x, w = zip(*atoms)
        return cls(x, w)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AtomicMeasure":
        return cls.from_atoms((float(a[0]), float(a[1])) for a in data["atoms"])

    def to_dict(self) -> dict:
        return {"atoms": [[float(x), float(w)] for x, w in zip(self.locations, self.weights)]}

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(x), float(w)) for x, w in zip(self.locations, self.weights)]

    def __len__(self) -> int:
        return int(self.locations.size)

    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return linear_combine(1.0, self, 1.0, other)

    def __sub__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return linear_combine(1.0, self, -1.0, other)

    def __rmul__(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(self.locations, c * self.weights)

    def __neg__(self) -> "AtomicMeasure":
        return AtomicMeasure(self.locations, -self.weights)

    @property
    def is_positive(self) -> bool:
        return bool(np.all(self.weights >= 0.0))

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    def __repr__(self) -> str:
        inner = ", ".join(f"({x:.6g}, {w:.6g})" for x, w in self.atoms[:6])
        more = "" if len(self) <= 6 else f", ... {len(self)} atoms"
        return f"AtomicMeasure([{inner}{more}])"


def _canonical(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.size == 0:
        return x.copy(), w.copy()
    order = np.argsort(x, kind="stable")
    x = x[order]
    w = w[order]
    # a new group starts wherever the gap to the previous atom exceeds the tolerance
    starts = np.concatenate(([True], np.diff(x) > LOCATION_TOL))
    group = np.cumsum(starts) - 1
    xs = x[starts]
    ws = np.zeros(xs.size)
    np.add.at(ws, group, w)
    keep = ws != 0.0
    return xs[keep], ws[keep]


def tv_norm(mu: AtomicMeasure) -> float:
    return float(np.sum(np.abs(mu.weights)))


def linear_combine(a: float, mu: AtomicMeasure, b: float, nu: AtomicMeasure) -> AtomicMeasure:
    return AtomicMeasure(
        np.concatenate([mu.locations, nu.locations]),
        np.concatenate([a * mu.weights, b * nu.weights]),
    )


def pair(mu: AtomicMeasure, phi: PiecewiseLinearFn | Callable) -> float:
    """``<mu, phi> = sum_i w_i phi(x_i)``."""
    if len(mu) == 0:
        return 0.0
    if isinstance(phi, PiecewiseLinearFn):
        vals = evaluate(phi, mu.locations)
    else:
        vals = np.asarray(phi(mu.locations), dtype=float)
    return float(np.dot(mu.weights, vals))


def push_forward(mu: AtomicMeasure, mapping: Callable[[np.ndarray], np.ndarray]) -> AtomicMeasure:
    """Move every atom through ``mapping``; weights are unchanged."""
    if len(mu) == 0:
        return mu
    y = np.asarray(mapping(mu.locations), dtype=float)
    if np.any(y < 0.0):
        raise ValueError("push-forward produced a negative location")
    return AtomicMeasure(y, mu.weights)


def hahn_jordan(mu: AtomicMeasure) -> tuple[AtomicMeasure, AtomicMeasure]:
    pos = mu.weights > 0
    return (
        AtomicMeasure(mu.locations[pos], mu.weights[pos]),
        AtomicMeasure(mu.locations[~pos], -mu.weights[~pos]),
    )


def coalesce(mu: AtomicMeasure, radius: float, w_min: float) -> tuple[AtomicMeasure, float]:
    """Merge nearby atoms and prune light ones.

    Atoms are scanned left to right; an atom joins the current cluster when it
    lies within ``radius`` of the cluster's first atom.  Each cluster is
    replaced by a single atom at its weighted barycenter, then atoms lighter
    than ``w_min`` are dropped.

    Returns
    -------
    (AtomicMeasure, float)
        The compressed measure and a certified upper bound on the flat
        distance to the input, ``sum w_i |x_i - bary| + sum pruned w``.
    """
    if radius < 0 or w_min < 0:
        raise ValueError("merge radius and prune threshold must be non-negative")
    if len(mu) == 0:
        return mu, 0.0
    if not mu.is_positive:
        raise ValueError("coalesce is only defined for positive measures")
    x, w = mu.locations, mu.weights
    error = 0.0
    if radius > 0.0 and x.size > 1:
        # cluster ids: greedy scan anchored at each cluster's first atom
        if np.min(np.diff(x)) > radius:
            ids = None  # every cluster is a singleton
        else:
            starts = [0]
            while True:
                nxt = int(np.searchsorted(x, x[starts[-1]] + radius, side="right"))
                if nxt >= x.size:
                    break
                starts.append(nxt)
            flags = np.zeros(x.size, dtype=np.int64)
            flags[starts] = 1
            ids = np.cumsum(flags) - 1
        if ids is not None and len(starts) < x.size:
            mass = np.bincount(ids, weights=w)
            bary = np.bincount(ids, weights=w * x) / mass
            error += float(np.sum(w * np.abs(x - bary[ids])))
            x, w = bary, mass
    if w_min > 0.0:
        drop = w < w_min
        error += float(np.sum(w[drop]))
        x, w = x[~drop], w[~drop]
    return AtomicMeasure(x, w), error
