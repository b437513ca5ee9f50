"""Particle time integrator for the linear structured population model.

The state is a positive atomic measure.  One step splits the generator into

* transport along ``x' = b(x)`` together with decay at rate ``c`` along the
  characteristic, integrated as the augmented system ``(x, log w)' =
  (b(x), -c(x))`` with classical RK4 (on the decay component this is
  Simpson's rule along the path);
* births, each parent atom ``(x, w)`` contributing ``dt * w * W_k(x)`` at
  ``L_k(x)`` for every kernel channel ``k``.

Lie splitting does transport/decay then one explicit birth increment.  Strang
splitting does a half step of transport/decay, a second-order birth update
``mu + dt C mu + dt^2/2 C^2 mu``, and another half step.  After each step the
particle cloud may be compressed with :func:`~flatpop.measures.coalesce`; the
flat-distance bound it returns is accumulated as the certified error budget.
Time-discretisation error is not certified.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bl_functions import PiecewiseLinearFn, evaluate, evaluate_unchecked
from .measures import AtomicMeasure, coalesce, pair
from .model_config import ModelIngredients, channel_arrays

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Numerical failure inside the particle solver."""


class Splitting(str, enum.Enum):
    LIE = "lie"
    STRANG = "strang"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    t_end: float = 1.0
    splitting: Splitting = Splitting.STRANG
    ode_substeps: int = 4
    coalesce_radius: float = 0.0
    prune: float = 0.0
    coalesce_every: int = 1
    checkpoint_every: int = 1
    max_atoms: int = 2_000_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "splitting", Splitting(self.splitting))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.ode_substeps < 1 or self.coalesce_every < 1 or self.checkpoint_every < 1:
            raise ValueError("substeps and strides must be at least 1")
        if self.coalesce_radius < 0 or self.prune < 0:
            raise ValueError("coalesce radius and prune threshold must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splitting"] = self.splitting.value
        return d


@dataclass(frozen=True)
class Checkpoint:
    t: float
    measure: AtomicMeasure
    mass: float
    error_bound: float


@dataclass
class Trajectory:
    checkpoints: list[Checkpoint]
    config: SimConfig
    model_digest: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([c.t for c in self.checkpoints])

    @property
    def masses(self) -> np.ndarray:
        return np.array([c.mass for c in self.checkpoints])

    @property
    def final(self) -> AtomicMeasure:
        return self.checkpoints[-1].measure

    def at(self, t: float, tol: float = 1e-9) -> Checkpoint:
        for c in self.checkpoints:
            if abs(c.t - t) <= tol:
                return c
        raise KeyError(f"no checkpoint at t={t}")


# ---------------------------------------------------------------------------
# characteristics


def _hitting_time(b: PiecewiseLinearFn, x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Time for ``x' = b(x)`` to go from ``x`` to ``target`` when ``b`` is affine between them."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bx = evaluate_unchecked(b, x)
        bt = evaluate_unchecked(b, np.where(np.isfinite(target), target, x))
        slope = (bt - bx) / (target - x)
        flat = np.abs(slope * (target - x)) <= 1e-12 * np.abs(bx)
        tau = np.where(flat, (target - x) / bx, np.log(bt / bx) / np.where(flat, 1.0, slope))
    return np.where(np.isfinite(target), tau, np.inf)


def _rk4_augmented(b: PiecewiseLinearFn, c: PiecewiseLinearFn | None, x: np.ndarray, tau: float, substeps: int):
    """Integrate ``x' = b(x)`` and ``L' = c(x)`` over ``[0, tau]``; returns ``(x, L)``.

    Each substep is cut where the path meets a breakpoint of ``b`` or ``c``:
    the atom is advanced to the breakpoint in the exact hitting time (``b`` is
    affine in between), placed on it, and the rest of the substep continues
    from there.  Every RK4 stage then sees smooth coefficients, so the scheme
    keeps its fourth order for piecewise-linear ingredients.
    """
    x = np.array(x, dtype=float)
    acc = np.zeros_like(x)
    if x.size == 0 or tau == 0.0:
        return x, acc
    h = tau / substeps
    kinks = b.breakpoints if c is None else np.union1d(b.breakpoints, c.breakpoints)
    kinks = kinks[kinks > 0.0]

    def cf(z):
        return evaluate_unchecked(c, z) if c is not None else 0.0

    def speed(z):
        return evaluate_unchecked(b, np.maximum(z, 0.0))

    def rk4(z, hh, bf=speed, cfn=cf):
        k1 = bf(z)
        z2 = z + 0.5 * hh * k1
        k2 = bf(z2)
        z3 = z + 0.5 * hh * k2
        k3 = bf(z3)
        z4 = z + hh * k3
        k4 = bf(z4)
        inc = hh / 6.0 * (cfn(z) + 2.0 * cfn(z2) + 2.0 * cfn(z3) + cfn(z4))
        return z + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), inc

    def affine(f, z0, probe):
        """``f`` restricted to the piece containing ``probe``, extended linearly."""
        v0 = evaluate_unchecked(f, z0)
        slope = f.derivative(probe, side="right")
        return lambda z: v0 + slope * (z - z0)

    for _ in range(substeps):
        if kinks.size == 0 or x.min() > kinks[-1]:
            # no breakpoint ahead of any atom
            x, inc = rk4(x, h)
            acc = acc + inc
            continue
        left = np.full(x.shape, h)
        active = np.ones(x.shape, dtype=bool)
        while np.any(active):
            xa = x[active]
            j = np.searchsorted(kinks, xa + 1e-12 * np.maximum(1.0, xa), side="right")
            ahead = j < kinks.size
            target = np.where(ahead, kinks[np.minimum(j, kinks.size - 1)], np.inf)
            # every stage uses the affine form of the piece the exact path stays on,
            # so stages that overshoot the breakpoint do not see the next piece
            start = np.where(j > 0, np.maximum(xa, kinks[np.maximum(j - 1, 0)]), xa)
            probe = np.where(ahead, 0.5 * (start + target), xa + 1.0)
            t_hit = _hitting_time(b, xa, target)
            stop = t_hit < left[active]
            hh = np.where(stop, t_hit, left[active])
            bf = affine(b, xa, probe)
            cfn = affine(c, xa, probe) if c is not None else cf
            xn, inc = rk4(xa, hh, bf, cfn)
            xn = np.where(stop, target, xn)
            x[active] = xn
            acc[active] = acc[active] + inc
            idx = np.flatnonzero(active)
            left[idx] = np.where(stop, left[idx] - hh, 0.0)
            active[idx[~stop]] = False
        if not np.all(np.isfinite(x)):
            raise SimulationError("non-finite position in characteristic integration")
    return x, acc


def flow_map(b: PiecewiseLinearFn, x, tau: float, substeps: int = 4):
    """Position at time ``tau`` of the characteristic started at ``x``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    out, _ = _rk4_augmented(b, None, np.atleast_1d(np.asarray(x, dtype=float)), tau, substeps)
    return float(out[0]) if np.ndim(x) == 0 else out


def transport_decay(mu: AtomicMeasure, ing: ModelIngredients, tau: float, substeps: int) -> AtomicMeasure:
    if len(mu) == 0 or tau == 0.0:
        return mu
    x, integral = _rk4_augmented(ing.b, ing.c, mu.locations, tau, substeps)
    return AtomicMeasure(x, mu.weights * np.exp(-integral))


# ---------------------------------------------------------------------------
# births


def _offspring(x: np.ndarray, w: np.ndarray, ing: ModelIngredients) -> tuple[np.ndarray, np.ndarray]:
    """Atoms of ``C mu`` for ``mu = sum w_i delta_{x_i}`` (not canonicalised)."""
    locs, wts = [], []
    for L, W in channel_arrays(ing.eta, x):
        locs.append(np.broadcast_to(L, x.shape))
        wts.append(w * W)
    if not locs:
        return np.empty(0), np.empty(0)
    return np.concatenate(locs), np.concatenate(wts)


def birth_update(mu: AtomicMeasure, ing: ModelIngredients, dt: float, order: int = 1) -> AtomicMeasure:
    """Taylor step of ``mu' = C mu``: ``mu + dt C mu (+ dt^2/2 C^2 mu)``."""
    if len(mu) == 0 or not ing.eta.channels:
        return mu
    x1, w1 = _offspring(mu.locations, mu.weights, ing)
    xs, ws = [mu.locations, x1], [mu.weights, dt * w1]
    if order >= 2:
        x2, w2 = _offspring(x1, w1, ing)
        xs.append(x2)
        ws.append(0.5 * dt * dt * w2)
    return AtomicMeasure(np.concatenate(xs), np.concatenate(ws))


# ---------------------------------------------------------------------------
# stepping


def step(mu: AtomicMeasure, ing: ModelIngredients, cfg: SimConfig, dt: float | None = None,
         compress: bool = True) -> tuple[AtomicMeasure, float]:
    """Advance ``mu`` by one splitting step; returns the new state and the coalesce bound."""
    dt = cfg.dt if dt is None else dt
    if not mu.is_positive:
        raise SimulationError("negative weight in particle state")
    if cfg.splitting is Splitting.LIE:
        out = transport_decay(mu, ing, dt, cfg.ode_substeps)
        out = birth_update(out, ing, dt, order=1)
    else:
        out = transport_decay(mu, ing, 0.5 * dt, cfg.ode_substeps)
        out = birth_update(out, ing, dt, order=2)
        out = transport_decay(out, ing, 0.5 * dt, cfg.ode_substeps)
    err = 0.0
    if compress and (cfg.coalesce_radius > 0 or cfg.prune > 0):
        out, err = coalesce(out, cfg.coalesce_radius, cfg.prune)
    if not out.is_positive:
        raise SimulationError("negative weight produced by the step")
    return out, err


def simulate(mu0: AtomicMeasure, ing: ModelIngredients, cfg: SimConfig,
             progress: Callable[[float], None] | None = None) -> Trajectory:
    """Iterate :func:`step` from ``mu0`` to ``cfg.t_end`` and record checkpoints.

    Checkpoint times are ``k * dt``; a shorter final step lands exactly on
    ``t_end`` when it is not a multiple of ``dt``.
    """
    if not mu0.is_positive:
        raise SimulationError("initial measure must be positive")
    ing.validated()
    n_full = int(math.floor(cfg.t_end / cfg.dt + 1e-9))
    remainder = cfg.t_end - n_full * cfg.dt
    steps = [cfg.dt] * n_full
    if remainder > 1e-12 * max(1.0, cfg.t_end):
        steps.append(remainder)
    mu = mu0
    err = 0.0
    cps = [Checkpoint(0.0, mu0, mu0.mass, 0.0)]
    for k, h in enumerate(steps, start=1):
        compress = k % cfg.coalesce_every == 0
        mu, e = step(mu, ing, cfg, dt=h, compress=compress)
        err += e
        if len(mu) > cfg.max_atoms:
            raise SimulationError(f"particle count {len(mu)} exceeds cap {cfg.max_atoms}")
        if not np.isfinite(mu.mass):
            raise SimulationError("non-finite mass")
        t = cfg.t_end if k == len(steps) else k * cfg.dt
        if k % cfg.checkpoint_every == 0 or k == len(steps):
            cps.append(Checkpoint(t, mu, mu.mass, err))
            if progress is not None:
                progress(t)
    return Trajectory(cps, cfg, ing.digest())


# ---------------------------------------------------------------------------
# weak formulation


def kernel_pairing(phi: PiecewiseLinearFn, ing: ModelIngredients, x: np.ndarray) -> np.ndarray:
    """``x -> int phi d[eta(x)] = sum_k W_k(x) phi(L_k(x))``."""
    out = np.zeros_like(x, dtype=float)
    for L, W in channel_arrays(ing.eta, x):
        out = out + W * evaluate(phi, np.broadcast_to(L, x.shape))
    return out


def weak_residual(traj: Trajectory, phi: PiecewiseLinearFn | Sequence[PiecewiseLinearFn],
                  ing: ModelIngredients) -> float:
    """Absolute residual of the weak formulation along a trajectory.

    ``phi`` is one test function or one per checkpoint; the time derivative
    is taken by finite differences between checkpoints (central inside,
    one-sided at the ends).  The time integral uses the trapezoid rule over
    checkpoints.  At breakpoints of ``phi`` the mean of the one-sided slopes
    is used at interior checkpoints; at the first and last checkpoint the
    slope seen by a right-moving atom (right at ``t=0``, left at ``t=T``) is
    used instead, which keeps the quadrature second order when an atom sits on
    a kink there.
    """
    cps = traj.checkpoints
    times = traj.times
    if isinstance(phi, PiecewiseLinearFn):
        phis = [phi] * len(cps)
        dphi_dt = [None] * len(cps)
    else:
        phis = list(phi)
        if len(phis) != len(cps):
            raise ValueError("one test function per checkpoint is required")
        dphi_dt = [(j0, j1) for j0, j1 in _fd_stencil(len(cps))]
    integrand = np.empty(len(cps))
    for j, (cp_, f) in enumerate(zip(cps, phis)):
        mu = cp_.measure
        if len(mu) == 0:
            integrand[j] = 0.0
            continue
        x = mu.locations
        val = evaluate(f, x)
        side = "right" if j == 0 else ("left" if j == len(cps) - 1 else "average")
        g = evaluate(ing.b, x) * f.derivative(x, side) - evaluate(ing.c, x) * val
        g = g + kernel_pairing(f, ing, x)
        if dphi_dt[j] is not None:
            j0, j1 = dphi_dt[j]
            g = g + (evaluate(phis[j1], x) - evaluate(phis[j0], x)) / (times[j1] - times[j0])
        integrand[j] = float(np.dot(mu.weights, g))
    lhs = float(np.trapezoid(integrand, times))
    rhs = pair(cps[-1].measure, phis[-1]) - pair(cps[0].measure, phis[0])
    return abs(lhs - rhs)


def _fd_stencil(n: int):
    for j in range(n):
        yield (max(j - 1, 0), min(j + 1, n - 1))
