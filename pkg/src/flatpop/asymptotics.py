"""Long-time diagnostics: growth rate, stable profile and exponential convergence.

The particle trajectory gives the observable side of asynchronous exponential
growth: the Malthusian rate from the log-mass slope, the normalised final
measure as the stable profile, and a fitted rate ``eps`` for the decay of
``||exp(-lambda t) mu_t - Pi||``.  Two independent references are provided:

* :func:`lotka_root`, the Euler-Lotka root for models whose offspring are all
  born at size 0 under constant growth speed;
* :func:`generator_matrix` and :func:`leading_eigenpair`, an upwind
  finite-volume surrogate of the generator and its dominant eigenpair.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, sparse, stats

from .bl_functions import PiecewiseLinearFn, evaluate
from .flat_metric import NormVariant, flat_distances
from .forward_solver import Trajectory
from .measures import AtomicMeasure, tv_norm
from .model_config import ModelIngredients, channel_arrays

logger = logging.getLogger(__name__)

#: Distances below this fraction of the attractor mass are treated as round-off.
NOISE_FLOOR = 1e-12
RATE_TOL = 1e-6


class AsymptoticsError(RuntimeError):
    """Inputs do not support the requested long-time diagnostic."""


class Classification(str, enum.Enum):
    EXTINCTION = "Extinction"
    GROWTH_ATTRACTOR = "GrowthAttractor"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class AegFit:
    M: float
    epsilon: float
    r_squared: float
    times: np.ndarray
    distances: np.ndarray

    @property
    def converged(self) -> bool:
        return self.epsilon > 0.0


@dataclass
class SpectralEstimate:
    lambda_star: float
    profile: AtomicMeasure
    epsilon: float
    M: float
    classification: Classification
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "epsilon": self.epsilon,
            "M": self.M,
            "classification": self.classification.value,
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# trajectory diagnostics


def estimate_lambda(traj: Trajectory, window: tuple[float, float]) -> tuple[float, float]:
    """Least-squares slope of ``log mass`` over checkpoints in ``window``; returns ``(lambda, R^2)``."""
    t_a, t_b = window
    t = traj.times
    m = traj.masses
    sel = (t >= t_a - 1e-9) & (t <= t_b + 1e-9)
    if np.count_nonzero(sel) < 2:
        raise AsymptoticsError(f"fewer than two checkpoints in window [{t_a}, {t_b}]")
    if np.any(m[sel] <= 0.0):
        raise AsymptoticsError("non-positive mass inside the fit window")
    y = np.log(m[sel])
    if np.ptp(y) == 0.0:
        return 0.0, 1.0
    fit = stats.linregress(t[sel], y)
    return float(fit.slope), float(fit.rvalue ** 2)


def _normalised(mu: AtomicMeasure) -> AtomicMeasure:
    mass = tv_norm(mu)
    if mass <= 0.0:
        raise AsymptoticsError("cannot normalise a zero measure")
    return (1.0 / mass) * mu


def stable_profile(traj: Trajectory, tail: int, workers: int | None = None) -> tuple[AtomicMeasure, np.ndarray]:
    """Unit-mass final measure and distances ``d_j`` of the earlier tail checkpoints to it."""
    if tail < 1:
        raise ValueError("tail must be at least 1")
    cps = traj.checkpoints[-tail:]
    profile = _normalised(cps[-1].measure)
    pairs = [(_normalised(cp.measure), profile) for cp in cps[:-1]]
    return profile, np.asarray(flat_distances(pairs, NormVariant.PAPER, workers), dtype=float)


def _decay_rate(times: np.ndarray, dist: np.ndarray, floor: float):
    """Least-squares fit of ``log dist`` against ``times`` above ``floor``; ``None`` when too few points."""
    keep = dist > floor
    if np.count_nonzero(keep) < 2:
        return None
    return stats.linregress(times[keep], np.log(dist[keep]))


def aeg_fit(traj: Trajectory, lambda_star: float, tail: int, workers: int | None = None) -> AegFit:
    """Fit ``||exp(-lambda t) mu_t - Pi|| ~ M exp(-eps t)`` over the tail.

    ``Pi = exp(-lambda t_last) mu_last``.  Distances at or below
    ``NOISE_FLOOR * mass(Pi)`` carry no information about the rate and are
    left out of the fit; when nothing is left the sentinel ``eps = +inf``
    (``M = 0``) signals a trajectory that already sits on its attractor.

    Distances to the last checkpoint shrink towards the end of any tail,
    convergent or not, so the rate is cross-checked against the successive
    increments ``||nu_{j+1} - nu_j||``, which decay at the same rate under
    genuine convergence but stay flat for a drifting profile.  The smaller
    of the two rates is reported, and a total decay of less than
    ``RATE_TOL`` over the tail counts as none (``eps = 0``).
    """
    if tail < 4:
        raise ValueError("aeg_fit needs a tail of at least 4 checkpoints")
    cps = traj.checkpoints[-tail:]
    t_last = cps[-1].t
    scaled = [math.exp(-lambda_star * cp.t) * cp.measure for cp in cps]
    pi = scaled[-1]
    pairs = [(nu, pi) for nu in scaled[:-1]] + list(zip(scaled[:-2], scaled[1:-1]))
    both = np.asarray(flat_distances(pairs, NormVariant.PAPER, workers), dtype=float)
    dist, steps = both[: len(cps) - 1], both[len(cps) - 1:]
    times = np.array([cp.t for cp in cps[:-1]])
    floor = NOISE_FLOOR * max(tv_norm(pi), 1e-300)
    fit = _decay_rate(times, dist, floor)
    if fit is None:
        return AegFit(0.0, math.inf, 1.0, times, dist)
    eps = -fit.slope
    check = _decay_rate(times[:-1], steps, floor)
    if check is not None:
        eps = min(eps, -check.slope)
    span = t_last - times[0]
    if abs(eps) * span < RATE_TOL:
        eps = 0.0
    return AegFit(float(math.exp(fit.intercept)), float(eps), float(fit.rvalue ** 2), times, dist)


def classify(traj: Trajectory, lambda_star: float, aeg: AegFit | None, lambda_tol: float = 1e-4) -> Classification:
    """Extinction / growth-attractor dichotomy with an explicit inconclusive outcome.

    ``|lambda| <= lambda_tol`` counts as ``lambda = 0``: a balanced model is
    then a growth attractor only when the fit certifies convergence.
    """
    lam = 0.0 if abs(lambda_star) <= lambda_tol else lambda_star
    masses = traj.masses
    if lam < 0.0 and masses[-1] < masses[0]:
        return Classification.EXTINCTION
    if lam >= 0.0 and aeg is not None and aeg.epsilon > 0.0:
        return Classification.GROWTH_ATTRACTOR
    return Classification.INCONCLUSIVE


def analyse(traj: Trajectory, window: tuple[float, float], tail: int, workers: int | None = None,
            lambda_tol: float = 1e-4) -> tuple[SpectralEstimate, np.ndarray]:
    """Run every trajectory diagnostic; returns the estimate and the profile distance series."""
    lam, r2 = estimate_lambda(traj, window)
    profile, series = stable_profile(traj, tail, workers)
    aeg = aeg_fit(traj, lam, tail, workers) if tail >= 4 else None
    cls = classify(traj, lam, aeg, lambda_tol)
    est = SpectralEstimate(
        lambda_star=lam,
        profile=profile,
        epsilon=aeg.epsilon if aeg else float("nan"),
        M=aeg.M if aeg else float("nan"),
        classification=cls,
        diagnostics={
            "lambda_r_squared": r2,
            "aeg_r_squared": aeg.r_squared if aeg else None,
            "window": [float(window[0]), float(window[1])],
            "tail": int(tail),
            "tail_distances": [float(d) for d in aeg.distances] if aeg else [],
        },
    )
    return est, series


# ---------------------------------------------------------------------------
# Euler-Lotka oracle


_SURVIVAL_CUTOFF = math.log(1e12)


def _cumulative(c: PiecewiseLinearFn, b0: float):
    """Nodes in age, and ``int_0^a c(b0 s) ds`` at those nodes (exact for piecewise-linear ``c``)."""
    ages = c.breakpoints / b0
    vals = c.values
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ages))))
    return ages, cum


def lotka_root(beta: PiecewiseLinearFn, c: PiecewiseLinearFn, b0: float) -> float:
    """Root of ``F(lambda) = int_0^inf beta(b0 a) exp(-lambda a - int_0^a c(b0 s) ds) da - 1``.

    ``F`` is strictly decreasing; the root is bracketed in
    ``[-sup|c| - 1, sup|beta| + 1]`` and found by bisection.  Where ``F``
    diverges (the integrand does not decay) it is taken as ``+inf``.
    """
    if b0 <= 0:
        raise ValueError("b0 must be positive")
    if not (beta.bounded and c.bounded):
        raise ValueError("beta and c must be bounded")
    if beta.min_value() < 0 or np.all(beta.values == 0):
        raise ValueError("beta must be non-negative and not identically zero")
    ages_c, cum_c = _cumulative(c, b0)
    c_tail = float(c.values[-1])
    beta_tail = float(beta.values[-1])
    nodes = np.union1d(ages_c, beta.breakpoints / b0)

    def mortality_integral(a):
        a = np.asarray(a, dtype=float)
        j = np.clip(np.searchsorted(ages_c, a, side="right") - 1, 0, ages_c.size - 1)
        c0 = c.values[j]
        slope = np.append(np.diff(c.values) / np.diff(ages_c), 0.0)[j] if ages_c.size > 1 else 0.0
        da = a - ages_c[j]
        return cum_c[j] + c0 * da + 0.5 * slope * da * da

    def F(lam: float) -> float:
        rate = lam + c_tail
        if beta_tail > 0 and rate <= 0:
            return math.inf
        a_end = nodes[-1]
        if beta_tail > 0:
            # extend until the survival factor falls below 1e-12
            e_end = lam * a_end + float(mortality_integral(a_end))
            a_end = a_end + max(0.0, (_SURVIVAL_CUTOFF - e_end) / rate) + 1.0
        pts = nodes[(nodes > 0) & (nodes < a_end)]
        edges = np.concatenate(([0.0], pts, [a_end]))

        def integrand(a):
            return evaluate(beta, b0 * a) * math.exp(-lam * a - float(mortality_integral(a)))

        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
            total += val
        return total - 1.0

    lo = -float(np.max(np.abs(c.values))) - 1.0
    hi = float(np.max(np.abs(beta.values))) + 1.0
    f_lo, f_hi = F(lo), F(hi)
    if not (f_lo > 0 > f_hi):
        raise AsymptoticsError(f"no sign change in [{lo}, {hi}]: F(lo)={f_lo}, F(hi)={f_hi}")
    # F is +inf on part of the bracket, so move the left end to a finite point first
    while not math.isfinite(f_lo):
        mid = 0.5 * (lo + hi)
        f_mid = F(mid)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            return lo
    return float(optimize.bisect(F, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=200))


# ---------------------------------------------------------------------------
# finite-volume surrogate


@dataclass(frozen=True)
class GeneratorMatrix:
    matrix: sparse.csr_matrix
    h: float
    x_max: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.h * (np.arange(self.n) + 0.5)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def generator_matrix(ing: ModelIngredients, x_max: float, n: int,
                     support: AtomicMeasure | None = None) -> GeneratorMatrix:
    """Upwind finite-volume matrix acting on cell masses.

    Cell ``i`` covers ``[i h, (i+1) h)``.  Mass leaves cell ``i`` towards
    ``i+1`` at rate ``b((i+1) h) / h`` (the last cell loses it through
    ``x_max``), decays at rate ``c`` at the cell centre, and cell ``j``
    sends births of rate ``W_k(x_j)`` to the cell holding ``L_k(x_j)``.
    """
    if n < 1 or x_max <= 0:
        raise ValueError("need n >= 1 and x_max > 0")
    ing.validated()
    h = x_max / n
    centers = h * (np.arange(n) + 0.5)
    faces = h * (np.arange(n) + 1.0)
    if support is not None and len(support) and support.locations[-1] > x_max:
        raise AsymptoticsError("initial support extends beyond x_max")
    out_rate = evaluate(ing.b, faces) / h
    diag = -out_rate - evaluate(ing.c, centers)
    rows = [np.arange(n), np.arange(1, n)]
    cols = [np.arange(n), np.arange(n - 1)]
    vals = [diag, out_rate[:-1]]
    for k, (L, W) in enumerate(channel_arrays(ing.eta, centers)):
        L = np.broadcast_to(L, centers.shape)
        W = np.broadcast_to(W, centers.shape)
        if np.any(L > x_max):
            raise AsymptoticsError(f"offspring location of channel {k} exceeds x_max")
        target = np.minimum((L / h).astype(np.int64), n - 1)
        rows.append(target)
        cols.append(np.arange(n))
        vals.append(W)
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()  # duplicate entries are summed
    return GeneratorMatrix(mat, h, float(x_max), {"n": n, "model_digest": ing.digest()})


def leading_eigenpair(G: GeneratorMatrix | np.ndarray | sparse.spmatrix, tol: float = 1e-10,
                      max_iter: int = 200_000) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of a Metzler matrix by shifted power iteration.

    Iterates ``v <- (G + sigma I) v / |.|_1`` with ``sigma = max |G_ii| + 1``
    until successive growth estimates ``sum((G + sigma I) v) / sum(v)``
    differ by less than ``tol``.  Returns ``(lambda_h, v)`` with ``v >= 0`` and
    unit sum.
    """
    A = G.matrix if isinstance(G, GeneratorMatrix) else G
    A = sparse.csr_matrix(A)
    n = A.shape[0]
    offdiag = A - sparse.diags(A.diagonal())
    if offdiag.nnz and offdiag.data.min() < 0:
        raise AsymptoticsError("matrix is not Metzler (negative off-diagonal entry)")
    sigma = float(np.max(np.abs(A.diagonal()))) + 1.0
    S = (A + sigma * sparse.identity(n, format="csr")).tocsr()
    v = np.full(n, 1.0 / n)
    rho_prev = math.inf
    for it in range(1, max_iter + 1):
        w = S @ v
        rho = float(w.sum())  # v has unit sum
        if rho <= 0:
            raise AsymptoticsError("power iteration collapsed to zero")
        v = w / rho
        if abs(rho - rho_prev) < tol:
            lam = rho - sigma
            logger.debug("power iteration converged after %d iterations", it)
            return lam, v
        rho_prev = rho
    resid = float(np.linalg.norm(A @ v - (rho - sigma) * v, 1))
    raise AsymptoticsError(f"power iteration did not converge in {max_iter} iterations (residual {resid:.3g})")


def eigenvector_measure(G: GeneratorMatrix, v: np.ndarray) -> AtomicMeasure:
    """Unit-mass atomic measure with the eigenvector's cell masses at cell centres."""
    v = np.clip(np.asarray(v, dtype=float), 0.0, None)
    return AtomicMeasure(G.centers, v / v.sum())
