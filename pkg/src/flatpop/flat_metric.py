"""Dual bounded-Lipschitz (flat) norm of signed atomic measures.

For ``mu = sum_i s_i delta_{x_i}`` the norm is the value of

    max  sum_i s_i u_i   over test-function values u_i = phi(x_i),

where ``phi`` ranges over the unit ball of the chosen function norm.  Only
the values at the atoms matter, and feasibility of a value vector reduces to
conditions on adjacent atom pairs.

Classic variant (``sup|phi| + Lip(phi) <= 1``)
    Exact LP in ``(u, a)``: ``|u_i| <= a`` and
    ``|u_{i+1} - u_i| <= (1 - a) d_i``.

Paper variant (``|phi| + |phi'| <= 1`` pointwise)
    The largest value reachable at distance ``d`` from ``phi(x) = u`` is the
    solution of ``phi' = 1 - |phi|``::

        u >= 0          : 1 - (1 - u) q
        q - 1 <= u < 0  : 1 - q / (1 + u)
        u < q - 1       : -1 + (1 + u) / q           (q = exp(-d))

    This envelope is concave and C1 but not piecewise linear, so a pair
    ``(u, v)`` is feasible iff ``v <= env(u)`` and ``-v <= env(-u)``.  The two
    linear pieces alone give a strictly larger polytope (for a Dirac pair it
    yields ``2 tanh(d/2)`` instead of ``2(1 - exp(-d/2))``).  The exact
    problem is a smooth convex program whose constraints only couple
    neighbouring atoms; it is solved by a log-barrier Newton method with
    tridiagonal Hessians.
"""
from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded, solveh_banded
from scipy.optimize import linprog

from .measures import AtomicMeasure

logger = logging.getLogger(__name__)

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class NormVariant(enum.Enum):
    PAPER = "paper"
    CLASSIC = "classic"

    @classmethod
    def parse(cls, value: "NormVariant | str") -> "NormVariant":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class FlatNormError(RuntimeError):
    """LP failure while computing a flat norm."""


@dataclass(frozen=True)
class Witness:
    """Optimal test-function values at the atoms.

    ``budget`` is the sup-norm share ``a`` of the classic variant and ``None``
    for the ``paper`` (pointwise) variant.  ``upper_bound`` is a certified upper bound; it
    equals the reported norm up to solver tolerance.
    """

    locations: np.ndarray
    values: np.ndarray
    budget: float | None = None
    upper_bound: float | None = None


# ---------------------------------------------------------------------------
# envelope of phi' = 1 - |phi|


def envelope(d, u):
    """Largest ``phi(x + d)`` over the pointwise unit ball given ``phi(x) = u``."""
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    q = np.exp(-d)
    upper = 1.0 - (1.0 - u) * q
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = 1.0 - q / (1.0 + u)
        lower = -1.0 + (1.0 + u) / q
    return np.where(u >= 0.0, upper, np.where(u >= q - 1.0, mid, lower))


def envelope_slope(d, u):
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    q = np.exp(-d)
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = q / (1.0 + u) ** 2
    return np.where(u >= 0.0, q, np.where(u >= q - 1.0, mid, 1.0 / q))


def paper_pair_violation(d, u, v) -> np.ndarray:
    """Max violation over the four orientations; ``<= 0`` means feasible."""
    return np.maximum.reduce([
        v - envelope(d, u),
        -v - envelope(d, -u),
        u - envelope(d, v),
        -u - envelope(d, -v),
    ])


# ---------------------------------------------------------------------------
# exact solvers


def _split(mu: AtomicMeasure) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(mu.locations), np.asarray(mu.weights)


def _solve(c, A, b, bounds) -> np.ndarray:
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs", options=_HIGHS_OPTIONS)
    if res.status == 2:
        raise FlatNormError("flat-norm LP reported infeasible (internal error)")
    if res.status != 0:
        raise FlatNormError(f"flat-norm LP failed: {res.message}")
    return res.x


def _classic(x: np.ndarray, s: np.ndarray) -> tuple[float, Witness]:
    n = x.size
    d = np.diff(x)
    m = n - 1
    # variables: u_0..u_{n-1}, a
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for sign in (1.0, -1.0):
        # sign*u_i - a <= 0
        idx = np.arange(n)
        rows += [r + idx, r + idx]
        cols += [idx, np.full(n, n)]
        vals += [np.full(n, sign), np.full(n, -1.0)]
        rhs.append(np.zeros(n))
        r += n
    for sign in (1.0, -1.0):
        # sign*(u_{i+1} - u_i) + a d_i <= d_i
        idx = np.arange(m)
        rows += [r + idx, r + idx, r + idx]
        cols += [idx + 1, idx, np.full(m, n)]
        vals += [np.full(m, sign), np.full(m, -sign), d]
        rhs.append(d)
        r += m
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, n + 1)
    )
    c = np.append(-s, 0.0)
    sol = _solve(c, A, np.concatenate(rhs), [(-1.0, 1.0)] * n + [(0.0, 1.0)])
    u = sol[:n]
    upper = float(s @ u)
    # exact repair: scale u so that max|u| + |du_i|/d_i <= 1
    need = np.max(np.abs(u)) + (np.max(np.abs(np.diff(u)) / d) if m else 0.0)
    lam = min(1.0, 1.0 / need) if need > 0 else 1.0
    u = lam * u
    a = float(np.max(np.abs(u)))
    return float(s @ u), Witness(x, u, a, upper)


# pairs farther apart than this are treated as this far apart; the reachable
# set only shrinks, so the value stays a valid lower bound (error ~ exp(-40))
_MAX_GAP = 40.0


def envelope_curvature(d, u):
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    q = np.exp(-d)
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = -2.0 * q / (1.0 + u) ** 3
    return np.where((u < 0.0) & (u >= q - 1.0), mid, 0.0)


def _barrier_terms(d, u):
    """Slacks and derivatives of the pair and box constraints at ``u``.

    Pair constraints (forward orientation, both signs)::

        c+ = env(d, u_i) - u_{i+1} >= 0
        c- = env(d, -u_i) + u_{i+1} >= 0
    """
    ui, vi = u[:-1], u[1:]
    cp_ = envelope(d, ui) - vi
    cm_ = envelope(d, -ui) + vi
    return cp_, cm_


def _barrier_value(t, s, d, u) -> float:
    cp_, cm_ = _barrier_terms(d, u)
    box = np.concatenate([1.0 - u, 1.0 + u])
    if np.any(cp_ <= 0) or np.any(cm_ <= 0) or np.any(box <= 0):
        return np.inf
    return float(-t * (s @ u) - np.log(cp_).sum() - np.log(cm_).sum() - np.log(box).sum())


def _newton_system(t, s, d, u):
    """Gradient and tridiagonal Hessian (``solveh_banded`` upper form)."""
    n = u.size
    ui = u[:-1]
    cp_, cm_ = _barrier_terms(d, u)
    kp = envelope_slope(d, ui)
    km = envelope_slope(d, -ui)
    hp = envelope_curvature(d, ui)
    hm = envelope_curvature(d, -ui)
    g = -t * s + 1.0 / (1.0 - u) - 1.0 / (1.0 + u)
    diag = 1.0 / (1.0 - u) ** 2 + 1.0 / (1.0 + u) ** 2
    off = np.zeros(n - 1)
    # -log(c+): grad(c+) = (kp, -1), hess(c+) = diag(hp, 0)
    g[:-1] -= kp / cp_
    g[1:] += 1.0 / cp_
    diag[:-1] += kp**2 / cp_**2 - hp / cp_
    diag[1:] += 1.0 / cp_**2
    off += -kp / cp_**2
    # -log(c-): grad(c-) = (-km, 1), hess(c-) = diag(hm, 0)
    g[:-1] += km / cm_
    g[1:] -= 1.0 / cm_
    diag[:-1] += km**2 / cm_**2 - hm / cm_
    diag[1:] += 1.0 / cm_**2
    off += -km / cm_**2
    ab = np.zeros((2, n))
    ab[0, 1:] = off
    ab[1] = diag
    return g, ab


def _tridiagonal_solve(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return solveh_banded(ab, rhs)
    except np.linalg.LinAlgError:
        pass
    # Cholesky can fail from round-off once slacks are tiny; LU is the fallback
    full = np.zeros((3, ab.shape[1]))
    full[0, 1:] = ab[0, 1:]
    full[1] = ab[1]
    full[2, :-1] = ab[0, 1:]
    try:
        return solve_banded((1, 1), full, rhs)
    except np.linalg.LinAlgError as exc:
        raise FlatNormError("flat-norm Newton system is singular") from exc


def _paper(x: np.ndarray, s: np.ndarray, rel_gap: float = 1e-9) -> tuple[float, Witness]:
    """Log-barrier interior-point method on the chain of pair constraints.

    Every constraint couples two neighbouring atoms, so each Newton system is
    tridiagonal.  Iterates stay strictly feasible; after centring at barrier
    parameter ``t`` the optimality gap is at most ``m / t`` with ``m`` the
    number of constraints.
    """
    n = x.size
    d = np.minimum(np.diff(x), _MAX_GAP)
    scale = float(np.max(np.abs(s)))
    sn = s / scale
    u = np.zeros(n)
    m = 2 * (n - 1) + 2 * n
    t = 1.0
    newton_steps = 0
    for _outer in range(60):
        for _inner in range(50):
            g, ab = _newton_system(t, sn, d, u)
            step = _tridiagonal_solve(ab, -g)
            newton_steps += 1
            dec = float(-(g @ step))
            if dec <= 1e-9:
                break
            f0 = _barrier_value(t, sn, d, u)
            alpha = 1.0
            while True:
                trial = u + alpha * step
                f1 = _barrier_value(t, sn, d, trial)
                if f1 <= f0 - 0.25 * alpha * dec:
                    break
                alpha *= 0.5
                if alpha < 1e-8:
                    break
            if alpha < 1e-8:
                # decrease below float resolution of the barrier value
                break
            u = trial
        lower = float(sn @ u)
        if m / t <= rel_gap * max(1.0, abs(lower)):
            break
        t *= 50.0
    else:
        logger.warning("paper flat norm: barrier loop stopped with gap %.3g", m / t)
    logger.debug("paper flat norm: n=%d, %d Newton steps", n, newton_steps)
    value = scale * float(sn @ u)
    return value, Witness(x, u, None, value + scale * m / t)


#: Atoms closer than this are merged before solving (both solvers lose accuracy below it).
MIN_GAP = 1e-7


def _merge_close(x: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Move atoms within ``MIN_GAP`` of a cluster's first atom onto it.

    Every unit-ball test function is 1-Lipschitz, so the norm changes by at
    most the returned ``sum |w| * shift``.
    """
    if x.size < 2 or np.min(np.diff(x)) >= MIN_GAP:
        return x, s, 0.0
    starts = [0]
    while True:
        nxt = int(np.searchsorted(x, x[starts[-1]] + MIN_GAP, side="left"))
        if nxt >= x.size:
            break
        starts.append(nxt)
    flags = np.zeros(x.size, dtype=np.int64)
    flags[starts] = 1
    ids = np.cumsum(flags) - 1
    anchors = x[starts]
    shift = float(np.sum(np.abs(s) * (x - anchors[ids])))
    merged = np.bincount(ids, weights=s)
    keep = merged != 0.0
    return anchors[keep], merged[keep], shift


def flat_norm(mu: AtomicMeasure, variant: NormVariant | str = NormVariant.PAPER) -> tuple[float, Witness]:
    """Flat norm of ``mu`` and an optimal (feasible) witness.

    Atoms closer than :data:`MIN_GAP` are merged first; the witness then
    refers to the merged locations and its ``upper_bound`` includes the
    merge error.
    """
    variant = NormVariant.parse(variant)
    x, s = _split(mu)
    x, s, shift = _merge_close(x, s)
    if shift > 0.0:
        value, wit = _flat_norm_separated(x, s, variant)
        return value, Witness(wit.locations, wit.values, wit.budget, (wit.upper_bound or value) + shift)
    return _flat_norm_separated(x, s, variant)


def _flat_norm_separated(x: np.ndarray, s: np.ndarray, variant: NormVariant) -> tuple[float, Witness]:
    if x.size == 0:
        return 0.0, Witness(x, np.empty(0), 0.0 if variant is NormVariant.CLASSIC else None, 0.0)
    if np.all(s >= 0) or np.all(s <= 0):
        # phi = +-1 is optimal: |int phi dmu| <= |mu|(R+)
        u = np.sign(s)
        return float(np.abs(s).sum()), Witness(
            x, u, 1.0 if variant is NormVariant.CLASSIC else None, float(np.abs(s).sum())
        )
    if variant is NormVariant.CLASSIC:
        return _classic(x, s)
    return _paper(x, s)


def flat_distance(mu: AtomicMeasure, nu: AtomicMeasure, variant: NormVariant | str = NormVariant.PAPER) -> float:
    return flat_norm(mu - nu, variant)[0]


def worker_count() -> int:
    """Thread count from ``FLATPOP_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FLATPOP_THREADS", "1")))
    except ValueError:
        return 1


def flat_distances(
    pairs: Sequence[tuple[AtomicMeasure, AtomicMeasure]],
    variant: NormVariant | str = NormVariant.PAPER,
    workers: int | None = None,
) -> list[float]:
    """Distances for many pairs; output order matches input order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(pairs) < 2:
        return [flat_distance(a, b, variant) for a, b in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: flat_distance(ab[0], ab[1], variant), pairs))


def witness_violation(witness: Witness, variant: NormVariant | str) -> float:
    """Largest constraint violation of ``witness`` (``<= 0`` when feasible)."""
    variant = NormVariant.parse(variant)
    x, u = witness.locations, witness.values
    if u.size == 0:
        return 0.0
    d = np.diff(x)
    if variant is NormVariant.CLASSIC:
        a = witness.budget
        viol = [np.max(np.abs(u)) - a, -a, a - 1.0]
        if d.size:
            viol.append(np.max(np.abs(np.diff(u)) - (1.0 - a) * d))
        return float(max(viol))
    viol = [np.max(np.abs(u)) - 1.0]
    if d.size:
        viol.append(float(np.max(paper_pair_violation(d, u[:-1], u[1:]))))
    return float(max(viol))


# ---------------------------------------------------------------------------
# grid oracle


def flat_norm_oracle(
    mu: AtomicMeasure,
    variant: NormVariant | str = NormVariant.PAPER,
    h: float = 0.02,
    pad: float = 2.0,
    max_nodes: int = 200_000,
    scheme: str = "midpoint",
) -> float:
    """Brute-force dual maximisation over piecewise-linear test functions.

    The test function is piecewise linear on a uniform grid of step ``h`` over
    ``[0, max location + pad]`` with the atom locations added as extra nodes.
    The constraint is imposed cell by cell.  For the ``paper`` variant two
    schemes are available:

    ``"endpoint"``
        ``|v| + |v_{j+1} - v_j| / h_j <= 1`` at both cell ends.  Exact for
        piecewise-linear functions, hence a lower bound, but only first-order
        accurate because the extremal test functions are exponentials.
    ``"midpoint"`` (default)
        ``|(v_j + v_{j+1})/2| + |v_{j+1} - v_j| / h_j <= 1``, a second-order
        consistent discretisation of the same constraint.

    The classic variant is exact on any grid containing the atoms.
    """
    if h <= 0:
        raise ValueError("grid step must be positive")
    variant = NormVariant.parse(variant)
    x, s = _split(mu)
    if x.size == 0:
        return 0.0
    top = x.max() + pad
    n_uniform = int(np.ceil(top / h)) + 1
    if n_uniform + x.size > max_nodes:
        raise ValueError(f"oracle grid would need {n_uniform + x.size} nodes (cap {max_nodes})")
    grid = np.unique(np.concatenate([np.linspace(0.0, (n_uniform - 1) * h, n_uniform), x]))
    # merge nodes that nearly coincide with an atom
    keep = np.concatenate(([True], np.diff(grid) > 1e-9))
    grid = grid[keep]
    atom_idx = np.clip(np.searchsorted(grid, x - 1e-9), 0, grid.size - 1)
    N = grid.size
    hj = np.diff(grid)
    m = N - 1
    j = np.arange(m)
    obj = np.zeros(N)
    np.add.at(obj, atom_idx, s)

    rows, cols, vals, rhs = [], [], [], []
    r = 0
    if variant is NormVariant.CLASSIC:
        nv = N + 1
        for sign in (1.0, -1.0):
            idx = np.arange(N)
            rows += [r + idx, r + idx]; cols += [idx, np.full(N, N)]
            vals += [np.full(N, sign), np.full(N, -1.0)]; rhs.append(np.zeros(N)); r += N
        for sign in (1.0, -1.0):
            rows += [r + j, r + j, r + j]; cols += [j + 1, j, np.full(m, N)]
            vals += [np.full(m, sign), np.full(m, -sign), hj]; rhs.append(hj); r += m
        bounds = [(-1.0, 1.0)] * N + [(0.0, 1.0)]
        c = np.append(-obj, 0.0)
    else:
        nv = N
        if scheme == "endpoint":
            # s1*v_{j+end} + s2*(v_{j+1} - v_j)/h_j <= 1
            weights = [((1.0, 0.0), s1) for s1 in (1.0, -1.0)] + [((0.0, 1.0), s1) for s1 in (1.0, -1.0)]
        elif scheme == "midpoint":
            # s1*(v_j + v_{j+1})/2 + s2*(v_{j+1} - v_j)/h_j <= 1
            weights = [((0.5, 0.5), s1) for s1 in (1.0, -1.0)]
        else:
            raise ValueError(f"unknown oracle scheme {scheme!r}")
        for (wj, wj1), s1 in weights:
            for s2 in (1.0, -1.0):
                rows += [r + j, r + j]; cols += [j, j + 1]
                vals += [s1 * wj - s2 / hj, s1 * wj1 + s2 / hj]
                rhs.append(np.ones(m)); r += m
        bounds = [(-1.0, 1.0)] * N
        c = -obj
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, nv)
    ) if r else sparse.csr_matrix((0, nv))
    sol = _solve(c, A if r else None, np.concatenate(rhs) if r else None, bounds)
    return float(obj @ sol[:N])
