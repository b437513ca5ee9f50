from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatpop.bl_functions import PiecewiseLinearFn, evaluate
from flatpop.flat_metric import (
    NormVariant,
    envelope,
    flat_distance,
    flat_distances,
    flat_norm,
    flat_norm_oracle,
    witness_violation,
)
from flatpop.measures import AtomicMeasure, pair, tv_norm


def dirac_pair(d):
    return AtomicMeasure([0.0, d], [1.0, -1.0])


@pytest.mark.parametrize("d", [0.1, 1.0, 2.0, 5.0, 20.0])
def test_dirac_pair_closed_forms(d):
    assert flat_norm(dirac_pair(d), "classic")[0] == pytest.approx(2 * d / (2 + d), abs=1e-9)
    assert flat_norm(dirac_pair(d), "paper")[0] == pytest.approx(2 * (1 - math.exp(-d / 2)), abs=1e-8)


def test_translation_invariance_of_dirac_pair():
    a = flat_norm(AtomicMeasure([3.0, 4.0], [1.0, -1.0]))[0]
    assert a == pytest.approx(flat_norm(dirac_pair(1.0))[0], abs=1e-9)


def test_same_sign_measures_give_total_variation():
    mu = AtomicMeasure([0.0, 1.0, 5.0], [1.0, 2.0, 0.5])
    for v in NormVariant:
        assert flat_norm(mu, v)[0] == pytest.approx(3.5)
    assert flat_norm(AtomicMeasure.empty())[0] == 0.0


def test_envelope_solves_the_extremal_ode():
    # phi' = 1 - |phi| from phi(0) = u; compare with a fine explicit integration
    for u in (-0.9, -0.3, 0.0, 0.6):
        d, n = 1.5, 150_000
        phi = u
        for _ in range(n):
            phi += (d / n) * (1 - abs(phi))
        assert float(envelope(d, u)) == pytest.approx(phi, abs=1e-4)


def test_worker_count_does_not_change_results():
    rng = np.random.default_rng(3)
    pairs = [
        (AtomicMeasure(rng.uniform(0, 5, 4), rng.uniform(0, 1, 4)), AtomicMeasure(rng.uniform(0, 5, 3), rng.uniform(0, 1, 3)))
        for _ in range(12)
    ]
    assert flat_distances(pairs, workers=1) == flat_distances(pairs, workers=4)


signed_measures = st.integers(1, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 10), min_size=n, max_size=n),
        st.lists(st.floats(-3, 3).filter(lambda w: abs(w) > 1e-3), min_size=n, max_size=n),
    )
).map(lambda t: AtomicMeasure(*t))


@settings(max_examples=60, deadline=None)
@given(signed_measures)
def test_sandwich_and_witness_feasibility(mu):
    paper, wp = flat_norm(mu, "paper")
    classic, wc = flat_norm(mu, "classic")
    assert classic <= paper + 1e-8
    assert paper <= 2 * classic + 1e-8
    assert paper <= tv_norm(mu) + 1e-9
    assert witness_violation(wp, "paper") <= 1e-9
    assert witness_violation(wc, "classic") <= 1e-9
    # the witness attains the value (up to the certified merge shift for near-coincident atoms)
    attained = float(np.dot(mu.weights, np.interp(mu.locations, wp.locations, wp.values)))
    assert attained == pytest.approx(paper, abs=1e-7 + 2 * (wp.upper_bound - paper))


@settings(max_examples=40, deadline=None)
@given(signed_measures, signed_measures)
def test_triangle_inequality(mu, nu):
    lhs = flat_norm(mu + nu)[0]
    assert lhs <= flat_norm(mu)[0] + flat_norm(nu)[0] + 1e-7


@settings(max_examples=30, deadline=None)
@given(signed_measures)
def test_any_unit_test_function_is_a_lower_bound(mu):
    # phi = exp(-|x - a|)/2 style functions: use the tent-free exponential bump (|phi| + |phi'| <= 1)
    a = float(mu.locations[0])
    phi = lambda x: 0.5 * np.exp(-np.abs(x - a))  # noqa: E731
    assert abs(pair(mu, phi)) <= flat_norm(mu)[0] + 1e-8


def test_oracle_agrees_on_small_instances():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        mu = AtomicMeasure(rng.uniform(0, 10, n), rng.uniform(-3, 3, n))
        for v in NormVariant:
            assert abs(flat_norm(mu, v)[0] - flat_norm_oracle(mu, v, h=0.02)) <= 5e-3


def test_endpoint_oracle_is_a_lower_bound():
    mu = dirac_pair(2.0)
    exact = flat_norm(mu)[0]
    assert flat_norm_oracle(mu, "paper", h=0.05, scheme="endpoint") <= exact + 1e-9


def test_large_instance_is_fast_and_consistent():
    x = np.linspace(0, 50, 4000)
    w = np.sin(x) * np.exp(-0.05 * x)
    mu = AtomicMeasure(x, w)
    value, wit = flat_norm(mu)
    assert witness_violation(wit, "paper") <= 1e-9
    assert wit.upper_bound - value <= 1e-7 * max(1.0, value)
