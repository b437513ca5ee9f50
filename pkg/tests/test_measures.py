from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatpop.bl_functions import PiecewiseLinearFn
from flatpop.flat_metric import flat_distance
from flatpop.measures import (
    AtomicMeasure,
    coalesce,
    hahn_jordan,
    pair,
    push_forward,
    tv_norm,
)


def test_canonical_form_merges_and_drops():
    mu = AtomicMeasure([2.0, 1.0, 2.0, 3.0], [1.0, 0.5, 2.0, 0.0])
    assert mu.atoms == [(1.0, 0.5), (2.0, 3.0)]
    nu = AtomicMeasure([1.0, 1.0 + 1e-14], [1.0, -1.0])
    assert len(nu) == 0


def test_negative_location_rejected():
    with pytest.raises(ValueError):
        AtomicMeasure([-1.0], [1.0])


def test_arithmetic_and_norms():
    mu = AtomicMeasure.dirac(1.0, 2.0) - AtomicMeasure.dirac(3.0, 0.5)
    assert tv_norm(mu) == pytest.approx(2.5)
    assert mu.mass == pytest.approx(1.5)
    pos, neg = hahn_jordan(mu)
    assert pos.atoms == [(1.0, 2.0)] and neg.atoms == [(3.0, 0.5)]
    assert (3.0 * mu).mass == pytest.approx(4.5)
    assert (-mu).mass == pytest.approx(-1.5)


def test_pair_and_push_forward():
    mu = AtomicMeasure([0.0, 2.0], [1.0, 3.0])
    phi = PiecewiseLinearFn([0, 4], [0, 4])
    assert pair(mu, phi) == pytest.approx(6.0)
    assert pair(mu, lambda x: x**2) == pytest.approx(12.0)
    moved = push_forward(mu, lambda x: x + 1.0)
    assert moved.atoms == [(1.0, 1.0), (3.0, 3.0)]
    with pytest.raises(ValueError):
        push_forward(mu, lambda x: x - 1.0)


def test_json_round_trip():
    mu = AtomicMeasure([0.1, 0.7], [1 / 3, 2.0])
    assert AtomicMeasure.from_dict(mu.to_dict()).atoms == mu.atoms


def test_coalesce_examples():
    mu = AtomicMeasure([1.0, 1.05, 3.0], [1.0, 1.0, 1e-9])
    out, err = coalesce(mu, radius=0.1, w_min=1e-6)
    assert out.atoms == [(1.025, 2.0)]
    assert err == pytest.approx(0.05 + 1e-9)
    same, zero = coalesce(mu, 0.0, 0.0)
    assert same.atoms == mu.atoms and zero == 0.0
    with pytest.raises(ValueError):
        coalesce(AtomicMeasure.dirac(1.0, -1.0), 0.1, 0.0)


positive_measures = st.integers(1, 15).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 10), min_size=n, max_size=n),
        st.lists(st.floats(1e-3, 3), min_size=n, max_size=n),
    )
).map(lambda t: AtomicMeasure(*t))


@settings(max_examples=60, deadline=None)
@given(positive_measures, st.floats(0, 1), st.floats(0, 0.5))
def test_coalesce_bound_is_certified(mu, radius, w_min):
    out, err = coalesce(mu, radius, w_min)
    assert out.is_positive
    assert len(out) <= len(mu)
    assert flat_distance(mu, out) <= err + 1e-8
    if w_min == 0:
        assert out.mass == pytest.approx(mu.mass, rel=1e-12)
