import itertools

import numpy as np
import pytest

from qhex.geometry import DirectionSet
from qhex.hemihex import (alternation_report, baseline_predict, baseline_weights, decompose,
                          format_neighborhoods, tangent_basis)
from qhex.scheme import NestedScheme, build_nested


def brute_delaunay_triangle(lar, q, tol=1e-10):
    """All LAR triples (with sign choices) forming an empty-circumcircle
    spherical triangle whose cone contains q or -q."""
    pts = np.vstack([lar, -lar])
    found = set()
    n = len(lar)
    for i, j, k in itertools.combinations(range(n), 3):
        for sj, sk in itertools.product((1, -1), repeat=2):
            a, b, c = lar[i], sj * lar[j], sk * lar[k]
            normal = np.cross(b - a, c - a)
            offset = normal @ a
            if abs(offset) < 1e-14:
                continue
            if offset < 0:
                normal, offset = -normal, -offset
            # empty circumcircle: every point on the origin's side of the plane
            others = np.delete(pts, [i, j, k, i + n, j + n, k + n], axis=0)
            if np.any(others @ normal > offset + tol):
                continue
            lam = np.linalg.solve(np.column_stack([a, b, c]), q)
            if np.all(lam >= -tol) or np.all(lam <= tol):
                found.add(frozenset((i, j, k)))
    return found


def hexagon_scheme(polar=0.5):
    az = np.arange(6) * np.pi / 3
    ring = np.column_stack([np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az),
                            np.full(6, np.cos(polar))])
    dirs = np.vstack([ring[0::2], [[0, 0, 1.0]], ring[1::2]])
    return NestedScheme(DirectionSet(dirs), [0, 1, 2], [3, 4, 5, 6])


def test_one_neighborhood_per_unknown(nested, nbhds):
    assert [nb.center for nb in nbhds] == list(nested.unknown_indices)
    lar = set(nested.lar_indices.tolist())
    for nb in nbhds:
        assert len(set(nb.knowns.tolist())) == 3 and set(nb.knowns.tolist()) <= lar
        assert nb.center not in nb.knowns
        assert np.all(nb.weights >= 0) and abs(nb.weights.sum() - 1) <= 1e-12
        ring = nb.ring_unknowns.tolist()
        assert len(set(ring)) == 3 and nb.center not in ring
        assert set(ring) <= set(nested.unknown_indices.tolist())


def test_knowns_match_exhaustive_search(nested, nbhds):
    lar = nested.lar.directions
    agree = 0
    for nb in nbhds:
        truth = brute_delaunay_triangle(lar, nested.har.directions[nb.center])
        assert len(truth) == 1, "tie on a triangulation edge"
        got = frozenset(int(np.flatnonzero(nested.lar_indices == k)[0]) for k in nb.knowns)
        agree += got in truth
    assert agree == len(nbhds)


def test_every_lar_direction_used(nested, nbhds):
    used = set(np.concatenate([nb.knowns for nb in nbhds]).tolist())
    assert used == set(nested.lar_indices.tolist())


def test_knowns_sorted_by_angle(nested, nbhds):
    har = nested.har.directions
    for nb in nbhds:
        ang = np.arccos(np.minimum(1, np.abs(har[nb.knowns] @ har[nb.center])))
        assert np.all(np.diff(ang) >= 0)


def test_symmetric_center():
    s = NestedScheme(DirectionSet(np.vstack([np.eye(3), np.ones(3) / np.sqrt(3)])), [0, 1, 2], [3])
    (nb,) = decompose(s)
    assert set(nb.knowns.tolist()) == {0, 1, 2}
    assert np.allclose(nb.weights, 1 / 3, atol=1e-9)
    assert len(nb.ring_unknowns) == 0 and not nb.complete
    signals = np.array([0.2, 0.5, 0.8])
    assert baseline_predict(nb, signals) == pytest.approx(signals.mean(), abs=1e-9)


def test_vertex_coincidence():
    eps = 1e-7
    near = np.array([1.0, eps, eps])
    s = NestedScheme(DirectionSet(np.vstack([np.eye(3), [[1, 1, 1.0]], near])), [0, 1, 2, 3], [4])
    (nb,) = decompose(s)
    w = dict(zip(nb.knowns.tolist(), nb.weights))
    assert w[0] == pytest.approx(1.0, abs=1e-6)
    sig = {0: 0.3, 1: 0.9, 2: 0.1, 3: 0.5}
    pred = baseline_predict(nb, [sig[k] for k in nb.knowns])
    assert pred == pytest.approx(0.3, abs=1e-6)


def test_baseline_reproduces_constants(nbhds):
    for nb in nbhds:
        assert baseline_predict(nb, np.full(3, 0.449329)) == pytest.approx(0.449329, abs=1e-12)
        assert np.array_equal(baseline_weights(nb), nb.weights)


def test_antipodal_invariance(nested, nbhds):
    d = nested.har.directions.copy()
    # DirectionSet canonicalizes, so feed raw flipped vectors through a fresh set
    flipped = NestedScheme(DirectionSet(-d), nested.lar_indices, nested.unknown_indices)
    other = decompose(flipped)
    for a, b in zip(nbhds, other):
        assert np.array_equal(a.knowns, b.knowns)
        assert np.allclose(a.weights, b.weights, atol=1e-9)


def test_stability_under_tiny_perturbation(nested, nbhds, rng):
    d = nested.har.directions + rng.normal(scale=1e-7, size=(61, 3))
    moved = NestedScheme(DirectionSet(d), nested.lar_indices, nested.unknown_indices)
    for a, b in zip(nbhds, decompose(moved)):
        assert np.array_equal(a.knowns, b.knowns)
        assert np.array_equal(a.ring_unknowns, b.ring_unknowns)


def test_ideal_hexagon_alternates():
    s = hexagon_scheme()
    nbhds = decompose(s)
    center = nbhds[0]
    assert center.center == 3
    assert set(center.knowns.tolist()) == {0, 1, 2}
    assert set(center.ring_unknowns.tolist()) == {4, 5, 6}
    rep = alternation_report(s, nbhds)
    assert rep.alternates[0] and rep.pair_fraction[0] == 1.0


def test_alternation_report_on_default_scheme(nested, nbhds):
    rep = alternation_report(nested, nbhds)
    assert rep.complete.all()
    assert 0.0 <= rep.aggregate <= 1.0
    # measured once for build_nested(21, 61, 4000, seed=7)
    assert rep.aggregate == pytest.approx(0.55)
    assert rep.mean_pair_fraction == pytest.approx(0.85)


def test_incomplete_neighborhoods_excluded():
    s = NestedScheme(DirectionSet(np.vstack([np.eye(3), [[1, 1, 1.0]], [[1, -1, 1.0]]])),
                     [0, 1, 2], [3, 4])
    rep = alternation_report(s, decompose(s))
    assert not rep.complete.any()
    assert np.isnan(rep.aggregate)
    assert any("incomplete" in line for line in rep.lines())


def test_tangent_basis_orthonormal(rng):
    for c in rng.normal(size=(20, 3)):
        c /= np.linalg.norm(c)
        t1, t2 = tangent_basis(c)
        m = np.array([c, t1, t2])
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)


def test_neighborhood_dump(nbhds):
    lines = format_neighborhoods(nbhds).splitlines()
    assert len(lines) == 40
    fields = lines[0].split()
    assert len(fields) == 10
    assert int(fields[0]) == nbhds[0].center
    assert float(fields[4]) == nbhds[0].weights[0]
