"""HemiHex neighborhoods of a nested scheme.

Every unknown HAR direction sits inside one triangle of the spherical
Delaunay triangulation of the LAR directions. The triangle's three corners
are the known directions the regressor reads; the three nearest other unknowns
close the approximate hexagon around the center and are kept for the
alternation diagnostic only.
"""
from dataclasses import dataclass

import numpy as np

from .geometry import angle_matrix, build_triangulation, locate


@dataclass(frozen=True, eq=False)
class HemiHexNeighborhood:
    """One unknown direction and its known / unknown ring.

    All indices point into the HAR scheme. ``knowns`` are sorted by
    ascending axial angle to the center (ties by lower index) and
    ``weights`` are the barycentric weights aligned with them.
    """

    center: int
    knowns: np.ndarray
    ring_unknowns: np.ndarray
    weights: np.ndarray

    @property
    def complete(self):
        return len(self.ring_unknowns) == 3


def _sorted_by_angle(center_dir, dirs, indices):
    ang = angle_matrix(dirs[indices], center_dir)[:, 0]
    return np.lexsort((indices, ang))


def decompose(s):
    """One :class:`HemiHexNeighborhood` per unknown, in unknown-index order."""
    if s.n_lar < 3:
        raise ValueError("need at least 3 LAR directions to triangulate")
    har = s.har.directions
    tri = build_triangulation(s.lar)
    unknown = s.unknown_indices
    faces, weights = locate(tri, har[unknown])
    corners = s.lar_indices[tri.triangles[faces]]
    among = angle_matrix(har[unknown])
    np.fill_diagonal(among, np.inf)
    out = []
    for row, u in enumerate(unknown):
        order = _sorted_by_angle(har[u], har, corners[row])
        knowns = corners[row][order]
        w = weights[row][order]
        n_ring = min(3, len(unknown) - 1)
        ring = unknown[np.lexsort((unknown, among[row]))[:n_ring]]
        for arr in (knowns, w, ring):
            arr.setflags(write=False)
        out.append(HemiHexNeighborhood(int(u), knowns, ring, w))
    return out


def baseline_weights(nbhd):
    """Barycentric weights of the linear spherical-interpolation predictor."""
    return nbhd.weights


def baseline_predict(nbhd, known_signals):
    """``sum(w_i * s(known_i))`` with signals aligned to ``nbhd.knowns``."""
    return np.tensordot(np.asarray(known_signals, dtype=float), nbhd.weights, axes=([-1], [0]))


def tangent_basis(c):
    """Orthonormal tangent-plane basis at ``c``.

    The first axis is the least-aligned coordinate axis (lowest index on
    ties) Gram-Schmidt-projected against ``c``.
    """
    c = np.asarray(c, dtype=float)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(c)))] = 1.0
    t1 = axis - (axis @ c) * c
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(c, t1)


@dataclass
class AlternationReport:
    """Tangent-plane K/U alternation around each center.

    ``pair_fraction[i]`` is the share of the 6 cyclically adjacent ring pairs
    whose roles differ (NaN when incomplete); ``alternates[i]`` is True when
    all 6 differ. ``aggregate`` is the fraction of complete neighborhoods that
    alternate strictly.
    """

    centers: np.ndarray
    complete: np.ndarray
    alternates: np.ndarray
    pair_fraction: np.ndarray
    aggregate: float
    mean_pair_fraction: float

    def lines(self):
        yield "center complete alternates pair_fraction"
        for row in zip(self.centers, self.complete, self.alternates, self.pair_fraction):
            c, ok, alt, frac = row
            status = "complete" if ok else "incomplete"
            yield f"{c} {status} {int(alt)} {frac:.6f}"
        yield f"aggregate {self.aggregate:.6f} mean_pair_fraction {self.mean_pair_fraction:.6f}"


def alternation_report(s, nbhds):
    har = s.har.directions
    centers, complete, alternates, pair_fraction = [], [], [], []
    for nb in nbhds:
        centers.append(nb.center)
        if not nb.complete:
            complete.append(False)
            alternates.append(False)
            pair_fraction.append(np.nan)
            continue
        c = har[nb.center]
        t1, t2 = tangent_basis(c)
        members = np.concatenate([nb.knowns, nb.ring_unknowns])
        roles = np.array([1] * len(nb.knowns) + [0] * len(nb.ring_unknowns))
        m = har[members]
        # antipodal representative on the center's side
        m = m * np.sign(m @ c)[:, None]
        azimuth = np.arctan2(m @ t2, m @ t1)
        ring = roles[np.argsort(azimuth, kind="stable")]
        differs = ring != np.roll(ring, -1)
        complete.append(True)
        alternates.append(bool(differs.all()))
        pair_fraction.append(differs.mean())
    complete = np.array(complete, dtype=bool)
    alternates = np.array(alternates, dtype=bool)
    pair_fraction = np.array(pair_fraction, dtype=float)
    if complete.any():
        aggregate = float(alternates[complete].mean())
        mean_pair = float(pair_fraction[complete].mean())
    else:
        aggregate = mean_pair = float("nan")
    return AlternationReport(np.array(centers), complete, alternates, pair_fraction,
                             aggregate, mean_pair)


def format_neighborhoods(nbhds):
    """Neighborhood dump, one ``center k1 k2 k3 w1 w2 w3 u1 u2 u3`` line each."""
    lines = []
    for nb in nbhds:
        ring = list(nb.ring_unknowns) + [-1] * (3 - len(nb.ring_unknowns))
        fields = ([str(nb.center)] + [str(k) for k in nb.knowns]
                  + [f"{w:.17g}" for w in nb.weights] + [str(u) for u in ring])
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"
