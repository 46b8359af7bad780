"""
HemiHex neighborhoods
=====================

Every unknown direction falls inside one triangle of the LAR triangulation.
Its three corners feed the regressor and define the barycentric baseline.
"""

import numpy as np

from qhex import alternation_report, build_nested, decompose
from qhex.geometry import build_triangulation, spherical_triangle_areas

s = build_nested(seed=7)
tri = build_triangulation(s.lar)

# The triangulation of {+d, -d} tiles the whole sphere
print("triangles:", len(tri), " area / 4pi:", spherical_triangle_areas(tri).sum() / (4 * np.pi))

nbhds = decompose(s)
nb = nbhds[0]
print("center", nb.center, "knowns", nb.knowns, "weights", np.round(nb.weights, 3))
print("ring unknowns", nb.ring_unknowns)

# A signal that is constant over directions is reproduced exactly
print("constant reproduction:", max(abs(nb.weights.sum() - 1) for nb in nbhds))

# How often the six ring members alternate known / unknown around the center
report = alternation_report(s, nbhds)
print(list(report.lines())[-1])
