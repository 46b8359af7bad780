"""
Nested gradient schemes
=======================

Build a 21-direction scheme that sits exactly inside a 61-direction scheme,
then save it and read it back.
"""

import numpy as np

from qhex import build_nested, load_scheme, min_pairwise_angle, save_scheme

# Greedy max-min picks from a jittered Fibonacci pool of 4000 candidates.
# The 21 LAR directions are chosen and polished first, then held fixed
# while the remaining 40 are added.
s = build_nested(n_lar=21, n_har=61, pool_size=4000, seed=7)
print("LAR min angle (deg):", np.degrees(min_pairwise_angle(s.lar)))
print("HAR min angle (deg):", np.degrees(min_pairwise_angle(s.har)))
print("unknown directions:", s.n_unknown)

# LAR is a bitwise subset of HAR
print("nested:", np.array_equal(s.har.directions[s.lar_indices], s.lar.directions))

# The text format keeps 17 significant digits, so a round trip is lossless
save_scheme(s, "scheme.txt")
again = load_scheme("scheme.txt")
print("round trip exact:", again.equals(s))
