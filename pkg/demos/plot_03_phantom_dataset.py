"""
Tensor phantoms and training samples
====================================

Synthesize a three-region phantom, then cut it into 81-value input patches
with one target signal each.
"""

import numpy as np

from qhex import build_nested, decompose, desk_phantom, make_phantom
from qhex.dataset import extract_samples, interior_mask
from qhex.dti import fit_dti

s = build_nested(seed=7)
nbhds = decompose(s)

# Slabs along x: isotropic gray matter, one fiber, two crossing fibers
spec = desk_phantom("mixed", dims=(16, 16, 8), seed=1)
har, lar = make_phantom(spec, s)
print("HAR volume", har.dims, " LAR volume", lar.dims)

fit = fit_dti(har, interior_mask(har))
fa = fit.fa()
for label, name in enumerate(spec.names):
    print(f"{name:>10s} mean FA {fa[(spec.region_map == label) & fit.mask].mean():.3f}")

# 27 voxels x 3 known directions, divided by each voxel's b0
samples = extract_samples(lar, har, s, nbhds, interior_mask(lar))
print("samples:", len(samples), " input width:", samples.inputs.shape[1])
print("targets in [0, 2]:", samples.targets.min() >= 0, samples.targets.max() <= 2)

# Rician noise is optional; sigma is absolute, here 2% of S0 = 1
noisy, _ = make_phantom(desk_phantom("mixed", seed=1, noise_sigma=0.02), s)
print("noise std in WM:", np.std(noisy.data[12, 8, 4, 1:] - har.data[12, 8, 4, 1:]))
