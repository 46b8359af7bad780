"""
Three-phase training
====================

Train the 81-64-32-1 network with SGDM, then Adam, then RMSprop, and watch
the per-iteration log. Two epochs per phase keep this demo short.
"""

from qhex import TrainConfig, build_nested, decompose, desk_phantom, make_phantom
from qhex.dataset import Samples, extract_samples, interior_mask, split_by_region
from qhex.mlp import Phase, init_params, train

s = build_nested(seed=7)
nbhds = decompose(s)

parts = []
for k, seed in enumerate(range(1, 5)):
    har, lar = make_phantom(desk_phantom("mixed", seed=seed), s)
    parts.append(extract_samples(lar, har, s, nbhds, interior_mask(lar), provenance=k))

# Whole phantom instances go to one side of the split, never both
split = split_by_region(Samples.concatenate(parts), val_fraction_regions=0.5)
print("train instances", list(map(int, split.train_labels)), " val instances", list(map(int, split.val_labels)))

cfg = TrainConfig(phases=[Phase("sgdm", 1e-2, 2), Phase("adam", 1e-3, 2), Phase("rmsprop", 1e-4, 2)])
model, tlog = train(init_params(seed=0), split, cfg)

# the log has one row per iteration; print the last row of each phase
phase = tlog.column("phase")
for k in (1, 2, 3):
    row = tlog.records[int((phase == k).nonzero()[0][-1])]
    print(f"phase {k}: train RMSE {row[4]:.4f}  val RMSE {row[6]:.4f}")
tlog.save("train_log.csv")
