"""Synthesize HAR volumes from LAR volumes.

Known channels are copied bit for bit. Unknown channels are filled inside the
mask only, either by the trained regressor or by barycentric interpolation of
the three known signals; voxels outside the mask get 0.
"""
import numpy as np

from .dataset import N_INPUTS, _check_mask, build_inputs
from .mlp import predict
from .phantom import Volume4D, har_acquisition


def _check_layout(lar, scheme, nbhds):
    if lar.data.shape[3] != 1 + scheme.n_lar:
        raise ValueError(f"LAR volume has {lar.data.shape[3]} channels, scheme expects {1 + scheme.n_lar}")
    centers = sorted(nb.center for nb in nbhds)
    if centers != sorted(int(u) for u in scheme.unknown_indices):
        raise ValueError("neighborhoods do not match the scheme's unknown directions")


def _passthrough(lar, scheme):
    bvals, bvecs = har_acquisition(scheme)
    out = np.zeros(lar.spatial_shape + (len(bvals),))
    out[..., 0] = lar.data[..., 0]
    out[..., 1 + np.asarray(scheme.lar_indices)] = lar.data[..., 1:]
    return out, bvals, bvecs


def predict_volume(lar, model, scheme, nbhds, mask):
    """Fill the unknown channels with denormalized model predictions."""
    if model.layer_dims[0] != N_INPUTS or model.layer_dims[-1] != 1:
        raise ValueError(f"model maps {model.layer_dims[0]} -> {model.layer_dims[-1]}, expected 81 -> 1")
    _check_layout(lar, scheme, nbhds)
    mask = _check_mask(lar, mask)
    out, bvals, bvecs = _passthrough(lar, scheme)
    if mask.any():
        inputs, voxels = build_inputs(lar, scheme, nbhds, mask)
        nv, nn, _ = inputs.shape
        pred = predict(model, inputs.reshape(nv * nn, N_INPUTS)).reshape(nv, nn)
        x, y, z = voxels.T
        centers = np.array([nb.center for nb in nbhds])
        out[x[:, None], y[:, None], z[:, None], 1 + centers[None, :]] = np.maximum(
            pred * lar.b0[x, y, z][:, None], 0.0)
    return Volume4D(out, bvals, bvecs, lar.voxel_size, "har")


def predict_volume_baseline(lar, scheme, nbhds, mask):
    """Fill the unknown channels with ``sum(w_i * s(known_i))`` per voxel."""
    _check_layout(lar, scheme, nbhds)
    mask = _check_mask(lar, mask)
    out, bvals, bvecs = _passthrough(lar, scheme)
    har = out
    for nb in nbhds:
        known = har[..., 1 + np.asarray(nb.knowns)]
        har[..., 1 + nb.center] = np.where(mask, np.maximum(known @ nb.weights, 0.0), 0.0)
    return Volume4D(out, bvals, bvecs, lar.voxel_size, "har")


def coverage(mask):
    mask = np.asarray(mask, dtype=bool)
    return float(mask.mean()) if mask.size else 0.0
