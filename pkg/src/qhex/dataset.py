"""Training samples: 27 spatial neighbors x 3 known directions -> 1 target.

Input layout (81 values): the outer loop runs over the 27 voxel offsets in
lexicographic ``(dz, dy, dx)`` order over ``{-1, 0, 1}^3``, the inner loop over
the neighborhood's 3 known directions sorted by ascending axial angle to the
unknown (ties by lower HAR index). Every value is divided by its own voxel's
b0 and clamped to [0, 2].
"""
import os
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import angle_matrix

CLAMP_MAX = 2.0
N_INPUTS = 81
DATASET_MAGIC = b"QHXD"
DATASET_VERSION = 1

# (dz, dy, dx) lexicographic, stored as (dx, dy, dz) steps
OFFSETS = np.array([(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)])


@dataclass(frozen=True)
class Sample:
    input: np.ndarray
    target: float
    coords: tuple
    unknown: int


@dataclass
class Samples:
    """Column-wise store of many :class:`Sample` records."""

    inputs: np.ndarray
    targets: np.ndarray
    coords: np.ndarray
    unknown: np.ndarray
    provenance: np.ndarray = None

    def __post_init__(self):
        n = len(self.inputs)
        if self.provenance is None:
            self.provenance = np.zeros(n, dtype=int)
        self.provenance = np.asarray(self.provenance)
        if not (len(self.targets) == len(self.coords) == len(self.unknown) == len(self.provenance) == n):
            raise ValueError("sample columns have different lengths")

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, i):
        return Sample(self.inputs[i], float(self.targets[i]), tuple(int(c) for c in self.coords[i]),
                      int(self.unknown[i]))

    def take(self, idx):
        idx = np.asarray(idx)
        return Samples(self.inputs[idx], self.targets[idx], self.coords[idx], self.unknown[idx],
                       self.provenance[idx])

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        return cls(np.concatenate([p.inputs for p in parts]),
                   np.concatenate([p.targets for p in parts]),
                   np.concatenate([p.coords for p in parts]),
                   np.concatenate([p.unknown for p in parts]),
                   np.concatenate([p.provenance for p in parts]))


def interior_mask(volume):
    """Voxels whose full 3x3x3 neighborhood is inside the grid with b0 > 0."""
    b0 = volume.b0
    ok = np.zeros(b0.shape, dtype=bool)
    nx, ny, nz = b0.shape
    if min(nx, ny, nz) < 3:
        return ok
    positive = b0 > 0
    inner = np.ones((nx - 2, ny - 2, nz - 2), dtype=bool)
    for dx, dy, dz in OFFSETS:
        inner &= positive[1 + dx:nx - 1 + dx, 1 + dy:ny - 1 + dy, 1 + dz:nz - 1 + dz]
    ok[1:-1, 1:-1, 1:-1] = inner
    return ok


def _check_mask(volume, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != volume.spatial_shape:
        raise ValueError(f"mask shape {mask.shape} != volume shape {volume.spatial_shape}")
    border = np.ones(mask.shape, dtype=bool)
    border[1:-1, 1:-1, 1:-1] = False
    if np.any(mask & border):
        raise ValueError("mask includes border voxels without a full 3x3x3 neighborhood")
    return mask


def known_order(scheme, nbhd):
    """Known HAR indices in input order: ascending angle to the center, then index."""
    har = scheme.har.directions
    ang = angle_matrix(har[nbhd.knowns], har[nbhd.center])[:, 0]
    return np.asarray(nbhd.knowns)[np.lexsort((nbhd.knowns, ang))]


def _normalized_patches(lar, voxels):
    b0 = lar.b0
    nb = voxels[:, None, :] + OFFSETS[None, :, :]
    x, y, z = nb[..., 0], nb[..., 1], nb[..., 2]
    b0_nb = b0[x, y, z]
    if np.any(~(b0_nb > 0)):
        raise ValueError("invalid b0: nonpositive b0 inside the masked neighborhoods")
    # (n_voxels, 27, n_lar_channels)
    sig = lar.data[x, y, z, 1:] / b0_nb[..., None]
    return np.clip(sig, 0.0, CLAMP_MAX)


def build_inputs(lar, scheme, nbhds, mask):
    """Model inputs for every (masked voxel, neighborhood) pair.

    Returns ``(inputs, voxels)`` with ``inputs`` of shape
    ``(n_voxels, n_neighborhoods, 81)`` and ``voxels`` the ``(n_voxels, 3)``
    coordinates in ``np.argwhere`` order.
    """
    mask = _check_mask(lar, mask)
    if lar.data.shape[3] != 1 + scheme.n_lar:
        raise ValueError(f"LAR volume has {lar.data.shape[3]} channels, scheme expects {1 + scheme.n_lar}")
    voxels = np.argwhere(mask)
    patches = _normalized_patches(lar, voxels)
    cols = np.array([[scheme.lar_channel(k) - 1 for k in known_order(scheme, nb)] for nb in nbhds],
                    dtype=int).reshape(len(nbhds), 3)
    # (n_voxels, n_nbhds, 27, 3) -> flatten offsets outer, knowns inner
    inputs = patches[:, :, cols].transpose(0, 2, 1, 3)
    return inputs.reshape(len(voxels), len(nbhds), N_INPUTS), voxels


def extract_samples(lar, har, scheme, nbhds, mask, provenance=0):
    """One :class:`Sample` per (masked voxel, neighborhood), voxel-major.

    Targets are the HAR unknown channel at the center voxel divided by the
    center b0, clamped to [0, 2].
    """
    if lar.spatial_shape != har.spatial_shape:
        raise ValueError(f"shape mismatch: LAR {lar.spatial_shape} vs HAR {har.spatial_shape}")
    if har.data.shape[3] != 1 + len(scheme.har):
        raise ValueError("HAR volume channel count does not match the scheme")
    if not np.array_equal(lar.b0, har.b0):
        raise ValueError("LAR and HAR volumes have different b0 channels")
    inputs, voxels = build_inputs(lar, scheme, nbhds, mask)
    centers = np.array([nb.center for nb in nbhds], dtype=int)
    x, y, z = voxels.T
    targets = har.data[x, y, z][:, 1 + centers] / har.b0[x, y, z][:, None]
    targets = np.clip(targets, 0.0, CLAMP_MAX)
    nv, nn = len(voxels), len(nbhds)
    return Samples(inputs.reshape(nv * nn, N_INPUTS), targets.reshape(nv * nn),
                   np.repeat(voxels, nn, axis=0), np.tile(centers, nv),
                   np.full(nv * nn, provenance))


@dataclass
class DataSplit:
    train: Samples
    val: Samples
    train_labels: list
    val_labels: list


def split_by_region(samples, provenance=None, val_fraction_regions=0.5):
    """Assign whole provenance groups to train or validation.

    Labels are taken in order of first appearance; the last
    ``round(val_fraction_regions * n_labels)`` (at least 1, at most
    ``n_labels - 1``) go to validation.
    """
    prov = samples.provenance if provenance is None else np.asarray(provenance)
    if len(prov) != len(samples):
        raise ValueError("provenance length does not match the samples")
    _, first = np.unique(prov, return_index=True)
    labels = [prov[i] for i in sorted(first)]
    if len(labels) < 2:
        raise ValueError("cannot split: fewer than 2 regions")
    n_val = int(round(val_fraction_regions * len(labels)))
    n_val = min(max(n_val, 1), len(labels) - 1)
    train_labels, val_labels = labels[:-n_val], labels[-n_val:]
    in_val = np.isin(prov, val_labels)
    return DataSplit(samples.take(np.flatnonzero(~in_val)), samples.take(np.flatnonzero(in_val)),
                     train_labels, val_labels)


def shuffle_batches(n, batch_size, seed):
    """Seeded permutation of ``range(n)`` cut into contiguous batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not isinstance(n, (int, np.integer)):
        n = len(n)
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


_HEADER = struct.Struct("<4sBI")
_RECORD = np.dtype([("input", "<f4", (N_INPUTS,)), ("target", "<f4"),
                    ("coords", "<u2", (3,)), ("unknown", "<u2")])


def save_samples(samples, path):
    """Binary dump: ``QHXD``, version byte, u32 count, packed records."""
    rec = np.empty(len(samples), dtype=_RECORD)
    rec["input"] = samples.inputs
    rec["target"] = samples.targets
    rec["coords"] = samples.coords
    rec["unknown"] = samples.unknown
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(samples)))
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def load_samples(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated dataset header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: dataset version {version} unsupported (expected {DATASET_VERSION})")
    body = raw[_HEADER.size:]
    if len(body) != count * _RECORD.itemsize:
        raise ValueError(f"{path}: expected {count} records, file size disagrees")
    rec = np.frombuffer(body, dtype=_RECORD)
    return Samples(rec["input"].astype(float), rec["target"].astype(float),
                   rec["coords"].astype(int), rec["unknown"].astype(int))
