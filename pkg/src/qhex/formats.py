"""``dvol`` volume container.

A volume ``name`` is two files: ``name.dvol.json`` (header) and
``name.dvol.raw`` holding little-endian float32 samples with x varying
fastest, then y, z and channel.
"""
import json
import os

import numpy as np

from .phantom import Volume4D, har_acquisition, lar_channel_indices

DVOL_FORMAT = "dvol"
DVOL_VERSION = 1


def dvol_prefix(path):
    path = os.fspath(path)
    for suffix in (".dvol.json", ".dvol.raw", ".dvol"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def dvol_paths(path):
    prefix = dvol_prefix(path)
    return prefix + ".dvol.json", prefix + ".dvol.raw"


def dvol_exists(path):
    return all(os.path.exists(p) for p in dvol_paths(path))


def _write_atomic(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_array(path, data, layout, scheme_path=None, voxel_size=(1.875, 1.875, 2.0),
                channel0_is_b0=True):
    """Write a 4-D array as a dvol pair. ``scheme_path`` is stored relative
    to the header's directory."""
    data = np.asarray(data)
    if data.ndim == 3:
        data = data[..., None]
    header_path, raw_path = dvol_paths(path)
    scheme_ref = None
    if scheme_path is not None:
        base = os.path.dirname(os.path.abspath(header_path))
        scheme_ref = os.path.relpath(os.path.abspath(scheme_path), base).replace(os.sep, "/")
    header = {
        "format": DVOL_FORMAT,
        "version": DVOL_VERSION,
        "dims": [int(d) for d in data.shape],
        "voxel_size": [float(v) for v in voxel_size],
        "dtype": "f32",
        "scheme": scheme_ref,
        "channel0_is_b0": bool(channel0_is_b0),
        "layout": layout,
    }
    _write_atomic(raw_path, data.astype("<f4").ravel(order="F").tobytes())
    _write_atomic(header_path, (json.dumps(header, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_volume(path, volume, scheme_path=None):
    write_array(path, volume.data, volume.layout, scheme_path, volume.voxel_size, True)


def read_header(path):
    header_path, raw_path = dvol_paths(path)
    with open(header_path, encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{header_path}: invalid JSON header ({exc})") from None
    if header.get("format") != DVOL_FORMAT:
        raise ValueError(f"{header_path}: not a dvol header")
    if header.get("version") != DVOL_VERSION:
        raise ValueError(f"{header_path}: dvol version {header.get('version')} unsupported "
                         f"(expected {DVOL_VERSION})")
    if header.get("dtype") != "f32":
        raise ValueError(f"{header_path}: unsupported dtype {header.get('dtype')!r}")
    dims = header.get("dims")
    if not isinstance(dims, list) or len(dims) != 4 or min(dims) < 0:
        raise ValueError(f"{header_path}: dims must be [nx, ny, nz, nc]")
    return header


def read_array(path):
    """Return ``(data, header)``; data is float64 with shape ``dims``."""
    header = read_header(path)
    _, raw_path = dvol_paths(path)
    dims = tuple(header["dims"])
    with open(raw_path, "rb") as fh:
        raw = fh.read()
    if len(raw) != 4 * int(np.prod(dims)):
        raise ValueError(f"{raw_path}: {len(raw)} bytes, header dims {list(dims)} need {4 * int(np.prod(dims))}")
    data = np.frombuffer(raw, dtype="<f4").reshape(dims, order="F").astype(float)
    return data, header


def scheme_path_of(path, header=None):
    header = header or read_header(path)
    if not header.get("scheme"):
        return None
    base = os.path.dirname(os.path.abspath(dvol_paths(path)[0]))
    return os.path.normpath(os.path.join(base, header["scheme"]))


def read_volume(path, scheme):
    """Load a dvol as a :class:`Volume4D` with acquisition taken from ``scheme``."""
    data, header = read_array(path)
    if not header.get("channel0_is_b0", False):
        raise ValueError(f"{dvol_paths(path)[0]}: channel 0 is not a b0 channel")
    bvals, bvecs = har_acquisition(scheme)
    layout = header.get("layout", "har")
    if layout == "lar":
        idx = lar_channel_indices(scheme)
        bvals, bvecs = bvals[idx], bvecs[idx]
    elif layout != "har":
        raise ValueError(f"{dvol_paths(path)[0]}: layout {layout!r} is not a diffusion volume")
    if data.shape[3] != len(bvals):
        raise ValueError(f"{dvol_paths(path)[0]}: {data.shape[3]} channels, scheme {layout} layout "
                         f"needs {len(bvals)}")
    return Volume4D(data, bvals, bvecs, tuple(header["voxel_size"]), layout)
