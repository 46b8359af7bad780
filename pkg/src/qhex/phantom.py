"""Synthetic tensor phantoms standing in for acquired DWI volumes."""
from dataclasses import dataclass, field

import numpy as np

DEFAULT_VOXEL_SIZE = (1.875, 1.875, 2.0)
DEFAULT_DIMS = (16, 16, 8)


@dataclass(frozen=True)
class Tensor3:
    """Symmetric positive semidefinite diffusion tensor in mm^2/s."""

    dxx: float
    dyy: float
    dzz: float
    dxy: float = 0.0
    dxz: float = 0.0
    dyz: float = 0.0

    def __post_init__(self):
        vals = np.linalg.eigvalsh(self.matrix)
        if not np.all(np.isfinite(vals)) or vals.min() < -1e-15:
            raise ValueError(f"tensor is not positive semidefinite (eigenvalues {vals})")

    @property
    def matrix(self):
        return np.array([[self.dxx, self.dxy, self.dxz],
                         [self.dxy, self.dyy, self.dyz],
                         [self.dxz, self.dyz, self.dzz]])

    @property
    def components(self):
        return np.array([self.dxx, self.dyy, self.dzz, self.dxy, self.dxz, self.dyz])

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        m = 0.5 * (m + m.T)
        return cls(m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2])

    @classmethod
    def isotropic(cls, d):
        return cls(d, d, d)

    @classmethod
    def prolate(cls, parallel, perpendicular, axis):
        """Cylindrically symmetric tensor with principal axis ``axis``."""
        e = np.asarray(axis, dtype=float)
        e = e / np.linalg.norm(e)
        return cls.from_matrix(perpendicular * np.eye(3) + (parallel - perpendicular) * np.outer(e, e))


def _quadratic_form(g, D):
    g = np.asarray(g, dtype=float)
    return np.einsum("...i,ij,...j->...", g, D.matrix, g)


def tensor_signal(S0, b, g, D):
    """``S0 * exp(-b * g^T D g)``; broadcasts over leading axes of ``g``."""
    return S0 * np.exp(-np.asarray(b, dtype=float) * _quadratic_form(g, D))


def mixture_signal(S0, b, g, D1, D2, f):
    """Two-compartment signal ``S0 * (f e1 + (1 - f) e2)``."""
    if not 0.0 <= f <= 1.0:
        raise ValueError("volume fraction must lie in [0, 1]")
    b = np.asarray(b, dtype=float)
    return S0 * (f * np.exp(-b * _quadratic_form(g, D1))
                 + (1.0 - f) * np.exp(-b * _quadratic_form(g, D2)))


@dataclass(frozen=True)
class SingleTensor:
    D: Tensor3

    def signal(self, S0, bvals, bvecs):
        return tensor_signal(S0, bvals, bvecs, self.D)


@dataclass(frozen=True)
class TensorMixture:
    D1: Tensor3
    D2: Tensor3
    f: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise ValueError("volume fraction must lie in [0, 1]")

    def signal(self, S0, bvals, bvecs):
        return mixture_signal(S0, bvals, bvecs, self.D1, self.D2, self.f)


@dataclass
class Volume4D:
    """Signals on an ``(nx, ny, nz, nc)`` grid; channel 0 is b=0.

    ``bvecs[0]`` is the zero vector. ``bvals``/``bvecs`` describe every
    channel so a volume is self-contained for DTI fitting.
    """

    data: np.ndarray
    bvals: np.ndarray
    bvecs: np.ndarray
    voxel_size: tuple = DEFAULT_VOXEL_SIZE
    layout: str = "har"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.bvals = np.asarray(self.bvals, dtype=float)
        self.bvecs = np.asarray(self.bvecs, dtype=float)
        if self.data.ndim != 4:
            raise ValueError("volume data must be 4-D (x, y, z, channel)")
        nc = self.data.shape[3]
        if self.bvals.shape != (nc,) or self.bvecs.shape != (nc, 3):
            raise ValueError("bvals/bvecs do not match the channel count")
        if nc and self.bvals[0] != 0:
            raise ValueError("channel 0 must be the b=0 channel")
        self.voxel_size = tuple(float(v) for v in self.voxel_size)

    @property
    def dims(self):
        return self.data.shape

    @property
    def spatial_shape(self):
        return self.data.shape[:3]

    @property
    def b0(self):
        return self.data[..., 0]

    def channels(self, idx, layout=None):
        idx = np.asarray(idx, dtype=int)
        return Volume4D(self.data[..., idx], self.bvals[idx], self.bvecs[idx],
                        self.voxel_size, self.layout if layout is None else layout)


def har_acquisition(scheme):
    """(bvals, bvecs) for the b0 + HAR channel layout."""
    bvals = np.concatenate([[0.0], scheme.har.bvalues])
    bvecs = np.vstack([np.zeros(3), scheme.har.directions])
    return bvals, bvecs


def lar_channel_indices(scheme):
    """HAR-volume channels making up the LAR volume (b0 first)."""
    return np.concatenate([[0], 1 + np.asarray(scheme.lar_indices)])


@dataclass
class PhantomSpec:
    """Region-labelled tensor phantom.

    ``region_map`` holds an index into ``models`` per voxel; -1 marks
    background (zero signal).
    """

    region_map: np.ndarray
    models: list
    names: list = field(default_factory=list)
    S0: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0
    voxel_size: tuple = DEFAULT_VOXEL_SIZE

    def __post_init__(self):
        self.region_map = np.asarray(self.region_map, dtype=int)
        if self.region_map.ndim != 3:
            raise ValueError("region map must be 3-D")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.S0 <= 0:
            raise ValueError("S0 must be > 0")
        if not self.names:
            self.names = [f"region{k}" for k in range(len(self.models))]

    @property
    def dims(self):
        return self.region_map.shape


GM_DIFFUSIVITY = 0.8e-3
WM_PARALLEL = 1.7e-3
WM_PERPENDICULAR = 0.3e-3


def _random_axis(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def slab_regions(dims, n_regions=3):
    """Split the x axis into ``n_regions`` contiguous slabs."""
    edges = np.linspace(0, dims[0], n_regions + 1).round().astype(int)
    rmap = np.empty(dims, dtype=int)
    for k in range(n_regions):
        rmap[edges[k]:edges[k + 1]] = k
    return rmap


def desk_phantom(kind="mixed", dims=DEFAULT_DIMS, seed=0, S0=1.0, noise_sigma=0.0):
    """Default 16x16x8 phantom.

    ``kind="mixed"`` gives GM (isotropic), WM (prolate) and crossing
    (two orthogonal prolates, f=0.5) slabs with fiber axes drawn from
    ``seed``; ``kind="isotropic"`` gives three isotropic slabs.
    """
    rng = np.random.default_rng(seed)
    rmap = slab_regions(dims, 3)
    if kind == "mixed":
        wm_axis = _random_axis(rng)
        a = _random_axis(rng)
        b = np.cross(a, _random_axis(rng))
        b /= np.linalg.norm(b)
        models = [SingleTensor(Tensor3.isotropic(GM_DIFFUSIVITY)),
                  SingleTensor(Tensor3.prolate(WM_PARALLEL, WM_PERPENDICULAR, wm_axis)),
                  TensorMixture(Tensor3.prolate(WM_PARALLEL, WM_PERPENDICULAR, a),
                                Tensor3.prolate(WM_PARALLEL, WM_PERPENDICULAR, b), 0.5)]
        names = ["GM", "WM", "crossing"]
    elif kind == "isotropic":
        models = [SingleTensor(Tensor3.isotropic(d)) for d in (0.6e-3, GM_DIFFUSIVITY, 1.0e-3)]
        names = ["iso0.6", "iso0.8", "iso1.0"]
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    return PhantomSpec(rmap, models, names, S0=S0, noise_sigma=noise_sigma, seed=seed)


def make_phantom(spec, scheme):
    """Render (HAR volume, LAR volume) for ``spec`` on a nested scheme.

    The LAR volume is the channel subset ``{b0} + lar_indices`` of the
    (possibly noisy) HAR volume.
    """
    rmap = spec.region_map
    if rmap.size == 0 or not np.any(rmap >= 0):
        raise ValueError("empty region map")
    if rmap.max() >= len(spec.models):
        raise ValueError("region map references an undefined model")
    bvals, bvecs = har_acquisition(scheme)
    data = np.zeros(rmap.shape + (len(bvals),))
    for k, model in enumerate(spec.models):
        sel = rmap == k
        if sel.any():
            data[sel] = model.signal(spec.S0, bvals, bvecs)
    har = Volume4D(data, bvals, bvecs, spec.voxel_size, "har")
    if spec.noise_sigma > 0:
        har = add_rician_noise(har, spec.noise_sigma, spec.seed)
    return har, har.channels(lar_channel_indices(scheme), layout="lar")


def _normal_pairs(seed, n):
    # Box-Muller on a Philox stream: element k depends only on (seed, k)
    u = np.random.Generator(np.random.Philox(key=seed)).random((n, 2))
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    return r * np.cos(theta), r * np.sin(theta)


def add_rician_noise(v, sigma, seed):
    """Magnitude of the signal plus complex Gaussian noise of scale ``sigma``.

    The noise for sample ``(x, y, z, c)`` is drawn at position
    ``x + nx*(y + ny*(z + nz*c))`` of a counter-based stream keyed by
    ``seed``.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return Volume4D(v.data.copy(), v.bvals, v.bvecs, v.voxel_size, v.layout)
    flat = v.data.ravel(order="F")
    n1, n2 = _normal_pairs(seed, flat.size)
    noisy = np.sqrt((flat + sigma * n1) ** 2 + (sigma * n2) ** 2)
    data = noisy.reshape(v.data.shape, order="F")
    return Volume4D(data, v.bvals, v.bvecs, v.voxel_size, v.layout)
