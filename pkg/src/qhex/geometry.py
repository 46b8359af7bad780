"""Unit-sphere primitives under antipodal (q-space) symmetry.

Directions are plain ``(3,)`` / ``(n, 3)`` float64 arrays. A direction and its
antipode describe the same diffusion measurement, so every distance in this
module is the axial angle ``arccos(|u . v|)`` and every direction is stored in
its canonical hemisphere representative.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

CONTAINMENT_TOL = 1e-9
DISTINCT_TOL = 1e-9
# rows already unit to this level are kept verbatim so nesting stays bitwise
_UNIT_KEEP_TOL = 4.5e-16


def canonicalize(v):
    """Return the canonical hemisphere representative of each direction.

    The representative has z > 0, or z == 0 and y > 0, or z == y == 0 and
    x > 0. Works on a single ``(3,)`` vector or an ``(n, 3)`` stack.
    """
    v = np.array(v, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    flip = (z < 0) | ((z == 0) & (y < 0)) | ((z == 0) & (y == 0) & (x < 0))
    v[flip] = -v[flip]
    # avoid signed zeros so equal directions are bitwise equal
    v = v + 0.0
    return v[0] if single else v


def unit_vector(x, y=None, z=None):
    """Normalized, canonicalized direction from components."""
    if y is None:
        v = np.asarray(x, dtype=float)
    else:
        v = np.array([x, y, z], dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    return canonicalize(v / n)


def _normalize_rows(v):
    norms = np.linalg.norm(v, axis=1)
    if np.any(~np.isfinite(norms)) or np.any(norms == 0):
        raise ValueError("cannot normalize a zero or non-finite vector")
    redo = np.abs(norms - 1.0) > _UNIT_KEEP_TOL
    if np.any(redo):
        v = v.copy()
        v[redo] = v[redo] / norms[redo, None]
    return v


def angular_distance(u, v):
    """Axial angle between directions, ``arccos(min(1, |u . v|))``.

    Broadcasts over leading dimensions; result lies in [0, pi/2].
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dot = np.abs(np.sum(u * v, axis=-1))
    return np.arccos(np.minimum(1.0, dot))


def angle_matrix(a, b=None):
    """Pairwise axial angles between the rows of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
    return np.arccos(np.minimum(1.0, np.abs(a @ b.T)))


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """Ordered set of canonical unit directions with per-direction b-values.

    Parameters
    ----------
    directions : array-like, shape (n, 3)
        Gradient directions; normalized and canonicalized on construction.
    bvalues : array-like or float, optional
        b-values in s/mm^2. A scalar is broadcast. Default 1000.
    label : str, optional
        Free-form name carried into error messages.
    """

    directions: np.ndarray
    bvalues: np.ndarray = 1000.0
    label: str = ""
    _min_angle: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = np.array(self.directions, dtype=float)
        if d.ndim == 1:
            d = d[None, :]
        if d.ndim != 2 or d.shape[1] != 3 or len(d) < 1:
            raise ValueError("directions must have shape (n, 3) with n >= 1")
        d = canonicalize(_normalize_rows(d))
        b = np.broadcast_to(np.asarray(self.bvalues, dtype=float), (len(d),)).copy()
        if np.any(b < 0) or np.any(~np.isfinite(b)):
            raise ValueError("b-values must be finite and nonnegative")
        min_angle = _min_offdiag(angle_matrix(d)) if len(d) > 1 else np.pi / 2
        if min_angle <= DISTINCT_TOL:
            raise ValueError(f"antipodal duplicate in direction set {self.label!r}")
        d.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "bvalues", b)
        object.__setattr__(self, "_min_angle", float(min_angle))

    def __len__(self):
        return len(self.directions)

    def __getitem__(self, idx):
        return self.directions[idx]

    def subset(self, indices, label=None):
        indices = np.asarray(indices, dtype=int)
        return DirectionSet(self.directions[indices], self.bvalues[indices],
                            self.label if label is None else label)

    def equals(self, other, tol=0.0):
        return (len(self) == len(other)
                and np.all(np.abs(self.directions - other.directions) <= tol)
                and np.all(np.abs(self.bvalues - other.bvalues) <= tol))


def _min_offdiag(m):
    m = m.copy()
    np.fill_diagonal(m, np.inf)
    return m.min()


def min_pairwise_angle(s):
    """Smallest axial angle over all unordered pairs of a direction set.

    Raises
    ------
    ValueError
        For a set with fewer than two directions ("degenerate set").
    """
    d = s.directions if isinstance(s, DirectionSet) else np.atleast_2d(s)
    if len(d) < 2:
        raise ValueError("degenerate set: need at least two directions")
    return float(_min_offdiag(angle_matrix(d)))


@dataclass(frozen=True, eq=False)
class SphericalTriangulation:
    """Delaunay triangulation of the sphere over an antipodally symmetric set.

    ``points`` stacks the canonical directions followed by their antipodes, so
    symmetrized index ``k`` refers to canonical direction ``k % n``.
    ``simplices`` index into ``points`` and are oriented counter-clockwise
    seen from outside; ``triangles`` gives the same faces as canonical
    indices.
    """

    vertices: DirectionSet
    simplices: np.ndarray
    points: np.ndarray
    _inverse: np.ndarray = field(repr=False)

    @property
    def triangles(self):
        return self.simplices % len(self.vertices)

    @property
    def signs(self):
        return np.where(self.simplices < len(self.vertices), 1.0, -1.0)

    def corners(self):
        """Signed vertex vectors, shape (n_triangles, 3, 3)."""
        return self.points[self.simplices]

    def __len__(self):
        return len(self.simplices)


def build_triangulation(s):
    """Spherical Delaunay triangulation as the convex hull of ``{+d, -d}``.

    Raises
    ------
    ValueError
        "degenerate configuration" when the symmetrized set is coplanar (all
        directions on one great circle) or too small.
    """
    if not isinstance(s, DirectionSet):
        s = DirectionSet(s)
    d = s.directions
    pts = np.vstack([d, -d])
    if len(pts) < 4:
        raise ValueError("degenerate configuration: need at least 4 symmetrized points")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise ValueError(f"degenerate configuration: {exc.args[0].splitlines()[0]}") from None
    simp = hull.simplices.copy()
    if len(np.unique(simp)) != len(pts):
        raise ValueError("degenerate configuration: some directions are not hull vertices")
    corners = pts[simp]
    # orient outward
    vol = np.einsum("ij,ij->i", corners[:, 0], np.cross(corners[:, 1], corners[:, 2]))
    if np.any(np.abs(vol) < 1e-14):
        raise ValueError("degenerate configuration: hull face through the origin")
    flip = vol < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    corners = pts[simp]
    # rows of inverse(M^T) map a query q to raw cone coordinates
    inverse = np.linalg.inv(np.transpose(corners, (0, 2, 1)))
    simp.setflags(write=False)
    pts.setflags(write=False)
    inverse.setflags(write=False)
    return SphericalTriangulation(s, simp, pts, inverse)


def spherical_triangle_areas(t):
    """Solid angle of every triangle (Van Oosterom and Strackee)."""
    a, b, c = np.moveaxis(t.corners(), 1, 0)
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = (1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c)
           + np.einsum("ij,ij->i", c, a))
    return 2.0 * np.arctan2(num, den)


def _cone_weights(t, q):
    # (Q, F, 3) barycentric weights of the central projection onto each face
    raw = np.einsum("fij,qj->qfi", t._inverse, q)
    total = raw.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = raw / total
    # faces facing away from q have negative total; they cannot contain it
    w[np.broadcast_to(total <= 0, w.shape)] = -np.inf
    return w


def locate(t, queries, chunk=2048):
    """Vectorized :func:`containing_triangle` over an ``(m, 3)`` stack.

    Returns
    -------
    tri : (m,) int
        Index of the containing triangle in ``t.simplices``.
    weights : (m, 3) float
        Clamped, renormalized barycentric weights aligned with
        ``t.simplices[tri]``.
    """
    q = canonicalize(np.atleast_2d(np.asarray(queries, dtype=float)))
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    tri = np.empty(len(q), dtype=int)
    weights = np.empty((len(q), 3))
    for start in range(0, len(q), chunk):
        w = _cone_weights(t, q[start:start + chunk])
        inside = np.all(w >= -CONTAINMENT_TOL, axis=-1)
        found = inside.any(axis=1)
        if not found.all():
            bad = start + int(np.flatnonzero(~found)[0])
            raise RuntimeError(f"triangulation gap at query {q[bad].tolist()}")
        first = inside.argmax(axis=1)
        ww = np.clip(w[np.arange(len(first)), first], 0.0, 1.0)
        ww /= ww.sum(axis=1, keepdims=True)
        tri[start:start + chunk] = first
        weights[start:start + chunk] = ww
    return tri, weights


def containing_triangle(t, q):
    """Triangle containing direction ``q`` and its barycentric weights.

    ``q`` is canonicalized first, so ``q`` and ``-q`` give identical answers.
    Among triangles whose weights are all >= -1e-9 the lowest index wins.

    Returns
    -------
    indices : (3,) int
        Canonical direction indices of the triangle's vertices.
    weights : (3,) float
        Nonnegative weights summing to 1, aligned with ``indices``.
    """
    tri, w = locate(t, np.asarray(q, dtype=float)[None, :])
    return t.triangles[tri[0]], w[0]


def fibonacci_hemisphere(n):
    """Deterministic spherical Fibonacci lattice on the upper hemisphere."""
    k = np.arange(n) + 0.5
    z = 1.0 - k / n
    r = np.sqrt(1.0 - z * z)
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def generate_candidates(n, seed, jitter=0.1):
    """Candidate pool of ``n`` hemisphere directions.

    A Fibonacci lattice is randomly rotated about z and each point perturbed
    by Gaussian noise of ``jitter`` times the mean lattice spacing, all
    driven by ``np.random.default_rng(seed)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = fibonacci_hemisphere(n)
    spin = rng.uniform(0, 2 * np.pi)
    c, s = np.cos(spin), np.sin(spin)
    pts = pts @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    spacing = np.sqrt(2 * np.pi / n)
    pts = pts + rng.normal(scale=jitter * spacing, size=pts.shape)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return DirectionSet(pts, 1000.0, label=f"candidates(n={n}, seed={seed})")
