"""Nested gradient schemes: greedy max-min construction and 1-opt polish.

The low angular resolution (LAR) scheme is grown greedily from a candidate
pool and polished by single-direction swaps; the high angular resolution
(HAR) scheme is then grown around it with the LAR directions held fixed, so
LAR is an exact subset of HAR.
"""
import os
from dataclasses import dataclass

import numpy as np

from .geometry import DirectionSet, angle_matrix, generate_candidates, min_pairwise_angle

SCHEME_HEADER = "#qhex-scheme v1"
_IMPROVE_TOL = 1e-12


class SchemeFormatError(ValueError):
    """Malformed scheme file; ``lineno`` is 1-based."""

    def __init__(self, msg, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = f"{path}:{lineno}: " if lineno is not None else ""
        super().__init__(where + msg)


@dataclass(frozen=True, eq=False)
class NestedScheme:
    """HAR scheme with its partition into LAR (known) and unknown directions."""

    har: DirectionSet
    lar_indices: np.ndarray
    unknown_indices: np.ndarray

    def __post_init__(self):
        lar = np.asarray(self.lar_indices, dtype=int)
        unk = np.asarray(self.unknown_indices, dtype=int)
        n = len(self.har)
        both = np.concatenate([lar, unk])
        if len(both) != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ValueError("lar_indices and unknown_indices must partition the HAR scheme")
        lar.setflags(write=False)
        unk.setflags(write=False)
        object.__setattr__(self, "lar_indices", lar)
        object.__setattr__(self, "unknown_indices", unk)

    @property
    def lar(self):
        return self.har.subset(self.lar_indices, label=self.har.label + ":lar")

    @property
    def n_lar(self):
        return len(self.lar_indices)

    @property
    def n_unknown(self):
        return len(self.unknown_indices)

    def lar_channel(self, har_index):
        """LAR volume channel (b0 is channel 0) holding a HAR known direction."""
        pos = np.flatnonzero(self.lar_indices == har_index)
        if len(pos) != 1:
            raise ValueError(f"HAR index {har_index} is not a LAR direction")
        return 1 + int(pos[0])

    def equals(self, other, tol=0.0):
        return (self.har.equals(other.har, tol)
                and np.array_equal(self.lar_indices, other.lar_indices)
                and np.array_equal(self.unknown_indices, other.unknown_indices))


def greedy_construct(n, pool, fixed=None):
    """Grow ``fixed`` to ``n`` directions by greedy max-min-angle selection.

    At every step the pool direction farthest (axial angle) from everything
    already selected is appended; ties go to the lowest pool index.

    Raises
    ------
    ValueError
        "insufficient candidates" when the pool runs out of directions that
        are distinct from the current selection.
    """
    pool_d = pool.directions if isinstance(pool, DirectionSet) else np.atleast_2d(pool)
    if fixed is None or len(fixed) == 0:
        chosen = np.empty((0, 3))
        bvals = np.empty(0)
    else:
        chosen = np.array(fixed.directions)
        bvals = np.array(fixed.bvalues)
    if n < len(chosen):
        raise ValueError("n is smaller than the fixed set")
    pool_b = pool.bvalues if isinstance(pool, DirectionSet) else np.full(len(pool_d), 1000.0)
    if len(chosen):
        mind = angle_matrix(pool_d, chosen).min(axis=1)
    else:
        mind = np.full(len(pool_d), np.inf)
    picks = []
    for _ in range(n - len(chosen)):
        best = int(np.argmax(mind))
        if not mind[best] > 1e-9:
            raise ValueError(f"insufficient candidates: pool of {len(pool_d)} cannot supply {n} directions")
        picks.append(best)
        mind = np.minimum(mind, angle_matrix(pool_d, pool_d[best])[:, 0])
        mind[best] = -np.inf
    if picks:
        chosen = np.vstack([chosen, pool_d[picks]])
        bvals = np.concatenate([bvals, pool_b[picks]])
    label = fixed.label if fixed is not None and len(fixed) else "greedy"
    return DirectionSet(chosen, bvals, label=label)


def one_opt_refine(s, pool, locked=(), max_rounds=50):
    """Steepest-ascent single-swap refinement of the minimum pairwise angle.

    Each round evaluates every (unlocked slot, pool candidate) swap and applies
    the one giving the largest strict increase of the minimum pairwise angle;
    ties go to the lowest slot, then the lowest pool index. Stops at a fixed
    point or after ``max_rounds`` rounds.
    """
    d = np.array(s.directions)
    b = np.array(s.bvalues)
    n = len(d)
    free = np.setdiff1d(np.arange(n), np.asarray(list(locked), dtype=int))
    if n < 2 or len(free) == 0:
        return s
    pool_d = pool.directions
    pool_b = pool.bvalues
    for _ in range(max_rounds):
        pair = angle_matrix(d)
        np.fill_diagonal(pair, np.inf)
        current = pair.min()
        cross = angle_matrix(pool_d, d)
        # smallest and second-smallest distance of each candidate to the set
        order = np.argsort(cross, axis=1, kind="stable")[:, :2]
        first = np.take_along_axis(cross, order[:, :1], axis=1)[:, 0]
        second = np.take_along_axis(cross, order[:, 1:2], axis=1)[:, 0]
        best_val, best_swap = current + _IMPROVE_TOL, None
        for i in free:
            rest = np.delete(np.delete(pair, i, axis=0), i, axis=1)
            rest_min = rest.min() if rest.size else np.inf
            to_others = np.where(order[:, 0] == i, second, first)
            value = np.minimum(to_others, rest_min)
            j = int(np.argmax(value))
            if value[j] > best_val:
                best_val, best_swap = value[j], (i, j)
        if best_swap is None:
            break
        i, j = best_swap
        d[i] = pool_d[j]
        b[i] = pool_b[j]
    return DirectionSet(d, b, label=s.label)


def build_nested(n_lar=21, n_har=61, pool_size=4000, seed=7, max_rounds=50):
    """Build a nested LAR-in-HAR scheme from a seeded candidate pool.

    HAR index order is the LAR directions first, then the unknowns.
    """
    if not n_lar < n_har:
        raise ValueError("n_lar must be smaller than n_har")
    pool = generate_candidates(pool_size, seed)
    lar = greedy_construct(n_lar, pool)
    lar = one_opt_refine(lar, pool, (), max_rounds)
    har = greedy_construct(n_har, pool, fixed=lar)
    har = one_opt_refine(har, pool, range(n_lar), max_rounds)
    har = DirectionSet(har.directions, har.bvalues, label=f"nested({n_lar},{n_har},seed={seed})")
    return NestedScheme(har, np.arange(n_lar), np.arange(n_lar, n_har))


def scheme_summary(s):
    return {"n_lar": s.n_lar, "n_har": len(s.har), "n_unknown": s.n_unknown,
            "min_angle_lar": min_pairwise_angle(s.lar), "min_angle_har": min_pairwise_angle(s.har)}


def format_scheme(s):
    roles = np.full(len(s.har), "U")
    roles[s.lar_indices] = "L"
    lines = [SCHEME_HEADER]
    for role, g, b in zip(roles, s.har.directions, s.har.bvalues):
        lines.append(f"{role} {g[0]:.17g} {g[1]:.17g} {g[2]:.17g} {b:.17g}")
    return "\n".join(lines) + "\n"


def save_scheme(s, path):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_scheme(s))
    os.replace(tmp, path)


def parse_scheme(text, path=None):
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCHEME_HEADER:
        got = lines[0].strip() if lines else ""
        raise SchemeFormatError(f"expected header {SCHEME_HEADER!r}, got {got!r}", 1, path)
    roles, dirs, bvals = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise SchemeFormatError(f"expected 5 fields, got {len(parts)}", lineno, path)
        role = parts[0]
        if role not in ("L", "U"):
            raise SchemeFormatError(f"role must be L or U, got {role!r}", lineno, path)
        try:
            g = np.array([float(x) for x in parts[1:4]])
            b = float(parts[4])
        except ValueError:
            raise SchemeFormatError("non-numeric field", lineno, path) from None
        if not np.all(np.isfinite(g)) or abs(np.linalg.norm(g) - 1.0) > 1e-9:
            raise SchemeFormatError(f"non-unit vector (norm {np.linalg.norm(g):.6g})", lineno, path)
        if not np.isfinite(b) or b < 0:
            raise SchemeFormatError("b-value must be finite and nonnegative", lineno, path)
        for k, prev in enumerate(dirs):
            if np.arccos(min(1.0, abs(prev @ g))) <= 1e-9:
                raise SchemeFormatError(f"antipodal duplicate of direction {k}", lineno, path)
        roles.append(role)
        dirs.append(g)
        bvals.append(b)
    if not dirs:
        raise SchemeFormatError("no directions", len(lines), path)
    roles = np.array(roles)
    har = DirectionSet(np.array(dirs), np.array(bvals), label=os.path.basename(path) if path else "")
    return NestedScheme(har, np.flatnonzero(roles == "L"), np.flatnonzero(roles == "U"))


def load_scheme(path):
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        return parse_scheme(fh.read(), path)
