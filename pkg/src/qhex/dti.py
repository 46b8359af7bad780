"""Log-linear DTI fitting, FA/MD maps, and upsampling evaluation."""
from dataclasses import dataclass, field

import numpy as np

from .phantom import Tensor3

# floor applied to predicted signals before the log fit in evaluate()
MIN_POSITIVE_SIGNAL = 1e-6


def design_matrix(bvals, bvecs):
    """Rows ``(1, -b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz)``."""
    b = np.asarray(bvals, dtype=float)
    g = np.asarray(bvecs, dtype=float)
    gx, gy, gz = g.T
    return np.column_stack([np.ones_like(b), -b * gx * gx, -b * gy * gy, -b * gz * gz,
                            -2 * b * gx * gy, -2 * b * gx * gz, -2 * b * gy * gz])


def _components_to_matrix(c):
    c = np.asarray(c, dtype=float)
    m = np.empty(c.shape[:-1] + (3, 3))
    m[..., 0, 0], m[..., 1, 1], m[..., 2, 2] = c[..., 0], c[..., 1], c[..., 2]
    m[..., 0, 1] = m[..., 1, 0] = c[..., 3]
    m[..., 0, 2] = m[..., 2, 0] = c[..., 4]
    m[..., 1, 2] = m[..., 2, 1] = c[..., 5]
    return m


def _matrix_to_components(m):
    return np.stack([m[..., 0, 0], m[..., 1, 1], m[..., 2, 2],
                     m[..., 0, 1], m[..., 0, 2], m[..., 1, 2]], axis=-1)


@dataclass
class TensorField:
    """Per-voxel fit: ``tensors[..., :]`` = (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).

    ``valid`` is False outside the mask and wherever negative eigenvalues
    had to be clamped; ``clamped`` marks the latter.
    """

    tensors: np.ndarray
    log_s0: np.ndarray
    valid: np.ndarray
    mask: np.ndarray
    clamped: np.ndarray = field(default=None)

    def eigenvalues(self):
        return np.linalg.eigvalsh(_components_to_matrix(self.tensors))

    def fa(self):
        return fa(self.tensors)

    def md(self):
        return md(self.tensors)

    def tensor(self, x, y, z):
        return Tensor3(*self.tensors[x, y, z])


def fit_dti(v, mask=None, name=None):
    """Ordinary least squares on ``log S`` for every masked voxel.

    Raises
    ------
    ValueError
        If the design is rank deficient (fewer than 7 usable channels or a
        degenerate direction set) or a masked voxel has a nonpositive signal.
    """
    name = name or getattr(v, "layout", "volume")
    X = design_matrix(v.bvals, v.bvecs)
    if X.shape[0] < 7 or np.linalg.matrix_rank(X) < 7:
        raise ValueError(f"rank-deficient DTI design for scheme {name!r} ({X.shape[0]} channels)")
    if mask is None:
        mask = np.ones(v.spatial_shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    sig = v.data[mask]
    if np.any(~(sig > 0)):
        raise ValueError("precondition violated: masked voxel with nonpositive signal")
    # column scaling keeps the solve well conditioned at b ~ 1e3
    scale = np.abs(X).max(axis=0)
    coef, *_ = np.linalg.lstsq(X / scale, np.log(sig).T, rcond=None)
    coef = (coef / scale[:, None]).T
    comps = coef[:, 1:]
    evals, evecs = np.linalg.eigh(_components_to_matrix(comps))
    neg = np.any(evals < 0, axis=1)
    if neg.any():
        fixed = np.einsum("nij,nj,nkj->nik", evecs[neg], np.maximum(evals[neg], 0.0), evecs[neg])
        comps[neg] = _matrix_to_components(fixed)
    shape = v.spatial_shape
    tensors = np.zeros(shape + (6,))
    log_s0 = np.full(shape, np.nan)
    valid = np.zeros(shape, dtype=bool)
    clamped = np.zeros(shape, dtype=bool)
    tensors[mask] = comps
    log_s0[mask] = coef[:, 0]
    valid[mask] = ~neg
    clamped[mask] = neg
    return TensorField(tensors, log_s0, valid, mask, clamped)


def _eigs(D):
    if isinstance(D, Tensor3):
        D = D.components
    D = np.asarray(D, dtype=float)
    if D.shape[-2:] == (3, 3):
        return np.linalg.eigvalsh(D)
    return np.linalg.eigvalsh(_components_to_matrix(D))


def md(D):
    """Mean diffusivity; accepts a Tensor3, a 3x3 matrix or ``(..., 6)`` components."""
    return _eigs(D).mean(axis=-1)


def fa(D):
    """Fractional anisotropy in [0, 1]; 0 for the zero tensor."""
    lam = _eigs(D)
    mean = lam.mean(axis=-1, keepdims=True)
    num = np.sqrt(np.sum((lam - mean) ** 2, axis=-1))
    den = np.sqrt(np.sum(lam ** 2, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(1.5) * num / den
    return np.clip(np.where(den > 0, out, 0.0), 0.0, 1.0)


@dataclass
class EvalReport:
    """Signal and DTI errors of an upsampled volume against ground truth.

    ``nrmse`` holds one value per unknown direction (RMSE over the mask
    divided by the mean truth signal), aligned with ``directions``.
    """

    directions: np.ndarray
    nrmse: np.ndarray
    fa_rmse: float
    md_rmse: float
    coverage: float
    baseline_nrmse: np.ndarray = None

    @property
    def mean_nrmse(self):
        return float(np.mean(self.nrmse))

    @property
    def deltas(self):
        if self.baseline_nrmse is None:
            return None
        return self.nrmse - self.baseline_nrmse

    def rows(self):
        rows = [("nrmse", int(d), float(v)) for d, v in zip(self.directions, self.nrmse)]
        if self.baseline_nrmse is not None:
            rows += [("baseline_nrmse", int(d), float(v)) for d, v in zip(self.directions, self.baseline_nrmse)]
            rows += [("delta_nrmse", int(d), float(v)) for d, v in zip(self.directions, self.deltas)]
        rows += [("mean_nrmse", -1, self.mean_nrmse), ("fa_rmse", -1, self.fa_rmse),
                 ("md_rmse", -1, self.md_rmse), ("coverage", -1, self.coverage)]
        if self.baseline_nrmse is not None:
            rows.append(("baseline_mean_nrmse", -1, float(np.mean(self.baseline_nrmse))))
        return rows

    def to_csv(self):
        lines = ["metric,direction_index,value"]
        lines += [f"{m},{d},{v:.9e}" for m, d, v in self.rows()]
        return "\n".join(lines) + "\n"


def _signal_nrmse(pred, truth, scheme, mask):
    out = []
    for u in scheme.unknown_indices:
        p = pred.data[..., 1 + u][mask]
        t = truth.data[..., 1 + u][mask]
        out.append(np.sqrt(np.mean((p - t) ** 2)) / np.mean(t))
    return np.array(out)


def evaluate(pred, truth, scheme, mask, baseline=None):
    """Per-unknown-direction NRMSE plus FA/MD RMSE over ``mask``.

    Predicted signals are floored at a tiny positive value before the DTI
    fit so a zero prediction cannot break the log.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    if pred.data.shape != truth.data.shape or pred.data.shape[3] != 1 + len(scheme.har):
        raise ValueError(f"shape mismatch: pred {pred.data.shape}, truth {truth.data.shape}, "
                         f"scheme has {len(scheme.har)} directions")
    nrmse = _signal_nrmse(pred, truth, scheme, mask)
    floored = pred.channels(np.arange(pred.data.shape[3]))
    floored.data = np.maximum(floored.data, MIN_POSITIVE_SIGNAL)
    fp = fit_dti(floored, mask, name=scheme.har.label)
    ft = fit_dti(truth, mask, name=scheme.har.label)
    fa_rmse = float(np.sqrt(np.mean((fa(fp.tensors[mask]) - fa(ft.tensors[mask])) ** 2)))
    md_rmse = float(np.sqrt(np.mean((md(fp.tensors[mask]) - md(ft.tensors[mask])) ** 2)))
    base = None if baseline is None else _signal_nrmse(baseline, truth, scheme, mask)
    return EvalReport(np.asarray(scheme.unknown_indices), nrmse, fa_rmse, md_rmse,
                      float(mask.mean()), base)
