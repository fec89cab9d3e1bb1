"""Training-set construction from snapshot pairs.

Three products: geometric-ring displacement statistics for the jump
measure, and per-bin affine least-squares values for the drift and
diffusion coefficients (the latter after subtracting the small-jump
second-moment correction).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .datasets import SnapshotDataset
from .simulate import StableSpec, intensity_constant, surface_area

__all__ = [
    "RingTrainingSet",
    "BinGrid",
    "LocalMomentTraining",
    "PowerLaw",
    "build_ring_training",
    "partition_bins",
    "local_drift_fit",
    "local_diffusion_fit",
    "tail_correction",
    "min_bin_occupancy",
    "pair_indices",
]


@dataclass(frozen=True)
class RingTrainingSet:
    """Ring edges eps, m*eps, ..., m^N*eps and per-ring rate targets n_i/(h M)."""

    eps: float
    m: float
    n_rings: int
    edges: np.ndarray  # N+1 radii
    targets: np.ndarray  # N values
    counts: np.ndarray  # raw occupancy per ring

    @property
    def empty(self) -> bool:
        return not self.counts.any()


@dataclass(frozen=True)
class BinGrid:
    """Uniform axis-aligned grid over the phase-space box."""

    lo: np.ndarray
    hi: np.ndarray
    counts: np.ndarray  # bins per axis
    centers: np.ndarray  # (N_b, n)
    membership: np.ndarray  # bin index per data point, -1 if outside the box
    n_excluded: int

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.counts))


@dataclass(frozen=True)
class LocalMomentTraining:
    """Per-bin regression targets: drift components or diffusion entries.

    ``targets`` has one row per retained bin; drift rows hold n values,
    diffusion rows hold n(n+1)/2 values ordered by ``pair_indices``.
    """

    kind: str  # "drift" | "diffusion"
    inputs: np.ndarray  # retained bin centers, (K, n)
    targets: np.ndarray  # (K, n) or (K, n(n+1)/2)
    occupancy: np.ndarray  # retained points per kept bin
    p: np.ndarray  # small-displacement probability per kept bin
    bin_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


@dataclass(frozen=True)
class PowerLaw:
    """Radial integrand fitted as prefactor * r**(-exponent)."""

    prefactor: float
    exponent: float


def build_ring_training(
    data: SnapshotDataset, eps: float, m: float, n_rings: int
) -> RingTrainingSet:
    """Count displacements |x - z| in the rings [m^(j-1) eps, m^j eps)."""
    if eps <= 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if m <= 1.0:
        raise ValueError(f"m must be > 1, got {m}")
    if n_rings < 1:
        raise ValueError(f"n_rings must be >= 1, got {n_rings}")
    edges = eps * m ** np.arange(n_rings + 1)
    r = np.linalg.norm(data.X - data.Z, axis=1)
    # half-open rings [lo, hi); searchsorted(side="right") puts r == edge
    # into the higher ring
    idx = np.searchsorted(edges, r, side="right") - 1
    valid = (idx >= 0) & (idx < n_rings) & (r < edges[-1])
    counts = np.bincount(idx[valid], minlength=n_rings).astype(np.int64)
    targets = counts / (data.h * data.n_samples)
    out = RingTrainingSet(
        eps=eps, m=m, n_rings=n_rings, edges=edges, targets=targets, counts=counts
    )
    if out.empty:
        warnings.warn(
            "no displacements beyond eps: jump signal absent at this scale",
            stacklevel=2,
        )
    return out


def partition_bins(
    data: SnapshotDataset,
    box: Sequence[Sequence[float]],
    counts: Sequence[int],
) -> BinGrid:
    """Uniform grid over the box; points outside are excluded and counted.

    Bins are half-open [lo, hi) per axis with the last bin closed; a point
    exactly on an interior edge goes to the higher-index bin.
    """
    lo = np.asarray([b[0] for b in box], dtype=np.float64)
    hi = np.asarray([b[1] for b in box], dtype=np.float64)
    counts = np.asarray(counts, dtype=np.int64)
    if (counts < 1).any():
        raise ValueError("need at least one bin per axis")
    if len(lo) != data.dim or len(counts) != data.dim:
        raise ValueError("box/counts arity does not match the dataset dimension")
    if not (hi > lo).all():
        raise ValueError("box must be non-degenerate")
    width = (hi - lo) / counts
    ax = np.floor((data.Z - lo) / width).astype(np.int64)
    inside = ((data.Z >= lo) & (data.Z <= hi)).all(axis=1)
    # points exactly at hi belong to the last (closed) bin
    ax = np.clip(ax, 0, counts - 1)
    membership = np.ravel_multi_index(ax.T, counts)
    membership = np.where(inside, membership, -1)
    grid_axes = [lo[d] + width[d] * (np.arange(counts[d]) + 0.5) for d in range(data.dim)]
    mesh = np.meshgrid(*grid_axes, indexing="ij")
    centers = np.stack([g.ravel() for g in mesh], axis=1)
    return BinGrid(
        lo=lo,
        hi=hi,
        counts=counts,
        centers=centers,
        membership=membership,
        n_excluded=int((~inside).sum()),
    )


def min_bin_occupancy(dim: int) -> int:
    """Bins with fewer retained points than this are dropped."""
    return max(20, 2 * (dim + 1))


def pair_indices(dim: int):
    """Column order (i, j), i <= j, of diffusion targets."""
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def _affine_fit_at_center(zhat, targets, center):
    """Least-squares affine fit evaluated at the bin center.

    ``targets`` is (M_hat, q); returns q values. Falls back to the column
    mean when the local design is rank deficient.
    """
    mhat, n = zhat.shape
    a = np.hstack([np.ones((mhat, 1)), zhat])
    coef, _, rank, _ = np.linalg.lstsq(a, targets, rcond=None)
    if rank < n + 1:
        return targets.mean(axis=0)
    return np.concatenate([[1.0], center]) @ coef


def _local_moment_fit(data, grid, eps, kind, s_matrix=None, min_occupancy=None):
    if eps <= 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    n = data.dim
    min_occ = min_bin_occupancy(n) if min_occupancy is None else min_occupancy
    dx = data.X - data.Z
    r = np.linalg.norm(dx, axis=1)
    order = np.argsort(grid.membership, kind="stable")
    mem_sorted = grid.membership[order]
    start = np.searchsorted(mem_sorted, 0)  # skip points outside the box
    pairs = pair_indices(n)
    kept_centers, kept_targets, kept_occ, kept_p, kept_idx = [], [], [], [], []
    bounds = np.searchsorted(mem_sorted, np.arange(grid.n_bins + 1))
    for k in range(grid.n_bins):
        sl = order[max(bounds[k], start) : bounds[k + 1]]
        total = len(sl)
        if total == 0:
            continue
        retained = sl[r[sl] <= eps]
        if len(retained) < min_occ:
            continue
        p_k = len(retained) / total
        zhat = data.Z[retained]
        scale = p_k / data.h
        if kind == "drift":
            b = scale * dx[retained]
        else:
            cols = [scale * dx[retained, i] * dx[retained, j] - s_matrix[i, j]
                    for i, j in pairs]
            b = np.stack(cols, axis=1)
        kept_targets.append(_affine_fit_at_center(zhat, b, grid.centers[k]))
        kept_centers.append(grid.centers[k])
        kept_occ.append(len(retained))
        kept_p.append(p_k)
        kept_idx.append(k)
    if not kept_centers:
        raise ValueError(
            "no bin reached the minimum occupancy; the grid is too fine or the "
            "dataset too small"
        )
    return LocalMomentTraining(
        kind=kind,
        inputs=np.asarray(kept_centers),
        targets=np.asarray(kept_targets),
        occupancy=np.asarray(kept_occ, dtype=np.int64),
        p=np.asarray(kept_p),
        bin_index=np.asarray(kept_idx, dtype=np.int64),
    )


def local_drift_fit(
    data: SnapshotDataset,
    grid: BinGrid,
    eps: float,
    min_occupancy: Optional[int] = None,
) -> LocalMomentTraining:
    """Per-bin drift values b_i(z_k) from a local affine least-squares fit.

    Rows with |x - z| > eps are excluded; the retained fraction p_k scales
    the increment targets p_k (x_i - z_i) / h.
    """
    return _local_moment_fit(data, grid, eps, "drift", min_occupancy=min_occupancy)


def local_diffusion_fit(
    data: SnapshotDataset,
    grid: BinGrid,
    eps: float,
    s_matrix: np.ndarray,
    min_occupancy: Optional[int] = None,
) -> LocalMomentTraining:
    """Per-bin diffusion values a_ij(z_k), i <= j, with the small-jump
    second moment ``s_matrix`` subtracted from the raw targets."""
    s_matrix = np.asarray(s_matrix, dtype=np.float64)
    if s_matrix.shape != (data.dim, data.dim):
        raise ValueError(
            f"s_matrix must be {data.dim}x{data.dim}, got {s_matrix.shape}"
        )
    return _local_moment_fit(
        data, grid, eps, "diffusion", s_matrix=s_matrix, min_occupancy=min_occupancy
    )


def tail_correction(
    eps: float, spec: Union[StableSpec, PowerLaw], dim: Optional[int] = None
) -> np.ndarray:
    """Small-jump second-moment matrix S(eps).

    For an isotropic jump kernel whose one-dimensional radial integrand is
    C r**(-p) (angular integration included), the matrix is diagonal with
    S_ii = C eps**(3 - p) / ((3 - p) n). An alpha-stable spec reduces to
    the power law C = surface(n) c(n, alpha) sigma2**alpha, p = 1 + alpha.
    """
    if eps < 0.0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if isinstance(spec, StableSpec):
        if spec.alpha >= 2.0:
            raise ValueError("tail correction undefined for alpha >= 2")
        n = spec.dim
        c = intensity_constant(n, spec.alpha)
        prefactor = surface_area(n) * c * spec.sigma2**spec.alpha
        exponent = 1.0 + spec.alpha
    else:
        if dim is None:
            raise ValueError("dim is required with a fitted power law")
        n = dim
        prefactor, exponent = spec.prefactor, spec.exponent
    if exponent >= 3.0:
        raise ValueError(
            f"second-moment integral diverges for exponent {exponent} >= 3"
        )
    diag = prefactor * eps ** (3.0 - exponent) / ((3.0 - exponent) * n)
    return np.eye(n) * diag
