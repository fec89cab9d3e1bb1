"""Design matrices, elastic-net fitting, least squares and hard thresholding.

The elastic-net objective follows the convention used throughout this
package: T(xi) = mean squared residual + lambda * (beta * |xi|_2^2 +
(1 - beta) * |xi|_1), so beta = 1 is ridge and beta = 0 is lasso.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .trees import Individual, eval_candidates, format_tree

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

__all__ = [
    "DesignMatrix",
    "SparseFit",
    "ConvergenceError",
    "design_pointwise",
    "design_ring",
    "elastic_net_fit",
    "least_squares_fit",
    "hard_threshold_prune",
    "mse_loss",
    "gauss_legendre_ring",
    "QUADRATURE_ORDER",
]

QUADRATURE_ORDER = 16
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(QUADRATURE_ORDER)


class ConvergenceError(RuntimeError):
    def __init__(self, gap: float, sweeps: int):
        self.gap = gap
        self.sweeps = sweeps
        super().__init__(
            f"coordinate descent did not converge in {sweeps} sweeps "
            f"(final relative update {gap:.3e})"
        )


@dataclass(frozen=True)
class DesignMatrix:
    """Candidate evaluations (rows x candidates) and targets (rows x q).

    Multi-dimensional targets are kept as columns; losses stack them
    row-wise, so the effective row count is rows * q.
    """

    matrix: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        y = np.asarray(self.targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "targets", y)
        if m.shape[0] != y.shape[0]:
            raise ValueError(
                f"matrix has {m.shape[0]} rows but targets have {y.shape[0]}"
            )

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0] * self.targets.shape[1]

    @property
    def n_candidates(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SparseFit:
    """Elastic-net solution: coefficients (candidates x q), its mean-squared
    loss, and the active (any-target nonzero) candidate indices."""

    xi: np.ndarray
    lam: float
    beta: float
    loss: float
    active: np.ndarray


def design_pointwise(candidates, inputs: np.ndarray, targets: np.ndarray) -> DesignMatrix:
    """Phi[k, j] = candidate_j(inputs[k]); targets may have several columns
    (one per state dimension or moment pair)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    mat = eval_candidates(candidates, inputs)
    if not np.isfinite(mat).all():
        bad = np.argwhere(~np.isfinite(mat))[0]
        raise ValueError(
            f"candidate {format_tree(candidates[bad[1]])} is non-finite at "
            f"point {inputs[bad[0]].tolist()}"
        )
    return DesignMatrix(matrix=mat, targets=targets)


def gauss_legendre_ring(func, lo: float, hi: float) -> float:
    """Fixed-order Gauss-Legendre integral of ``func`` over [lo, hi]."""
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    return half * float(np.dot(_GL_WEIGHTS, func(mid + half * _GL_NODES)))


def ring_quadrature_points(edges: np.ndarray) -> np.ndarray:
    """All Gauss-Legendre nodes across the rings, as a (N*order, 1) array."""
    edges = np.asarray(edges, dtype=np.float64)
    mids = 0.5 * (edges[1:] + edges[:-1])
    halves = 0.5 * (edges[1:] - edges[:-1])
    pts = (mids[:, None] + halves[:, None] * _GL_NODES[None, :]).ravel()
    return pts[:, None]


def design_ring(candidates, edges: np.ndarray, targets: np.ndarray) -> DesignMatrix:
    """Phi[i, j] = integral of candidate_j over ring i, by 16-point
    Gauss-Legendre quadrature per ring."""
    edges = np.asarray(edges, dtype=np.float64)
    pts = ring_quadrature_points(edges)
    vals = eval_candidates(candidates, pts)
    if not np.isfinite(vals).all():
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise ValueError(
            f"candidate {format_tree(candidates[bad[1]])} is non-finite at "
            f"radius {pts[bad[0], 0]}"
        )
    n_rings = len(edges) - 1
    halves = 0.5 * (edges[1:] - edges[:-1])
    blocks = vals.reshape(n_rings, QUADRATURE_ORDER, -1)
    mat = halves[:, None] * np.einsum("q,rqj->rj", _GL_WEIGHTS, blocks)
    return DesignMatrix(matrix=mat, targets=targets)


@njit(cache=True)
def _cd_kernel(gram, cvec, yty, n_rows, lam, beta, max_sweeps, tol, obj_out):
    p = cvec.shape[0]
    xi = np.zeros(p)
    gxi = np.zeros(p)  # gram @ xi, maintained incrementally
    l1w = lam * (1.0 - beta)
    sweeps = 0
    gap = np.inf
    for sweep in range(max_sweeps):
        biggest = 0.0
        scale = 0.0
        for j in range(p):
            den = 2.0 / n_rows * gram[j, j] + 2.0 * lam * beta
            if den <= 0.0:
                continue
            num = 2.0 / n_rows * (cvec[j] - gxi[j] + gram[j, j] * xi[j])
            if num > l1w:
                new = (num - l1w) / den
            elif num < -l1w:
                new = (num + l1w) / den
            else:
                new = 0.0
            delta = new - xi[j]
            if delta != 0.0:
                xi[j] = new
                for k in range(p):
                    gxi[k] += delta * gram[k, j]
            if abs(delta) > biggest:
                biggest = abs(delta)
            if abs(new) > scale:
                scale = abs(new)
        obj = yty
        l1 = 0.0
        l2 = 0.0
        for j in range(p):
            obj += xi[j] * (gxi[j] - 2.0 * cvec[j])
            l1 += abs(xi[j])
            l2 += xi[j] * xi[j]
        obj = obj / n_rows + lam * (beta * l2 + (1.0 - beta) * l1)
        obj_out[sweep] = obj
        sweeps = sweep + 1
        gap = biggest / max(1.0, scale)
        if gap <= tol:
            return xi, sweeps, True, gap
    return xi, sweeps, False, gap


def elastic_net_fit(
    design: DesignMatrix,
    lam: float,
    beta: float,
    max_sweeps: int = 10_000,
    tol: float = 1e-13,
    objective_history: Optional[list] = None,
) -> SparseFit:
    """Cyclic coordinate descent on the elastic-net objective.

    Multi-column targets are fitted one column at a time (shared candidate
    set, independent coefficient vectors); the reported loss stacks all
    columns. ``objective_history`` collects the per-sweep objective values
    for each column when provided.
    """
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    phi = design.matrix
    y = design.targets
    gram = phi.T @ phi
    n, q = y.shape[0], y.shape[1]
    xi = np.zeros((phi.shape[1], q))
    obj_buf = np.empty(max_sweeps)
    for col in range(q):
        cvec = phi.T @ y[:, col]
        yty = float(y[:, col] @ y[:, col])
        sol, sweeps, converged, gap = _cd_kernel(
            gram, cvec, yty, n, lam, beta, max_sweeps, tol, obj_buf
        )
        if not converged:
            raise ConvergenceError(gap, sweeps)
        if objective_history is not None:
            objective_history.append(obj_buf[:sweeps].copy())
        xi[:, col] = sol
    active = np.flatnonzero((np.abs(xi) > 0).any(axis=1))
    return SparseFit(xi=xi, lam=lam, beta=beta, loss=mse_loss(design, xi), active=active)


def least_squares_fit(design: DesignMatrix):
    """Exact least squares via SVD; returns (xi, full_rank). Rank-deficient
    systems get the minimum-norm solution with full_rank = False."""
    xi, _, rank, _ = np.linalg.lstsq(design.matrix, design.targets, rcond=None)
    return xi, rank == design.n_candidates


def mse_loss(design: DesignMatrix, xi: np.ndarray) -> float:
    """(1 / rows) |Phi xi - Y|^2 with target columns stacked row-wise."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim == 1:
        xi = xi[:, None]
    resid = design.matrix @ xi - design.targets
    return float((resid * resid).sum() / design.n_rows)


def refit_on_support(design: DesignMatrix, support: Sequence[int]):
    """Least-squares refit restricted to ``support``; zeros elsewhere."""
    support = np.asarray(support, dtype=int)
    xi = np.zeros((design.n_candidates, design.targets.shape[1]))
    if support.size:
        sub = DesignMatrix(matrix=design.matrix[:, support], targets=design.targets)
        coef, _ = least_squares_fit(sub)
        xi[support] = coef
    return xi, mse_loss(design, xi)


def hard_threshold_prune(
    individual: Individual,
    design: DesignMatrix,
    rho: float,
) -> Individual:
    """Iteratively refit by least squares and remove the single candidate of
    smallest coefficient magnitude while any magnitude is <= rho times the
    largest. Importance of a candidate is its largest |coefficient| across
    target columns."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    keep = list(range(design.n_candidates))
    phi = design.matrix
    while True:
        sub = DesignMatrix(matrix=phi[:, keep], targets=design.targets)
        xi, _ = least_squares_fit(sub)
        imp = np.abs(xi).max(axis=1)
        if len(keep) <= 1:
            break
        xmax = imp.max()
        small = imp <= rho * xmax
        if not small.any():
            break
        drop = int(np.argmin(np.where(small, imp, np.inf)))
        del keep[drop]
    candidates = tuple(individual.candidates[j] for j in keep)
    loss = mse_loss(sub, xi)
    out = individual.with_candidates(candidates)
    out.coefficients = xi
    out.loss = loss
    return out
