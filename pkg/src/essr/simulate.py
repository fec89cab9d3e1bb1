"""Stochastic models and snapshot-pair dataset generation.

Models are n-dimensional SDEs with a drift vector field, a Gaussian
diffusion factor and an additive isotropic alpha-stable jump component.
Datasets are produced by a single Euler step from uniformly sampled
initial points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .datasets import SnapshotDataset

__all__ = [
    "StableSpec",
    "SdeModel",
    "EvaluationError",
    "intensity_constant",
    "surface_area",
    "sample_stable_increment",
    "euler_step",
    "generate_dataset",
]

# Chunk size for dataset generation. Fixed so that the output is a pure
# function of (model, box, M, h, seed) regardless of how chunks are
# scheduled across workers.
_CHUNK = 1 << 20


class EvaluationError(ValueError):
    """Drift or diffusion evaluated to a non-finite value at some point."""

    def __init__(self, what: str, index: int, point: np.ndarray):
        self.index = index
        self.point = np.asarray(point)
        super().__init__(
            f"{what} is non-finite at sample {index}, point {self.point.tolist()}"
        )


def intensity_constant(dim: int, alpha: float) -> float:
    """Intensity constant c(n, alpha) of the isotropic alpha-stable jump kernel.

    c(n, a) = a * Gamma((n + a) / 2) / (2**(1 - a) * pi**(n / 2) * Gamma(1 - a / 2))
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not 0.0 < alpha < 2.0:
        raise ValueError(
            f"alpha must lie in (0, 2); got {alpha} (alpha = 2 is the Gaussian "
            "limit where the constant is undefined)"
        )
    return (
        alpha
        * math.gamma((dim + alpha) / 2.0)
        / (2.0 ** (1.0 - alpha) * math.pi ** (dim / 2.0) * math.gamma(1.0 - alpha / 2.0))
    )


def surface_area(dim: int) -> float:
    """Surface area of the unit sphere in R^n: 2 pi^(n/2) / Gamma(n/2)."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True)
class StableSpec:
    """Isotropic alpha-stable jump component: index, intensity and dimension."""

    alpha: float
    sigma2: float
    dim: int

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.sigma2 <= 0.0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")


def _one_sided_stable(ap: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Kanter sampler for the one-sided stable law with E exp(-sA) = exp(-s**ap)."""
    u = rng.uniform(0.0, np.pi, size)
    e = rng.standard_exponential(size)
    a = (
        np.sin((1.0 - ap) * u)
        * np.sin(ap * u) ** (ap / (1.0 - ap))
        / np.sin(u) ** (1.0 / (1.0 - ap))
    )
    return (a / e) ** ((1.0 - ap) / ap)


def sample_stable_increment(
    spec: StableSpec,
    dt: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """Unit-intensity isotropic alpha-stable increments over time dt.

    The empirical characteristic function converges to exp(-dt |u|**alpha).
    Returns shape (dim,) when size is None, else (size, dim). The caller
    multiplies by its intensity.

    Uses Gaussian subordination: sqrt(S) * G with G standard normal and S a
    one-sided (alpha/2)-stable variable scaled so that
    E exp(-s S) = exp(-dt (2 s)**(alpha / 2)).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    m = 1 if size is None else int(size)
    if spec.alpha == 2.0:
        # Gaussian limit: per-component variance 2 dt.
        out = rng.standard_normal((m, spec.dim)) * math.sqrt(2.0 * dt)
    else:
        s = 2.0 * dt ** (2.0 / spec.alpha) * _one_sided_stable(spec.alpha / 2.0, m, rng)
        g = rng.standard_normal((m, spec.dim))
        out = np.sqrt(s)[:, None] * g
    return out[0] if size is None else out


@dataclass(frozen=True)
class SdeModel:
    """Ground-truth SDE: drift b(x), diffusion factor sigma1(x), jump component.

    ``drift`` maps an (M, n) array to an (M, n) array. ``diffusion_factor``
    maps an (M, n) array to (M, n, n); None means no Gaussian noise.
    ``jump`` is None when there is no Levy component.
    """

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion_factor: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jump: Optional[StableSpec] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.jump is not None and self.jump.dim != self.dim:
            raise ValueError(
                f"jump dim {self.jump.dim} does not match model dim {self.dim}"
            )


def _check_finite(vals: np.ndarray, points: np.ndarray, what: str):
    bad = ~np.isfinite(vals.reshape(len(points), -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise EvaluationError(what, i, points[i])


def euler_step(
    model: SdeModel, z: np.ndarray, h: float, rng: np.random.Generator
) -> np.ndarray:
    """One Euler step x = z + b(z) h + sigma1(z) dB + sigma2 dL.

    ``z`` has shape (M, n); each row advances independently.
    """
    if h <= 0.0:
        raise ValueError(f"h must be > 0, got {h}")
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    m, n = z.shape
    b = np.asarray(model.drift(z), dtype=np.float64).reshape(m, n)
    _check_finite(b, z, "drift")
    x = z + b * h
    if model.diffusion_factor is not None:
        sig = np.asarray(model.diffusion_factor(z), dtype=np.float64).reshape(m, n, n)
        _check_finite(sig, z, "diffusion factor")
        db = rng.standard_normal((m, n)) * math.sqrt(h)
        x = x + np.einsum("mij,mj->mi", sig, db)
    if model.jump is not None:
        dl = sample_stable_increment(model.jump, h, rng, size=m)
        x = x + model.jump.sigma2 * dl
    return x[0] if squeeze else x


def generate_dataset(
    model: SdeModel,
    box: Sequence[Sequence[float]],
    n_samples: int,
    h: float,
    seed: int,
) -> SnapshotDataset:
    """Snapshot pairs: Z uniform over the box, X one Euler step ahead.

    Deterministic given the seed. Generation proceeds in fixed-size chunks,
    each with a sub-seed derived from (seed, chunk index), so the output
    does not depend on how chunks would be distributed across workers.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    lo = np.asarray([b[0] for b in box], dtype=np.float64)
    hi = np.asarray([b[1] for b in box], dtype=np.float64)
    if len(lo) != model.dim:
        raise ValueError(f"box has {len(lo)} axes, model dim is {model.dim}")
    if not (hi > lo).all():
        raise ValueError("box must be non-degenerate (hi > lo on every axis)")
    z_parts = []
    x_parts = []
    for w, start in enumerate(range(0, n_samples, _CHUNK)):
        count = min(_CHUNK, n_samples - start)
        rng = np.random.default_rng(np.random.SeedSequence([seed, w]))
        z = lo + (hi - lo) * rng.random((count, model.dim))
        try:
            x = euler_step(model, z, h, rng)
        except EvaluationError as err:
            raise EvaluationError(
                str(err).split(" is ")[0], start + err.index, err.point
            ) from err
        z_parts.append(z)
        x_parts.append(x)
    return SnapshotDataset(
        dim=model.dim, h=h, Z=np.concatenate(z_parts), X=np.concatenate(x_parts)
    )
