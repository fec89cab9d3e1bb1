"""Ring statistics, spatial binning, local moment fits, tail correction."""

import math

import numpy as np
import pytest

from essr.datasets import SnapshotDataset
from essr.preprocess import (
    PowerLaw,
    build_ring_training,
    local_diffusion_fit,
    local_drift_fit,
    min_bin_occupancy,
    pair_indices,
    partition_bins,
    tail_correction,
)
from essr.simulate import StableSpec, intensity_constant, surface_area


def _dataset_with_radii(radii, h=1e-3):
    """1-D dataset whose displacements are exactly the given radii."""
    r = np.asarray(radii, dtype=np.float64)
    z = np.zeros_like(r)
    return SnapshotDataset(dim=1, h=h, Z=z, X=r)


def test_ring_counts_and_edges():
    # edges 1, 1.5, 2.25 with two rings
    d = _dataset_with_radii([0.5, 1.0, 1.2, 1.5, 2.0, 2.25, 3.0])
    ring = build_ring_training(d, eps=1.0, m=1.5, n_rings=2)
    np.testing.assert_allclose(ring.edges, [1.0, 1.5, 2.25])
    # 1.0 and 1.2 in ring 1 (1.5 promotes to ring 2); 2.25 and 3.0 beyond
    np.testing.assert_array_equal(ring.counts, [2, 2])
    np.testing.assert_allclose(ring.targets, ring.counts / (1e-3 * 7))
    assert not ring.empty


def test_ring_empty_warns():
    d = _dataset_with_radii([0.1, 0.2, 0.3])
    with pytest.warns(UserWarning, match="absent"):
        ring = build_ring_training(d, eps=1.0, m=1.5, n_rings=3)
    assert ring.empty


def test_ring_validation():
    d = _dataset_with_radii([1.0])
    with pytest.raises(ValueError):
        build_ring_training(d, eps=0.0, m=1.5, n_rings=2)
    with pytest.raises(ValueError):
        build_ring_training(d, eps=1.0, m=1.0, n_rings=2)
    with pytest.raises(ValueError):
        build_ring_training(d, eps=1.0, m=1.5, n_rings=0)


def test_ring_rate_estimate_matches_stable_theory():
    # pure-jump data: ring rates estimate the jump-measure ring integrals
    from essr.simulate import SdeModel, generate_dataset

    spec = StableSpec(alpha=1.5, sigma2=1.0, dim=2)
    model = SdeModel(dim=2, drift=lambda x: np.zeros_like(x), jump=spec)
    data = generate_dataset(model, [(-2, 2), (-2, 2)], 400_000, 1e-3, 11)
    ring = build_ring_training(data, 1.0, 1.5, 4)
    c = intensity_constant(2, 1.5)
    big_c = 2 * math.pi * c
    lo, hi = ring.edges[:-1], ring.edges[1:]
    expected = big_c / 1.5 * (lo**-1.5 - hi**-1.5)
    # first ring has ~130 counts: allow 4 sigma
    sig = np.sqrt(expected / (1e-3 * 400_000))
    assert (np.abs(ring.targets - expected) < 4 * sig + 1e-12).all()


def test_partition_bins_membership():
    z = np.array([[-2.0, -2.0], [0.0, 0.0], [1.99, 1.99], [2.0, 2.0],
                  [2.5, 0.0], [0.0, -1.0]])
    d = SnapshotDataset(dim=2, h=1e-3, Z=z, X=z)
    grid = partition_bins(d, [(-2, 2), (-2, 2)], (4, 4))
    assert grid.n_bins == 16
    # (-2,-2) -> bin (0,0) = 0; (0,0) -> bin (2,2) = 10; 1.99 -> (3,3) = 15
    # 2.0 exactly at hi -> last bin; 2.5 outside -> -1; (0,-1) -> (2,1) = 9
    np.testing.assert_array_equal(grid.membership, [0, 10, 15, 15, -1, 9])
    assert grid.n_excluded == 1
    # centers of bin 0 and bin 15
    np.testing.assert_allclose(grid.centers[0], [-1.5, -1.5])
    np.testing.assert_allclose(grid.centers[15], [1.5, 1.5])


def test_partition_bins_validation():
    d = _dataset_with_radii([1.0])
    with pytest.raises(ValueError):
        partition_bins(d, [(-1, 1)], (0,))
    with pytest.raises(ValueError):
        partition_bins(d, [(1, -1)], (4,))
    with pytest.raises(ValueError):
        partition_bins(d, [(-1, 1), (-1, 1)], (4, 4))  # dim mismatch


def test_min_bin_occupancy():
    assert min_bin_occupancy(1) == 20
    assert min_bin_occupancy(2) == 20
    assert min_bin_occupancy(12) == 26


def test_pair_indices():
    assert pair_indices(2) == [(0, 0), (0, 1), (1, 1)]
    assert len(pair_indices(3)) == 6


def _linear_drift_dataset(m=5000, h=1e-3, seed=0):
    # exact Euler data with drift b(z) = (2 z1, -z2) and no noise:
    # the local affine fit recovers b at bin centers exactly.
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1, 1, size=(m, 2))
    b = np.stack([2 * z[:, 0], -z[:, 1]], axis=1)
    return SnapshotDataset(dim=2, h=h, Z=z, X=z + h * b)


def test_local_drift_fit_exact_on_noiseless_linear_drift():
    data = _linear_drift_dataset()
    grid = partition_bins(data, [(-1, 1), (-1, 1)], (4, 4))
    training = local_drift_fit(data, grid, eps=1.0)
    assert training.kind == "drift"
    expected = np.stack(
        [2 * training.inputs[:, 0], -training.inputs[:, 1]], axis=1
    )
    np.testing.assert_allclose(training.targets, expected, atol=1e-10)
    assert (training.p == 1.0).all()


def test_local_drift_fit_eps_exclusion_scales_targets():
    # all displacements far beyond eps are dropped; bins below occupancy vanish
    data = _linear_drift_dataset()
    grid = partition_bins(data, [(-1, 1), (-1, 1)], (4, 4))
    with pytest.raises(ValueError):
        local_drift_fit(data, grid, eps=1e-12)


def test_local_drift_fit_occupancy_threshold():
    data = _linear_drift_dataset(m=100)
    grid = partition_bins(data, [(-1, 1), (-1, 1)], (2, 2))
    t_lo = local_drift_fit(data, grid, eps=1.0, min_occupancy=5)
    assert len(t_lo.inputs) == 4
    with pytest.raises(ValueError):
        local_drift_fit(data, grid, eps=1.0, min_occupancy=10**6)


def test_local_diffusion_fit_recovers_constant_diffusion():
    # z + sqrt(h) sigma g: second moment / h = sigma^2
    rng = np.random.default_rng(1)
    m, h, sig = 400_000, 1e-3, 0.7
    z = rng.uniform(-1, 1, size=(m, 2))
    x = z + math.sqrt(h) * sig * rng.standard_normal((m, 2))
    data = SnapshotDataset(dim=2, h=h, Z=z, X=x)
    grid = partition_bins(data, [(-1, 1), (-1, 1)], (2, 2))
    training = local_diffusion_fit(data, grid, eps=1.0, s_matrix=np.zeros((2, 2)))
    assert training.targets.shape == (4, 3)
    # columns ordered (0,0), (0,1), (1,1)
    np.testing.assert_allclose(training.targets[:, 0], sig**2, rtol=0.05)
    np.testing.assert_allclose(training.targets[:, 2], sig**2, rtol=0.05)
    np.testing.assert_allclose(training.targets[:, 1], 0.0, atol=0.01)


def test_local_diffusion_fit_subtracts_s_matrix():
    data = _linear_drift_dataset()
    grid = partition_bins(data, [(-1, 1), (-1, 1)], (2, 2))
    s = np.diag([0.3, 0.4])
    t0 = local_diffusion_fit(data, grid, eps=1.0, s_matrix=np.zeros((2, 2)))
    t1 = local_diffusion_fit(data, grid, eps=1.0, s_matrix=s)
    np.testing.assert_allclose(t1.targets[:, 0], t0.targets[:, 0] - 0.3, atol=1e-12)
    np.testing.assert_allclose(t1.targets[:, 2], t0.targets[:, 2] - 0.4, atol=1e-12)
    with pytest.raises(ValueError):
        local_diffusion_fit(data, grid, eps=1.0, s_matrix=np.zeros((3, 3)))


def test_tail_correction_stable_closed_form():
    # oracle: S_ii = surface(n) c(n,a) s2^a eps^(2-a) / ((2-a) n)
    for n, alpha, s2, eps in [(2, 1.5, 1.0, 1.0), (2, 1.5, 1.0, 0.5),
                              (3, 0.5, 0.5, 2.0), (1, 1.0, 2.0, 1.0)]:
        spec = StableSpec(alpha=alpha, sigma2=s2, dim=n)
        s = tail_correction(eps, spec)
        oracle = (
            surface_area(n) * intensity_constant(n, alpha) * s2**alpha
            * eps ** (2 - alpha) / ((2 - alpha) * n)
        )
        np.testing.assert_allclose(s, np.eye(n) * oracle, rtol=1e-12)


def test_tail_correction_monte_carlo_oracle():
    # independent MC oracle for S_11 in 2-D at alpha=1.5, sigma2=1, eps=1:
    # integral over |y|<1 of y1^2 c(2,1.5) |y|^(-3.5) dy, in polar coordinates
    # = c * pi * int_0^1 r^(0.5) dr ... checked by quadrature instead:
    from scipy import integrate

    c = intensity_constant(2, 1.5)
    val, _ = integrate.dblquad(
        lambda r, th: c * (r * math.cos(th)) ** 2 * r ** (-3.5) * r,
        0, 2 * math.pi, 0, 1,
    )
    spec = StableSpec(alpha=1.5, sigma2=1.0, dim=2)
    assert tail_correction(1.0, spec)[0, 0] == pytest.approx(val, rel=1e-9)


def test_tail_correction_power_law_form():
    # power law C r^-p: S_ii = C eps^(3-p) / ((3-p) n)
    law = PowerLaw(prefactor=2.0, exponent=2.0)
    s = tail_correction(0.5, law, dim=2)
    np.testing.assert_allclose(s, np.eye(2) * (2.0 * 0.5 / (1.0 * 2)))
    with pytest.raises(ValueError):
        tail_correction(1.0, law)  # dim required
    with pytest.raises(ValueError):
        tail_correction(1.0, PowerLaw(prefactor=1.0, exponent=3.0), dim=2)


def test_tail_correction_matches_stable_and_power_law():
    spec = StableSpec(alpha=1.5, sigma2=1.0, dim=2)
    c = intensity_constant(2, 1.5)
    law = PowerLaw(prefactor=2 * math.pi * c, exponent=2.5)
    np.testing.assert_allclose(
        tail_correction(0.8, spec), tail_correction(0.8, law, dim=2), rtol=1e-12
    )
