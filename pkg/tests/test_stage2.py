"""Latent-domain discovery: channel stats, PCA, EM-fitted mixtures, BIC."""
import math

import numpy as np
import pytest

from mssda.errors import InputError
from mssda.stage2 import (
    assign_pseudo_domains,
    bic,
    bic_from_loglik,
    feature_stats,
    fit_gmm,
    fit_pca,
    select_k,
    stats_from_maps,
)


# -- channel statistics -------------------------------------------------------

def test_stats_constant_map():
    fs = feature_stats(np.full((3, 7), 5.0))
    assert np.allclose(fs.mu, 5.0) and np.allclose(fs.sigma, 0.0)


def test_stats_hand_value_population_std():
    fs = feature_stats(np.array([[1.0, 3.0]]))
    assert fs.mu[0] == 2.0 and fs.sigma[0] == 1.0


def test_stats_permutation_invariant():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(4, 9))
    a = feature_stats(m)
    b = feature_stats(m[:, rng.permutation(9)])
    assert np.allclose(a.mu, b.mu) and np.allclose(a.sigma, b.sigma)


def test_stats_translation_and_scale_covariance():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(2, 11))
    base = feature_stats(m)
    shifted = feature_stats(m + 3.0)
    assert np.allclose(shifted.mu, base.mu + 3.0)
    assert np.allclose(shifted.sigma, base.sigma)
    scaled = feature_stats(2.5 * m)
    assert np.allclose(scaled.sigma, 2.5 * base.sigma)
    assert np.allclose(scaled.mu, 2.5 * base.mu)


def test_stats_coords_layout_and_batch():
    rng = np.random.default_rng(2)
    maps = rng.normal(size=(5, 3, 8))
    coords = stats_from_maps(maps)
    assert coords.shape == (5, 6)
    one = feature_stats(maps[2])
    assert np.allclose(coords[2], np.concatenate([one.mu, one.sigma]))


def test_stats_empty_rejected():
    with pytest.raises(InputError):
        feature_stats(np.zeros((3, 0)))


# -- PCA ----------------------------------------------------------------------

def test_pca_line_recovers_direction():
    rng = np.random.default_rng(3)
    t = rng.normal(size=200)
    pts = np.stack([t, 2 * t, np.zeros_like(t)], axis=1)
    model = fit_pca(pts)
    want = np.array([1.0, 2.0, 0.0]) / math.sqrt(5.0)
    assert np.allclose(np.abs(model.components[0]), want, atol=1e-8)
    assert model.components[0][0] > 0  # sign convention: largest entry positive
    assert model.explained[1] < 1e-10
    assert model.degenerate


def test_pca_components_orthonormal():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(60, 6)) @ rng.normal(size=(6, 6))
    model = fit_pca(pts)
    gram = model.components @ model.components.T
    assert np.allclose(gram, np.eye(2), atol=1e-8)
    assert not model.degenerate


def test_pca_isotropic_cloud_balanced_variances():
    pts = np.random.default_rng(5).normal(size=(10_000, 4))
    model = fit_pca(pts)
    ratio = model.explained[0] / model.explained[1]
    assert 0.5 <= ratio <= 2.0


def test_pca_rank2_round_trip():
    rng = np.random.default_rng(6)
    basis = np.linalg.qr(rng.normal(size=(5, 2)))[0].T
    pts = rng.normal(size=(40, 2)) @ basis + 3.0
    model = fit_pca(pts)
    z = model.transform(pts)
    back = model.inverse_transform(z)
    assert np.max(np.abs(back - pts)) < 1e-8


def test_pca_explained_matches_projected_variance():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(300, 5)) * np.array([5, 3, 1, 0.5, 0.1])
    model = fit_pca(pts)
    z = model.transform(pts)
    assert np.allclose(z.var(axis=0, ddof=1), model.explained, atol=1e-8)


def test_pca_needs_three_points():
    with pytest.raises(InputError):
        fit_pca(np.zeros((2, 4)))


def test_pca_deterministic_signs():
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(50, 3))
    a = fit_pca(pts)
    b = fit_pca(np.array(pts))
    assert np.array_equal(a.components, b.components)


# -- GMM / EM ------------------------------------------------------------------

def two_blobs(n=100, sep=10.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 2)) * 0.3
    b = rng.normal(size=(n, 2)) * 0.3 + sep
    return np.concatenate([a, b])


def test_gmm_point_masses():
    pts = np.array([[0.0, 0.0]] * 30 + [[10.0, 10.0]] * 30)
    model = fit_gmm(pts, 2, seed=0)
    means = model.means[np.argsort(model.means[:, 0])]
    assert np.allclose(means[0], [0, 0], atol=1e-6)
    assert np.allclose(means[1], [10, 10], atol=1e-6)


def test_gmm_k1_closed_form():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(50, 2)) @ np.array([[2.0, 0.3], [0.3, 0.5]])
    model = fit_gmm(pts, 1, seed=0)
    assert np.allclose(model.means[0], pts.mean(axis=0), atol=1e-8)
    pop_cov = np.cov(pts.T, bias=True)
    assert np.allclose(model.covariances[0], pop_cov, atol=1e-5)
    assert np.allclose(model.weights, [1.0])


def test_gmm_three_component_weights():
    rng = np.random.default_rng(10)
    sizes = (300, 200, 100)
    centers = [(0, 0), (12, 0), (0, 12)]
    pts = np.concatenate([
        rng.normal(size=(m, 2)) * 0.5 + c for m, c in zip(sizes, centers)
    ])
    model = fit_gmm(pts, 3, seed=1)
    got = np.sort(model.weights)
    want = np.sort(np.array(sizes) / sum(sizes))
    assert np.allclose(got, want, atol=0.05)


def test_gmm_loglik_trace_non_decreasing():
    rng = np.random.default_rng(11)
    for seed in range(10):
        pts = rng.normal(size=(80, 2)) * rng.uniform(0.5, 3) + rng.normal(size=2)
        model = fit_gmm(pts, 3, seed=seed)
        diffs = np.diff(model.ll_trace)
        assert (diffs >= -1e-9).all()


def test_gmm_responsibilities_normalized():
    pts = two_blobs(seed=12)
    model = fit_gmm(pts, 2, seed=0)
    r = model.responsibilities(pts)
    assert np.allclose(r.sum(axis=1), 1.0, atol=1e-10)
    assert (r >= 0).all() and (r <= 1).all()


def test_gmm_weights_simplex():
    model = fit_gmm(two_blobs(seed=13), 2, seed=0)
    assert abs(model.weights.sum() - 1.0) < 1e-10


def test_gmm_k_exceeds_n():
    with pytest.raises(InputError):
        fit_gmm(np.zeros((3, 2)), 4, seed=0)


def test_gmm_deterministic():
    pts = two_blobs(seed=14)
    a = fit_gmm(pts, 2, seed=5)
    b = fit_gmm(pts, 2, seed=5)
    assert np.array_equal(a.means, b.means)


def test_gmm_matches_sklearn_on_separated_blobs():
    sklearn_mix = pytest.importorskip("sklearn.mixture")
    pts = two_blobs(n=150, sep=8.0, seed=15)
    ours = fit_gmm(pts, 2, seed=0)
    ref = sklearn_mix.GaussianMixture(2, covariance_type="full", random_state=0,
                                      reg_covar=1e-6).fit(pts)
    ours_sorted = ours.means[np.argsort(ours.means[:, 0])]
    ref_sorted = ref.means_[np.argsort(ref.means_[:, 0])]
    assert np.allclose(ours_sorted, ref_sorted, atol=1e-2)
    # mean per-point log-likelihood should agree closely on this easy problem
    assert abs(ours.loglik(pts) / len(pts) - ref.score(pts)) < 1e-3


# -- BIC and K selection --------------------------------------------------------

def test_bic_hand_value():
    got = bic_from_loglik(-100.0, 5, 50)
    assert abs(got - (200.0 + 5 * math.log(50))) < 1e-10


def test_bic_monotone_in_m():
    assert bic_from_loglik(-100.0, 5, 100) > bic_from_loglik(-100.0, 5, 50)


def test_bic_free_parameter_count_2d():
    # K components in 2-D: (K-1) weights + 2K means + 3K covariance entries
    pts = two_blobs(seed=16)
    model = fit_gmm(pts, 2, seed=0)
    expected = -2.0 * model.loglik(pts) + (6 * 2 - 1) * math.log(len(pts))
    assert abs(bic(model, pts) - expected) < 1e-9


def test_select_k_recovers_three_blobs():
    rng = np.random.default_rng(17)
    centers = [(0, 0), (14, 0), (0, 14)]
    pts = np.concatenate([rng.normal(size=(150, 2)) * 0.6 + c for c in centers])
    kstar, model, table = select_k(pts, k_range=range(2, 9), seed=0)
    assert kstar == 3
    assert len(table) == 7
    assert model.means.shape == (3, 2)


def test_select_k_single_cluster_prefers_smallest():
    pts = np.random.default_rng(18).normal(size=(200, 2)) * 0.5
    kstar, _, _ = select_k(pts, k_range=range(2, 7), seed=0)
    assert kstar == 2


def test_select_k_tie_prefers_smaller():
    from mssda.stage2 import _argmin_bic
    table = [(2, 100.0), (3, 100.0), (4, 99.0), (5, 99.0)]
    assert _argmin_bic(table) == 4


# -- assignment -----------------------------------------------------------------

def test_assign_at_component_mean():
    pts = two_blobs(seed=19)
    model = fit_gmm(pts, 2, seed=0)
    labels = assign_pseudo_domains(model, model.means).labels
    assert labels[0] != labels[1]


def test_assign_tie_prefers_lower_index():
    from mssda.stage2 import GmmModel
    cov = np.eye(2)[None].repeat(2, axis=0)
    model = GmmModel(weights=np.array([0.5, 0.5]),
                     means=np.array([[-1.0, 0.0], [1.0, 0.0]]),
                     covariances=cov, ll_trace=[0.0])
    assign = assign_pseudo_domains(model, np.array([[0.0, 0.0]]))
    assert assign.labels[0] == 0


def test_assign_counts():
    pts = two_blobs(n=40, seed=20)
    model = fit_gmm(pts, 2, seed=0)
    assign = assign_pseudo_domains(model, pts)
    assert assign.counts.sum() == 80
    assert sorted(assign.counts) == [40, 40]


def test_assign_matches_planted_two_domains():
    skm = pytest.importorskip("sklearn.metrics")
    pts = two_blobs(n=120, sep=9.0, seed=21)
    truth = np.array([0] * 120 + [1] * 120)
    model = fit_gmm(pts, 2, seed=0)
    labels = assign_pseudo_domains(model, pts).labels
    assert skm.adjusted_rand_score(truth, labels) >= 0.9
