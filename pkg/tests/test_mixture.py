import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from progspace import mixture
from progspace.errors import ValidationError
from progspace.mixture import GmmModel

from oracles import bic_direct, gmm_loglik_naive, sample_covariance, std_normal_logpdf_origin


def two_blobs(seed=0, n=100, dist=10.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, 2))
    b = rng.standard_normal((n, 2)) + [dist, 0.0]
    return np.vstack([a, b])


def model(weights, means, covs):
    means = np.asarray(means, dtype=float)
    return GmmModel(np.asarray(weights, dtype=float), means, np.asarray(covs, dtype=float),
                    subtype_order=mixture.velocity_order(means))


# ---------------------------------------------------------------- fitting


def test_two_separated_clusters():
    x = two_blobs()
    m = mixture.fit_gmm(x, 2, seed=0)
    centers = sorted(m.means.tolist())
    assert np.allclose(centers[0], [0, 0], atol=0.3)
    assert np.allclose(centers[1], [10, 0], atol=0.3)
    resp = mixture.responsibilities(m, x)
    assert np.all(resp.max(axis=1) >= 0.999)


def test_two_clusters_means_within_tenth_on_large_sample():
    x = two_blobs(n=2000)
    m = mixture.fit_gmm(x, 2, seed=1)
    centers = sorted(m.means.tolist())
    assert np.allclose(centers[0], [0, 0], atol=0.1)
    assert np.allclose(centers[1], [10, 0], atol=0.1)


def test_k1_is_closed_form_mle():
    x = np.random.default_rng(3).standard_normal((50, 3)) @ np.array([[1, 0.5, 0], [0, 1, 0.2], [0, 0, 2.0]])
    m = mixture.fit_gmm(x, 1, seed=0)
    mu, cov = sample_covariance(x)
    np.testing.assert_allclose(m.means[0], mu, atol=1e-9)
    np.testing.assert_allclose(m.covariances[0], cov, atol=1e-9)


def test_duplicated_points_hit_floor():
    x = np.ones((20, 2))
    m = mixture.fit_gmm(x, 2, seed=0, n_init=3)
    for c in m.covariances:
        np.testing.assert_allclose(np.linalg.eigvalsh(c), m.reg_floor, rtol=1e-9)


def test_fit_errors():
    with pytest.raises(ValidationError):
        mixture.fit_gmm(np.zeros((2, 2)), 3)
    with pytest.raises(ValidationError):
        mixture.fit_gmm(np.array([[0.0, np.nan], [1.0, 1.0]]), 1)


def random_problem(seed):
    rng = np.random.default_rng(seed)
    n, d, k = int(rng.integers(20, 301)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    centers = rng.normal(0, 3, size=(k, d))
    x = centers[rng.integers(0, k, size=n)] + rng.normal(size=(n, d)) * rng.uniform(0.2, 2.0, size=d)
    return x, k


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_em_monotone_and_model_invariants(seed):
    x, k = random_problem(seed)
    m = mixture.fit_gmm(x, k, seed=seed, n_init=2)
    h = np.asarray(m.history)
    assert np.all(np.diff(h) >= -1e-9 * np.maximum(np.abs(h[:-1]), 1.0))
    assert abs(m.weights.sum() - 1) < 1e-12 and m.weights.min() >= 0
    for c in m.covariances:
        np.testing.assert_allclose(c, c.T, atol=0)
        assert np.linalg.eigvalsh(c).min() >= m.reg_floor * (1 - 1e-9)
    resp = mixture.responsibilities(m, x)
    np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-9)


def test_m_step_weights_equal_mean_responsibilities():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 2))
    resp = rng.dirichlet(np.ones(3), size=40)
    w, _, _ = mixture._m_step(x, resp, 1e-6)
    np.testing.assert_allclose(w, resp.mean(axis=0), atol=1e-12)


def test_converged_weights_near_fixed_point():
    x = two_blobs(seed=2)
    m = mixture.fit_gmm(x, 2, seed=0)
    assert m.converged
    np.testing.assert_allclose(m.weights, mixture.responsibilities(m, x).mean(axis=0), atol=1e-4)


def test_permuting_points_gives_same_assignment():
    x = two_blobs(seed=4)
    perm = np.random.default_rng(0).permutation(len(x))
    ids = [f"p{i}" for i in range(len(x))]
    a = mixture.assign_subtypes(mixture.fit_gmm(x, 2, seed=0), x, ids)
    b = mixture.assign_subtypes(mixture.fit_gmm(x[perm], 2, seed=0), x[perm], [ids[i] for i in perm])
    da, db = a.as_dict(), b.as_dict()
    assert all(da[p]["subtype"] == db[p]["subtype"] for p in ids)


def test_translation_equivariance():
    x = two_blobs(seed=5)
    shift = np.array([3.0, -7.0])
    a = mixture.fit_gmm(x, 2, seed=0)
    b = mixture.fit_gmm(x + shift, 2, seed=0)
    np.testing.assert_allclose(b.means, a.means + shift, atol=1e-6)
    np.testing.assert_allclose(mixture.responsibilities(b, x + shift), mixture.responsibilities(a, x), atol=1e-9)


# ---------------------------------------------------------------- likelihood and BIC


def test_standard_normal_at_origin():
    m = model([1.0], [[0.0]], [[[1.0]]])
    assert mixture.log_likelihood(m, [[0.0]]) == pytest.approx(std_normal_logpdf_origin(1), abs=1e-12)
    assert mixture.log_likelihood(m, [[0.0]]) == pytest.approx(-0.9189, abs=1e-4)


def test_identical_components_collapse():
    x = np.random.default_rng(0).standard_normal((10, 2))
    cov = [[2.0, 0.3], [0.3, 1.0]]
    one = model([1.0], [[0.5, 0.5]], [cov])
    two = model([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [cov, cov])
    assert mixture.log_likelihood(two, x) == pytest.approx(mixture.log_likelihood(one, x), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_loglik_matches_naive_oracle(seed):
    x, k = random_problem(seed)
    x = x[:40]
    m = mixture.fit_gmm(x, min(k, len(x)), seed=seed, n_init=1)
    naive = gmm_loglik_naive(x, m.weights, m.means, m.covariances)
    assert mixture.log_likelihood(m, x) == pytest.approx(naive, abs=1e-9, rel=1e-12)


def test_loglik_dimension_mismatch():
    with pytest.raises(ValidationError):
        mixture.log_likelihood(model([1.0], [[0.0]], [[[1.0]]]), np.zeros((3, 2)))


def test_bic_formula():
    assert mixture.bic_value(-100.0, 5, 50) == pytest.approx(5 * math.log(50) + 200)
    assert mixture.bic_value(-100.0, 5, 50) == pytest.approx(219.56, abs=0.01)
    assert mixture.bic_value(-100.0, 4, 50) < mixture.bic_value(-100.0, 5, 50)
    assert mixture.bic_value(-3.0, 7, 1) == pytest.approx(6.0)


@pytest.mark.parametrize("k,d", [(1, 1), (2, 2), (3, 3), (6, 3)])
def test_parameter_count(k, d):
    assert mixture.n_parameters(k, d) == (k - 1) + k * d + k * d * (d + 1) // 2


def test_bic_of_model_matches_direct():
    x = two_blobs(seed=6)
    m = mixture.fit_gmm(x, 2, seed=0)
    assert mixture.bic(m, x) == pytest.approx(bic_direct(mixture.log_likelihood(m, x), 2, 2, len(x)))


# ---------------------------------------------------------------- selection and assignment


def test_select_k_single_blob():
    x = np.random.default_rng(1).standard_normal((200, 2))
    report, m = mixture.select_k(x, (1, 4), seed=0, n_init=3)
    assert report.chosen_k == 1 and m.k == 1


def test_select_k_picks_min_bic_and_single_candidate():
    x = two_blobs(seed=7)
    report, m = mixture.select_k(x, (1, 4), seed=0, n_init=3)
    assert report.chosen_k == min(report.candidates, key=lambda k: report.candidates[k]["bic"]) == 2
    single, _ = mixture.select_k(x, (2, 2), seed=0, n_init=2)
    assert list(single.candidates) == [2]
    with pytest.raises(ValidationError):
        mixture.select_k(x, (0, 3))


def test_velocity_order_by_mean_norm():
    m = model([1 / 3] * 3, [[0.0, 0.9], [0.2, 0.0], [0.3, 0.4]], [np.eye(2)] * 3)
    assert m.subtype_order == (2, 0, 1)
    x = np.array([[0.0, 0.9], [0.2, 0.0], [0.3, 0.4]])
    a = mixture.assign_subtypes(m, x, ["a", "b", "c"])
    assert a.labels == ("PDVec3", "PDVec1", "PDVec2")


def test_tie_goes_to_lower_rank():
    m = model([0.5, 0.5], [[2.0, 0.0], [0.0, 1.0]], [np.eye(2)] * 2)
    mid = np.array([[1.0, 0.5]])
    a = mixture.assign_subtypes(m, mid, ["x"])
    np.testing.assert_allclose(a.responsibilities[0], [0.5, 0.5], atol=1e-12)
    assert a.labels == ("PDVec1",)


def test_model_and_assignment_serialization():
    x = two_blobs(seed=8)
    m = mixture.fit_gmm(x, 2, seed=0)
    back = GmmModel.from_json(m.to_json())
    assert mixture.log_likelihood(back, x) == mixture.log_likelihood(m, x)
    assert back.subtype_order == m.subtype_order
    buf = io.StringIO()
    mixture.assign_subtypes(m, x[:3], ["a", "b", "c"]).write_csv(buf)
    assert buf.getvalue().splitlines()[0] == "patient_id,subtype,resp_1,resp_2"
