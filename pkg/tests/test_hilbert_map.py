import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse
from scipy.special import expit
from sklearn.base import clone

from dhm.core import ClusterSet
from dhm.hilbert_map import (HilbertMap, _sgd, feature_matrix, feature_vector, predict_occupancy,
                             regularized_objective, train_sgd)


def one_cluster(mean=(0.0, 0.0), cov=np.eye(2), omega=1.0, occupied=True):
    return ClusterSet(np.array([mean], float), np.array([cov], float), np.array([omega]),
                      np.array([occupied]), np.array([1]), 0.25)


def random_clusters(rng, m, dim=2):
    A = rng.normal(size=(m, dim, dim)) * 0.3
    covs = A @ np.swapaxes(A, 1, 2) + 0.01 * np.eye(dim)
    return ClusterSet(rng.uniform(-2, 2, (m, dim)), covs, rng.uniform(0.05, 1.0, m),
                      rng.random(m) < 0.5, np.ones(m, int), 0.25)


def dense_features(X, cs, cutoff):
    out = np.zeros((len(X), len(cs)))
    for i, x in enumerate(X):
        for j in range(len(cs)):
            d = x - cs.means[j]
            v = cs.weight_scales[j] * math.exp(-0.5 * d @ np.linalg.solve(cs.covariances[j], d))
            out[i, j] = v if v >= cutoff else 0.0
    return out


# -- features ------------------------------------------------------------------------------------
def test_feature_examples():
    assert feature_vector([0, 0], one_cluster()).toarray()[0, 0] == pytest.approx(1.0)
    x = [1.0, 1.0]  # Mahalanobis^2 = 2
    assert feature_vector(x, one_cluster()).toarray()[0, 0] == pytest.approx(math.exp(-1))
    assert feature_vector(x, one_cluster(omega=0.5)).toarray()[0, 0] == pytest.approx(0.5 * math.exp(-1))


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("cutoff", [0.0, 1e-3, 0.2])
def test_feature_matrix_matches_dense_oracle(rng, dim, cutoff):
    cs = random_clusters(rng, 25, dim)
    X = rng.uniform(-3, 3, (200, dim))
    got = feature_matrix(X, cs, cutoff)
    assert sparse.issparse(got)
    assert np.allclose(got.toarray(), dense_features(X, cs, cutoff), rtol=1e-12, atol=1e-15)


@given(st.integers(0, 10_000), st.floats(1e-6, 0.5))
def test_features_bounded_by_scale(seed, cutoff):
    rng = np.random.default_rng(seed)
    cs = random_clusters(rng, 10)
    phi = feature_matrix(rng.uniform(-3, 3, (50, 2)), cs, cutoff)
    vals = phi.tocoo()
    assert np.all(vals.data >= cutoff)
    assert np.all(vals.data <= cs.weight_scales[vals.col] * (1 + 1e-12))


def test_empty_inputs():
    assert feature_matrix(np.zeros((0, 2)), one_cluster()).shape == (0, 1)
    empty = ClusterSet.empty(2, 0.25)
    assert feature_matrix(np.zeros((3, 2)), empty).shape == (3, 0)


# -- prediction --------------------------------------------------------------------------------------
def test_predict_occupancy_examples():
    hm = HilbertMap(bias=0.0).set_clusters(one_cluster())
    assert predict_occupancy(hm, [3.0, -1.0]) == 0.5
    hm.coef_ = np.array([4.0])
    assert predict_occupancy(hm, [0.0, 0.0]) == pytest.approx(0.9820, abs=1e-4)
    far = HilbertMap(bias=-1.0).set_clusters(one_cluster(), coef=[4.0])
    assert predict_occupancy(far, [100.0, 100.0]) == pytest.approx(expit(-1.0))


# -- objective and SGD ----------------------------------------------------------------------------------
def test_objective_value():
    phi = sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.5]]))
    y = np.array([1.0, -1.0])
    w = np.array([2.0, -1.0])
    s = np.array([2.0, -0.5]) + 0.3
    expected = (np.log1p(np.exp(-y * s)).sum() + 0.1 * 5 + 0.2 * 3) / 2
    assert regularized_objective(phi, y, w, 0.3, 0.1, 0.2) == pytest.approx(expected)


def eager_sgd(phi, y, w, bias, l2, l1, lr0, epochs, batch, rng, loss="log"):
    """Step-by-step reference: every weight is decayed and thresholded at every step."""
    n, m = phi.shape
    w = np.array(w, dtype=float)
    dense = phi.toarray()
    for epoch in range(1, epochs + 1):
        lr = lr0 / math.sqrt(epoch)
        perm = rng.permutation(n)
        for s in range(0, n, batch):
            rows = perm[s:s + batch]
            A, yb = dense[rows], y[rows]
            scores = A @ w + bias
            if loss == "log":
                g = -yb * expit(-yb * scores)
            else:
                g = -yb * np.exp(np.minimum(-yb * scores, 50.0))
            frac = len(rows) / n
            w = w - lr * (A.T @ g + 2 * l2 * frac * w)
            w = np.sign(w) * np.maximum(np.abs(w) - lr * l1 * frac, 0.0)
    return w


@pytest.mark.parametrize("trial", range(12))
def test_lazy_sgd_equals_eager_reference(trial):
    r = np.random.default_rng(trial)
    n, m = int(r.integers(1, 250)), int(r.integers(1, 60))
    phi = sparse.random(n, m, density=r.uniform(0.02, 0.3), random_state=trial, format="csr")
    y = np.where(r.random(n) < 0.5, -1.0, 1.0)
    l2, l1 = (float(v) for v in r.choice([0.0, 1e-4, 0.1, 2.0], 2))
    batch = int(r.integers(1, 40))
    loss = ["log", "exponential"][trial % 2]
    w0 = r.normal(size=m)
    got, hist = _sgd(phi, y, w0, -1.0, l2, l1, 0.3, 3, batch, np.random.default_rng(7), loss)
    want = eager_sgd(phi, y, w0, -1.0, l2, l1, 0.3, 3, batch, np.random.default_rng(7), loss)
    assert np.allclose(got, want, rtol=1e-9, atol=1e-9)
    assert len(hist) == 3


def disk(rng, centre, n, radius=0.125):
    r = radius * np.sqrt(rng.random(n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.asarray(centre) + np.column_stack([r * np.cos(a), r * np.sin(a)])


def separable(rng):
    """One occupied and one free cluster of points, far apart."""
    X = np.vstack([disk(rng, [2.0, 0.0], 100), disk(rng, [-2.0, 0.0], 100)])
    y = np.r_[np.ones(100), -np.ones(100)]
    return X, y


def test_separable_training_accuracy(rng):
    X, y = separable(rng)
    hm = HilbertMap(l1=1e-4, l2=1e-4).fit(X, y)
    assert np.mean(hm.predict(X) == y) >= 0.99
    assert list(hm.classes_) == [-1, 1]


def test_huge_penalty_zeroes_weights(rng):
    X, y = separable(rng)
    hm = HilbertMap(l2=1e3, l1=1e3, learning_rate=1e-3).fit(X, y)
    assert np.all(hm.coef_ == 0.0)


def test_warm_start_is_no_worse(rng):
    X, y = separable(rng)
    cold = HilbertMap(epochs=3).fit(X, y)
    warm = clone(cold).fit(X, y)
    train_sgd(warm, X, y, warm_start=True)
    cold_again = clone(cold).fit(X, y)
    train_sgd(cold_again, X, y, warm_start=False)
    assert warm.objective_history_[-1] <= cold_again.objective_history_[-1] + 1e-12


def test_fit_is_deterministic(rng):
    X, y = separable(rng)
    a = HilbertMap(random_state=3).fit(X, y).coef_
    b = HilbertMap(random_state=3).fit(X, y).coef_
    assert np.array_equal(a, b)


def test_zero_one_labels_and_proba_shape(rng):
    X, y = separable(rng)
    hm = HilbertMap().fit(X, (y > 0).astype(int))
    assert list(hm.classes_) == [0, 1]
    P = hm.predict_proba(X)
    assert P.shape == (200, 2) and np.allclose(P.sum(axis=1), 1.0)
    assert hm.score(X, (y > 0).astype(int)) >= 0.99


def test_exponential_loss_runs(rng):
    X, y = separable(rng)
    hm = HilbertMap(loss="exponential", learning_rate=0.05).fit(X, y)
    assert np.isfinite(hm.coef_).all()


def test_parameter_validation(rng):
    X, y = separable(rng)
    for bad in (dict(loss="hinge"), dict(epochs=-1), dict(learning_rate=0.0), dict(l1=-1.0)):
        with pytest.raises(ValueError):
            HilbertMap(**bad).fit(X, y)
    with pytest.raises(ValueError):
        HilbertMap().fit(X, np.r_[y[:-1], 2.0])
    hm = HilbertMap().fit(X, y)
    with pytest.raises(ValueError):
        train_sgd(hm, X, np.zeros(len(X)))
    with pytest.raises(ValueError):
        hm.decision_function(X, ClusterSet.empty(2, 0.25))


def test_partial_fit_keeps_hinges(rng):
    X, y = separable(rng)
    hm = HilbertMap().fit(X, y)
    before = hm.clusters_
    hm.partial_fit(X[:50], y[:50])
    assert hm.clusters_ is before
