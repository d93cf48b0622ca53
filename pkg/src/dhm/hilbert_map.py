"""Hilbert map: logistic occupancy over Gaussian kernel features hinged at clusters."""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .clustering import cluster_points
from .core import ClusterSet

__all__ = [
    "HilbertMap",
    "feature_matrix",
    "feature_vector",
    "predict_occupancy",
    "regularized_objective",
    "train_sgd",
]

_LOSSES = ("log", "exponential")
_DENSE_CHUNK = 4096


def _inverse_covariances(clusters: ClusterSet) -> np.ndarray:
    return np.linalg.inv(clusters.covariances)


def _cutoff_radii(clusters: ClusterSet, cutoff: float) -> np.ndarray:
    """Euclidean radius beyond which a cluster's feature is below ``cutoff``.

    ``w exp(-m/2) >= k`` needs Mahalanobis ``m <= 2 ln(w/k)``, and
    ``|d|^2 <= m * lambda_max``.  Clusters whose scale is below the cutoff
    never contribute and get a negative radius.
    """
    lam_max = np.linalg.eigvalsh(clusters.covariances)[:, -1]
    omega = clusters.weight_scales
    with np.errstate(divide="ignore"):
        m2 = 2.0 * np.log(omega / cutoff)
    radii = np.sqrt(np.maximum(m2, 0.0) * lam_max) * (1 + 1e-9) + 1e-12
    radii[omega < cutoff] = -1.0
    return radii


def _kernel_values(points, clusters, inv_cov, rows, cols):
    d = points[rows] - clusters.means[cols]
    m2 = np.einsum("ni,nij,nj->n", d, inv_cov[cols], d)
    return clusters.weight_scales[cols] * np.exp(-0.5 * m2)


def feature_matrix(points, clusters: ClusterSet, cutoff: float = 1e-3) -> sparse.csr_matrix:
    """Sparse design matrix ``Phi`` of shape (n_points, n_clusters).

    Entry (n, m) is ``w_m exp(-0.5 (x_n - mu_m)^T Sigma_m^-1 (x_n - mu_m))``;
    entries below ``cutoff`` are stored as exact zeros (not stored at all).
    Only clusters whose cutoff radius reaches a point are evaluated.
    """
    points = np.asarray(points, dtype=float)
    n, m = len(points), len(clusters)
    if n == 0 or m == 0:
        return sparse.csr_matrix((n, m))
    inv_cov = _inverse_covariances(clusters)

    if cutoff <= 0:
        blocks = []
        cols = np.arange(m)
        for s in range(0, n, _DENSE_CHUNK):
            chunk = points[s:s + _DENSE_CHUNK]
            d = chunk[:, None, :] - clusters.means[None, :, :]
            m2 = np.einsum("nmi,mij,nmj->nm", d, inv_cov, d)
            vals = clusters.weight_scales[cols] * np.exp(-0.5 * m2)
            blocks.append(sparse.csr_matrix(vals))
        return sparse.vstack(blocks, format="csr")

    radii = _cutoff_radii(clusters, cutoff)
    live = np.flatnonzero(radii >= 0)
    if len(live) == 0:
        return sparse.csr_matrix((n, m))
    hits = cKDTree(points).query_ball_point(clusters.means[live], radii[live], return_sorted=False)
    lengths = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    if lengths.sum() == 0:
        return sparse.csr_matrix((n, m))
    rows = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits if h])
    cols = np.repeat(live, lengths)
    vals = _kernel_values(points, clusters, inv_cov, rows, cols)
    keep = vals >= cutoff
    phi = sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, m))
    phi.sort_indices()
    return phi


def feature_vector(x, clusters: ClusterSet, cutoff: float = 1e-3) -> sparse.csr_matrix:
    """Feature row ``Phi(x)`` for a single point, as a 1 x M sparse matrix."""
    return feature_matrix(np.asarray(x, dtype=float).reshape(1, -1), clusters, cutoff)


def _pointwise_loss(scores, y, loss):
    if loss == "log":
        return -log_expit(y * scores)
    return np.exp(np.minimum(-y * scores, 700.0))


def regularized_objective(phi, y, weights, bias, l2, l1, loss="log") -> float:
    """Mean data loss plus ``(l2 |w|^2 + l1 |w|_1) / N``.

    This is the summed objective divided by the number of samples, so it is
    comparable across datasets of different size.
    """
    y = np.asarray(y, dtype=float)
    scores = phi @ weights + bias
    data = float(np.sum(_pointwise_loss(scores, y, loss)))
    reg = l2 * float(weights @ weights) + l1 * float(np.abs(weights).sum())
    return (data + reg) / len(y)


def _shrink(w, k, a, t):
    """``k`` repetitions of ``w <- soft_threshold(a * w, t)`` in closed form."""
    ak = a ** k
    total = t * k if a == 1.0 else t * (1.0 - ak) / (1.0 - a)
    return np.sign(w) * np.maximum(np.abs(w) * ak - total, 0.0)


def _sgd(phi: sparse.csr_matrix, y, weights, bias, l2, l1, learning_rate, epochs,
         batch_size, rng, loss="log"):
    """Minibatch SGD with a proximal soft-threshold step for the l1 term.

    Each minibatch takes a step of ``learning_rate / sqrt(epoch)`` times the
    summed minibatch gradient; the regularisers are charged ``B / N`` of their
    full weight per step so one epoch applies them once.  Weights untouched
    by a minibatch only shrink, so their updates are deferred and applied in
    closed form when next needed; the result equals the step-by-step update.
    """
    n, m = phi.shape
    w = np.array(weights, dtype=float)
    history = []
    for epoch in range(1, epochs + 1):
        lr = learning_rate / math.sqrt(epoch)
        perm = rng.permutation(n)
        p = phi[perm]
        yp = y[perm]
        indptr, indices, data = p.indptr, p.indices, p.data
        row_of = np.repeat(np.arange(n), np.diff(indptr))
        # distinct weights per minibatch, found for the whole epoch at once
        keys, inverse = np.unique((row_of // batch_size) * m + indices, return_inverse=True)
        key_ptr = np.searchsorted(keys // m, np.arange(0, (n + batch_size - 1) // batch_size + 1))
        keys = keys % m
        stamp = np.zeros(m, dtype=np.int64)
        full = min(batch_size, n) / n
        a_full = 1.0 - 2.0 * lr * l2 * full
        t_full = lr * l1 * full
        for step, s in enumerate(range(0, n, batch_size)):
            e = min(s + batch_size, n)
            b = e - s
            frac = b / n
            if b != min(batch_size, n):
                # a short final batch: settle every deferred step first
                w = _shrink(w, step - stamp, a_full, t_full)
                stamp[:] = step
            lo, hi = indptr[s], indptr[e]
            dat = data[lo:hi]
            local = row_of[lo:hi] - s
            yb = yp[s:e]
            u = keys[key_ptr[step]:key_ptr[step + 1]]
            inv = inverse[lo:hi] - key_ptr[step]
            wu = _shrink(w[u], step - stamp[u], a_full, t_full)
            scores = np.bincount(local, weights=dat * wu[inv], minlength=b) + bias
            if loss == "log":
                coef = -yb * expit(-yb * scores)
            else:
                coef = -yb * np.exp(np.minimum(-yb * scores, 50.0))
            grad = np.bincount(inv, weights=dat * coef[local], minlength=len(u))
            if b != min(batch_size, n):
                w -= lr * 2.0 * l2 * frac * w
                w[u] -= lr * grad
                thresh = lr * l1 * frac
                w = np.sign(w) * np.maximum(np.abs(w) - thresh, 0.0)
                stamp[:] = step + 1
                continue
            wu = wu - lr * (grad + 2.0 * l2 * frac * wu)
            w[u] = np.sign(wu) * np.maximum(np.abs(wu) - t_full, 0.0)
            stamp[u] = step + 1
        n_steps = (n + batch_size - 1) // batch_size
        w = _shrink(w, n_steps - stamp, a_full, t_full)
        history.append(regularized_objective(phi, y, w, bias, l2, l1, loss))
    return w, history


class HilbertMap(ClassifierMixin, BaseEstimator):
    """Continuous occupancy classifier over Gaussian kernel features.

    ``fit`` clusters each class at ``resolution`` to build the hinge set, then
    trains the weights by elastic-net SGD.  The bias is a fixed prior offset
    and is not learned.

    Parameters
    ----------
    resolution : float
        Cluster resolution used to build hinges when none are supplied.
    l2, l1 : float
        Squared-norm and absolute-norm penalty weights.
    learning_rate : float
        Initial per-sample step size; decays as ``1/sqrt(epoch)``.
    epochs, batch_size : int
    bias : float
        Constant score offset; ``-1`` makes unexplored space lean free.
    feature_cutoff : float
        Kernel values below this are treated as zero.
    loss : {"log", "exponential"}
        ``"exponential"`` uses ``exp(-y s)`` in place of the log-loss.
    floor_fraction : float
        Covariance eigenvalue floor as a fraction of ``resolution``.
    random_state : int
        Seed for minibatch shuffling.

    Attributes
    ----------
    clusters_ : ClusterSet
    coef_ : ndarray of shape (n_clusters,)
    classes_ : ndarray
    objective_history_ : list of float
        Regularised objective after each epoch of the last training call.
    """

    def __init__(self, resolution=0.25, l2=1e-4, l1=1e-4, learning_rate=0.5, epochs=10,
                 batch_size=32, bias=-1.0, feature_cutoff=1e-3, loss="log",
                 floor_fraction=0.1, random_state=0):
        self.resolution = resolution
        self.l2 = l2
        self.l1 = l1
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.bias = bias
        self.feature_cutoff = feature_cutoff
        self.loss = loss
        self.floor_fraction = floor_fraction
        self.random_state = random_state

    @classmethod
    def from_config(cls, config) -> "HilbertMap":
        return cls(resolution=config.resolution, l2=config.l2, l1=config.l1,
                   learning_rate=config.learning_rate, epochs=config.epochs,
                   batch_size=config.batch_size, bias=config.bias,
                   feature_cutoff=config.feature_cutoff, loss=config.loss,
                   floor_fraction=config.covariance_floor_fraction,
                   random_state=config.seed)

    def _check_params(self):
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {_LOSSES}, got {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l1 < 0 or self.l2 < 0 or self.feature_cutoff < 0:
            raise ValueError("penalties and feature_cutoff must be >= 0")

    def _signed_labels(self, y, set_classes: bool):
        y = np.asarray(y)
        values = set(np.unique(y).tolist())
        if set_classes:
            if values <= {-1, 1}:
                self.classes_ = np.array([-1, 1])
            elif values <= {0, 1}:
                self.classes_ = np.array([0, 1])
            else:
                raise ValueError(f"labels must be in {{-1, +1}} or {{0, 1}}, got {sorted(values)}")
        elif not values <= set(self.classes_.tolist()):
            raise ValueError(f"labels {sorted(values)} not among classes {self.classes_.tolist()}")
        return np.where(y == self.classes_[1], 1.0, -1.0)

    def set_clusters(self, clusters: ClusterSet, coef=None) -> "HilbertMap":
        """Install a hinge set, with zero weights unless ``coef`` is given."""
        coef = np.zeros(len(clusters)) if coef is None else np.asarray(coef, dtype=float).copy()
        if coef.shape != (len(clusters),):
            raise ValueError("coef length must equal the number of clusters")
        self.clusters_ = clusters
        self.coef_ = coef
        self.n_features_in_ = clusters.dim
        if not hasattr(self, "classes_"):
            self.classes_ = np.array([-1, 1])
        if not hasattr(self, "objective_history_"):
            self.objective_history_ = []
        return self

    def _rng(self):
        if not hasattr(self, "_rng_state"):
            self._rng_state = np.random.default_rng(self.random_state)
        return self._rng_state

    def train_on(self, X, y_signed, warm_start=True) -> "HilbertMap":
        """Train on pre-validated points and +/-1 labels against the current hinges."""
        self._check_params()
        if not warm_start:
            self.coef_ = np.zeros(len(self.clusters_))
        if len(X) == 0 or self.epochs == 0:
            self.objective_history_ = []
            return self
        phi = feature_matrix(X, self.clusters_, self.feature_cutoff)
        self.coef_, self.objective_history_ = _sgd(
            phi, np.asarray(y_signed, dtype=float), self.coef_, self.bias, self.l2, self.l1,
            self.learning_rate, self.epochs, self.batch_size, self._rng(), self.loss)
        return self

    def fit(self, X, y, clusters: ClusterSet = None):
        """Build hinges (unless ``clusters`` is given) and train from zero weights."""
        self._check_params()
        X, y = check_X_y(X, y)
        ys = self._signed_labels(y, set_classes=True)
        if clusters is None:
            occ = cluster_points(X[ys > 0], self.resolution, True, self.floor_fraction)
            free = cluster_points(X[ys < 0], self.resolution, False, self.floor_fraction)
            if len(occ) == 0:
                occ = ClusterSet.empty(X.shape[1], self.resolution)
            if len(free) == 0:
                free = ClusterSet.empty(X.shape[1], self.resolution)
            clusters = ClusterSet.concatenate([occ, free])
        self._rng_state = np.random.default_rng(self.random_state)
        self.set_clusters(clusters)
        return self.train_on(X, ys, warm_start=False)

    def partial_fit(self, X, y):
        """Warm-started training pass over ``X`` with the existing hinges."""
        check_is_fitted(self, "coef_")
        X, y = check_X_y(X, y)
        return self.train_on(X, self._signed_labels(y, set_classes=False), warm_start=True)

    def decision_function(self, X, clusters: ClusterSet = None):
        """Linear score ``w^T Phi(x) + b``; ``clusters`` overrides hinge geometry."""
        check_is_fitted(self, "coef_")
        X = check_array(X)
        hinges = self.clusters_ if clusters is None else clusters
        if len(hinges) != len(self.coef_):
            raise ValueError("hinge set does not match the weight vector")
        return feature_matrix(X, hinges, self.feature_cutoff) @ self.coef_ + self.bias

    def predict_proba(self, X, clusters: ClusterSet = None):
        p = expit(self.decision_function(X, clusters))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p = self.predict_proba(X)[:, 1]
        return np.where(p > 0.5, self.classes_[1], self.classes_[0])


def predict_occupancy(hmap: HilbertMap, x) -> float:
    """``sigmoid(w^T Phi(x) + b)`` at a single point."""
    return float(hmap.predict_proba(np.asarray(x, dtype=float).reshape(1, -1))[0, 1])


def train_sgd(hmap: HilbertMap, points, labels, warm_start: bool = True) -> HilbertMap:
    """Train ``hmap`` on labelled points (+1 occupied, -1 free) with its current hinges."""
    points = check_array(points)
    labels = np.asarray(labels)
    if len(points) == 0:
        raise ValueError("training data is empty")
    if not set(np.unique(labels).tolist()) <= {-1, 1}:
        raise ValueError("labels must be +1 (occupied) or -1 (free)")
    check_is_fitted(hmap, "coef_")
    return hmap.train_on(points, labels.astype(float), warm_start=warm_start)
