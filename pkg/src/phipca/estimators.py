"""scikit-learn compatible front ends for the partition-aggregate fits."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted, validate_data

from .aggregate import default_m, fit_phi_pca, fit_ppca
from .exceptions import ParameterError
from .phi import as_phi

__all__ = ["PhiPCA", "ProductPCA"]


def _resolve_seed(random_state) -> int:
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(check_random_state(random_state).randint(np.iinfo(np.int32).max))


class _ComponentsMixin:
    """Projection helpers shared by the estimators below."""

    def _store(self, model, n_features):
        k = n_features if self.n_components is None else int(self.n_components)
        if not 1 <= k <= n_features:
            raise ParameterError(f"n_components must lie in [1, {n_features}], got {k}")
        self.model_ = model
        self.mean_ = model.mean
        self.components_ = model.eigenvectors[:, :k].T.copy()
        self.explained_variance_ = model.eigenvalues[:k].copy()
        self.n_components_ = k

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = validate_data(self, X, reset=False)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        X = np.asarray(X, dtype=float)
        return X @ self.components_ + self.mean_


class PhiPCA(_ComponentsMixin, TransformerMixin, BaseEstimator):
    """PCA on the phi-generalized mean of random-block covariances.

    Parameters
    ----------
    n_components : int or None
        Number of leading components kept by ``transform``.  ``None`` keeps all.
    phi : PhiSpec, float or str, default="hm"
        Aggregation map.  ``"hm"`` (``u^-1``), ``"gm"`` (``ln u``), ``"am"``
        (``u``), a nonzero exponent, or a :class:`~phipca.phi.PhiSpec`.
    m : int or "sqrt", default="sqrt"
        Number of random blocks; ``"sqrt"`` uses ``floor(sqrt(n_samples))``.
    ridge : float or "auto", default="auto"
        Ridge added to every block covariance before ``phi``.
    centered : bool, default=True
        Mean-center each block.
    random_state : int, RandomState or None
        Controls the random partition.

    Attributes
    ----------
    components_ : ndarray of shape (n_components, n_features)
    explained_variance_ : ndarray of shape (n_components,)
    covariance_ : ndarray of shape (n_features, n_features)
        The aggregated covariance matrix.
    mean_ : ndarray of shape (n_features,)
    n_partitions_ : int
    ridge_ : float
    model_ : AggregatedModel

    Examples
    --------
    >>> import numpy as np
    >>> from phipca import PhiPCA
    >>> X = np.random.default_rng(0).standard_normal((400, 5))
    >>> PhiPCA(n_components=2, phi="hm", random_state=0).fit_transform(X).shape
    (400, 2)
    """

    def __init__(self, n_components=None, phi="hm", m="sqrt", ridge="auto", centered=True, random_state=None):
        self.n_components = n_components
        self.phi = phi
        self.m = m
        self.ridge = ridge
        self.centered = centered
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=2)
        n = X.shape[0]
        m = default_m(n) if self.m == "sqrt" else int(self.m)
        ridge = None if self.ridge == "auto" else float(self.ridge)
        model = fit_phi_pca(
            X,
            m,
            as_phi(self.phi),
            seed=_resolve_seed(self.random_state),
            ridge_eps=ridge,
            centered=self.centered,
        )
        self._store(model, X.shape[1])
        self.covariance_ = model.sigma_hat
        self.n_partitions_ = model.m
        self.ridge_ = model.ridge_eps
        return self


class ProductPCA(_ComponentsMixin, TransformerMixin, BaseEstimator):
    """Two-block product PCA baseline.

    Components are the left singular vectors of ``S_1^{1/2} S_2^{1/2}`` and
    ``explained_variance_`` holds the matching singular values.
    """

    def __init__(self, n_components=None, centered=True, random_state=None):
        self.n_components = n_components
        self.centered = centered
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=4)
        model = fit_ppca(X, seed=_resolve_seed(self.random_state), centered=self.centered)
        self._store(model, X.shape[1])
        self.product_ = model.product
        return self
