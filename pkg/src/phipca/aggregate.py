"""Partition-aggregate covariance estimation.

The data matrix is split at random into ``m`` blocks, a covariance matrix is
formed per block, and the blocks are combined by the phi-generalized mean
``phi^{-1}(mean_k phi(S_k + eps I))``.  With ``m = 1`` the procedure is
ordinary PCA.  The two-block product aggregate ``S_1^{1/2} S_2^{1/2}`` is
provided as a baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DomainError, InsufficientDataError, ParameterError, ValidationError
from .linalg import SpectralDecomp, _inverse_phi, _sign_fix, as_symmetric, eigh, matrix_phi
from .phi import AM, PhiSpec, as_phi

# Relative size of negative eigenvalues tolerated as rounding in a covariance.
_PSD_TOL = 1e-8

__all__ = [
    "PartitionPlan",
    "AggregatedModel",
    "ProductModel",
    "make_partition",
    "subsample_covariances",
    "sample_covariance",
    "aggregate",
    "default_ridge",
    "default_m",
    "fit_phi_pca",
    "fit_standard_pca",
    "fit_ppca",
    "as_data_matrix",
]


def as_data_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D (n_samples, n_features) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return X


@dataclass(frozen=True)
class PartitionPlan:
    """Assignment of ``n`` samples to ``m`` blocks.

    ``assignment[i]`` is the block id of row ``i``.  Block sizes differ by at
    most one.
    """

    n: int
    m: int
    assignment: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.shape != (self.n,):
            raise ParameterError(f"assignment must have length n={self.n}")
        if self.n and (a.min() < 0 or a.max() >= self.m):
            raise ParameterError("assignment contains block ids outside [0, m)")

    @classmethod
    def from_assignment(cls, assignment: Sequence[int], m: Optional[int] = None) -> "PartitionPlan":
        """Wrap a user-supplied block assignment (no balance requirement)."""
        a = np.asarray(assignment, dtype=np.int64)
        if a.ndim != 1:
            raise ParameterError("assignment must be one-dimensional")
        m = int(a.max()) + 1 if m is None else int(m)
        return cls(n=a.shape[0], m=m, assignment=a, seed=None)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.m)

    def blocks(self) -> list:
        """Row indices of each block, ascending within a block."""
        return [np.flatnonzero(self.assignment == k) for k in range(self.m)]


def make_partition(n: int, m: int, seed: int) -> PartitionPlan:
    """Random partition of ``range(n)`` into ``m`` blocks of near-equal size.

    Every block gets ``n // m`` samples and ``n % m`` randomly chosen blocks get
    one extra.  The permutation and the choice of enlarged blocks both come
    from ``numpy.random.default_rng(seed)``.
    """
    n, m = int(n), int(m)
    if m < 1 or m > n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    sizes = np.full(m, n // m, dtype=np.int64)
    extra = rng.choice(m, size=n % m, replace=False)
    sizes[extra] += 1
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.repeat(np.arange(m), sizes)
    return PartitionPlan(n=n, m=m, assignment=assignment, seed=seed)


def sample_covariance(X, centered: bool = True) -> np.ndarray:
    """Covariance with divisor ``n``; second-moment matrix if not ``centered``."""
    X = np.asarray(X, dtype=float)
    if centered:
        X = X - X.mean(axis=0)
    S = X.T @ X / X.shape[0]
    return (S + S.T) / 2.0


def subsample_covariances(X, plan: PartitionPlan, centered: bool = True) -> list:
    """One covariance matrix per block of ``plan``, in block order."""
    X = as_data_matrix(X)
    if X.shape[0] != plan.n:
        raise ParameterError(f"plan covers {plan.n} rows but X has {X.shape[0]}")
    covs = []
    for k, idx in enumerate(plan.blocks()):
        if idx.size < 2:
            raise InsufficientDataError(f"block {k} holds {idx.size} sample(s); at least 2 are needed")
        covs.append(sample_covariance(X[idx], centered=centered))
    return covs


def aggregate(subcovs, phi, ridge_eps: float = 0.0) -> np.ndarray:
    """phi-generalized mean of ``subcovs`` after adding ``ridge_eps * I``.

    For a single block the result is ``S_1 + ridge_eps * I`` verbatim, since
    ``phi^{-1}(phi(S)) = S`` for every phi.
    """
    phi = as_phi(phi)
    if ridge_eps < 0 or not math.isfinite(ridge_eps):
        raise ParameterError(f"ridge_eps must be a finite nonnegative number, got {ridge_eps}")
    mats = [as_symmetric(S, f"block {k} covariance") for k, S in enumerate(subcovs)]
    if not mats:
        raise ParameterError("need at least one subsample covariance")
    p = mats[0].shape[0]
    shift = ridge_eps * np.eye(p)
    if len(mats) == 1:
        return mats[0] + shift
    total = np.zeros((p, p))
    for k, S in enumerate(mats):
        total += _shifted_phi(S, ridge_eps, phi, k)
    return _inverse_phi(total / len(mats), phi)


def _shifted_phi(S: np.ndarray, ridge_eps: float, phi: PhiSpec, k: int) -> np.ndarray:
    """``phi(S + ridge_eps I)`` for a covariance ``S`` that is PSD by construction.

    The ridge is added to the eigenvalues of ``S`` after clipping rounding
    negatives to zero; adding it to the matrix first would let rounding of
    order ``u * ||S||`` swamp a small ridge.
    """
    dec = eigh(S)
    vals = dec.values
    scale = max(float(np.max(np.abs(vals))), np.finfo(float).tiny)
    if vals[-1] < -_PSD_TOL * scale:
        raise DomainError(f"block {k}: covariance has eigenvalue {vals[-1]:.3e} and is not PSD")
    vals = np.clip(vals, 0.0, None) + ridge_eps
    if phi.requires_positive and vals[-1] <= 0:
        j = int(np.flatnonzero(vals <= 0)[0])
        hint = "use a positive ridge" if ridge_eps == 0 else "increase the ridge"
        raise DomainError(
            f"block {k}: phi={phi.label()} needs strictly positive eigenvalues but "
            f"eigenvalue {j} of the covariance is zero; {hint}"
        )
    out = (dec.vectors * np.asarray(phi(vals), dtype=float)) @ dec.vectors.T
    return (out + out.T) / 2.0


def default_ridge(S_full) -> float:
    """Recommended ridge ``1e-8 * tr(S) / p``."""
    S = np.asarray(S_full, dtype=float)
    return 1e-8 * float(np.trace(S)) / S.shape[0]


def default_m(n: int) -> int:
    """Partition count ``floor(sqrt(n))``."""
    n = int(n)
    if n < 4:
        raise ParameterError(f"default_m needs n >= 4, got {n}")
    return math.isqrt(n)


@dataclass
class AggregatedModel:
    """Fitted partition-aggregate estimate and its eigensystem."""

    sigma_hat: np.ndarray
    decomp: SpectralDecomp
    m: int
    phi: PhiSpec
    ridge_eps: float
    subcov_count: int
    mean: Optional[np.ndarray] = None
    plan: Optional[PartitionPlan] = field(default=None, repr=False)

    method = "phi"

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.decomp.values

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.decomp.vectors

    def subspace(self, r: int) -> np.ndarray:
        """Leading ``r`` eigenvectors as a ``p x r`` block."""
        return self.decomp.leading(r)


@dataclass
class ProductModel:
    """Two-block product aggregate ``G = S_1^{1/2} S_2^{1/2}``.

    ``G`` is not symmetric; components are the left singular vectors of ``G``
    ordered by singular value.
    """

    product: np.ndarray
    decomp: SpectralDecomp
    mean: Optional[np.ndarray] = None
    plan: Optional[PartitionPlan] = field(default=None, repr=False)
    m: int = 2

    method = "PPCA"

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.decomp.values

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.decomp.vectors

    def subspace(self, r: int) -> np.ndarray:
        return self.decomp.leading(r)


def fit_phi_pca(
    X,
    m: int,
    phi,
    seed: Optional[int] = 0,
    ridge_eps: Optional[float] = None,
    centered: bool = True,
    plan: Optional[PartitionPlan] = None,
) -> AggregatedModel:
    """Partition ``X``, aggregate the block covariances with ``phi``, decompose.

    Parameters
    ----------
    X : (n, p) array
    m : number of blocks; ``m = 1`` is standard PCA
    phi : PhiSpec or anything accepted by :func:`phipca.phi.as_phi`
    seed : seed of the random partition (ignored when ``plan`` is given)
    ridge_eps : ridge added to each block; defaults to ``default_ridge`` of
        the pooled covariance when ``m > 1`` and to 0 when ``m = 1``
    centered : mean-center each block (otherwise use second moments)
    plan : explicit partition, overriding ``m`` and ``seed``
    """
    X = as_data_matrix(X)
    phi = as_phi(phi)
    n = X.shape[0]
    if plan is None:
        plan = make_partition(n, m, seed)
    m = plan.m
    if ridge_eps is None:
        ridge_eps = default_ridge(sample_covariance(X, centered=centered)) if m > 1 else 0.0
    covs = subsample_covariances(X, plan, centered=centered)
    sigma_hat = aggregate(covs, phi, ridge_eps)
    return AggregatedModel(
        sigma_hat=sigma_hat,
        decomp=eigh(sigma_hat),
        m=m,
        phi=phi,
        ridge_eps=float(ridge_eps),
        subcov_count=len(covs),
        mean=X.mean(axis=0),
        plan=plan,
    )


def fit_standard_pca(X, centered: bool = True) -> AggregatedModel:
    """Ordinary PCA expressed as the single-block special case."""
    return fit_phi_pca(X, 1, AM, seed=0, ridge_eps=0.0, centered=centered)


def product_decomposition(G: np.ndarray) -> SpectralDecomp:
    """Singular values and sign-fixed left singular vectors of ``G``."""
    U, s, _ = np.linalg.svd(G)
    return SpectralDecomp(values=s, vectors=_sign_fix(U))


def fit_ppca(X, seed: Optional[int] = 0, centered: bool = True, plan: Optional[PartitionPlan] = None) -> ProductModel:
    """Product PCA on a random two-block split of ``X``."""
    X = as_data_matrix(X)
    if X.shape[0] < 4:
        raise ParameterError(f"product PCA needs n >= 4, got {X.shape[0]}")
    if plan is None:
        plan = make_partition(X.shape[0], 2, seed)
    elif plan.m != 2:
        raise ParameterError("product PCA uses exactly two blocks")
    S1, S2 = subsample_covariances(X, plan, centered=centered)
    G = matrix_phi(S1, 0.5) @ matrix_phi(S2, 0.5)
    return ProductModel(product=G, decomp=product_decomposition(G), mean=X.mean(axis=0), plan=plan)
