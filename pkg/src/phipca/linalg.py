"""Dense symmetric linear algebra used throughout the package.

Everything here is a pure function on numpy arrays.  Symmetric inputs are
validated and symmetrized with ``(A + A.T) / 2`` on entry, eigensystems are
returned in descending order with a deterministic sign convention, and matrix
functions are evaluated spectrally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConvergenceError,
    DegeneracyError,
    DomainError,
    ParameterError,
    ValidationError,
)
from .phi import PhiSpec, Power, as_phi

__all__ = [
    "SpectralDecomp",
    "as_symmetric",
    "eigh",
    "matrix_phi",
    "matrix_log",
    "matrix_exp",
    "matrix_power",
    "matrix_sqrt",
    "pinv_shift",
    "principal_singulars",
    "commutation_matrix",
    "gaussian_fourth_moment",
    "MAX_KRON_DIM",
]

# Gross asymmetry (relative) that is rejected rather than silently averaged.
_ASYM_REJECT = 1e-6
# Relative gap below which eigenvalues count as degenerate in theory code.
GAP_TOL = 1e-12
MAX_KRON_DIM = 50


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigenvalues in descending order and matching orthonormal eigenvectors.

    Attributes
    ----------
    values : ndarray of shape (p,)
    vectors : ndarray of shape (p, p)
        Column ``j`` is the eigenvector for ``values[j]``.  The entry of
        largest magnitude in every column is positive.
    """

    values: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def leading(self, r: int) -> np.ndarray:
        """Return the ``p x r`` block of leading eigenvectors."""
        if not 0 <= r <= self.dim:
            raise ParameterError(f"requested {r} components from a {self.dim}-dimensional system")
        return self.vectors[:, :r]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def as_symmetric(A, name: str = "matrix") -> np.ndarray:
    """Validate ``A`` as a finite square matrix and return its symmetric part."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > _ASYM_REJECT * scale:
        raise ValidationError(f"{name} is not symmetric")
    return (A + A.T) / 2.0


def _sign_fix(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def eigh(A) -> SpectralDecomp:
    """Eigendecomposition of a symmetric matrix, descending order.

    Raises
    ------
    ConvergenceError
        If LAPACK fails; the message summarizes the matrix scale.
    """
    if isinstance(A, SpectralDecomp):
        return A
    S = as_symmetric(A)
    try:
        w, V = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        fro = float(np.linalg.norm(S))
        raise ConvergenceError(
            f"eigensolver failed on {S.shape[0]}x{S.shape[0]} matrix "
            f"(Frobenius norm {fro:.3e}, max |entry| {np.max(np.abs(S)):.3e}): {exc}"
        ) from exc
    w = w[::-1].copy()
    V = _sign_fix(V[:, ::-1])
    return SpectralDecomp(values=w, vectors=V)


def _checked_values(values: np.ndarray, phi: PhiSpec) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    if phi.requires_positive:
        bad = np.flatnonzero(values <= 0)
        if bad.size:
            j = int(bad[0])
            raise DomainError(
                f"phi={phi.label()} needs strictly positive eigenvalues; "
                f"eigenvalue {j} equals {values[j]:.3e}"
            )
        return values
    bad = np.flatnonzero(values < -1e-8 * scale)
    if bad.size:
        j = int(bad[0])
        raise DomainError(
            f"phi={phi.label()} needs nonnegative eigenvalues; eigenvalue {j} equals {values[j]:.3e}"
        )
    return np.clip(values, 0.0, None)


def matrix_phi(A, phi) -> np.ndarray:
    """Apply ``phi`` to the eigenvalues of ``A``: ``sum_j phi(l_j) g_j g_j^T``.

    ``A`` may also be a precomputed :class:`SpectralDecomp`.
    """
    phi = as_phi(phi)
    dec = eigh(A)
    vals = np.asarray(phi(_checked_values(dec.values, phi)), dtype=float)
    out = (dec.vectors * vals) @ dec.vectors.T
    return (out + out.T) / 2.0


def _inverse_phi(A, phi: PhiSpec) -> np.ndarray:
    """Apply ``phi^{-1}`` spectrally (no domain check on the image side)."""
    dec = eigh(A)
    vals = np.asarray(phi.inverse(dec.values), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise DomainError(f"phi^-1 for phi={phi.label()} is undefined on the averaged spectrum")
    out = (dec.vectors * vals) @ dec.vectors.T
    return (out + out.T) / 2.0


def matrix_log(A) -> np.ndarray:
    """Principal logarithm of a symmetric positive definite matrix."""
    dec = eigh(A)
    bad = np.flatnonzero(dec.values <= 0)
    if bad.size:
        j = int(bad[0])
        raise DomainError(f"matrix_log needs positive eigenvalues; eigenvalue {j} equals {dec.values[j]:.3e}")
    out = (dec.vectors * np.log(dec.values)) @ dec.vectors.T
    return (out + out.T) / 2.0


def matrix_exp(A) -> np.ndarray:
    dec = eigh(A)
    out = (dec.vectors * np.exp(dec.values)) @ dec.vectors.T
    return (out + out.T) / 2.0


def matrix_power(A, beta: float) -> np.ndarray:
    return matrix_phi(A, Power(beta))


def matrix_sqrt(A) -> np.ndarray:
    return matrix_phi(A, Power(0.5))


def pinv_shift(decomp: SpectralDecomp, j: int, gap_tol: float = GAP_TOL) -> np.ndarray:
    """Pseudoinverse ``(l_j I - Sigma)^+ = sum_{l != j} g_l g_l^T / (l_j - l_l)``.

    ``j`` is a zero-based index into the descending spectrum.

    Raises
    ------
    DegeneracyError
        If some other eigenvalue lies within ``gap_tol * l_1`` of ``l_j``.
    """
    lam = decomp.values
    p = lam.shape[0]
    if not 0 <= j < p:
        raise ParameterError(f"index {j} out of range for dimension {p}")
    gaps = lam[j] - lam
    gaps[j] = np.inf
    tol = gap_tol * max(abs(lam[0]), np.finfo(float).tiny)
    near = np.flatnonzero(np.abs(gaps) < tol)
    if near.size:
        raise DegeneracyError(
            f"eigenvalues {j} and {int(near[0])} are nearly equal ({lam[j]:.6e})"
        )
    coef = 1.0 / gaps
    coef[j] = 0.0
    G = decomp.vectors
    return (G * coef) @ G.T


def _check_orthonormal(B: np.ndarray, name: str, tol: float) -> None:
    gram = B.T @ B
    if np.max(np.abs(gram - np.eye(B.shape[1]))) > tol:
        raise ValidationError(f"{name} does not have orthonormal columns")


def principal_singulars(Bq, Gr, tol: float = 1e-8) -> np.ndarray:
    """Singular values of ``Bq^T Gr`` (cosines of the principal angles).

    Parameters
    ----------
    Bq : (p, q) array with orthonormal columns
    Gr : (p, r) array with orthonormal columns, ``r <= q``

    Returns
    -------
    ndarray of shape (r,), descending, clipped into ``[0, 1]``.
    """
    Bq = np.asarray(Bq, dtype=float)
    Gr = np.asarray(Gr, dtype=float)
    if Bq.ndim != 2 or Gr.ndim != 2 or Bq.shape[0] != Gr.shape[0]:
        raise ValidationError(f"incompatible bases: {Bq.shape} and {Gr.shape}")
    if Bq.shape[1] < Gr.shape[1]:
        raise ValidationError("the fitted basis must have at least as many columns as the target")
    _check_orthonormal(Bq, "Bq", tol)
    _check_orthonormal(Gr, "Gr", tol)
    sv = np.linalg.svd(Bq.T @ Gr, compute_uv=False)
    return np.clip(sv, 0.0, 1.0)


def _kron_guard(p: int) -> None:
    if p > MAX_KRON_DIM:
        raise ParameterError(f"p={p} exceeds the dense p^2 x p^2 limit of {MAX_KRON_DIM}")


def commutation_matrix(p: int) -> np.ndarray:
    """The ``p^2 x p^2`` matrix with ``K vec(A) = vec(A.T)`` (column-major vec)."""
    _kron_guard(p)
    K = np.zeros((p * p, p * p))
    i, j = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    # vec index of A[i, j] is i + j*p; of A.T[i, j] = A[j, i] is j + i*p
    K[(i + j * p).ravel(), (j + i * p).ravel()] = 1.0
    return K


def gaussian_fourth_moment(sigma) -> np.ndarray:
    """``cov{vec(X X^T)} = (I + K)(Sigma kron Sigma)`` for ``X ~ N(0, Sigma)``."""
    S = as_symmetric(sigma, "sigma")
    p = S.shape[0]
    _kron_guard(p)
    SS = np.kron(S, S)
    out = SS + commutation_matrix(p) @ SS
    return (out + out.T) / 2.0
