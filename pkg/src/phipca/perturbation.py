"""Second-order perturbation calculus for partition-aggregate PCA.

A population covariance ``Sigma`` is contaminated by a point mass at ``x``.
Standard PCA sees ``F_{x,eps}``; the ``m``-block estimator sees one block at
``F_{x,m*eps}`` and ``m - 1`` clean blocks.  This module provides

* closed-form ``eps^2`` coefficients for the difference between the two
  (eigenvalue shifts, cross cosine shift, ordering-robustness ``tau`` and its
  special cases for HM/GM/AM and product PCA);
* an exact numerical oracle that builds both population aggregates and
  decomposes them, independent of any series expansion;
* :func:`verify_expansion`, which compares the two across an ``eps`` ladder;
* the Gaussian asymptotic covariance of the estimated eigensystem.

Indices are zero-based: ``j < r`` are signal components, ``k >= r`` noise.
Coefficients are returned divided by ``eps^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .aggregate import product_decomposition
from .exceptions import DegeneracyError, DomainError, ParameterError, ValidationError
from .linalg import (
    GAP_TOL,
    SpectralDecomp,
    _inverse_phi,
    as_symmetric,
    eigh,
    gaussian_fourth_moment,
    matrix_phi,
    pinv_shift,
)
from .phi import LogLimit, PhiSpec, Power, as_phi

__all__ = [
    "PopulationModel",
    "ContaminationSpec",
    "PerturbationReport",
    "SECOND_MOMENT",
    "CENTERED",
    "rho",
    "d_coeff",
    "d_coeffs",
    "W_matrix",
    "thm2_eigenvalue_shift",
    "thm2_eigenvalue_shifts",
    "thm2_eigvec_cross_shift",
    "xi_weights",
    "delta",
    "delta_beta",
    "tau_expansion",
    "corollary1_delta_beta",
    "delta_0",
    "delta_ppca",
    "tau_hm",
    "tau_gm",
    "tau_am",
    "tau_ppca",
    "contaminated_covariance",
    "oracle_perturbed_spectrum",
    "oracle_ppca_spectrum",
    "perturbation_report",
    "verify_expansion",
    "ExpansionCheck",
    "gaussian_asym_cov",
    "REFERENCE_SPECTRUM",
    "reference_population",
    "reference_outliers",
]

SECOND_MOMENT = "second_moment"
CENTERED = "centered"
_MODES = (SECOND_MOMENT, CENTERED)


@dataclass(frozen=True)
class PopulationModel:
    """Population covariance with distinct eigenvalues and a signal rank ``r``."""

    sigma: np.ndarray
    r: int
    decomp: SpectralDecomp = field(init=False, repr=False)

    def __post_init__(self):
        S = as_symmetric(self.sigma, "sigma")
        dec = eigh(S)
        lam = dec.values
        p = lam.shape[0]
        if not 1 <= self.r < p:
            raise ParameterError(f"signal rank must satisfy 1 <= r < p={p}, got {self.r}")
        if lam[-1] <= 0:
            raise DomainError("population covariance must be positive definite")
        gaps = -np.diff(lam)
        if np.any(gaps < GAP_TOL * lam[0]):
            j = int(np.argmin(gaps))
            raise DegeneracyError(f"eigenvalues {j} and {j + 1} are nearly equal ({lam[j]:.6e})")
        object.__setattr__(self, "sigma", S)
        object.__setattr__(self, "decomp", dec)

    @classmethod
    def from_spectrum(cls, eigenvalues, eigenvectors=None, r: int = 1) -> "PopulationModel":
        lam = np.asarray(eigenvalues, dtype=float)
        G = np.eye(lam.shape[0]) if eigenvectors is None else np.asarray(eigenvectors, dtype=float)
        return cls(sigma=(G * lam) @ G.T, r=r)

    @property
    def p(self) -> int:
        return self.decomp.dim

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.decomp.values

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.decomp.vectors

    def coords(self, x) -> np.ndarray:
        """Coordinates ``gamma_j^T x`` of ``x`` in the eigenbasis."""
        return self.eigenvectors.T @ np.asarray(x, dtype=float)

    def mahalanobis_sq(self, x) -> float:
        c = self.coords(x)
        return float(np.sum(c * c / self.eigenvalues))

    def is_orthogonal_to_signal(self, x, tol: float = 1e-10) -> bool:
        x = np.asarray(x, dtype=float)
        c = self.coords(x)[: self.r]
        return bool(np.all(np.abs(c) <= tol * max(np.linalg.norm(x), np.finfo(float).tiny)))


@dataclass(frozen=True)
class ContaminationSpec:
    """Point contamination at ``x`` with mass ``eps`` and ``m`` blocks."""

    x: np.ndarray
    eps: float
    m: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValidationError("outlier location must be a finite vector")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if int(self.m) < 1:
            raise ParameterError(f"m must be >= 1, got {self.m}")
        if self.eps * self.m >= 1:
            raise ParameterError(f"eps * m must be below 1, got {self.eps * self.m}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "m", int(self.m))

    @property
    def delta(self) -> float:
        return self.m * self.eps


@dataclass
class PerturbationReport:
    """Analytic coefficients and, when filled, their oracle counterparts."""

    delta: float
    delta_beta: float
    xi_weights: np.ndarray
    tau_analytic: float
    maha: float
    tau_numeric: Optional[float] = None
    eigvec_parallel_diff: Optional[np.ndarray] = None
    eigvec_cross_diff: Optional[float] = None
    eigval_rel_diff: Optional[np.ndarray] = None


def _check_x(model: PopulationModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.p,):
        raise ValidationError(f"outlier must have length {model.p}, got shape {x.shape}")
    return x


def rho(lam_j: float, lam_k: float) -> float:
    """Ordering margin ``lam_j / (lam_j + lam_k)``."""
    if lam_j <= 0 or lam_k <= 0:
        raise DomainError(f"rho needs positive eigenvalues, got {lam_j}, {lam_k}")
    return lam_j / (lam_j + lam_k)


def d_coeffs(model: PopulationModel, x) -> np.ndarray:
    """Normalized leverages ``(gamma_j^T x)^2 / lam_j`` for every ``j``."""
    c = model.coords(_check_x(model, x))
    return c * c / model.eigenvalues


def d_coeff(model: PopulationModel, x, j: int) -> float:
    return float(d_coeffs(model, x)[j])


def _phi_at(phi: PhiSpec, lam: float):
    d1 = float(phi.derivative(lam))
    if d1 == 0 or not math.isfinite(d1):
        raise DomainError(f"phi'({lam:g}) = {d1}; the expansion needs a nonzero derivative")
    return float(phi(lam)), d1, float(phi.second_derivative(lam))


def W_matrix(model: PopulationModel, phi, j: int) -> np.ndarray:
    """``W_j = (phi''/2phi') P_j + M_j - (1/phi') (phi_j I - phi(Sigma)) M_j^2``."""
    phi = as_phi(phi)
    dec = model.decomp
    lam = dec.values
    f, d1, d2 = _phi_at(phi, lam[j])
    M = pinv_shift(dec, j)
    g = dec.vectors[:, j]
    phi_sigma = matrix_phi(dec, phi)
    W = (d2 / (2 * d1)) * np.outer(g, g) + M - (f * np.eye(model.p) - phi_sigma) @ M @ M / d1
    return (W + W.T) / 2.0


def thm2_eigenvalue_shift(model: PopulationModel, phi, cont: ContaminationSpec, j: int) -> float:
    """``eps^2`` coefficient of ``(lam_j(F^(m)) - lam_j(F^(1))) / lam_j``."""
    phi = as_phi(phi)
    x = _check_x(model, cont.x)
    lam_j = model.eigenvalues[j]
    _, d1, d2 = _phi_at(phi, lam_j)
    dj = d_coeff(model, x, j)
    xWx = float(x @ W_matrix(model, phi, j) @ x)
    ratio = d2 * lam_j / d1
    return (cont.m - 1) * (dj * (xWx - 1.0 - ratio) + ratio / 2.0)


def thm2_eigenvalue_shifts(model: PopulationModel, phi, cont: ContaminationSpec) -> np.ndarray:
    return np.array([thm2_eigenvalue_shift(model, phi, cont, j) for j in range(model.p)])


def thm2_eigvec_cross_shift(model: PopulationModel, cont: ContaminationSpec) -> float:
    """Closed-form ``eps^2`` coefficient of the summed signal cross cosines.

    Evaluates ``(m-1) sum_{j<k<r} -(lam_j d_j + lam_k d_k)(g_j^T x)(g_k^T x)/(lam_j-lam_k)^2``.
    The expression involves no ``phi``.
    """
    x = _check_x(model, cont.x)
    lam = model.eigenvalues
    c = model.coords(x)
    d = c * c / lam
    total = 0.0
    for j in range(model.r):
        for k in range(j + 1, model.r):
            total += -(lam[j] * d[j] + lam[k] * d[k]) / (lam[j] - lam[k]) ** 2 * c[j] * c[k]
    return (cont.m - 1) * total


def _beta_of(phi) -> Optional[float]:
    """Exponent of a power map; ``None`` for the log limit."""
    phi = as_phi(phi)
    if isinstance(phi, LogLimit):
        return None
    if isinstance(phi, Power):
        return phi.beta
    raise ParameterError("tau expansion is defined for power maps and the log limit only")


def _power_kernel(t: np.ndarray, beta: Optional[float]) -> np.ndarray:
    """``(1 - t^beta) / beta``, or ``-ln t`` in the log limit."""
    if beta is None:
        return -np.log(t)
    return (1.0 - np.power(t, beta)) / beta


def xi_weights(model: PopulationModel, x, beta_mode) -> np.ndarray:
    """Per-component weights multiplying ``d_j`` inside ``Delta_beta``."""
    beta = _beta_of(beta_mode)
    b = 0.0 if beta is None else beta
    lam = model.eigenvalues
    d = d_coeffs(model, x)
    p = model.p
    xi = np.zeros(p)
    for j in range(p):
        others = np.arange(p) != j
        ll = lam[others]
        term = (
            ll * lam[j] / (lam[j] - ll) ** 2 * _power_kernel(ll / lam[j], beta)
            - ll / (lam[j] - ll)
            - (1.0 - b) / 2.0
        )
        xi[j] = float(np.sum(term * d[others]))
    return xi


def delta(model: PopulationModel, x) -> float:
    """Mean noise leverage minus mean signal leverage."""
    d = d_coeffs(model, x)
    r = model.r
    return float(d[r:].mean() - d[:r].mean())


def delta_beta(model: PopulationModel, x, beta_mode) -> float:
    d = d_coeffs(model, x)
    w = xi_weights(model, x, beta_mode) * d
    r = model.r
    return float(w[r:].mean() - w[:r].mean())


def tau_expansion(model: PopulationModel, cont: ContaminationSpec, beta_mode) -> PerturbationReport:
    """``tau / eps^2`` for the power family (or its log limit).

    ``(m-1) * {((1-beta)/2 * x'Sigma^{-1}x + beta) * Delta + Delta_beta}``
    """
    beta = _beta_of(beta_mode)
    b = 0.0 if beta is None else beta
    x = _check_x(model, cont.x)
    maha = model.mahalanobis_sq(x)
    D = delta(model, x)
    Db = delta_beta(model, x, beta_mode)
    tau = (cont.m - 1) * (((1.0 - b) / 2.0 * maha + b) * D + Db)
    return PerturbationReport(
        delta=D,
        delta_beta=Db,
        xi_weights=xi_weights(model, x, beta_mode),
        tau_analytic=float(tau),
        maha=maha,
    )


def _pair_bracket(t: float, beta: float) -> float:
    if beta == 0:
        return 0.0
    return beta - (t**beta + t ** (-beta) - 2.0) / (beta * (t + 1.0 / t - 2.0))


def corollary1_delta_beta(model: PopulationModel, x, beta: float) -> float:
    """``Delta_beta`` in pairwise form, valid when ``x`` is orthogonal to the signal.

    ``beta = 0`` is read as the limit ``beta -> 0``, where every bracket vanishes.
    """
    x = _check_x(model, x)
    if not model.is_orthogonal_to_signal(x):
        raise ValidationError("corollary form requires x orthogonal to the signal subspace")
    lam = model.eigenvalues
    d = d_coeffs(model, x)
    r, p = model.r, model.p
    total = 0.0
    for k in range(r, p):
        for l in range(r, k):
            total += _pair_bracket(lam[l] / lam[k], float(beta)) * d[k] * d[l]
    return total / (p - r)


def _cross_weights(model: PopulationModel, x, weight) -> float:
    lam = model.eigenvalues
    d = d_coeffs(model, x)
    r, p = model.r, model.p
    lj = lam[:r, None]
    lk = lam[None, r:]
    w = weight(lj, lk)
    return float(p / (r * (p - r)) * np.sum(w * d[:r, None] * d[None, r:]))


def delta_0(model: PopulationModel, x) -> float:
    """Extra GM term; nonnegative for every ``x``."""

    def weight(lj, lk):
        return lj * lk / (lj - lk) ** 2 * (0.5 * (lj / lk - lk / lj) - np.log(lj / lk))

    return _cross_weights(model, x, weight)


def delta_ppca(model: PopulationModel, x) -> float:
    """Extra product-PCA term; dominates :func:`delta_0`."""
    return _cross_weights(model, x, lambda lj, lk: (lj - lk) / (2.0 * (lj + lk)))


def _x_and_m(cont_or_x, m):
    if isinstance(cont_or_x, ContaminationSpec):
        return cont_or_x.x, cont_or_x.m
    if m is None:
        raise ParameterError("pass a ContaminationSpec or give m explicitly")
    return np.asarray(cont_or_x, dtype=float), int(m)


def tau_hm(model: PopulationModel, cont_or_x, m: Optional[int] = None) -> float:
    x, m = _x_and_m(cont_or_x, m)
    return (m - 1) * (model.mahalanobis_sq(x) - 1.0) * delta(model, x)


def tau_gm(model: PopulationModel, cont_or_x, m: Optional[int] = None) -> float:
    x, m = _x_and_m(cont_or_x, m)
    return (m - 1) * (0.5 * model.mahalanobis_sq(x) * delta(model, x) + delta_0(model, x))


def tau_am(model: PopulationModel, cont_or_x, m: Optional[int] = None) -> float:
    x, m = _x_and_m(cont_or_x, m)
    return (m - 1) * delta(model, x)


def tau_ppca(model: PopulationModel, cont_or_x, m: Optional[int] = None) -> float:
    """Product PCA coefficient; two blocks are intrinsic so no ``(m-1)`` factor."""
    x = cont_or_x.x if isinstance(cont_or_x, ContaminationSpec) else np.asarray(cont_or_x, dtype=float)
    return 0.5 * model.mahalanobis_sq(x) * delta(model, x) + delta_ppca(model, x)


# ---------------------------------------------------------------------------
# reference configuration


REFERENCE_SPECTRUM = (8.0, 5.0, 2.0, 1.5, 1.0, 0.6)


def reference_population(seed: int = 0) -> PopulationModel:
    """``p = 6, r = 2`` model with spectrum ``REFERENCE_SPECTRUM`` and a
    Haar-random eigenbasis drawn from ``default_rng(seed)``."""
    from .simulation import haar_orthogonal

    lam = np.asarray(REFERENCE_SPECTRUM)
    return PopulationModel.from_spectrum(lam, haar_orthogonal(lam.size, np.random.default_rng(seed)), r=2)


def _well_conditioned(model: PopulationModel, x, floor: float) -> bool:
    # relative errors are meaningless for coefficients that nearly cancel
    M = model.mahalanobis_sq(x)
    scaled = [
        delta(model, x) / M,
        tau_hm(model, x, 2) / M**2,
        tau_gm(model, x, 2) / M**2,
        tau_ppca(model, x) / M**2,
    ]
    return min(abs(c) for c in scaled) >= floor


def reference_outliers(
    model: PopulationModel,
    magnitudes: Sequence[float] = (3.0, 5.0, 8.0),
    seed: int = 1,
    floor: float = 0.02,
    max_draws: int = 1000,
) -> list:
    """Outliers ``x`` with ``x^T Sigma^{-1} x`` equal to each magnitude.

    The first ``len(magnitudes)`` lie in the noise eigenspace; the rest are
    generic directions, redrawn until no ``tau`` coefficient nearly cancels
    (each scaled coefficient at least ``floor`` in absolute value).
    """
    rng = np.random.default_rng(seed)
    lam, G = model.eigenvalues, model.eigenvectors

    def draw(orthogonal, target):
        for _ in range(max_draws):
            coef = rng.standard_normal(model.p) * np.sqrt(lam)
            if orthogonal:
                coef[: model.r] = 0.0
            x = G @ coef
            x *= math.sqrt(target / model.mahalanobis_sq(x))
            if _well_conditioned(model, x, floor):
                return x
        raise DegeneracyError(f"no well-conditioned outlier found in {max_draws} draws")

    return [draw(True, t) for t in magnitudes] + [draw(False, t) for t in magnitudes]


# ---------------------------------------------------------------------------
# numerical oracle


def contaminated_covariance(sigma, x, mass: float, moment_mode: str = CENTERED) -> np.ndarray:
    """Covariance functional of ``(1 - mass) N(0, Sigma) + mass * delta_x``.

    ``second_moment`` returns ``(1-mass) Sigma + mass x x^T``; ``centered``
    subtracts the shifted mean, giving ``(1-mass) Sigma + mass (1-mass) x x^T``.
    """
    if moment_mode not in _MODES:
        raise ParameterError(f"moment_mode must be one of {_MODES}, got {moment_mode!r}")
    S = np.asarray(sigma, dtype=float)
    x = np.asarray(x, dtype=float)
    coef = mass if moment_mode == SECOND_MOMENT else mass * (1.0 - mass)
    C = (1.0 - mass) * S + coef * np.outer(x, x)
    return (C + C.T) / 2.0


def _align(dec: SpectralDecomp, ref: np.ndarray) -> SpectralDecomp:
    """Flip eigenvector signs to agree with ``ref`` and check the ordering held."""
    overlap = np.sum(dec.vectors * ref, axis=0)
    if np.any(np.abs(overlap) < 1.0 / math.sqrt(2.0)):
        raise ParameterError("eps too large: the perturbed eigenvectors no longer track the population order")
    signs = np.where(overlap < 0, -1.0, 1.0)
    return SpectralDecomp(values=dec.values, vectors=dec.vectors * signs)


def _spd_or_raise(C: np.ndarray, what: str) -> np.ndarray:
    if np.linalg.eigvalsh(C)[0] <= 0:
        raise ParameterError(f"eps too large: {what} is not positive definite")
    return C


def oracle_perturbed_spectrum(
    model: PopulationModel, phi, cont: ContaminationSpec, moment_mode: str = CENTERED
):
    """Exact eigensystems of the ``m``-block aggregate and of standard PCA.

    Returns ``(decomp_m, decomp_1)`` with eigenvectors sign-aligned to the
    population eigenvectors.
    """
    phi = as_phi(phi)
    S = model.sigma
    x = _check_x(model, cont.x)
    C1 = _spd_or_raise(contaminated_covariance(S, x, cont.eps, moment_mode), "F_{x,eps} covariance")
    if cont.m == 1:
        Gm = C1
    else:
        Cm = _spd_or_raise(contaminated_covariance(S, x, cont.delta, moment_mode), "F_{x,m eps} covariance")
        avg = (matrix_phi(Cm, phi) + (cont.m - 1) * matrix_phi(S, phi)) / cont.m
        Gm = _inverse_phi(avg, phi)
    ref = model.eigenvectors
    return _align(eigh(Gm), ref), _align(eigh(C1), ref)


def oracle_ppca_spectrum(model: PopulationModel, eps: float, x, moment_mode: str = CENTERED):
    """Exact product-PCA aggregate at ``(F_{x,2eps}, F)`` against standard PCA."""
    S = model.sigma
    x = _check_x(model, x)
    C1 = _spd_or_raise(contaminated_covariance(S, x, eps, moment_mode), "F_{x,eps} covariance")
    C2 = _spd_or_raise(contaminated_covariance(S, x, 2 * eps, moment_mode), "F_{x,2 eps} covariance")
    G = matrix_phi(C2, 0.5) @ matrix_phi(S, 0.5)
    ref = model.eigenvectors
    return _align(product_decomposition(G), ref), _align(eigh(C1), ref)


def _numeric_tau(model: PopulationModel, vals_m: np.ndarray, vals_1: np.ndarray) -> float:
    lam = model.eigenvalues
    r = model.r
    sig, noi = slice(0, r), slice(r, None)

    def margins(v):
        return v[sig, None] / (v[sig, None] + v[None, noi])

    base = margins(lam)
    eta = base * (1.0 - base)
    return float(np.mean((margins(vals_m) - margins(vals_1)) / eta))


def _cosine_gap(Am: np.ndarray, A1: np.ndarray, r: int) -> np.ndarray:
    """``cos_m - cos_1`` per column ``j < r`` without cancellation.

    ``A[:, j]`` holds the coordinates of a perturbed eigenvector in the
    population eigenbasis; ``cos^2 = 1 - off / norm`` with ``off`` the squared
    off-axis mass, which is computed to full relative accuracy.
    """
    out = np.empty(r)
    for j in range(r):
        s = []
        for A in (Am, A1):
            col = A[:, j]
            norm = float(col @ col)
            rest = np.delete(col, j)
            off = float(rest @ rest)
            s.append((off / norm, abs(col[j]) / math.sqrt(norm)))
        (off_m, c_m), (off_1, c_1) = s
        out[j] = (off_1 - off_m) / (c_m + c_1)
    return out


def _numeric_quantities(model: PopulationModel, dm: SpectralDecomp, d1: SpectralDecomp, eps: float) -> dict:
    G = model.eigenvectors
    r = model.r
    diff = dm.vectors - d1.vectors
    proj = G.T @ diff  # proj[k, j] = g_k^T (g_j(F^m) - g_j(F^1))
    cross = sum(proj[k, j] for j in range(r) for k in range(r) if k != j)
    e2 = eps * eps
    return {
        "tau": _numeric_tau(model, dm.values, d1.values) / e2,
        "parallel": np.abs(_cosine_gap(G.T @ dm.vectors, G.T @ d1.vectors, r)) / e2,
        "cross": float(cross) / e2,
        "eigval": (dm.values - d1.values) / model.eigenvalues / e2,
    }


def perturbation_report(
    model: PopulationModel, phi, cont: ContaminationSpec, moment_mode: str = CENTERED
) -> PerturbationReport:
    """Analytic ``tau`` expansion plus oracle values at ``cont.eps``."""
    rep = tau_expansion(model, cont, phi)
    dm, d1 = oracle_perturbed_spectrum(model, phi, cont, moment_mode)
    q = _numeric_quantities(model, dm, d1, cont.eps)
    rep.tau_numeric = q["tau"]
    rep.eigvec_parallel_diff = q["parallel"]
    rep.eigvec_cross_diff = q["cross"]
    rep.eigval_rel_diff = q["eigval"]
    return rep


def _rel(analytic: float, numeric: float) -> float:
    if analytic == 0:
        return math.nan
    return abs(numeric - analytic) / abs(analytic)


@dataclass
class ExpansionCheck:
    """Rows comparing analytic coefficients with oracle slopes.

    Each row is a dict with keys ``beta, m, eps, quantity, analytic,
    numeric, rel_error, moment_mode``.  ``analytic`` is NaN for quantities
    whose leading coefficient vanishes (parallel eigenvector components).
    """

    rows: list

    def select(self, quantity: str) -> list:
        return [row for row in self.rows if row["quantity"] == quantity]

    def rel_error(self, quantity: str, eps: float) -> float:
        for row in self.rows:
            if row["quantity"] == quantity and row["eps"] == eps:
                return row["rel_error"]
        raise KeyError((quantity, eps))

    def numeric(self, quantity: str, eps: float) -> float:
        for row in self.rows:
            if row["quantity"] == quantity and row["eps"] == eps:
                return row["numeric"]
        raise KeyError((quantity, eps))

    def decreasing(self, quantity: str) -> bool:
        errs = [row["rel_error"] for row in sorted(self.select(quantity), key=lambda r: -r["eps"])]
        return all(b < a for a, b in zip(errs, errs[1:]))


def verify_expansion(
    model: PopulationModel,
    phi,
    x,
    m: int,
    eps_sequence: Sequence[float] = (1e-2, 1e-3, 1e-4),
    moment_mode: str = CENTERED,
) -> ExpansionCheck:
    """Compare every closed-form coefficient with the oracle over ``eps_sequence``.

    ``phi="ppca"`` checks the product-PCA coefficient instead (``m`` is then 2).
    """
    x = _check_x(model, x)
    rows = []
    is_ppca = isinstance(phi, str) and phi.lower() == "ppca"
    label = "ppca" if is_ppca else as_phi(phi).label()
    if is_ppca:
        m = 2
    for eps in eps_sequence:
        cont = ContaminationSpec(x=x, eps=eps, m=m)
        if is_ppca:
            dm, d1 = oracle_ppca_spectrum(model, eps, x, moment_mode)
            q = _numeric_quantities(model, dm, d1, eps)
            analytic = {"tau": tau_ppca(model, x)}
        else:
            phi_spec = as_phi(phi)
            dm, d1 = oracle_perturbed_spectrum(model, phi_spec, cont, moment_mode)
            q = _numeric_quantities(model, dm, d1, eps)
            shifts = thm2_eigenvalue_shifts(model, phi_spec, cont)
            analytic = {"tau": tau_expansion(model, cont, phi_spec).tau_analytic if _is_power_family(phi_spec)
                        else float(shifts[: model.r].mean() - shifts[model.r:].mean())}
            for j in range(model.p):
                analytic[f"eigval_{j}"] = float(shifts[j])
                q[f"eigval_{j}"] = float(q["eigval"][j])
            analytic["cross"] = thm2_eigvec_cross_shift(model, cont)
            for j in range(model.r):
                analytic[f"parallel_{j}"] = math.nan
                q[f"parallel_{j}"] = float(q["parallel"][j])
        for name, a in analytic.items():
            num = float(q[name])
            rows.append(
                {
                    "beta": label,
                    "m": m,
                    "eps": eps,
                    "quantity": name,
                    "analytic": float(a),
                    "numeric": num,
                    "rel_error": math.nan if math.isnan(a) else _rel(a, num),
                    "moment_mode": moment_mode,
                }
            )
    return ExpansionCheck(rows=rows)


def _is_power_family(phi: PhiSpec) -> bool:
    return isinstance(phi, (Power, LogLimit))


def gaussian_asym_cov(model: PopulationModel) -> np.ndarray:
    """Asymptotic covariance ``V = H^T cov{vec(XX^T)} H`` under normality.

    Rows and columns are ordered as ``(lam_1, ..., lam_p, vec(Gamma))``.
    """
    p = model.p
    if p > 20:
        raise ParameterError(f"gaussian_asym_cov supports p <= 20, got {p}")
    dec = model.decomp
    G = dec.vectors
    cols = [np.kron(G[:, j], G[:, j])[:, None] for j in range(p)]
    cols += [np.kron(G[:, j][:, None], pinv_shift(dec, j)) for j in range(p)]
    H = np.hstack(cols)
    V = H.T @ gaussian_fourth_moment(model.sigma) @ H
    return (V + V.T) / 2.0
