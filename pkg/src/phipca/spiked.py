"""Rank-one spiked working model and its eigen-flip analysis.

Population ``Sigma = a xi xi^T + (I - xi xi^T)``; a fraction ``delta`` of one
block is replaced by noise of strength ``eta`` along a direction ``nu``
orthogonal to ``xi``.  The HM and GM population aggregates are available in
closed form, which gives explicit conditions for ``nu`` to overtake ``xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DegeneracyError, ParameterError, ValidationError
from .linalg import eigh, matrix_exp, matrix_log

__all__ = [
    "SpikedModel",
    "spiked_sigma",
    "contaminated_block",
    "hm_population_aggregate",
    "gm_population_aggregate",
    "hm_closed_form_eigenvalues",
    "hm_flip_rhs",
    "hm_flip_holds",
    "gm_flip_threshold",
    "gm_flip_holds",
    "immunity_threshold",
    "is_immune",
    "leading_is_noise",
    "select_m",
    "objective_R",
]

_TIE_TOL = 1e-12


def _default_dirs(p: int):
    xi = np.zeros(p)
    nu = np.zeros(p)
    xi[0] = 1.0
    nu[1] = 1.0
    return xi, nu


@dataclass(frozen=True)
class SpikedModel:
    """Parameters of the working model.

    ``signal_dir`` and ``noise_dir`` default to the first two coordinate
    axes of ``R^p``; ``p = 2`` suffices for every flip statement.
    """

    a: float
    eta: float
    delta: float
    m: int
    p: int = 2
    signal_dir: Optional[np.ndarray] = field(default=None, repr=False)
    noise_dir: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.p < 2:
            raise ParameterError("the working model needs p >= 2")
        if not self.a > 1:
            raise ParameterError(f"signal strength a must exceed 1, got {self.a}")
        if not self.eta > 1:
            raise ParameterError(f"noise strength eta must exceed 1, got {self.eta}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.m) < 1:
            raise ParameterError(f"m must be >= 1, got {self.m}")
        xi0, nu0 = _default_dirs(self.p)
        xi = xi0 if self.signal_dir is None else np.asarray(self.signal_dir, dtype=float)
        nu = nu0 if self.noise_dir is None else np.asarray(self.noise_dir, dtype=float)
        if xi.shape != (self.p,) or nu.shape != (self.p,):
            raise ValidationError("direction vectors must have length p")
        xi = xi / np.linalg.norm(xi)
        nu = nu / np.linalg.norm(nu)
        if abs(float(xi @ nu)) > 1e-12:
            raise ValidationError("signal and noise directions must be orthogonal")
        object.__setattr__(self, "signal_dir", xi)
        object.__setattr__(self, "noise_dir", nu)
        object.__setattr__(self, "m", int(self.m))

    def embed(self, p: int) -> "SpikedModel":
        """Same parameters in ``R^p`` with coordinate-axis directions."""
        return SpikedModel(a=self.a, eta=self.eta, delta=self.delta, m=self.m, p=p)


def spiked_sigma(model: SpikedModel) -> np.ndarray:
    xi = model.signal_dir
    return np.eye(model.p) + (model.a - 1.0) * np.outer(xi, xi)


def contaminated_block(model: SpikedModel) -> np.ndarray:
    """Target of the contaminated block: ``(1-delta) Sigma + delta eta nu nu^T``."""
    nu = model.noise_dir
    return (1.0 - model.delta) * spiked_sigma(model) + model.delta * model.eta * np.outer(nu, nu)


def hm_population_aggregate(model: SpikedModel) -> np.ndarray:
    """``[(1/m) C^{-1} + ((m-1)/m) Sigma^{-1}]^{-1}`` with ``C`` the contaminated block."""
    m = model.m
    inv_mean = (np.linalg.inv(contaminated_block(model)) + (m - 1) * np.linalg.inv(spiked_sigma(model))) / m
    if np.linalg.cond(inv_mean) > 1e15:
        raise DegeneracyError("averaged precision matrix is numerically singular")
    out = np.linalg.inv(inv_mean)
    return (out + out.T) / 2.0


def gm_population_aggregate(model: SpikedModel) -> np.ndarray:
    """``exp{(1/m)[ln C + (m-1) ln Sigma]}``."""
    m = model.m
    return matrix_exp((matrix_log(contaminated_block(model)) + (m - 1) * matrix_log(spiked_sigma(model))) / m)


def hm_closed_form_eigenvalues(model: SpikedModel) -> dict:
    """Eigenvalues of the HM aggregate along ``xi``, ``nu`` and the bulk."""
    a, eta, d, m = model.a, model.eta, model.delta, model.m
    return {
        "signal": 1.0 / (1.0 / (m * (1 - d) * a) + (m - 1) / (m * a)),
        "noise": 1.0 / (1.0 / (m * (1 - d + d * eta)) + (m - 1) / m),
        "bulk": 1.0 - d / (m - (m - 1) * d),
    }


def hm_flip_rhs(model: SpikedModel) -> float:
    """Right-hand side of the HM flip inequality ``a < rhs``."""
    d, eta, m = model.delta, model.eta, model.m
    c = 1 - d + d * eta
    return (1 + (m - 1) * (1 - d)) * c / ((1 - d) * (1 + (m - 1) * c))


def hm_flip_holds(model: SpikedModel) -> bool:
    """True when ``nu`` leads the HM aggregate, i.e. ``a < hm_flip_rhs``."""
    rhs = hm_flip_rhs(model)
    if abs(model.a - rhs) <= _TIE_TOL * max(1.0, rhs):
        raise DegeneracyError(f"a={model.a} ties the flip boundary {rhs}")
    return model.a < rhs


def gm_flip_threshold(model: SpikedModel) -> float:
    """``eta`` above which GM flips: ``((1-delta)/delta)(a^m - 1)``."""
    d = model.delta
    return (1 - d) / d * (model.a**model.m - 1)


def gm_flip_holds(model: SpikedModel) -> bool:
    thr = gm_flip_threshold(model)
    if abs(model.eta - thr) <= _TIE_TOL * max(1.0, thr):
        raise DegeneracyError(f"eta={model.eta} ties the GM flip boundary {thr}")
    return model.eta > thr


def immunity_threshold(m: int, delta: float) -> float:
    """Signal strength ``1 + 1/((m-1)(1-delta))`` beyond which HM never flips.

    Returns ``inf`` for ``m = 1``.
    """
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    if not 0 <= delta < 1:
        raise ParameterError(f"delta must lie in [0, 1), got {delta}")
    if m == 1:
        return math.inf
    return 1.0 + 1.0 / ((m - 1) * (1.0 - delta))


def is_immune(model: SpikedModel) -> bool:
    return model.a > immunity_threshold(model.m, model.delta)


def leading_is_noise(aggregate: np.ndarray, model: SpikedModel) -> bool:
    """Direct eigen-ordering check: does the top eigenvector align with ``nu``?

    Compares the Rayleigh quotients along ``nu`` and ``xi`` (both are exact
    eigenvectors of the aggregates) and confirms with a full decomposition.
    """
    nu, xi = model.noise_dir, model.signal_dir
    lead = eigh(aggregate).vectors[:, 0]
    by_vector = abs(lead @ nu) > abs(lead @ xi)
    by_value = float(nu @ aggregate @ nu) > float(xi @ aggregate @ xi)
    if by_vector != by_value:
        raise DegeneracyError("signal and noise eigenvalues are numerically tied")
    return by_value


def objective_R(m: int, eps: float) -> float:
    """``R(m) = 1 / ((m-1)(1 - m eps))``."""
    return 1.0 / ((m - 1) * (1.0 - m * eps))


def select_m(n: Optional[int] = None, eps: Optional[float] = None, alpha: Optional[float] = None) -> int:
    """Partition count minimizing ``R(m) + alpha m eps`` over ``2..floor(1/(2 eps))``.

    Without ``eps`` and ``alpha`` the rule ``floor(sqrt(n))`` is returned.
    """
    if eps is None and alpha is None:
        if n is None or n < 4:
            raise ParameterError("need n >= 4 for the floor(sqrt(n)) rule")
        return math.isqrt(int(n))
    if eps is None or alpha is None:
        raise ParameterError("eps and alpha must be given together")
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    hi = int(math.floor(1.0 / (2.0 * eps)))
    if hi < 2:
        raise ParameterError(f"no feasible m for eps={eps}")
    ms = np.arange(2, hi + 1)
    obj = 1.0 / ((ms - 1) * (1.0 - ms * eps)) + alpha * ms * eps
    return int(ms[int(np.argmin(obj))])
