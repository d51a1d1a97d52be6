"""Scalar aggregation maps applied spectrally to symmetric matrices.

A :class:`PhiSpec` bundles a strictly monotone map ``phi`` on the positive
half-line with its inverse and first two derivatives.  Three concrete
flavours exist:

* :class:`Power` -- ``u ** beta`` for nonzero ``beta`` (``beta=-1`` gives the
  harmonic mean, ``beta=1`` the arithmetic mean).
* :class:`LogLimit` -- ``ln u``, the ``beta -> 0`` limit (geometric mean).
* :class:`Custom` -- user supplied callables.

Affine reparametrisations ``a * phi + b`` leave the generalized mean
unchanged, which is why ``ln`` can stand in for the power family at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ParameterError

__all__ = [
    "PhiSpec",
    "Power",
    "LogLimit",
    "Custom",
    "HM",
    "GM",
    "AM",
    "as_phi",
]


class PhiSpec:
    """Interface shared by every aggregation map."""

    #: True when the map is only defined for strictly positive arguments.
    requires_positive: bool = True
    name: str = "phi"

    def __call__(self, u):
        raise NotImplementedError

    def inverse(self, v):
        raise NotImplementedError

    def derivative(self, u):
        raise NotImplementedError

    def second_derivative(self, u):
        raise NotImplementedError

    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class Power(PhiSpec):
    """``phi(u) = u ** beta`` with ``beta != 0``."""

    beta: float

    def __post_init__(self):
        beta = float(self.beta)
        if beta == 0.0 or not math.isfinite(beta):
            raise ParameterError(
                "Power requires a finite nonzero exponent; use LogLimit for beta -> 0"
            )
        object.__setattr__(self, "beta", beta)

    @property
    def requires_positive(self) -> bool:  # type: ignore[override]
        return self.beta <= 0

    @property
    def name(self) -> str:  # type: ignore[override]
        return {-1.0: "HM", 1.0: "AM"}.get(self.beta, f"beta={self.beta:g}")

    def __call__(self, u):
        return np.power(u, self.beta)

    def inverse(self, v):
        return np.power(v, 1.0 / self.beta)

    def derivative(self, u):
        return self.beta * np.power(u, self.beta - 1.0)

    def second_derivative(self, u):
        return self.beta * (self.beta - 1.0) * np.power(u, self.beta - 2.0)

    def label(self) -> str:
        return f"{self.beta:g}"


@dataclass(frozen=True)
class LogLimit(PhiSpec):
    """``phi(u) = ln u``; the geometric-mean member of the power family."""

    requires_positive = True
    name = "GM"

    def __call__(self, u):
        return np.log(u)

    def inverse(self, v):
        return np.exp(v)

    def derivative(self, u):
        return 1.0 / np.asarray(u, dtype=float)

    def second_derivative(self, u):
        return -1.0 / np.square(np.asarray(u, dtype=float))

    def label(self) -> str:
        return "log"


@dataclass(frozen=True)
class Custom(PhiSpec):
    """Arbitrary strictly monotone map on ``(0, inf)``.

    The callables must accept and return numpy arrays.  Positivity and strict
    monotonicity are spot-checked on a log-spaced grid at construction.
    """

    func: Callable
    inverse_func: Callable
    d1: Callable
    d2: Callable
    name: str = "custom"
    requires_positive: bool = field(default=True)

    def __post_init__(self):
        grid = np.logspace(-6, 6, 241)
        vals = np.asarray(self.func(grid), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ParameterError("custom phi must be finite on (0, inf)")
        if np.any(vals <= 0):
            raise ParameterError("custom phi must be positive on (0, inf)")
        steps = np.diff(vals)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ParameterError("custom phi must be strictly monotone on (0, inf)")

    def __call__(self, u):
        return self.func(u)

    def inverse(self, v):
        return self.inverse_func(v)

    def derivative(self, u):
        return self.d1(u)

    def second_derivative(self, u):
        return self.d2(u)


HM = Power(-1.0)
GM = LogLimit()
AM = Power(1.0)

_ALIASES = {"hm": HM, "harmonic": HM, "gm": GM, "log": GM, "geometric": GM, "am": AM, "arithmetic": AM}


def as_phi(spec) -> PhiSpec:
    """Coerce ``spec`` (a PhiSpec, a number or an alias string) to a PhiSpec.

    ``0`` and the strings ``"log"``/``"gm"`` map to :class:`LogLimit`.
    """
    if isinstance(spec, PhiSpec):
        return spec
    if isinstance(spec, str):
        key = spec.strip().lower()
        if key in _ALIASES:
            return _ALIASES[key]
        try:
            spec = float(key)
        except ValueError:
            raise ParameterError(f"unknown phi specification {spec!r}") from None
    if isinstance(spec, (int, float, np.integer, np.floating)):
        if float(spec) == 0.0:
            return GM
        return Power(float(spec))
    raise ParameterError(f"cannot interpret {spec!r} as a phi specification")
