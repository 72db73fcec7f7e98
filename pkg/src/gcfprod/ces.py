"""CES technology, CES demand and the markup identities shared by the
simulator and the estimators.

All functions broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit


@dataclass(frozen=True)
class StructuralParams:
    alpha: float
    rho: float
    nu: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not np.isfinite(self.rho) or self.rho == 0.0:
            raise ValueError(f"rho must be finite and nonzero, got {self.rho}")
        if not self.nu > 0.0:
            raise ValueError(f"nu must be positive, got {self.nu}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.rho, self.nu])

    @classmethod
    def from_array(cls, x) -> "StructuralParams":
        return cls(float(x[0]), float(x[1]), float(x[2]))


DEFAULT_THETA = StructuralParams(alpha=0.3, rho=-1.0, nu=0.95)


@dataclass(frozen=True)
class DemandState:
    delta1: np.ndarray | float
    delta2: np.ndarray | float

    @property
    def eta(self):
        """Demand elasticity, always > 1."""
        return 1.0 + np.exp(-np.asarray(self.delta2))


def _log_weights(params: StructuralParams, k, v):
    a = np.log(params.alpha) + params.rho * np.asarray(k, dtype=float)
    b = np.log1p(-params.alpha) + params.rho * np.asarray(v, dtype=float)
    return a, b


def log_output(params: StructuralParams, k, v):
    """f(k, v) = (nu/rho) ln(alpha e^{rho k} + (1-alpha) e^{rho v}), log-sum-exp form."""
    a, b = _log_weights(params, k, v)
    return params.nu / params.rho * np.logaddexp(a, b)


def output_elasticity_v(params: StructuralParams, k, v):
    """df/dv, which lies in (0, nu)."""
    a, b = _log_weights(params, k, v)
    return params.nu * expit(b - a)


def log_output_elasticity_v(params: StructuralParams, k, v):
    a, b = _log_weights(params, k, v)
    return np.log(params.nu) + log_expit(b - a)


def output_elasticity_k(params: StructuralParams, k, v):
    a, b = _log_weights(params, k, v)
    return params.nu * expit(a - b)


def markup(delta2):
    return 1.0 + np.exp(delta2)


def log_markup(delta2):
    return np.logaddexp(0.0, delta2)


def inverse_demand(state: DemandState, q_star):
    """Log price clearing q* = delta1 - eta * p."""
    return (np.asarray(state.delta1) - q_star) / state.eta


def demand(state: DemandState, p):
    return np.asarray(state.delta1) - state.eta * p


def log_markup_plus_noise(p, q, pV, v, elasticity):
    """ln(mu) + eps = p + q - pV - v + ln(df/dv)."""
    elasticity = np.asarray(elasticity, dtype=float)
    if np.any(~(elasticity > 0)):
        raise ValueError("output elasticity must be positive")
    return p + q - pV - v + np.log(elasticity)
