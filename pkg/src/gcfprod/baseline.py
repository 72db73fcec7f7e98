"""Proxy-variable (OP/LP/ACF-style) comparison estimator.

First stage: Hermite least-squares fit of q_{t-1} on x_{t-1}, with x_{t-1}
taken to be the instrument vector z_t.  Second stage: GMM on

    E[phi(z) (q_t - f(k_t, v_t) - g(E[q_{t-1} | x_{t-1}] - f(k_{t-1}, v_{t-1})))] = 0

with g a univariate Hermite polynomial.  The coefficients of g enter
linearly and are concentrated out, so the numerical search is over theta only.

No first-order bias correction is applied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermevander

from . import ces, features
from .ces import StructuralParams
from .dgp import FirmPanel
from .gcf import (DEFAULT_Z, EstimateOptions, EstimationResult, EstimationTable,
                  average_log_markup, build_lagged_frame, inverse_covariance, residual,
                  whitener)
from .optim import minimize_theta


@dataclass(frozen=True)
class BaselineConfig:
    first_stage_degree: int = 4
    g_degree: int = 4
    z_vars: tuple[str, ...] = DEFAULT_Z
    phi_degree: int = 4
    x_vars: tuple[str, ...] | None = None   # defaults to z_vars

    def __post_init__(self):
        if self.first_stage_degree < 1 or self.g_degree < 1:
            raise ValueError("degrees must be >= 1")

    @property
    def first_stage_vars(self) -> tuple[str, ...]:
        return self.x_vars if self.x_vars is not None else self.z_vars


def first_stage(table: EstimationTable, x_vars, degree: int = 4) -> np.ndarray:
    """Fitted E[q_{t-1} | x_{t-1}] for every estimation row."""
    x = table.matrix(x_vars)
    spec = features.FeatureSpec.fit(x_vars, degree, x)
    return features.project(features.hermite_basis(spec, x), table["q_lag"])


def recovered_productivity(theta, table, fitted_lag_q) -> np.ndarray:
    return fitted_lag_q - ces.log_output(theta, table["k_lag"], table["v_lag"])


def law_of_motion_basis(omega_hat, degree: int) -> np.ndarray:
    """He_0..He_degree of standardized recovered productivity."""
    sd = omega_hat.std()
    if not sd > 0:
        raise ValueError("recovered productivity has no variation")
    return hermevander((omega_hat - omega_hat.mean()) / sd, degree)


class BaselineProblem:
    """Precomputed pieces of the second-stage GMM problem."""

    def __init__(self, table: EstimationTable, config: BaselineConfig):
        self.table = table
        self.config = config
        self.fitted_lag_q = first_stage(table, config.first_stage_vars, config.first_stage_degree)
        z = table.matrix(config.z_vars)
        spec = features.FeatureSpec.fit(config.z_vars, config.phi_degree, z)
        basis = features.hermite_basis(spec, z)
        self.phi = np.ascontiguousarray(basis.columns)
        self.n_moments = self.phi.shape[1]

    def parts(self, theta):
        r = residual(theta, self.table)
        G = law_of_motion_basis(recovered_productivity(theta, self.table, self.fitted_lag_q),
                                self.config.g_degree)
        return r, G

    def concentrate(self, theta, W, L=None):
        """Moment vector at theta with g's coefficients set to their GMM optimum.

        The weighted least-squares step runs on whitened moments L'g (W = L L')
        via QR, which avoids squaring the condition number of the normal equations.
        """
        n = self.table.n
        r, G = self.parts(theta)
        PG = self.phi.T @ np.column_stack([r, G]) / n
        b, A = PG[:, 0], PG[:, 1:]
        L = whitener(W) if L is None else L
        beta = np.linalg.lstsq(L.T @ A, L.T @ b, rcond=None)[0]
        return b - A @ beta, beta, r, G

    def objective(self, theta, W, L=None) -> float:
        L = whitener(W) if L is None else L
        g, *_ = self.concentrate(theta, W, L)
        z = L.T @ g
        return float(z @ z)

    def contributions(self, theta, W) -> np.ndarray:
        _, beta, r, G = self.concentrate(theta, W)
        return self.phi * (r - G @ beta)[:, None]

    def weighting_matrix(self, theta0):
        return inverse_covariance(self.contributions(theta0, np.eye(self.n_moments)))


def estimate_baseline(panel: FirmPanel, config: BaselineConfig | None = None,
                      options: EstimateOptions | None = None) -> EstimationResult:
    config = config or BaselineConfig()
    options = options or EstimateOptions()
    table = build_lagged_frame(panel)
    prob = BaselineProblem(table, config)
    ident = np.eye(prob.n_moments)

    def minimize_with(W):
        L = whitener(W)
        return minimize_theta(lambda th: prob.objective(th, W, L),
                              gtol=options.gtol, maxiter=options.maxiter)

    info = None
    if options.weighting == "oracle":
        theta0 = options.theta0 or (panel.config.structural if panel.config else None)
        if theta0 is None:
            raise ValueError("oracle weighting needs theta0 or a panel with its DGP config")
        W, info = prob.weighting_matrix(theta0)
        res = minimize_with(W)
    elif options.weighting == "identity":
        W = ident
        res = minimize_with(W)
    elif options.weighting == "two_step":
        first = minimize_with(ident)
        W, info = prob.weighting_matrix(first.theta)
        res = minimize_with(W)
    else:
        raise ValueError(f"unknown weighting {options.weighting!r}")

    _, beta, _, _ = prob.concentrate(res.theta, W)
    diag = {"grad_norm": res.grad_norm, "message": res.message,
            "start_values": res.start_values, "g_coefficients": beta.tolist()}
    if info is not None:
        diag.update(condition_number=info.condition_number, ridge=info.ridge,
                    weighting_fallback=info.fallback)
    return EstimationResult(
        theta_hat=res.theta,
        avg_log_markup=average_log_markup(res.theta, table),
        objective_value=res.value,
        selected_moment_count=prob.n_moments,
        iterations=res.iterations,
        converged=res.converged,
        method="baseline",
        degree=config.g_degree,
        seed=panel.config.seed if panel.config is not None else None,
        weighting=options.weighting,
        diagnostics=diag,
    )
