"""Generalized control function GMM estimator with the orthogonalized moment

    E[(phi(z) - E[phi(z) | z_c]) (q - f(k, v) - E[q - f(k, v) | z_c])] = 0,

where z_c are the instruments other than the special instrument.  Both
conditional expectations are OLS projections on a Hermite basis in z_c; the
second one is recomputed at every trial parameter value.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ces, features
from .ces import StructuralParams
from .dgp import FirmPanel
from .optim import minimize_theta

log = logging.getLogger(__name__)

DEFAULT_Z = ("k", "k_lag", "v_lag", "p_lag", "pV", "pV_lag")


@dataclass(frozen=True)
class InstrumentPlan:
    z_vars: tuple[str, ...] = DEFAULT_Z
    special_vars: tuple[str, ...] = ("pV",)
    phi_degree: int = 4
    control_degree: int = 4

    def __post_init__(self):
        if not self.special_vars:
            raise ValueError("at least one special instrument is required")
        missing = set(self.special_vars) - set(self.z_vars)
        if missing:
            raise ValueError(f"special instruments {sorted(missing)} are not in z_vars")

    @property
    def control_vars(self) -> tuple[str, ...]:
        return tuple(v for v in self.z_vars if v not in self.special_vars)


# ---------------------------------------------------------------------------
# data


class EstimationTable(dict):
    """Column name -> 1-d array; one row per (firm, t) with t >= 2."""

    @property
    def n(self) -> int:
        return len(self["q"])

    def matrix(self, names) -> np.ndarray:
        return np.column_stack([self[c] for c in names])

    def take(self, idx) -> "EstimationTable":
        return EstimationTable({k: v[idx] for k, v in self.items()})

    def canonical(self) -> "EstimationTable":
        """Rows sorted by (firm, period), so results do not depend on input order."""
        if "firm" not in self or "period" not in self:
            return self
        order = np.lexsort((self["period"], self["firm"]))
        if np.all(order == np.arange(self.n)):
            return self
        return self.take(order)


LAGGED = ("q", "p", "k", "v", "pK", "pV")


def build_lagged_frame(panel: FirmPanel, plan: InstrumentPlan | None = None) -> EstimationTable:
    if panel.n_periods < 2:
        raise ValueError("need at least two periods to form lags")
    N, T = panel.n_firms, panel.n_periods
    cols = {}
    for name in LAGGED:
        arr = getattr(panel, name)
        cols[name] = arr[:, 1:].ravel()
        cols[name + "_lag"] = arr[:, :-1].ravel()
    if panel.has_latents:
        for name, arr in panel.latents.items():
            cols[name] = arr[:, 1:].ravel()
    cols["firm"] = np.repeat(np.arange(N), T - 1)
    cols["period"] = np.tile(np.arange(2, T + 1), N)
    table = EstimationTable(cols)
    if plan is not None:
        absent = [v for v in plan.z_vars if v not in table]
        if absent:
            raise KeyError(f"instrument columns {absent} unavailable")
    return table


# ---------------------------------------------------------------------------
# moments


def residual(theta: StructuralParams, table: EstimationTable) -> np.ndarray:
    """q - f(k, v; theta); equals omega + eps at the true parameters."""
    return table["q"] - ces.log_output(theta, table["k"], table["v"])


@dataclass(frozen=True, eq=False)
class Projections:
    control_basis: features.DesignMatrix   # Hermite basis in z_c, degree d
    phi: np.ndarray                        # phi(z), all columns
    phi_tilde: np.ndarray                  # projection of phi(z) on control_basis
    selected: tuple[int, ...]              # full-rank columns of phi - phi_tilde
    phi_labels: tuple
    Phi: np.ndarray                        # (phi - phi_tilde)[:, selected]

    @property
    def n_moments(self) -> int:
        return len(self.selected)


def build_projections(table: EstimationTable, plan: InstrumentPlan) -> Projections:
    z = table.matrix(plan.z_vars)
    zc = table.matrix(plan.control_vars)
    phi_spec = features.FeatureSpec.fit(plan.z_vars, plan.phi_degree, z)
    phi = features.hermite_basis(phi_spec, z, select=False)
    c_spec = features.FeatureSpec.fit(plan.control_vars, plan.control_degree, zc)
    control = features.hermite_basis(c_spec, zc)
    phi_tilde = features.project(control, phi.values)
    resid = phi.values - phi_tilde
    selected = features.greedy_rank_select(resid)
    Phi = np.ascontiguousarray(resid[:, selected])
    return Projections(control, phi.values, phi_tilde, tuple(selected), phi.labels, Phi)


def moment_contributions(theta, table, proj: Projections) -> np.ndarray:
    """Per-observation (phi - phi_tilde) * m_it(theta), shape (n, n_moments)."""
    r = residual(theta, table)
    m = features.residualize(proj.control_basis, r)
    return proj.Phi * m[:, None]


def orthogonalized_moments(theta, table, proj: Projections) -> np.ndarray:
    r = residual(theta, table)
    m = features.residualize(proj.control_basis, r)
    return proj.Phi.T @ m / table.n


def plain_moments(theta, table, proj: Projections, h) -> np.ndarray:
    """Non-orthogonal moment: mean of phi(z) (q - f - h) with a given control function."""
    r = residual(theta, table)
    phi = proj.phi[:, list(proj.selected)]
    return phi.T @ (r - h) / table.n


def control_function(theta, table, proj: Projections) -> np.ndarray:
    """Fitted E[q - f | z_c] at theta."""
    return features.project(proj.control_basis, residual(theta, table))


def gmm_objective(theta, table, proj: Projections, W) -> float:
    g = orthogonalized_moments(theta, table, proj)
    return float(g @ W @ g)


def whitener(W) -> np.ndarray:
    """L with W = L L'; g' W g is then |L' g|^2, which loses less precision."""
    return np.linalg.cholesky(W)


def _fast_moments(theta, table, proj: Projections) -> np.ndarray:
    # Phi is already orthogonal to the control basis, so Phi' (r - P r) = Phi' r
    return proj.Phi.T @ residual(theta, table) / table.n


def _fast_objective(theta, table, proj, L) -> float:
    z = L.T @ _fast_moments(theta, table, proj)
    return float(z @ z)


@dataclass
class WeightingInfo:
    condition_number: float
    ridge: float
    fallback: str | None = None


def moment_covariance(contrib: np.ndarray) -> np.ndarray:
    """Centered sample covariance with divisor n - 1."""
    n = contrib.shape[0]
    centered = contrib - contrib.mean(axis=0)
    S = centered.T @ centered / (n - 1)
    return 0.5 * (S + S.T)


def inverse_covariance(contrib: np.ndarray, ridge_scale: float = 1e-10,
                       max_condition: float = 1e12) -> tuple[np.ndarray, WeightingInfo]:
    """Inverse of the centered sample covariance (divisor n - 1) of moment contributions."""
    m = contrib.shape[1]
    S = moment_covariance(contrib)
    trace = float(np.trace(S))
    if trace <= 0 or not np.isfinite(trace):
        log.warning("moment covariance is zero; using the identity weighting matrix")
        return np.eye(m), WeightingInfo(np.inf, 0.0, "identity")
    w = np.linalg.eigvalsh(S)
    cond = float(w[-1] / w[0]) if w[0] > 0 else np.inf
    ridge = 0.0
    if not cond < max_condition:
        ridge = ridge_scale * trace / m
        log.warning("moment covariance is near singular (cond=%.3g); adding ridge %.3g", cond, ridge)
        S = S + ridge * np.eye(m)
    W = np.linalg.inv(S)
    return 0.5 * (W + W.T), WeightingInfo(cond, ridge)


def weighting_matrix(table, proj: Projections, theta0: StructuralParams):
    return inverse_covariance(moment_contributions(theta0, table, proj))


# ---------------------------------------------------------------------------
# estimation


@dataclass
class EstimationResult:
    theta_hat: StructuralParams
    avg_log_markup: float
    objective_value: float
    selected_moment_count: int
    iterations: int
    converged: bool
    method: str = "gcf"
    degree: int | None = None
    seed: int | None = None
    weighting: str = "oracle"
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta_hat"] = asdict(self.theta_hat)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationResult":
        d = dict(d)
        d["theta_hat"] = StructuralParams(**d["theta_hat"])
        return cls(**d)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=_json_default)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "EstimationResult":
        p = Path(text_or_path) if not str(text_or_path).lstrip().startswith("{") else None
        text = p.read_text() if p is not None else text_or_path
        return cls.from_dict(json.loads(text))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


@dataclass(frozen=True)
class EstimateOptions:
    weighting: str = "oracle"   # oracle | two_step | identity
    theta0: StructuralParams | None = None
    gtol: float = 1e-8
    maxiter: int = 500


def average_log_markup(theta: StructuralParams, table: EstimationTable) -> float:
    el = ces.output_elasticity_v(theta, table["k"], table["v"])
    return float(np.mean(ces.log_markup_plus_noise(table["p"], table["q"], table["pV"],
                                                   table["v"], el)))


def _oracle_theta(panel: FirmPanel, options: EstimateOptions) -> StructuralParams:
    if options.theta0 is not None:
        return options.theta0
    if panel.config is None:
        raise ValueError("oracle weighting needs theta0 or a panel with its DGP config")
    return panel.config.structural


def estimate(panel: FirmPanel, plan: InstrumentPlan | None = None,
             options: EstimateOptions | None = None) -> EstimationResult:
    plan = plan or InstrumentPlan()
    options = options or EstimateOptions()
    table = build_lagged_frame(panel, plan)
    return estimate_table(table, plan, options, panel)


def estimate_table(table, plan, options, panel=None) -> EstimationResult:
    table = table.canonical()
    proj = build_projections(table, plan)

    def minimize_with(W):
        L = whitener(W)
        return minimize_theta(lambda th: _fast_objective(th, table, proj, L),
                              gtol=options.gtol, maxiter=options.maxiter)

    if options.weighting == "oracle":
        W, info = weighting_matrix(table, proj, _oracle_theta(panel, options))
        res = minimize_with(W)
    elif options.weighting == "identity":
        W, info = np.eye(proj.n_moments), None
        res = minimize_with(W)
    elif options.weighting == "two_step":
        first = minimize_with(np.eye(proj.n_moments))
        W, info = weighting_matrix(table, proj, first.theta)
        res = minimize_with(W)
    else:
        raise ValueError(f"unknown weighting {options.weighting!r}")

    diag = {"grad_norm": res.grad_norm, "message": res.message, "start_values": res.start_values}
    if info is not None:
        diag.update(condition_number=info.condition_number, ridge=info.ridge,
                    weighting_fallback=info.fallback)
    seed = panel.config.seed if panel is not None and panel.config is not None else None
    return EstimationResult(
        theta_hat=res.theta,
        avg_log_markup=average_log_markup(res.theta, table),
        objective_value=res.value,
        selected_moment_count=proj.n_moments,
        iterations=res.iterations,
        converged=res.converged,
        method="gcf",
        degree=plan.control_degree,
        seed=seed,
        weighting=options.weighting,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# Neyman orthogonality diagnostic


@dataclass
class OrthogonalityReport:
    tol: float
    step_grid: tuple[float, ...]
    orthogonal_ratio: np.ndarray     # per direction: max |d moment| / se, orthogonalized form
    plain_ratio: np.ndarray          # same for the plain moment with h held fixed
    richardson_gap: float            # largest disagreement across step sizes, orthogonalized

    @property
    def orthogonal_pass(self) -> np.ndarray:
        return self.orthogonal_ratio <= self.tol

    @property
    def plain_fail(self) -> np.ndarray:
        return self.plain_ratio > self.tol

    def summary(self) -> dict:
        return {
            "n_directions": int(self.orthogonal_ratio.size),
            "tol": self.tol,
            "orthogonal_max_ratio": float(self.orthogonal_ratio.max()),
            "orthogonal_pass_share": float(self.orthogonal_pass.mean()),
            "plain_min_ratio": float(self.plain_ratio.min()),
            "plain_fail_share": float(self.plain_fail.mean()),
            "richardson_gap": self.richardson_gap,
        }


def _central_diff(fun, steps):
    """Central differences at each step plus one Richardson-extrapolated value."""
    ests = [(fun(h) - fun(-h)) / (2 * h) for h in steps]
    rich = (4 * ((fun(steps[-1] / 2) - fun(-steps[-1] / 2)) / steps[-1]) - ests[-1]) / 3
    return ests, rich


def check_neyman_orthogonality(theta, table, plan: InstrumentPlan, n_directions: int = 20,
                               step_grid=(1e-2, 1e-3, 1e-4), tol: float = 1e-3, seed: int = 0,
                               proj: Projections | None = None) -> OrthogonalityReport:
    """Finite-difference Gateaux derivatives of the moments in random nuisance directions.

    Directions are random combinations of the control basis, scaled to unit
    root mean square.  For the orthogonalized moment both nuisances
    (E[phi | z_c] and E[q - f | z_c]) are perturbed; the plain moment holds the
    control function fixed at its fitted value and perturbs it alone.
    Derivatives are reported relative to each moment's standard error.
    """
    proj = proj or build_projections(table, plan)
    rng = np.random.default_rng(seed)
    n = table.n
    B = proj.control_basis.columns
    Phi = proj.Phi
    r = residual(theta, table)
    h = features.project(proj.control_basis, r)
    m = r - h
    phi = proj.phi[:, list(proj.selected)]
    se_orth = (Phi * m[:, None]).std(axis=0, ddof=1) / np.sqrt(n)
    se_plain = (phi * m[:, None]).std(axis=0, ddof=1) / np.sqrt(n)

    orth, plain, gap = [], [], 0.0
    for _ in range(n_directions):
        eta = B @ rng.standard_normal((B.shape[1], Phi.shape[1]))
        eta /= np.sqrt(np.mean(eta**2, axis=0))
        zeta = B @ rng.standard_normal(B.shape[1])
        zeta /= np.sqrt(np.mean(zeta**2))

        def g_orth(lam1, lam2):
            return (Phi - lam1 * eta).T @ (m - lam2 * zeta) / n

        d1, r1 = _central_diff(lambda s: g_orth(s, 0.0), step_grid)
        d2, r2 = _central_diff(lambda s: g_orth(0.0, s), step_grid)
        deriv = np.maximum(np.abs(r1), np.abs(r2))
        gap = max(gap, max(np.max(np.abs(d - r1)) for d in d1),
                  max(np.max(np.abs(d - r2)) for d in d2))
        orth.append(np.max(deriv / se_orth))

        dp, rp = _central_diff(lambda s: phi.T @ (r - (h + s * zeta)) / n, step_grid)
        plain.append(np.max(np.abs(rp) / se_plain))
    return OrthogonalityReport(tol, tuple(step_grid), np.array(orth), np.array(plain), float(gap))
