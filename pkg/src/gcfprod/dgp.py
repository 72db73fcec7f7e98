"""Simulated firm panels.

Productivity follows the controlled Markov process

    omega_t = mu + rho_omega * omega_{t-1} + rho_d1 * delta1_{t-1} + rho_d2 * delta2_{t-1} + xi_t

while the input prices and the two demand shocks are mutually independent
Gaussian AR(1) processes.  Firms choose capital one period ahead and the
variable input after observing (omega_t, delta_t, pV_t).

Random numbers come from PCG64 generators, one substream per firm, seeded by
``SeedSequence([seed, firm_index])``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from . import ces
from .ces import DemandState, StructuralParams

log = logging.getLogger(__name__)


class InfeasibleTargetsError(ValueError):
    pass


class NoInteriorOptimumError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShockProcessParams:
    mean: float
    variance: float
    autocorr: float

    def __post_init__(self):
        # variance 0 is allowed and gives a degenerate (constant) process
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")
        if not abs(self.autocorr) < 1:
            raise ValueError("autocorr must lie in (-1, 1)")


@dataclass(frozen=True)
class LawOfMotionParams:
    mu_omega: float
    rho_omega: float
    rho_delta1: float
    rho_delta2: float
    sigma2_omega: float

    def __post_init__(self):
        if self.sigma2_omega < 0:
            raise ValueError("sigma2_omega must be nonnegative")

    def mean(self, omega, delta1, delta2):
        return (self.mu_omega + self.rho_omega * omega
                + self.rho_delta1 * delta1 + self.rho_delta2 * delta2)


@dataclass(frozen=True)
class MomentTargets:
    mean_omega: float = 0.0
    var_omega: float = 0.25
    autocorr_omega: float = 0.7
    corr_omega_delta1: float = 0.3
    corr_omega_delta2: float = -0.3

    def __post_init__(self):
        if not self.var_omega > 0:
            raise ValueError("var_omega must be positive")
        for name in ("autocorr_omega", "corr_omega_delta1", "corr_omega_delta2"):
            if not abs(getattr(self, name)) < 1:
                raise ValueError(f"{name} must lie in (-1, 1)")


@dataclass(frozen=True)
class DGPConfig:
    structural: StructuralParams = ces.DEFAULT_THETA
    shock_pK: ShockProcessParams = ShockProcessParams(0.0, 0.25, 0.7)
    shock_pV: ShockProcessParams = ShockProcessParams(0.0, 0.25, 0.7)
    shock_d1: ShockProcessParams = ShockProcessParams(10.0, 25.0, 0.7)
    shock_d2: ShockProcessParams = ShockProcessParams(-1.3543, 0.25, 0.7)
    targets: MomentTargets = MomentTargets()
    eps_sd: float = 0.5
    n_firms: int = 5000
    n_periods: int = 20
    burn_in: int = 20
    seed: int = 0
    # bypasses solve_law_of_motion when set (used for degenerate designs)
    law_of_motion: LawOfMotionParams | None = None

    def __post_init__(self):
        if self.n_firms < 1:
            raise ValueError("n_firms must be >= 1")
        if self.n_periods < 2:
            raise ValueError("n_periods must be >= 2")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.eps_sd < 0:
            raise ValueError("eps_sd must be >= 0")

    def solved_law_of_motion(self) -> LawOfMotionParams:
        if self.law_of_motion is not None:
            return self.law_of_motion
        return solve_law_of_motion(self.targets, self.shock_d1, self.shock_d2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DGPConfig":
        d = dict(d)
        kw = {}
        kw["structural"] = StructuralParams(**d.pop("structural"))
        for name in ("shock_pK", "shock_pV", "shock_d1", "shock_d2"):
            kw[name] = ShockProcessParams(**d.pop(name))
        kw["targets"] = MomentTargets(**d.pop("targets"))
        lom = d.pop("law_of_motion", None)
        kw["law_of_motion"] = None if lom is None else LawOfMotionParams(**lom)
        return cls(**kw, **d)


# ---------------------------------------------------------------------------
# process calibration


def solve_ar1(params: ShockProcessParams) -> tuple[float, float, float]:
    """(intercept, slope, innovation_sd) of the AR(1) with the given stationary moments."""
    slope = params.autocorr
    intercept = params.mean * (1.0 - slope)
    innovation_sd = float(np.sqrt(params.variance * (1.0 - slope**2)))
    return intercept, slope, innovation_sd


def solve_law_of_motion(targets: MomentTargets, shock_d1: ShockProcessParams,
                        shock_d2: ShockProcessParams) -> LawOfMotionParams:
    """Invert the stationary moment equations of the (omega, delta1, delta2) VAR.

    With delta_j an AR(1) with slope phi_j and variance s_j, stationarity gives
    cov(omega, delta_j) = phi_j b_j s_j / (1 - phi_j rho_omega), which makes
    the autocovariance condition linear in rho_omega.
    """
    V = targets.var_omega
    r = targets.autocorr_omega
    sd = np.sqrt(V)
    procs = (shock_d1, shock_d2)
    corrs = (targets.corr_omega_delta1, targets.corr_omega_delta2)
    covs = [c * sd * np.sqrt(p.variance) for c, p in zip(corrs, procs)]

    shares = []
    for cov, p in zip(covs, procs):
        if cov == 0.0:
            shares.append((0.0, 0.0))
            continue
        if p.variance == 0.0 or p.autocorr == 0.0:
            raise InfeasibleTargetsError(
                "a nonzero omega-delta correlation requires a persistent, nondegenerate delta")
        s = cov**2 / p.variance
        shares.append((s, s / p.autocorr))
    denom = V - sum(s for s, _ in shares)
    if denom <= 0:
        raise InfeasibleTargetsError("correlation targets leave no room for own persistence")
    rho_omega = (r * V - sum(sp for _, sp in shares)) / denom
    if not abs(rho_omega) < 1:
        raise InfeasibleTargetsError(f"implied rho_omega={rho_omega:.4g} is non-stationary")

    loadings = []
    for cov, p in zip(covs, procs):
        if cov == 0.0:
            loadings.append(0.0)
        else:
            loadings.append(cov * (1.0 - p.autocorr * rho_omega) / (p.autocorr * p.variance))
    b1, b2 = loadings
    explained = (rho_omega**2 * V + b1**2 * shock_d1.variance + b2**2 * shock_d2.variance
                 + 2 * rho_omega * (b1 * covs[0] + b2 * covs[1]))
    sigma2 = V - explained
    if sigma2 <= 0:
        raise InfeasibleTargetsError(f"implied sigma2_omega={sigma2:.4g} is not positive")
    mu = targets.mean_omega * (1 - rho_omega) - b1 * shock_d1.mean - b2 * shock_d2.mean
    lom = LawOfMotionParams(float(mu), float(rho_omega), float(b1), float(b2), float(sigma2))

    mean, cov = stationary_moments(lom, shock_d1, shock_d2)
    implied = _moments_from_cov(mean, cov, lom, shock_d1, shock_d2)
    wanted = (targets.mean_omega, V, r, *corrs)
    if not np.allclose(implied, wanted, rtol=1e-9, atol=1e-10):
        raise InfeasibleTargetsError(f"stationary check failed: {implied} vs {wanted}")
    return lom


def _var_system(lom: LawOfMotionParams, shock_d1, shock_d2):
    """State (omega, delta1, delta2): x_t = c + A x_{t-1} + e_t."""
    c1, a1, s1 = solve_ar1(shock_d1)
    c2, a2, s2 = solve_ar1(shock_d2)
    A = np.array([[lom.rho_omega, lom.rho_delta1, lom.rho_delta2],
                  [0.0, a1, 0.0],
                  [0.0, 0.0, a2]])
    c = np.array([lom.mu_omega, c1, c2])
    Q = np.diag([lom.sigma2_omega, s1**2, s2**2])
    return c, A, Q


def stationary_moments(lom: LawOfMotionParams, shock_d1, shock_d2):
    """Exact stationary mean and covariance of (omega, delta1, delta2)."""
    c, A, Q = _var_system(lom, shock_d1, shock_d2)
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1:
        raise InfeasibleTargetsError("law of motion is non-stationary")
    mean = np.linalg.solve(np.eye(3) - A, c)
    cov = solve_discrete_lyapunov(A, Q)
    return mean, cov


def _moments_from_cov(mean, cov, lom, shock_d1, shock_d2):
    _, A, _ = _var_system(lom, shock_d1, shock_d2)
    lag_cov = A @ cov  # cov(x_t, x_{t-1})
    v = cov[0, 0]
    return (mean[0], v, lag_cov[0, 0] / v,
            cov[0, 1] / np.sqrt(v * cov[1, 1]), cov[0, 2] / np.sqrt(v * cov[2, 2]))


# ---------------------------------------------------------------------------
# firm decisions


def _foc_residual(params: StructuralParams, k, omega, delta1, delta2, pV, v):
    """Log first-order condition for v, strictly decreasing in v for rho < 1."""
    inv_eta = 1.0 / (1.0 + np.exp(-delta2))
    share = 1.0 - inv_eta
    lnfv = ces.log_output_elasticity_v(params, k, v)
    f = ces.log_output(params, k, v)
    F = delta1 * inv_eta + share * (f + omega) - ces.log_markup(delta2) + lnfv - pV - v
    s_v = np.exp(lnfv) / params.nu
    dF = share * params.nu * s_v + params.rho * (1.0 - s_v) - 1.0
    return F, dF


def solve_variable_input(params: StructuralParams, k, omega, demand: DemandState, pV,
                         bracket=(-30.0, 30.0), tol=1e-12, max_iter=200):
    """Profit-maximizing log variable input.

    Solves exp(p + q*) (1 - 1/eta) df/dv = exp(pV + v) by bracketed bisection
    refined with safeguarded Newton steps.  Returns (v, p, q_star).
    """
    k, omega, d1, d2, pV = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in
                                                 (k, omega, demand.delta1, demand.delta2, pV)))
    lo = np.full(k.shape, float(bracket[0]))
    hi = np.full(k.shape, float(bracket[1]))
    # widen the bracket where the optimum lies outside it
    for _ in range(8):
        F_lo, _ = _foc_residual(params, k, omega, d1, d2, pV, lo)
        F_hi, _ = _foc_residual(params, k, omega, d1, d2, pV, hi)
        bad_lo, bad_hi = ~(F_lo > 0), ~(F_hi < 0)
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, 2 * lo - 10, lo)
        hi = np.where(bad_hi, 2 * hi + 10, hi)
    else:
        raise NoInteriorOptimumError("first-order condition has no root in the search bracket")

    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        F, dF = _foc_residual(params, k, omega, d1, d2, pV, x)
        lo = np.where(F > 0, x, lo)
        hi = np.where(F > 0, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dF < 0, -F / dF, np.nan)
        newton = x + step
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        x_new = np.where(ok, newton, 0.5 * (lo + hi))
        done = (np.abs(F) <= tol) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1, np.abs(x)))
        x = np.where(done, x, x_new)
        if done.all():
            break
    v = x
    q_star = ces.log_output(params, k, v) + omega
    p = ces.inverse_demand(DemandState(d1, d2), q_star)
    return v, p, q_star


@dataclass(frozen=True)
class CapitalState:
    """Period t-1 information used to choose k_t."""
    omega: np.ndarray | float
    delta1: np.ndarray | float
    delta2: np.ndarray | float
    pK: np.ndarray | float
    pV: np.ndarray | float


def expected_state(state: CapitalState, lom: LawOfMotionParams, shock_d1, shock_d2, shock_pV):
    """Certainty-equivalent period-t (omega, delta1, delta2, pV)."""
    c1, a1, _ = solve_ar1(shock_d1)
    c2, a2, _ = solve_ar1(shock_d2)
    cV, aV, _ = solve_ar1(shock_pV)
    omega_e = lom.mean(state.omega, state.delta1, state.delta2)
    return (omega_e, c1 + a1 * np.asarray(state.delta1), c2 + a2 * np.asarray(state.delta2),
            cV + aV * np.asarray(state.pV))


def joint_input_optimum(params: StructuralParams, omega, delta1, delta2, pV, pK):
    """(k, v) maximizing R(k, v) - exp(pV + v) - exp(pK + k) with R from CES demand.

    The cost-minimizing input ratio is closed form for CES and, given the
    ratio, the first-order condition for v is linear.
    """
    a, rho, nu = params.alpha, params.rho, params.nu
    if rho >= 1:
        raise NoInteriorOptimumError("joint input problem needs rho < 1")
    share = 1.0 - 1.0 / (1.0 + np.exp(-np.asarray(delta2, dtype=float)))
    denom = 1.0 - share * nu
    if np.any(denom <= 0):
        raise NoInteriorOptimumError("revenue has increasing returns in inputs")
    c = (np.asarray(pK) - pV - np.log(a / (1 - a))) / (rho - 1.0)
    Fc = nu / rho * np.logaddexp(np.log(a) + rho * c, np.log1p(-a))
    Lc = ces.log_output_elasticity_v(params, c, 0.0)
    num = (delta1 * (1.0 - share) + share * (Fc + omega) - ces.log_markup(delta2) + Lc - pV)
    v = num / denom
    return v + c, v


def solve_capital(params: StructuralParams, state: CapitalState, lom: LawOfMotionParams,
                  shock_d1: ShockProcessParams, shock_d2: ShockProcessParams,
                  shock_pV: ShockProcessParams):
    """Capital for period t chosen with period t-1 information.

    Replaces omega_t, delta_t and pV_t by their conditional means and keeps k
    from the joint optimum, with capital priced at exp(pK_{t-1}).
    """
    omega_e, d1_e, d2_e, pV_e = expected_state(state, lom, shock_d1, shock_d2, shock_pV)
    k, _ = joint_input_optimum(params, omega_e, d1_e, d2_e, pV_e, state.pK)
    return k


# ---------------------------------------------------------------------------
# panels

PANEL_COLUMNS = ("q", "p", "k", "v", "pK", "pV")
LATENT_COLUMNS = ("q_star", "omega", "delta1", "delta2", "xi", "eps")


@dataclass(frozen=True, eq=False)
class FirmPanel:
    """Balanced panel; every array has shape (n_firms, n_periods)."""
    q: np.ndarray
    p: np.ndarray
    k: np.ndarray
    v: np.ndarray
    pK: np.ndarray
    pV: np.ndarray
    latents: dict | None = None
    config: DGPConfig | None = None
    law_of_motion: LawOfMotionParams | None = None

    def __post_init__(self):
        shape = self.q.shape
        for name in PANEL_COLUMNS:
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape != shape:
                raise ValueError(f"column {name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
        if self.latents is not None:
            for name in LATENT_COLUMNS:
                self.latents[name].setflags(write=False)

    @property
    def n_firms(self) -> int:
        return self.q.shape[0]

    @property
    def n_periods(self) -> int:
        return self.q.shape[1]

    @property
    def has_latents(self) -> bool:
        return self.latents is not None

    def latent(self, name: str) -> np.ndarray:
        if self.latents is None:
            raise KeyError(f"panel does not retain latent column {name!r}")
        return self.latents[name]

    def drop_latents(self) -> "FirmPanel":
        return replace(self, latents=None)

    def identical_to(self, other: "FirmPanel") -> bool:
        cols = PANEL_COLUMNS
        same = all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols)
        if self.has_latents != other.has_latents:
            return False
        if self.has_latents:
            same &= all(np.array_equal(self.latents[c], other.latents[c]) for c in LATENT_COLUMNS)
        return same


def _matrix_sqrt(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(cov)
        return U * np.sqrt(np.clip(w, 0, None))


def firm_generator(seed: int, firm: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, firm])))


def _draw_firm_shocks(seed: int, n_firms: int, n_total: int) -> np.ndarray:
    # per period: xi, delta1, delta2, pK, pV, eps; row 0 seeds the stationary start
    out = np.empty((n_firms, n_total + 1, 6))
    for i in range(n_firms):
        out[i] = firm_generator(seed, i).standard_normal((n_total + 1, 6))
    return out


def simulate_panel(config: DGPConfig, keep_latents: bool = True) -> FirmPanel:
    """Simulate a balanced panel of ``n_firms`` x ``n_periods``.

    The latent state starts from its exact stationary distribution and runs
    ``burn_in`` periods before data are retained.
    """
    theta = config.structural
    lom = config.solved_law_of_motion()
    N, T = config.n_firms, config.n_periods
    n_total = config.burn_in + T
    z = _draw_firm_shocks(config.seed, N, n_total)

    mean3, cov3 = stationary_moments(lom, config.shock_d1, config.shock_d2)
    L = _matrix_sqrt(cov3)
    ar = {name: solve_ar1(getattr(config, name))
          for name in ("shock_d1", "shock_d2", "shock_pK", "shock_pV")}

    shape = (N, n_total + 1)
    omega, d1, d2, pK, pV, xi, eps = (np.zeros(shape) for _ in range(7))
    init = mean3 + z[:, 0, :3] @ L.T
    omega[:, 0], d1[:, 0], d2[:, 0] = init.T
    pK[:, 0] = config.shock_pK.mean + np.sqrt(config.shock_pK.variance) * z[:, 0, 3]
    pV[:, 0] = config.shock_pV.mean + np.sqrt(config.shock_pV.variance) * z[:, 0, 4]

    sig_xi = np.sqrt(lom.sigma2_omega)
    for s in range(1, n_total + 1):
        e = z[:, s]
        xi[:, s] = sig_xi * e[:, 0]
        omega[:, s] = lom.mean(omega[:, s - 1], d1[:, s - 1], d2[:, s - 1]) + xi[:, s]
        for arr, name, j in ((d1, "shock_d1", 1), (d2, "shock_d2", 2),
                             (pK, "shock_pK", 3), (pV, "shock_pV", 4)):
            c, a, sd = ar[name]
            arr[:, s] = c + a * arr[:, s - 1] + sd * e[:, j]
        eps[:, s] = config.eps_sd * e[:, 5]

    prev = CapitalState(omega[:, :-1], d1[:, :-1], d2[:, :-1], pK[:, :-1], pV[:, :-1])
    k = solve_capital(theta, prev, lom, config.shock_d1, config.shock_d2, config.shock_pV)
    cur = slice(1, None)
    v, p, q_star = solve_variable_input(theta, k, omega[:, cur],
                                        DemandState(d1[:, cur], d2[:, cur]), pV[:, cur])
    q = q_star + eps[:, cur]

    keep = slice(n_total - T, n_total)  # indices into the period-1.. arrays
    full = {"omega": omega[:, cur], "delta1": d1[:, cur], "delta2": d2[:, cur],
            "xi": xi[:, cur], "eps": eps[:, cur], "q_star": q_star}
    latents = None
    if keep_latents:
        latents = {name: np.ascontiguousarray(full[name][:, keep]) for name in LATENT_COLUMNS}
    obs = {"q": q, "p": p, "k": k, "v": v, "pK": pK[:, cur], "pV": pV[:, cur]}
    return FirmPanel(**{n: np.ascontiguousarray(a[:, keep]) for n, a in obs.items()},
                     latents=latents, config=config, law_of_motion=lom)


# ---------------------------------------------------------------------------
# export / import
#
# The table has one row per (firm, period) ordered by firm then period, with
# columns firm_id, period, q, p, k, v, pK, pV and, when latents are retained,
# q_star, omega, delta1, delta2, xi, eps.  Periods are numbered from 1.  The
# sidecar ``<name>.meta.json`` records the DGPConfig, the solved processes and
# the column list.


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_panel(panel: FirmPanel, path) -> Path:
    path = Path(path)
    cols = list(PANEL_COLUMNS) + (list(LATENT_COLUMNS) if panel.has_latents else [])
    N, T = panel.n_firms, panel.n_periods
    firm_id = np.repeat(np.arange(N), T)
    period = np.tile(np.arange(1, T + 1), N)
    data = [firm_id, period]
    for c in cols:
        src = getattr(panel, c) if c in PANEL_COLUMNS else panel.latents[c]
        data.append(src.ravel())
    table = np.column_stack(data)
    fmt = ["%d", "%d"] + ["%.17g"] * len(cols)
    np.savetxt(path, table, fmt=fmt, delimiter=",",
               header=",".join(["firm_id", "period"] + cols), comments="")

    meta = {"columns": ["firm_id", "period"] + cols, "n_firms": N, "n_periods": T,
            "has_latents": panel.has_latents}
    if panel.config is not None:
        meta["config"] = panel.config.to_dict()
        meta["ar1"] = {name: dict(zip(("intercept", "slope", "innovation_sd"),
                                      solve_ar1(getattr(panel.config, name))))
                       for name in ("shock_pK", "shock_pV", "shock_d1", "shock_d2")}
    if panel.law_of_motion is not None:
        meta["law_of_motion"] = asdict(panel.law_of_motion)
    metadata_path(path).write_text(json.dumps(meta, indent=2))
    return path


def load_panel(path) -> FirmPanel:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header[:2] != ["firm_id", "period"] or header[2:8] != list(PANEL_COLUMNS):
        raise ValueError(f"unexpected panel columns {header}")
    firm_id = table[:, 0].astype(int)
    period = table[:, 1].astype(int)
    N = firm_id.max() + 1
    T = period.max()
    if table.shape[0] != N * T:
        raise ValueError("panel is not balanced")
    order = np.lexsort((period, firm_id))
    table = table[order]
    cols = {name: table[:, j].reshape(N, T) for j, name in enumerate(header) if j >= 2}

    config = lom = None
    meta_file = metadata_path(path)
    if meta_file.exists():
        meta = json.loads(meta_file.read_text())
        if "config" in meta:
            config = DGPConfig.from_dict(meta["config"])
        if "law_of_motion" in meta:
            lom = LawOfMotionParams(**meta["law_of_motion"])
    latents = None
    if all(c in cols for c in LATENT_COLUMNS):
        latents = {c: cols[c] for c in LATENT_COLUMNS}
    return FirmPanel(**{c: cols[c] for c in PANEL_COLUMNS}, latents=latents,
                     config=config, law_of_motion=lom)


def noiseless_config(**overrides) -> DGPConfig:
    """Degenerate design: no untransmitted shock, omega identically zero and
    constant demand shocks, so only input prices move."""
    base = DGPConfig(
        shock_d1=ShockProcessParams(10.0, 0.0, 0.7),
        shock_d2=ShockProcessParams(-1.3543, 0.0, 0.7),
        eps_sd=0.0,
        law_of_motion=LawOfMotionParams(0.0, 0.0, 0.0, 0.0, 0.0),
    )
    return replace(base, **overrides)
