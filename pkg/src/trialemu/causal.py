"""Propensity models, inverse propensity weights and weighted Cox regression.

The hazard ratio of a two-arm emulation is estimated with a Cox
proportional-hazards model on the treatment indicator alone.  Confounding
enters through inverse propensity score weights rather than through the
hazard (``CoxPH-IPSW``); the unweighted fit (``CoxPH-U``) is the baseline.

All routines work on plain numpy arrays so they can be called repeatedly by
the diagnostics without building intermediate datasets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

Z95 = 1.96
PROPENSITY_CLIP = 1e-3


class CausalError(Exception):
    """Numerical failure in the estimation core."""


class SeparationError(CausalError):
    pass


class SingularDesignError(CausalError):
    pass


class ConvergenceError(CausalError):
    pass


@dataclass(frozen=True)
class PropensityModel:
    coefficients: np.ndarray  # intercept first
    scores: np.ndarray
    converged: bool
    iterations: int


@dataclass(frozen=True)
class IpswWeights:
    weights: np.ndarray
    method: str = "ipsw"


@dataclass(frozen=True)
class CoxFit:
    coefficients: np.ndarray  # treatment first
    standard_errors: np.ndarray
    variance_method: str
    log_partial_likelihood: float
    converged: bool
    iterations: int

    @property
    def b_w(self) -> float:
        return float(self.coefficients[0])

    @property
    def standard_error(self) -> float:
        return float(self.standard_errors[0])


@dataclass(frozen=True)
class HazardEstimate:
    hr: float
    ci95: tuple[float, float]
    n_treatment: int
    n_control: int
    method: str
    log_hr: float
    se: float
    iterations: int = 0
    variance_method: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "hr": self.hr,
            "ci95": list(self.ci95),
            "log_hr": self.log_hr,
            "se": self.se,
            "n_t": self.n_treatment,
            "n_c": self.n_control,
            "iterations": self.iterations,
            "variance_method": self.variance_method,
        }


@dataclass(frozen=True)
class BalanceReport:
    names: list[str]
    smd_unweighted: np.ndarray
    smd_weighted: np.ndarray
    infinite: list[str] = field(default_factory=list)

    def rows(self):
        return list(zip(self.names, self.smd_unweighted.tolist(), self.smd_weighted.tolist()))

    def to_dict(self) -> dict:
        return {
            "covariates": [
                {"name": n, "smd_unweighted": u, "smd_weighted": w} for n, u, w in self.rows()
            ],
            "infinite": list(self.infinite),
        }


# --------------------------------------------------------------------------
# propensity


def fit_logistic_propensity(X, treatment, max_iter: int = 100, tol: float = 1e-8,
                            separation_bound: float = 30.0) -> PropensityModel:
    """Maximum-likelihood logistic regression of treatment on ``X`` by IRLS.

    An intercept column is prepended; ``X`` may have zero columns.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(treatment, dtype=float)
    n = y.shape[0]
    if X.shape[0] != n:
        raise ValueError("X and treatment have different numbers of rows")
    if not (0 < y.sum() < n):
        raise CausalError("both arms must be non-empty to fit a propensity model")
    Z = np.column_stack([np.ones(n), X])
    beta = np.zeros(Z.shape[1])
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(Z @ beta)
        v = p * (1.0 - p)
        H = Z.T @ (v[:, None] * Z)
        g = Z.T @ (y - p)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)) or np.linalg.cond(H) > 1e14:
            if np.mean(np.minimum(p, 1 - p) < 1e-8) > 0:
                raise SeparationError(
                    "treatment is (quasi-)perfectly predicted by the covariates; review the confounder list")
            raise SingularDesignError("singular normal equations in propensity fit (collinear covariates?)")
        beta = beta + step
        if np.max(np.abs(beta)) > separation_bound:
            raise SeparationError(
                f"propensity coefficient diverged beyond {separation_bound:g}; "
                "treatment is perfectly separated by the covariates, review the confounder list")
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    return PropensityModel(coefficients=beta, scores=expit(Z @ beta), converged=converged, iterations=it)


def compute_ipsw_weights(scores, treatment, clip: float = PROPENSITY_CLIP) -> IpswWeights:
    if isinstance(scores, PropensityModel):
        scores = scores.scores
    e = np.clip(np.asarray(scores, dtype=float), clip, 1.0 - clip)
    w = np.asarray(treatment, dtype=float)
    return IpswWeights(weights=w / e + (1.0 - w) / (1.0 - e), method="ipsw")


# --------------------------------------------------------------------------
# Cox partial likelihood (Breslow ties)


class _RiskSets:
    """Sorted view of survival data with tie-group boundaries."""

    def __init__(self, time, event, X, weights):
        order = np.argsort(np.asarray(time, dtype=float), kind="stable")
        self.order = order
        self.t = np.asarray(time, dtype=float)[order]
        self.d = np.asarray(event, dtype=float)[order]
        self.X = X[order]
        self.w = weights[order]
        # risk set of row i starts at the first row sharing its time
        self.first = np.searchsorted(self.t, self.t, side="left")
        # last row sharing its time (for "Y_k <= Y_i" accumulations)
        self.last = np.searchsorted(self.t, self.t, side="right") - 1

    def sums(self, beta):
        eta = self.X @ beta
        m = eta.max()
        r = self.w * np.exp(eta - m)
        s0 = np.cumsum(r[::-1])[::-1]
        s1 = np.cumsum((r[:, None] * self.X)[::-1], axis=0)[::-1]
        return eta, m, r, s0[self.first], s1[self.first]

    def loglik(self, beta):
        eta, m, _, s0, _ = self.sums(beta)
        dw = self.d * self.w
        return float(np.sum(dw * (eta - m - np.log(s0))))

    def derivatives(self, beta):
        eta, m, r, s0, s1 = self.sums(beta)
        p = self.X.shape[1]
        outer = (r[:, None, None] * self.X[:, :, None] * self.X[:, None, :])
        s2 = np.cumsum(outer[::-1], axis=0)[::-1][self.first]
        xbar = s1 / s0[:, None]
        dw = self.d * self.w
        ll = float(np.sum(dw * (eta - m - np.log(s0))))
        score = np.sum(dw[:, None] * (self.X - xbar), axis=0)
        info = np.sum(dw[:, None, None] * (s2 / s0[:, None, None]
                                            - xbar[:, :, None] * xbar[:, None, :]), axis=0)
        return ll, score, info.reshape(p, p)

    def score_residuals(self, beta):
        eta, m, r, s0, s1 = self.sums(beta)
        xbar = s1 / s0[:, None]
        dw = self.d * self.w
        a = np.cumsum(dw / s0)[self.last]
        b = np.cumsum((dw / s0)[:, None] * xbar, axis=0)[self.last]
        risk = np.exp(eta - m)
        return self.d[:, None] * (self.X - xbar) - risk[:, None] * (self.X * a[:, None] - b)


def cox_partial_loglik(beta, time, event, X, weights=None) -> float:
    """Weighted Breslow log partial likelihood at ``beta``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return _RiskSets(time, event, X, w).loglik(np.atleast_1d(np.asarray(beta, dtype=float)))


def fit_cox(time, event, X, weights=None, *, variance: str = "auto", max_iter: int = 100,
            tol: float = 1e-9) -> CoxFit:
    """Newton-Raphson maximiser of the weighted Breslow partial likelihood.

    ``X`` holds the hazard covariates; for the treatment-only models this is
    the single column ``W``.  ``variance`` is ``"information"``, ``"robust"``
    or ``"auto"`` (robust whenever any weight differs from 1).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(time < 0):
        raise ValueError("survival times must be non-negative")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    if event.sum() == 0:
        raise CausalError("no events: the partial likelihood is flat")
    rs = _RiskSets(time, event, X, w)

    beta = np.zeros(p)
    ll, score, info = rs.derivatives(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular information matrix at iteration {it}") from exc
        new = beta + step
        new_ll = rs.loglik(new)
        halvings = 0
        slack = 1e-10 * max(1.0, abs(ll))  # rounding in the log-likelihood grows with the weight scale
        while not (new_ll >= ll - slack) and halvings < 40:
            step = step / 2.0
            new = beta + step
            new_ll = rs.loglik(new)
            halvings += 1
        beta = new
        delta = new_ll - ll
        ll, score, info = rs.derivatives(beta)
        # step size criterion keeps convergence independent of the weight scale
        if np.max(np.abs(step)) < tol or (abs(delta) < tol * 1e-3 * max(1.0, abs(ll)) and np.max(np.abs(step)) < 1e-7):
            converged = True
            break
    if not converged or not np.all(np.isfinite(beta)):
        raise ConvergenceError(
            f"Cox fit did not converge after {it} iterations (beta={beta.tolist()}, loglik={ll:.6g}); "
            "check for monotone likelihood (all events in one arm)")

    if variance == "auto":
        variance = "information" if np.all(w == 1.0) else "robust"
    inv = np.linalg.inv(info)
    if variance == "information":
        cov = inv
    elif variance == "robust":
        res = rs.score_residuals(beta) * rs.w[:, None]
        cov = inv @ (res.T @ res) @ inv
    else:
        raise ValueError(f"unknown variance method {variance!r}")
    se = np.sqrt(np.diag(cov))
    return CoxFit(coefficients=beta, standard_errors=se,
                  variance_method="information" if variance == "information" else "robust_sandwich",
                  log_partial_likelihood=ll, converged=True, iterations=it)


def estimate_hr(fit: CoxFit, treatment, method: str) -> HazardEstimate:
    b, se = fit.b_w, fit.standard_error
    w = np.asarray(treatment)
    return HazardEstimate(
        hr=math.exp(b),
        ci95=(math.exp(b - Z95 * se), math.exp(b + Z95 * se)),
        n_treatment=int(np.sum(w == 1)),
        n_control=int(np.sum(w == 0)),
        method=method,
        log_hr=b,
        se=se,
        iterations=fit.iterations,
        variance_method=fit.variance_method,
    )


def _check_arm_events(treatment, event):
    w = np.asarray(treatment)
    d = np.asarray(event)
    for arm, name in ((1, "treatment"), (0, "control")):
        if not np.any((w == arm) & (d == 1)):
            raise CausalError(f"no events in the {name} arm")


def hazard_ratio(X, treatment, time, event, method: str = "CoxPH-IPSW", *,
                 adjust_hazard: bool = False) -> HazardEstimate:
    """One-call estimate used by the pipeline and the diagnostics.

    ``method`` is ``"CoxPH-U"`` (no weights, treatment only) or
    ``"CoxPH-IPSW"`` (logistic propensity on ``X`` then weighted Cox).
    ``adjust_hazard`` additionally puts ``X`` into the hazard.
    """
    W = np.asarray(treatment, dtype=float)
    _check_arm_events(W, event)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    design = np.column_stack([W, X]) if adjust_hazard else W[:, None]
    if method == "CoxPH-U":
        fit = fit_cox(time, event, design)
    elif method == "CoxPH-IPSW":
        ps = fit_logistic_propensity(X, W)
        weights = compute_ipsw_weights(ps.scores, W)
        fit = fit_cox(time, event, design, weights.weights)
    else:
        raise ValueError(f"unknown method {method!r}")
    return estimate_hr(fit, W, method)


# --------------------------------------------------------------------------
# balance


def _weighted_moments(x, w):
    sw = w.sum()
    mu = np.sum(w * x) / sw
    var = np.sum(w * (x - mu) ** 2) / sw
    return mu, var


def _smd(x, treat, w):
    mt, vt = _weighted_moments(x[treat], w[treat])
    mc, vc = _weighted_moments(x[~treat], w[~treat])
    pooled = math.sqrt((vt + vc) / 2.0)
    if pooled == 0.0:
        return 0.0 if mt == mc else math.inf
    return (mt - mc) / pooled


def standardized_mean_difference(X, treatment, weights=None, names=None) -> BalanceReport:
    """Per-column SMD with and without weights.

    Means and variances are (weighted) population moments within each arm;
    one-hot columns are therefore compared as proportions.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    treat = np.asarray(treatment) == 1
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    ones = np.ones(X.shape[0])
    w = ones if weights is None else np.asarray(getattr(weights, "weights", weights), dtype=float)
    unw = np.array([_smd(X[:, j], treat, ones) for j in range(X.shape[1])])
    wtd = np.array([_smd(X[:, j], treat, w) for j in range(X.shape[1])])
    inf = [n for n, a, b in zip(names, unw, wtd) if math.isinf(a) or math.isinf(b)]
    return BalanceReport(names=names, smd_unweighted=unw, smd_weighted=wtd, infinite=inf)


# --------------------------------------------------------------------------
# equivalence


def _as_hr_ci(x):
    if isinstance(x, HazardEstimate):
        return x.hr, x.ci95
    hr, ci = x
    return float(hr), (float(ci[0]), float(ci[1]))


def se_from_ci(lo: float, hi: float) -> float:
    if not lo < hi or lo <= 0:
        raise ValueError(f"degenerate confidence interval ({lo}, {hi})")
    return (math.log(hi) - math.log(lo)) / (2 * Z95)


def equivalence_test(a, b, margin: float = math.log(1.3), alpha: float = 0.05) -> dict:
    """Compare two hazard ratios given as estimates or ``(hr, (lo, hi))``.

    Returns the difference z-statistic with its two-sided p-value
    (``consistent`` when not significant) and the TOST p-value against a
    log-scale ``margin`` (``equivalent`` when both one-sided nulls reject).
    """
    hr_a, (lo_a, hi_a) = _as_hr_ci(a)
    hr_b, (lo_b, hi_b) = _as_hr_ci(b)
    se = math.hypot(se_from_ci(lo_a, hi_a), se_from_ci(lo_b, hi_b))
    diff = math.log(hr_a) - math.log(hr_b)
    z = diff / se
    p_diff = 2.0 * norm.sf(abs(z))
    p_lower = norm.sf((diff + margin) / se)
    p_upper = norm.cdf((diff - margin) / se)
    tost_p = max(p_lower, p_upper)
    return {
        "z_difference": z,
        "p_difference": p_diff,
        "consistent": bool(p_diff >= alpha),
        "tost_p": tost_p,
        "equivalent": bool(tost_p < alpha),
        "margin": margin,
    }
