"""Logistic regression by iteratively reweighted least squares.

The engine behind the adjusted crude PAF, the landmark models, the landmark
supermodel and the inverse probability weights for the censor-at-infection
estimator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cohort import Cohort, LandmarkData

__all__ = [
    "DesignMatrix",
    "LogisticFit",
    "RankDeficientError",
    "UndefinedEstimandError",
    "fit_logistic",
    "aggregate_design",
    "LogisticRegressionIRLS",
    "GreenlandDrescherResult",
    "paf_greenland_drescher",
    "IPWeights",
    "ipw_uninfected_weights",
]

# |linear predictor| beyond this means fitted probabilities within 1e-13 of 0 or 1
_SEPARATION_ETA = 30.0


class RankDeficientError(ValueError):
    """The design matrix does not have full column rank."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.columns}")


class UndefinedEstimandError(ValueError):
    """The requested PAF is undefined for the data (e.g. no cases)."""


@dataclass
class DesignMatrix:
    """Predictors, 0/1 response and optional non-negative row weights."""

    X: np.ndarray
    y: np.ndarray
    columns: Sequence[str]
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.columns = tuple(str(c) for c in self.columns)
        n, p = self.X.shape
        if len(self.y) != n:
            raise ValueError("X and y have different numbers of rows")
        if len(self.columns) != p:
            raise ValueError("need one column name per predictor")
        if len(set(self.columns)) != p:
            raise ValueError("column names must be unique")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("response must be coded 0/1")
        if self.weights is None:
            self.weights = np.ones(n)
        else:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if len(self.weights) != n:
                raise ValueError("need one weight per row")
            if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
                raise ValueError("weights must be finite and >= 0")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite values")


@dataclass
class LogisticFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    columns: tuple = ()
    separated: bool = False
    loglik_path: list = field(default_factory=list)
    gradient_norm: float = np.nan

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.columns.index(name)])

    def linear_predictor(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coefficients

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.linear_predictor(X))


def _loglik(eta, y, w):
    # log p = -log(1 + e^-eta), log(1 - p) = -log(1 + e^eta)
    return float(-np.sum(w * (y * np.logaddexp(0.0, -eta) + (1 - y) * np.logaddexp(0.0, eta))))


def _collinear_columns(X, columns):
    """Columns that are linear combinations of earlier columns."""
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    bad, kept = [], []
    tol = max(X.shape) * np.finfo(float).eps * 1e3
    for j in range(X.shape[1]):
        trial = Xs[:, kept + [j]]
        s = np.linalg.svd(trial, compute_uv=False)
        if s[0] == 0 or s[-1] <= tol * s[0]:
            bad.append(columns[j])
        else:
            kept.append(j)
    return bad


def fit_logistic(design: DesignMatrix, max_iter: int = 100, tol: float = 1e-8) -> LogisticFit:
    """Maximum likelihood logistic regression via IRLS with step halving.

    Iterates until the score's sup-norm is at most ``tol`` or ``max_iter``
    Newton steps were taken. Non-convergence and (quasi-)separation are
    reported on the returned fit, not raised.

    Raises
    ------
    ValueError
        For an empty design.
    RankDeficientError
        If some columns are collinear among rows with positive weight.
    """
    X, y, w = design.X, design.y, design.weights
    active = w > 0
    if X.shape[0] == 0 or not np.any(active) or X.shape[1] == 0:
        raise ValueError("empty design: nothing to fit")
    X, y, w = X[active], y[active], w[active]
    p = X.shape[1]
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficientError(_collinear_columns(X, design.columns))

    beta = np.zeros(p)
    eta = X @ beta
    ll = _loglik(eta, y, w)
    path = [ll]
    converged = False
    grad_norm = np.inf
    it = 0
    while True:
        mu = expit(eta)
        grad = X.T @ (w * (y - mu))
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        hess = X.T @ (X * (w * mu * (1.0 - mu))[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        it += 1
        t = 1.0
        for _ in range(50):
            cand = beta + t * step
            cand_eta = X @ cand
            cand_ll = _loglik(cand_eta, y, w)
            if cand_ll >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            # no ascent direction left at machine precision
            break
        beta, eta, ll = cand, cand_eta, cand_ll
        path.append(ll)

    mu = expit(eta)
    separated = bool(np.max(np.abs(eta)) > _SEPARATION_ETA)
    hess = X.T @ (X * (w * mu * (1.0 - mu))[:, None])
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.nan)
    cov = 0.5 * (cov + cov.T)
    return LogisticFit(
        coefficients=beta,
        covariance=cov,
        converged=converged and not separated,
        iterations=it,
        log_likelihood=ll,
        columns=tuple(design.columns),
        separated=separated,
        loglik_path=path,
        gradient_norm=grad_norm,
    )


def aggregate_design(X, y, weights=None):
    """Collapse identical ``(row, response)`` pairs into weighted rows.

    The binomial likelihood is unchanged, so the fit is the same while the
    number of rows drops to the number of distinct covariate patterns.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    key = np.column_stack([X, y])
    if len(key) == 0:
        return X, y, w
    # lexicographic row sort; much faster than np.unique(axis=0) on long designs
    order = np.lexsort(key.T[::-1])
    srt = key[order]
    new_group = np.concatenate([[True], np.any(srt[1:] != srt[:-1], axis=1)])
    group = np.cumsum(new_group) - 1
    uniq = srt[new_group]
    agg_w = np.bincount(group, weights=w[order], minlength=len(uniq))
    keep = agg_w > 0
    return uniq[keep, :-1], uniq[keep, -1], agg_w[keep]


class LogisticRegressionIRLS(ClassifierMixin, BaseEstimator):
    """Unpenalised logistic regression fitted by IRLS.

    Parameters
    ----------
    fit_intercept : bool, default=True
    max_iter : int, default=100
    tol : float, default=1e-8
        Sup-norm of the score at which iteration stops.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    covariance_ : ndarray
        Inverse Fisher information, intercept first when fitted.
    converged_ : bool
    n_iter_ : int
    loglik_ : float
    """

    def __init__(self, fit_intercept=True, max_iter=100, tol=1e-8):
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y).ravel()
        self.classes_ = np.unique(y)
        if len(self.classes_) > 2:
            raise ValueError("only binary responses are supported")
        if len(self.classes_) == 2:
            y01 = (y == self.classes_[1]).astype(float)
        else:
            y01 = (y == 1).astype(float)
        names = [f"x{j}" for j in range(X.shape[1])]
        if self.fit_intercept:
            X = np.column_stack([np.ones(len(X)), X])
            names = ["intercept"] + names
        fit = fit_logistic(DesignMatrix(X, y01, names, sample_weight),
                           max_iter=self.max_iter, tol=self.tol)
        self.fit_result_ = fit
        if self.fit_intercept:
            self.intercept_ = float(fit.coefficients[0])
            self.coef_ = fit.coefficients[1:]
        else:
            self.intercept_ = 0.0
            self.coef_ = fit.coefficients
        self.covariance_ = fit.covariance
        self.converged_ = fit.converged
        self.n_iter_ = fit.iterations
        self.loglik_ = fit.log_likelihood
        self.n_features_in_ = len(self.coef_)
        if not fit.converged:
            warnings.warn("IRLS did not converge (possible separation)", RuntimeWarning)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        idx = (self.decision_function(X) > 0).astype(int)
        return self.classes_[np.minimum(idx, len(self.classes_) - 1)]


# ---------------------------------------------------------------------------
# Greenland-Drescher


@dataclass
class GreenlandDrescherResult:
    paf: float
    variance: float
    fit: LogisticFit
    n_cases: float

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance)) if self.variance >= 0 else np.nan


def _exposure_outcome(data, sample_weight):
    """Exposure, outcome, covariate dict and weights from a cohort or landmark data."""
    if isinstance(data, LandmarkData):
        w = data.weight if sample_weight is None else np.asarray(sample_weight, float)
        return data.exposure.astype(float), data.outcome.astype(float), data.covariates, w
    if isinstance(data, Cohort):
        if np.any(data.censored):
            raise ValueError("the crude PAF needs complete follow-up; cohort has censored patients")
        w = np.ones(len(data)) if sample_weight is None else np.asarray(sample_weight, float)
        return data.infected.astype(float), data.death.astype(float), data.covariates, w
    raise TypeError("expected a Cohort or LandmarkData")


def paf_greenland_drescher(data, covariates: Sequence[str] = (), sample_weight=None,
                           max_iter: int = 100) -> GreenlandDrescherResult:
    """Model-based PAF from a logistic model of outcome on exposure and covariates.

    ``PAF = 1 - mean over cases of p(D=1 | E=0, Z) / p(D=1 | E, Z)``, with a
    delta-method variance from the fit's covariance.
    """
    exposure, outcome, cov_map, w = _exposure_outcome(data, sample_weight)
    covariates = list(covariates)
    missing = [c for c in covariates if c not in cov_map]
    if missing:
        raise KeyError(f"unknown covariates {missing}")
    n_cases = float(np.sum(w * outcome))
    if n_cases <= 0:
        raise UndefinedEstimandError("no cases: the PAF is undefined")

    names = ["intercept", "exposure"] + covariates
    X = np.column_stack([np.ones(len(exposure)), exposure] + [cov_map[c] for c in covariates])
    Xa, ya, wa = aggregate_design(X, outcome, w)
    fit = fit_logistic(DesignMatrix(Xa, ya, names, wa), max_iter=max_iter)
    if not fit.converged:
        raise UndefinedEstimandError(
            "logistic model did not converge; the model-based PAF is unavailable")

    cases = (outcome == 1) & (w > 0)
    Xc = X[cases]
    wc = w[cases]
    X0 = Xc.copy()
    X0[:, 1] = 0.0
    p1 = expit(Xc @ fit.coefficients)
    p0 = expit(X0 @ fit.coefficients)
    ratio = p0 / p1
    paf = 1.0 - float(np.sum(wc * ratio) / n_cases)
    # d ratio / d beta = ratio * ((1 - p0) x0 - (1 - p1) x)
    dratio = ratio[:, None] * ((1.0 - p0)[:, None] * X0 - (1.0 - p1)[:, None] * Xc)
    grad = -(wc[:, None] * dratio).sum(axis=0) / n_cases
    variance = float(grad @ fit.covariance @ grad)
    return GreenlandDrescherResult(paf=paf, variance=variance, fit=fit, n_cases=n_cases)


# ---------------------------------------------------------------------------
# inverse probability of remaining uninfected


@dataclass
class IPWeights:
    """Per-patient weights on the intervals of ``grid``.

    ``matrix[i, k]`` is the weight of patient ``i`` at times in
    ``(grid[k], grid[k + 1]]``.
    """

    grid: np.ndarray
    matrix: np.ndarray
    stabilized: bool
    truncated: int
    fit: Optional[LogisticFit] = None
    marginal_fit: Optional[LogisticFit] = None

    def at(self, t: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.grid, t, side="left") - 1, 0,
                        self.matrix.shape[1] - 1))
        return self.matrix[:, k]


def _time_basis(n_intervals, kind):
    k = np.arange(n_intervals, dtype=float)
    if kind == "indicator":
        return np.eye(n_intervals), [f"interval{j + 1}" for j in range(n_intervals)]
    scale = max(n_intervals - 1, 1)
    u = k / scale
    if kind == "linear":
        return np.column_stack([np.ones(n_intervals), u]), ["intercept", "time"]
    if kind == "quadratic":
        return np.column_stack([np.ones(n_intervals), u, u * u]), ["intercept", "time", "time2"]
    raise ValueError(f"unknown time basis {kind!r}")


def _uninfected_probability(fit, basis, Z):
    """Cumulative probability of staying uninfected through each interval."""
    q = basis.shape[1]
    eta = (basis @ fit.coefficients[:q])[None, :]
    if Z is not None and Z.shape[1]:
        eta = eta + (Z @ fit.coefficients[q:])[:, None]
    # log(1 - p) = -log(1 + e^eta)
    return np.cumsum(-np.logaddexp(0.0, eta), axis=1)


def ipw_uninfected_weights(cohort: Cohort, covariates: Sequence[str] = (), grid=None,
                           stabilized: bool = True, cap: float = 50.0,
                           time_basis: str = "indicator",
                           sample_weight=None) -> IPWeights:
    """Inverse probability of remaining uninfected, from pooled logistic regression.

    Uninfected patients still in hospital at the start of each grid interval
    contribute one record; the response is infection within that interval.
    ``grid`` defaults to unit-width intervals on ``0, 1, ..., ceil(max stop)``.
    Weights above ``cap`` are truncated with a warning.
    """
    covariates = list(covariates)
    missing = [c for c in covariates if c not in cohort.covariates]
    if missing:
        raise KeyError(f"unknown covariates {missing}")
    inf = cohort.infection_time
    stop = np.where(np.isnan(inf), cohort.exit_time, inf)
    if grid is None:
        grid = np.arange(0.0, np.ceil(stop.max()) + 1.0)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and increase strictly")
    if grid[-1] < stop.max():
        raise ValueError("grid must cover every patient's follow-up")
    n_int = len(grid) - 1
    w = np.ones(len(cohort)) if sample_weight is None else np.asarray(sample_weight, float)

    # number of intervals whose start lies before the patient's stop time
    n_rec = np.searchsorted(grid[:-1], stop, side="left")
    rows = np.repeat(np.arange(len(cohort)), n_rec)
    ks = np.concatenate([np.arange(m) for m in n_rec]) if len(rows) else np.zeros(0, int)
    at_risk = np.bincount(ks, weights=w[rows], minlength=n_int)
    if np.any(at_risk <= 0):
        empty = np.flatnonzero(at_risk <= 0)
        raise ValueError(f"grid intervals with nobody at risk: {[tuple(grid[k:k + 2]) for k in empty[:5]]}")
    y = (~np.isnan(inf[rows]) & (inf[rows] <= grid[ks + 1])).astype(float)

    basis, bnames = _time_basis(n_int, time_basis)
    Z = np.column_stack([cohort.covariates[c] for c in covariates]) if covariates else None

    def fit_on(with_cov):
        # aggregate on (interval, covariates) before expanding the time basis
        key = ks[:, None].astype(float)
        names = list(bnames)
        if with_cov and Z is not None:
            key = np.column_stack([key, Z[rows]])
            names += covariates
        Ka, ya, wa = aggregate_design(key, y, w[rows])
        Xa = np.column_stack([basis[Ka[:, 0].astype(int)], Ka[:, 1:]])
        return fit_logistic(DesignMatrix(Xa, ya, names, wa))

    full = fit_on(True)
    log_surv = _uninfected_probability(full, basis, Z if covariates else None)
    log_surv = np.broadcast_to(log_surv, (len(cohort), n_int))
    marginal = None
    if stabilized:
        marginal = fit_on(False) if covariates else full
        log_num = _uninfected_probability(marginal, basis, None)
        matrix = np.exp(log_num - log_surv)
    else:
        matrix = np.exp(-log_surv)
    matrix = np.array(matrix, dtype=float)
    if not full.converged:
        warnings.warn("infection model for the weights did not converge "
                      "(intervals without infections are fitted at probability ~0)",
                      RuntimeWarning)

    relevant = np.arange(n_int)[None, :] < n_rec[:, None]
    over = (matrix > cap) & relevant
    truncated = int(over.sum())
    if truncated:
        warnings.warn(f"{truncated} patient-interval weights exceeded the cap {cap} "
                      "and were truncated", RuntimeWarning)
    np.minimum(matrix, cap, out=matrix)
    return IPWeights(grid=grid, matrix=matrix, stabilized=stabilized, truncated=truncated,
                     fit=full, marginal_fit=marginal)
