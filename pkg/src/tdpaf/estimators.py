"""Estimator objects with the scikit-learn ``fit`` / ``predict`` / ``get_params`` API.

Each estimator is fitted to a cohort (a :class:`~tdpaf.cohort.Cohort`, a
pandas DataFrame with the cohort-file columns, or a mapping of columns) and
then evaluated with ``predict``. Frequency weights passed as
``sample_weight`` are equivalent to duplicating patients, which is how
:func:`bootstrap_band` resamples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .aalen_johansen import aalen_johansen, cif_censor_at_exposure
from .cohort import Cohort, LandmarkGrid, fourfold_table
from .glm import UndefinedEstimandError, ipw_uninfected_weights, paf_greenland_drescher
from .paf import (ConvergenceError, InfeasibleGridError, paf_c_curve, paf_crude,
                  paf_lm_separate, paf_lm_supermodel, paf_o_curve)

__all__ = [
    "check_cohort",
    "CrudePAF",
    "ObservablePAF",
    "CounterfactualPAF",
    "LandmarkPAF",
    "BootstrapBand",
    "BootstrapError",
    "bootstrap_band",
    "make_estimator",
]


def check_cohort(X) -> Cohort:
    """Coerce ``X`` to a :class:`Cohort`.

    Accepts a Cohort, a DataFrame or a dict of columns named ``id``,
    ``infection_time`` (nan for never infected), ``exit_time``, ``exit_state``
    (``"death"``/``"discharge"``) and optionally ``censored``. Any further
    columns become covariates.
    """
    if isinstance(X, Cohort):
        return X
    if hasattr(X, "to_dict") and hasattr(X, "columns"):
        cols = {c: np.asarray(X[c]) for c in X.columns}
    elif isinstance(X, dict):
        cols = {k: np.asarray(v) for k, v in X.items()}
    else:
        raise TypeError(f"cannot build a cohort from {type(X).__name__}")
    required = ("exit_time", "exit_state")
    missing = [c for c in required if c not in cols]
    if missing:
        raise ValueError(f"cohort data lacks columns {missing}")
    n = len(cols["exit_time"])
    ids = cols.get("id", np.arange(1, n + 1))
    inf = cols.get("infection_time", np.full(n, np.nan))
    inf = np.array([np.nan if v is None or v == "" else float(v) for v in inf], dtype=float)
    states = cols["exit_state"]
    bad = set(np.unique(states.astype(str))) - {"death", "discharge"}
    if bad:
        raise ValueError(f"exit_state must be 'death' or 'discharge', found {sorted(bad)}")
    extra = [c for c in cols if c not in ("id", "infection_time", "exit_time",
                                          "exit_state", "censored")]
    return Cohort(ids, inf, cols["exit_time"].astype(float), states.astype(str) == "death",
                  cols.get("censored", np.zeros(n, dtype=bool)).astype(bool),
                  {c: cols[c].astype(float) for c in extra})


class _PafEstimator(BaseEstimator):
    estimand = ""

    def default_points(self) -> np.ndarray:
        """Evaluation points used by :func:`bootstrap_band` when none are given."""
        raise NotImplementedError

    def predict(self, points=None) -> np.ndarray:
        raise NotImplementedError


class CrudePAF(_PafEstimator):
    """PAF from ever-infection by death at the end of stay.

    Parameters
    ----------
    covariates : list of str, optional
        Adjust with the logistic-model (Greenland-Drescher) estimator.
    """

    estimand = "crude"

    def __init__(self, covariates=None):
        self.covariates = covariates

    def fit(self, X, y=None, sample_weight=None):
        cohort = check_cohort(X)
        self.table_ = fourfold_table(cohort, sample_weight=sample_weight)
        self.tau_ = cohort.tau
        if self.covariates:
            gd = paf_greenland_drescher(cohort, self.covariates, sample_weight=sample_weight)
            self.paf_ = gd.paf
            self.variance_ = gd.variance
        else:
            self.paf_ = paf_crude(self.table_)
            self.variance_ = None
        return self

    def default_points(self):
        check_is_fitted(self, "paf_")
        return np.array([self.tau_])

    def predict(self, points=None):
        """The crude PAF, repeated for each requested point."""
        check_is_fitted(self, "paf_")
        n = 1 if points is None else len(np.atleast_1d(points))
        return np.full(n, self.paf_)


class _CurveEstimator(_PafEstimator):
    def default_points(self):
        check_is_fitted(self, "curve_")
        return np.arange(0.0, np.floor(min(self.tau_, 200.0)) + 1.0)

    def predict(self, points=None):
        """Curve values at ``points`` (nan where the PAF is undefined)."""
        check_is_fitted(self, "curve_")
        if points is None:
            return self.curve_.values.copy()
        return self.curve_(np.asarray(points, dtype=float))


class ObservablePAF(_CurveEstimator):
    """PAF over time with exposure status taken at time ``t``.

    Attributes
    ----------
    curves_ : TransitionCurves
    curve_ : PafCurve
    """

    estimand = "paf_o"

    def fit(self, X, y=None, sample_weight=None):
        cohort = check_cohort(X)
        self.curves_ = aalen_johansen(cohort, sample_weight=sample_weight)
        self.curve_ = paf_o_curve(self.curves_)
        self.tau_ = cohort.tau
        return self


class CounterfactualPAF(_CurveEstimator):
    """PAF over time had infection been removed.

    Parameters
    ----------
    covariates : list of str, optional
        Baseline covariates for inverse probability of remaining uninfected
        weights. Without covariates the unweighted estimator is used.
    ipw_grid : array_like, optional
        Interval edges for the pooled logistic weight model; unit intervals by
        default.
    stabilized : bool, default=True
    cap : float, default=50
        Truncation level for the weights.
    time_basis : {"indicator", "linear", "quadratic"}, default="indicator"
    """

    estimand = "paf_c"

    def __init__(self, covariates=None, ipw_grid=None, stabilized=True, cap=50.0,
                 time_basis="indicator"):
        self.covariates = covariates
        self.ipw_grid = ipw_grid
        self.stabilized = stabilized
        self.cap = cap
        self.time_basis = time_basis

    def fit(self, X, y=None, sample_weight=None):
        cohort = check_cohort(X)
        self.weights_ = None
        if self.covariates:
            self.weights_ = ipw_uninfected_weights(
                cohort, self.covariates, grid=self.ipw_grid, stabilized=self.stabilized,
                cap=self.cap, time_basis=self.time_basis, sample_weight=sample_weight)
        self.curves_ = aalen_johansen(cohort, sample_weight=sample_weight)
        self.cif_ = cif_censor_at_exposure(cohort, sample_weight=sample_weight, ipw=self.weights_)
        self.curve_ = paf_c_curve(self.curves_, self.cif_)
        self.tau_ = cohort.tau
        return self


class LandmarkPAF(_PafEstimator):
    """PAF within ``(l, l + window]`` among patients at risk at landmark ``l``.

    Parameters
    ----------
    window : float
    landmarks : str or sequence of float
        ``"A:B:STEP"`` or explicit landmark times.
    covariates : list of str, optional
    min_cell : float, default=5
        Minimum count in each exposure-by-outcome cell to keep a landmark.
    method : {"separate", "supermodel"}, default="separate"
    basis : {"quadratic", "linear", "constant", "saturated"}, default="quadratic"
        Landmark basis of the supermodel.
    """

    estimand = "paf_lm"

    def __init__(self, window=30.0, landmarks="0:60:10", covariates=None, min_cell=5,
                 method="separate", basis="quadratic"):
        self.window = window
        self.landmarks = landmarks
        self.covariates = covariates
        self.min_cell = min_cell
        self.method = method
        self.basis = basis

    def grid(self) -> LandmarkGrid:
        if isinstance(self.landmarks, str):
            return LandmarkGrid.from_spec(self.landmarks, self.window)
        return LandmarkGrid(tuple(self.landmarks), self.window)

    def fit(self, X, y=None, sample_weight=None):
        cohort = check_cohort(X)
        grid = self.grid()
        if self.method == "separate":
            res = paf_lm_separate(cohort, grid, self.covariates or (), self.min_cell,
                                  sample_weight=sample_weight)
            self.result_ = res
            self.landmarks_ = res.landmarks
            self.values_ = res.values
            self.skipped_ = res.skipped
        elif self.method == "supermodel":
            fit = paf_lm_supermodel(cohort, grid, self.basis, self.covariates or (),
                                    self.min_cell, sample_weight=sample_weight)
            self.result_ = fit
            self.landmarks_ = fit.landmarks
            self.values_ = fit.values
            self.skipped_ = fit.skipped
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.grid_ = grid
        return self

    def default_points(self):
        check_is_fitted(self, "values_")
        return np.asarray(self.grid_.landmarks)

    def predict(self, points=None):
        """PAF at the requested landmarks; nan for landmarks not estimated."""
        check_is_fitted(self, "values_")
        if points is None:
            return self.values_.copy()
        points = np.atleast_1d(np.asarray(points, dtype=float))
        out = np.full(len(points), np.nan)
        lookup = dict(zip(self.landmarks_.tolist(), self.values_.tolist()))
        for i, p in enumerate(points):
            out[i] = lookup.get(float(p), np.nan)
        return out


_TAGS = {"crude": CrudePAF, "paf_o": ObservablePAF, "paf_c": CounterfactualPAF,
         "paf_lm": LandmarkPAF}


def make_estimator(tag: str, **params) -> _PafEstimator:
    try:
        return _TAGS[tag](**params)
    except KeyError:
        raise ValueError(f"unknown estimand {tag!r}; choose from {sorted(_TAGS)}") from None


# ---------------------------------------------------------------------------
# bootstrap


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed."""


@dataclass(frozen=True)
class BootstrapBand:
    points: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    replicates: np.ndarray
    dropped: int


_REPLICATE_FAILURES = (ValueError, UndefinedEstimandError, ConvergenceError,
                       InfeasibleGridError, np.linalg.LinAlgError)


def bootstrap_band(estimator, cohort, B: int = 200, level: float = 0.95, seed: int = 0,
                   points=None, max_drop: float = 0.10) -> BootstrapBand:
    """Pointwise percentile bootstrap band.

    Patients are resampled with replacement ``B`` times (as multinomial
    frequency weights), the estimator is refitted on each replicate and the
    ``(1 - level) / 2`` and ``(1 + level) / 2`` percentiles are taken at each
    evaluation point. Replicates whose fit fails are dropped; more than
    ``max_drop`` of them failing is an error.

    Parameters
    ----------
    estimator : str or estimator
        An estimand tag (``"crude"``, ``"paf_o"``, ``"paf_c"``) or an
        estimator instance (required for landmark PAFs).
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    cohort = check_cohort(cohort)
    if isinstance(estimator, str):
        estimator = make_estimator(estimator)
    base = clone(estimator).fit(cohort)
    points = base.default_points() if points is None else np.atleast_1d(np.asarray(points, float))
    estimate = base.predict(points)

    rng = np.random.default_rng(seed)
    n = len(cohort)
    probs = np.full(n, 1.0 / n)
    reps = np.full((B, len(points)), np.nan)
    ok = np.zeros(B, dtype=bool)
    for b in range(B):
        counts = rng.multinomial(n, probs).astype(float)
        try:
            reps[b] = clone(estimator).fit(cohort, sample_weight=counts).predict(points)
            ok[b] = True
        except _REPLICATE_FAILURES:
            continue
    dropped = int(B - ok.sum())
    if dropped > max_drop * B:
        raise BootstrapError(f"{dropped} of {B} bootstrap replicates failed")
    kept = reps[ok]
    alpha = 100.0 * (1.0 - level) / 2.0
    lower = np.full(len(points), np.nan)
    upper = np.full(len(points), np.nan)
    has = np.any(np.isfinite(kept), axis=0)
    if np.any(has):
        lower[has], upper[has] = np.nanpercentile(kept[:, has], [alpha, 100.0 - alpha], axis=0)
    return BootstrapBand(points=points, estimate=estimate, lower=lower, upper=upper,
                         level=level, replicates=kept, dropped=dropped)
