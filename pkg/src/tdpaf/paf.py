"""Population-attributable fractions for a time-dependent exposure.

Four estimands are computed here:

* ``paf_crude`` from a fourfold table of ever-exposure by final outcome;
* ``paf_o_curve``, the observable PAF over study time, from the
  Aalen-Johansen occupation probabilities;
* ``paf_c_curve``, the PAF had exposure been removed, which replaces the
  unexposed risk by the cumulative incidence with infection treated as
  censoring;
* ``paf_lm_separate`` / ``paf_lm_supermodel``, PAFs within a window after
  each landmark among patients still at risk.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .aalen_johansen import CensoredCif, TransitionCurves
from .cohort import Cohort, FourfoldTable, LandmarkGrid, landmark_dataset
from .glm import (DesignMatrix, LogisticFit, UndefinedEstimandError, aggregate_design,
                  fit_logistic, paf_greenland_drescher)

__all__ = [
    "PafCurve",
    "LandmarkEstimate",
    "LandmarkResult",
    "SupermodelFit",
    "ConvergenceError",
    "InfeasibleGridError",
    "paf_crude",
    "relative_risk",
    "paf_o_curve",
    "paf_c_curve",
    "paf_lm_separate",
    "paf_lm_supermodel",
    "smooth_landmark_estimates",
]


class ConvergenceError(RuntimeError):
    """A model needed for an estimate did not converge."""


class InfeasibleGridError(ValueError):
    """Every landmark of a grid failed the feasibility rule."""

    def __init__(self, skipped):
        self.skipped = list(skipped)
        detail = "; ".join(f"l={l:g}: {why}" for l, why in self.skipped[:10])
        super().__init__(f"grid infeasible, all {len(self.skipped)} landmarks skipped ({detail})")


# ---------------------------------------------------------------------------
# crude


def _check_table(table: FourfoldTable):
    if table.total <= 0:
        raise ValueError("fourfold table is empty")
    if table.n_unexposed <= 0:
        raise ValueError("no unexposed patients: P(D=1 | E=0) is undefined")
    if table.n_died <= 0:
        raise UndefinedEstimandError("no deaths: the PAF is undefined")


def paf_crude(table: FourfoldTable) -> float:
    """``(P(D=1) - P(D=1 | E=0)) / P(D=1)`` from a fourfold table."""
    _check_table(table)
    p_d = table.n_died / table.total
    p_d_unexp = table.n_unexp_died / table.n_unexposed
    return (p_d - p_d_unexp) / p_d


def relative_risk(table: FourfoldTable) -> float:
    """Risk of death among exposed over risk among unexposed."""
    if table.n_exposed <= 0 or table.n_unexposed <= 0:
        raise ValueError("relative risk needs both exposure groups")
    r0 = table.n_unexp_died / table.n_unexposed
    if r0 == 0:
        return np.inf
    return (table.n_exp_died / table.n_exposed) / r0


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class PafCurve:
    """A PAF step function; ``values`` is nan where ``defined`` is False."""

    estimand: str
    times: np.ndarray
    values: np.ndarray
    defined: np.ndarray
    n: float
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[idx]

    @property
    def first_defined(self) -> float:
        idx = np.flatnonzero(self.defined)
        return float(self.times[idx[0]]) if len(idx) else np.inf


def _ratio_curve(name, times, numerator, denominator, n):
    defined = denominator > 0
    values = np.full(len(times), np.nan)
    values[defined] = numerator[defined] / denominator[defined]
    return PafCurve(name, times, values, defined, n)


def paf_o_curve(curves: TransitionCurves) -> PafCurve:
    """Observable PAF: ``1 - P(D(t)=1 | E(t)=0) / P(D(t)=1)`` over time.

    Undefined until the first death and wherever nobody is left unexposed.
    """
    p = curves.probs
    p_dead = p[:, 3] + p[:, 5]
    unexposed = p[:, 0] + p[:, 2] + p[:, 3]
    defined = (p_dead > 0) & (unexposed > 0)
    values = np.full(len(curves.times), np.nan)
    cond = p[defined, 3] / unexposed[defined]
    values[defined] = 1.0 - cond / p_dead[defined]
    return PafCurve("paf_o", curves.times, values, defined, curves.n)


def paf_c_curve(curves: TransitionCurves, cif0: CensoredCif) -> PafCurve:
    """PAF had infection been removed, ``(P(D(t)=1) - P03_0(t)) / P(D(t)=1)``."""
    if not np.isclose(curves.n, cif0.n, rtol=0, atol=1e-9 * max(curves.n, 1.0)):
        raise ValueError(f"curves ({curves.n}) and cumulative incidence ({cif0.n}) "
                         "come from cohorts of different size")
    times = np.union1d(curves.times, cif0.times)
    occ = curves(times)
    p_dead = occ[:, 3] + occ[:, 5]
    p0 = cif0(times)
    curve = _ratio_curve("paf_c", times, p_dead - p0, p_dead, curves.n)
    return curve


# ---------------------------------------------------------------------------
# landmarks


@dataclass(frozen=True)
class LandmarkEstimate:
    landmark: float
    window: float
    paf: float
    rr: float
    prevalence: float
    table: FourfoldTable
    variance: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    adjusted: bool = False

    @property
    def paf_from_rr(self) -> float:
        """The same PAF written as prevalence among cases times ``(RR - 1) / RR``."""
        return self.prevalence * (self.rr - 1.0) / self.rr


@dataclass
class LandmarkResult:
    estimates: list
    skipped: list = field(default_factory=list)

    @property
    def landmarks(self) -> np.ndarray:
        return np.array([e.landmark for e in self.estimates])

    @property
    def values(self) -> np.ndarray:
        return np.array([e.paf for e in self.estimates])

    def __iter__(self):
        return iter(self.estimates)

    def __len__(self):
        return len(self.estimates)


def _feasibility(table: FourfoldTable, min_cell: float) -> Optional[str]:
    if table.n_exposed <= 0:
        return "no exposed patients at risk"
    if table.n_unexposed <= 0:
        return "no unexposed patients at risk"
    if table.n_died <= 0:
        return "no deaths in the window"
    cells = dict(zip(("exposed deaths", "exposed survivors", "unexposed deaths",
                      "unexposed survivors"), table.cells()))
    small = [name for name, v in cells.items() if v < min_cell]
    if small:
        return f"cells below {min_cell:g}: {', '.join(small)}"
    return None


def paf_lm_separate(cohort: Cohort, grid: LandmarkGrid, covariates: Sequence[str] = (),
                    min_cell: float = 5, sample_weight=None) -> LandmarkResult:
    """One PAF per landmark from that landmark's dataset.

    Landmarks where any exposure-by-outcome cell has fewer than ``min_cell``
    patients are skipped and listed in ``skipped`` with the reason. With
    covariates the Greenland-Drescher estimator replaces the fourfold
    arithmetic.

    Raises
    ------
    InfeasibleGridError
        When no landmark survives.
    """
    covariates = list(covariates or ())
    estimates, skipped = [], []
    for l in grid.landmarks:
        data = landmark_dataset(cohort, l, grid.window, sample_weight=sample_weight)
        table = data.table()
        reason = _feasibility(table, min_cell)
        if reason is not None:
            skipped.append((l, reason))
            continue
        rr = relative_risk(table)
        prevalence = table.n_exp_died / table.n_died
        if covariates:
            try:
                gd = paf_greenland_drescher(data, covariates)
            except UndefinedEstimandError as exc:
                skipped.append((l, str(exc)))
                continue
            estimates.append(LandmarkEstimate(l, grid.window, gd.paf, rr, prevalence, table,
                                              variance=gd.variance, adjusted=True))
        else:
            estimates.append(LandmarkEstimate(l, grid.window, paf_crude(table), rr,
                                              prevalence, table))
    if not estimates:
        raise InfeasibleGridError(skipped)
    return LandmarkResult(estimates, skipped)


@dataclass
class SupermodelFit:
    basis: str
    columns: tuple
    fit: LogisticFit
    landmarks: np.ndarray
    values: np.ndarray
    skipped: list = field(default_factory=list)
    scale: tuple = (0.0, 1.0)

    def __call__(self, landmark) -> np.ndarray:
        """Smoothed PAF at arbitrary landmarks (interpolated for saturated bases)."""
        return np.interp(landmark, self.landmarks, self.values)


_DEGREE = {"constant": 0, "linear": 1, "quadratic": 2}
_BY_DEGREE = {v: k for k, v in _DEGREE.items()}


def _landmark_basis(landmarks, kind, offset, span):
    u = (np.asarray(landmarks, dtype=float) - offset) / span
    if kind == "constant":
        return np.ones((len(u), 1)), ["b0"]
    if kind == "linear":
        return np.column_stack([np.ones(len(u)), u]), ["b0", "b1"]
    if kind == "quadratic":
        return np.column_stack([np.ones(len(u)), u, u * u]), ["b0", "b1", "b2"]
    raise ValueError(f"unknown supermodel basis {kind!r}")


def paf_lm_supermodel(cohort: Cohort, grid: LandmarkGrid, basis: str = "quadratic",
                      covariates: Sequence[str] = (), min_cell: float = 5,
                      sample_weight=None, max_iter: int = 100) -> SupermodelFit:
    """Pooled logistic regression on stacked landmark datasets.

    The outcome is regressed on ``basis(l)`` and ``exposure * basis(l)`` (plus
    covariates). ``basis`` is ``"constant"``, ``"linear"``, ``"quadratic"``
    (in the rescaled landmark) or ``"saturated"`` (one indicator per
    landmark). The PAF at each landmark plugs the fitted probabilities into
    ``1 - mean p(D | E=0) / mean p(D | E)`` over that landmark's rows.
    """
    covariates = list(covariates or ())
    blocks, kept, skipped = [], [], []
    for l in grid.landmarks:
        data = landmark_dataset(cohort, l, grid.window, sample_weight=sample_weight)
        reason = _feasibility(data.table(), min_cell)
        if reason is not None:
            skipped.append((l, reason))
            continue
        blocks.append(data)
        kept.append(l)
    if not blocks:
        raise InfeasibleGridError(skipped)
    kept = np.array(kept)
    lm_col = np.concatenate([np.full(len(b), i) for i, b in enumerate(blocks)])
    exposure = np.concatenate([b.exposure for b in blocks]).astype(float)
    outcome = np.concatenate([b.outcome for b in blocks]).astype(float)
    weight = np.concatenate([b.weight for b in blocks])
    cov = [np.concatenate([b.covariates[c] for b in blocks]) for c in covariates]

    offset = float(kept[0])
    span = float(kept[-1] - kept[0]) or 1.0
    if basis == "saturated":
        B = np.eye(len(kept))
        bnames = [f"lm{l:g}" for l in kept]
    else:
        if basis not in _DEGREE:
            raise ValueError(f"unknown supermodel basis {basis!r}")
        # a polynomial in l is only identified with more landmarks than its degree
        usable = min(_DEGREE[basis], len(kept) - 1)
        if usable < _DEGREE[basis]:
            warnings.warn(f"only {len(kept)} feasible landmark(s): {basis} basis reduced to "
                          f"degree {usable}", RuntimeWarning)
        B, bnames = _landmark_basis(kept, _BY_DEGREE[usable], offset, span)
    Bi = B[lm_col]
    names = bnames + [f"exposure:{b}" for b in bnames] + covariates
    X = np.column_stack([Bi, Bi * exposure[:, None]] + cov)
    Xa, ya, wa = aggregate_design(X, outcome, weight)
    fit = fit_logistic(DesignMatrix(Xa, ya, names, wa), max_iter=max_iter)
    if not fit.converged:
        raise ConvergenceError(
            f"supermodel did not converge after {fit.iterations} iterations"
            + (" (separation)" if fit.separated else ""))

    p_obs = expit(X @ fit.coefficients)
    X0 = X.copy()
    X0[:, B.shape[1]:2 * B.shape[1]] = 0.0
    p_unexp = expit(X0 @ fit.coefficients)
    num = np.bincount(lm_col, weights=weight * p_unexp, minlength=len(kept))
    den = np.bincount(lm_col, weights=weight * p_obs, minlength=len(kept))
    values = 1.0 - num / den
    return SupermodelFit(basis=basis, columns=tuple(names), fit=fit, landmarks=kept,
                         values=values, skipped=skipped, scale=(offset, span))


def smooth_landmark_estimates(landmarks, values, bandwidth: Optional[float] = None) -> np.ndarray:
    """Local-linear smoothing of separate landmark PAFs (tricube kernel).

    ``bandwidth`` is the kernel half-width and defaults to three landmark
    spacings. Cosmetic only: never used for inference.
    """
    x = np.asarray(landmarks, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(x) < 3:
        return y.copy()
    if bandwidth is None:
        bandwidth = 3.0 * float(np.median(np.diff(x)))
    out = np.empty_like(y)
    for i, x0 in enumerate(x):
        d = np.abs(x - x0) / bandwidth
        k = np.where(d < 1, (1 - d ** 3) ** 3, 0.0)
        if np.count_nonzero(k) < 2:
            out[i] = y[i]
            continue
        A = np.column_stack([np.ones_like(x), x - x0])
        sw = np.sqrt(k)
        coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
        out[i] = coef[0]
    return np.minimum(out, 1.0)
