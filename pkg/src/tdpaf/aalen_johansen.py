"""Aalen-Johansen estimation for the extended illness-death model.

States: 0 admitted and uninfected, 1 infected, 2/3 discharged/dead without
infection, 4/5 discharged/dead after infection.

Conventions at a shared time ``t``: transitions out of state 0 are processed
first, then transitions out of state 1 (so a patient infected at ``t`` may
leave state 1 at ``t``), and censored patients leave the risk sets only after
all events at ``t``.

The module also holds exact occupation probabilities for constant hazards and
a generic fourth-order Runge-Kutta integrator of the forward equations, both
used as independent checks of the estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort

__all__ = [
    "TransitionCurves",
    "CensoredCif",
    "aalen_johansen",
    "cif_censor_at_exposure",
    "constant_hazard_oracle",
    "forward_equations_rk4",
    "curves_to_rows",
    "STATES",
]

STATES = (0, 1, 2, 3, 4, 5)
# log-drop after which the vectorised recurrence is re-anchored
_LOG_CHUNK = 200.0


def _step_eval(times, values, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("evaluation times must be >= 0")
    idx = np.searchsorted(times, t, side="right") - 1
    return values[idx]


@dataclass(frozen=True)
class TransitionCurves:
    """Right-continuous estimates of ``P_0j(0, t)`` for j = 0..5.

    ``times[0]`` is 0 and carries the initial occupation (all mass in state 0);
    each later entry is an event time. ``probs`` has shape ``(len(times), 6)``.
    """

    times: np.ndarray
    probs: np.ndarray
    n: float

    def __call__(self, t) -> np.ndarray:
        return _step_eval(self.times, self.probs, t)

    def state(self, j: int) -> np.ndarray:
        return self.probs[:, j]

    @property
    def jump_times(self) -> np.ndarray:
        return self.times[1:]

    def __getattr__(self, name):
        # P00 .. P05 as attributes
        if len(name) == 3 and name.startswith("P0") and name[2] in "012345":
            return self.probs[:, int(name[2])]
        raise AttributeError(name)


@dataclass(frozen=True)
class CensoredCif:
    """Cumulative incidence of death without infection when infection censors."""

    times: np.ndarray
    p03_0: np.ndarray
    n: float

    def __call__(self, t) -> np.ndarray:
        return _step_eval(self.times, self.p03_0, t)


def _weights(cohort, sample_weight):
    if sample_weight is None:
        return np.ones(len(cohort))
    w = np.asarray(sample_weight, dtype=float)
    if w.shape != (len(cohort),):
        raise ValueError("sample_weight must have one entry per patient")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample_weight must be finite and >= 0")
    return w


def _at_risk_from(stop, weight, times):
    """Sum of ``weight`` over subjects with ``stop >= t`` for each ``t``."""
    order = np.argsort(stop, kind="stable")
    s = stop[order]
    tail = np.concatenate([np.cumsum(weight[order][::-1])[::-1], [0.0]])
    return tail[np.searchsorted(s, times, side="left")]


def _safe_ratio(num, den):
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _linear_recurrence(r, b):
    """Solve ``x_j = r_j * (x_{j-1} + b_j)`` with ``x_{-1} = 0``.

    Returns ``(q, x)`` where ``q_j = x_{j-1} + b_j``. Zero factors reset the
    state; the running product is re-anchored whenever it shrinks by more than
    ``exp(-_LOG_CHUNK)`` to keep it representable.
    """
    m = len(r)
    q = np.empty(m)
    x = np.empty(m)
    if m == 0:
        return q, x
    r = np.clip(r, 0.0, 1.0)
    boundaries = np.flatnonzero(r == 0.0)
    starts = np.concatenate([[0], boundaries + 1])
    stops = np.concatenate([boundaries + 1, [m]])
    carry = 0.0
    for lo, hi in zip(starts, stops):
        if lo >= hi:
            continue
        _solve_block(r[lo:hi], b[lo:hi], carry, q[lo:hi], x[lo:hi])
        carry = x[hi - 1]
    return q, x


def _solve_block(r, b, carry, q_out, x_out):
    m = len(r)
    logs = np.log(np.where(r > 0, r, 1.0))
    cum = np.cumsum(logs)
    chunk = np.floor(-cum / _LOG_CHUNK).astype(np.int64)
    cuts = np.flatnonzero(np.diff(chunk)) + 1
    for lo, hi in zip(np.concatenate([[0], cuts]), np.concatenate([cuts, [m]])):
        rr = r[lo:hi]
        lg = np.cumsum(logs[lo:hi])
        prev = np.exp(np.concatenate([[0.0], lg[:-1]]))  # product of r before j
        y = carry + np.cumsum(b[lo:hi] / prev)
        qq = prev * y
        q_out[lo:hi] = qq
        x_out[lo:hi] = rr * qq
        carry = x_out[hi - 1]


def aalen_johansen(cohort: Cohort, sample_weight=None) -> TransitionCurves:
    """Product-integral estimate of the state occupation probabilities.

    Parameters
    ----------
    cohort : Cohort
        Censored patients are removed from the risk set at their exit time.
    sample_weight : array_like, optional
        Non-negative frequency weights (bootstrap resampling counts).
    """
    if len(cohort) == 0:
        raise ValueError("cannot estimate transition probabilities from an empty cohort")
    w = _weights(cohort, sample_weight)
    inf = cohort.infection_time
    ext = cohort.exit_time
    infected = ~np.isnan(inf)
    observed = ~cohort.censored
    death = cohort.death

    groups = {
        "01": infected,
        "02": ~infected & observed & ~death,
        "03": ~infected & observed & death,
        "14": infected & observed & ~death,
        "15": infected & observed & death,
    }
    event_time = {"01": inf}
    for key in ("02", "03", "14", "15"):
        event_time[key] = ext
    times = np.unique(np.concatenate([event_time[k][m] for k, m in groups.items()]))
    d = {
        k: np.bincount(np.searchsorted(times, event_time[k][m]), weights=w[m],
                       minlength=len(times)).astype(float)
        for k, m in groups.items()
    }

    stop0 = np.where(infected, inf, ext)
    y0 = _at_risk_from(stop0, w, times)
    wi = np.where(infected, w, 0.0)
    entered = np.cumsum(np.bincount(np.searchsorted(times, inf[infected]), weights=wi[infected],
                                    minlength=len(times)))
    y1 = entered - (np.sum(wi) - _at_risk_from(ext, wi, times))

    p0 = np.cumprod(1.0 - _safe_ratio(d["01"] + d["02"] + d["03"], y0))
    p0_prev = np.concatenate([[1.0], p0[:-1]])
    p2 = np.cumsum(p0_prev * _safe_ratio(d["02"], y0))
    p3 = np.cumsum(p0_prev * _safe_ratio(d["03"], y0))
    inflow = p0_prev * _safe_ratio(d["01"], y0)
    q1, p1 = _linear_recurrence(1.0 - _safe_ratio(d["14"] + d["15"], y1), inflow)
    p4 = np.cumsum(q1 * _safe_ratio(d["14"], y1))
    p5 = np.cumsum(q1 * _safe_ratio(d["15"], y1))

    probs = np.column_stack([p0, p1, p2, p3, p4, p5])
    probs = np.vstack([[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], probs])
    return TransitionCurves(np.concatenate([[0.0], times]), probs, float(w.sum()))


def _weight_columns(ipw, times):
    """Column index into an IPW weight matrix for each time."""
    idx = np.searchsorted(ipw.grid, times, side="left") - 1
    return np.clip(idx, 0, ipw.matrix.shape[1] - 1)


def cif_censor_at_exposure(cohort: Cohort, sample_weight=None, ipw=None) -> CensoredCif:
    """Cumulative incidence of uninfected death with infection treated as censoring.

    Parameters
    ----------
    cohort : Cohort
    sample_weight : array_like, optional
        Frequency weights.
    ipw : IPWeights, optional
        Time-varying inverse probability weights (see
        :func:`tdpaf.glm.ipw_uninfected_weights`); multiplied into
        ``sample_weight``.
    """
    if len(cohort) == 0:
        raise ValueError("cannot estimate a cumulative incidence from an empty cohort")
    w = _weights(cohort, sample_weight)
    inf = cohort.infection_time
    ext = cohort.exit_time
    infected = ~np.isnan(inf)
    observed = ~infected & ~cohort.censored
    g02 = observed & ~cohort.death
    g03 = observed & cohort.death
    stop = np.where(infected, inf, ext)
    times = np.unique(ext[g02 | g03])

    if ipw is None:
        d02 = np.bincount(np.searchsorted(times, ext[g02]), weights=w[g02], minlength=len(times))
        d03 = np.bincount(np.searchsorted(times, ext[g03]), weights=w[g03], minlength=len(times))
        y = _at_risk_from(stop, w, times)
    else:
        if ipw.matrix.shape[0] != len(cohort):
            raise ValueError("IPW weights were computed for a different cohort")
        cols = _weight_columns(ipw, times)
        y = np.zeros(len(times))
        ev_idx02 = np.searchsorted(times, ext[g02])
        ev_idx03 = np.searchsorted(times, ext[g03])
        rows02 = np.flatnonzero(g02)
        rows03 = np.flatnonzero(g03)
        d02 = np.bincount(ev_idx02, weights=w[rows02] * ipw.matrix[rows02, cols[ev_idx02]],
                          minlength=len(times))
        d03 = np.bincount(ev_idx03, weights=w[rows03] * ipw.matrix[rows03, cols[ev_idx03]],
                          minlength=len(times))
        for c in np.unique(cols):
            sel = cols == c
            y[sel] = _at_risk_from(stop, w * ipw.matrix[:, c], times[sel])

    s = np.cumprod(1.0 - _safe_ratio(d02 + d03, y))
    s_prev = np.concatenate([[1.0], s[:-1]])
    p = np.cumsum(s_prev * _safe_ratio(d03, y))
    return CensoredCif(np.concatenate([[0.0], times]), np.concatenate([[0.0], p]),
                       float(w.sum()))


# ---------------------------------------------------------------------------
# constant-hazard oracle


def _rates_tuple(rates):
    if isinstance(rates, dict):
        rates = [rates[k] for k in ("a01", "a02", "a03", "a14", "a15")]
    rates = tuple(float(r) for r in rates)
    if len(rates) != 5:
        raise ValueError("need five rates a01, a02, a03, a14, a15")
    if any(r < 0 or not math.isfinite(r) for r in rates):
        raise ValueError("rates must be finite and >= 0")
    return rates


def _phi(c, t):
    """(1 - exp(-c t)) / c, with its limit t at c = 0."""
    if c == 0:
        return t
    return -math.expm1(-c * t) / c


def constant_hazard_oracle(rates, t: float) -> dict:
    """Exact occupation probabilities of the time-homogeneous model at ``t``.

    Returns a dict with keys ``P00`` .. ``P05`` and ``P03_0`` (uninfected death
    when the infection hazard is removed).
    """
    a01, a02, a03, a14, a15 = _rates_tuple(rates)
    t = float(t)
    if t < 0:
        raise ValueError("t must be >= 0")
    c1 = a01 + a02 + a03
    c2 = a14 + a15
    p00 = math.exp(-c1 * t)
    f1 = _phi(c1, t)  # integral of P00
    p02 = a02 * f1
    p03 = a03 * f1
    if a01 == 0:
        p01 = 0.0
        int_p01 = 0.0
    elif abs(c1 - c2) <= 1e-12 * max(c1, c2):
        p01 = a01 * t * math.exp(-c1 * t)
        # integral of a01 s exp(-c s) over [0, t]
        int_p01 = a01 * (1.0 - math.exp(-c1 * t) * (1.0 + c1 * t)) / (c1 * c1)
    else:
        p01 = a01 * (math.exp(-c2 * t) - math.exp(-c1 * t)) / (c1 - c2)
        int_p01 = a01 * (_phi(c2, t) - f1) / (c1 - c2)
    p04 = a14 * int_p01
    p05 = a15 * int_p01
    c0 = a02 + a03
    p03_0 = a03 * _phi(c0, t)
    return {"P00": p00, "P01": p01, "P02": p02, "P03": p03, "P04": p04, "P05": p05,
            "P03_0": p03_0}


def forward_equations_rk4(rates, t: float, step: float = 0.01) -> dict:
    """Integrate the Kolmogorov forward equations ``dP/dt = P Q`` with RK4.

    A generic check on :func:`constant_hazard_oracle` that knows nothing of the
    closed forms. The reduced model with the infection hazard removed is
    integrated alongside to give ``P03_0``.
    """
    a01, a02, a03, a14, a15 = _rates_tuple(rates)
    q = np.zeros((6, 6))
    q[0, 1], q[0, 2], q[0, 3] = a01, a02, a03
    q[1, 4], q[1, 5] = a14, a15
    q[np.diag_indices(6)] = -q.sum(axis=1)
    q0 = q.copy()
    q0[0, 1] = 0.0
    q0[0, 0] = -(a02 + a03)

    def integrate(gen):
        p = np.zeros(6)
        p[0] = 1.0
        n_steps = max(1, int(math.ceil(t / step)))
        h = t / n_steps
        for _ in range(n_steps):
            k1 = p @ gen
            k2 = (p + 0.5 * h * k1) @ gen
            k3 = (p + 0.5 * h * k2) @ gen
            k4 = (p + h * k3) @ gen
            p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return p

    p = integrate(q) if t > 0 else np.eye(6)[0]
    p0 = integrate(q0) if t > 0 else np.eye(6)[0]
    out = {f"P0{j}": float(p[j]) for j in range(6)}
    out["P03_0"] = float(p0[3])
    return out


def curves_to_rows(curves: TransitionCurves, cif: CensoredCif = None) -> list:
    """Long-format ``(curve, time, value)`` rows for export."""
    rows = []
    for j in range(6):
        name = f"P0{j}"
        rows.extend((name, float(t), float(v)) for t, v in zip(curves.times, curves.probs[:, j]))
    if cif is not None:
        rows.extend(("P03_0", float(t), float(v)) for t, v in zip(cif.times, cif.p03_0))
    return rows
