"""Loop-based reference computations, written independently of the package.

Everything here walks patients one at a time with plain Python and 6x6
matrices so that it shares no code path with the vectorised estimators.
"""

import numpy as np


def _patients(cohort, weights):
    w = np.ones(len(cohort)) if weights is None else np.asarray(weights, float)
    out = []
    for i, p in enumerate(cohort):
        out.append((p, float(w[i])))
    return out


def product_integral(cohort, weights=None, simultaneous=False):
    """Aalen-Johansen occupation probabilities as ``{time: row of 6}``.

    By default transitions out of state 0 at a time are applied before those
    out of state 1 (patients entering 1 at that time join its risk set). With
    ``simultaneous=True`` one factor ``I + dA`` with risk sets just before the
    time is used instead.
    """
    pats = _patients(cohort, weights)
    times = set()
    for p, _ in pats:
        if p.infection_time is not None:
            times.add(p.infection_time)
        if not p.censored:
            times.add(p.exit_time)
    P = np.zeros(6)
    P[0] = 1.0
    out = {0.0: P.copy()}
    for t in sorted(times):
        y0 = d01 = d02 = d03 = 0.0
        y1_before = y1_entering = d14 = d15 = 0.0
        for p, w in pats:
            stop0 = p.exit_time if p.infection_time is None else p.infection_time
            if stop0 >= t:
                y0 += w
            if p.infection_time is not None:
                if p.infection_time == t:
                    d01 += w
                    y1_entering += w
                elif p.infection_time < t <= p.exit_time:
                    y1_before += w
                if p.exit_time == t and not p.censored:
                    if p.exit_state == "death":
                        d15 += w
                    else:
                        d14 += w
            elif p.exit_time == t and not p.censored:
                if p.exit_state == "death":
                    d03 += w
                else:
                    d02 += w
        A0 = np.eye(6)
        if y0 > 0:
            A0[0, 1], A0[0, 2], A0[0, 3] = d01 / y0, d02 / y0, d03 / y0
            A0[0, 0] = 1.0 - (d01 + d02 + d03) / y0
        A1 = np.eye(6)
        y1 = y1_before if simultaneous else y1_before + y1_entering
        if y1 > 0:
            A1[1, 4], A1[1, 5] = d14 / y1, d15 / y1
            A1[1, 1] = 1.0 - (d14 + d15) / y1
        if simultaneous:
            A = A0 + A1 - np.eye(6)
            P = P @ A
        else:
            P = P @ A0 @ A1
        out[t] = P.copy()
    return out


def step_value(table, t):
    """Right-continuous evaluation of a ``{time: value}`` step function."""
    keys = [k for k in sorted(table) if k <= t]
    return table[keys[-1]]


def censored_cif(cohort, weights=None):
    """Death-without-infection incidence with infection censoring, as ``{time: value}``."""
    pats = _patients(cohort, weights)
    times = sorted({p.exit_time for p, _ in pats
                    if p.infection_time is None and not p.censored})
    surv, cif = 1.0, 0.0
    out = {0.0: 0.0}
    for t in times:
        y = d = d3 = 0.0
        for p, w in pats:
            stop = p.exit_time if p.infection_time is None else p.infection_time
            if stop >= t:
                y += w
            if p.infection_time is None and not p.censored and p.exit_time == t:
                d += w
                if p.exit_state == "death":
                    d3 += w
        if y > 0:
            cif += surv * d3 / y
            surv *= 1.0 - d / y
        out[t] = cif
    return out


def crude_paf(cohort, weights=None):
    n = died = n0 = died0 = 0.0
    for p, w in _patients(cohort, weights):
        n += w
        dead = p.exit_state == "death"
        died += w * dead
        if p.infection_time is None:
            n0 += w
            died0 += w * dead
    return (died / n - died0 / n0) / (died / n)


def paf_o(P):
    dead = P[3] + P[5]
    if dead <= 0 or P[0] + P[2] + P[3] <= 0:
        return None
    return 1.0 - (P[3] / (P[0] + P[2] + P[3])) / dead


def paf_c(P, p03_0):
    dead = P[3] + P[5]
    if dead <= 0:
        return None
    return (dead - p03_0) / dead


def landmark_counts(cohort, l, h):
    """``(exposed died, exposed survived, unexposed died, unexposed survived)`` by loop."""
    c = [0, 0, 0, 0]
    for p in cohort:
        if p.exit_time <= l:
            continue
        exposed = p.infection_time is not None and p.infection_time <= l
        died = p.exit_state == "death" and p.exit_time <= l + h
        c[(0 if exposed else 2) + (0 if died else 1)] += 1
    return tuple(c)
