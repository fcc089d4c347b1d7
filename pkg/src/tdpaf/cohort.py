"""Patient histories, cohorts, fourfold tables and landmark datasets.

A :class:`Cohort` is stored column-wise (one numpy array per field) so that
estimators and bootstrap replicates can work on it without per-patient Python
objects. :class:`PatientHistory` is the row view.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

__all__ = [
    "PatientHistory",
    "Cohort",
    "FourfoldTable",
    "LandmarkGrid",
    "LandmarkRow",
    "LandmarkData",
    "CohortFormatError",
    "validate",
    "fourfold_table",
    "landmark_dataset",
    "read_cohort",
    "write_cohort",
]

EXIT_STATES = ("discharge", "death")
BASE_COLUMNS = ("id", "infection_time", "exit_time", "exit_state", "censored")


class CohortFormatError(ValueError):
    """Raised for unreadable or inconsistent cohort files."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PatientHistory:
    id: str
    infection_time: Optional[float]
    exit_time: float
    exit_state: str
    censored: bool = False
    covariates: dict = field(default_factory=dict)

    @property
    def infected(self) -> bool:
        return self.infection_time is not None

    @property
    def died(self) -> bool:
        return not self.censored and self.exit_state == "death"


def validate(history: PatientHistory) -> list:
    """Return the list of invariant violations of a single history.

    An empty list means the history is valid. Violations are reported as
    short strings, never raised.
    """
    problems = []
    exit_time = history.exit_time
    if exit_time is None or not _finite(exit_time):
        problems.append("exit_time must be a finite number")
    elif exit_time <= 0:
        problems.append("exit_time must be > 0")
    inf = history.infection_time
    if inf is not None:
        if not _finite(inf):
            problems.append("infection_time must be a finite number")
        elif inf <= 0:
            problems.append("infection_time must be > 0")
        elif exit_time is not None and _finite(exit_time) and inf > exit_time:
            problems.append("infection_time > exit_time")
    if history.exit_state not in EXIT_STATES:
        problems.append(f"exit_state must be one of {EXIT_STATES}")
    for name, value in history.covariates.items():
        if not _finite(value):
            problems.append(f"covariate {name!r} must be a finite number")
    return problems


def _finite(x) -> bool:
    try:
        return math.isfinite(float(x))
    except (TypeError, ValueError):
        return False


class Cohort:
    """An ordered, immutable collection of patient histories.

    Parameters
    ----------
    ids : sequence of str
    infection_time : array_like
        Infection times; ``nan`` marks patients never infected.
    exit_time : array_like
    death : array_like of bool
        True where the exit state is death.
    censored : array_like of bool, optional
    covariates : dict of str -> array_like, optional
    tau : float, optional
        End of follow-up; defaults to the largest exit time.
    """

    def __init__(self, ids, infection_time, exit_time, death, censored=None,
                 covariates=None, tau=None):
        n = len(ids)
        self.ids = np.array([str(i) for i in ids], dtype=object)
        self.infection_time = np.asarray(infection_time, dtype=float).reshape(n)
        self.exit_time = np.asarray(exit_time, dtype=float).reshape(n)
        self.death = np.asarray(death, dtype=bool).reshape(n)
        if censored is None:
            censored = np.zeros(n, dtype=bool)
        self.censored = np.asarray(censored, dtype=bool).reshape(n)
        self.covariates = {
            str(k): np.asarray(v, dtype=float).reshape(n)
            for k, v in (covariates or {}).items()
        }
        for arr in (self.ids, self.infection_time, self.exit_time, self.death,
                    self.censored, *self.covariates.values()):
            arr.setflags(write=False)
        self._check()
        max_exit = float(self.exit_time.max()) if n else 0.0
        self.tau = max_exit if tau is None else float(tau)
        if self.tau < max_exit:
            raise ValueError(f"tau={self.tau} is smaller than the largest exit time {max_exit}")

    def _check(self):
        if len(set(self.ids)) != len(self.ids):
            seen, dup = set(), None
            for i in self.ids:
                if i in seen:
                    dup = i
                    break
                seen.add(i)
            raise ValueError(f"duplicate patient id {dup!r}")
        et = self.exit_time
        if not np.all(np.isfinite(et)) or np.any(et <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(et) & (et > 0)))[0])
            raise ValueError(f"patient {self.ids[bad]!r}: exit_time must be finite and > 0")
        inf = self.infection_time
        has = ~np.isnan(inf)
        bad = has & ~((inf > 0) & (inf <= et) & np.isfinite(inf))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"patient {self.ids[i]!r}: infection_time must satisfy 0 < infection_time <= exit_time"
            )
        for name, v in self.covariates.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"covariate {name!r} has non-finite values")

    # construction helpers -------------------------------------------------

    @classmethod
    def from_histories(cls, histories: Iterable[PatientHistory], tau=None) -> "Cohort":
        histories = list(histories)
        for h in histories:
            problems = validate(h)
            if problems:
                raise ValueError(f"patient {h.id!r}: " + "; ".join(problems))
        names = sorted({k for h in histories for k in h.covariates})
        for h in histories:
            missing = set(names) - set(h.covariates)
            if missing:
                raise ValueError(f"patient {h.id!r} lacks covariates {sorted(missing)}")
        return cls(
            ids=[h.id for h in histories],
            infection_time=[np.nan if h.infection_time is None else h.infection_time
                            for h in histories],
            exit_time=[h.exit_time for h in histories],
            death=[h.exit_state == "death" for h in histories],
            censored=[bool(h.censored) for h in histories],
            covariates={k: [h.covariates[k] for h in histories] for k in names},
            tau=tau,
        )

    def take(self, index) -> "Cohort":
        index = np.asarray(index)
        return Cohort(
            self.ids[index], self.infection_time[index], self.exit_time[index],
            self.death[index], self.censored[index],
            {k: v[index] for k, v in self.covariates.items()},
        )

    def rescaled(self, factor: float) -> "Cohort":
        """Multiply every time (and tau) by ``factor``."""
        if not factor > 0:
            raise ValueError("factor must be positive")
        return Cohort(self.ids, self.infection_time * factor, self.exit_time * factor,
                      self.death, self.censored, self.covariates, self.tau * factor)

    # row access ------------------------------------------------------------

    def __len__(self):
        return len(self.ids)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def infected(self) -> np.ndarray:
        return ~np.isnan(self.infection_time)

    @property
    def covariate_names(self) -> tuple:
        return tuple(self.covariates)

    def __getitem__(self, i) -> PatientHistory:
        inf = self.infection_time[i]
        return PatientHistory(
            id=self.ids[i],
            infection_time=None if np.isnan(inf) else float(inf),
            exit_time=float(self.exit_time[i]),
            exit_state="death" if self.death[i] else "discharge",
            censored=bool(self.censored[i]),
            covariates={k: float(v[i]) for k, v in self.covariates.items()},
        )

    def __iter__(self) -> Iterator[PatientHistory]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.infection_time, other.infection_time, equal_nan=True)
            and np.array_equal(self.exit_time, other.exit_time)
            and np.array_equal(self.death, other.death)
            and np.array_equal(self.censored, other.censored)
            and self.covariates.keys() == other.covariates.keys()
            and all(np.array_equal(v, other.covariates[k]) for k, v in self.covariates.items())
            and self.tau == other.tau
        )

    __hash__ = None

    def summary(self) -> dict:
        return {
            "n": self.n,
            "infected": int(self.infected.sum()),
            "deaths": int((self.death & ~self.censored).sum()),
            "censored": int(self.censored.sum()),
            "tau": self.tau,
        }

    def __repr__(self):
        s = self.summary()
        return (f"Cohort(n={s['n']}, infected={s['infected']}, deaths={s['deaths']}, "
                f"censored={s['censored']}, tau={s['tau']!r})")


# ---------------------------------------------------------------------------
# fourfold tables


@dataclass(frozen=True)
class FourfoldTable:
    """Ever-exposure by outcome counts (possibly frequency weighted)."""

    n_exp_died: float
    n_exp_surv: float
    n_unexp_died: float
    n_unexp_surv: float

    def __post_init__(self):
        for name in ("n_exp_died", "n_exp_surv", "n_unexp_died", "n_unexp_surv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total(self):
        return self.n_exp_died + self.n_exp_surv + self.n_unexp_died + self.n_unexp_surv

    @property
    def n_exposed(self):
        return self.n_exp_died + self.n_exp_surv

    @property
    def n_unexposed(self):
        return self.n_unexp_died + self.n_unexp_surv

    @property
    def n_died(self):
        return self.n_exp_died + self.n_unexp_died

    def cells(self) -> tuple:
        return (self.n_exp_died, self.n_exp_surv, self.n_unexp_died, self.n_unexp_surv)


def fourfold_table(cohort: Cohort, sample_weight=None) -> FourfoldTable:
    """Cross-classify ever-infection by death at the end of stay.

    Raises
    ------
    ValueError
        If the cohort is empty or contains censored patients, for which the
        end-of-stay outcome is unknown (use the observable PAF at tau instead).
    """
    if len(cohort) == 0:
        raise ValueError("empty cohort: fourfold table has total 0")
    if np.any(cohort.censored):
        first = cohort.ids[np.flatnonzero(cohort.censored)[0]]
        raise ValueError(
            f"patient {first!r} is censored; the crude PAF is undefined under censoring, "
            "estimate the observable PAF at tau instead"
        )
    w = _weights(cohort, sample_weight)
    exp = cohort.infected
    died = cohort.death
    return FourfoldTable(
        n_exp_died=_count(w, exp & died),
        n_exp_surv=_count(w, exp & ~died),
        n_unexp_died=_count(w, ~exp & died),
        n_unexp_surv=_count(w, ~exp & ~died),
    )


def _weights(cohort, sample_weight):
    if sample_weight is None:
        return None
    w = np.asarray(sample_weight, dtype=float)
    if w.shape != (len(cohort),):
        raise ValueError("sample_weight must have one entry per patient")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample_weight must be finite and >= 0")
    return w


def _count(w, mask):
    if w is None:
        return int(np.count_nonzero(mask))
    return float(w[mask].sum())


# ---------------------------------------------------------------------------
# landmarks


@dataclass(frozen=True)
class LandmarkGrid:
    landmarks: tuple
    window: float

    def __post_init__(self):
        lm = tuple(float(x) for x in self.landmarks)
        object.__setattr__(self, "landmarks", lm)
        if not lm:
            raise ValueError("landmark grid is empty")
        if any(b <= a for a, b in zip(lm, lm[1:])):
            raise ValueError("landmarks must be strictly increasing")
        if lm[0] < 0:
            raise ValueError("landmarks must be >= 0")
        if not self.window > 0:
            raise ValueError("window must be positive")

    @classmethod
    def from_spec(cls, spec: str, window: float) -> "LandmarkGrid":
        """Parse ``"A:B:STEP"`` (inclusive of B when it lies on the grid)."""
        try:
            start, stop, step = (float(x) for x in spec.split(":"))
        except ValueError:
            raise ValueError(f"landmark spec must look like A:B:STEP, got {spec!r}") from None
        if step <= 0 or stop < start:
            raise ValueError(f"invalid landmark spec {spec!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return cls(tuple(start + i * step for i in range(count)), window)

    def __len__(self):
        return len(self.landmarks)


class LandmarkRow(NamedTuple):
    id: str
    at_risk: bool
    exposure: int
    outcome: int
    covariates: dict


@dataclass(frozen=True)
class LandmarkData:
    """Column-wise landmark dataset: patients still at risk at ``landmark``."""

    landmark: float
    window: float
    ids: np.ndarray
    exposure: np.ndarray
    outcome: np.ndarray
    covariates: dict
    weight: np.ndarray

    def __len__(self):
        return len(self.ids)

    def rows(self) -> list:
        return [
            LandmarkRow(self.ids[i], True, int(self.exposure[i]), int(self.outcome[i]),
                        {k: float(v[i]) for k, v in self.covariates.items()})
            for i in range(len(self))
        ]

    def table(self) -> FourfoldTable:
        e = self.exposure.astype(bool)
        d = self.outcome.astype(bool)
        w = self.weight
        return FourfoldTable(
            float(w[e & d].sum()), float(w[e & ~d].sum()),
            float(w[~e & d].sum()), float(w[~e & ~d].sum()),
        )


def landmark_dataset(cohort: Cohort, landmark: float, window: float,
                     sample_weight=None) -> LandmarkData:
    """Build the landmark dataset at ``landmark`` with outcome window ``window``.

    Patients with ``exit_time > landmark`` are kept. Exposure is infection at or
    before the landmark; the outcome is death within ``(landmark, landmark + window]``.
    """
    if landmark < 0:
        raise ValueError("landmark must be >= 0")
    if not window > 0:
        raise ValueError("window must be positive")
    w = _weights(cohort, sample_weight)
    keep = cohort.exit_time > landmark
    end = landmark + window
    in_window = keep & (cohort.exit_time <= end)
    bad = in_window & cohort.censored
    if np.any(bad):
        pid = cohort.ids[np.flatnonzero(bad)[0]]
        raise ValueError(
            f"patient {pid!r} is censored inside ({landmark}, {end}]; the window outcome is unknown"
        )
    idx = np.flatnonzero(keep)
    inf = cohort.infection_time[idx]
    exposure = (~np.isnan(inf) & (inf <= landmark)).astype(np.int8)
    outcome = (in_window[idx] & cohort.death[idx]).astype(np.int8)
    weight = np.ones(len(idx)) if w is None else w[idx]
    return LandmarkData(
        landmark=float(landmark), window=float(window), ids=cohort.ids[idx],
        exposure=exposure, outcome=outcome,
        covariates={k: v[idx] for k, v in cohort.covariates.items()},
        weight=weight,
    )


# ---------------------------------------------------------------------------
# delimited text format


def _fmt(x: float) -> str:
    return repr(float(x))


def write_cohort(cohort: Cohort, path) -> None:
    """Write ``cohort`` as comma-delimited text with shortest round-trip floats."""
    names = list(cohort.covariate_names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(BASE_COLUMNS) + names)
        for i in range(len(cohort)):
            inf = cohort.infection_time[i]
            writer.writerow(
                [cohort.ids[i], "" if np.isnan(inf) else _fmt(inf), _fmt(cohort.exit_time[i]),
                 "death" if cohort.death[i] else "discharge", "1" if cohort.censored[i] else "0"]
                + [_fmt(cohort.covariates[k][i]) for k in names]
            )


def read_cohort(path, tau=None) -> Cohort:
    """Read a cohort file written by :func:`write_cohort` (or by hand).

    Errors carry the 1-based line number of the offending row.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortFormatError("file is empty, expected a header", line=1) from None
        header = [h.strip() for h in header]
        if tuple(header[:5]) != BASE_COLUMNS:
            raise CohortFormatError(
                f"header must start with {','.join(BASE_COLUMNS)}, got {','.join(header)}", line=1
            )
        cov_names = header[5:]
        if len(set(header)) != len(header):
            raise CohortFormatError("duplicate column names in header", line=1)

        ids, inf, exit_t, death, cens = [], [], [], [], []
        covs = {k: [] for k in cov_names}
        seen = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CohortFormatError(
                    f"expected {len(header)} fields, found {len(row)}", line=lineno)
            pid = row[0].strip()
            if not pid:
                raise CohortFormatError("empty id", line=lineno)
            if pid in seen:
                raise CohortFormatError(
                    f"duplicate id {pid!r} (first seen on line {seen[pid]})", line=lineno)
            seen[pid] = lineno
            try:
                it = None if row[1].strip() == "" else float(row[1])
                et = float(row[2])
                covariates = {k: float(v) for k, v in zip(cov_names, row[5:])}
            except ValueError as exc:
                raise CohortFormatError(f"non-numeric field ({exc})", line=lineno) from None
            state = row[3].strip()
            flag = row[4].strip()
            if flag not in ("0", "1"):
                raise CohortFormatError(f"censored must be 0 or 1, got {flag!r}", line=lineno)
            history = PatientHistory(pid, it, et, state, flag == "1", covariates)
            problems = validate(history)
            if problems:
                raise CohortFormatError("; ".join(problems), line=lineno)
            ids.append(pid)
            inf.append(np.nan if it is None else it)
            exit_t.append(et)
            death.append(state == "death")
            cens.append(flag == "1")
            for k, v in covariates.items():
                covs[k].append(v)
    return Cohort(ids, inf, exit_t, death, cens, covs, tau=tau)
