"""Event-history simulation from the extended illness-death model.

Patients start in state 0 (admitted, uninfected) at time 0. From state 0 they
move to 1 (infection), 2 (discharge) or 3 (death); from state 1 to 4
(discharge) or 5 (death). Event times are drawn by inverting the total
cumulative hazard out of the current state, and the cause is chosen with
probability proportional to the cause-specific hazards at the sampled time.
State-1 hazards run on study time (Markov clock).

Randomness comes from counter-based Philox substreams: patient ``i`` of a
stream always consumes counter block ``i``, so a cohort of size ``n`` is a
prefix of every larger cohort drawn with the same seed and stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cohort import Cohort, PatientHistory
from .hazards import Constant, HazardSet, Weibull, hazard_at, invert_total_cumulative

__all__ = [
    "Scenario",
    "RngStream",
    "SCENARIOS",
    "scenario_registry",
    "simulate_patient",
    "simulate_cohort",
    "simulate_histories",
]

_TWO_POW_53 = 2.0 ** -53


@dataclass(frozen=True)
class Scenario:
    id: int
    hazard_set: HazardSet
    label: str
    window: float


def _const(a01, a02, a03, a14, a15):
    return HazardSet(*(Constant(r) for r in (a01, a02, a03, a14, a15)))


def _weib(k, lam):
    return HazardSet(*(Weibull(a, b) for a, b in zip(k, lam)))


_K_A = (1.0, 1.4, 0.9, 1.4, 0.9)
_K_B = (1.0, 0.9, 1.4, 0.9, 1.4)

SCENARIOS = {
    1: Scenario(1, _const(0.005, 0.02, 0.01, 0.02, 0.01), "no effect, low infection hazard", 30.0),
    2: Scenario(2, _const(0.05, 0.02, 0.01, 0.02, 0.01), "no effect, high infection hazard", 30.0),
    3: Scenario(3, _const(0.005, 0.02, 0.01, 0.02, 0.02), "direct effect, low infection hazard", 30.0),
    4: Scenario(4, _const(0.05, 0.02, 0.01, 0.02, 0.02), "direct effect, high infection hazard", 30.0),
    5: Scenario(5, _const(0.005, 0.03, 0.01, 0.02, 0.01), "indirect effect, low infection hazard", 30.0),
    6: Scenario(6, _const(0.05, 0.03, 0.01, 0.02, 0.01), "indirect effect, high infection hazard", 30.0),
    7: Scenario(7, _weib(_K_A, (0.06, 0.08, 0.05, 0.05, 0.05)), "indirect effect, Weibull", 8.0),
    8: Scenario(8, _weib(_K_B, (0.06, 0.08, 0.05, 0.05, 0.05)), "indirect effect, Weibull", 8.0),
    9: Scenario(9, _weib(_K_A, (0.06, 0.05, 0.05, 0.05, 0.08)), "direct effect, Weibull", 8.0),
    10: Scenario(10, _weib(_K_B, (0.06, 0.05, 0.05, 0.05, 0.08)), "direct effect, Weibull", 8.0),
}


def scenario_registry(scenario_id: int) -> Scenario:
    """Return one of the ten built-in simulation scenarios."""
    try:
        return SCENARIOS[int(scenario_id)]
    except (KeyError, ValueError, TypeError):
        raise LookupError(f"unknown scenario {scenario_id!r}; valid ids are 1-10") from None


class RngStream:
    """Reproducible stream of per-patient uniform blocks.

    Each patient index maps to one Philox counter block of four 64-bit words,
    which are turned into uniforms on the open interval (0, 1).
    """

    BLOCK = 4

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = np.random.SeedSequence([self.seed, self.stream]).generate_state(2, np.uint64)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def blocks(self, n: int, start: int = 0) -> np.ndarray:
        """Uniform blocks for patients ``start .. start + n - 1``, shape ``(n, 4)``."""
        bitgen = np.random.Philox(key=self._key)
        if start:
            bitgen.advance(start)
        raw = bitgen.random_raw(n * self.BLOCK).reshape(n, self.BLOCK)
        return ((raw >> np.uint64(11)).astype(float) + 0.5) * _TWO_POW_53

    def block(self, index: int) -> np.ndarray:
        return self.blocks(1, start=index)[0]


def _choose(specs, t, u):
    """Pick a cause index per row with probability proportional to hazards at t."""
    rates = np.column_stack([np.broadcast_to(hazard_at(s, t), t.shape) for s in specs])
    cum = np.cumsum(rates, axis=1)
    total = cum[:, -1:]
    return np.minimum((u[:, None] * total >= cum).sum(axis=1), len(specs) - 1)


def simulate_histories(hazard_set: HazardSet, uniforms: np.ndarray) -> dict:
    """Vectorised sampler driven by an ``(n, 4)`` array of uniforms.

    Columns are: first waiting time, first cause, second waiting time, second
    cause. Returns ``infection_time`` (nan when uninfected), ``exit_time`` and
    ``death`` arrays.
    """
    uniforms = np.atleast_2d(np.asarray(uniforms, dtype=float))
    n = uniforms.shape[0]
    first = invert_total_cumulative(hazard_set.from_initial, np.zeros(n), -np.log1p(-uniforms[:, 0]))
    first = np.atleast_1d(first)
    if np.any(~np.isfinite(first)):
        raise ValueError("all hazards out of the initial state are zero; nobody ever leaves")
    cause = _choose(hazard_set.from_initial, first, uniforms[:, 1])
    infected = cause == 0

    infection_time = np.full(n, np.nan)
    exit_time = first.copy()
    death = cause == 2
    if np.any(infected):
        start = first[infected]
        second = np.atleast_1d(invert_total_cumulative(
            hazard_set.from_exposed, start, -np.log1p(-uniforms[infected, 2])))
        if np.any(~np.isfinite(second)):
            raise ValueError("all hazards out of the infected state are zero; nobody ever leaves")
        # a bracket collapsing onto its start would put infection and exit at the same time
        second = np.maximum(second, np.nextafter(start, np.inf))
        cause2 = _choose(hazard_set.from_exposed, second, uniforms[infected, 3])
        infection_time[infected] = start
        exit_time[infected] = second
        death[infected] = cause2 == 1
    return {"infection_time": infection_time, "exit_time": exit_time, "death": death}


def simulate_patient(hazard_set: HazardSet, rng: RngStream, index: int = 0,
                     patient_id: Optional[str] = None) -> PatientHistory:
    """Simulate the history of patient ``index`` of the stream ``rng``."""
    draws = simulate_histories(hazard_set, rng.block(index)[None, :])
    inf = draws["infection_time"][0]
    return PatientHistory(
        id=str(index + 1) if patient_id is None else patient_id,
        infection_time=None if np.isnan(inf) else float(inf),
        exit_time=float(draws["exit_time"][0]),
        exit_state="death" if draws["death"][0] else "discharge",
        censored=False,
    )


def simulate_cohort(scenario, n: int, seed: int, stream: int = 0) -> Cohort:
    """Simulate ``n`` independent uncensored patients.

    ``scenario`` may be a :class:`Scenario`, a :class:`HazardSet` or a scenario
    id. Patient ``i`` (id ``str(i + 1)``) always uses block ``i`` of the
    ``(seed, stream)`` substream.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(scenario, (int, np.integer)):
        scenario = scenario_registry(scenario)
    hazard_set = scenario.hazard_set if isinstance(scenario, Scenario) else scenario
    uniforms = RngStream(seed, stream).blocks(n)
    draws = simulate_histories(hazard_set, uniforms)
    return Cohort(
        ids=[str(i + 1) for i in range(n)],
        infection_time=draws["infection_time"],
        exit_time=draws["exit_time"],
        death=draws["death"],
    )
