"""Cause-specific hazard functions for the extended illness-death model.

Two families are supported: constant hazards and Weibull hazards with
``alpha(t) = k * lam * (lam * t) ** (k - 1)``. All evaluators accept scalars
or numpy arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "HazardSpec",
    "HazardSet",
    "Constant",
    "Weibull",
    "TRANSITIONS",
    "hazard_at",
    "cumulative_hazard",
    "invert_total_cumulative",
]

TRANSITIONS = ("a01", "a02", "a03", "a14", "a15")

_BISECTION_ATOL = 1e-10
# widths beyond this mean the total hazard is (numerically) zero
_MAX_BRACKET = 1e12


@dataclass(frozen=True)
class HazardSpec:
    """A constant or Weibull cause-specific hazard.

    For ``family="constant"`` only ``rate`` is used; for ``family="weibull"``
    ``shape`` (k) and ``scale`` (lambda, per unit time) are used.
    """

    family: str
    rate: float = 0.0
    shape: float = 1.0
    scale: float = 0.0

    def __post_init__(self):
        if self.family == "constant":
            if not np.isfinite(self.rate) or self.rate < 0:
                raise ValueError(f"constant rate must be finite and >= 0, got {self.rate}")
        elif self.family == "weibull":
            if not (self.shape > 0 and np.isfinite(self.shape)):
                raise ValueError(f"weibull shape must be > 0, got {self.shape}")
            if not (self.scale > 0 and np.isfinite(self.scale)):
                raise ValueError(f"weibull scale must be > 0, got {self.scale}")
        else:
            raise ValueError(f"unknown hazard family {self.family!r}")

    @property
    def is_constant(self) -> bool:
        """True when the hazard does not depend on time."""
        return self.family == "constant" or self.shape == 1.0

    @property
    def constant_rate(self) -> float:
        return self.rate if self.family == "constant" else self.scale

    def describe(self) -> str:
        if self.family == "constant":
            return f"constant rate={self.rate!r}"
        return f"weibull shape={self.shape!r} scale={self.scale!r}"


def Constant(rate: float) -> HazardSpec:
    return HazardSpec("constant", rate=float(rate))


def Weibull(shape: float, scale: float) -> HazardSpec:
    return HazardSpec("weibull", shape=float(shape), scale=float(scale))


@dataclass(frozen=True)
class HazardSet:
    """The five transition hazards 0->1, 0->2, 0->3, 1->4 and 1->5."""

    a01: HazardSpec
    a02: HazardSpec
    a03: HazardSpec
    a14: HazardSpec
    a15: HazardSpec

    def __post_init__(self):
        for name in TRANSITIONS:
            if not isinstance(getattr(self, name), HazardSpec):
                raise TypeError(f"{name} must be a HazardSpec")

    @classmethod
    def from_mapping(cls, mapping) -> "HazardSet":
        keys = set(mapping)
        if keys != set(TRANSITIONS):
            raise ValueError(
                f"hazard set needs exactly {TRANSITIONS}, got {sorted(keys)}"
            )
        return cls(**{k: mapping[k] for k in TRANSITIONS})

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in TRANSITIONS}

    @property
    def from_initial(self) -> tuple:
        return (self.a01, self.a02, self.a03)

    @property
    def from_exposed(self) -> tuple:
        return (self.a14, self.a15)


def hazard_at(spec: HazardSpec, t):
    """Evaluate the hazard rate at time(s) ``t``.

    Weibull hazards require ``t > 0`` since shapes below one diverge at the
    origin.
    """
    t = np.asarray(t, dtype=float)
    if spec.family == "constant":
        out = np.full(t.shape, spec.rate)
    else:
        if np.any(t <= 0):
            raise ValueError("weibull hazard is only defined for t > 0")
        if spec.shape == 1.0:
            out = np.full(t.shape, spec.scale)
        else:
            k, lam = spec.shape, spec.scale
            out = k * lam * (lam * t) ** (k - 1.0)
    return out[()] if out.ndim == 0 else out


def cumulative_hazard(spec: HazardSpec, s, t):
    """Integrated hazard over ``[s, t]`` in closed form."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0):
        raise ValueError("interval start must be >= 0")
    if np.any(s > t):
        raise ValueError("interval start must not exceed its end")
    if spec.is_constant:
        out = spec.constant_rate * (t - s)
    else:
        k, lam = spec.shape, spec.scale
        # (lam t)^k - (lam s)^k written to avoid cancellation on short intervals
        short = (s > 0) & (t - s < s)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            rel = k * np.log1p((t - s) / s)
            out = np.where(short, (lam * s) ** k * np.expm1(rel), (lam * t) ** k - (lam * s) ** k)
    out = np.asarray(out, dtype=float)
    return out[()] if out.ndim == 0 else out


def _total_cumulative(specs, s, t):
    total = np.zeros(np.broadcast(s, t).shape)
    for spec in specs:
        total = total + cumulative_hazard(spec, s, t)
    return total


def invert_total_cumulative(specs: Sequence[HazardSpec], s, u):
    """Solve ``sum_j Lambda_j(s, t) = u`` for ``t >= s``.

    Vectorised bisection over broadcast ``s`` and ``u``. The returned ``t`` is
    within 1e-10 of the root and overshoots ``u`` by at most 1e-10. Entries whose total hazard can never reach ``u`` (all rates zero)
    come back as ``inf``.
    """
    specs = tuple(specs)
    if not specs:
        raise ValueError("at least one hazard spec is required")
    s_arr, u_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(u, dtype=float))
    if np.any(u_arr <= 0):
        raise ValueError("u must be positive")
    if np.any(s_arr < 0):
        raise ValueError("s must be >= 0")
    s_arr = s_arr.astype(float).ravel()
    u_arr = u_arr.astype(float).ravel()

    lo = s_arr.copy()
    width = np.ones_like(s_arr)
    hi = s_arr + width
    unbounded = np.zeros(s_arr.shape, dtype=bool)
    short = _total_cumulative(specs, s_arr, hi) < u_arr
    while np.any(short):
        lo = np.where(short, hi, lo)
        width = np.where(short, width * 2.0, width)
        hi = np.where(short, s_arr + width, hi)
        too_wide = short & (width > _MAX_BRACKET)
        unbounded |= too_wide
        short = short & ~too_wide
        short[short] = _total_cumulative(specs, s_arr[short], hi[short]) < u_arr[short]

    # the bracket must be narrow in t and, where the hazard is steep (shape < 1
    # near the origin), tight in cumulative hazard as well
    active = ~unbounded
    excess = np.full(s_arr.shape, np.inf)
    excess[active] = _total_cumulative(specs, s_arr[active], hi[active]) - u_arr[active]
    while True:
        gap = hi - lo
        active &= (gap > _BISECTION_ATOL) | (excess > _BISECTION_ATOL)
        if not np.any(active):
            break
        mid = lo[active] + 0.5 * gap[active]
        # stop where the float grid cannot split the bracket any further
        stuck = (mid <= lo[active]) | (mid >= hi[active])
        diff = _total_cumulative(specs, s_arr[active], mid) - u_arr[active]
        below = diff < 0
        idx = np.flatnonzero(active)
        lo[idx[below & ~stuck]] = mid[below & ~stuck]
        up = ~below & ~stuck
        hi[idx[up]] = mid[up]
        excess[idx[up]] = diff[up]
        active[idx[stuck]] = False

    out = np.where(unbounded, np.inf, hi)
    out = out.reshape(np.broadcast(np.asarray(s), np.asarray(u)).shape)
    return out[()] if out.ndim == 0 else out
