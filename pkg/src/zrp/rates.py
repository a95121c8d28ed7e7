"""Jump-rate functions c(k) for the zero-range process and assumption checks.

Every built-in family is stored as an explicit head table c(0..K) plus a tail
rule for k > K. Linear tails keep (LG) true by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

FAMILIES = ("linear", "e1_piecewise", "e2_parity", "custom_table")


class RateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RateFunction:
    """Occupancy-dependent jump rate with c(0) = 0.

    ``head`` holds c(0), ..., c(K). Beyond K the tail is either linear with
    slope ``tail_slope`` or, for ``e2_parity``, theta1*k / theta2*k by parity.
    """

    family: str
    params: Mapping[str, Any]
    head: np.ndarray
    tail: str = "linear"
    tail_slope: float = 0.0
    theta_odd: float = 0.0
    theta_even: float = 0.0
    k0: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, k):
        k = np.asarray(k)
        if np.any(k < 0):
            raise RateError("occupancy must be nonnegative")
        K = self.head.size - 1
        inside = np.minimum(k, K)
        out = self.head[inside].astype(float)
        beyond = k > K
        if np.any(beyond):
            if self.tail == "linear":
                tail = self.head[K] + self.tail_slope * (k - K)
            else:
                tail = np.where(k % 2 == 1, self.theta_odd * k, self.theta_even * k)
            out = np.where(beyond, tail, out)
        return out if out.ndim else float(out)

    @property
    def table_size(self) -> int:
        return self.head.size

    def table(self, k_max: int) -> np.ndarray:
        """c(0..k_max) as a float array (cached)."""
        cached = self._cache.get("table")
        if cached is None or cached.size <= k_max:
            cached = np.asarray(self(np.arange(max(k_max, 2 * self.head.size) + 1)), dtype=float)
            self._cache["table"] = cached
        return cached[: k_max + 1]

    def eventually_linear(self) -> bool:
        return self.tail == "linear" or self.theta_odd == self.theta_even

    def max_ratio(self) -> float:
        """sup_k c(k)/k over all k >= 1 (finite under (LG))."""
        K = self.head.size - 1
        ks = np.arange(1, K + 1)
        head = float(np.max(self.head[1:] / ks)) if K >= 1 else 0.0
        if self.tail == "linear":
            return max(head, self.tail_slope, float(self(K + 1)) / (K + 1))
        return max(head, self.theta_odd, self.theta_even)

    def to_params(self) -> dict:
        return {"family": self.family, **dict(self.params)}

    def __repr__(self) -> str:
        return f"RateFunction({self.family}, {dict(self.params)})"


def builtin_rate(family: str, params: Mapping[str, Any] | None = None, k0: int | None = None) -> RateFunction:
    """Construct one of the built-in rate families.

    linear:        theta                       c(k) = theta*k
    e1_piecewise:  theta, K0, head=[c(1)..c(K0-1)]
                                               c(k) = theta*k for k >= K0
    e2_parity:     theta1, theta2, K0, head (optional, default theta1*k below K0)
    custom_table:  table=[c(0), c(1), ...]     linear extension past the table
    """
    params = dict(params or {})
    if family == "linear":
        theta = float(params.get("theta", 1.0))
        if theta <= 0:
            raise RateError("theta must be positive")
        head = np.array([0.0, theta])
        rate = RateFunction(family, {"theta": theta}, head, "linear", theta)
    elif family == "e1_piecewise":
        theta = float(params.get("theta", 1.0))
        K0 = int(params.get("K0", 1))
        lead = [float(v) for v in params.get("head", [])]
        if theta <= 0 or K0 < 1:
            raise RateError("e1_piecewise needs theta > 0 and K0 >= 1")
        if len(lead) != K0 - 1:
            raise RateError(f"e1_piecewise head must list c(1)..c(K0-1): expected {K0 - 1} values")
        if any(v < 0 for v in lead):
            raise RateError("rates must be nonnegative")
        head = np.array([0.0, *lead, theta * K0])
        rate = RateFunction(family, {"theta": theta, "K0": K0, "head": lead}, head, "linear", theta)
    elif family == "e2_parity":
        t1 = float(params.get("theta1", 1.0))
        t2 = float(params.get("theta2", 1.0))
        K0 = int(params.get("K0", 1))
        if t1 <= 0 or t2 <= 0 or K0 < 1:
            raise RateError("e2_parity needs theta1, theta2 > 0 and K0 >= 1")
        lead = [float(v) for v in params.get("head", [t1 * k for k in range(1, K0)])]
        if len(lead) != K0 - 1 or any(v < 0 for v in lead):
            raise RateError("e2_parity head must list K0-1 nonnegative values")
        head = np.array([0.0, *lead])
        rate = RateFunction(
            family, {"theta1": t1, "theta2": t2, "K0": K0, "head": lead}, head,
            "parity", theta_odd=t1, theta_even=t2,
        )
    elif family == "custom_table":
        table = np.asarray(params.get("table", []), dtype=float)
        if table.size < 2:
            raise RateError("custom_table needs at least c(0) and c(1)")
        if table[0] != 0.0:
            raise RateError("c(0) must be 0")
        if np.any(table < 0):
            raise RateError("rates must be nonnegative")
        slope = float(table[-1] - table[-2])
        if slope < 0:
            raise RateError("linear extension would turn negative; last increment must be >= 0")
        rate = RateFunction(family, {"table": table.tolist()}, table, "linear", slope)
    else:
        raise RateError(f"unknown rate family {family!r}; expected one of {FAMILIES}")
    if k0 is None:
        k0 = int(params.get("k0", 1))
    if k0 < 1:
        raise RateError("k0 must be >= 1")
    object.__setattr__(rate, "k0", k0)
    return rate


def rate_from_params(params: Mapping[str, Any]) -> RateFunction:
    params = dict(params)
    family = params.pop("family")
    return builtin_rate(family, params)


@dataclass(frozen=True)
class AssumptionReport:
    k_max: int
    k0: int
    a1: float
    a2: float
    lg_ok: bool
    m_ok: bool
    linear_bounds: tuple[float, float]
    conclusive: bool


def validate_assumptions(rate: RateFunction, k_max: int) -> AssumptionReport:
    """Finite-range certificate for (LG) and (M) over k in [0, k_max].

    ``conclusive`` is set when the rate is eventually linear and k_max reaches
    past the head table, in which case the finite scan covers every increment
    pattern the rate can produce.
    """
    k0 = rate.k0
    if k_max < k0 + 2:
        raise RateError(f"k_max must be at least k0 + 2 = {k0 + 2}")
    c = np.asarray(rate(np.arange(k_max + 1)), dtype=float)
    if c[0] != 0.0:
        raise RateError("c(0) must be 0")
    if np.any(c < 0):
        raise RateError("negative rate in tested range")
    a1 = float(np.max(np.abs(np.diff(c))))
    a2 = float(np.min(c[k0:] - c[:-k0]))
    ks = np.arange(1, k_max + 1)
    ratio = c[1:] / ks
    bounds = (float(ratio.min()), float(ratio.max()))
    past_head = k_max > rate.table_size + k0
    lg_ok = bool(np.isfinite(a1) and rate.eventually_linear())
    return AssumptionReport(
        k_max=k_max, k0=k0, a1=a1, a2=a2, lg_ok=lg_ok, m_ok=bool(a2 > 0),
        linear_bounds=bounds, conclusive=bool(past_head and rate.eventually_linear()),
    )


def linear_rate(theta: float = 1.0) -> RateFunction:
    return builtin_rate("linear", {"theta": theta})


def e1_rate() -> RateFunction:
    """The acceptance-suite (E1) rate: c(1) = 1.5, c(k) = k for k >= 2."""
    return builtin_rate("e1_piecewise", {"theta": 1.0, "K0": 2, "head": [1.5]})


def queue_rate() -> RateFunction:
    """c(k) = 1{k >= 1}. Violates (M); used only as a closed-form oracle."""
    return builtin_rate("custom_table", {"table": [0.0, 1.0, 1.0]})
