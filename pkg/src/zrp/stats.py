"""Replica statistics: moments with Monte Carlo error bars and goodness of fit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class Moments:
    mean: float
    var: float
    skew: float
    ex_kurt: float
    se_mean: float
    se_var: float
    se_skew: float
    se_kurt: float
    R: int


@dataclass(frozen=True)
class Verdict:
    passed: bool
    z_score: float
    observed: float
    predicted: float
    se: float


class ReplicaEnsemble:
    """Field samples stacked in replica order, shape (R, ...cell axes)."""

    def __init__(self, values, replica_ids=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 0:
            raise ValueError("need at least one replica axis")
        if replica_ids is not None:
            order = np.argsort(np.asarray(replica_ids), kind="stable")
            values = values[order]
        self.values = values

    @property
    def R(self) -> int:
        return self.values.shape[0]

    def cell(self, *index) -> np.ndarray:
        return self.values[(slice(None),) + tuple(index)]

    def moments(self, *index) -> Moments:
        return estimate_moments(self.cell(*index))

    @classmethod
    def merge(cls, parts) -> "ReplicaEnsemble":
        """Combine (replica_ids, values) partials; the result is in replica order."""
        ids = np.concatenate([np.asarray(i) for i, _ in parts])
        vals = np.concatenate([np.asarray(v, dtype=float) for _, v in parts])
        return cls(vals, ids)


def jackknife_se_var(x: np.ndarray) -> float:
    """Leave-one-out standard error of the unbiased sample variance."""
    R = x.size
    if R < 3:
        return 0.0
    d = x - x.mean()
    # leave-one-out sums of squares by the downdate formula
    v_i = (d @ d - d**2 * R / (R - 1)) / (R - 2)
    return float(np.sqrt((R - 1) / R * np.sum((v_i - v_i.mean()) ** 2)))


def estimate_moments(samples) -> Moments:
    x = np.asarray(samples, dtype=float).ravel()
    R = x.size
    if R < 2:
        raise ValueError("at least two replicas are needed for a variance")
    mean = float(x.mean())
    d = x - mean
    m2 = float(d @ d) / R
    var = m2 * R / (R - 1)
    sd = np.sqrt(m2)
    # spreads at rounding level carry no shape information
    if sd > 8 * np.finfo(float).eps * float(np.max(np.abs(x))):
        z = d / sd
        skew = float(np.mean(z**3))
        ex_kurt = float(np.mean(z**4)) - 3.0
    else:
        skew = ex_kurt = 0.0
    return Moments(
        mean=mean, var=var, skew=skew, ex_kurt=ex_kurt,
        se_mean=float(np.sqrt(var / R)), se_var=jackknife_se_var(x),
        se_skew=float(np.sqrt(6.0 / R)), se_kurt=float(np.sqrt(24.0 / R)), R=R,
    )


def compare_to_prediction(observed: Moments, predicted: float, k_sigma: float = 3.0) -> Verdict:
    """Pass iff |var - predicted| <= k_sigma * se_var."""
    diff = observed.var - predicted
    if observed.se_var > 0:
        z = diff / observed.se_var
    else:
        z = 0.0 if diff == 0 else np.copysign(np.inf, diff)
    return Verdict(bool(abs(diff) <= k_sigma * observed.se_var), float(z),
                   observed.var, float(predicted), observed.se_var)


def pool_cells(counts, expected, min_expected: float = 5.0):
    """Merge neighbouring cells until each expected count reaches the threshold."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    oc, ec = [], []
    co = ce = 0.0
    for o, e in zip(counts, expected):
        co += o
        ce += e
        if ce >= min_expected:
            oc.append(co)
            ec.append(ce)
            co = ce = 0.0
    if ce > 0 or co > 0:
        if ec:
            oc[-1] += co
            ec[-1] += ce
        else:
            oc.append(co)
            ec.append(ce)
    return np.array(oc), np.array(ec)


def chi_square_gof(counts, expected_pmf, min_expected: float = 5.0) -> float:
    """Pearson chi-square p-value of histogram ``counts`` against a pmf.

    Mass of the pmf beyond the histogram is folded into the last cell.
    """
    counts = np.asarray(counts, dtype=float)
    pmf = np.asarray(expected_pmf, dtype=float)
    if counts.size < 2:
        raise ValueError("goodness of fit needs at least two cells")
    size = max(counts.size, pmf.size)
    c = np.zeros(size)
    c[: counts.size] = counts
    p = np.zeros(size)
    p[: pmf.size] = pmf
    p /= p.sum()
    if np.any(c[p == 0] > 0):
        return 0.0
    oc, ec = pool_cells(c, c.sum() * p, min_expected)
    if oc.size < 2:
        raise ValueError("all cells pooled into one; goodness of fit is degenerate")
    stat = float(np.sum((oc - ec) ** 2 / ec))
    return float(sps.chi2.sf(stat, oc.size - 1))
