"""Hermite polynomials and the lattice Edgeworth expansion for site totals."""
from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np

from .measures import truncated_pmf
from .thermo import ThermoTable

MAX_ORDER = 8
SQRT_2PI = np.sqrt(2.0 * np.pi)


def hermite(m: int, x):
    """Probabilists' Hermite polynomial He_m via He_{m+1} = x He_m - m He_{m-1}."""
    if m < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x
    if m == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for j in range(1, m):
        h_prev, h = h, x * h - j * h_prev
    return h if h.ndim else float(h)


def normal_density(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


@lru_cache(maxsize=None)
def _partitions(j: int) -> tuple[tuple[int, ...], ...]:
    """All (k_1..k_j) >= 0 with k_1 + 2 k_2 + ... + j k_j = j."""
    out = []

    def rec(m, remaining, acc):
        if m > j:
            if remaining == 0:
                out.append(tuple(acc))
            return
        for k in range(remaining // m + 1):
            rec(m + 1, remaining - m * k, acc + [k])

    rec(1, j, [])
    return tuple(out)


def cumulants(pmf: np.ndarray, order: int) -> np.ndarray:
    """kappa_1..kappa_order of a pmf on {0, 1, ...} from its raw moments."""
    k = np.arange(pmf.size, dtype=float)
    mean = pmf @ k
    d = k - mean
    mu = np.array([pmf @ d**n for n in range(order + 1)])
    mu[1] = 0.0
    kappa = np.zeros(order + 1)
    kappa[1] = mean
    # moment-cumulant recursion on central moments (kappa_1 enters as 0)
    kc = np.zeros(order + 1)
    for n in range(2, order + 1):
        s = mu[n]
        for m in range(2, n - 1):
            s -= factorial(n - 1) / (factorial(m - 1) * factorial(n - m)) * kc[m] * mu[n - m]
        kc[n] = s
    kappa[2:] = kc[2:]
    return kappa[1:]


def edgeworth_term(j: int, x, kappa: np.ndarray, sigma: float):
    """g_j(x); ``kappa[n-1]`` holds the n-th cumulant."""
    x = np.asarray(x, dtype=float)
    g0 = normal_density(x)
    if j == 0:
        return g0
    total = np.zeros_like(x)
    for ks in _partitions(j):
        coef = 1.0
        for m, km in enumerate(ks, start=1):
            if km:
                lam = kappa[m + 1] / (factorial(m + 2) * sigma ** (m + 2))
                coef *= lam**km / factorial(km)
        if coef:
            total = total + coef * hermite(j + 2 * sum(ks), x)
    return g0 * total


def edgeworth_pmf_approx(thermo: ThermoTable, N: int, n, rho: float, J: int = 2):
    """sum_{j <= J-2} N^{-j/2} g_j(z) / sqrt(N sigma^2), z = (n - N rho) / (sigma sqrt N)."""
    if J < 2 or J > MAX_ORDER:
        raise ValueError(f"J must lie in [2, {MAX_ORDER}]")
    if rho <= 0:
        raise ValueError("density must be positive")
    phi = thermo.fugacity_of_density(rho)
    kappa = cumulants(truncated_pmf(thermo, phi), J)
    sigma = np.sqrt(kappa[1])
    z = (np.asarray(n, dtype=float) - N * rho) / (sigma * np.sqrt(N))
    total = sum(N ** (-j / 2) * edgeworth_term(j, z, kappa, sigma) for j in range(J - 1))
    return total / np.sqrt(N * sigma**2)
