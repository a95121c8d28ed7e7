"""Configurations and exact samplers for the invariant measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .thermo import ThermoTable

PMF_TAIL = 1e-14


@dataclass
class Configuration:
    """Occupation numbers on the discrete circle Z/NZ."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if np.any(self.counts < 0):
            raise ValueError("occupation numbers must be nonnegative")

    @property
    def N(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ColourConfiguration:
    """Per-colour occupation numbers, shape (k, N)."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.atleast_2d(np.asarray(self.counts, dtype=np.int64))
        if np.any(self.counts < 0):
            raise ValueError("occupation numbers must be nonnegative")

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def N(self) -> int:
        return self.counts.shape[1]

    def colour_blind(self) -> Configuration:
        return Configuration(self.counts.sum(axis=0))

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def truncated_pmf(thermo: ThermoTable, phi: float, tail: float = PMF_TAIL) -> np.ndarray:
    """Single-site pmf cut where the remaining mass drops below ``tail``, renormalised."""
    p = thermo.site_pmf(phi)
    remaining = 1.0 - np.cumsum(p)
    cut = int(np.searchsorted(-remaining, -tail)) + 1
    p = p[: max(cut, 1)]
    return p / p.sum()


def site_marginal_pmf(thermo: ThermoTable, k: int, phi: float) -> float:
    """mu_phi(eta(x) = k) = phi^k / (Z(phi) c(k)!)."""
    if k < 0:
        return 0.0
    p = thermo.site_pmf(phi)
    return float(p[k]) if k < p.size else 0.0


def _cdf_rows(thermo: ThermoTable, phis: np.ndarray) -> np.ndarray:
    rows = [np.cumsum(truncated_pmf(thermo, float(phi))) for phi in phis]
    width = max(r.size for r in rows)
    out = np.ones((len(rows), width))
    for i, r in enumerate(rows):
        out[i, : r.size] = r
    return out


class ProductSampler:
    """Inverse-cdf sampler for a product measure with per-site densities.

    The cdf tables are built once; ``draw`` is then vectorised over sites.
    """

    def __init__(self, thermo: ThermoTable, rho_profile):
        rho_profile = np.asarray(rho_profile, dtype=float)
        self.N = rho_profile.size
        uniq, self._index = np.unique(rho_profile, return_inverse=True)
        phis = np.array([thermo.fugacity_of_density(float(r)) for r in uniq])
        self._cdf = _cdf_rows(thermo, phis)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.N)
        cdf = self._cdf[self._index]
        return (u[:, None] >= cdf).sum(axis=1).astype(np.int64)


def sample_grand_canonical(thermo: ThermoTable, N: int, rho: float, rng: np.random.Generator) -> Configuration:
    """N iid sites from the grand canonical marginal at density rho."""
    if rho < 0:
        raise ValueError("density must be nonnegative")
    if rho == 0:
        return Configuration(np.zeros(N, dtype=np.int64))
    return Configuration(ProductSampler(thermo, np.full(N, rho)).draw(rng))


def sample_local_equilibrium(thermo: ThermoTable, rho_profile, rng: np.random.Generator) -> Configuration:
    """Product measure with site x distributed at density rho_profile[x]."""
    return Configuration(ProductSampler(thermo, rho_profile).draw(rng))


def convolution_table(p: np.ndarray, N: int, n_max: int) -> np.ndarray:
    """Q[m, s] proportional to P(sum of m iid sites = s), s <= n_max.

    Rows are renormalised to avoid underflow; only ratios within a row matter
    for conditioning.
    """
    p = np.asarray(p[: n_max + 1], dtype=float)
    if p.size < n_max + 1:
        p = np.concatenate([p, np.zeros(n_max + 1 - p.size)])
    Q = np.zeros((N + 1, n_max + 1))
    Q[0, 0] = 1.0
    for m in range(1, N + 1):
        row = np.convolve(Q[m - 1], p)[: n_max + 1]
        Q[m] = row / row.max()
    return Q


def canonical_site_pmfs(thermo: ThermoTable, N: int, n_total: int, phi: float | None = None):
    """Single-site pmf and convolution table used by :func:`sample_canonical`."""
    if phi is None:
        phi = thermo.fugacity_of_density(n_total / N) if n_total > 0 else 1.0
    lw = np.arange(n_total + 1) * np.log(phi) - thermo._log_factorials(n_total)
    p = np.exp(lw - lw.max())
    return p, convolution_table(p, N, n_total)


class CanonicalSampler:
    """Exact sampler for the canonical ensemble with n_total particles on N sites.

    Sites are filled in order, each from P(eta(x) = j | sites x..N-1 hold s).
    The law does not depend on ``phi``; the default phi(n_total/N) keeps the
    convolution rows well scaled. Tables are built once per sampler.
    """

    def __init__(self, thermo: ThermoTable, N: int, n_total: int, phi: float | None = None):
        if n_total < 0:
            raise ValueError("n_total must be nonnegative")
        self.N = N
        self.n_total = n_total
        if n_total:
            self._p, self._Q = canonical_site_pmfs(thermo, N, n_total, phi)

    def draw(self, rng: np.random.Generator) -> Configuration:
        N, s = self.N, self.n_total
        counts = np.zeros(N, dtype=np.int64)
        if s == 0:
            return Configuration(counts)
        p, Q = self._p, self._Q
        for x in range(N - 1):
            j = np.arange(s + 1)
            w = p[j] * Q[N - x - 1, s - j]
            pick = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
            pick = min(pick, s)
            counts[x] = pick
            s -= pick
        counts[N - 1] = s
        return Configuration(counts)


def sample_canonical(thermo: ThermoTable, N: int, n_total: int, rng: np.random.Generator,
                     phi: float | None = None) -> Configuration:
    """One exact draw from the canonical ensemble (see :class:`CanonicalSampler`)."""
    return CanonicalSampler(thermo, N, n_total, phi).draw(rng)


def canonical_pmf(thermo: ThermoTable, counts, phi: float) -> float:
    """Exact canonical probability of a configuration, computed with fugacity phi."""
    counts = np.asarray(counts)
    n = int(counts.sum())
    N = counts.size
    lw = np.arange(n + 1) * np.log(phi) - thermo._log_factorials(n)
    w = np.exp(lw)
    Q = np.zeros(n + 1)
    Q[0] = 1.0
    for _ in range(N):
        Q = np.convolve(Q, w)[: n + 1]
    return float(np.prod(w[counts]) / Q[n])


def total_pmf(thermo: ThermoTable, N: int, phi: float) -> np.ndarray:
    """Exact law of sum_{x<N} eta(x) under mu_phi (iterated convolution)."""
    p = truncated_pmf(thermo, phi)
    out = np.array([1.0])
    base = p
    m = N
    # binary powering keeps the number of convolutions at O(log N)
    while m:
        if m & 1:
            out = np.convolve(out, base)
        m >>= 1
        if m:
            base = np.convolve(base, base)
    return out


def exact_total_pmf(thermo: ThermoTable, N: int, n: int, phi: float) -> float:
    pmf = total_pmf(thermo, N, phi)
    return float(pmf[n]) if 0 <= n < pmf.size else 0.0


def colour_split(config: Configuration, p_vec, rng: np.random.Generator) -> ColourConfiguration:
    """Give each particle colour i independently with probability p_vec[i]."""
    p_vec = np.asarray(p_vec, dtype=float)
    if np.any(p_vec < 0) or abs(p_vec.sum() - 1.0) > 1e-12:
        raise ValueError("p_vec must be a probability vector")
    split = rng.multinomial(config.counts, p_vec)
    return ColourConfiguration(split.T.copy())
