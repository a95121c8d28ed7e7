"""Equilibrium thermodynamics of the zero-range process.

The grand canonical single-site law has weights phi^k / c(k)!, normalised by
Z(phi). Everything else (density, fugacity, variance, transport
coefficients, colour matrices) follows from series over those weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .rates import RateFunction

MAX_TERMS = 1 << 20


@njit(cache=True)
def hermite_eval(x, h, fv, dv):
    """Cubic Hermite interpolation on the uniform grid j*h with values fv and slopes dv."""
    out = np.empty(x.size)
    last = fv.size - 2
    for n in range(x.size):
        r = x[n] / h
        j = int(r)
        if j > last:
            j = last
        if j < 0:
            j = 0
        s = r - j
        s2 = s * s
        s3 = s2 * s
        out[n] = ((2 * s3 - 3 * s2 + 1) * fv[j] + (s3 - 2 * s2 + s) * h * dv[j]
                  + (-2 * s3 + 3 * s2) * fv[j + 1] + (s3 - s2) * h * dv[j + 1])
    return out


def logsumexp(a: np.ndarray) -> float:
    m = a.max()
    if not np.isfinite(m):
        return m
    return float(m + np.log(np.exp(a - m).sum()))


class SeriesError(RuntimeError):
    """The partition-function series failed to converge (invalid rate)."""


class DensityRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Transport:
    rho: float
    phi: float
    D: float
    S: float
    chi: float
    sigma2: float
    Sprime_rho: float


@dataclass(frozen=True)
class ColourCoefficients:
    k: int
    rho_vec: np.ndarray
    phi_vec: np.ndarray
    D_matrix: np.ndarray
    A_matrix: np.ndarray


class ThermoTable:
    """Series evaluation of Z and its derived quantities for one rate.

    Scalar queries sum the series on demand. Vectorised profile queries
    (``phi_of``, ``dphi_of``) go through a cubic Hermite interpolant of
    rho -> phi built on a fugacity grid, with exact nodal derivatives.
    """

    def __init__(self, rate: RateFunction, phi_max: float = 60.0, series_tol: float = 1e-17,
                 rho_max: float = 12.0, n_nodes: int = 16385):
        self.rate = rate
        self.phi_max = float(phi_max)
        self.series_tol = float(series_tol)
        self.rho_max = float(rho_max)
        self.n_nodes = int(n_nodes)
        self.last_truncation = 0
        self._logfact = np.zeros(1)

    # -- series ---------------------------------------------------------------

    def _log_factorials(self, K: int) -> np.ndarray:
        """log c(k)! for k = 0..K (cached, grown by doubling)."""
        if self._logfact.size <= K:
            c = self.rate.table(2 * K + 1)
            with np.errstate(divide="ignore"):
                logc = np.log(c[1:])
            self._logfact = np.concatenate(([0.0], np.cumsum(logc)))
        return self._logfact[: K + 1]

    def _truncation(self, phi: float) -> int:
        """Smallest K such that the tail after K is negligible."""
        if phi == 0.0:
            return 1
        K = 32
        logphi = np.log(phi)
        while True:
            if K > MAX_TERMS:
                raise SeriesError(f"series for Z({phi}) did not converge within {MAX_TERMS} terms")
            lf = self._log_factorials(K + 1)
            logw = np.arange(K + 2) * logphi - lf
            total = logsumexp(logw[: K + 1])
            log_r = logw[K + 1] - logw[K]
            # geometric bound on the tail with the current term ratio r < 1
            if log_r < 0 and logw[K] + log_r - np.log1p(-np.exp(log_r)) < np.log(self.series_tol) + total:
                self.last_truncation = K
                return K
            K *= 2

    def log_weights(self, phi: float) -> np.ndarray:
        """log(phi^k / c(k)!) for k = 0..K with K the truncation index."""
        if phi < 0:
            raise ValueError("fugacity must be nonnegative")
        K = self._truncation(phi)
        if phi == 0.0:
            out = np.full(K + 1, -np.inf)
            out[0] = 0.0
            return out
        return np.arange(K + 1) * np.log(phi) - self._log_factorials(K)

    def site_pmf(self, phi: float) -> np.ndarray:
        lw = self.log_weights(phi)
        return np.exp(lw - logsumexp(lw))

    def partition_function(self, phi: float, order: int = 0) -> float:
        """Z(phi), Z'(phi) or Z''(phi)."""
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        lw = self.log_weights(phi)
        k = np.arange(lw.size, dtype=float)
        if order == 0:
            return float(np.exp(logsumexp(lw)))
        if phi == 0.0:
            return float(np.exp(-self._log_factorials(order)[order]) * (1 if order == 1 else 2))
        fall = k if order == 1 else k * (k - 1)
        with np.errstate(divide="ignore"):
            return float(np.exp(logsumexp(lw + np.log(fall)) - order * np.log(phi)))

    def moments(self, phi: float) -> tuple[float, float, float, float]:
        """Mean, variance, third and fourth central moments of the site law."""
        p = self.site_pmf(phi)
        k = np.arange(p.size, dtype=float)
        mean = float(p @ k)
        d = k - mean
        return mean, float(p @ d**2), float(p @ d**3), float(p @ d**4)

    def central_moments(self, phi: float, orders) -> np.ndarray:
        p = self.site_pmf(phi)
        k = np.arange(p.size, dtype=float)
        d = k - p @ k
        return np.array([p @ d**m for m in orders])

    # -- density <-> fugacity -----------------------------------------------

    def density_of_fugacity(self, phi: float) -> float:
        if phi == 0.0:
            return 0.0
        return self.moments(phi)[0]

    def fugacity_of_density(self, rho: float) -> float:
        if rho < 0:
            raise ValueError("density must be nonnegative")
        if rho == 0.0:
            return 0.0
        lo, hi = 0.0, 1e-3
        while True:
            try:
                if self.density_of_fugacity(hi) >= rho:
                    break
                lo, hi = hi, 2.0 * hi
            except SeriesError:
                # past the radius of convergence: shrink toward the last good point
                hi = 0.5 * (lo + hi)
                if hi - lo < 1e-14 * hi:
                    raise DensityRangeError(f"density {rho} is not attained below the radius of convergence")
            if hi > self.phi_max:
                raise DensityRangeError(f"density {rho} needs fugacity above phi_max={self.phi_max}")
        return brentq(lambda p: self.density_of_fugacity(p) - rho, lo, hi,
                      xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)

    def transport_coefficients(self, rho: float) -> Transport:
        """D = phi', S = phi/rho, chi = phi/phi' and sigma^2 at density rho."""
        if rho < 0:
            raise ValueError("density must be nonnegative")
        if rho == 0.0:
            c1 = float(self.rate(1))
            return Transport(0.0, 0.0, c1, c1, 0.0, 0.0, 0.0)
        phi = self.fugacity_of_density(rho)
        sigma2 = self.moments(phi)[1]
        D = phi / sigma2
        S = phi / rho
        return Transport(rho, phi, D, S, sigma2, sigma2, D - S)

    def colour_coefficients(self, rho_vec) -> ColourCoefficients:
        rho_vec = np.asarray(rho_vec, dtype=float)
        if np.any(rho_vec < 0):
            raise ValueError("colour densities must be nonnegative")
        rho = float(rho_vec.sum())
        if rho <= 0:
            raise ValueError("total density must be positive")
        tc = self.transport_coefficients(rho)
        share = rho_vec / rho
        k = rho_vec.size
        D_matrix = tc.S * np.eye(k) + (tc.D - tc.S) * np.outer(share, np.ones(k))
        A_matrix = np.diag(tc.chi * tc.D / rho * rho_vec)
        return ColourCoefficients(k, rho_vec, share * tc.phi, D_matrix, A_matrix)

    def moment_ratios(self, rho: float, kmax: int = 4) -> np.ndarray:
        """m_{2k} / sigma^{2k} for k = 1..kmax (diagnostic, bounded in rho)."""
        phi = self.fugacity_of_density(rho)
        m = self.central_moments(phi, [2 * j for j in range(1, kmax + 1)])
        return m / m[0] ** np.arange(1, kmax + 1)

    # -- vectorised profile evaluation ----------------------------------------

    @cached_property
    def _grid(self):
        phi_top = self.fugacity_of_density(self.rho_max)
        phis = np.linspace(0.0, phi_top, self.n_nodes)
        K = self._truncation(phi_top)
        lf = self._log_factorials(K)
        k = np.arange(K + 1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logw = np.outer(np.log(phis), k) - lf
        logw[0] = -np.inf
        logw[0, 0] = 0.0
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        rho = w @ k
        d = k[None, :] - rho[:, None]
        var = np.einsum("ij,ij->i", w, d**2)
        k3 = np.einsum("ij,ij->i", w, d**3)
        dphi = np.empty_like(phis)
        dphi[0] = float(self.rate(1))
        dphi[1:] = phis[1:] / var[1:]
        # dD/drho = D (sigma^2 - kappa_3) / sigma^4, from d kappa_n / d phi = kappa_{n+1} / phi
        ddphi = np.empty_like(phis)
        ddphi[1:] = dphi[1:] * (var[1:] - k3[1:]) / var[1:] ** 2
        ddphi[0] = 2 * ddphi[1] - ddphi[2]
        return rho, phis, dphi, ddphi

    @cached_property
    def tables(self) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
        """(h, phi, D, D') on the uniform density grid j*h, j = 0..n_nodes-1."""
        rho, phis, dphi, ddphi = self._grid
        phi_spline = CubicHermiteSpline(rho, phis, dphi)
        d_spline = CubicHermiteSpline(rho, dphi, ddphi)
        nodes = np.linspace(0.0, self.rho_max, self.n_nodes)
        return (float(nodes[1]), phi_spline(nodes), d_spline(nodes), d_spline(nodes, 1))

    def _check_range(self, rho: np.ndarray) -> None:
        if np.any(rho < -1e-12) or np.any(rho > self.rho_max):
            raise DensityRangeError(f"profile leaves [0, {self.rho_max}]")

    def phi_of(self, rho) -> np.ndarray:
        """phi(rho) evaluated elementwise."""
        rho = np.asarray(rho, dtype=float)
        self._check_range(rho)
        h, fv, dv, _ = self.tables
        flat = np.maximum(rho, 0.0).ravel()
        return hermite_eval(flat, h, fv, dv).reshape(rho.shape)

    def dphi_of(self, rho) -> np.ndarray:
        """D(rho) = phi'(rho) evaluated elementwise."""
        rho = np.asarray(rho, dtype=float)
        self._check_range(rho)
        h, _, dv, ddv = self.tables
        flat = np.maximum(rho, 0.0).ravel()
        return hermite_eval(flat, h, dv, ddv).reshape(rho.shape)

    def self_diffusion_of(self, rho) -> np.ndarray:
        """S(rho) = phi(rho)/rho elementwise, with S(0) = c(1)."""
        rho = np.asarray(rho, dtype=float)
        phi = self.phi_of(rho)
        safe = rho > 1e-12
        return np.where(safe, phi / np.where(safe, rho, 1.0), float(self.rate(1)))

    def sigma2_of(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        return self.phi_of(rho) / self.dphi_of(rho)

    def table_rows(self, rhos) -> list[Transport]:
        return [self.transport_coefficients(float(r)) for r in rhos]
