"""Density fluctuation fields and the Sobolev-type norms used to measure them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pde import basis


@dataclass
class FieldSample:
    """One replica's field values, indexed [time, test function, colour]."""

    replica_id: int
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)


def restrict(profile: np.ndarray, N: int) -> np.ndarray:
    """Subsample a grid function on M points to the N lattice sites (M a multiple of N)."""
    profile = np.asarray(profile, dtype=float)
    M = profile.shape[-1]
    if M == N:
        return profile
    if M % N:
        raise ValueError(f"centering grid of size {M} cannot be restricted to {N} sites")
    return profile[..., :: M // N]


def fluctuation_field(counts, centering, f) -> float:
    """<Y^N, f> = N^{-1/2} sum_x f(x/N) (eta(x) - rho(x/N)).

    ``f`` is either an array of lattice samples or a callable on [0, 1).
    """
    counts = np.asarray(counts, dtype=float)
    N = counts.size
    rho = restrict(np.broadcast_to(np.asarray(centering, dtype=float), (N,)) if np.ndim(centering) == 0
                   else centering, N)
    fx = f(np.arange(N) / N) if callable(f) else np.asarray(f, dtype=float)
    return float(fx @ (counts - rho)) / np.sqrt(N)


def mode_matrix(zs, N: int) -> np.ndarray:
    return np.stack([basis(z, N) for z in zs])


def field_modes(counts, centering, F: np.ndarray) -> np.ndarray:
    """Fields for many test functions at once; rows of F are lattice samples.

    ``counts`` may carry leading axes (e.g. colours).
    """
    counts = np.asarray(counts, dtype=float)
    N = counts.shape[-1]
    return (counts - centering) @ F.T / np.sqrt(N)


def gamma(z) -> np.ndarray:
    """Eigenvalues of I - Laplacian on e_z: 1 + 4 pi^2 z^2."""
    z = np.asarray(z, dtype=float)
    return 1.0 + 4.0 * np.pi**2 * z**2


def h_minus_m_norm(coefficients, m: int, z_max: int = 32) -> float:
    """sqrt(sum_{|z| <= z_max} <F, e_z>^2 gamma_z^{-m}).

    ``coefficients`` maps z -> <F, e_z>, or is an array indexed by z + z_max.
    """
    if isinstance(coefficients, dict):
        items = [(z, c) for z, c in coefficients.items() if abs(z) <= z_max]
    else:
        arr = np.asarray(coefficients, dtype=float)
        half = (arr.size - 1) // 2
        items = [(z, arr[z + half]) for z in range(-half, half + 1) if abs(z) <= z_max]
    if not items:
        return 0.0
    z, c = map(np.asarray, zip(*items))
    return float(np.sqrt(np.sum(c.astype(float) ** 2 * gamma(z) ** (-m))))


def star_norm(f) -> float:
    """(1/N) sum_x f(x) [-Lap_N^{-1} f](x) for a mean-zero lattice function."""
    f = np.asarray(f, dtype=float)
    N = f.size
    if abs(f.sum()) > 1e-10 * N:
        raise ValueError("star norm needs a mean-zero function")
    fh = np.fft.rfft(f)
    lam = 4.0 * N * N * np.sin(np.pi * np.arange(fh.size) / N) ** 2
    uh = np.zeros_like(fh)
    uh[1:] = fh[1:] / lam[1:]
    u = np.fft.irfft(uh, n=N)
    return float(f @ u) / N
