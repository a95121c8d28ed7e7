"""Discretised hydrodynamic equations and the linear fluctuation operators.

All problems live on the uniform torus grid x_j = j/M. The scalar equation is
d/dt rho_j = 1/2 Lap_M phi(rho)_j and the colour system is
d/dt rho^i_j = 1/2 Lap_M [rho^i S(rho)]_j, whose colour sum is exactly the
scalar right-hand side.

Test-function evolutions P(t, u) f are backward in time: G_t = f and
dG_u/du = -1/2 coef(rho_u) Lap_M G_u for u < t, so that the conditional mean of
<Y_t, f> given time u is <Y_u, P(t, u) f>.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .thermo import ThermoTable

log = logging.getLogger(__name__)

CFL = 0.4
MAX_SNAPSHOTS = 400


class CFLError(RuntimeError):
    pass


class PathError(ValueError):
    pass


def basis(z: int, M: int) -> np.ndarray:
    """e_z sampled at x_j = j/M: 1, sqrt2 cos(2 pi z x) for z > 0, sqrt2 sin(2 pi |z| x) for z < 0."""
    x = np.arange(M) / M
    if z == 0:
        return np.ones(M)
    if z > 0:
        return np.sqrt(2.0) * np.cos(2 * np.pi * z * x)
    return np.sqrt(2.0) * np.sin(2 * np.pi * -z * x)


def fourier_coefficients(F: np.ndarray, z_max: int) -> dict[int, float]:
    """<F, e_z> on the grid (average of F * e_z) for |z| <= z_max."""
    M = F.size
    return {z: float(F @ basis(z, M)) / M for z in range(-z_max, z_max + 1)}


def laplacian(h: np.ndarray) -> np.ndarray:
    """Lap_M h = M^2 (h(x+1) - 2h(x) + h(x-1)) along the last axis."""
    M = h.shape[-1]
    return M * M * (np.roll(h, -1, axis=-1) - 2.0 * h + np.roll(h, 1, axis=-1))


def forward_gradient(h: np.ndarray) -> np.ndarray:
    M = h.shape[-1]
    return M * (np.roll(h, -1, axis=-1) - h)


def edge_average(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.roll(a, -1, axis=-1))


def lattice_eigenvalue(z: int, M: int) -> float:
    """-Lap_M e_z = lambda e_z with lambda = 4 M^2 sin^2(pi z / M)."""
    return 4.0 * M * M * np.sin(np.pi * z / M) ** 2


@dataclass
class DensityProfile:
    """Grid density, shape (k, M); k = 1 for the colour-blind equation."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    @property
    def M(self) -> int:
        return self.values.shape[1]

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def total(self) -> np.ndarray:
        return self.values.sum(axis=0)


@dataclass
class DensityPath:
    """Stored solution snapshots with linear interpolation in time."""

    times: np.ndarray
    values: np.ndarray  # (T, k, M)
    clip_events: int = 0
    _coef: dict = field(default_factory=dict, repr=False)

    def at(self, t: float) -> np.ndarray:
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise PathError(f"time {t} outside stored path [{self.times[0]}, {self.times[-1]}]")
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        t0, t1 = self.times[i], self.times[i + 1]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        w = min(max(w, 0.0), 1.0)
        return (1 - w) * self.values[i] + w * self.values[i + 1]

    def total_at(self, t: float) -> np.ndarray:
        return self.at(t).sum(axis=0)

    def profile(self, t: float) -> DensityProfile:
        return DensityProfile(self.at(t), t)

    @property
    def final(self) -> DensityProfile:
        return DensityProfile(self.values[-1], float(self.times[-1]))

    @property
    def M(self) -> int:
        return self.values.shape[2]

    def coefficient_path(self, key, fn) -> np.ndarray:
        """fn applied to every stored snapshot, cached under ``key``."""
        if key not in self._coef:
            self._coef[key] = np.stack([fn(v) for v in self.values])
        return self._coef[key]

    def interp_stored(self, arr: np.ndarray, t: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        t0, t1 = self.times[i], self.times[i + 1]
        w = 0.0 if t1 == t0 else min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1 - w) * arr[i] + w * arr[i + 1]


def constant_path(rho_vec, M: int, t_end: float) -> DensityPath:
    """Equilibrium path: constant densities per colour on [0, t_end]."""
    rho_vec = np.atleast_1d(np.asarray(rho_vec, dtype=float))
    v = np.repeat(rho_vec[:, None], M, axis=1)
    return DensityPath(np.array([0.0, max(t_end, 1e-300)]), np.stack([v, v]))


@njit(cache=True)
def _rhs(rho, out, h, fv, dv, colour, c1):
    k, M = rho.shape
    flux = np.empty((k, M))
    for j in range(M):
        tot = 0.0
        for i in range(k):
            tot += rho[i, j]
        r = tot / h
        m = min(max(int(r), 0), fv.size - 2)
        s = r - m
        s2 = s * s
        s3 = s2 * s
        phi = ((2 * s3 - 3 * s2 + 1) * fv[m] + (s3 - 2 * s2 + s) * h * dv[m]
               + (-2 * s3 + 3 * s2) * fv[m + 1] + (s3 - s2) * h * dv[m + 1])
        if colour:
            S = phi / tot if tot > 1e-12 else c1
            for i in range(k):
                flux[i, j] = rho[i, j] * S
        else:
            flux[0, j] = phi
    scale = 0.5 * M * M
    for i in range(k):
        for j in range(M):
            jp = j + 1 if j + 1 < M else 0
            jm = j - 1 if j > 0 else M - 1
            out[i, j] = scale * (flux[i, jp] - 2.0 * flux[i, j] + flux[i, jm])


@njit(cache=True)
def _hydro_steps(rho, nsteps, dt, h, fv, dv, colour, c1):
    """RK4 steps in place; returns the number of clipped negative values."""
    k1 = np.empty_like(rho)
    k2 = np.empty_like(rho)
    k3 = np.empty_like(rho)
    k4 = np.empty_like(rho)
    clips = 0
    for _ in range(nsteps):
        _rhs(rho, k1, h, fv, dv, colour, c1)
        _rhs(rho + 0.5 * dt * k1, k2, h, fv, dv, colour, c1)
        _rhs(rho + 0.5 * dt * k2, k3, h, fv, dv, colour, c1)
        _rhs(rho + dt * k3, k4, h, fv, dv, colour, c1)
        rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        for i in range(rho.shape[0]):
            for j in range(rho.shape[1]):
                if rho[i, j] < 0.0:
                    rho[i, j] = 0.0
                    clips += 1
    return clips


def _max_speed(thermo: ThermoTable, rho_total: np.ndarray, colour: bool) -> float:
    lo, hi = float(rho_total.min()), float(rho_total.max())
    grid = np.linspace(max(lo, 0.0), hi, 257)
    speed = float(np.max(thermo.dphi_of(grid)))
    if colour:
        speed = max(speed, float(np.max(thermo.self_diffusion_of(grid))))
    return speed


def solve_hydro(thermo: ThermoTable, rho0, t: float, max_snapshots: int = MAX_SNAPSHOTS) -> DensityPath:
    """Method of lines + RK4 for the scalar or colour hydrodynamic equation.

    ``rho0`` is an (M,) array (scalar) or (k, M) array (colours). Returns the
    stored path; ``path.final`` is the profile at time t.
    """
    rho = np.atleast_2d(np.array(rho0, dtype=float))
    if np.any(rho < 0):
        raise ValueError("initial density must be nonnegative")
    if t < 0:
        raise ValueError("t must be nonnegative")
    k, M = rho.shape
    colour = k > 1
    thermo._check_range(rho.sum(axis=0))
    speed = _max_speed(thermo, rho.sum(axis=0), colour)
    dt_max = CFL / (M * M * max(speed, 1e-300))
    steps = max(1, int(np.ceil(t / dt_max))) if t > 0 else 0
    dt = t / steps if steps else 0.0
    stride = max(1, int(np.ceil(steps / max_snapshots))) if steps else 1
    h, fv, dv, _ = thermo.tables
    c1 = float(thermo.rate(1))
    times, snaps = [0.0], [rho.copy()]
    clips = 0
    done = 0
    while done < steps:
        n = min(stride, steps - done)
        clips += _hydro_steps(rho, n, dt, h, fv, dv, colour, c1)
        done += n
        if _max_speed(thermo, rho.sum(axis=0), colour) > 1.25 * speed:
            raise CFLError(f"max diffusivity grew beyond the step-size bound at t={done * dt:.4g}")
        times.append(done * dt)
        snaps.append(rho.copy())
    if clips:
        log.warning("solve_hydro clipped %d negative values", clips)
    if len(times) == 1:
        times.append(0.0)
        snaps.append(rho.copy())
    return DensityPath(np.array(times), np.stack(snaps), clip_events=clips)


def heat_solution(a: float, b: float, z: int, t: float, M: int, diffusivity: float = 1.0) -> np.ndarray:
    """Exact solution of d_t rho = 1/2 D rho'' from a + b sin(2 pi z x)."""
    x = np.arange(M) / M
    return a + b * np.exp(-0.5 * diffusivity * (2 * np.pi * z) ** 2 * t) * np.sin(2 * np.pi * z * x)


# -- test-function evolutions -----------------------------------------------------

def _coefficient(thermo: ThermoTable, kind: str):
    if kind == "D":
        return lambda v: thermo.dphi_of(v.sum(axis=0))
    if kind == "S":
        return lambda v: thermo.self_diffusion_of(v.sum(axis=0))
    raise ValueError("kind must be 'D' or 'S'")


@njit(cache=True)
def _lerp(arr, times, u, out):
    i = np.searchsorted(times, u, side="right") - 1
    i = min(max(i, 0), times.size - 2)
    t0 = times[i]
    t1 = times[i + 1]
    w = 0.0
    if t1 > t0:
        w = min(max((u - t0) / (t1 - t0), 0.0), 1.0)
    for j in range(out.size):
        out[j] = (1.0 - w) * arr[i, j] + w * arr[i + 1, j]


@njit(cache=True)
def _lap_scaled(G, coef, out):
    M = G.size
    scale = 0.5 * M * M
    for j in range(M):
        jp = j + 1 if j + 1 < M else 0
        jm = j - 1 if j > 0 else M - 1
        out[j] = scale * coef[j] * (G[jp] - 2.0 * G[j] + G[jm])


@njit(cache=True)
def _energy(G, noise):
    M = G.size
    acc = 0.0
    for j in range(M):
        jp = j + 1 if j + 1 < M else 0
        g = M * (G[jp] - G[j])
        acc += noise[j] * g * g
    return acc / M


@njit(cache=True)
def _backward_steps(G, coefs, times, t, h, nsteps, noise, with_noise):
    """RK4 for dG/du = -1/2 coef Lap G from u = t downwards; trapezoid noise integral."""
    M = G.size
    c = np.empty(M)
    nz = np.empty(M)
    k1 = np.empty(M)
    k2 = np.empty(M)
    k3 = np.empty(M)
    k4 = np.empty(M)
    integral = 0.0
    prev = 0.0
    if with_noise:
        _lerp(noise, times, t, nz)
        prev = _energy(G, nz)
    u = t
    for _ in range(nsteps):
        _lerp(coefs, times, u, c)
        _lap_scaled(G, c, k1)
        _lerp(coefs, times, u - 0.5 * h, c)
        _lap_scaled(G + 0.5 * h * k1, c, k2)
        _lap_scaled(G + 0.5 * h * k2, c, k3)
        _lerp(coefs, times, u - h, c)
        _lap_scaled(G + h * k3, c, k4)
        G += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u -= h
        if with_noise:
            _lerp(noise, times, u, nz)
            cur = _energy(G, nz)
            integral += 0.5 * h * (prev + cur)
            prev = cur
    return integral


def _backward(thermo, f, s, t, kind, path: DensityPath, noise=None):
    """G_s from G_t = f; also the noise integral when ``noise`` is given."""
    f = np.asarray(f, dtype=float)
    if s > t:
        raise ValueError("need s <= t")
    if path.M != f.size:
        raise PathError("test function and path use different grids")
    path.at(s)
    path.at(t)
    coefs = path.coefficient_path(kind, _coefficient(thermo, kind))
    G = f.copy()
    if t == s:
        return G, 0.0
    M = f.size
    dt_max = CFL / (M * M * max(float(coefs.max()), 1e-300))
    steps = max(1, int(np.ceil((t - s) / dt_max)))
    h = (t - s) / steps
    with_noise = noise is not None
    integral = _backward_steps(G, coefs, path.times, t, h, steps,
                               noise if with_noise else coefs, with_noise)
    return G, integral


def semigroup_apply(thermo: ThermoTable, f, s: float, t: float, kind: str, path: DensityPath) -> np.ndarray:
    """P(t, s) f for the generator 1/2 coef(rho_u) Lap, coef = D or S."""
    return _backward(thermo, f, s, t, kind, path)[0]


def colour_drift_operator(thermo: ThermoTable, h, i: int, path: DensityPath, t: float) -> np.ndarray:
    """S'(rho_t) rho^i_t Lap_M h, i.e. (D - S)(rho_t) / rho_t * rho^i_t * Lap_M h."""
    v = path.at(t)
    rho = v.sum(axis=0)
    D = thermo.dphi_of(rho)
    S = thermo.self_diffusion_of(rho)
    share = np.divide(v[i], rho, out=np.zeros_like(rho), where=rho > 0)
    return (D - S) * share * laplacian(np.asarray(h, dtype=float))


def noise_density(thermo: ThermoTable, v: np.ndarray, kind: str, colour: int = 0) -> np.ndarray:
    rho = v.sum(axis=0)
    if kind == "colour_blind":
        return thermo.phi_of(rho)
    S = thermo.self_diffusion_of(rho)
    if kind == "colour_i":
        return S * v[colour]
    if kind == "deviation_i":
        share = np.divide(v[colour], rho, out=np.zeros_like(rho), where=rho > 0)
        return S * v[colour] * (1.0 - share)
    raise ValueError(f"unknown variance kind {kind!r}")


def ou_variance(thermo: ThermoTable, f, s: float, t: float, kind: str, path: DensityPath,
                colour: int = 0) -> float:
    """Noise contribution int_s^t int noise(rho_u) [grad P(t,u) f]^2 dx du.

    kind: colour_blind (P^D, noise phi), colour_i (P^S, noise phi_i = S rho^i)
    or deviation_i (P^S, noise S rho^i (1 - rho^i / rho)).
    """
    if s > t:
        raise ValueError("need s <= t")
    semigroup = "D" if kind == "colour_blind" else "S"
    noise = path.coefficient_path(("noise", kind, colour),
                                  lambda v: edge_average(noise_density(thermo, v, kind, colour)))
    return float(_backward(thermo, f, s, t, semigroup, path, noise)[1])


def local_variance(thermo: ThermoTable, g, rho_profile) -> float:
    """Var <Y_0, g> under a product measure with local densities rho_profile."""
    g = np.asarray(g, dtype=float)
    return float(np.mean(g**2 * thermo.sigma2_of(np.asarray(rho_profile, dtype=float))))


def predicted_field_variance(thermo: ThermoTable, f, t: float, path: DensityPath, rho0=None) -> float:
    """Var <Y_t, f> started from local equilibrium at rho0 (defaults to path start)."""
    rho0 = path.total_at(0.0) if rho0 is None else rho0
    G0 = semigroup_apply(thermo, f, 0.0, t, "D", path)
    return local_variance(thermo, G0, rho0) + ou_variance(thermo, f, 0.0, t, "colour_blind", path)
