"""Experiment bodies and replica orchestration.

Each replica draws from its own keyed random streams, so outputs depend only
on (seed, replica id) and never on the number of workers or the scheduling.
Blocks of replicas are mapped in order and concatenated in order.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fields as fl
from .config import ExperimentConfig
from .edgeworth import edgeworth_pmf_approx
from .kmc import SimState, replica_rng
from .measures import (CanonicalSampler, ColourConfiguration, Configuration, ProductSampler,
                       canonical_site_pmfs, colour_split, total_pmf, truncated_pmf)
from .particles import ParticleSystem
from .pde import (basis, constant_path, heat_solution, ou_variance,
                  predicted_field_variance, semigroup_apply, solve_hydro)
from .stats import chi_square_gof, compare_to_prediction, estimate_moments
from .thermo import ThermoTable

STREAM_DYNAMICS = 0
STREAM_LABELS = 1
STREAM_INIT = 2
STREAM_TAG = 3


@dataclass
class Table:
    header: list[str]
    rows: list


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


@dataclass
class ExperimentResult:
    name: str
    tables: dict[str, Table] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# -- orchestration ------------------------------------------------------------------

def worker_count(R: int) -> int:
    """Workers for R replicas: os.cpu_count() capped by ZRP_THREADS."""
    n = os.cpu_count() or 1
    env = os.environ.get("ZRP_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ValueError(f"ZRP_THREADS must be an integer, got {env!r}") from None
    return max(1, min(n, R))


_CONTEXTS: dict[str, "Context"] = {}


def _context(cfg: ExperimentConfig) -> "Context":
    key = repr(cfg)
    if key not in _CONTEXTS:
        _CONTEXTS.clear()
        _CONTEXTS[key] = Context(cfg)
    return _CONTEXTS[key]


def _block(args):
    fn, cfg, ids = args
    ctx = _context(cfg)
    return [fn(ctx, r) for r in ids]


def map_replicas(fn, cfg: ExperimentConfig, R: int, workers: int | None = None) -> list:
    """[fn(ctx, r) for r in range(R)], fanned out over processes in blocks."""
    workers = worker_count(R) if workers is None else max(1, min(workers, R))
    if R == 0:
        return []
    if workers == 1:
        return _block((fn, cfg, range(R)))
    nblocks = min(R, workers * 4)
    bounds = np.linspace(0, R, nblocks + 1).astype(int)
    blocks = [(fn, cfg, range(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        out = []
        for part in ex.map(_block, blocks):
            out.extend(part)
    return out


class Context:
    """Per-process objects shared by all replicas of one configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.rate = cfg.rate()
        self.thermo = ThermoTable(self.rate)
        self._sampler = None
        self._centering = None

    @property
    def sampler(self):
        if self._sampler is None:
            cfg = self.cfg
            if cfg.ensemble == "canonical":
                self._sampler = CanonicalSampler(self.thermo, cfg.N, int(round(cfg.rho * cfg.N)))
            else:
                self._sampler = ProductSampler(self.thermo, cfg.density_profile(cfg.N))
        return self._sampler

    def initial(self, r: int) -> np.ndarray:
        """Initial (k, N) occupations of replica r."""
        cfg = self.cfg
        rng = replica_rng(cfg.seed, r, STREAM_INIT)
        counts = self.sampler.draw(rng)
        counts = counts.counts if isinstance(counts, Configuration) else counts
        if cfg.k == 1:
            return counts[None, :]
        return colour_split(Configuration(counts), cfg.colours, rng).counts

    def path(self):
        """Hydrodynamic path on the centering grid, colour system when k > 1."""
        if self._centering is None:
            cfg = self.cfg
            t_end = max(cfg.times)
            if cfg.profile == "constant":
                self._centering = constant_path(np.asarray(cfg.colours) * cfg.rho, cfg.grid, t_end)
            else:
                rho0 = cfg.colour_profile() if cfg.k > 1 else cfg.density_profile()
                self._centering = solve_hydro(self.thermo, rho0, t_end)
        return self._centering

    def centering(self) -> list[np.ndarray]:
        """Per observation time, (k, N) colour densities restricted to the lattice."""
        p = self.path()
        return [fl.restrict(p.at(t), self.cfg.N) for t in self.cfg.times]

    def particles(self, r: int) -> ParticleSystem:
        return ParticleSystem(self.rate, self.initial(r),
                              replica_rng(self.cfg.seed, r, STREAM_DYNAMICS))


# -- replica bodies ------------------------------------------------------------------

def _initial_replica(ctx: Context, r: int) -> np.ndarray:
    return ctx.initial(r)


def _simulate_replica(ctx: Context, r: int):
    cfg = ctx.cfg
    cc = ctx.initial(r)
    st = SimState(ctx.rate, ColourConfiguration(cc) if cfg.k > 1 else cc[0],
                  seed=cfg.seed, replica=r, log_events=cfg.log_events and r == 0)
    snaps = []
    for t in cfg.times:
        st.run_until_macro(t)
        snaps.append(st.colour_configuration().counts)
    events = np.concatenate(st.event_log) if st.event_log else np.zeros((0, 5))
    hist = np.bincount(st.counts)
    return {"hist": hist, "snaps": np.stack(snaps) if r == 0 else None,
            "events": events if r == 0 else None, "audit": st.audit(), "n_events": st.n_events}


def _hydro_replica(ctx: Context, r: int):
    cfg = ctx.cfg
    obs = ctx.particles(r).observe(cfg.times)
    c = obs.counts.astype(float)
    return c.reshape(c.shape[0], cfg.N // cfg.bin, cfg.bin).mean(axis=2)


def _field_replica(ctx: Context, r: int):
    """Fields [time, field, mode]; fields are blind, colour i, deviation i."""
    cfg = ctx.cfg
    F = fl.mode_matrix(cfg.modes, cfg.N)
    obs = ctx.particles(r).observe(cfg.times)
    out = []
    for cc, cent in zip(obs.ccounts, ctx.centering()):
        blind = fl.field_modes(cc.sum(axis=0), cent.sum(axis=0), F)
        rows = [blind]
        if cfg.k > 1:
            col = fl.field_modes(cc, cent, F)
            rows.extend(col)
            share = cent / np.where(cent.sum(axis=0) > 0, cent.sum(axis=0), 1.0)
            # the deviation field uses the local colour share as weight
            for i in range(cfg.k):
                dev = (cc[i] - cent[i]) - share[i] * (cc.sum(axis=0) - cent.sum(axis=0))
                rows.append(dev @ F.T / np.sqrt(cfg.N))
        out.append(np.stack(rows))
    return np.stack(out)


def _tagged_replica(ctx: Context, r: int):
    cfg = ctx.cfg
    ps = ctx.particles(r)
    if ps.n == 0:
        raise RuntimeError(f"replica {r} has no particles to tag")
    tag = int(replica_rng(cfg.seed, r, STREAM_TAG).integers(ps.n))
    obs = ps.observe(cfg.times, tagged=[tag])
    return obs.disp[:, 0] / cfg.N


# -- experiments ----------------------------------------------------------------------

def run_thermo(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    ctx = _context(cfg)
    th = ctx.thermo
    res = ExperimentResult("thermo")
    rows, worst = [], 0.0
    for rho in cfg.rhos:
        tr = th.transport_coefficients(rho)
        rows.append((tr.rho, tr.phi, tr.D, tr.S, tr.chi, tr.sigma2))
        worst = max(worst, abs(tr.S * tr.rho - tr.chi * tr.D))
    res.tables["thermo.csv"] = Table(["rho", "phi", "D", "S", "chi", "sigma2"], rows)
    tol = cfg.tol if cfg.tol is not None else 1e-8
    res.checks.append(Check("transport_identity", worst <= tol, worst, tol, "max |S rho - chi D|"))
    if cfg.k > 1:
        err = 0.0
        for rho in cfg.rhos:
            cc = th.colour_coefficients(np.asarray(cfg.colours) * rho)
            err = max(err, float(np.max(np.abs(cc.D_matrix.sum(axis=0) - th.transport_coefficients(rho).D))))
        res.checks.append(Check("colour_column_sums", err <= 1e-10, err, 1e-10, "max |1^T D_k - D|"))
    return res


def _marginal_pmf(ctx: Context) -> np.ndarray:
    cfg = ctx.cfg
    if cfg.ensemble == "canonical":
        n = int(round(cfg.rho * cfg.N))
        p, Q = canonical_site_pmfs(ctx.thermo, cfg.N, n)
        j = np.arange(n + 1)
        w = p[j] * Q[cfg.N - 1, n - j]
        return w / w.sum()
    return truncated_pmf(ctx.thermo, ctx.thermo.fugacity_of_density(cfg.rho)) if cfg.rho > 0 else np.array([1.0])


def _histogram_table(hist: np.ndarray, pmf: np.ndarray) -> Table:
    size = max(hist.size, pmf.size)
    h = np.zeros(size, dtype=np.int64)
    h[: hist.size] = hist
    p = np.zeros(size)
    p[: pmf.size] = pmf
    return Table(["k", "observed", "expected"], [(k, int(h[k]), float(h.sum() * p[k])) for k in range(size)])


def _gof_checks(cfg, ctx, hist) -> list[Check]:
    """Chi-square check of a pooled histogram; empty when too few sites to test."""
    try:
        p = chi_square_gof(hist, _marginal_pmf(ctx))
    except ValueError:
        return []
    return [Check("occupancy_chi_square", p > cfg.p_min, p, cfg.p_min, "p-value vs site marginal")]


def _pooled(hists) -> np.ndarray:
    size = max(h.size for h in hists)
    tot = np.zeros(size, dtype=np.int64)
    for h in hists:
        tot[: h.size] += h
    return tot


def run_sample(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    if cfg.profile != "constant" and cfg.ensemble == "canonical":
        raise ValueError("canonical sampling needs a constant profile")
    draws = map_replicas(_initial_replica, cfg, cfg.replicas, workers)
    res = ExperimentResult("sample")
    first = draws[0]
    header = ["site", "count"] + ([f"count_{i}" for i in range(cfg.k)] if cfg.k > 1 else [])
    res.tables["sample.csv"] = Table(header, [
        (x, int(first[:, x].sum()), *([int(v) for v in first[:, x]] if cfg.k > 1 else []))
        for x in range(cfg.N)])
    if cfg.profile == "constant" and cfg.replicas > 1:
        hist = _pooled([np.bincount(d.sum(axis=0)) for d in draws])
        ctx = _context(cfg)
        res.tables["histogram.csv"] = _histogram_table(hist, _marginal_pmf(ctx))
        res.checks.extend(_gof_checks(cfg, ctx, hist))
    return res


def run_simulate(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    out = map_replicas(_simulate_replica, cfg, cfg.replicas, workers)
    res = ExperimentResult("simulate")
    snaps = out[0]["snaps"]
    header = ["t", "site", "count"] + ([f"count_{i}" for i in range(cfg.k)] if cfg.k > 1 else [])
    rows = []
    for t, s in zip(cfg.times, snaps):
        for x in range(cfg.N):
            rows.append((t, x, int(s[:, x].sum()), *([int(v) for v in s[:, x]] if cfg.k > 1 else [])))
    res.tables["density.csv"] = Table(header, rows)
    if cfg.log_events:
        ev = out[0]["events"]
        res.tables["events.csv"] = Table(
            ["t_micro", "site_from", "site_to", "colour", "particle_id"],
            [(float(e[0]), int(e[1]), int(e[2]), int(e[3]), int(e[4])) for e in ev])
    audits = sum(o["audit"] for o in out)
    res.checks.append(Check("sum_tree_audit", audits == len(out), audits, len(out), "replicas passing audit"))
    res.summary["events"] = int(sum(o["n_events"] for o in out))
    if cfg.profile == "constant":
        hist = _pooled([o["hist"] for o in out])
        ctx = _context(cfg)
        res.tables["histogram.csv"] = _histogram_table(hist, _marginal_pmf(ctx))
        res.checks.extend(_gof_checks(cfg, ctx, hist))
    return res


def run_hydro(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    ctx = _context(cfg)
    path = ctx.path()
    res = ExperimentResult("hydro")
    res.summary["clip_events"] = path.clip_events
    nb = cfg.N // cfg.bin

    def binned(v):
        v = fl.restrict(np.asarray(v).sum(axis=0) if np.ndim(v) == 2 else v, cfg.N)
        return v.reshape(nb, cfg.bin).mean(axis=1)

    pde = [binned(path.at(t)) for t in cfg.times]
    heat = None
    if cfg.rate_family == "linear" and cfg.profile == "sinusoid":
        theta = ctx.rate.tail_slope
        heat = [binned(heat_solution(cfg.rho, cfg.amplitude, cfg.mode, t, cfg.grid, theta))
                for t in cfg.times]
    emp = None
    if cfg.replicas > 0:
        reps = map_replicas(_hydro_replica, cfg, cfg.replicas, workers)
        emp = np.mean(np.stack(reps), axis=0)
    header = ["t", "x", "rho_pde"] + (["rho_heat"] if heat else []) + (["rho_emp"] if emp is not None else [])
    rows = []
    for i, t in enumerate(cfg.times):
        for b in range(nb):
            row = [t, (b * cfg.bin) / cfg.N, float(pde[i][b])]
            if heat:
                row.append(float(heat[i][b]))
            if emp is not None:
                row.append(float(emp[i, b]))
            rows.append(tuple(row))
    res.tables["hydro.csv"] = Table(header, rows)
    tol = cfg.tol if cfg.tol is not None else 0.02
    if emp is not None:
        l1 = float(np.mean(np.abs(emp[-1] - pde[-1])))
        res.summary["l1_pde"] = l1
        res.checks.append(Check("l1_vs_pde", l1 <= tol, l1, tol, f"t={cfg.times[-1]}"))
        if heat:
            l1h = float(np.mean(np.abs(emp[-1] - heat[-1])))
            res.summary["l1_heat"] = l1h
            res.checks.append(Check("l1_vs_heat", l1h <= tol, l1h, tol, f"t={cfg.times[-1]}"))
    res.checks.append(Check("no_clipping", path.clip_events == 0, path.clip_events, 0))
    return res


def _field_names(k: int) -> list[str]:
    if k == 1:
        return ["blind"]
    return ["blind"] + [f"colour{i}" for i in range(k)] + [f"deviation{i}" for i in range(k)]


def _predictions(ctx: Context) -> np.ndarray:
    """Predicted variances [time, field, mode]; NaN where no prediction applies."""
    cfg = ctx.cfg
    th = ctx.thermo
    names = _field_names(cfg.k)
    pred = np.full((len(cfg.times), len(names), len(cfg.modes)), np.nan)
    share = np.asarray(cfg.colours)
    if cfg.profile == "constant":
        rho = cfg.rho
        chi = float(th.sigma2_of(rho)) if rho > 0 else 0.0
        pred[:, 0, :] = chi
        if cfg.k > 1:
            for i, p in enumerate(share):
                # stationary variances of a multinomially split product measure
                pred[:, 1 + i, :] = p * p * chi + p * (1 - p) * rho
                pred[:, 1 + cfg.k + i, :] = p * rho * (1 - p)
        return pred
    path = ctx.path()
    M = cfg.grid
    v0 = path.at(0.0)
    rho0 = v0.sum(axis=0)
    for a, t in enumerate(cfg.times):
        for b, z in enumerate(cfg.modes):
            f = basis(z, M)
            pred[a, 0, b] = predicted_field_variance(th, f, t, path, rho0)
            if cfg.k > 1:
                G0 = semigroup_apply(th, f, 0.0, t, "S", path)
                for i in range(cfg.k):
                    s0 = np.divide(v0[i], rho0, out=np.zeros_like(rho0), where=rho0 > 0)
                    init = float(np.mean(G0**2 * v0[i] * (1 - s0)))
                    pred[a, 1 + cfg.k + i, b] = init + ou_variance(th, f, 0.0, t, "deviation_i", path, i)
    return pred


def run_fields(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    if cfg.experiment == "fluct-eq" and cfg.profile != "constant":
        raise ValueError("fluct-eq needs a constant profile; use fluct-neq otherwise")
    ctx = _context(cfg)
    ctx.path()
    vals = np.stack(map_replicas(_field_replica, cfg, cfg.replicas, workers))
    names = _field_names(cfg.k)
    pred = _predictions(ctx)
    res = ExperimentResult(cfg.experiment)
    raw = []
    for r in range(cfg.replicas):
        for a, t in enumerate(cfg.times):
            for j, name in enumerate(names):
                for b, z in enumerate(cfg.modes):
                    raw.append((r, t, name, z, float(vals[r, a, j, b])))
    res.tables["fields.csv"] = Table(["replica", "t", "field", "z", "value"], raw)
    rows = []
    primary = "deviation0" if cfg.experiment == "colour-fluct" else "blind"
    for a, t in enumerate(cfg.times):
        for j, name in enumerate(names):
            for b, z in enumerate(cfg.modes):
                m = estimate_moments(vals[:, a, j, b])
                p = pred[a, j, b]
                if np.isfinite(p):
                    v = compare_to_prediction(m, p, cfg.k_sigma)
                    zs, ok = v.z_score, v.passed
                    if name == primary:
                        res.checks.append(Check(f"var_{name}_t{t:g}_z{z}", ok, m.var, p,
                                                f"z-score {zs:.3f}, se {m.se_var:.4g}"))
                else:
                    zs, ok = np.nan, True
                rows.append((t, name, z, m.mean, m.var, m.se_var, m.skew, m.ex_kurt, p, zs, int(ok)))
    res.tables["variance.csv"] = Table(
        ["t", "field", "z", "mean", "var", "se_var", "skew", "ex_kurt", "predicted", "z_score", "pass"], rows)
    return res


def run_tagged(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    if cfg.profile != "constant":
        raise ValueError("tagged needs an equilibrium (constant) profile")
    ctx = _context(cfg)
    disp = np.stack(map_replicas(_tagged_replica, cfg, cfg.replicas, workers))
    S = float(ctx.thermo.self_diffusion_of(cfg.rho))
    tol = cfg.tol if cfg.tol is not None else 0.05
    res = ExperimentResult("tagged")
    res.tables["tagged.csv"] = Table(["replica", "t", "displacement"], [
        (r, t, float(disp[r, a])) for r in range(cfg.replicas) for a, t in enumerate(cfg.times)])
    rows = []
    for a, t in enumerate(cfg.times):
        m = estimate_moments(disp[:, a])
        pred = S * t
        rel = m.var / pred - 1.0 if pred > 0 else np.nan
        ok = bool(abs(rel) <= tol) if pred > 0 else True
        rows.append((t, m.mean, m.var, m.se_var, pred, rel, int(ok)))
        if pred > 0:
            res.checks.append(Check(f"msd_t{t:g}", ok, m.var, pred, f"relative error {rel:.4f}"))
    res.tables["msd.csv"] = Table(["t", "mean", "var", "se_var", "predicted", "rel_err", "pass"], rows)
    return res


def clt_errors(thermo: ThermoTable, N: int, rho: float, J: int):
    """(n, exact pmf, Edgeworth approximation, max scaled error) for the site total."""
    phi = thermo.fugacity_of_density(rho)
    exact = total_pmf(thermo, N, phi)
    n = np.arange(exact.size)
    approx = edgeworth_pmf_approx(thermo, N, n, rho, J)
    sigma2 = float(thermo.sigma2_of(rho))
    err = float(np.sqrt(N * sigma2) * np.max(np.abs(exact - approx)))
    return n, exact, approx, err


def run_clt(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    th = _context(cfg).thermo
    res = ExperimentResult("clt-check")
    rows, summary = [], []
    for N in cfg.sizes:
        n, exact, a2, e2 = clt_errors(th, N, cfg.rho, 2)
        _, _, a3, e3 = clt_errors(th, N, cfg.rho, 3)
        rows.extend((N, int(k), float(exact[k]), float(a2[k]), float(a3[k])) for k in n)
        summary.append((N, e2, e3))
    res.tables["clt.csv"] = Table(["N", "n", "exact", "edgeworth_J2", "edgeworth_J3"], rows)
    res.tables["clt_errors.csv"] = Table(["N", "err_J2", "err_J3"], summary)
    tol = cfg.tol if cfg.tol is not None else 0.02
    e2s = [s[1] for s in summary]
    dec = all(b < a for a, b in zip(e2s, e2s[1:]))
    res.checks.append(Check("error_decreasing", dec, e2s[-1], e2s[0], "J=2 errors " + ", ".join(f"{e:.4g}" for e in e2s)))
    res.checks.append(Check("error_at_largest_N", e2s[-1] <= tol, e2s[-1], tol, f"N={summary[-1][0]}"))
    ratio = summary[-1][1] / summary[-1][2] if summary[-1][2] > 0 else np.inf
    res.checks.append(Check("first_correction_gain", ratio >= 2.0, ratio, 2.0, "J=2 error / J=3 error"))
    return res


RUNNERS = {
    "thermo": run_thermo,
    "sample": run_sample,
    "simulate": run_simulate,
    "hydro": run_hydro,
    "fluct-eq": run_fields,
    "fluct-neq": run_fields,
    "colour-fluct": run_fields,
    "tagged": run_tagged,
    "clt-check": run_clt,
}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg, workers)
