"""Event-driven (Gillespie) simulation of the zero-range process on Z/NZ.

Site selection goes through a binary sum tree over w(x) = c(eta(x)). Each
internal node is recomputed as left + right on update, so an incremental
tree is bit-identical to a full rebuild.

Random streams: waiting times, site choice and direction come from the main
stream; the choice of *which* resident particle jumps (only needed when
colours or tags are tracked) comes from a separate label stream. A coloured
run therefore contracts to exactly the colour-blind trajectory for the same
seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from .measures import ColourConfiguration, Configuration
from .rates import RateFunction


class NoEvent(RuntimeError):
    """Total jump rate is zero: the system is empty or frozen."""


def replica_rng(master_seed: int, replica: int, stream: int = 0) -> np.random.Generator:
    """Independent SFC64 stream keyed by (master_seed, replica, stream).

    The key alone fixes the stream, so results do not depend on which worker
    runs a replica or in what order.
    """
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence([master_seed, replica, stream])))


# -- sum tree kernels ----------------------------------------------------------

@njit(cache=True)
def tree_build(tree, leaves, P):
    tree[:] = 0.0
    tree[P:P + leaves.size] = leaves
    for i in range(P - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@njit(cache=True)
def tree_set(tree, P, x, value):
    i = P + x
    tree[i] = value
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@njit(cache=True)
def tree_find(tree, P, u):
    """Leaf index x with prefix(x) <= u < prefix(x) + w(x), u in [0, total)."""
    i = 1
    while i < P:
        left = tree[2 * i]
        # branchless descent; never step into an empty right subtree
        r = (u >= left) & (tree[2 * i + 1] > 0.0)
        u -= left * r
        i = 2 * i + r
    return i - P


@njit(cache=True)
def _jump(counts, tree, P, ctab, x, y, labelled, members, nmem, site_of, slot_of,
          colour_of, ccounts, disp, step, ulabel):
    """Apply a jump x -> y (step = +-1). Returns the moved particle id or -1."""
    pid = -1
    if labelled:
        k = nmem[x]
        s = int(ulabel * k)
        if s >= k:
            s = k - 1
        pid = members[x, s]
        last = members[x, k - 1]
        members[x, s] = last
        slot_of[last] = s
        nmem[x] = k - 1
        m = nmem[y]
        members[y, m] = pid
        slot_of[pid] = m
        nmem[y] = m + 1
        site_of[pid] = y
        disp[pid] += step
        c = colour_of[pid]
        ccounts[c, x] -= 1
        ccounts[c, y] += 1
    counts[x] -= 1
    counts[y] += 1
    tree_set(tree, P, x, ctab[counts[x]])
    tree_set(tree, P, y, ctab[counts[y]])
    return pid


@njit(cache=True)
def _run(counts, tree, P, ctab, N, t, t_end, rng, lrng, labelled, members, nmem,
         site_of, slot_of, colour_of, ccounts, disp, max_events, log):
    """Advance until the next event would pass t_end. Returns (t, n_events)."""
    n = 0
    while n < max_events:
        W = tree[1]
        if W <= 0.0:
            return t_end, n, True
        dt = rng.standard_exponential() / W
        if t + dt > t_end:
            return t_end, n, False
        t += dt
        x = tree_find(tree, P, rng.random() * W)
        if rng.random() < 0.5:
            step = 1
        else:
            step = -1
        y = x + step
        if y == N:
            y = 0
        elif y < 0:
            y = N - 1
        ul = lrng.random() if labelled else 0.0
        pid = _jump(counts, tree, P, ctab, x, y, labelled, members, nmem, site_of,
                    slot_of, colour_of, ccounts, disp, step, ul)
        if log.shape[0] > 0:
            log[n, 0] = t
            log[n, 1] = x
            log[n, 2] = y
            log[n, 3] = colour_of[pid] if pid >= 0 else -1
            log[n, 4] = pid
        n += 1
    return t, n, False


@dataclass
class Event:
    site_from: int
    site_to: int
    dt_micro: float
    colour: int | None = None
    particle_id: int | None = None


class SimState:
    """Mutable state of one zero-range trajectory.

    ``config`` may be a :class:`Configuration` (colour-blind) or a
    :class:`ColourConfiguration`. With ``track=True`` (implied for colours)
    every particle carries an id, a colour and an unwrapped position.
    """

    def __init__(self, rate: RateFunction, config, seed: int = 0, replica: int = 0,
                 track: bool = False, log_events: bool = False):
        if isinstance(config, ColourConfiguration):
            ccounts = config.counts.copy()
            counts = ccounts.sum(axis=0)
            track = True
        else:
            counts = Configuration(config.counts if isinstance(config, Configuration) else config).counts.copy()
            ccounts = counts[None, :].copy()
        self.rate = rate
        self.N = counts.size
        self.counts = counts
        self.n_total = int(counts.sum())
        self.ctab = np.asarray(rate.table(max(self.n_total, 1)), dtype=float)
        self.P = 1 << max(0, int(np.ceil(np.log2(self.N))))
        self.tree = np.zeros(2 * self.P)
        tree_build(self.tree, self.ctab[self.counts], self.P)
        self.t_micro = 0.0
        self.n_events = 0
        self.rng = replica_rng(seed, replica, 0)
        self.label_rng = replica_rng(seed, replica, 1)
        self.labelled = bool(track)
        self.ccounts = ccounts
        n = self.n_total
        if self.labelled:
            cap = max(n, 1)
            self.members = np.full((self.N, cap), -1, dtype=np.int64)
            self.nmem = np.zeros(self.N, dtype=np.int64)
            self.site_of = np.zeros(n, dtype=np.int64)
            self.slot_of = np.zeros(n, dtype=np.int64)
            self.colour_of = np.zeros(n, dtype=np.int64)
            pid = 0
            for x in range(self.N):
                for c in range(ccounts.shape[0]):
                    for _ in range(int(ccounts[c, x])):
                        self.members[x, self.nmem[x]] = pid
                        self.slot_of[pid] = self.nmem[x]
                        self.nmem[x] += 1
                        self.site_of[pid] = x
                        self.colour_of[pid] = c
                        pid += 1
        else:
            self.members = np.zeros((1, 1), dtype=np.int64)
            self.nmem = np.zeros(1, dtype=np.int64)
            self.site_of = np.zeros(1, dtype=np.int64)
            self.slot_of = np.zeros(1, dtype=np.int64)
            self.colour_of = np.zeros(1, dtype=np.int64)
        self.initial_site = self.site_of.copy()
        self.disp = np.zeros(max(n, 1), dtype=np.int64)
        self.log_events = log_events
        self.event_log: list[np.ndarray] = []

    # -- dynamics ------------------------------------------------------------------

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    def _call(self, t_end: float, max_events: int, log_cap: int = 0):
        log = np.zeros((log_cap, 5))
        t, n, frozen = _run(
            self.counts, self.tree, self.P, self.ctab, self.N, self.t_micro, t_end,
            self.rng, self.label_rng, self.labelled, self.members, self.nmem,
            self.site_of, self.slot_of, self.colour_of, self.ccounts, self.disp,
            max_events, log,
        )
        if log_cap:
            self.event_log.append(log[:n].copy())
        self.n_events += n
        return t, n, frozen

    def step(self) -> Event:
        """Apply exactly one jump and return it."""
        if self.total_rate <= 0.0:
            raise NoEvent("total rate is zero")
        t0 = self.t_micro
        t, n, _ = self._call(np.inf, 1, log_cap=1)
        rec = self.event_log[-1][0]
        if not self.log_events:
            self.event_log.pop()
        self.t_micro = t
        pid = int(rec[4])
        return Event(
            site_from=int(rec[1]), site_to=int(rec[2]), dt_micro=t - t0,
            colour=int(rec[3]) if self.labelled else None,
            particle_id=pid if self.labelled else None,
        )

    def run_until_micro(self, t_end: float, chunk: int = 1 << 22) -> None:
        if t_end < self.t_micro:
            raise ValueError("cannot run backwards in time")
        while True:
            cap = chunk if self.log_events else 0
            t, n, frozen = self._call(t_end, chunk, cap)
            self.t_micro = t
            if n < chunk or frozen:
                return

    def run_until_macro(self, t_macro: float) -> "SimState":
        """Advance to microscopic time t_macro * N^2 (left-continuous)."""
        if t_macro < 0:
            raise ValueError("t_macro must be nonnegative")
        self.run_until_micro(t_macro * self.N**2)
        return self

    # -- observables -----------------------------------------------------------------

    def tagged_displacement(self, pid: int) -> float:
        """Unwrapped lattice displacement of particle ``pid`` divided by N."""
        if not self.labelled:
            raise ValueError("particle tracking is off")
        return float(self.disp[pid]) / self.N

    def snapshot_density(self, bin: int = 1) -> np.ndarray:
        """Block averages of the occupation, shape (colours, N // bin)."""
        if self.N % bin:
            raise ValueError("bin must divide N")
        counts = self.ccounts if self.labelled else self.counts[None, :]
        return counts.reshape(counts.shape[0], self.N // bin, bin).mean(axis=2)

    def configuration(self) -> Configuration:
        return Configuration(self.counts.copy())

    def colour_configuration(self) -> ColourConfiguration:
        return ColourConfiguration(self.ccounts.copy() if self.labelled else self.counts[None, :].copy())

    def audit(self) -> bool:
        """Full rebuild of the sum tree equals the incremental one bit for bit."""
        fresh = np.zeros_like(self.tree)
        tree_build(fresh, self.ctab[self.counts], self.P)
        return bool(np.array_equal(fresh, self.tree))

    def write_event_log(self, path) -> None:
        rows = np.concatenate(self.event_log) if self.event_log else np.zeros((0, 5))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_micro", "site_from", "site_to", "colour", "particle_id"])
            for r in rows:
                w.writerow([repr(float(r[0])), int(r[1]), int(r[2]), int(r[3]), int(r[4])])
