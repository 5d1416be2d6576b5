"""Time-stepped agent simulation of the tangle and the Monte Carlo batch
driver."""

from __future__ import annotations

import csv
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .selection import SelectionPolicy, Uniform, parse_policy
from .tangle import TangleState


@dataclass
class ScenarioConfig:
    """One simulated scenario.

    ``lam`` is the mean number of arrivals per unit time, ``h`` the PoW
    delay and ``horizon`` the run length, both in time units. Each time unit
    is split into ``substeps`` clock steps (default 1), which refines the age
    resolution seen by age-weighted selection. ``check`` asserts the
    bookkeeping identities after every step.
    """

    lam: float
    h: int
    m: int = 2
    horizon: int = 1000
    runs: int = 1
    seed: int = 0
    policy: SelectionPolicy = field(default_factory=Uniform)
    tail_fraction: float = 0.25
    check: bool = False
    substeps: int = 1

    def __post_init__(self):
        if isinstance(self.policy, str):
            self.policy = parse_policy(self.policy)
        self.validate()

    def validate(self) -> None:
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.h < 1:
            raise ValueError("h must be >= 1")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.horizon <= 2 * self.h:
            raise ValueError("horizon must exceed 2h")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not 0 < self.tail_fraction <= 1:
            raise ValueError("tail_fraction must lie in (0, 1]")

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "h": self.h, "m": self.m,
                "horizon": self.horizon, "runs": self.runs,
                "seed": self.seed, "policy": self.policy.spec(),
                "tail_fraction": self.tail_fraction,
                "substeps": self.substeps}

    @property
    def h_steps(self) -> int:
        return self.h * self.substeps

    @property
    def n_steps(self) -> int:
        return self.horizon * self.substeps


def tail_fit(t: np.ndarray, y: np.ndarray, fraction: float = 0.25):
    """Least-squares line through the last ``fraction`` of the series;
    returns (mean, slope)."""
    n = len(y)
    start = min(int(np.floor(n * (1 - fraction))), n - 2)
    tt = np.asarray(t[start:], dtype=float)
    yy = np.asarray(y[start:], dtype=float)
    slope = np.polyfit(tt, yy, 1)[0] if len(tt) > 1 else 0.0
    return float(yy.mean()), float(slope)


@dataclass
class RunTrace:
    """Per-step counts of one realisation, recorded at the end of each step.

    ``t`` is in time units; ``h`` is the delay in clock steps.
    """

    seed: int
    t: np.ndarray
    L: np.ndarray
    X: np.ndarray
    W: np.ndarray
    N: np.ndarray
    arrivals: np.ndarray | None = None
    u_sum: np.ndarray | None = None
    tip_ages: np.ndarray | None = None
    h: int = 1
    m: int = 2
    tail_fraction: float = 0.25

    @property
    def final_L(self) -> int:
        return int(self.L[-1])

    @property
    def tail_mean_L(self) -> float:
        return tail_fit(self.t, self.L, self.tail_fraction)[0]

    @property
    def tail_slope(self) -> float:
        return tail_fit(self.t, self.L, self.tail_fraction)[1]

    def check_identities(self) -> None:
        """Exact checks of the N, W, X, L bookkeeping relations and the
        pending bound W(t) <= m * arrivals in (t-h, t]."""
        h = self.h
        arr = self.arrivals
        cum_arr = np.cumsum(arr)
        cum_u = np.cumsum(self.u_sum)
        n = len(self.t)
        idx = np.arange(n)

        def N_at(i):
            # genesis is created at -h; counts before t=0 are genesis only
            return np.where(i >= 0, 1 + cum_arr[np.maximum(i, 0)], 1)

        def U_upto(i):
            return np.where(i >= 0, cum_u[np.maximum(i, 0)], 0)

        _require(self.N, N_at(idx), "N")
        _require(self.W, U_upto(idx) - U_upto(idx - h), "W")
        _require(self.X, N_at(idx - h) - U_upto(idx), "X")
        _require(self.L, N_at(idx - h) - U_upto(idx - h), "L")
        _require(self.L, self.X + self.W, "L = X + W")
        window = cum_arr - np.where(idx - h >= 0, cum_arr[np.maximum(idx - h, 0)], 0)
        if np.any(self.W > self.m * window):
            bad = int(np.flatnonzero(self.W > self.m * window)[0])
            raise AssertionError(f"pending bound violated at t={bad}")


def _require(actual, expected, what):
    bad = np.flatnonzero(np.asarray(actual) != np.asarray(expected))
    if len(bad):
        i = int(bad[0])
        raise AssertionError(
            f"{what} identity fails at t={i}: {actual[i]} != {expected[i]}")


class TangleSimulation:
    """One realisation.

    Each step: commit the transactions created at ``t - h``; draw the
    Poisson number of arrivals; let every arrival pick its m tips against the
    frozen start-of-step tip set; mark the free picks pending; record the
    counts. Arrival counts and tip choices use separate RNG streams so a
    change of policy never perturbs the arrival sequence.
    """

    def __init__(self, config: ScenarioConfig, seed: int | None = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        arrival_ss, select_ss = np.random.SeedSequence(self.seed).spawn(2)
        self.arrival_rng = np.random.default_rng(arrival_ss)
        self.select_rng = np.random.default_rng(select_ss)
        self.slots = config.policy.slots(config.m)
        self.lam_step = config.lam / config.substeps
        self.state = TangleState(
            m=config.m, h=config.h_steps,
            capacity=int(config.lam * config.horizon * 1.1) + 64,
            track_weights=config.policy.needs_weights,
            dt=1.0 / config.substeps)
        self.queue: deque = deque()
        self.state.add_arrival(0)
        n = config.n_steps
        self._L = np.zeros(n, dtype=np.int64)
        self._X = np.zeros(n, dtype=np.int64)
        self._W = np.zeros(n, dtype=np.int64)
        self._N = np.zeros(n, dtype=np.int64)
        self._arr = np.zeros(n, dtype=np.int64)
        self._usum = np.zeros(n, dtype=np.int64)

    def step(self) -> None:
        st, cfg = self.state, self.config
        t = st.clock
        while self.queue and self.queue[0][0] == t:
            _, ids, choices = self.queue.popleft()
            st.commit_batch(ids, choices, t)
        k = int(self.arrival_rng.poisson(self.lam_step)) if cfg.lam > 0 else 0
        u_total = 0
        if k:
            choices = np.column_stack(
                [p.draw(st, k, self.select_rng) for p in self.slots])
            ids = [st.add_arrival(t) for _ in range(k)]
            for row in choices:
                u_total += st.mark_pending(row)
            self.queue.append((t + cfg.h_steps, ids, choices))
        if t < cfg.n_steps:
            self._L[t], self._X[t], self._W[t] = st.L, st.X, st.W
            self._N[t] = st.arrival_count
            self._arr[t] = k
            self._usum[t] = u_total
        if cfg.check:
            self._check_step(t)
        st.tick()

    def _check_step(self, t):
        h = self.config.h_steps
        cum_u = np.cumsum(self._usum[:t + 1])
        n_lag = 1 + int(self._arr[:t - h + 1].sum()) if t - h >= 0 else 1
        u_in = int(cum_u[-1] - (cum_u[t - h] if t - h >= 0 else 0))
        u_done = int(cum_u[t - h]) if t - h >= 0 else 0
        assert self._W[t] == u_in, f"W identity at t={t}"
        assert self._X[t] == n_lag - int(cum_u[-1]), f"X identity at t={t}"
        assert self._L[t] == n_lag - u_done, f"L identity at t={t}"
        window = int(self._arr[max(t - h + 1, 0):t + 1].sum())
        assert self._W[t] <= self.config.m * window, f"W bound at t={t}"

    def run(self) -> RunTrace:
        while self.state.clock < self.config.n_steps:
            self.step()
        return self.trace()

    def trace(self) -> RunTrace:
        n = min(self.state.clock, self.config.n_steps)
        st = self.state
        sub = self.config.substeps
        t = np.arange(n) if sub == 1 else np.arange(n) / sub
        return RunTrace(
            seed=self.seed, t=t, L=self._L[:n].copy(),
            X=self._X[:n].copy(), W=self._W[:n].copy(), N=self._N[:n].copy(),
            arrivals=self._arr[:n].copy(), u_sum=self._usum[:n].copy(),
            tip_ages=(st.clock - 1 - st.attached_at[st.tips]).copy(),
            h=self.config.h_steps, m=self.config.m,
            tail_fraction=self.config.tail_fraction)


def simulate(config: ScenarioConfig, seed: int | None = None) -> RunTrace:
    return TangleSimulation(config, seed).run()


def run_batch(config: ScenarioConfig, n_jobs: int = 1) -> list[RunTrace]:
    """``config.runs`` independent realisations with seeds seed, seed+1, ..."""
    seeds = [config.seed + i for i in range(config.runs)]
    if n_jobs == 1 or config.runs == 1:
        return [simulate(config, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(simulate, [config] * len(seeds), seeds))


@dataclass
class OrphanStats:
    counts: np.ndarray
    edges: np.ndarray
    fraction: float
    threshold: float


def orphan_statistics(trace: RunTrace, threshold: float,
                      bins: int = 20) -> OrphanStats:
    """Histogram of tip ages at the horizon and the share of tips older than
    ``threshold`` steps."""
    ages = np.asarray(trace.tip_ages if trace.tip_ages is not None else [])
    if ages.size == 0:
        return OrphanStats(np.zeros(0, dtype=int), np.zeros(0), 0.0,
                           threshold)
    counts, edges = np.histogram(ages, bins=bins)
    return OrphanStats(counts, edges, float(np.mean(ages > threshold)),
                       threshold)


# -- CSV ----------------------------------------------------------------------

TRACE_HEADER = ["t", "L", "X", "W", "N"]
SUMMARY_HEADER = ["run", "seed", "final_L", "tail_mean_L", "tail_slope"]


def write_trace_csv(trace: RunTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        w.writerows(zip(trace.t.tolist(), trace.L.tolist(), trace.X.tolist(),
                        trace.W.tolist(), trace.N.tolist()))


def read_trace_csv(path, seed: int = 0, tail_fraction: float = 0.25) -> RunTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    if np.all(t == np.round(t)):
        t = t.astype(np.int64)
    c = data[:, 1:].astype(np.int64)
    return RunTrace(seed=seed, t=t, L=c[:, 0], X=c[:, 1], W=c[:, 2],
                    N=c[:, 3], tail_fraction=tail_fraction)


def write_summary_csv(traces: list[RunTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for i, tr in enumerate(traces):
            w.writerow([i, tr.seed, tr.final_L, f"{tr.tail_mean_L:.6g}",
                        f"{tr.tail_slope:.6g}"])


def write_batch(traces: list[RunTrace], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tr in enumerate(traces):
        p = out / f"run_{i:03d}.csv"
        write_trace_csv(tr, p)
        paths.append(p)
    write_summary_csv(traces, out / "summary.csv")
    return paths
