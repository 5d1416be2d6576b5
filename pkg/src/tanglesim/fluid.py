"""Fluid-limit tip densities: method of characteristics on a square grid.

The free-tip density x(t, s) is transported along t - s = const and damped
at rate f(t, s) = sum_j g_j(s) / zeta_j(t). The total density is slaved to
x through the delay, l(t, s) = 1 for s <= h and x(t - h, s - h) beyond, so
zeta_j(t) only needs rows that are at least h old. The solution is built
block by block: rows on [kh, (k+1)h] use zeta already known on that block,
then zeta is filled in on [(k+1)h, (k+2)h].

Grid conventions: one step ``dt = h / n`` in both t and s, row ``i`` holds
x(i dt, k dt) for ages k = 0 .. len-1. All integrals are trapezoidal.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .weights import WeightFunction


class FluidError(RuntimeError):
    pass


def _trapz(y, dx):
    if len(y) < 2:
        return 0.0
    return float(dx * (y.sum() - 0.5 * (y[0] + y[-1])))


@dataclass
class StartupData:
    """Initial functions on the first delay blocks.

    ``phi[k]`` is x(2h, k dt) for k = 0 .. 2n; ``psi[i, j]`` is zeta_j(2h + i dt)
    for i = 0 .. n.
    """

    phi: np.ndarray
    psi: np.ndarray
    dt: float
    residuals: dict


class FluidGrid:
    """Solver state for the delayed transport system.

    Parameters
    ----------
    weights:
        One age weight per selection slot (m = len(weights)).
    h:
        PoW delay in model time units.
    n_per_h:
        Grid steps per delay; ``dt = h / n_per_h``.
    age_cap:
        For integrable weights the zeta integrals are truncated at this age
        (default 50 h); the neglected mass is bounded by the g-tail and
        recorded in ``zeta_tail_bound``. Densities and totals are never
        truncated.
    dump_stride:
        Keep every ``dump_stride``-th row for density dumps (None: keep none).
    """

    def __init__(self, weights: list[WeightFunction], h: float,
                 n_per_h: int = 100, age_cap: float | None = None,
                 dump_stride: int | None = None):
        if h <= 0:
            raise ValueError("h must be positive")
        if n_per_h < 2:
            raise ValueError("n_per_h must be >= 2")
        if not weights:
            raise ValueError("need at least one weight function")
        for w in weights:
            w.check(h)
        self.weights = list(weights)
        self.m = len(weights)
        self.h = float(h)
        self.n = int(n_per_h)
        self.dt = self.h / self.n
        self.age_cap = 50 * self.h if age_cap is None else float(age_cap)
        self.dump_stride = dump_stride
        self.G_h = np.array([float(w.G(self.h)) for w in weights])
        self.zeta_tail_bound = np.array(
            [w.tail(self.age_cap) if w.integrable else 0.0 for w in weights])
        self._gvals = np.zeros((self.m, 0))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.snapshots: dict[int, np.ndarray] = {}
        self._zeta = np.full((0, self.m), np.nan)
        self._x_tot: list[float] = []
        self._l_tot: list[float] = []
        self.last = -1          # last computed row index
        self.startup: StartupData | None = None

    # -- grid helpers -------------------------------------------------------

    def index(self, t: float) -> int:
        i = round(t / self.dt)
        if abs(i * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise FluidError(f"t={t} is not on the grid (dt={self.dt})")
        return int(i)

    def _g(self, length):
        if self._gvals.shape[1] < length:
            size = max(length, 2 * self._gvals.shape[1], 4 * self.n)
            s = np.arange(size) * self.dt
            self._gvals = np.vstack(
                [np.asarray(w.g(s), dtype=float) for w in self.weights])
        return self._gvals[:, :length]

    def _ensure_zeta(self, i):
        if self._zeta.shape[0] <= i:
            extra = max(i + 1 - self._zeta.shape[0], self._zeta.shape[0])
            self._zeta = np.vstack([self._zeta,
                                    np.full((extra, self.m), np.nan)])

    def zeta(self, t: float) -> np.ndarray:
        i = self.index(t)
        if i >= self._zeta.shape[0] or np.isnan(self._zeta[i, 0]):
            raise FluidError(f"zeta not computed at t={t}")
        return self._zeta[i].copy()

    @property
    def zeta_known_until(self) -> int:
        known = ~np.isnan(self._zeta[:, 0])
        return int(np.flatnonzero(known)[-1]) if known.any() else -1

    def _rate(self, i, length):
        """f(t_i, s_k) for k < length; 0/0 counts as no selection pressure."""
        g = self._g(length)
        z = self._zeta[i][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(z > 0, g / np.where(z > 0, z, 1.0),
                         np.where(g > 0, np.inf, 0.0))
        return r.sum(axis=0)

    def _store_row(self, i, row):
        self._rows[i] = row
        while len(self._rows) > self.n + 1:
            self._rows.popitem(last=False)
        if self.dump_stride and i % self.dump_stride == 0:
            self.snapshots[i] = row
        self.last = i
        self._record_totals(i, row)

    def row(self, t: float) -> np.ndarray:
        """x(t, s) on the age grid, for t among the last h of computed rows
        or a kept snapshot."""
        i = self.index(t)
        if i in self._rows:
            return self._rows[i]
        if i in self.snapshots:
            return self.snapshots[i]
        raise FluidError(f"row at t={t} is not retained")

    def _compute_zeta(self, i):
        """zeta_j(t_i) = G_j(min(h, t-h)) + int_h^{t-h} g_j(s) x(t-h, s-h) ds."""
        self._ensure_zeta(i)
        if i <= 2 * self.n:
            self._zeta[i] = [float(w.G((i - self.n) * self.dt))
                             for w in self.weights]
            return
        src = self._rows[i - self.n]
        k_max = i - 2 * self.n
        length = min(k_max, len(src) - 1) + 1
        g = self._g(length + self.n)[:, self.n:]
        dens = src[:length]
        for j, w in enumerate(self.weights):
            gj = g[j]
            if w.integrable:
                cap = int(math.floor((self.age_cap - self.h) / self.dt)) + 1
                gj, dj = gj[:cap], dens[:cap]
            else:
                dj = dens
            self._zeta[i, j] = self.G_h[j] + _trapz(gj * dj, self.dt)

    def _record_totals(self, i, row):
        k_max = i - self.n
        if k_max < 0:
            x_tot = 0.0
        else:
            x_tot = _trapz(row[:k_max + 1], self.dt)
        if i < 2 * self.n:
            l_tot = max(k_max, 0) * self.dt
        else:
            src = i - self.n
            l_tot = self.h + self._x_tot[src]
        while len(self._x_tot) <= i:
            self._x_tot.append(np.nan)
            self._l_tot.append(np.nan)
        self._x_tot[i] = x_tot
        self._l_tot[i] = l_tot

    def _march(self, i):
        """Row i+1 from row i along the characteristics."""
        old = self._rows[i]
        n_old = len(old)
        f_old = self._rate(i, n_old)
        f_new = self._rate(i + 1, n_old + 1)[1:]
        new = np.empty(n_old + 1)
        new[0] = 1.0
        with np.errstate(invalid="ignore"):
            new[1:] = old * np.exp(-0.5 * self.dt * (f_old + f_new))
        new[1:][np.isnan(new[1:])] = 0.0
        self._store_row(i + 1, new)

    # -- construction -------------------------------------------------------

    def build_startup(self, deriv_tol: float | None = None) -> StartupData:
        """Rows and zeta on [h, 2h] from the no-approval regime, then zeta on
        [2h, 3h]; returns phi = x(2h, .) and psi = zeta on [2h, 3h]."""
        if self.startup is not None:
            return self.startup
        n = self.n
        for i in range(n, 2 * n + 1):
            self._compute_zeta(i)
        self._store_row(n, np.ones(1))
        for i in range(n, 2 * n):
            self._march(i)
        for i in range(2 * n + 1, 3 * n + 1):
            self._compute_zeta(i)
        phi = np.zeros(2 * n + 1)
        row = self._rows[2 * n]
        phi[:len(row)] = row
        psi = self._zeta[2 * n:3 * n + 1].copy()
        res = compatibility_residuals(self.weights, self.h, phi, psi, self.dt)
        self.startup = StartupData(phi, psi, self.dt, res)
        _assert_compatible(res, self.dt, deriv_tol)
        return self.startup

    @classmethod
    def from_initial(cls, weights, h, phi, psi, n_per_h: int = 100,
                     deriv_tol: float | None = None, **kw) -> "FluidGrid":
        """Start from user-supplied x(2h, s) = phi(s) and zeta_j(2h + u) =
        psi_j(u), given as callables or grid arrays."""
        grid = cls(weights, h, n_per_h=n_per_h, **kw)
        n, dt = grid.n, grid.dt
        s = np.arange(2 * n + 1) * dt
        u = np.arange(n + 1) * dt
        phi_v = np.asarray(phi(s) if callable(phi) else phi, dtype=float)
        if callable(psi):
            psi_v = np.column_stack([np.asarray(p(u), dtype=float) *
                                     np.ones_like(u) for p in psi]) \
                if isinstance(psi, (list, tuple)) else np.asarray(psi(u))
        else:
            psi_v = np.asarray(psi, dtype=float)
        if isinstance(psi, (list, tuple)) and not callable(psi):
            psi_v = np.column_stack([np.asarray(p(u), dtype=float)
                                     if callable(p) else np.asarray(p)
                                     for p in psi])
        psi_v = psi_v.reshape(n + 1, grid.m)
        if phi_v.shape != (2 * n + 1,):
            raise ValueError(f"phi must have {2 * n + 1} grid values")
        res = compatibility_residuals(grid.weights, grid.h, phi_v, psi_v, dt)
        _assert_compatible(res, dt, deriv_tol)
        grid._ensure_zeta(3 * n)
        grid._zeta[2 * n:3 * n + 1] = psi_v
        grid._rows[2 * n] = phi_v
        grid.last = 2 * n
        grid._x_tot = [np.nan] * (2 * n + 1)
        grid._l_tot = [np.nan] * (2 * n + 1)
        grid._x_tot[2 * n] = _trapz(phi_v[:n + 1], dt)
        grid._l_tot[2 * n] = np.nan
        grid.startup = StartupData(phi_v, psi_v, dt, res)
        return grid

    def advance_block(self, k: int) -> None:
        """Rows on (kh, (k+1)h], then zeta on ((k+1)h, (k+2)h]."""
        n = self.n
        if self.startup is None:
            raise FluidError("build_startup() first")
        if k < 2 or self.last != k * n:
            raise FluidError(f"block {k} is not next (last row {self.last})")
        if self.zeta_known_until < (k + 1) * n:
            raise FluidError("zeta not available on the block")
        for i in range(k * n, (k + 1) * n):
            self._march(i)
        for i in range((k + 1) * n + 1, (k + 2) * n + 1):
            self._compute_zeta(i)

    def solve(self, t_max: float) -> "FluidGrid":
        self.build_startup()
        target = self.index(t_max) if abs(t_max / self.dt - round(t_max / self.dt)) < 1e-9 \
            else int(math.ceil(t_max / self.dt))
        while self.last < target:
            self.advance_block(self.last // self.n)
        return self

    # -- queries ------------------------------------------------------------

    def propagator(self, t: float, s: float, v: float) -> float:
        """exp(-int_v^s f(t + w - s, w) dw) along the characteristic through
        (t, s), trapezoidal on the grid."""
        it, i_s, iv = self.index(t), self.index(s), self.index(v)
        if not 0 <= iv <= i_s <= it:
            raise ValueError("need 0 <= v <= s <= t")
        if iv == i_s:
            return 1.0
        w = np.arange(iv, i_s + 1)
        times = it - i_s + w
        if times[0] < 0 or times[-1] >= self._zeta.shape[0] or \
                np.isnan(self._zeta[times, 0]).any():
            raise FluidError("zeta outside the computed range")
        g = self._g(i_s + 1)[:, w]
        z = self._zeta[times].T
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(z > 0, g / np.where(z > 0, z, 1.0),
                         np.where(g > 0, np.inf, 0.0)).sum(axis=0)
        expo = self.dt * (r.sum() - 0.5 * (r[0] + r[-1]))
        return float(math.exp(-expo)) if math.isfinite(expo) else 0.0

    def totals(self, t: float):
        """(x(t), l(t), w(t)) with w = l - x."""
        i = self.index(t)
        if i > self.last or i >= len(self._x_tot) or np.isnan(self._x_tot[i]):
            raise FluidError(f"totals not computed at t={t}")
        x, l_ = self._x_tot[i], self._l_tot[i]
        return x, l_, l_ - x

    def series(self):
        """Grid times from h on, with totals and zeta as arrays."""
        lo = self.n if self._x_tot and not np.isnan(self._x_tot[self.n]) \
            else 2 * self.n
        idx = np.arange(lo, self.last + 1)
        x = np.asarray(self._x_tot)[idx]
        l_ = np.asarray(self._l_tot)[idx]
        return idx * self.dt, x, l_, l_ - x, self._zeta[idx]

    def l_density(self, t: float) -> np.ndarray:
        """l(t, s) for ages 0 .. t - h, from the delay relation."""
        i = self.index(t)
        k_max = i - self.n
        out = np.ones(k_max + 1)
        if k_max > self.n:
            src = self.row((i - self.n) * self.dt)
            out[self.n:] = src[:k_max - self.n + 1]
        return out

    # -- output -------------------------------------------------------------

    def write_csv(self, path, stride: int = 1) -> None:
        t, x, l_, w, z = self.series()
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "x_total", "l_total", "w_total"] +
                         [f"zeta_{j + 1}" for j in range(self.m)])
            for k in range(0, len(t), stride):
                out.writerow([f"{t[k]:.10g}", f"{x[k]:.10g}", f"{l_[k]:.10g}",
                              f"{w[k]:.10g}"] + [f"{v:.10g}" for v in z[k]])

    def write_density(self, path) -> None:
        """Dump ``t,s,x,l`` for every retained snapshot row."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "s", "x", "l"])
            for i in sorted(self.snapshots):
                t = i * self.dt
                k_max = i - self.n
                if k_max < 0:
                    continue
                x = self.snapshots[i][:k_max + 1]
                try:
                    l_ = self.l_density(t)
                except FluidError:
                    l_ = np.full(k_max + 1, np.nan)
                for k in range(k_max + 1):
                    out.writerow([f"{t:.10g}", f"{k * self.dt:.10g}",
                                  f"{x[k]:.10g}", f"{l_[k]:.10g}"])


def compatibility_residuals(weights, h, phi, psi, dt) -> dict:
    """Residuals of the initial-function compatibility conditions.

    Value conditions are discrete identities of the construction; the two
    derivative conditions are compared using second-order one-sided
    differences, so they only vanish to O(dt^2) plus the quadrature error.
    """
    n = int(round(h / dt))
    m = len(weights)
    s = np.arange(2 * n + 1) * dt
    G_h = np.array([float(w.G(h)) for w in weights])
    g0 = np.array([float(np.asarray(w.g(0.0))) for w in weights])
    dphi = np.gradient(phi, dt, edge_order=2)
    res = {
        "phi(0)": abs(phi[0] - 1.0),
        "psi(0)": float(np.max(np.abs(psi[0] - G_h))),
        "psi_min": float(np.min(psi - psi[0])),
    }
    res["dphi(0)"] = abs(dphi[0] + float(np.sum(g0 / psi[0])))
    psi_h = np.empty(m)
    dpsi_h = np.empty(m)
    hs = s[n:]
    lag = phi[:n + 1]
    dlag = dphi[:n + 1]
    rate0 = sum(np.asarray(w.g(s[:n + 1]), dtype=float) / psi[0][i]
                for i, w in enumerate(weights))
    for j, w in enumerate(weights):
        gj = np.asarray(w.g(hs), dtype=float)
        psi_h[j] = psi[0][j] + _trapz(gj * lag, dt)
        dpsi_h[j] = float(np.asarray(w.g(2 * h))) * phi[n] - _trapz(
            gj * (rate0 * lag + dlag), dt)
    res["psi(h)"] = float(np.max(np.abs(psi[n] - psi_h)))
    psi_prime = np.gradient(psi, dt, axis=0, edge_order=2)[n]
    res["dpsi(h)"] = float(np.max(np.abs(psi_prime - dpsi_h)))
    return res


VALUE_TOL = 1e-6


def _assert_compatible(res, dt, deriv_tol=None):
    if deriv_tol is None:
        deriv_tol = max(50.0 * dt, 1e-3)
    bad = [k for k in ("phi(0)", "psi(0)", "psi(h)") if res[k] > VALUE_TOL]
    if res["psi_min"] < -VALUE_TOL:
        bad.append("psi_min")
    bad += [k for k in ("dphi(0)", "dpsi(h)") if res[k] > deriv_tol]
    if bad:
        detail = ", ".join(f"{k}={res[k]:.3g}" for k in bad)
        raise FluidError(f"initial data fail compatibility: {detail}")


def solve_fluid(weights, h, t_max, n_per_h: int = 100, **kw) -> FluidGrid:
    return FluidGrid(weights, h, n_per_h=n_per_h, **kw).solve(t_max)
