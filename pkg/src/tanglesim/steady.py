"""Time-stationary free-tip profiles and the orphan-persistence check.

A stationary solution has x(s) = exp(-sum_j G_j(s) / zeta_j), with each
normaliser solving zeta_j = F_j(zeta) where

    F_j(zeta) = G_j(h) + int_h^inf g_j(s) x(s - h) ds.

For integrable weights x(s) tends to x_inf = exp(-sum_j G_j(inf) / zeta_j) > 0,
so a positive density of tips is never approved.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .weights import WeightFunction


class SteadyStateError(RuntimeError):
    pass


def profile(weights, zeta, s):
    """x(s) for normalisers ``zeta``."""
    s = np.asarray(s, dtype=float)
    expo = sum(np.asarray(w.G(s), dtype=float) / z for w, z in zip(weights, zeta))
    return np.exp(-expo)


def fixed_point_map(weights, h, zeta):
    """F(zeta) and the summed quadrature error estimates."""
    out = np.empty(len(weights))
    err = 0.0
    for j, w in enumerate(weights):
        val, e = integrate.quad(
            lambda s: float(w.g(s)) * float(profile(weights, zeta, s - h)),
            h, np.inf, limit=400, epsabs=1e-14, epsrel=1e-13)
        out[j] = float(w.G(h)) + val
        err += e
    return out, err


@dataclass
class SteadyProfile:
    """A solved stationary profile."""

    weights: list
    h: float
    zeta: np.ndarray
    residual: float
    iterations: int
    quad_error: float
    converged: bool
    others: list = field(default_factory=list)

    @property
    def x_inf(self) -> float:
        return float(math.exp(-sum(w.total / z
                                   for w, z in zip(self.weights, self.zeta))))

    def x(self, s):
        return profile(self.weights, self.zeta, s)

    def l(self, s):
        """Total tip density: 1 below h, x(s - h) beyond."""
        s = np.asarray(s, dtype=float)
        return np.where(s <= self.h, 1.0, self.x(np.maximum(s - self.h, 0)))

    def integral(self, S: float) -> float:
        """int_0^S x(s) ds."""
        return float(integrate.quad(lambda s: float(self.x(s)), 0.0, S,
                                    limit=400)[0])

    def as_dict(self) -> dict:
        d = {"h": self.h, "residual": self.residual,
             "iterations": self.iterations, "quad_error": self.quad_error,
             "converged": self.converged, "x_inf": self.x_inf}
        for j, z in enumerate(self.zeta):
            d[f"zeta_{j + 1}"] = float(z)
        return d


def solve_fixed_point(weights: list[WeightFunction], h: float,
                      tol: float = 1e-12, max_iter: int = 1000,
                      starts=None) -> SteadyProfile:
    """Iterate zeta <- F(zeta) from each start (default zeta_j = G_j(inf)).

    Returns the profile from the first start; distinct fixed points reached
    from the other starts are listed in ``others``.
    """
    weights = list(weights)
    for w in weights:
        if not w.integrable:
            raise SteadyStateError(
                f"weight {w.spec()} is not integrable; use "
                "random_selection_fixed_point for constant weights")
        w.check(h)
    if starts is None:
        starts = [np.array([w.total for w in weights])]
    results = []
    for z0 in starts:
        z = np.asarray(z0, dtype=float).copy()
        if np.any(z <= 0):
            raise ValueError("starting normalisers must be positive")
        converged = False
        for it in range(1, max_iter + 1):
            new, err = fixed_point_map(weights, h, z)
            step = float(np.max(np.abs(new - z)))
            z = new
            if step < tol:
                converged = True
                break
        final, err = fixed_point_map(weights, h, z)
        if not converged:
            raise SteadyStateError(
                f"no convergence from {list(map(float, z0))} within "
                f"{max_iter} iterations (residual "
                f"{float(np.max(np.abs(final - z))):.3g})")
        results.append(SteadyProfile(
            weights, float(h), z, float(np.max(np.abs(final - z))), it, err,
            converged))
    best = results[0]
    for r in results[1:]:
        if not any(np.allclose(r.zeta, o.zeta, atol=1e-8)
                   for o in [best] + best.others):
            best.others.append(r)
    return best


@dataclass(frozen=True)
class RandomFixedPoint:
    """Totals of the uniform-selection fluid fixed point."""

    l: float
    x: float
    w: float


def random_selection_fixed_point(m: int, h: float) -> RandomFixedPoint:
    """l* = h m / (m - 1), x* = l* / m."""
    if m < 2:
        raise ValueError("m must be >= 2")
    l_star = h * m / (m - 1)
    return RandomFixedPoint(l_star, l_star / m, l_star - l_star / m)


@dataclass
class OrphanReport:
    x_inf: float
    S: np.ndarray
    integral: np.ndarray
    slope: float
    rel_error: float
    persistent: bool


def verify_orphan_persistence(sp: SteadyProfile, S_max: float | None = None,
                              points: int = 21,
                              rel_tol: float = 0.01) -> OrphanReport:
    """Fit the slope of S -> int_0^S x over [S_max / 2, S_max] and compare it
    with x_inf."""
    if S_max is None:
        S_max = 50.0 * max(sp.h, 1.0)
    S = np.linspace(S_max / 2, S_max, points)
    I = np.empty(points)
    I[0] = sp.integral(S[0])
    for k in range(1, points):
        I[k] = I[k - 1] + integrate.quad(lambda s: float(sp.x(s)),
                                         S[k - 1], S[k])[0]
    slope = float(np.polyfit(S, I, 1)[0])
    x_inf = sp.x_inf
    rel = abs(slope - x_inf) / x_inf if x_inf > 0 else math.inf
    return OrphanReport(x_inf, S, I, slope, rel,
                        x_inf > 0 and rel <= rel_tol)


def write_report(sp: SteadyProfile, path, orphan: OrphanReport | None = None):
    """Plain ``key = value`` lines."""
    d = sp.as_dict()
    if orphan is not None:
        d.update(orphan_slope=orphan.slope, orphan_rel_error=orphan.rel_error,
                 orphan_persistent=orphan.persistent)
    with open(path, "w") as fh:
        for k, v in d.items():
            fh.write(f"{k} = {v}\n")
        for j, o in enumerate(sp.others):
            fh.write(f"other_{j + 1} = {list(map(float, o.zeta))}\n")


def write_profile_csv(sp: SteadyProfile, path, s_max: float | None = None,
                      points: int = 501) -> None:
    s = np.linspace(0, s_max or 10 * sp.h, points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "x", "l"])
        for a, b, c in zip(s, sp.x(s), sp.l(s)):
            w.writerow([f"{a:.10g}", f"{b:.10g}", f"{c:.10g}"])
