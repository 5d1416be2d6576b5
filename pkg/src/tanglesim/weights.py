"""Age weight functions g(s) used by age-biased tip selection and the fluid
model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class WeightFunction:
    """A nonnegative age weight ``g`` with its running integral ``G``.

    ``total`` is G(inf): finite for integrable weights, ``math.inf``
    otherwise. ``g`` and ``G`` accept scalars or numpy arrays.
    """

    g: Callable = field(compare=False)
    G: Callable = field(compare=False)
    total: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def integrable(self) -> bool:
        return math.isfinite(self.total)

    def __call__(self, s):
        return self.g(s)

    def tail(self, s: float) -> float:
        """Mass beyond age ``s``: G(inf) - G(s)."""
        if not self.integrable:
            return math.inf
        return max(self.total - float(self.G(s)), 0.0)

    def spec(self) -> str:
        if not self.params:
            return self.name
        args = ",".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.name}{{{args}}}"

    def check(self, h: float) -> None:
        """Positivity of the mass on [0, h], required by the fluid model."""
        if not float(self.G(h)) > 0:
            raise ValueError(f"weight {self.spec()} has no mass on [0, {h}]")

    @classmethod
    def constant(cls, c: float = 1.0) -> "WeightFunction":
        if c <= 0:
            raise ValueError("constant weight must be positive")

        def g(s):
            return c * np.ones_like(np.asarray(s, dtype=float))

        def G(s):
            return c * np.asarray(s, dtype=float)

        return cls(g=g, G=G, total=math.inf, name="const",
                   params={"c": c} if c != 1 else {})

    @classmethod
    def exponential(cls, beta: float = 1.0) -> "WeightFunction":
        """g(s) = exp(-beta s)."""
        if beta <= 0:
            raise ValueError("beta must be positive")
        return cls(
            g=lambda s: np.exp(-beta * np.asarray(s, dtype=float)),
            G=lambda s: -np.expm1(-beta * np.asarray(s, dtype=float)) / beta,
            total=1.0 / beta, name="exp", params={"beta": beta})

    @classmethod
    def power(cls, p: float = 2.0) -> "WeightFunction":
        """g(s) = (1 + s)^-p, integrable for p > 1."""
        if p <= 0:
            raise ValueError("p must be positive")
        if p == 1:
            G = lambda s: np.log1p(np.asarray(s, dtype=float))  # noqa: E731
        else:
            G = lambda s: (1 - (1 + np.asarray(s, dtype=float)) ** (1 - p)) / (p - 1)  # noqa: E731
        return cls(
            g=lambda s: (1 + np.asarray(s, dtype=float)) ** (-p),
            G=G, total=1 / (p - 1) if p > 1 else math.inf,
            name="power", params={"p": p})

    @classmethod
    def from_callable(cls, g: Callable, integrable: bool | None = None,
                      name: str = "custom") -> "WeightFunction":
        """Wrap an arbitrary g; G is evaluated by adaptive quadrature."""

        def G(s):
            s_arr = np.atleast_1d(np.asarray(s, dtype=float))
            out = np.array([integrate.quad(g, 0.0, v, limit=200)[0]
                            for v in s_arr])
            return out if np.ndim(s) else float(out[0])

        if integrable is False:
            total = math.inf
        else:
            total, _ = integrate.quad(g, 0.0, np.inf, limit=400)
            if not math.isfinite(total):
                total = math.inf
        return cls(g=np.vectorize(g, otypes=[float]), G=G, total=total,
                   name=name)


def make_weight(name: str, **params) -> WeightFunction:
    factories = {
        "const": WeightFunction.constant,
        "constant": WeightFunction.constant,
        "exp": WeightFunction.exponential,
        "power": WeightFunction.power,
    }
    try:
        factory = factories[name]
    except KeyError:
        raise ValueError(f"unknown weight function {name!r}") from None
    return factory(**{k: float(v) for k, v in params.items()})
